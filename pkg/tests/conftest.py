import numpy as np
import pytest

from loopdyn import model as mod

PENDULUM_YAML = """
name: pendulum
bodies:
  - {name: arm, mass: 1.0, com: [0.0, 0.0, -0.5], inertia: [0.02, 0.02, 1.0e-4]}
joints:
  - {name: pivot, kind: revolute, parent: world, child: arm, axis: [0, 1, 0],
     actuated: true}
"""

DOUBLE_PENDULUM_YAML = """
name: double-pendulum
bodies:
  - {name: upper, mass: 1.2, com: [0.0, 0.0, -0.25], inertia: [0.01, 0.01, 1.0e-4]}
  - {name: lower, mass: 0.8, com: [0.0, 0.0, -0.2], inertia: [0.008, 0.008, 1.0e-4]}
joints:
  - {name: shoulder, kind: revolute, parent: world, child: upper, axis: [0, 1, 0],
     actuated: true}
  - {name: elbow, kind: revolute, parent: upper, child: lower, axis: [0, 1, 0],
     xyz: [0.0, 0.0, -0.5], actuated: true}
frames:
  - {name: tip, body: lower, xyz: [0.0, 0.0, -0.4]}
"""

# free-flyer base with a two-joint arm hanging off it, axes deliberately skew
FLYER_ARM_YAML = """
name: flyer-arm
bodies:
  - {name: base, mass: 3.0, com: [0.01, 0.0, 0.02], inertia: [0.04, 0.05, 0.03]}
  - {name: seg1, mass: 1.0, com: [0.0, 0.0, -0.15], inertia: [0.006, 0.006, 2.0e-4]}
  - {name: seg2, mass: 0.7, com: [0.12, 0.0, 0.0], inertia: [2.0e-4, 0.004, 0.004]}
joints:
  - {name: root, kind: free_flyer, parent: world, child: base}
  - {name: j1, kind: revolute, parent: base, child: seg1, axis: [0, 1, 0],
     xyz: [0.1, 0.05, -0.1], rpy: [0.3, 0.0, 0.1], actuated: true}
  - {name: j2, kind: revolute, parent: seg1, child: seg2, axis: [1, 0, 0],
     xyz: [0.0, 0.02, -0.3], rpy: [0.0, -0.4, 0.0], actuated: true}
frames:
  - {name: hand, body: seg2, xyz: [0.25, 0.0, 0.0], rpy: [0.0, 0.2, 0.0]}
  - {name: anchor, body: world, xyz: [0.4, 0.1, -0.6]}
"""


@pytest.fixture(scope="session")
def pendulum():
    return mod.load_model(PENDULUM_YAML)


@pytest.fixture(scope="session")
def double_pendulum():
    return mod.load_model(DOUBLE_PENDULUM_YAML)


@pytest.fixture(scope="session")
def flyer_arm():
    return mod.load_model(FLYER_ARM_YAML)


def random_config(m, rng, scale=0.6):
    """Random configuration built by perturbing the reference in tangent space."""
    return mod.integrate_config(m, m.reference_config(), scale * rng.standard_normal(m.nv))
