import numpy as np
import pytest

from gaitlab import dynamics
from gaitlab.model import (
    ContactParams,
    JointSpec,
    SegmentSpec,
    SkeletonSpec,
    build_model,
)


def pendulum_skeleton(nlinks=1, mass=2.0, length=0.8, pivot_height=1.0,
                      inertia=None, com_frac=0.5):
    """Chain of uniform links hanging from a fixed pivot.

    Wide joint ranges and zero joint damping so the only forces are
    gravity and inertia; no contact spheres. Lock the root to use.
    """
    # uniform rod about its own COM unless overridden
    own = mass * length**2 / 12.0 if inertia is None else inertia
    segs = [SegmentSpec("base", 1.0, 1.0, (0.0, 0.0), None)]
    joints = []
    parent = "base"
    for i in range(nlinks):
        name = f"link{i}"
        segs.append(SegmentSpec(name, mass, own, (0.0, -com_frac * length), parent))
        joints.append(JointSpec(
            name=f"j{i}", parent=parent, child=name,
            anchor=(0.0, 0.0) if i == 0 else (0.0, -length),
            sign=1, lo=-50.0, hi=50.0,
            limit_stiffness=0.0, limit_damping=0.0, damping=0.0,
        ))
        parent = name
    return SkeletonSpec(
        name=f"pendulum{nlinks}",
        gravity=9.80665,
        segments=segs,
        joints=joints,
        spheres=[],
        contact=ContactParams(),
        total_mass=1.0 + nlinks * mass,
        neutral_root_height=pivot_height,
        head_local=(0.0, 0.0),
    )


def build_pendulum(nlinks=1, **kw):
    m = build_model(pendulum_skeleton(nlinks, **kw),
                    locked_dofs=("root_x", "root_y", "root_pitch"))
    return m


@pytest.fixture(scope="session")
def walker():
    return build_model("builtin:walker_75kg", "builtin:muscles_18")

@pytest.fixture(scope="session")
def walker_settled_q(walker):
    return dynamics.settle_root_height(walker, walker.neutral_q)


@pytest.fixture(scope="session")
def statue():
    """Walker with every joint and root pitch locked: pure contact rig."""
    return build_model(
        "builtin:walker_75kg",
        locked_dofs=("root_pitch", "hip_l", "knee_l", "ankle_l",
                     "hip_r", "knee_r", "ankle_r"),
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
