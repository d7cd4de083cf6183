"""Model description: skeleton, muscles, exo device, and assembly.

Configs are YAML files (see gaitlab/configs). Specs validate on
construction; build_model() flattens everything into the plain numpy
arrays the simulation kernels work on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from gaitlab.errors import ConfigError

# polynomial moment arms r(theta) = c0 + c1 t + c2 t^2 + c3 t^3
ARM_COEFS = 4

# engagement band of the passive joint-limit torque, rad before the limit
LIMIT_MARGIN = math.radians(2.0)


def _load_yaml(source):
    """Read a YAML mapping from a path or a 'builtin:<name>' reference."""
    if isinstance(source, dict):
        return dict(source), None
    text = str(source)
    if text.startswith("builtin:"):
        name = text.split(":", 1)[1]
        ref = resources.files("gaitlab.configs").joinpath(name + ".yaml")
        if not ref.is_file():
            raise ConfigError(f"unknown builtin config '{name}'")
        data = yaml.safe_load(ref.read_text())
        return data, None
    path = Path(text)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text())
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a YAML mapping")
    return data, path.parent


def _require(data, key, where):
    if key not in data:
        raise ConfigError(f"{where}: missing required key '{key}'")
    return data[key]


@dataclass
class SegmentSpec:
    name: str
    mass: float
    inertia: float
    com: tuple[float, float]
    parent: str | None

    def __post_init__(self):
        if self.mass <= 0:
            raise ConfigError(f"segment '{self.name}': mass must be > 0")
        if self.inertia <= 0:
            raise ConfigError(f"segment '{self.name}': inertia must be > 0")


@dataclass
class JointSpec:
    name: str
    parent: str
    child: str
    anchor: tuple[float, float]
    sign: int
    lo: float
    hi: float
    limit_stiffness: float
    limit_damping: float
    damping: float = 0.5    # always-on tissue damping, N*m*s/rad

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ConfigError(f"joint '{self.name}': sign must be +1 or -1")
        if not self.lo < self.hi:
            raise ConfigError(f"joint '{self.name}': empty angle range")
        if self.limit_stiffness < 0 or self.limit_damping < 0 or self.damping < 0:
            raise ConfigError(f"joint '{self.name}': negative damping or stiffness")


@dataclass
class SphereSpec:
    segment: str
    offset: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigError(f"contact sphere on '{self.segment}': radius must be > 0")


@dataclass
class ContactParams:
    stiffness: float = 2.0e6
    exponent: float = 1.5
    damping: float = 2.0
    friction: float = 0.9
    slip_regularization: float = 0.01

    def __post_init__(self):
        if self.stiffness <= 0 or self.exponent <= 0:
            raise ConfigError("contact: stiffness and exponent must be > 0")
        if self.friction < 0 or self.damping < 0:
            raise ConfigError("contact: negative friction or damping")
        if self.slip_regularization <= 0:
            raise ConfigError("contact: slip_regularization must be > 0")


@dataclass
class SkeletonSpec:
    name: str
    gravity: float
    segments: list[SegmentSpec]
    joints: list[JointSpec]
    spheres: list[SphereSpec]
    contact: ContactParams
    total_mass: float
    neutral_root_height: float
    head_local: tuple[float, float]

    def __post_init__(self):
        names = [s.name for s in self.segments]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate segment names")
        byname = {s.name: s for s in self.segments}
        roots = [s for s in self.segments if s.parent is None]
        if len(roots) != 1:
            raise ConfigError("skeleton must have exactly one root segment")
        for s in self.segments:
            if s.parent is not None and s.parent not in byname:
                raise ConfigError(f"segment '{s.name}': unknown parent '{s.parent}'")
        # every non-root segment is driven by exactly one joint
        children = {}
        for j in self.joints:
            if j.parent not in byname or j.child not in byname:
                raise ConfigError(f"joint '{j.name}': unknown segment")
            if byname[j.child].parent != j.parent:
                raise ConfigError(f"joint '{j.name}': does not match segment tree")
            if j.child in children:
                raise ConfigError(f"segment '{j.child}' driven by two joints")
            children[j.child] = j
        for s in self.segments:
            if s.parent is not None and s.name not in children:
                raise ConfigError(f"segment '{s.name}' has no joint")
        for sp in self.spheres:
            if sp.segment not in byname:
                raise ConfigError(f"contact sphere: unknown segment '{sp.segment}'")
        msum = sum(s.mass for s in self.segments)
        if abs(msum - self.total_mass) > 1e-9 * max(1.0, abs(self.total_mass)):
            raise ConfigError(
                f"total_mass {self.total_mass} != segment sum {msum:.12g}"
            )
        if self.gravity <= 0:
            raise ConfigError("gravity must be > 0 (magnitude, pointing down)")


@dataclass
class MuscleSpec:
    """One muscle-tendon unit.

    arms maps joint name -> moment arm polynomial coefficients in the
    anatomical joint angle; the MTU shortens when a spanned joint moves
    in the direction of a positive arm (dL/dtheta = -r).
    """

    name: str
    fmax: float
    lopt: float
    lslack: float
    pennation: float
    vmax: float
    tau_act: float
    tau_deact: float
    fast_twitch_ratio: float
    damping: float
    arms: dict[str, tuple[float, ...]]
    rigid_tendon: bool = False

    def __post_init__(self):
        w = f"muscle '{self.name}'"
        if self.fmax <= 0 or self.lopt <= 0:
            raise ConfigError(f"{w}: fmax and lopt must be > 0")
        if self.lslack < 0:
            raise ConfigError(f"{w}: negative tendon slack length")
        if self.lslack == 0 and not self.rigid_tendon:
            raise ConfigError(f"{w}: elastic tendon needs lslack > 0")
        if not 0 <= self.pennation < math.pi / 2:
            raise ConfigError(f"{w}: pennation must be in [0, pi/2)")
        if self.vmax <= 0:
            raise ConfigError(f"{w}: vmax must be > 0")
        if self.tau_act <= 0 or self.tau_deact <= 0:
            raise ConfigError(f"{w}: activation time constants must be > 0")
        if self.tau_deact < self.tau_act:
            raise ConfigError(f"{w}: deactivation must be no faster than activation")
        if not 0 <= self.fast_twitch_ratio <= 1:
            raise ConfigError(f"{w}: fast_twitch_ratio must be in [0, 1]")
        if self.damping < 0:
            raise ConfigError(f"{w}: negative fiber damping")
        if not self.arms:
            raise ConfigError(f"{w}: spans no joint")
        for jn, coefs in self.arms.items():
            if len(coefs) == 0 or len(coefs) > ARM_COEFS:
                raise ConfigError(f"{w}: arm over '{jn}' needs 1..{ARM_COEFS} coefficients")

    @property
    def pennation_height(self):
        """Constant-height pennation thickness h = lopt*sin(alpha_opt)."""
        return self.lopt * math.sin(self.pennation)

    @property
    def min_fiber_length(self):
        # keep sin(alpha) <= 0.995 and the fiber above 30% optimal
        lo = 0.3 * self.lopt
        if self.pennation > 0:
            lo = max(lo, self.pennation_height / 0.995)
        return lo

    @property
    def max_fiber_length(self):
        return 1.8 * self.lopt

    @property
    def mass(self):
        """Muscle mass from strength: fmax*lopt*density/specific_tension."""
        return self.fmax * self.lopt * 1059.7 / 0.25e6


@dataclass
class ExoDeviceSpec:
    name: str
    kind: str
    added_mass: dict[str, float]
    total_added_mass: float
    assisted_joints: list[str]
    torque_per_kg: float
    filter_cutoff_hz: float

    def __post_init__(self):
        if self.kind not in ("none", "hip", "ankle"):
            raise ConfigError(f"device '{self.name}': unknown kind '{self.kind}'")
        for seg, m in self.added_mass.items():
            if m < 0:
                raise ConfigError(f"device '{self.name}': negative mass on '{seg}'")
        msum = sum(self.added_mass.values())
        if abs(msum - self.total_added_mass) > 1e-9 * max(1.0, abs(self.total_added_mass)):
            raise ConfigError(
                f"device '{self.name}': total_added_mass {self.total_added_mass} "
                f"!= per-segment sum {msum:.12g}"
            )
        if self.torque_per_kg < 0:
            raise ConfigError(f"device '{self.name}': negative torque_per_kg")
        if self.assisted_joints and self.torque_per_kg <= 0:
            raise ConfigError(
                f"device '{self.name}': assisted joints need torque_per_kg > 0")
        if self.filter_cutoff_hz <= 0:
            raise ConfigError(f"device '{self.name}': filter cutoff must be > 0")
        if self.kind == "none" and self.assisted_joints:
            raise ConfigError("device kind 'none' cannot assist joints")


def load_skeleton(source) -> SkeletonSpec:
    data, _ = _load_yaml(source)
    where = f"skeleton '{data.get('name', '?')}'"
    if data.get("format") != "gaitlab-skeleton/1":
        raise ConfigError(f"{where}: not a gaitlab-skeleton/1 file")
    segs = []
    for name, sd in _require(data, "segments", where).items():
        segs.append(
            SegmentSpec(
                name=name,
                mass=float(_require(sd, "mass", name)),
                inertia=float(_require(sd, "inertia", name)),
                com=tuple(float(v) for v in _require(sd, "com", name)),
                parent=sd.get("parent"),
            )
        )
    joints = []
    for name, jd in _require(data, "joints", where).items():
        lo, hi = (float(v) for v in _require(jd, "range", name))
        joints.append(
            JointSpec(
                name=name,
                parent=_require(jd, "parent", name),
                child=_require(jd, "child", name),
                anchor=tuple(float(v) for v in _require(jd, "anchor", name)),
                sign=int(jd.get("sign", 1)),
                lo=lo,
                hi=hi,
                limit_stiffness=float(jd.get("limit_stiffness", 300.0)),
                limit_damping=float(jd.get("limit_damping", 5.0)),
                damping=float(jd.get("damping", 0.5)),
            )
        )
    spheres = [
        SphereSpec(
            segment=_require(sd, "segment", "contact sphere"),
            offset=tuple(float(v) for v in _require(sd, "offset", "contact sphere")),
            radius=float(_require(sd, "radius", "contact sphere")),
        )
        for sd in data.get("contact_spheres", [])
    ]
    contact = ContactParams(**{k: float(v) for k, v in data.get("contact", {}).items()})
    return SkeletonSpec(
        name=data.get("name", "skeleton"),
        gravity=float(data.get("gravity", 9.81)),
        segments=segs,
        joints=joints,
        spheres=spheres,
        contact=contact,
        total_mass=float(_require(data, "total_mass", where)),
        neutral_root_height=float(data.get("neutral_root_height", 0.0)),
        head_local=tuple(float(v) for v in data.get("head_local", (0.0, 0.0))),
    )


def load_muscles(source) -> list[MuscleSpec]:
    data, _ = _load_yaml(source)
    if data.get("format") != "gaitlab-muscles/1":
        raise ConfigError("not a gaitlab-muscles/1 file")
    defaults = data.get("defaults", {})
    bilateral = bool(data.get("bilateral", False))
    out = []
    for name, md in _require(data, "muscles", "muscle file").items():
        def f(key, fallback=None):
            if key in md:
                return float(md[key])
            if key in defaults:
                return float(defaults[key])
            if fallback is None:
                raise ConfigError(f"muscle '{name}': missing '{key}'")
            return fallback

        base = dict(
            fmax=f("fmax"),
            lopt=f("lopt"),
            lslack=f("lslack"),
            pennation=f("pennation", 0.0),
            vmax=f("vmax"),
            tau_act=f("tau_act"),
            tau_deact=f("tau_deact"),
            fast_twitch_ratio=f("fast_twitch_ratio"),
            damping=f("damping"),
            rigid_tendon=bool(md.get("rigid_tendon", False)),
        )
        arms = {
            jn: tuple(float(c) for c in coefs)
            for jn, coefs in _require(md, "arms", name).items()
        }
        if bilateral:
            for side in ("l", "r"):
                out.append(
                    MuscleSpec(
                        name=f"{name}_{side}",
                        arms={f"{jn}_{side}": c for jn, c in arms.items()},
                        **base,
                    )
                )
        else:
            out.append(MuscleSpec(name=name, arms=arms, **base))
    return out


def load_device(source) -> ExoDeviceSpec:
    data, _ = _load_yaml(source)
    if data.get("format") != "gaitlab-device/1":
        raise ConfigError("not a gaitlab-device/1 file")
    return ExoDeviceSpec(
        name=data.get("name", "device"),
        kind=_require(data, "kind", "device"),
        added_mass={k: float(v) for k, v in data.get("added_mass", {}).items()},
        total_added_mass=float(_require(data, "total_added_mass", "device")),
        assisted_joints=list(data.get("assisted_joints", [])),
        torque_per_kg=float(data.get("torque_per_kg", 0.0)),
        filter_cutoff_hz=float(data.get("filter_cutoff_hz", 1.0)),
    )


class Model:
    """Assembled model: flat arrays consumed by the simulation kernels.

    Segment 0 is the root; generalized coordinates are
    [root_x, root_y, root_pitch, joint angles...] with the joint order
    of the skeleton file.
    """

    def __init__(self, skeleton: SkeletonSpec, muscles: list[MuscleSpec],
                 device: ExoDeviceSpec):
        self.skeleton = skeleton
        self.muscle_specs = muscles
        self.device = device

        order = self._topo_order(skeleton)
        self.seg_names = [s.name for s in order]
        seg_index = {n: i for i, n in enumerate(self.seg_names)}
        nseg = len(order)
        njnt = len(skeleton.joints)
        self.nseg, self.njnt, self.nq = nseg, njnt, 3 + njnt

        self.seg_mass = np.array([s.mass for s in order])
        self.seg_inertia = np.array([s.inertia for s in order])
        self.seg_com = np.array([s.com for s in order])
        self.seg_parent = np.array(
            [-1 if s.parent is None else seg_index[s.parent] for s in order],
            dtype=np.int32,
        )

        # device mass: add to segments, scale inertia proportionally
        for seg, dm in device.added_mass.items():
            if seg not in seg_index:
                raise ConfigError(
                    f"device '{device.name}': unknown segment '{seg}'"
                )
            i = seg_index[seg]
            m0 = self.seg_mass[i]
            self.seg_mass[i] = m0 + dm
            self.seg_inertia[i] *= (m0 + dm) / m0

        self.jnt_names = [j.name for j in skeleton.joints]
        jnt_index = {n: i for i, n in enumerate(self.jnt_names)}
        self.jnt_anchor = np.array([j.anchor for j in skeleton.joints])
        self.jnt_sign = np.array([float(j.sign) for j in skeleton.joints])
        self.jnt_lo = np.array([j.lo for j in skeleton.joints])
        self.jnt_hi = np.array([j.hi for j in skeleton.joints])
        self.jnt_k = np.array([j.limit_stiffness for j in skeleton.joints])
        self.jnt_d = np.array([j.limit_damping for j in skeleton.joints])
        self.jnt_visc = np.array([j.damping for j in skeleton.joints])
        self.jnt_margin = LIMIT_MARGIN
        self.jnt_parent = np.array(
            [seg_index[j.parent] for j in skeleton.joints], dtype=np.int32
        )
        self.jnt_child = np.array(
            [seg_index[j.child] for j in skeleton.joints], dtype=np.int32
        )
        # joint driving each segment (-1 for root)
        self.seg_joint = np.full(nseg, -1, dtype=np.int32)
        for ji, j in enumerate(skeleton.joints):
            self.seg_joint[seg_index[j.child]] = ji

        # ancestor incidence: anc[s, j] = 1 if joint j moves segment s
        self.anc = np.zeros((nseg, njnt), dtype=np.uint8)
        for si in range(nseg):
            s = si
            while self.seg_parent[s] >= 0:
                self.anc[si, self.seg_joint[s]] = 1
                s = self.seg_parent[s]

        self.sph_seg = np.array(
            [seg_index[sp.segment] for sp in skeleton.spheres], dtype=np.int32
        )
        self.sph_pos = np.array([sp.offset for sp in skeleton.spheres]).reshape(-1, 2)
        self.sph_r = np.array([sp.radius for sp in skeleton.spheres])
        self.nsph = len(skeleton.spheres)
        # feet grouping for GRF reporting: left foot = 0, right = 1
        self.sph_foot = np.array(
            [0 if sp.segment.endswith("_l") else 1 for sp in skeleton.spheres],
            dtype=np.int32,
        )

        c = skeleton.contact
        self.con_k = c.stiffness
        self.con_p = c.exponent
        self.con_c = c.damping
        self.con_mu = c.friction
        self.con_vreg = c.slip_regularization
        self.gravity = skeleton.gravity
        self.head_local = np.array(skeleton.head_local)

        # muscles
        nm = len(muscles)
        self.nmus = nm
        self.mus_names = [m.name for m in muscles]
        self.mus_fmax = np.array([m.fmax for m in muscles])
        self.mus_lopt = np.array([m.lopt for m in muscles])
        self.mus_lslack = np.array([m.lslack for m in muscles])
        self.mus_h = np.array([m.pennation_height for m in muscles])
        self.mus_vmax = np.array([m.vmax for m in muscles])
        self.mus_tau_act = np.array([m.tau_act for m in muscles])
        self.mus_tau_deact = np.array([m.tau_deact for m in muscles])
        self.mus_ft = np.array([m.fast_twitch_ratio for m in muscles])
        self.mus_beta = np.array([m.damping for m in muscles])
        self.mus_lmin = np.array([m.min_fiber_length for m in muscles])
        self.mus_lmax = np.array([m.max_fiber_length for m in muscles])
        self.mus_mass = np.array([m.mass for m in muscles])
        self.mus_rigid = np.array(
            [1 if m.rigid_tendon else 0 for m in muscles], dtype=np.uint8
        )
        self.mus_arm = np.zeros((nm, njnt, ARM_COEFS))
        for mi, m in enumerate(muscles):
            for jn, coefs in m.arms.items():
                if jn not in jnt_index:
                    raise ConfigError(f"muscle '{m.name}': unknown joint '{jn}'")
                self.mus_arm[mi, jnt_index[jn], : len(coefs)] = coefs
        # MTU length at the neutral pose (all joint angles zero)
        self.mus_L0 = np.array(
            [m.lopt * math.cos(m.pennation) + m.lslack for m in muscles]
        )

        self.mass_total = float(self.seg_mass.sum())
        self.weight = self.mass_total * self.gravity

        # exo channels: one per joint; zero torque limit = unassisted
        self.exo_tau_max = np.zeros(njnt)
        self.exo_cutoff_hz = np.full(njnt, device.filter_cutoff_hz)
        for jn in device.assisted_joints:
            if jn not in jnt_index:
                raise ConfigError(f"device '{device.name}': unknown joint '{jn}'")
            self.exo_tau_max[jnt_index[jn]] = device.torque_per_kg * self.mass_total

        self.neutral_q = np.zeros(self.nq)
        self.neutral_q[1] = skeleton.neutral_root_height
        self.locked = np.zeros(self.nq, dtype=np.uint8)

        # tracking landmarks: [foot_l, foot_r] = segment origins at the
        # ankle joints when present (root otherwise), head from head_local
        self.lmk_seg = np.zeros(2, dtype=np.int32)
        for row, jn in enumerate(("ankle_l", "ankle_r")):
            if jn in jnt_index:
                self.lmk_seg[row] = self.jnt_child[jnt_index[jn]]

        self.dof_names = ["root_x", "root_y", "root_pitch"] + self.jnt_names
        self._handles = {}

    @staticmethod
    def _topo_order(skeleton: SkeletonSpec):
        byname = {s.name: s for s in skeleton.segments}
        out, seen = [], set()

        def visit(s):
            if s.name in seen:
                return
            if s.parent is not None:
                visit(byname[s.parent])
            seen.add(s.name)
            out.append(s)

        for s in skeleton.segments:
            visit(s)
        return out

    def lock_dofs(self, names):
        """Freeze generalized coordinates by name (for component tests)."""
        for n in names:
            if n not in self.dof_names:
                raise ConfigError(f"unknown dof '{n}'")
            self.locked[self.dof_names.index(n)] = 1
        self._handles.clear()
        return self

    def muscle_index(self, name):
        try:
            return self.mus_names.index(name)
        except ValueError:
            raise ConfigError(f"unknown muscle '{name}'") from None

    def joint_index(self, name):
        try:
            return self.jnt_names.index(name)
        except ValueError:
            raise ConfigError(f"unknown joint '{name}'") from None


def build_model(skeleton, muscles=None, device=None, locked_dofs=()) -> Model:
    """Assemble a simulation model.

    Arguments may be spec objects, paths, or 'builtin:<name>' strings.
    """
    if not isinstance(skeleton, SkeletonSpec):
        skeleton = load_skeleton(skeleton)
    if muscles is None:
        muscles = []
    elif not (isinstance(muscles, list) and
              all(isinstance(m, MuscleSpec) for m in muscles)):
        muscles = load_muscles(muscles)
    if device is None:
        device = load_device("builtin:device_none")
    elif not isinstance(device, ExoDeviceSpec):
        device = load_device(device)
    model = Model(skeleton, muscles, device)
    if locked_dofs:
        model.lock_dofs(locked_dofs)
    return model
