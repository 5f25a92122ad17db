"""Multi-camera renderer for a parametric 3D stick figure.

World frame: x right, y up, z towards the camera at azimuth 0. A camera at
azimuth ``a`` (degrees, about the vertical axis) is orthographic with image
coordinate ``u = x cos a - z sin a`` and depth ``d = x sin a + z cos a``
(larger ``d`` is closer to the camera).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import ArrayFrames, MultiViewDataset, SequencePair

JOINTS = (
    "pelvis", "chest", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)
BONES = (
    (0, 1), (1, 2), (2, 3),
    (2, 4), (4, 5), (5, 6),
    (2, 7), (7, 8), (8, 9),
    (0, 10), (10, 11), (11, 12),
    (0, 13), (13, 14), (14, 15),
)
# part colour per bone; the joint at a bone's far end inherits it
BONE_COLORS = np.array([
    [0.95, 0.85, 0.20], [0.90, 0.70, 0.15], [0.95, 0.95, 0.95],
    [0.20, 0.45, 0.95], [0.15, 0.65, 0.95], [0.10, 0.85, 0.90],
    [0.95, 0.25, 0.20], [0.95, 0.45, 0.15], [0.95, 0.65, 0.30],
    [0.55, 0.25, 0.90], [0.70, 0.35, 0.95], [0.85, 0.55, 0.95],
    [0.20, 0.80, 0.30], [0.45, 0.90, 0.25], [0.65, 0.95, 0.45],
])
MOTIONS = ("wave", "squat", "walk", "lean")

# normalised image units per world unit, and world height of the image centre
IMAGE_SCALE = 0.8
CENTER_HEIGHT = 0.9


@dataclass
class SyntheticSceneSpec:
    azimuths: tuple[float, ...] = (0.0, 90.0)
    resolution: int = 64
    seed: int = 0
    motion_classes: tuple[int, ...] = (0, 1, 2, 3)
    n_subjects: int = 10
    # None: continuous random amplitude; k: graded amplitude with label = level
    amplitude_levels: int | None = None
    max_offset: float = 0.2
    max_yaw_deg: float = 20.0
    bone_radius: float = 0.06
    joint_radius: float = 0.075
    head_radius: float = 0.12

    def __post_init__(self):
        self.azimuths = tuple(float(a) for a in self.azimuths)
        self.motion_classes = tuple(int(c) for c in self.motion_classes)
        if len(self.azimuths) < 2:
            raise ValueError("need at least two camera azimuths")
        if self.resolution <= 0 or self.resolution % 8:
            raise ValueError(f"resolution must be a positive multiple of 8, got {self.resolution}")
        if not self.motion_classes or any(c not in range(len(MOTIONS)) for c in self.motion_classes):
            raise ValueError(f"motion classes must be drawn from 0..{len(MOTIONS) - 1}")
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")
        if self.amplitude_levels is not None and self.amplitude_levels < 2:
            raise ValueError("amplitude_levels must be >= 2")


@dataclass
class Subject:
    height: float
    arm: float
    leg: float
    shoulder: float
    hip: float


@dataclass
class MotionParams:
    motion: int
    amplitude: float
    phase: float
    cycles: float
    yaw: float
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    subject: Subject | None = None
    subject_id: int = 0
    level: int | None = None


def make_subject(seed: int, subject_id: int) -> Subject:
    rng = np.random.default_rng([seed, 7919, subject_id])
    return Subject(
        height=rng.uniform(0.9, 1.1),
        arm=rng.uniform(0.9, 1.1),
        leg=rng.uniform(0.9, 1.1),
        shoulder=rng.uniform(0.85, 1.15),
        hip=rng.uniform(0.85, 1.15),
    )


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def _limb(root, length, abduct, flex, side):
    """Direction of a limb hanging down, rotated outward then forward."""
    down = np.array([0.0, -1.0, 0.0])
    d = _rot_x(-flex) @ _rot_z(side * abduct) @ down
    return root + length * d, d


def joints_at(p: MotionParams, frame: int, fps: int = 16) -> np.ndarray:
    """World coordinates ``(16, 3)`` of the figure at ``frame``."""
    s = p.subject or Subject(1.0, 1.0, 1.0, 1.0, 1.0)
    a = p.amplitude
    ph = 2 * np.pi * p.cycles * frame / fps + p.phase
    osc = np.sin(ph)
    pulse = 0.5 - 0.5 * np.cos(ph)
    deg = np.pi / 180

    l_arm = dict(abduct=10 * deg, flex=0.0, elbow=10 * deg)
    r_arm = dict(abduct=10 * deg, flex=0.0, elbow=10 * deg)
    l_leg = dict(flex=0.0, knee=0.0)
    r_leg = dict(flex=0.0, knee=0.0)
    side_lean = fwd_lean = 0.0

    if p.motion == 0:  # wave: right arm raised, forearm swings
        r_arm = dict(abduct=(60 + 80 * a) * deg + 15 * deg * a * osc, flex=10 * deg,
                     elbow=(20 + 50 * a * (0.5 + 0.5 * osc)) * deg)
    elif p.motion == 1:  # squat
        l_leg = r_leg = dict(flex=95 * deg * a * pulse, knee=120 * deg * a * pulse)
        fwd_lean = 25 * deg * a * pulse
        l_arm = r_arm = dict(abduct=10 * deg, flex=85 * deg * a * pulse, elbow=10 * deg)
    elif p.motion == 2:  # walk in place
        l_leg = dict(flex=55 * deg * a * max(osc, 0.0), knee=80 * deg * a * max(osc, 0.0))
        r_leg = dict(flex=55 * deg * a * max(-osc, 0.0), knee=80 * deg * a * max(-osc, 0.0))
        l_arm = dict(abduct=10 * deg, flex=-40 * deg * a * osc, elbow=25 * deg)
        r_arm = dict(abduct=10 * deg, flex=40 * deg * a * osc, elbow=25 * deg)
    elif p.motion == 3:  # lean side to side
        side_lean = 35 * deg * a * osc
        l_arm = dict(abduct=(15 + 45 * a) * deg, flex=0.0, elbow=15 * deg)
        r_arm = dict(abduct=(15 + 45 * a) * deg, flex=0.0, elbow=15 * deg)
    else:
        raise ValueError(f"unknown motion class {p.motion}")

    h = s.height
    thigh, shin = 0.45 * h * s.leg, 0.45 * h * s.leg
    upper, fore = 0.30 * h * s.arm, 0.27 * h * s.arm
    hip_w, sh_w = 0.10 * h * s.hip, 0.18 * h * s.shoulder

    def leg(side, spec):
        root = np.array([side * hip_w, 0.0, 0.0])
        knee, d = _limb(root, thigh, 0.0, spec["flex"], side)
        # shin folds back relative to the thigh
        shin_dir = _rot_x(spec["knee"]) @ d
        return root, knee, knee + shin * shin_dir

    lh, lk, la = leg(+1, l_leg)
    rh, rk, ra = leg(-1, r_leg)
    # pelvis height keeps the lower ankle on the ground
    drop = min(la[1], ra[1])
    pelvis = np.zeros(3)

    torso = _rot_x(fwd_lean) @ _rot_z(-side_lean)
    chest = pelvis + torso @ np.array([0.0, 0.28 * h, 0.0])
    neck = pelvis + torso @ np.array([0.0, 0.50 * h, 0.0])
    head = pelvis + torso @ np.array([0.0, 0.62 * h, 0.0])

    def arm(side, spec):
        sh = neck + torso @ np.array([side * sh_w, -0.02 * h, 0.0])
        el, d = _limb(np.zeros(3), upper, spec["abduct"], spec["flex"], side)
        el = sh + torso @ el
        fore_dir = torso @ _rot_x(-spec["elbow"]) @ d
        return sh, el, el + fore * fore_dir

    ls, le, lw = arm(+1, l_arm)
    rs, re, rw = arm(-1, r_arm)
    pts = np.stack([pelvis, chest, neck, head, ls, le, lw, rs, re, rw, lh, lk, la, rh, rk, ra])
    pts[:, 1] -= drop
    pts = pts @ _rot_y(p.yaw).T
    return pts + p.offset


def project(points: np.ndarray, azimuth_deg: float, resolution: int):
    """Orthographic projection to pixel coordinates.

    Returns ``(col, row, depth)`` arrays; pixel ``(r, c)`` has its centre at
    ``(c + 0.5, r + 0.5)`` in these units.
    """
    a = np.deg2rad(azimuth_deg)
    u = points[..., 0] * np.cos(a) - points[..., 2] * np.sin(a)
    d = points[..., 0] * np.sin(a) + points[..., 2] * np.cos(a)
    v = -(points[..., 1] - CENTER_HEIGHT)
    half = resolution / 2.0
    col = (u * IMAGE_SCALE + 1.0) * half
    row = (v * IMAGE_SCALE + 1.0) * half
    return col, row, d


def world_offset_for_pixels(dx: int, dy: int, azimuth_deg: float, resolution: int) -> np.ndarray:
    """World translation that moves the projection by ``(dx, dy)`` pixels."""
    a = np.deg2rad(azimuth_deg)
    du = 2.0 * dx / resolution / IMAGE_SCALE
    dv = 2.0 * dy / resolution / IMAGE_SCALE
    return np.array([du * np.cos(a), -dv, -du * np.sin(a)])


def render(points: np.ndarray, azimuth_deg: float, resolution: int,
           spec: SyntheticSceneSpec | None = None) -> np.ndarray:
    """Rasterise the figure to a uint8 ``(3, H, W)`` image on a black background."""
    spec = spec or SyntheticSceneSpec()
    col, row, depth = project(points, azimuth_deg, resolution)
    px_per_unit = IMAGE_SCALE * resolution / 2.0
    grid = np.arange(resolution) + 0.5
    gy, gx = np.meshgrid(grid, grid, indexing="ij")
    gx = gx.ravel()[None]
    gy = gy.ravel()[None]

    a_idx = np.array([b[0] for b in BONES])
    b_idx = np.array([b[1] for b in BONES])
    ax, ay, ad = col[a_idx, None], row[a_idx, None], depth[a_idx, None]
    bx, by, bd = col[b_idx, None], row[b_idx, None], depth[b_idx, None]
    ex, ey = bx - ax, by - ay
    seg_len2 = np.maximum(ex ** 2 + ey ** 2, 1e-12)
    t = np.clip(((gx - ax) * ex + (gy - ay) * ey) / seg_len2, 0.0, 1.0)
    bone_dist = np.hypot(gx - ax - t * ex, gy - ay - t * ey)
    bone_depth = ad + t * (bd - ad)
    bone_r = np.full((len(BONES), 1), spec.bone_radius * px_per_unit)

    radii = np.full(len(JOINTS), spec.joint_radius)
    radii[JOINTS.index("head")] = spec.head_radius
    joint_r = (radii * px_per_unit)[:, None]
    joint_dist = np.hypot(gx - col[:, None], gy - row[:, None])
    bulge = np.sqrt(np.maximum(joint_r ** 2 - joint_dist ** 2, 0.0)) / px_per_unit
    joint_depth = depth[:, None] + bulge

    joint_colors = np.zeros((len(JOINTS), 3))
    joint_colors[0] = BONE_COLORS[0]
    for i, (_, child) in enumerate(BONES):
        joint_colors[child] = BONE_COLORS[i]

    dist = np.concatenate([bone_dist, joint_dist])
    radius = np.concatenate([bone_r, joint_r])
    zbuf = np.concatenate([bone_depth, joint_depth])
    colors = np.concatenate([BONE_COLORS, joint_colors])

    coverage = np.clip(radius - dist + 0.5, 0.0, 1.0)
    zbuf = np.where(coverage > 0, zbuf, -np.inf)
    front = np.argmax(zbuf, axis=0)
    idx = np.arange(gx.shape[1])
    cov = coverage[front, idx]
    # depth shading: nearer surfaces are brighter
    shade = np.clip(0.7 + 0.6 * zbuf[front, idx], 0.35, 1.0)
    rgb = colors[front] * (shade * cov)[:, None]
    img = np.round(rgb * 255.0).astype(np.uint8)
    return img.T.reshape(3, resolution, resolution)


def sequence_params(spec: SyntheticSceneSpec, index: int) -> MotionParams:
    """Deterministic motion parameters of sequence ``index``."""
    rng = np.random.default_rng([spec.seed, 104729, index])
    n_cls = len(spec.motion_classes)
    motion = spec.motion_classes[index % n_cls]
    subject_id = int(rng.integers(spec.n_subjects))
    level = None
    if spec.amplitude_levels is None:
        amplitude = rng.uniform(0.3, 1.0)
    else:
        level = (index // n_cls) % spec.amplitude_levels
        amplitude = (level + 1) / spec.amplitude_levels + rng.uniform(-0.04, 0.04)
    offset = np.array([
        rng.uniform(-spec.max_offset, spec.max_offset),
        0.0,
        rng.uniform(-spec.max_offset, spec.max_offset),
    ])
    p = MotionParams(
        motion=motion,
        amplitude=float(amplitude),
        phase=rng.uniform(0, 2 * np.pi),
        cycles=rng.uniform(0.75, 1.5),
        yaw=np.deg2rad(rng.uniform(-spec.max_yaw_deg, spec.max_yaw_deg)),
        offset=offset,
        subject=make_subject(spec.seed, subject_id),
        subject_id=subject_id,
        level=level,
    )
    return p


def sequence_joints(spec: SyntheticSceneSpec, index: int, n_frames: int) -> np.ndarray:
    p = sequence_params(spec, index)
    return np.stack([joints_at(p, f) for f in range(n_frames)])


def generate_synthetic(spec: SyntheticSceneSpec, n_sequences: int, frames_per_sequence: int) -> MultiViewDataset:
    """Render ``n_sequences`` scenes simultaneously from every camera of ``spec``.

    Motion classes are assigned round-robin so classes are balanced. Labels
    are the motion class, or the amplitude level for graded specs.
    """
    if n_sequences < 1 or frames_per_sequence < 1:
        raise ValueError("n_sequences and frames_per_sequence must be >= 1")
    sequences = []
    for i in range(n_sequences):
        p = sequence_params(spec, i)
        joints = [joints_at(p, f) for f in range(frames_per_sequence)]
        views = []
        for az in spec.azimuths:
            frames = np.stack([render(j, az, spec.resolution, spec) for j in joints])
            views.append(ArrayFrames(frames))
        label = p.motion if p.level is None else p.level
        sequences.append(SequencePair(
            views=views, scene_id=f"scene_{i:05d}", subject_id=p.subject_id,
            label=int(label), motion_class=int(p.motion),
        ))
    return MultiViewDataset(
        sequences=sequences, resolution=spec.resolution, modality="synthetic",
        azimuths=list(spec.azimuths),
        meta={"generator_seed": spec.seed, "motions": [MOTIONS[c] for c in spec.motion_classes]},
    )
