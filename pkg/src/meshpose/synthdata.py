"""Procedural articulated-body meshes with exact pose-transfer ground truth.

A body is ten capsule/sphere parts posed by a forward-kinematics chain:
identity parameters set segment lengths and radii, pose parameters set
joint angles. The tessellation depends only on the resolution, so every
(identity, pose) combination shares one face list, and the ground truth
for transferring pose b onto identity a is simply ``generate_mesh(a, b)``.

Pose sampling offers two disjoint regimes: ``wide`` draws large swings
(at least half of each joint's limit), ``narrow`` stays within a quarter
of the limits. The gap between the two stands in for the distribution
shift between performed and spontaneous motion when exercising the
latent-space regularizer.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, save_obj, write_manifest

IDENTITY_FIELDS = (
    ("torso_length", 0.40, 0.60),
    ("torso_radius", 0.09, 0.14),
    ("head_radius", 0.07, 0.11),
    ("shoulder_halfwidth", 0.16, 0.24),
    ("upper_arm_length", 0.22, 0.32),
    ("lower_arm_length", 0.20, 0.30),
    ("arm_radius", 0.030, 0.050),
    ("upper_leg_length", 0.30, 0.42),
    ("lower_leg_length", 0.28, 0.40),
    ("leg_radius", 0.045, 0.070),
)

# Gesture-heavy articulation: arms and spine move a lot, legs only a
# little, so the bounding box (and with it the per-pair normalization
# frame) stays comparable across poses of one identity and regression
# targets stay inside the tanh range.
POSE_FIELDS = (
    ("spine_pitch", -0.35, 0.5),
    ("spine_yaw", -0.7, 0.7),
    ("left_shoulder_pitch", -1.5, 1.5),
    ("right_shoulder_pitch", -1.5, 1.5),
    ("left_shoulder_roll", -0.2, 1.3),
    ("right_shoulder_roll", -0.2, 1.3),
    ("left_elbow", 0.0, 2.5),
    ("right_elbow", 0.0, 2.5),
    ("left_hip_pitch", -0.35, 0.35),
    ("right_hip_pitch", -0.35, 0.35),
    ("left_knee", 0.0, 0.5),
    ("right_knee", 0.0, 0.5),
)

IDENTITY_BOUNDS = np.array([(lo, hi) for _, lo, hi in IDENTITY_FIELDS])
POSE_BOUNDS = np.array([(lo, hi) for _, lo, hi in POSE_FIELDS])

# every vertex moves by at most this factor times the joint-angle change
# (longest lever arm is about 1.3 body units, 12 joints, see tests)
GENERATOR_LIPSCHITZ_BOUND = 6.0

POSE_REGIMES = ("wide", "narrow")


def _check_bounds(vec, bounds, what):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (len(bounds),):
        raise ValueError(f"{what} needs {len(bounds)} values, got shape {vec.shape}")
    if (vec < bounds[:, 0] - 1e-12).any() or (vec > bounds[:, 1] + 1e-12).any():
        raise ValueError(f"{what} out of declared bounds: {vec}")
    return vec


@dataclass(frozen=True)
class IdentityParams:
    alpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "alpha", _check_bounds(self.alpha, IDENTITY_BOUNDS, "alpha")
        )

    def __getitem__(self, name):
        return float(self.alpha[[f[0] for f in IDENTITY_FIELDS].index(name)])


@dataclass(frozen=True)
class PoseParams:
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "beta", _check_bounds(self.beta, POSE_BOUNDS, "beta")
        )

    def __getitem__(self, name):
        return float(self.beta[[f[0] for f in POSE_FIELDS].index(name)])


def rest_pose():
    return PoseParams(np.zeros(len(POSE_FIELDS)))


def default_identity():
    return IdentityParams(IDENTITY_BOUNDS.mean(axis=1))


def sample_identity(rng):
    return IdentityParams(rng.uniform(IDENTITY_BOUNDS[:, 0], IDENTITY_BOUNDS[:, 1]))


def sample_pose(rng, regime="wide"):
    if regime not in POSE_REGIMES:
        raise ValueError(f"regime must be one of {POSE_REGIMES}, got {regime!r}")
    lo, hi = POSE_BOUNDS[:, 0], POSE_BOUNDS[:, 1]
    if regime == "narrow":
        return PoseParams(rng.uniform(0.25 * lo, 0.25 * hi))
    # wide: at least half of the limit on a uniformly chosen side
    t = rng.uniform(0.5, 1.0, len(POSE_FIELDS))
    side = rng.uniform(0.0, 1.0, len(POSE_FIELDS))
    span = np.where(side < 0.5, lo, hi)
    # one-sided joints (lo == 0) always swing toward their open side
    span = np.where(lo == 0.0, hi, span)
    return PoseParams(t * span)


def _rot_x(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rot_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def _tube(ring_ys, ring_radii, pole_lo, pole_hi, n_seg):
    """Rings of n_seg vertices around the y axis plus two pole vertices."""
    phis = 2.0 * np.pi * np.arange(n_seg) / n_seg
    cos, sin = np.cos(phis), np.sin(phis)
    rows = [
        np.stack([r * cos, np.full(n_seg, y), r * sin], axis=1)
        for y, r in zip(ring_ys, ring_radii)
    ]
    verts = np.concatenate(rows + [[[0.0, pole_lo, 0.0]], [[0.0, pole_hi, 0.0]]])
    n_rings = len(ring_ys)
    faces = []
    for i in range(n_rings - 1):
        a = i * n_seg
        b = a + n_seg
        for k in range(n_seg):
            k2 = (k + 1) % n_seg
            faces.append((a + k, a + k2, b + k))
            faces.append((a + k2, b + k2, b + k))
    lo_pole = n_rings * n_seg
    hi_pole = lo_pole + 1
    top = (n_rings - 1) * n_seg
    for k in range(n_seg):
        k2 = (k + 1) % n_seg
        faces.append((lo_pole, k2, k))
        faces.append((hi_pole, top + k, top + k2))
    return verts, np.asarray(faces, dtype=np.int64)


def _capsule(length, radius, n_seg, n_rings):
    """Axis from y=-length up to y=0, capped poles; top sits at the origin."""
    ys = np.linspace(-length, 0.0, n_rings)
    return _tube(ys, np.full(n_rings, radius), -length - radius, radius, n_seg)


def _sphere(radius, n_seg, n_rings):
    lat = np.pi * (np.arange(n_rings) + 1) / (n_rings + 1)
    return _tube(-radius * np.cos(lat), radius * np.sin(lat), -radius, radius, n_seg)


def _mirror_x(verts):
    out = verts.copy()
    out[:, 0] = -out[:, 0]
    return out


def generate_mesh(alpha, beta, resolution=1):
    """Deterministic fixed-topology body mesh for one (identity, pose) pair.

    resolution multiplies ring counts; resolution 1 gives roughly 300
    vertices. Pelvis sits at the origin, y is up, x is the left-right
    axis, so the rest pose mirrors across the x = 0 plane.
    """
    if not isinstance(alpha, IdentityParams):
        alpha = IdentityParams(alpha)
    if not isinstance(beta, PoseParams):
        beta = PoseParams(beta)
    res = int(resolution)
    if res < 1:
        raise ValueError(f"resolution must be >= 1, got {resolution}")

    torso_len = alpha["torso_length"]
    shoulder_y = torso_len
    sw = alpha["shoulder_halfwidth"]
    hip_x = 0.55 * sw
    neck = 0.25 * alpha["head_radius"]

    spine = _rot_y(beta["spine_yaw"]) @ _rot_x(-beta["spine_pitch"])
    parts = []

    def add(verts, faces, rotation=None, offset=None, upper_body=False):
        v = verts if rotation is None else verts @ rotation.T
        if offset is not None:
            v = v + offset
        if upper_body:
            v = v @ spine.T
        parts.append((v, faces))

    tv, tf = _tube(
        np.linspace(0.0, torso_len, 4 * res),
        np.full(4 * res, alpha["torso_radius"]),
        -alpha["torso_radius"],
        torso_len + alpha["torso_radius"],
        10,
    )
    add(tv, tf, upper_body=True)

    hv, hf = _sphere(alpha["head_radius"], 10, 4 * res)
    add(hv, hf, offset=np.array([0.0, shoulder_y + neck + alpha["head_radius"], 0.0]),
        upper_body=True)

    def arm(side):
        sign = 1.0 if side == "right" else -1.0
        anchor = np.array([sign * sw, shoulder_y, 0.0])
        shoulder = _rot_z(sign * beta[f"{side}_shoulder_roll"]) @ _rot_x(
            -beta[f"{side}_shoulder_pitch"]
        )
        uv, uf = _capsule(alpha["upper_arm_length"], alpha["arm_radius"], 8, 3 * res)
        lv, lf = _capsule(
            alpha["lower_arm_length"], 0.85 * alpha["arm_radius"], 8, 3 * res
        )
        if side == "left":
            uv, lv = _mirror_x(uv), _mirror_x(lv)
        add(uv, uf, rotation=shoulder, offset=anchor, upper_body=True)
        elbow = shoulder @ _rot_x(-beta[f"{side}_elbow"])
        elbow_at = anchor + shoulder @ np.array([0.0, -alpha["upper_arm_length"], 0.0])
        add(lv, lf, rotation=elbow, offset=elbow_at, upper_body=True)

    def leg(side):
        sign = 1.0 if side == "right" else -1.0
        anchor = np.array([sign * hip_x, 0.0, 0.0])
        hip = _rot_x(-beta[f"{side}_hip_pitch"])
        uv, uf = _capsule(alpha["upper_leg_length"], alpha["leg_radius"], 8, 3 * res)
        lv, lf = _capsule(
            alpha["lower_leg_length"], 0.85 * alpha["leg_radius"], 8, 3 * res
        )
        if side == "left":
            uv, lv = _mirror_x(uv), _mirror_x(lv)
        add(uv, uf, rotation=hip, offset=anchor)
        knee = hip @ _rot_x(beta[f"{side}_knee"])
        knee_at = anchor + hip @ np.array([0.0, -alpha["upper_leg_length"], 0.0])
        add(lv, lf, rotation=knee, offset=knee_at)

    arm("right")
    arm("left")
    leg("right")
    leg("left")

    verts = []
    faces = []
    base = 0
    for v, f in parts:
        verts.append(v)
        faces.append(f + base)
        base += len(v)
    return Mesh(np.concatenate(verts), np.concatenate(faces))


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass(frozen=True)
class SplitSpec:
    held_out_identities: int = 2
    held_out_poses: int = 8
    train_pairs: int = 320
    seen_pairs: int = 24
    unseen_pairs: int = 24

    def __post_init__(self):
        if min(
            self.held_out_identities,
            self.held_out_poses,
            self.train_pairs,
            self.seen_pairs,
            self.unseen_pairs,
        ) < 1:
            raise ValueError("split spec counts must all be >= 1")


@dataclass
class DatasetSplit:
    """Manifests of (identity, pose, ground truth) OBJ path triples."""

    root: str
    train: list
    seen: list
    unseen: list
    descriptor: dict


def _mesh_name(identity_idx, pose_idx):
    return os.path.join("meshes", f"body_i{identity_idx:03d}_p{pose_idx:03d}.obj")


def make_dataset(
    n_identities,
    n_poses,
    split,
    seed,
    out_dir,
    resolution=1,
    regime="wide",
):
    """Sample identities and poses, write OBJ meshes, manifests, descriptor.

    ``n_identities`` x ``n_poses`` is the training universe; the split
    spec adds disjoint held-out identities and poses for the seen- and
    unseen-pose test sets. A pair line is (identity mesh in some pose,
    pose-donor mesh, ground truth = identity in the donor pose).
    """
    if n_identities < 2 or n_poses < 2:
        raise ValueError("need at least 2 identities and 2 poses")
    rng = np.random.default_rng(seed)
    ids = [sample_identity(rng) for _ in range(n_identities + split.held_out_identities)]
    poses = [sample_pose(rng, regime) for _ in range(n_poses + split.held_out_poses)]
    train_ids = list(range(n_identities))
    test_ids = list(range(n_identities, len(ids)))
    train_poses = list(range(n_poses))
    unseen_poses = list(range(n_poses, len(poses)))

    os.makedirs(os.path.join(out_dir, "meshes"), exist_ok=True)
    written = set()

    def mesh_path(i, p):
        rel = _mesh_name(i, p)
        if rel not in written:
            save_obj(
                generate_mesh(ids[i], poses[p], resolution),
                os.path.join(out_dir, rel),
            )
            written.add(rel)
        return rel

    def draw_pairs(count, identity_pool, donor_pool, target_poses, own_poses):
        triples = []
        for _ in range(count):
            a = identity_pool[rng.integers(len(identity_pool))]
            b = donor_pool[rng.integers(len(donor_pool))]
            p = target_poses[rng.integers(len(target_poses))]
            q = own_poses[rng.integers(len(own_poses))]
            triples.append((mesh_path(a, q), mesh_path(b, p), mesh_path(a, p)))
        return triples

    train = draw_pairs(split.train_pairs, train_ids, train_ids, train_poses, train_poses)
    seen = draw_pairs(split.seen_pairs, test_ids, test_ids, train_poses, train_poses)
    unseen = draw_pairs(split.unseen_pairs, test_ids, test_ids, unseen_poses, train_poses)

    for name, triples in (("train", train), ("seen", seen), ("unseen", unseen)):
        write_manifest(os.path.join(out_dir, f"{name}.txt"), triples)

    descriptor = {
        "seed": int(seed),
        "n_identities": int(n_identities),
        "n_poses": int(n_poses),
        "held_out_identities": split.held_out_identities,
        "held_out_poses": split.held_out_poses,
        "train_pairs": split.train_pairs,
        "seen_pairs": split.seen_pairs,
        "unseen_pairs": split.unseen_pairs,
        "resolution": int(resolution),
        "regime": regime,
        "identity_bounds": IDENTITY_BOUNDS.tolist(),
        "pose_bounds": POSE_BOUNDS.tolist(),
    }
    with open(os.path.join(out_dir, "descriptor.json"), "w", encoding="ascii") as f:
        json.dump(descriptor, f, indent=2, sort_keys=True)
    return DatasetSplit(out_dir, train, seen, unseen, descriptor)


def load_dataset(out_dir):
    """Re-open a dataset written by make_dataset."""
    from .mesh import read_manifest

    with open(os.path.join(out_dir, "descriptor.json"), "r", encoding="ascii") as f:
        descriptor = json.load(f)
    return DatasetSplit(
        out_dir,
        read_manifest(os.path.join(out_dir, "train.txt")),
        read_manifest(os.path.join(out_dir, "seen.txt")),
        read_manifest(os.path.join(out_dir, "unseen.txt")),
        descriptor,
    )
