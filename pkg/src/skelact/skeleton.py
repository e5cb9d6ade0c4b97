"""Skeleton sequences: Kinect-format parsing, streams, partitions, synthesis.

The 25-joint layout (0-based) follows the standard Kinect v2 ordering:

     0 spine base    1 spine mid     2 neck          3 head
     4 l shoulder    5 l elbow       6 l wrist       7 l hand
     8 r shoulder    9 r elbow      10 r wrist      11 r hand
    12 l hip        13 l knee       14 l ankle      15 l foot
    16 r hip        17 r knee       18 r ankle      19 r foot
    20 spine shldr  21 l hand tip   22 l thumb      23 r hand tip
    24 r thumb

PARENTS below is the kinematic tree used for the bone stream (root = 0).
"""

import json
from dataclasses import dataclass, field

import numpy as np

JOINT_COUNT = 25
MAX_BODIES = 2

PARENTS = [0, 0, 20, 2, 20, 4, 5, 6, 20, 8, 9, 10, 0, 12,
           13, 14, 0, 16, 17, 18, 1, 7, 7, 11, 11]

SPINE_BASE = 0


class SkeletonParseError(ValueError):
    """Malformed skeleton file; carries the 1-based offending line number."""

    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class SkeletonSequence:
    """Raw (bodies, frames, joints, xyz) coordinates plus a class label."""

    coords: np.ndarray
    label: int = -1
    id: str = ""

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        m, t, j, c = self.coords.shape
        if j != JOINT_COUNT or c != 3:
            raise ValueError(f"expected (*, *, {JOINT_COUNT}, 3), got {self.coords.shape}")
        if t < 1:
            raise ValueError("sequence needs at least one frame")
        if not np.isfinite(self.coords).all():
            raise ValueError("coordinates must be finite")

    @property
    def frames(self):
        return self.coords.shape[1]

    @property
    def bodies(self):
        return self.coords.shape[0]


STREAM_KINDS = ("joint", "bone", "joint_motion", "bone_motion")


@dataclass(frozen=True)
class PartitionTable:
    """Named joint-index subsets over one skeleton layout.

    hands/legs_feet pair with their complements (other_vs_*); upper/lower
    cover the full joint set disjointly; wrist_ankle is the small focus set
    used by the second-stage cross-attention; up_down is the set that block
    operates on (the full set, split internally by upper/lower roles).
    """

    hands: tuple
    legs_feet: tuple
    upper: tuple
    lower: tuple
    wrist_ankle: tuple
    joint_count: int = JOINT_COUNT

    def __post_init__(self):
        full = set(range(self.joint_count))
        for name in ("hands", "legs_feet", "upper", "lower", "wrist_ankle"):
            s = set(getattr(self, name))
            if not s:
                raise ValueError(f"partition {name} is empty")
            if not s <= full:
                raise ValueError(f"partition {name} has out-of-range joints")
        if set(self.upper) & set(self.lower):
            raise ValueError("upper and lower overlap")
        if set(self.upper) | set(self.lower) != full:
            raise ValueError("upper and lower must cover all joints")

    @property
    def other_vs_hands(self):
        return tuple(sorted(set(range(self.joint_count)) - set(self.hands)))

    @property
    def other_vs_feet(self):
        return tuple(sorted(set(range(self.joint_count)) - set(self.legs_feet)))

    @property
    def other_vs_wrist_ankle(self):
        return tuple(sorted(set(range(self.joint_count)) - set(self.wrist_ankle)))

    @property
    def up_down(self):
        return tuple(range(self.joint_count))


def default_partitions():
    """The fixed joint-partition table for the 25-joint layout."""
    return PartitionTable(
        hands=(6, 7, 10, 11, 21, 22, 23, 24),
        legs_feet=(13, 14, 15, 17, 18, 19),
        upper=(1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 20, 21, 22, 23, 24),
        lower=(0, 12, 13, 14, 15, 16, 17, 18, 19),
        wrist_ankle=(6, 10, 14, 18),
    )


@dataclass(frozen=True)
class SkeletonLayout:
    """Joint tree + partition table; lets the model run on toy skeletons."""

    parents: tuple
    partitions: PartitionTable
    center_joint: int = 0

    @property
    def joint_count(self):
        return len(self.parents)


def default_layout():
    return SkeletonLayout(parents=tuple(PARENTS), partitions=default_partitions())


def toy_layout():
    """An 8-joint stick figure for fast finite-difference checks."""
    parts = PartitionTable(
        hands=(2, 3), legs_feet=(6, 7),
        upper=(1, 2, 3, 4), lower=(0, 5, 6, 7),
        wrist_ankle=(2, 6), joint_count=8)
    #        0 root, 1 chest, 2 wrist, 3 hand, 4 head, 5 hip, 6 ankle, 7 foot
    return SkeletonLayout(parents=(0, 0, 1, 2, 1, 0, 5, 6), partitions=parts)


# ---------------------------------------------------------------------------
# file format

_BODY_INFO_FIELDS = 10
_JOINT_LINE_FIELDS = 12


def parse_skeleton(text):
    """Parse one Kinect-format .skeleton text into a SkeletonSequence.

    Layout: frame-count line; per frame a body-count line; per body an info
    line, a joint-count line (25), then 25 joint lines whose first three
    fields are x y z.  Fields beyond xyz are ignored; bodies beyond two are
    dropped.  Raises SkeletonParseError with the offending line number.
    """
    lines = text.splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        if pos >= len(lines):
            raise SkeletonParseError("unexpected end of file", pos + 1)
        pos += 1
        return lines[pos - 1]

    def read_int(what):
        raw = next_line()
        try:
            return int(raw.strip())
        except ValueError:
            raise SkeletonParseError(f"expected {what}, got {raw!r}", pos) from None

    n_frames = read_int("frame count")
    if n_frames < 1:
        raise SkeletonParseError("frame count must be >= 1", pos)
    per_frame = []
    max_bodies = 1
    for _ in range(n_frames):
        n_bodies = read_int("body count")
        if n_bodies < 0:
            raise SkeletonParseError("negative body count", pos)
        bodies = []
        for b in range(n_bodies):
            next_line()  # body info line (tracking id, lean, etc.) — ignored
            n_joints = read_int("joint count")
            if n_joints != JOINT_COUNT:
                raise SkeletonParseError(
                    f"joint count {n_joints} != {JOINT_COUNT}", pos)
            joints = np.empty((JOINT_COUNT, 3))
            for j in range(JOINT_COUNT):
                raw = next_line()
                fields = raw.split()
                if len(fields) < 3:
                    raise SkeletonParseError(
                        f"joint line has {len(fields)} fields, need >= 3", pos)
                try:
                    joints[j] = [float(v) for v in fields[:3]]
                except ValueError:
                    raise SkeletonParseError(
                        f"non-numeric coordinate in {raw!r}", pos) from None
            if b < MAX_BODIES:
                bodies.append(joints)
        max_bodies = max(max_bodies, len(bodies))
        per_frame.append(bodies)

    coords = np.zeros((min(max_bodies, MAX_BODIES), n_frames, JOINT_COUNT, 3))
    for t, bodies in enumerate(per_frame):
        for b, joints in enumerate(bodies):
            coords[b, t] = joints
    return SkeletonSequence(coords=coords)


def write_skeleton(seq):
    """Serialize a SkeletonSequence to the text format parse_skeleton reads.

    Unsupported per-body / per-joint fields are emitted as zeros, so
    parse(write(seq)) is exact on the supported subset.
    """
    if seq.frames < 1:
        raise ValueError("cannot write a sequence with no frames")
    out = [str(seq.frames)]
    zeros_info = " ".join(["0"] * _BODY_INFO_FIELDS)
    for t in range(seq.frames):
        out.append(str(seq.bodies))
        for b in range(seq.bodies):
            out.append(zeros_info)
            out.append(str(JOINT_COUNT))
            for j in range(JOINT_COUNT):
                x, y, z = (float(v) for v in seq.coords[b, t, j])
                tail = " ".join(["0"] * (_JOINT_LINE_FIELDS - 3))
                out.append(f"{x!r} {y!r} {z!r} {tail}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# streams


def derive_stream(seq, kind, layout=None):
    """Derive one ensemble stream (body 0) as a (joints, frames, 3) array.

    joint: spine-base-centered coordinates; bone: joint minus its parent
    (root bone = 0); *_motion: first temporal difference, last frame zero.
    """
    layout = layout or default_layout()
    if kind not in STREAM_KINDS:
        raise ValueError(f"unknown stream kind {kind!r}")
    x = seq.coords[0]  # (T, J, 3)
    if kind in ("joint", "joint_motion"):
        base = x[:, layout.center_joint: layout.center_joint + 1, :]
        out = x - base
    else:
        parents = np.asarray(layout.parents)
        out = x - x[:, parents, :]
        root = parents == np.arange(len(parents))
        out[:, root, :] = 0.0
    if kind.endswith("motion"):
        motion = np.zeros_like(out)
        motion[:-1] = out[1:] - out[:-1]
        out = motion
    return np.ascontiguousarray(out.transpose(1, 0, 2))  # (J, T, 3)


# ---------------------------------------------------------------------------
# synthetic corpus

SYNTH_CLASSES = 8

_REST_POSE = np.array([
    [0.00, 0.00, 3.0],   # spine base
    [0.00, 0.25, 3.0],   # spine mid
    [0.00, 0.55, 3.0],   # neck
    [0.00, 0.70, 3.0],   # head
    [-0.18, 0.50, 3.0],  # l shoulder
    [-0.25, 0.25, 3.0],  # l elbow
    [-0.28, 0.02, 3.0],  # l wrist
    [-0.29, -0.05, 3.0],  # l hand
    [0.18, 0.50, 3.0],   # r shoulder
    [0.25, 0.25, 3.0],   # r elbow
    [0.28, 0.02, 3.0],   # r wrist
    [0.29, -0.05, 3.0],  # r hand
    [-0.10, -0.05, 3.0],  # l hip
    [-0.11, -0.45, 3.0],  # l knee
    [-0.12, -0.85, 3.0],  # l ankle
    [-0.13, -0.93, 2.9],  # l foot
    [0.10, -0.05, 3.0],  # r hip
    [0.11, -0.45, 3.0],  # r knee
    [0.12, -0.85, 3.0],  # r ankle
    [0.13, -0.93, 2.9],  # r foot
    [0.00, 0.45, 3.0],   # spine shoulder
    [-0.30, -0.12, 3.0],  # l hand tip
    [-0.26, -0.08, 2.95],  # l thumb
    [0.30, -0.12, 3.0],  # r hand tip
    [0.26, -0.08, 2.95],  # r thumb
])

_JITTER_SIGMA = 0.01


def synth_generate(class_id, seed, frames=64):
    """Deterministic synthetic motion for one of 8 separable classes.

    Each class animates a distinct joint subset of the rest pose with a
    class-specific parametric motion plus Gaussian jitter (sigma 1 cm), so
    partition-focused models can tell them apart at desk scale.
    """
    if not 0 <= class_id < SYNTH_CLASSES:
        raise ValueError(f"class_id must be in [0, {SYNTH_CLASSES})")
    if frames < 2:
        raise ValueError("need at least 2 frames")
    rng = np.random.default_rng((class_id + 1) * 1_000_003 + seed)
    parts = default_partitions()
    t = np.arange(frames)[:, None]
    coords = np.tile(_REST_POSE, (frames, 1, 1))  # (T, 25, 3)

    def wave(freq, phase=0.0):
        return np.sin(2.0 * np.pi * freq * t / frames + phase)

    if class_id == 0:      # periodic hand raise
        coords[:, list(parts.hands), 1] += 0.30 * wave(2.0)
    elif class_id == 1:    # leg swing, forward-back
        coords[:, list(parts.legs_feet), 2] += 0.30 * wave(2.0)
    elif class_id == 2:    # whole-body lateral translation
        coords[:, :, 0] += 0.40 * wave(1.0)
    elif class_id == 3:    # upper-body sway
        coords[:, list(parts.upper), 0] += 0.25 * wave(3.0)
    elif class_id == 4:    # squat-like lower-body bob
        coords[:, list(parts.lower), 1] += 0.25 * wave(2.0)
    elif class_id == 5:    # wrist/ankle circles
        wa = list(parts.wrist_ankle)
        coords[:, wa, 0] += 0.20 * wave(4.0)
        coords[:, wa, 1] += 0.20 * wave(4.0, phase=np.pi / 2.0)
    elif class_id == 6:    # head nod
        coords[:, [2, 3], 1] += 0.18 * wave(3.0)
        coords[:, [2, 3], 2] += 0.10 * wave(3.0, phase=np.pi / 2.0)
    else:                  # torso twist (x/z counter-rotation about the spine)
        ang = 0.5 * wave(1.5)
        xz = coords[:, :, [0, 2]] - _REST_POSE[None, :, [0, 2]].mean(1, keepdims=True)
        cos, sin = np.cos(ang), np.sin(ang)
        rx = cos * xz[:, :, 0] - sin * (xz[:, :, 1])
        rz = sin * xz[:, :, 0] + cos * (xz[:, :, 1])
        coords[:, :, 0] = rx + _REST_POSE[None, :, [0, 2]].mean(1)[:, 0]
        coords[:, :, 2] = rz + _REST_POSE[None, :, [0, 2]].mean(1)[:, 1]

    coords += rng.normal(0.0, _JITTER_SIGMA, size=coords.shape)
    return SkeletonSequence(coords=coords[None], label=class_id,
                            id=f"synth-c{class_id}-s{seed}")


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestItem:
    label: int
    path: str = ""
    seed: int = -1
    frames: int = 64

    def load(self):
        if self.path:
            with open(self.path, "r", encoding="utf-8") as fh:
                seq = parse_skeleton(fh.read())
            seq.label = self.label
            seq.id = self.path
            return seq
        return synth_generate(self.label, self.seed, self.frames)


@dataclass
class DatasetManifest:
    """A labeled list of skeleton files (or synthetic seeds) plus metadata."""

    items: list
    class_count: int
    split: str = "train"

    def __post_init__(self):
        for it in self.items:
            if not 0 <= it.label < self.class_count:
                raise ValueError(
                    f"label {it.label} out of range for {self.class_count} classes")

    def load_all(self):
        return [it.load() for it in self.items]


def save_manifest(manifest, path):
    rows = []
    for it in manifest.items:
        row = {"label": it.label}
        if it.path:
            row["path"] = it.path
        else:
            row["seed"] = it.seed
            row["frames"] = it.frames
        rows.append(row)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)


def load_manifest(path, split="train", class_count=None):
    with open(path, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    items = [ManifestItem(label=int(r["label"]), path=r.get("path", ""),
                          seed=int(r.get("seed", -1)),
                          frames=int(r.get("frames", 64))) for r in rows]
    if class_count is None:
        class_count = max(it.label for it in items) + 1
    return DatasetManifest(items=items, class_count=class_count, split=split)
