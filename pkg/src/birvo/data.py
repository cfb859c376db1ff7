"""Frame ingestion, preprocessing, and KITTI-format pose files.

Frames are float64 arrays [H, W, 3] with values in [0, 1]. Preprocessing
resizes every frame to the model's input size, normalizes per channel
with training-set statistics, and stacks each adjacent pair channelwise
into a [T, 6, H, W] tensor (channels 0-2 frame i, channels 3-5 frame
i+1), so T = frame_count - 1.

A sequence directory holds zero-padded PNG frames (000000.png, ...) plus
a `poses.txt` with one camera-to-world transform per frame: 12
whitespace-separated reals, the top 3x4 of the 4x4 matrix in row-major
order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError, ParseError
from .geometry import SE3, nearest_rotation, relative_pose

MIN_SCALE = 1e-6


@dataclass
class NormalizationStats:
    """Per-channel mean and scale used for (pixel - mean) / scale."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        if np.any(self.scale <= 0):
            raise ContractError("NormalizationStats: scale components must be > 0")

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"]), np.array(d["scale"]))


@dataclass
class FramePairStack:
    """Adjacent frame pairs stacked channelwise: [T, 6, H, W]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4 or self.data.shape[1] != 6:
            raise ContractError(f"FramePairStack: expected [T,6,H,W], got {self.data.shape}")

    def __len__(self):
        return self.data.shape[0]


@dataclass
class SequenceSample:
    """One training unit: a pair stack plus its per-pair 6-DoF targets."""

    stack: FramePairStack
    targets: np.ndarray  # [T, 6]
    source_id: str = ""

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.targets.shape != (len(self.stack), 6):
            raise ContractError(
                f"SequenceSample: targets {self.targets.shape} do not match "
                f"stack length {len(self.stack)}"
            )


# -- images ----------------------------------------------------------------


def load_image(path):
    """Decode a PNG/JPEG into float64 [H, W, 3] in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float64) / 255.0


def save_image(path, frame):
    """Quantize a [0, 1] float frame to 8-bit and write it as PNG."""
    arr = np.clip(np.asarray(frame), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8)).save(path)


def resize_bilinear(frame, target_size):
    """Corner-aligned bilinear resample of [H, W, C] to (H2, W2).

    Output pixel (i, j) samples the input at
    (i*(H-1)/(H2-1), j*(W-1)/(W2-1)); a singleton output axis samples
    coordinate 0.
    """
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    h2, w2 = target_size
    if (h, w) == (h2, w2):
        return frame.copy()

    def sample_coords(n_in, n_out):
        if n_out == 1:
            return np.zeros(1)
        return np.arange(n_out) * ((n_in - 1) / (n_out - 1))

    ys = sample_coords(h, h2)
    xs = sample_coords(w, w2)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    f00 = frame[np.ix_(y0, x0)]
    f01 = frame[np.ix_(y0, x1)]
    f10 = frame[np.ix_(y1, x0)]
    f11 = frame[np.ix_(y1, x1)]
    top = f00 * (1 - wx) + f01 * wx
    bottom = f10 * (1 - wx) + f11 * wx
    return top * (1 - wy) + bottom * wy


def compute_stats(frames, use_variance=False):
    """Per-channel mean and scale over every pixel of the training frames.

    Scale is the standard deviation by default; `use_variance` divides by
    the variance instead. A zero-variance channel is floored at 1e-6 with
    a warning.
    """
    if not len(frames):
        raise ContractError("compute_stats: empty training set")
    stacked = np.concatenate([np.asarray(f, dtype=np.float64).reshape(-1, 3) for f in frames])
    mean = stacked.mean(axis=0)
    var = stacked.var(axis=0)
    scale = var if use_variance else np.sqrt(var)
    if np.any(scale < MIN_SCALE):
        warnings.warn("compute_stats: near-constant channel, flooring scale at 1e-6")
        scale = np.maximum(scale, MIN_SCALE)
    return NormalizationStats(mean, scale)


def preprocess(frames, stats, target_size):
    """Resize, normalize, and pair-stack frames into a FramePairStack."""
    if len(frames) < 2:
        raise ContractError(f"preprocess: need at least 2 frames, got {len(frames)}")
    shapes = {np.asarray(f).shape for f in frames}
    if len(shapes) != 1:
        raise ContractError(f"preprocess: mismatched frame sizes {sorted(shapes)}")
    normalized = []
    for frame in frames:
        resized = resize_bilinear(frame, target_size)
        normalized.append(((resized - stats.mean) / stats.scale).transpose(2, 0, 1))
    pairs = [
        np.concatenate([normalized[i], normalized[i + 1]], axis=0)
        for i in range(len(normalized) - 1)
    ]
    return FramePairStack(np.stack(pairs))


def unnormalize(stack, stats):
    """Invert the per-channel normalization of a FramePairStack."""
    mean = np.concatenate([stats.mean, stats.mean]).reshape(1, 6, 1, 1)
    scale = np.concatenate([stats.scale, stats.scale]).reshape(1, 6, 1, 1)
    return stack.data * scale + mean


# -- pose files --------------------------------------------------------------


def parse_kitti_poses(text):
    """Parse pose lines (12 reals each) into camera-to-world SE3s.

    Rotations are projected onto the nearest orthogonal matrix; a
    deviation beyond 1e-3 additionally warns, smaller ones are treated as
    round-off from the text encoding.
    """
    poses = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 12:
            raise ParseError(f"pose line {lineno}: expected 12 fields, got {len(fields)}")
        try:
            values = np.array([float(f) for f in fields]).reshape(3, 4)
        except ValueError as exc:
            raise ParseError(f"pose line {lineno}: {exc}") from None
        R = values[:, :3]
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-3:
            warnings.warn(f"pose line {lineno}: rotation far from orthonormal, repairing")
        poses.append(SE3(nearest_rotation(R), values[:, 3]))
    return poses


def format_kitti_poses(poses):
    """Serialize SE3s (or a Trajectory) back to pose-line text."""
    if hasattr(poses, "poses"):
        poses = poses.poses
    lines = []
    for pose in poses:
        row = np.hstack([pose.rotation, pose.translation[:, None]]).reshape(-1)
        lines.append(" ".join(f"{v:.12e}" for v in row))
    return "\n".join(lines) + "\n"


def relative_targets(poses):
    """[T, 6] array of consecutive relative poses, the supervision unit."""
    return np.array(
        [relative_pose(poses[i], poses[i + 1]).as_vector() for i in range(len(poses) - 1)]
    )


# -- sequence directories ----------------------------------------------------


def save_sequence(directory, frames, poses, manifest=None):
    """Write frames + poses.txt (+ optional manifest.json) in KITTI layout."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        save_image(directory / f"{i:06d}.png", frame)
    (directory / "poses.txt").write_text(format_kitti_poses(poses))
    if manifest is not None:
        import json

        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_sequence(directory):
    """Read a sequence directory back: (frames, poses or None)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ContractError(f"load_sequence: {directory} is not a directory")
    frame_paths = sorted(directory.glob("*.png"))
    if not frame_paths:
        raise ContractError(f"load_sequence: no PNG frames under {directory}")
    frames = [load_image(p) for p in frame_paths]
    pose_file = directory / "poses.txt"
    poses = parse_kitti_poses(pose_file.read_text()) if pose_file.exists() else None
    if poses is not None and len(poses) != len(frames):
        raise ContractError(
            f"load_sequence: {len(frames)} frames but {len(poses)} poses in {directory}"
        )
    return frames, poses


def make_windows(stack, targets, length, stride, source_id=""):
    """Cut a long sequence into overlapping fixed-length training windows.

    Windows start every `stride` pairs; only full windows are kept, except
    that a sequence shorter than `length` yields itself as one window.
    """
    total = len(stack)
    if total <= length:
        return [SequenceSample(stack, targets, source_id)]
    samples = []
    for start in range(0, total - length + 1, stride):
        samples.append(
            SequenceSample(
                FramePairStack(stack.data[start : start + length]),
                targets[start : start + length],
                f"{source_id}[{start}:{start + length}]",
            )
        )
    return samples


def build_dataset(directories, stats, target_size, window_length, window_stride):
    """Load sequence directories into windowed SequenceSamples."""
    samples = []
    for directory in directories:
        frames, poses = load_sequence(directory)
        if poses is None:
            raise ContractError(f"build_dataset: {directory} has no poses.txt")
        stack = preprocess(frames, stats, target_size)
        targets = relative_targets(poses)
        samples.extend(
            make_windows(stack, targets, window_length, window_stride, source_id=str(directory))
        )
    return samples
