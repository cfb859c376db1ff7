"""Synthetic camera sequences with exact pose ground truth.

Renders a desk-scale diorama through a pinhole camera: a value-noise
textured ground plane plus scattered billboard squares standing on it.
The camera uses the driving convention x right, y down, z forward, so
the scene's vertical axis is y and heading changes show up on Euler
component 1 (the rotation about y). The camera travels level with the
ground at a fixed height, so metric scale is observable from image flow.

Paths are built from per-frame relative motions and composed, which makes
the returned absolute poses exactly consistent with the relative chain:

* ``line``: constant speed straight ahead, relative motion (0, 0, v).
* ``arc``: constant turn rate w per frame at constant speed; every
  relative pose is the same chord (c*sin(w/2), 0, c*cos(w/2)) with
  rotation about y by w, where c = 2*(v/w)*sin(w/2).
* ``figure-eight``: the arc motion with the turn direction reversed
  halfway through, tracing two tangent loops.

``speed_ramp`` scales the per-frame speed linearly from v at the first
pair to ramp*v at the last, for sequences whose motion statistics drift
over time (constant-motion baselines cannot track these).
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .geometry import SE3, Trajectory, compose_trajectory

PATH_TYPES = ("line", "arc", "figure-eight")

CAMERA_HEIGHT = 0.15  # meters above the ground plane
FOG_DISTANCE = 8.0
SKY_COLOR = np.array([0.62, 0.70, 0.82])


def _rot_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _relative_chain(path, frame_count, speed, turn_rate, speed_ramp):
    """Per-frame (rotation, translation) relative motions for a path."""
    steps = frame_count - 1
    ramps = 1.0 + (speed_ramp - 1.0) * (np.arange(steps) / max(steps - 1, 1))
    if path == "line":
        turns = np.zeros(steps)
    elif path == "arc":
        turns = np.full(steps, turn_rate)
    elif path == "figure-eight":
        turns = np.full(steps, turn_rate)
        turns[steps // 2 :] *= -1.0
    else:
        raise ContractError(f"unknown path type {path!r}; expected one of {PATH_TYPES}")
    rels = []
    for k in range(steps):
        v = speed * ramps[k]
        w = turns[k]
        if abs(w) < 1e-12:
            t = np.array([0.0, 0.0, v])
            rot = np.eye(3)
        else:
            chord = 2.0 * (v / w) * np.sin(w / 2.0)
            t = np.array([chord * np.sin(w / 2.0), 0.0, chord * np.cos(w / 2.0)])
            rot = _rot_y(w)
        rels.append(SE3(rot, t))
    return rels


def _hash01(ix, iz, salt):
    """Deterministic lattice hash -> floats in [0, 1)."""
    h = ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    h ^= iz.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
    h ^= np.uint64(salt)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(px, pz, salt):
    """Smoothly interpolated lattice noise over world coordinates."""
    ix = np.floor(px).astype(np.int64)
    iz = np.floor(pz).astype(np.int64)
    fx = px - ix
    fz = pz - iz
    # smoothstep weights
    wx = fx * fx * (3.0 - 2.0 * fx)
    wz = fz * fz * (3.0 - 2.0 * fz)
    h00 = _hash01(ix, iz, salt)
    h01 = _hash01(ix, iz + 1, salt)
    h10 = _hash01(ix + 1, iz, salt)
    h11 = _hash01(ix + 1, iz + 1, salt)
    top = h00 * (1 - wx) + h10 * wx
    bottom = h01 * (1 - wx) + h11 * wx
    return top * (1 - wz) + bottom * wz


def _ground_color(x, z, seed_salt):
    """Two-octave noise per channel over a warm base tint."""
    base = np.array([0.48, 0.42, 0.36])
    out = np.empty(x.shape + (3,))
    for c in range(3):
        coarse = _value_noise(x / 0.35, z / 0.35, seed_salt + 11 * c)
        fine = _value_noise(x / 0.11 + 13.7, z / 0.11 - 5.3, seed_salt + 11 * c + 3)
        out[..., c] = base[c] * (0.55 + 0.65 * (0.65 * coarse + 0.35 * fine))
    return out


def _scatter_billboards(rng, positions, headings, count):
    """Vertical squares standing on the ground near the camera path."""
    boards = []
    n = len(positions)
    for _ in range(count):
        i = int(rng.integers(0, n))
        lateral = rng.uniform(0.35, 2.2) * rng.choice([-1.0, 1.0])
        ahead = rng.uniform(0.2, 3.0)
        offset = _rot_y(headings[i]) @ np.array([lateral, 0.0, ahead])
        center_xz = positions[i] + offset
        width = rng.uniform(0.05, 0.2)
        height = rng.uniform(0.08, 0.3)
        yaw = rng.uniform(0, 2 * np.pi)
        color = rng.uniform(0.15, 0.95, size=3)
        boards.append(
            {
                # center of the square; it stands on the ground plane
                "center": np.array(
                    [center_xz[0], CAMERA_HEIGHT - height / 2.0, center_xz[2]]
                ),
                "normal": np.array([np.sin(yaw), 0.0, np.cos(yaw)]),
                "u_axis": np.array([np.cos(yaw), 0.0, -np.sin(yaw)]),
                "half_w": width / 2.0,
                "half_h": height / 2.0,
                "color": color,
            }
        )
    return boards


def _render_frame(pose, dirs_cam, boards, seed_salt):
    """Ray-cast one frame: nearest of ground plane and billboards, fog to sky."""
    h, w = dirs_cam.shape[:2]
    dirs = dirs_cam @ pose.rotation.T
    origin = pose.translation
    depth = np.full((h, w), np.inf)
    color = np.tile(SKY_COLOR, (h, w, 1)).astype(np.float64)
    # slight vertical sky gradient for orientation cues
    up = -dirs[..., 1] / np.linalg.norm(dirs, axis=-1)
    color += np.clip(up, 0, 1)[..., None] * np.array([-0.10, -0.06, 0.06])

    dy = dirs[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = (CAMERA_HEIGHT - origin[1]) / dy
    ground_ok = (dy > 1e-9) & (t_ground > 1e-6)
    gx = origin[0] + t_ground * dirs[..., 0]
    gz = origin[2] + t_ground * dirs[..., 2]
    ground_rgb = _ground_color(np.where(ground_ok, gx, 0.0), np.where(ground_ok, gz, 0.0), seed_salt)
    color = np.where(ground_ok[..., None], ground_rgb, color)
    depth = np.where(ground_ok, t_ground, depth)

    for board in boards:
        denom = dirs @ board["normal"]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hit = ((board["center"] - origin) @ board["normal"]) / denom
        hit = origin + t_hit[..., None] * dirs
        local = hit - board["center"]
        a = local @ board["u_axis"]
        b = local[..., 1]
        ok = (
            (np.abs(denom) > 1e-9)
            & (t_hit > 1e-6)
            & (t_hit < depth)
            & (np.abs(a) <= board["half_w"])
            & (np.abs(b) <= board["half_h"])
        )
        edge = (np.abs(a) > 0.8 * board["half_w"]) | (np.abs(b) > 0.8 * board["half_h"])
        rgb = np.where(edge[..., None], board["color"] * 0.35, board["color"])
        color = np.where(ok[..., None], rgb, color)
        depth = np.where(ok, t_hit, depth)

    # distance fog keeps the horizon soft
    with np.errstate(over="ignore"):
        fog = np.where(np.isfinite(depth), np.exp(-depth / FOG_DISTANCE), 0.0)
    color = color * fog[..., None] + SKY_COLOR * (1.0 - fog[..., None])
    return np.clip(color, 0.0, 1.0)


def synth_generate(
    path,
    frame_count,
    image_size=(48, 160),
    seed=0,
    speed=0.02,
    turn_rate=0.04,
    speed_ramp=1.0,
    billboard_count=36,
):
    """Render a camera sequence along a parametric path.

    Returns (frames, poses): float [H, W, 3] frames in [0, 1] and exact
    camera-to-world SE3 ground truth, one per frame, with the first pose
    the identity. Deterministic per seed.
    """
    if frame_count < 2:
        raise ContractError(f"synth_generate: need at least 2 frames, got {frame_count}")
    if speed <= 0:
        raise ContractError("synth_generate: speed must be > 0 (degenerate path)")
    if path not in PATH_TYPES:
        raise ContractError(f"unknown path type {path!r}; expected one of {PATH_TYPES}")

    rels = _relative_chain(path, frame_count, speed, turn_rate, speed_ramp)
    trajectory = compose_trajectory(rels)
    poses = trajectory.poses

    rng = np.random.default_rng(seed)
    positions = trajectory.positions()
    headings = np.array([np.arctan2(p.rotation[0, 2], p.rotation[2, 2]) for p in poses])
    boards = _scatter_billboards(rng, positions, headings, billboard_count)
    seed_salt = int(rng.integers(0, 2**31))

    h, w = image_size
    fx = 0.65 * w
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    dirs_cam = np.stack([(us - cx) / fx, (vs - cy) / fx, np.ones_like(us, dtype=np.float64)], axis=-1)

    frames = [_render_frame(pose, dirs_cam, boards, seed_salt) for pose in poses]
    return frames, poses


def synth_trajectory(path, frame_count, speed=0.02, turn_rate=0.04, speed_ramp=1.0):
    """Ground-truth trajectory alone (no rendering), for metric tests."""
    if frame_count < 2:
        raise ContractError(f"synth_trajectory: need at least 2 frames, got {frame_count}")
    if speed <= 0:
        raise ContractError("synth_trajectory: speed must be > 0 (degenerate path)")
    return Trajectory(compose_trajectory(_relative_chain(path, frame_count, speed, turn_rate, speed_ramp)).poses)
