"""Bundle shape metrics: surface area, volume, streamline length, curl.

Streamlines are ordered polylines in millimeter space, consumed from plain
text files (one "x y z" point per line, blank line between streamlines).
"""

from dataclasses import dataclass

import numpy as np

from .volume import ScalarVolume


@dataclass
class BundleShape:
    surface_area: float   # mm^2
    volume: float         # mm^3
    mean_length: float    # mm
    curl: float           # dimensionless, >= 1 when defined


def _as_points(streamline):
    pts = np.asarray(streamline, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
        raise ValueError(f"a streamline needs >= 2 3D points, got shape {pts.shape}")
    return pts


def streamline_length(streamline):
    """Sum of Euclidean segment lengths in mm."""
    pts = _as_points(streamline)
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def streamline_curl(streamline):
    """Length over endpoint distance (>= 1); None for closed loops."""
    pts = _as_points(streamline)
    chord = float(np.linalg.norm(pts[-1] - pts[0]))
    if chord == 0.0:
        return None
    return streamline_length(pts) / chord


def _mask_and_voxels(mask, voxel_size):
    if isinstance(mask, ScalarVolume):
        return mask.values.astype(bool), mask.grid.voxel_size
    if voxel_size is None:
        voxel_size = (1.0, 1.0, 1.0)
    return np.asarray(mask).astype(bool), tuple(float(v) for v in voxel_size)


def mask_volume(mask, voxel_size=None):
    """Positive voxel count times the voxel volume (mm^3)."""
    m, vs = _mask_and_voxels(mask, voxel_size)
    return float(m.sum()) * vs[0] * vs[1] * vs[2]


def mask_surface_area(mask, voxel_size=None):
    """Total exposed voxel face area in mm^2.

    A face is exposed when the 6-neighbor across it is background or out
    of bounds; per-axis face areas are sy*sz, sx*sz and sx*sy.
    """
    m, (sx, sy, sz) = _mask_and_voxels(mask, voxel_size)
    face_area = (sy * sz, sx * sz, sx * sy)
    total = 0.0
    for axis in range(3):
        padded = np.pad(m, [(1, 1) if a == axis else (0, 0) for a in range(3)])
        inner = np.take(padded, range(0, m.shape[axis]), axis=axis)
        outer = np.take(padded, range(2, m.shape[axis] + 2), axis=axis)
        exposed = int((m & ~inner).sum()) + int((m & ~outer).sum())
        total += exposed * face_area[axis]
    return total


def bundle_shape(mask, streamlines, voxel_size=None):
    """Aggregate the four shape metrics for one bundle.

    mean_length averages all streamlines; curl averages only streamlines
    with distinct endpoints. Raises on an empty streamline set.
    """
    streamlines = list(streamlines)
    if not streamlines:
        raise ValueError("bundle_shape requires at least one streamline")
    lengths = [streamline_length(s) for s in streamlines]
    curls = [c for c in (streamline_curl(s) for s in streamlines) if c is not None]
    return BundleShape(
        surface_area=mask_surface_area(mask, voxel_size),
        volume=mask_volume(mask, voxel_size),
        mean_length=float(np.mean(lengths)),
        curl=float(np.mean(curls)) if curls else None,
    )


def load_streamlines(path):
    """Read blank-line-separated blocks of "x y z" lines."""
    streamlines = []
    block = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                if block:
                    streamlines.append(_finish_block(block, path))
                    block = []
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'x y z', got {line!r}")
            block.append([float(v) for v in parts])
    if block:
        streamlines.append(_finish_block(block, path))
    return streamlines


def _finish_block(block, path):
    if len(block) < 2:
        raise ValueError(f"{path}: streamline block with fewer than 2 points")
    return np.asarray(block, dtype=float)


def save_streamlines(path, streamlines):
    with open(path, "w") as f:
        for i, s in enumerate(streamlines):
            if i:
                f.write("\n")
            for x, y, z in _as_points(s):
                f.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
