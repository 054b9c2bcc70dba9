"""Grid-aware volumetric data model, NIfTI-backed I/O, resampling, padding.

All volume kinds share a VoxelGrid: an axis-aligned right-handed grid whose
voxel (i, j, k) has world coordinate origin + (i*sx, j*sy, k*sz) in mm.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import nifti


@dataclass(frozen=True)
class VoxelGrid:
    shape: tuple
    voxel_size: tuple
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        if len(self.shape) != 3 or len(self.voxel_size) != 3 or len(self.origin) != 3:
            raise ValueError("grid shape, voxel_size and origin must be 3-vectors")
        if any(n < 1 for n in self.shape):
            raise ValueError(f"grid shape entries must be >= 1, got {self.shape}")
        if any(s <= 0 for s in self.voxel_size):
            raise ValueError(f"voxel sizes must be > 0, got {self.voxel_size}")

    def world(self, ijk):
        """World coordinate (mm) of voxel index (i, j, k)."""
        ijk = np.asarray(ijk, dtype=float)
        return np.asarray(self.origin) + ijk * np.asarray(self.voxel_size)

    def index(self, xyz):
        """Continuous voxel index of a world point; inverse of world()."""
        xyz = np.asarray(xyz, dtype=float)
        return (xyz - np.asarray(self.origin)) / np.asarray(self.voxel_size)

    @property
    def extent(self):
        """Physical extent (mm) covered by the grid along each axis."""
        return tuple(n * s for n, s in zip(self.shape, self.voxel_size))


@dataclass
class ScalarVolume:
    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}"
            )


@dataclass
class PeakVolume:
    """Per-voxel fiber-orientation peaks: 3 concatenated 3-vectors per voxel."""

    grid: VoxelGrid
    peaks: np.ndarray

    def __post_init__(self):
        self.peaks = np.asarray(self.peaks)
        if self.peaks.ndim != 4 or self.peaks.shape[3] != 9:
            raise ValueError(f"peaks must be (nx, ny, nz, 9), got {self.peaks.shape}")
        if self.peaks.shape[:3] != self.grid.shape:
            raise ValueError(
                f"peaks spatial shape {self.peaks.shape[:3]} != grid shape {self.grid.shape}"
            )

    def magnitudes(self):
        """Per-voxel norms of the three peak vectors, shape (nx, ny, nz, 3)."""
        v = self.peaks.reshape(self.peaks.shape[:3] + (3, 3))
        return np.linalg.norm(v, axis=4)


@dataclass
class BundleMaskSet:
    """Multi-channel bundle masks sharing one grid, with per-channel validity."""

    grid: VoxelGrid
    channels: list
    data: np.ndarray
    valid: list = field(default=None)

    def __post_init__(self):
        self.channels = list(self.channels)
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("bundle channel names must be unique")
        self.data = np.asarray(self.data)
        if self.data.ndim != 4 or self.data.shape[:3] != self.grid.shape:
            raise ValueError(
                f"mask data must be (nx, ny, nz, C) on the grid, got {self.data.shape}"
            )
        if self.data.shape[3] != len(self.channels):
            raise ValueError(
                f"{self.data.shape[3]} data channels vs {len(self.channels)} names"
            )
        if self.valid is None:
            self.valid = [True] * len(self.channels)
        self.valid = [bool(v) for v in self.valid]
        if len(self.valid) != len(self.channels):
            raise ValueError("one validity flag per channel required")

    def channel(self, name):
        return self.data[..., self.channels.index(name)]

    def is_binary(self):
        return bool(np.isin(self.data, (0, 1)).all())


def _labels_sidecar(path):
    return str(path) + ".labels.json"


def load_volume(path, kind="scalar", expect_channels=None):
    """Load a NIfTI image as one of the three volume kinds.

    kind: "scalar" (3D), "peaks" (4D, exactly 9 volumes), or "masks"
    (4D; channel names/validity from the `<image>.labels.json` sidecar
    when present, else generated names with all channels valid).
    expect_channels: optional channel-count check for kind="masks".
    """
    data, voxel_size, origin = nifti.read(path)
    if kind == "scalar":
        if data.ndim != 3:
            raise ValueError(f"{path}: expected a 3D image for a scalar volume")
        grid = VoxelGrid(data.shape, voxel_size, origin)
        return ScalarVolume(grid, data)
    if kind == "peaks":
        if data.ndim != 4 or data.shape[3] != 9:
            got = data.shape[3] if data.ndim == 4 else None
            raise ValueError(f"{path}: peaks require 9 volumes in dim 4, got {got}")
        grid = VoxelGrid(data.shape[:3], voxel_size, origin)
        return PeakVolume(grid, data.astype(np.float32))
    if kind == "masks":
        if data.ndim == 3:
            data = data[..., None]
        if expect_channels is not None and data.shape[3] != expect_channels:
            raise ValueError(
                f"{path}: expected {expect_channels} mask channels, got {data.shape[3]}"
            )
        grid = VoxelGrid(data.shape[:3], voxel_size, origin)
        sidecar = _labels_sidecar(path)
        if os.path.exists(sidecar):
            with open(sidecar) as f:
                meta = json.load(f)
            channels, valid = meta["channels"], meta.get("valid")
        else:
            channels = [f"channel_{c}" for c in range(data.shape[3])]
            valid = None
        return BundleMaskSet(grid, channels, data, valid)
    raise ValueError(f"unknown volume kind {kind!r}")


def save_volume(vol, path):
    """Write a volume as NIfTI (float32, or uint8 for binary mask sets).

    BundleMaskSet channel names and validity flags go to the labels sidecar.
    """
    grid = vol.grid
    if isinstance(vol, ScalarVolume):
        data = vol.values
        if np.isin(data, (0, 1)).all():
            data = data.astype(np.uint8)
    elif isinstance(vol, PeakVolume):
        data = vol.peaks
    elif isinstance(vol, BundleMaskSet):
        data = vol.data
        if vol.is_binary():
            data = data.astype(np.uint8)
    else:
        raise TypeError(f"cannot save object of type {type(vol).__name__}")
    nifti.write(path, data, grid.voxel_size, grid.origin)
    if isinstance(vol, BundleMaskSet):
        with open(_labels_sidecar(path), "w") as f:
            json.dump({"channels": vol.channels, "valid": vol.valid}, f, indent=1)


def _axis_coords(n_in, size_in, size_out):
    """Continuous input indices of output voxel centers along one axis.

    The output grid covers the same physical extent (edges aligned), so
    output voxel j sits at input index (j + 0.5) * ratio - 0.5.
    """
    n_out = max(1, math.ceil(n_in * size_in / size_out - 1e-9))
    ratio = size_out / size_in
    return n_out, (np.arange(n_out) + 0.5) * ratio - 0.5


def _nearest_matrix(n_in, coords):
    idx = np.clip(np.floor(coords + 0.5).astype(int), 0, n_in - 1)
    return idx


def _catmull_rom_matrix(n_in, coords):
    """Dense (n_out, n_in) Catmull-Rom interpolation matrix, border-clamped."""
    i0 = np.floor(coords).astype(int)
    f = coords - i0
    # Catmull-Rom basis for taps at i0-1 .. i0+2.
    w = np.stack(
        [
            0.5 * (-f + 2 * f**2 - f**3),
            0.5 * (2 - 5 * f**2 + 3 * f**3),
            0.5 * (f + 4 * f**2 - 3 * f**3),
            0.5 * (-(f**2) + f**3),
        ],
        axis=1,
    )
    mat = np.zeros((len(coords), n_in))
    for tap in range(4):
        idx = np.clip(i0 - 1 + tap, 0, n_in - 1)
        np.add.at(mat, (np.arange(len(coords)), idx), w[:, tap])
    return mat


def _resample_array(arr, grid, target, mode):
    n_out = []
    per_axis = []
    for ax in range(3):
        n, coords = _axis_coords(grid.shape[ax], grid.voxel_size[ax], target[ax])
        n_out.append(n)
        per_axis.append(coords)
    out = arr.astype(np.float64, copy=False)
    for ax in range(3):
        if mode == "nearest":
            idx = _nearest_matrix(grid.shape[ax], per_axis[ax])
            out = np.take(out, idx, axis=ax)
        else:
            mat = _catmull_rom_matrix(grid.shape[ax], per_axis[ax])
            out = np.moveaxis(np.tensordot(mat, out, axes=(1, ax)), 0, ax)
    new_origin = tuple(
        o - s / 2 + t / 2 for o, s, t in zip(grid.origin, grid.voxel_size, target)
    )
    return out, VoxelGrid(tuple(n_out), target, new_origin)


def resample(vol, target_voxel_size, mode="cubic"):
    """Resample a volume to a new voxel size over the same physical extent.

    mode "nearest" copies the value of the nearest input voxel center
    (value-set preserving, so binary masks stay binary); mode "cubic" is
    separable Catmull-Rom interpolation with border clamping. The output
    shape is ceil(extent / target) per axis.
    """
    if mode not in ("cubic", "nearest"):
        raise ValueError(f"unknown resampling mode {mode!r}")
    target = tuple(float(v) for v in target_voxel_size)
    if len(target) != 3 or any(t <= 0 for t in target):
        raise ValueError(f"target voxel size must be 3 positive mm values, got {target}")
    if isinstance(vol, ScalarVolume):
        out, grid = _resample_array(vol.values, vol.grid, target, mode)
        if mode == "nearest":
            out = out.astype(vol.values.dtype)
        return ScalarVolume(grid, out)
    if isinstance(vol, PeakVolume):
        out, grid = _resample_array(vol.peaks, vol.grid, target, mode)
        return PeakVolume(grid, out.astype(np.float32))
    if isinstance(vol, BundleMaskSet):
        out, grid = _resample_array(vol.data, vol.grid, target, mode)
        if mode == "nearest":
            out = out.astype(vol.data.dtype)
        return BundleMaskSet(grid, vol.channels, out, list(vol.valid))
    raise TypeError(f"cannot resample object of type {type(vol).__name__}")


@dataclass(frozen=True)
class CropRecord:
    """Inverse of pad_to_multiple: where the original slice sits in the pad."""

    top: int
    left: int
    height: int
    width: int

    def crop(self, arr):
        return arr[self.top : self.top + self.height, self.left : self.left + self.width]


def pad_to_multiple(slice2d, multiple):
    """Zero-pad H and W up to the next multiples of `multiple`.

    Padding splits as evenly as possible with the extra row/column on the
    high side. Returns (padded, CropRecord); crop inverts the pad exactly.
    """
    if multiple < 1:
        raise ValueError("multiple must be >= 1")
    arr = np.asarray(slice2d)
    h, w = arr.shape[0], arr.shape[1]
    th = math.ceil(h / multiple) * multiple
    tw = math.ceil(w / multiple) * multiple
    top = (th - h) // 2
    left = (tw - w) // 2
    pads = [(top, th - h - top), (left, tw - w - left)] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, pads), CropRecord(top, left, h, w)
