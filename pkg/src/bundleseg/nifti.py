"""Minimal NIfTI-1 reader/writer for axis-aligned volumes.

Supports single-file .nii / .nii.gz images, little-endian, 3D or 4D,
with the voxel grid described by pixdim plus the sform/qform translation.
Oblique orientations are out of scope; data are kept in on-disk (x fastest)
axis order.
"""

import gzip
import struct

import numpy as np

HEADER_SIZE = 348
VOX_OFFSET = 352  # header + 4-byte extension flag

# NIfTI-1 datatype codes we can read; we write uint8 and float32 only.
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_WRITE_CODES = {np.dtype(np.uint8): 2, np.dtype(np.float32): 16}


class NiftiError(ValueError):
    """Raised for missing, truncated, or malformed NIfTI files."""


class _GzipWriter(gzip.GzipFile):
    """Gzip writer with fixed mtime and no embedded name, so identical
    volumes produce byte-identical files on every run."""

    def __init__(self, path, mode):
        self._raw = open(path, mode)
        super().__init__(filename="", mode=mode, mtime=0, fileobj=self._raw)

    def close(self):
        try:
            super().close()
        finally:
            self._raw.close()


def _open(path, mode):
    if str(path).endswith(".gz"):
        if "w" in mode:
            return _GzipWriter(path, mode)
        return gzip.open(path, mode)
    return open(path, mode)


def read(path):
    """Read a NIfTI-1 image.

    Returns (data, voxel_size, origin) where data is a float or integer
    ndarray in (x, y, z[, t]) index order, voxel_size is a length-3 tuple
    in mm, and origin is the world coordinate of voxel (0, 0, 0).
    """
    try:
        with _open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise NiftiError(f"no such file: {path}")
    except OSError as e:
        raise NiftiError(f"unreadable file {path}: {e}")
    if len(raw) < VOX_OFFSET:
        raise NiftiError(f"truncated NIfTI header in {path}")

    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        raise NiftiError(f"bad sizeof_hdr {sizeof_hdr} in {path} (big-endian or not NIfTI-1)")
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiError(f"bad magic {magic!r} in {path}")

    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if ndim < 3 or ndim > 4:
        raise NiftiError(f"unsupported dimensionality {ndim} in {path}")
    shape = tuple(int(d) for d in dim[1 : 1 + ndim])
    if any(d < 1 for d in shape):
        raise NiftiError(f"non-positive dim {shape} in {path}")

    (datatype,) = struct.unpack_from("<h", raw, 70)
    if datatype not in _DTYPES:
        raise NiftiError(f"unsupported datatype code {datatype} in {path}")
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder("<")

    pixdim = struct.unpack_from("<8f", raw, 76)
    voxel_size = tuple(float(p) for p in pixdim[1:4])
    if any(not np.isfinite(s) or s <= 0 for s in voxel_size):
        raise NiftiError(f"non-positive voxel size {voxel_size} in {path}")

    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    offset = int(vox_offset) if vox_offset >= HEADER_SIZE else VOX_OFFSET
    scl_slope, scl_inter = struct.unpack_from("<2f", raw, 112)
    qform_code, sform_code = struct.unpack_from("<2h", raw, 252)
    if sform_code > 0:
        srow = struct.unpack_from("<12f", raw, 280)
        origin = (float(srow[3]), float(srow[7]), float(srow[11]))
    elif qform_code > 0:
        origin = struct.unpack_from("<3f", raw, 268)
        origin = tuple(float(v) for v in origin)
    else:
        origin = (0.0, 0.0, 0.0)

    count = int(np.prod(shape))
    body = raw[offset : offset + count * dtype.itemsize]
    if len(body) < count * dtype.itemsize:
        raise NiftiError(f"truncated data in {path}")
    data = np.frombuffer(body, dtype=dtype).reshape(shape, order="F")
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        data = data.astype(np.float32) * slope + scl_inter
    else:
        data = np.ascontiguousarray(data)
    return data, voxel_size, origin


def write(path, data, voxel_size, origin=(0.0, 0.0, 0.0)):
    """Write a 3D or 4D array as single-file NIfTI-1.

    uint8 arrays are written as-is; everything else is cast to float32.
    The affine is diagonal (RAS) with the given voxel size and origin.
    """
    data = np.asarray(data)
    if data.ndim not in (3, 4):
        raise NiftiError(f"can only write 3D/4D volumes, got ndim={data.ndim}")
    if any(d < 1 for d in data.shape):
        raise NiftiError(f"degenerate shape {data.shape}")
    if data.dtype != np.uint8:
        data = data.astype(np.float32)
    code = _WRITE_CODES[data.dtype]

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<c", hdr, 38, b"r")
    dim = [data.ndim, *data.shape] + [1] * (7 - data.ndim)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, data.dtype.itemsize * 8)
    sx, sy, sz = (float(v) for v in voxel_size)
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    struct.pack_into("<B", hdr, 123, 10)  # mm + sec
    ox, oy, oz = (float(v) for v in origin)
    struct.pack_into("<2h", hdr, 252, 0, 1)
    struct.pack_into("<4f", hdr, 280, sx, 0.0, 0.0, ox)
    struct.pack_into("<4f", hdr, 296, 0.0, sy, 0.0, oy)
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, sz, oz)
    hdr[344:348] = b"n+1\x00"

    try:
        with _open(path, "wb") as f:
            f.write(bytes(hdr))
            f.write(b"\x00\x00\x00\x00")
            f.write(np.asfortranarray(data).tobytes(order="F"))
    except OSError as e:
        raise NiftiError(f"cannot write {path}: {e}")
