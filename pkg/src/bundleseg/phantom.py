"""Synthetic tube phantoms with known geometry.

Each phantom subject is a small volume containing a few curved tubes.
Inside a tube the first peak points along the local centerline tangent;
outside, low-magnitude isotropic noise fills the first peak so that the
background is not trivially zero.  Ground-truth masks are exact voxel
membership tests against the tube radius, so analytic volumes and
lengths are available for checking the measurement code.
"""

import numpy as np
from scipy.spatial import cKDTree
from scipy.ndimage import binary_dilation

from .volume import VoxelGrid, ScalarVolume, PeakVolume, BundleMaskSet

# Dense sampling step (in voxel units) along centerlines when rasterizing
# tube masks.  Small enough that the distance error is well under half a
# voxel for the radii used here.
_CENTERLINE_STEP = 0.25


class PhantomError(ValueError):
    pass


class TubeSpec:
    """One tube: a Catmull-Rom curve through control points plus a radius.

    Control points and radius are in millimetres (world units).
    """

    def __init__(self, name, control_points, radius):
        points = np.asarray(control_points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 2:
            raise PhantomError("control_points must be an (n, 3) array with n >= 2")
        if radius <= 0:
            raise PhantomError("tube radius must be positive")
        self.name = str(name)
        self.control_points = points
        self.radius = float(radius)


class PhantomSpec:
    """Geometry and noise settings for a phantom cohort."""

    def __init__(self, shape=(64, 64, 40), voxel_size=(1.0, 1.0, 1.0),
                 tubes=None, noise_sigma=0.1, jitter=0.75):
        self.grid = VoxelGrid(tuple(int(n) for n in shape),
                              tuple(float(s) for s in voxel_size),
                              (0.0, 0.0, 0.0))
        self.tubes = list(tubes) if tubes is not None else default_tubes()
        self.noise_sigma = float(noise_sigma)
        self.jitter = float(jitter)
        if not self.tubes:
            raise PhantomError("a phantom needs at least one tube")
        names = [t.name for t in self.tubes]
        if len(set(names)) != len(names):
            raise PhantomError("tube names must be unique")
        self._validate_geometry()

    def _validate_geometry(self):
        # every tube must be wider than one voxel in every axis, and its
        # control polygon must stay inside the volume with room for the
        # radius, otherwise masks get clipped and analytic volumes lie
        extent = self.grid.extent
        for tube in self.tubes:
            for axis in range(3):
                if tube.radius < self.grid.voxel_size[axis]:
                    raise PhantomError(
                        "tube %r radius %.2f is thinner than a voxel along axis %d"
                        % (tube.name, tube.radius, axis))
            low = tube.control_points.min(axis=0) - tube.radius
            high = tube.control_points.max(axis=0) + tube.radius
            if (low < 0.0).any() or (high > np.asarray(extent)).any():
                raise PhantomError(
                    "tube %r leaves the volume (extent %s)" % (tube.name, extent))

    def bundle_names(self):
        return tuple(t.name for t in self.tubes)


def default_tubes():
    """Three tubes on the default 64 x 64 x 40 grid at 1 mm."""
    return [
        TubeSpec("TUBE_Z", [(20.0, 20.0, 6.0), (20.0, 20.0, 34.0)], 3.5),
        TubeSpec("TUBE_X", [(8.0, 44.0, 20.0), (56.0, 44.0, 20.0)], 3.5),
        TubeSpec("ARC", [(14.0, 32.0, 10.0), (24.0, 32.0, 22.0),
                         (40.0, 32.0, 28.0), (52.0, 32.0, 16.0)], 3.0),
    ]


def _catmull_rom_points(control, samples_per_segment):
    """Sample a centripetal-free (uniform) Catmull-Rom spline densely.

    Returns positions and unit tangents at each sample.  Endpoints are
    handled by repeating the first and last control points.
    """
    control = np.asarray(control, dtype=np.float64)
    if control.shape[0] == 2:
        # straight segment: spline of a 2-point polygon is the chord
        t = np.linspace(0.0, 1.0, samples_per_segment)[:, None]
        points = control[0] * (1 - t) + control[1] * t
        tangent = control[1] - control[0]
        tangents = np.tile(tangent, (points.shape[0], 1))
    else:
        padded = np.vstack([control[0], control, control[-1]])
        pieces = []
        tan_pieces = []
        n_seg = control.shape[0] - 1
        for i in range(n_seg):
            p0, p1, p2, p3 = padded[i], padded[i + 1], padded[i + 2], padded[i + 3]
            # avoid duplicating the shared endpoint between segments
            end = 1.0 if i == n_seg - 1 else 1.0 - 1.0 / samples_per_segment
            t = np.linspace(0.0, end, samples_per_segment)[:, None]
            t2 = t * t
            t3 = t2 * t
            pos = 0.5 * ((2.0 * p1)
                         + (-p0 + p2) * t
                         + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
                         + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3)
            vel = 0.5 * ((-p0 + p2)
                         + 2.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t
                         + 3.0 * (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t2)
            pieces.append(pos)
            tan_pieces.append(vel)
        points = np.vstack(pieces)
        tangents = np.vstack(tan_pieces)
    norms = np.linalg.norm(tangents, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return points, tangents / norms


def _tube_fields(spec, tube):
    """Voxel membership mask and per-voxel unit tangents for one tube."""
    grid = spec.grid
    seg_len = np.linalg.norm(np.diff(tube.control_points, axis=0), axis=1).sum()
    samples_per_segment = max(8, int(np.ceil(seg_len / _CENTERLINE_STEP)))
    points, tangents = _catmull_rom_points(tube.control_points, samples_per_segment)

    centers = [(np.arange(n) + 0.5) * s for n, s in zip(grid.shape, grid.voxel_size)]
    xs, ys, zs = np.meshgrid(*centers, indexing="ij")
    voxel_xyz = np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)

    tree = cKDTree(points)
    dist, nearest = tree.query(voxel_xyz, k=1)
    inside = (dist <= tube.radius).reshape(grid.shape)
    tangent_field = tangents[nearest].reshape(grid.shape + (3,))
    return inside, tangent_field


def generate_subject(spec, seed, subject_id=None):
    """Build one phantom subject.

    Returns a dict with keys ``subject_id``, ``peaks`` (PeakVolume),
    ``masks`` (BundleMaskSet), ``brain_mask`` (ScalarVolume) and
    ``centerlines`` (dict of (n, 3) arrays used for the masks).
    The result is a pure function of (spec, seed).
    """
    rng = np.random.default_rng(seed)
    if subject_id is None:
        subject_id = "phantom_%04d" % int(seed)
    grid = spec.grid

    peaks = np.zeros(grid.shape + (9,), dtype=np.float32)
    masks = np.zeros(grid.shape + (len(spec.tubes),), dtype=np.uint8)
    # isotropic noise fills the first peak everywhere; tube voxels are
    # overwritten below.  Peaks two and three stay zero so that channel
    # content never encodes bundle membership on its own.
    noise = rng.normal(0.0, 1.0, size=grid.shape + (3,))
    norms = np.linalg.norm(noise, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    peaks[..., 0:3] = (noise / norms * spec.noise_sigma).astype(np.float32)

    centerlines = {}
    for c, tube in enumerate(spec.tubes):
        inside, tangent_field = _tube_fields(spec, tube)
        masks[..., c] = inside.astype(np.uint8)
        peaks[..., 0:3][inside] = tangent_field[inside].astype(np.float32)
        seg_len = np.linalg.norm(np.diff(tube.control_points, axis=0), axis=1).sum()
        n = max(8, int(np.ceil(seg_len / _CENTERLINE_STEP)))
        centerlines[tube.name] = _catmull_rom_points(tube.control_points, n)[0]

    union = masks.any(axis=-1)
    brain = binary_dilation(union, iterations=4)

    return {
        "subject_id": subject_id,
        "seed": int(seed),
        "spec": spec,
        "peaks": PeakVolume(grid, peaks),
        "masks": BundleMaskSet(grid, spec.bundle_names(), masks),
        "brain_mask": ScalarVolume(grid, brain.astype(np.uint8)),
        "centerlines": centerlines,
    }


def perturbed_spec(spec, rng):
    """Copy of ``spec`` with control points jittered by a Gaussian."""
    tubes = []
    for tube in spec.tubes:
        offset = rng.normal(0.0, spec.jitter, size=tube.control_points.shape)
        tubes.append(TubeSpec(tube.name, tube.control_points + offset, tube.radius))
    return PhantomSpec(shape=spec.grid.shape, voxel_size=spec.grid.voxel_size,
                       tubes=tubes, noise_sigma=spec.noise_sigma, jitter=spec.jitter)


def generate_cohort(spec, n_subjects, seed=0, drop_probability=0.0):
    """Generate ``n_subjects`` phantoms with per-subject shape variation.

    Each subject gets its own jittered copy of the tube geometry.  With
    ``drop_probability`` > 0, individual bundles are marked invalid (their
    mask zeroed and the valid flag cleared) to mimic bundles that could
    not be delineated for some subjects.  Deterministic in (spec,
    n_subjects, seed, drop_probability).
    """
    if n_subjects < 1:
        raise PhantomError("n_subjects must be at least 1")
    if not 0.0 <= drop_probability < 1.0:
        raise PhantomError("drop_probability must be in [0, 1)")
    master = np.random.default_rng(seed)
    subjects = []
    for i in range(n_subjects):
        sub_seed = int(master.integers(0, 2 ** 31 - 1))
        rng = np.random.default_rng(sub_seed)
        # jitter with retries: a large excursion can push a tube outside
        # the volume, which PhantomSpec rejects
        sub_spec = None
        for _ in range(20):
            try:
                sub_spec = perturbed_spec(spec, rng)
                break
            except PhantomError:
                continue
        if sub_spec is None:
            sub_spec = spec
        subject = generate_subject(sub_spec, sub_seed,
                                   subject_id="phantom_%04d" % i)
        if drop_probability > 0.0:
            keep = rng.random(len(spec.tubes)) >= drop_probability
            if not keep.any():
                keep[int(rng.integers(0, len(spec.tubes)))] = True
            data = subject["masks"].data.copy()
            data[..., ~keep] = 0
            subject["masks"] = BundleMaskSet(subject["masks"].grid,
                                             spec.bundle_names(), data,
                                             [bool(k) for k in keep])
        subjects.append(subject)
    return subjects


def generate_streamlines(spec, tube_name, n_streamlines, seed=0, jitter=0.5):
    """Streamline bundle following one tube's centerline.

    Each streamline is the tube spline re-evaluated after jittering the
    control points; with ``jitter`` zero all lines are identical copies
    of the centerline.
    """
    tube = None
    for t in spec.tubes:
        if t.name == tube_name:
            tube = t
            break
    if tube is None:
        raise PhantomError("no tube named %r" % tube_name)
    if n_streamlines < 1:
        raise PhantomError("n_streamlines must be at least 1")
    rng = np.random.default_rng(seed)
    seg_len = np.linalg.norm(np.diff(tube.control_points, axis=0), axis=1).sum()
    n = max(8, int(np.ceil(seg_len / _CENTERLINE_STEP)))
    lines = []
    for _ in range(n_streamlines):
        offset = rng.normal(0.0, jitter, size=tube.control_points.shape) if jitter > 0 else 0.0
        points, _ = _catmull_rom_points(tube.control_points + offset, n)
        lines.append(points)
    return lines
