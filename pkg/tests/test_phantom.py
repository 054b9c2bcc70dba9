import numpy as np
import pytest
from scipy.spatial import cKDTree
from scipy.ndimage import binary_dilation

from bundleseg.phantom import (
    PhantomError,
    TubeSpec,
    PhantomSpec,
    default_tubes,
    generate_subject,
    generate_cohort,
    generate_streamlines,
)


SPEC = PhantomSpec()


def _voxel_centers(grid):
    centers = [(np.arange(n) + 0.5) * s
               for n, s in zip(grid.shape, grid.voxel_size)]
    xs, ys, zs = np.meshgrid(*centers, indexing="ij")
    return np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)


def _segment_distance(points, a, b):
    # exact point-to-segment distance, the reference for straight tubes
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    t = np.clip((points - a) @ ab / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def _hermite_spline(control, samples_per_segment):
    """Uniform Catmull-Rom rewritten in cubic Hermite form.

    Tangent at an interior knot is the central difference of its
    neighbours; endpoint tangents use one-sided differences of the
    padded polygon, matching the repeated-endpoint convention.
    """
    control = np.asarray(control, dtype=np.float64)
    padded = np.vstack([control[0], control, control[-1]])
    tangents = 0.5 * (padded[2:] - padded[:-2])
    pieces = []
    for i in range(control.shape[0] - 1):
        p0, p1 = control[i], control[i + 1]
        m0, m1 = tangents[i], tangents[i + 1]
        t = np.linspace(0.0, 1.0, samples_per_segment)[:, None]
        h00 = 2 * t ** 3 - 3 * t ** 2 + 1
        h10 = t ** 3 - 2 * t ** 2 + t
        h01 = -2 * t ** 3 + 3 * t ** 2
        h11 = t ** 3 - t ** 2
        pieces.append(h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1)
    return np.vstack(pieces)


# ------------------------------------------------------------ geometry

def test_straight_tube_masks_match_exact_segment_distance():
    subj = generate_subject(SPEC, seed=3)
    masks = subj["masks"]
    points = _voxel_centers(SPEC.grid)
    for name, a, b, radius in [
        ("TUBE_Z", (20, 20, 6), (20, 20, 34), 3.5),
        ("TUBE_X", (8, 44, 20), (56, 44, 20), 3.5),
    ]:
        want = (_segment_distance(points, a, b) <= radius).reshape(SPEC.grid.shape)
        got = masks.channel(name).astype(bool)
        assert np.array_equal(got, want)


def test_arc_mask_matches_independent_spline_within_band():
    subj = generate_subject(SPEC, seed=3)
    arc = next(t for t in SPEC.tubes if t.name == "ARC")
    dense = _hermite_spline(arc.control_points, 900)
    dist = cKDTree(dense).query(_voxel_centers(SPEC.grid), k=1)[0]
    dist = dist.reshape(SPEC.grid.shape)
    inside = subj["masks"].channel("ARC").astype(bool)
    # both rasterisations sample the same curve, so voxels can only
    # disagree inside a hair-thin band around the radius
    assert (dist[inside] <= arc.radius + 0.01).all()
    assert (dist[~inside] >= arc.radius - 0.01).all()


def test_tube_voxels_carry_unit_tangents():
    subj = generate_subject(SPEC, seed=9)
    peaks = subj["peaks"].peaks
    z_mask = subj["masks"].channel("TUBE_Z").astype(bool)
    x_mask = subj["masks"].channel("TUBE_X").astype(bool)
    only_z = z_mask & ~x_mask
    only_x = x_mask & ~z_mask
    assert np.allclose(peaks[only_z][:, 0:3], [0.0, 0.0, 1.0], atol=1e-6)
    assert np.allclose(peaks[only_x][:, 0:3], [1.0, 0.0, 0.0], atol=1e-6)
    arc_mask = subj["masks"].channel("ARC").astype(bool)
    arc_mags = np.linalg.norm(peaks[arc_mask][:, 0:3], axis=1)
    assert np.allclose(arc_mags, 1.0, atol=1e-6)


def test_background_noise_has_requested_magnitude():
    subj = generate_subject(SPEC, seed=9)
    peaks = subj["peaks"].peaks
    outside = ~subj["masks"].data.any(axis=-1)
    mags = np.linalg.norm(peaks[outside][:, 0:3], axis=1)
    assert np.allclose(mags, SPEC.noise_sigma, atol=1e-6)
    assert mags.size > 100000


def test_second_and_third_peaks_stay_zero():
    subj = generate_subject(SPEC, seed=9)
    assert not subj["peaks"].peaks[..., 3:].any()


def test_brain_mask_is_dilated_tube_union():
    subj = generate_subject(SPEC, seed=9)
    union = subj["masks"].data.any(axis=-1)
    want = binary_dilation(union, iterations=4)
    got = subj["brain_mask"].values.astype(bool)
    assert np.array_equal(got, want)
    assert got[union].all()
    assert got.sum() > union.sum()


def test_centerline_endpoints_reach_control_endpoints():
    subj = generate_subject(SPEC, seed=1)
    for tube in SPEC.tubes:
        line = subj["centerlines"][tube.name]
        assert np.allclose(line[0], tube.control_points[0], atol=1e-9)
        assert np.allclose(line[-1], tube.control_points[-1], atol=1e-9)
        steps = np.linalg.norm(np.diff(line, axis=0), axis=1)
        assert steps.max() < 0.5


# ------------------------------------------------------------ determinism

def test_subject_is_pure_function_of_spec_and_seed():
    a = generate_subject(SPEC, seed=42)
    b = generate_subject(SPEC, seed=42)
    assert np.array_equal(a["peaks"].peaks, b["peaks"].peaks)
    assert np.array_equal(a["masks"].data, b["masks"].data)
    c = generate_subject(SPEC, seed=43)
    assert not np.array_equal(a["peaks"].peaks, c["peaks"].peaks)
    # masks come from the tube geometry alone, only the noise tracks the seed
    assert np.array_equal(a["masks"].data, c["masks"].data)


def test_cohort_is_deterministic_and_varies_across_subjects():
    a = generate_cohort(SPEC, 3, seed=5)
    b = generate_cohort(SPEC, 3, seed=5)
    for sa, sb in zip(a, b):
        assert sa["subject_id"] == sb["subject_id"]
        assert np.array_equal(sa["peaks"].peaks, sb["peaks"].peaks)
        assert np.array_equal(sa["masks"].data, sb["masks"].data)
    assert [s["subject_id"] for s in a] == ["phantom_0000", "phantom_0001",
                                            "phantom_0002"]
    # per-subject jitter must actually move the tubes
    assert not np.array_equal(a[0]["masks"].data, a[1]["masks"].data)


def test_cohort_drop_marks_invalid_and_zeroes_masks():
    cohort = generate_cohort(SPEC, 12, seed=1, drop_probability=0.5)
    dropped = 0
    for subject in cohort:
        masks = subject["masks"]
        assert any(masks.valid)
        for c, ok in enumerate(masks.valid):
            if ok:
                assert masks.data[..., c].any()
            else:
                dropped += 1
                assert not masks.data[..., c].any()
    assert dropped > 0


def test_cohort_validation():
    with pytest.raises(PhantomError, match="at least 1"):
        generate_cohort(SPEC, 0)
    with pytest.raises(PhantomError, match="drop_probability"):
        generate_cohort(SPEC, 2, drop_probability=1.0)


# ------------------------------------------------------------ spec checks

def test_tube_spec_validation():
    with pytest.raises(PhantomError, match=r"\(n, 3\)"):
        TubeSpec("bad", [(0.0, 0.0, 0.0)], 2.0)
    with pytest.raises(PhantomError, match="positive"):
        TubeSpec("bad", [(0, 0, 0), (5, 0, 0)], 0.0)


def test_phantom_spec_rejects_clipped_or_thin_tubes():
    leaving = TubeSpec("out", [(2.0, 2.0, 2.0), (20.0, 20.0, 20.0)], 3.5)
    with pytest.raises(PhantomError, match="leaves the volume"):
        PhantomSpec(tubes=[leaving])
    thin = TubeSpec("thin", [(20, 20, 10), (20, 20, 30)], 1.5)
    with pytest.raises(PhantomError, match="thinner than a voxel"):
        PhantomSpec(voxel_size=(1.0, 1.0, 2.0), tubes=[thin])


def test_phantom_spec_rejects_duplicate_or_missing_tubes():
    twice = [TubeSpec("t", [(20, 20, 10), (20, 20, 30)], 3.0),
             TubeSpec("t", [(40, 40, 10), (40, 40, 30)], 3.0)]
    with pytest.raises(PhantomError, match="unique"):
        PhantomSpec(tubes=twice)
    with pytest.raises(PhantomError, match="at least one tube"):
        PhantomSpec(tubes=[])


def test_default_tubes_fit_default_grid():
    names = [t.name for t in default_tubes()]
    assert names == ["TUBE_Z", "TUBE_X", "ARC"]
    assert SPEC.bundle_names() == ("TUBE_Z", "TUBE_X", "ARC")


# ------------------------------------------------------------ streamlines

def test_streamlines_with_zero_jitter_are_identical_copies():
    lines = generate_streamlines(SPEC, "TUBE_Z", 5, seed=0, jitter=0.0)
    assert len(lines) == 5
    for line in lines[1:]:
        assert np.array_equal(line, lines[0])
    assert np.allclose(lines[0][0], (20, 20, 6))
    assert np.allclose(lines[0][-1], (20, 20, 34))


def test_streamlines_jitter_spreads_lines():
    lines = generate_streamlines(SPEC, "ARC", 4, seed=7, jitter=0.5)
    assert not np.array_equal(lines[0], lines[1])
    again = generate_streamlines(SPEC, "ARC", 4, seed=7, jitter=0.5)
    for x, y in zip(lines, again):
        assert np.array_equal(x, y)


def test_streamlines_validation():
    with pytest.raises(PhantomError, match="no tube named"):
        generate_streamlines(SPEC, "nope", 3)
    with pytest.raises(PhantomError, match="at least 1"):
        generate_streamlines(SPEC, "TUBE_Z", 0)
