import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.metrics import structural_similarity

from planeloc.geometry import (DegenerateCosinesError, Plane, ShapeMismatchError, Volume, angles_from_normal,
                               canonicalize, dihedral_angle, half_diagonal, in_plane_basis, origin_distance_diff,
                               param_distance, plane_from_normal, plane_from_params, read_planes, read_volume,
                               slice_volume, ssim, write_planes, write_volume)

angle = st.floats(0.0, 180.0, allow_nan=False)
offset = st.floats(-30.0, 30.0, allow_nan=False)


def unit(rng, n=3):
    v = rng.normal(size=n)
    return v / np.linalg.norm(v)


def random_plane(rng, dmax=20.0):
    return plane_from_normal(unit(rng), rng.uniform(-dmax, dmax))


# -- construction ----------------------------------------------------------

def test_axis_aligned_params():
    p = plane_from_params(0, 90, 90, 5)
    np.testing.assert_allclose(p.normal, [1, 0, 0], atol=1e-15)
    assert p.d == pytest.approx(5)


def test_already_unit_cosines():
    p = plane_from_params(60, 60, 45, 0)
    np.testing.assert_allclose(p.normal, [0.5, 0.5, np.sqrt(2) / 2], atol=1e-12)
    assert p.d == 0


def test_all_zero_angles_normalized():
    p = plane_from_params(0, 0, 0, 3)
    v = np.ones(3)
    np.testing.assert_allclose(p.normal, v / np.linalg.norm(v), atol=1e-12)
    assert p.d == pytest.approx(3 / np.sqrt(3), abs=1e-12)


def test_degenerate_cosines():
    with pytest.raises(DegenerateCosinesError):
        plane_from_params(90, 90, 90, 1)


@settings(max_examples=300, deadline=None)
@given(angle, angle, angle, offset)
def test_plane_invariants(z, b, f, d):
    cos = np.cos(np.radians([z, b, f]))
    if np.linalg.norm(cos) < 1e-6:
        return
    p = plane_from_params(z, b, f, d)
    assert abs(np.linalg.norm(p.normal) - 1) < 1e-9
    first = next(c for c in p.normal if abs(c) > 1e-9)
    assert first > 0
    # point set preserved: a point on the raw plane lies on the normalized one
    pt = cos * d / (cos @ cos)
    assert abs(p.normal @ pt - p.d) < 1e-9


@settings(max_examples=300, deadline=None)
@given(angle, angle, angle, offset)
def test_readback_idempotent(z, b, f, d):
    if np.linalg.norm(np.cos(np.radians([z, b, f]))) < 1e-6:
        return
    p = plane_from_params(z, b, f, d)
    q = plane_from_params(*angles_from_normal(p.normal), p.d)
    np.testing.assert_allclose(q.normal, p.normal, atol=1e-9)
    assert q.d == pytest.approx(p.d, abs=1e-9)


def test_canonicalize_flip():
    n, d = canonicalize([-0.6, 0.8, 0.0], 2.0)
    np.testing.assert_allclose(n, [0.6, -0.8, 0.0])
    assert d == -2.0
    n, d = canonicalize([0.0, -1.0, 0.0], 1.0)
    np.testing.assert_allclose(n, [0, 1, 0])


# -- metrics ---------------------------------------------------------------

def test_dihedral_examples():
    x = plane_from_normal([1, 0, 0], 0)
    y = plane_from_normal([0, 1, 0], 0)
    assert dihedral_angle(x, y) == pytest.approx(90)
    assert dihedral_angle(x, x) == 0
    assert dihedral_angle(x, plane_from_normal([-1, 0, 0], 3)) == 0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_dihedral_symmetric_and_sign_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = random_plane(rng), random_plane(rng)
    ang = dihedral_angle(a, b)
    assert 0 <= ang <= 90
    assert ang == pytest.approx(dihedral_angle(b, a), abs=1e-12)
    fb = Plane(b.angles, -b.normal, -b.d)
    assert ang == pytest.approx(dihedral_angle(a, fb), abs=1e-9)


def test_origin_distance_examples():
    assert origin_distance_diff(plane_from_normal([0, 0, 1], 5), plane_from_normal([0, 0, 1], 3)) == pytest.approx(2)
    p = plane_from_normal([0.3, -0.2, 0.9], 4)
    q = plane_from_normal(-np.array([0.3, -0.2, 0.9]), -4)
    assert origin_distance_diff(p, q) == pytest.approx(0, abs=1e-12)


def test_origin_distance_point_set_oracle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a, b = random_plane(rng), random_plane(rng)
        # closest point of each plane's point set to the center, found by least squares
        ca = np.linalg.lstsq(a.normal[None, :], [a.d], rcond=None)[0]
        cb = np.linalg.lstsq(b.normal[None, :], [b.d], rcond=None)[0]
        # signed distance along the canonical normal
        da, db = ca @ a.normal, cb @ b.normal
        assert origin_distance_diff(a, b) == pytest.approx(abs(da - db), abs=1e-9)


def test_param_distance_examples():
    g = plane_from_normal([0, 0, 1], 2.0)
    dn = half_diagonal((64, 64, 64))
    assert param_distance(g, g, dn) == 0
    assert param_distance(plane_from_normal([0, 0, 1], 2.0 + 0.5 * dn), g, dn) == pytest.approx(0.5)


def test_param_distance_vector_oracle():
    rng = np.random.default_rng(11)
    dn = 40.0
    for _ in range(200):
        p, g = random_plane(rng), random_plane(rng)
        vp = np.append(p.normal, p.d / dn)
        vg = np.append(g.normal, g.d / dn)
        want = np.sqrt(((vp - vg) ** 2).sum())
        assert param_distance(p, g, dn) == pytest.approx(want, abs=1e-12)


def test_param_distance_uses_canonical_sign():
    # the embedding is the canonical 4-vector, so crossing the sign boundary is a jump
    g = plane_from_normal([0, 0, 1], 0.0)
    p1 = plane_from_normal([1e-7, 0.2, 1], 0.0)
    p2 = plane_from_normal([-1e-7, 0.2, 1], 0.0)
    assert param_distance(p1, g, 30) == pytest.approx(np.linalg.norm(p1.normal - g.normal), abs=1e-12)
    assert param_distance(p2, g, 30) == pytest.approx(np.linalg.norm(p2.normal - g.normal), abs=1e-12)
    assert param_distance(p2, g, 30) > 1.5


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_param_distance_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_plane(rng) for _ in range(3))
    dn = 37.0
    assert param_distance(a, c, dn) <= param_distance(a, b, dn) + param_distance(b, c, dn) + 1e-12
    assert param_distance(a, b, dn) == pytest.approx(param_distance(b, a, dn), abs=1e-12)


# -- slicing ---------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_basis_orthonormal(seed):
    n = unit(np.random.default_rng(seed))
    u, v = in_plane_basis(n)
    for a, b in [(u, n), (v, n), (u, v)]:
        assert abs(a @ b) < 1e-9
    assert abs(np.linalg.norm(u) - 1) < 1e-9 and abs(np.linalg.norm(v) - 1) < 1e-9


def test_basis_sign_independent():
    n = unit(np.random.default_rng(3))
    u1, v1 = in_plane_basis(n)
    u2, v2 = in_plane_basis(-n)
    np.testing.assert_allclose(u1, u2)
    np.testing.assert_allclose(v1, v2)


def test_slice_constant_volume():
    vol = Volume(np.full((40, 40, 40), 2.5, np.float32))
    img = slice_volume(vol, plane_from_params(70, 40, 57, 1.5), 16)
    np.testing.assert_allclose(img.pixels, 2.5, atol=1e-6)


def test_slice_ramp():
    shape = (48, 48, 48)
    c = (np.array(shape) - 1) / 2
    z = np.arange(shape[2]) - c[2]
    vol = Volume(np.broadcast_to(z, shape).astype(np.float32))
    for k in (-6.0, 0.0, 3.25):
        img = slice_volume(vol, plane_from_params(90, 90, 0, k), 16)
        np.testing.assert_allclose(img.pixels, k, atol=1e-6)


def test_slice_outside_is_zero():
    vol = Volume(np.ones((32, 32, 32), np.float32))
    img = slice_volume(vol, plane_from_params(0, 90, 90, 100), 16)
    assert np.all(img.pixels == 0)


def test_slice_translation_equivariance():
    rng = np.random.default_rng(2)
    base = rng.random((48, 48, 48)).astype(np.float32)
    for normal, t in [([1, 0, 0], 2), ([0, 1, 0], -3), ([0, 0, 1], 1)]:
        plane = plane_from_normal(normal, 1.0)
        axis = int(np.argmax(np.abs(normal)))
        moved = np.roll(base, t, axis=axis)
        a = slice_volume(Volume(base), plane, 24).pixels
        b = slice_volume(Volume(moved), plane_from_normal(normal, 1.0 + t), 24).pixels
        np.testing.assert_allclose(a[4:-4, 4:-4], b[4:-4, 4:-4], atol=1e-6)


def test_image_basis_and_center():
    vol = Volume(np.zeros((32, 32, 32), np.float32))
    p = plane_from_params(80, 75, 20, 2)
    img = slice_volume(vol, p, 12)
    np.testing.assert_allclose(img.center, vol.center + p.d * p.normal)
    assert img.pixels.shape == (12, 12)


def test_slice_min_size():
    with pytest.raises(ValueError):
        slice_volume(Volume(np.zeros((16, 16, 16))), plane_from_params(0, 90, 90, 0), 4)


# -- ssim ------------------------------------------------------------------

def test_ssim_identity_and_constant():
    rng = np.random.default_rng(0)
    a = rng.random((32, 32))
    assert ssim(a, a) == pytest.approx(1.0)
    c = np.full((20, 20), 0.7)
    assert ssim(c, c) == pytest.approx(1.0)


def test_ssim_noise_low():
    rng = np.random.default_rng(1)
    assert abs(ssim(rng.normal(size=(64, 64)), rng.normal(size=(64, 64)))) < 0.1


def test_ssim_matches_reference():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = rng.random((40, 40))
        b = a + 0.3 * rng.normal(size=a.shape)
        L = max(a.max(), b.max()) - min(a.min(), b.min())
        ref = structural_similarity(a, b, win_size=7, data_range=L)
        assert ssim(a, b) == pytest.approx(ref, abs=1e-10)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        ssim(np.zeros((8, 8)), np.zeros((8, 9)))


# -- volume checks and file formats ----------------------------------------

def test_volume_validation():
    with pytest.raises(ValueError):
        Volume(np.zeros((4, 16, 16)))
    bad = np.zeros((8, 8, 8))
    bad[1, 1, 1] = np.nan
    with pytest.raises(ValueError):
        Volume(bad)


def test_volume_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    vol = Volume(rng.random((9, 10, 11)).astype(np.float32))
    write_volume(tmp_path / "v", vol)
    raw = np.frombuffer((tmp_path / "v.raw").read_bytes(), "<f4")
    assert raw[1] == vol.voxels[1, 0, 0]  # x varies fastest
    back = read_volume(tmp_path / "v")
    np.testing.assert_array_equal(back.voxels, vol.voxels)
    assert back.shape == (9, 10, 11)


def test_planes_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    planes = [random_plane(rng) for _ in range(5)]
    write_planes(tmp_path / "p.txt", planes)
    back = read_planes(tmp_path / "p.txt")
    for a, b in zip(planes, back):
        np.testing.assert_allclose(a.normal, b.normal, atol=1e-12)
        assert a.d == pytest.approx(b.d, abs=1e-12)
    assert len((tmp_path / "p.txt").read_text().splitlines()[0].split()) == 4
