import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from sao import geom

# kabsch_rmsd of a unit square against the same square with one corner lifted
# by 1 A; obtained by a 25^3 rotation-vector grid search refined with
# Nelder-Mead (scipy), which does not use SVD.
KABSCH_SQUARE_ORACLE = 0.27409407929432816

vec3 = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3).map(np.array)


def test_exp_zero_is_identity():
    assert np.array_equal(geom.rotation_from_so3([0.0, 0.0, 0.0]), np.eye(3))


def test_exp_half_turn_about_z():
    r = geom.rotation_from_so3([0.0, 0.0, np.pi])
    np.testing.assert_allclose(r, np.diag([-1.0, -1.0, 1.0]), atol=1e-15)


def test_exp_x_rotation_matches_closed_form():
    c, s = np.cos(0.3), np.sin(0.3)
    want = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    np.testing.assert_allclose(geom.rotation_from_so3([0.3, 0.0, 0.0]), want, atol=1e-15)


def test_exp_matches_scipy():
    rng = np.random.default_rng(1)
    for _ in range(20):
        v = rng.normal(size=3)
        np.testing.assert_allclose(geom.rotation_from_so3(v), Rotation.from_rotvec(v).as_matrix(), atol=1e-12)


def test_log_identity_and_round_trip():
    assert np.allclose(geom.so3_from_rotation(np.eye(3)), 0.0)
    v = geom.so3_from_rotation(geom.rotation_from_so3([0.0, 0.0, 1.2]))
    np.testing.assert_allclose(v, [0.0, 0.0, 1.2], atol=1e-9)


def test_log_half_turn():
    v = geom.so3_from_rotation(np.diag([-1.0, -1.0, 1.0]))
    assert np.linalg.norm(v) == pytest.approx(np.pi, abs=1e-12)
    assert abs(v[2]) == pytest.approx(np.pi, abs=1e-12)


def test_log_near_half_turn_is_stable():
    axis = np.array([1.0, 2.0, -2.0]) / 3.0
    for angle in (np.pi - 1e-4, np.pi - 1e-7, np.pi):
        r = geom.rotation_from_so3(axis * angle)
        np.testing.assert_allclose(geom.rotation_from_so3(geom.so3_from_rotation(r)), r, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(vec3)
def test_exp_log_round_trip(v):
    r = geom.rotation_from_so3(v)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(geom.rotation_from_so3(geom.so3_from_rotation(r)), r, atol=1e-8)
    if np.linalg.norm(v) < np.pi - 1e-3:
        np.testing.assert_allclose(geom.so3_from_rotation(r), v, atol=1e-8)


def test_hat_vee_inverse():
    v = np.array([0.1, -2.0, 3.5])
    np.testing.assert_array_equal(geom.vee(geom.hat(v)), v)
    np.testing.assert_allclose(geom.hat(v) @ np.array([1.0, 2.0, 3.0]), np.cross(v, [1.0, 2.0, 3.0]))


def test_frame_examples():
    ident = geom.Frame.identity()
    np.testing.assert_array_equal(ident.apply([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])
    rz = geom.rotation_from_so3([0.0, 0.0, np.pi / 2])
    t = geom.Frame(rz, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(t.apply([1.0, 0.0, 0.0]), [1.0, 1.0, 0.0], atol=1e-15)
    assert t.compose(t.invert()).allclose(ident, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(vec3, vec3, vec3, vec3)
def test_frame_group_laws(va, ta, vb, tb):
    a = geom.Frame(geom.rotation_from_so3(va), ta * 5)
    b = geom.Frame(geom.rotation_from_so3(vb), tb * 5)
    x = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(a.compose(b).apply(x), a.apply(b.apply(x)), atol=1e-9)
    np.testing.assert_allclose(a.apply_inverse(a.apply(x)), x, atol=1e-9)
    assert a.invert().compose(a).allclose(geom.Frame.identity(), atol=1e-9)


def test_frame_stack_shapes():
    rng = np.random.default_rng(0)
    rots = np.stack([geom.random_rotation(rng) for _ in range(5)])
    f = geom.Frame(rots, rng.normal(size=(5, 3)))
    x = rng.normal(size=(5, 3))
    assert f.apply(x).shape == (5, 3)
    assert len(f) == 5
    assert f[2].rotation.shape == (3, 3)


def test_standard_backbone():
    std = geom.standard_backbone()
    np.testing.assert_array_equal(std.ca, [0.0, 0.0, 0.0])
    assert np.linalg.norm(std.c - std.ca) == pytest.approx(1.523, abs=1e-12)
    f = geom.frame_from_backbone(std.n, std.ca, std.c)
    assert f.allclose(geom.Frame.identity(), atol=1e-6)


def test_backbone_from_frame_examples():
    np.testing.assert_array_equal(geom.backbone_from_frame(geom.Frame.identity()), geom.STANDARD_ATOMS)
    shifted = geom.backbone_from_frame(geom.Frame(np.eye(3), np.array([5.0, 0.0, 0.0])))
    np.testing.assert_allclose(shifted, geom.STANDARD_ATOMS + [5.0, 0.0, 0.0])


def test_frame_backbone_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(20):
        f = geom.Frame(geom.random_rotation(rng), rng.normal(scale=10, size=3))
        atoms = geom.backbone_from_frame(f)
        g = geom.frame_from_backbone(atoms[0], atoms[1], atoms[2])
        assert g.allclose(f, atol=1e-6)


def test_frame_from_backbone_equivariance():
    rng = np.random.default_rng(4)
    n, ca, c = rng.normal(size=(3, 3))
    f = geom.frame_from_backbone(n, ca, c)
    r, t = geom.random_rotation(rng), rng.normal(size=3)
    g = geom.frame_from_backbone(r @ n + t, r @ ca + t, r @ c + t)
    np.testing.assert_allclose(g.rotation, r @ f.rotation, atol=1e-9)
    np.testing.assert_allclose(g.translation, r @ ca + t, atol=1e-9)


def test_collinear_atoms_rejected():
    with pytest.raises(geom.CollinearAtoms):
        geom.frame_from_backbone([2.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0])


def test_dihedral_cis_trans():
    o, z = [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]
    assert geom.dihedral([1.0, 0, 0], o, z, [1.0, 0, 1]) == pytest.approx(0.0, abs=1e-12)
    assert geom.dihedral([1.0, 0, 0], o, z, [-1.0, 0, 1]) == pytest.approx(np.pi, abs=1e-12)


def test_dihedral_sign_matches_rotation_oracle():
    # rotating the p1 half-plane about the p2->p3 axis by the returned angle
    # must land on p4 (right-hand rule); checked with scipy rotations
    p1, p2, p3, p4 = map(np.array, ([1.0, 0, 0], [0.0, 0, 0], [0.0, 0, 1], [0.0, 1, 1]))
    angle = geom.dihedral(p1, p2, p3, p4)
    assert angle == pytest.approx(np.pi / 2, abs=1e-12)
    rng = np.random.default_rng(5)
    for _ in range(50):
        p1, p2, p3, p4 = rng.normal(size=(4, 3))
        angle = geom.dihedral(p1, p2, p3, p4)
        axis = (p3 - p2) / np.linalg.norm(p3 - p2)

        def perp(x):
            d = x - p2
            d = d - (d @ axis) * axis
            return d / np.linalg.norm(d)

        turned = Rotation.from_rotvec(axis * angle).apply(perp(p1))
        np.testing.assert_allclose(turned, perp(p4), atol=1e-9)


def test_dihedral_degenerate():
    with pytest.raises(geom.DegenerateDihedral):
        geom.dihedral([0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [3.0, 1, 0])


def test_kabsch_identical_and_rigid():
    rng = np.random.default_rng(6)
    xs = rng.normal(size=(10, 3))
    assert geom.kabsch_rmsd(xs, xs) == 0.0
    r, t = geom.random_rotation(rng), rng.normal(size=3)
    assert geom.kabsch_rmsd(xs, xs @ r.T + t) < 1e-6


def test_kabsch_square_oracle():
    xs = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    ys = xs.copy()
    ys[2, 2] = 1.0
    assert geom.kabsch_rmsd(xs, ys) == pytest.approx(KABSCH_SQUARE_ORACLE, abs=1e-9)


def test_kabsch_length_mismatch():
    with pytest.raises(geom.LengthMismatch):
        geom.kabsch_rmsd(np.zeros((3, 3)), np.zeros((4, 3)))


def test_random_rotation_is_proper():
    rng = np.random.default_rng(7)
    for _ in range(20):
        r = geom.random_rotation(rng)
        assert np.linalg.det(r) == pytest.approx(1.0)
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
