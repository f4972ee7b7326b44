import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pointring.errors import CoincidenceError, GridError, NotARootError
from pointring.green import FieldPoint, green_kernel
from pointring.krein import (LambdaMatrix, PointArray, RingSpec, build_lambda, find_roots,
                            ring_points, sector_roots)
from pointring.states import (CurrentField, GridSpec, all_boundary_values, boundary_values, circulation,
                             current_density, current_grid, default_grid, divergence,
                             divergence_refinement, exact_norm, fourier_vector, make_state,
                             null_vector, probability_current, sector_state, wavefunction)

RING = RingSpec(12, 1.0, -1.0)


@pytest.fixture(scope="module")
def gap_state():
    """Nondegenerate sector state of the clean ring in the first gap."""
    roots = sector_roots(RING, 1.0, gap_index=1)
    return sector_state(RING, 1.0, roots[0], 0)


@pytest.fixture(scope="module")
def asymmetric():
    pts = PointArray([[0.9, 0.1], [-0.5, 0.7], [-0.2, -0.8]], [-0.3, -0.1, 0.2])
    root = find_roots(pts, 1.0, gap_index=0)[-1]
    return pts, root.z0


def test_null_vector_single_point():
    pts = PointArray([[0.4, 0.3]], [-1.0])
    z0 = find_roots(pts, 1.0, gap_index=0)[0].z0
    d = null_vector(build_lambda(pts, FieldPoint(1.0, z0)))
    assert d.shape == (1,) and abs(d[0] - 1.0) < 1e-15


def test_null_vector_symmetric_pair():
    pts = PointArray([[-0.5, 0.0], [0.5, 0.0]], [-0.2, -0.2])
    roots = find_roots(pts, 1.0, gap_index=0)
    assert len(roots) == 2
    signs = []
    for r in roots:
        d = null_vector(build_lambda(pts, FieldPoint(1.0, r.z0)))
        ratio = d[1] / d[0]
        assert abs(abs(ratio) - 1.0) < 1e-8 and abs(ratio.imag) < 1e-8
        signs.append(round(ratio.real))
    assert sorted(signs) == [-1, 1]


def test_null_vectors_of_clean_ring_are_fourier_vectors():
    for k, z0 in sector_roots(RING, 1.0, gap_index=1).items():
        d = null_vector(build_lambda(ring_points(RING), FieldPoint(1.0, z0)))
        assert abs(np.vdot(fourier_vector(12, k), d)) ** 2 >= 1 - 1e-8


def test_null_vector_refuses_non_root():
    with pytest.raises(NotARootError):
        null_vector(build_lambda(ring_points(RING), FieldPoint(1.0, 2.0)))


def test_null_vector_degenerate_basis():
    z0 = find_roots(ring_points(RING), 1.0, gap_index=0)[0].z0
    basis = null_vector(build_lambda(ring_points(RING), FieldPoint(1.0, z0)), multiplicity=12)
    assert basis.shape == (12, 12)
    assert np.allclose(basis.conj().T @ basis, np.eye(12), atol=1e-10)


def test_state_residual_and_norm(gap_state):
    assert gap_state.residual <= 1e-8 * gap_state.residual_scale
    assert gap_state.norm_constant > 0
    assert abs(np.linalg.norm(gap_state.d) - 1.0) < 1e-14


def test_single_point_wavefunction_is_the_kernel():
    pts = PointArray([[0.0, 0.0]], [0.2])
    z0 = find_roots(pts, 1.0, gap_index=0)[0].z0
    state = make_state(pts, 1.0, z0)
    x = np.array([[0.3, 0.4], [1.0, -2.0]])
    assert np.allclose(wavefunction(state, x), green_kernel(x, pts.positions[0], 1.0, z0), rtol=1e-14)
    with pytest.raises(CoincidenceError):
        wavefunction(state, np.array([[0.0, 0.0]]))


def test_far_field_decay(gap_state):
    theta = np.linspace(0, 2 * math.pi, 64, endpoint=False)
    near = np.stack([1.05 * np.cos(theta), 1.05 * np.sin(theta)], axis=1)
    far = 10.0 * near / 1.05
    assert np.abs(wavefunction(gap_state, far)).max() < 1e-8 * np.abs(wavefunction(gap_state, near)).max()


def test_exact_norm_matches_polar_quadrature():
    # N=1 with alpha=0.5: integrate |G|^2 on a log-radial polar rule to compare with -d^H Lambda' d
    pts = PointArray([[0.0, 0.0]], [0.5])
    z0 = find_roots(pts, 1.0, gap_index=0)[0].z0
    t, w = np.polynomial.legendre.leggauss(200)
    s = 0.5 * (t + 1) * 30.0 - 25.0  # ln r from -25 to 5
    r = np.exp(s)
    vals = np.abs(green_kernel(np.stack([r, 0 * r], axis=1), pts.positions[0], 1.0, z0)) ** 2
    integral = float(np.sum(w * 15.0 * vals * r * r) * 2 * math.pi)
    assert integral == pytest.approx(exact_norm(pts, 1.0, z0, np.array([1.0])), rel=1e-8)


# -- boundary conditions ----------------------------------------------------

def test_boundary_condition_single_point():
    pts = PointArray([[0.2, -0.1]], [-1.0])
    z0 = find_roots(pts, 1.0, gap_index=0)[0].z0
    bv = boundary_values(make_state(pts, 1.0, z0), 0)
    assert abs(bv.L0) > 0
    assert bv.condition_residual(-1.0) <= 1e-4


def test_boundary_condition_ring_states(gap_state):
    for j in range(12):
        assert boundary_values(gap_state, j).condition_residual(-1.0) <= 1e-4
    deep = sector_roots(RING, 1.0, gap_index=0)
    state = sector_state(RING, 1.0, deep[5], 5)
    assert max(boundary_values(state, j).condition_residual(-1.0) for j in range(12)) <= 1e-4


def test_batched_boundary_values_match_single(gap_state, asymmetric):
    pts, z0 = asymmetric
    for state in (gap_state, make_state(pts, 1.0, z0)):
        batched = all_boundary_values(state)
        for j, bv in enumerate(batched):
            one = boundary_values(state, j)
            assert abs(bv.L0 - one.L0) <= 1e-12 * abs(one.L0)
            assert abs(bv.L1 - one.L1) <= 1e-12 * abs(one.L1)


def test_boundary_condition_asymmetric(asymmetric):
    pts, z0 = asymmetric
    state = make_state(pts, 1.0, z0)
    for j in range(pts.n):
        assert boundary_values(state, j).condition_residual(pts.couplings[j]) <= 1e-4


def test_weak_coupling_suppresses_log_part():
    ratios = []
    for alpha in (2.0, 5.0, 10.0):
        pts = PointArray([[0.0, 0.0]], [alpha])
        z0 = find_roots(pts, 1.0, gap_index=0)[0].z0
        bv = boundary_values(make_state(pts, 1.0, z0), 0)
        ratios.append(abs(bv.L0) / abs(bv.L1))
    assert ratios[0] > ratios[1] > ratios[2]


# -- currents ---------------------------------------------------------------

@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-3, 3), st.floats(-3, 3))
def test_real_wavefunction_without_field_carries_no_current(x, y, gx, gy):
    j = probability_current(np.array(0.7), np.array([gx, gy], dtype=complex), np.array([x, y]), 0.0)
    assert np.all(j == 0.0)


def test_rotation_orbit_of_current_magnitude(gap_state):
    eps = 0.05
    base = 0.37
    angles = base + 2 * math.pi * np.arange(12) / 12
    x = (1.0 + eps) * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    mag = np.hypot(*current_density(gap_state, x).T)
    assert np.max(np.abs(mag - mag[0])) <= 1e-6 * mag[0]


def test_mirror_symmetry(asymmetric):
    pts, z0 = asymmetric
    mirrored = PointArray(pts.positions * [1.0, -1.0], pts.couplings)
    z0m = find_roots(mirrored, -1.0, gap_index=0)[-1].z0
    assert abs(z0m - z0) < 1e-9
    s, sm = make_state(pts, 1.0, z0), make_state(mirrored, -1.0, z0m)
    rng = np.random.default_rng(2)
    x = rng.uniform(-1.5, 1.5, (200, 2))
    j = current_density(s, x * [1.0, -1.0])
    jm = current_density(sm, x)
    scale = np.abs(j).max()
    assert np.max(np.abs(jm - j * [1.0, -1.0])) <= 1e-8 * scale
    grid = GridSpec(-2.0, -2.0, 0.02, 201, 201)
    c = circulation(current_grid(s, grid), 1.2)
    cm = circulation(current_grid(sm, grid), 1.2)
    assert abs(c + cm) <= 1e-8 * abs(c) and abs(c) > 0


def test_gauge_phases_leave_density(asymmetric):
    pts, z0 = asymmetric
    lm = build_lambda(pts, FieldPoint(1.0, z0))
    phases = np.exp(1j * np.array([0.4, 2.1, -1.3]))
    # the kernel with extra phases e^{i(chi_j - chi_m)} gives D Lambda D*
    moved = LambdaMatrix(phases[:, None] * lm.entries * phases.conj()[None, :], lm.fp, "", lm.scale)
    d, dm = null_vector(lm), null_vector(moved)
    x = np.random.default_rng(4).uniform(-1.5, 1.5, (50, 2))
    g = green_kernel(x[:, None, :], pts.positions, 1.0, z0)
    psi = g @ d
    psi_m = (g * phases.conj()[None, :]) @ dm  # same kernel, new gauge factors undone
    assert np.allclose(np.abs(psi_m) ** 2, np.abs(psi) ** 2, rtol=1e-9, atol=0)


# -- grids ------------------------------------------------------------------

def test_grid_normalisation_and_coverage():
    pts = PointArray([[0.1, 0.2]], [-1.0])
    z0 = find_roots(pts, 1.0, gap_index=0)[0].z0
    fld = current_grid(make_state(pts, 1.0, z0), GridSpec(-1.0, -1.0, 0.01, 201, 201))
    assert fld.probability() == pytest.approx(1.0, abs=1e-3)
    # a deep state lies wholly inside the grid, so the grid integral reproduces the exact norm
    assert fld.coverage == pytest.approx(1.0, abs=1e-6)


def test_grid_normalisation_stable_under_refinement(gap_state):
    fld = current_grid(gap_state)
    fine = current_grid(gap_state, fld.grid.refined())
    assert fld.probability() == pytest.approx(1.0, abs=1e-3)
    assert fine.probability() == pytest.approx(fld.probability(), abs=1e-3)
    assert fine.coverage == pytest.approx(fld.coverage, abs=1e-3)


def test_masked_nodes_carry_nothing(gap_state):
    fld = current_grid(gap_state)
    assert fld.mask.any()
    assert np.all(fld.current[fld.mask] == 0.0)
    assert fld.mask.mean() <= 0.05


def test_grid_errors(gap_state):
    with pytest.raises(GridError):
        current_grid(gap_state, GridSpec(-2.0, -2.0, 0.2, 21, 21))
    fld = current_grid(gap_state)
    with pytest.raises(GridError):
        circulation(fld, 2.5)


def test_zero_field_has_zero_circulation(gap_state):
    fld = current_grid(gap_state)
    zero = CurrentField(fld.grid, fld.density, np.zeros_like(fld.current), fld.mask,
                        fld.norm_constant, fld.coverage, fld.core_probability, fld.nearest,
                        fld.cutoff, "zero")
    assert circulation(zero, 1.0) == 0.0


def test_divergence_second_order(gap_state):
    coarse, fine, fld = divergence_refinement(gap_state)
    assert coarse / fine >= 3.0
    assert np.isnan(divergence(fld)[fld.mask]).all()


def test_default_grid_covers_ring():
    grid = default_grid(ring_points(RING))
    assert grid.nx == grid.ny == 201
    assert grid.x0 == pytest.approx(-2.0) and grid.x_max == pytest.approx(2.0)
