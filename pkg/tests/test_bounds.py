import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from t34lab import bounds as B
from t34lab.forests import bosonic_x
from t34lab.params import DomainError, ModelParams
from t34lab.sigma import sample_gue, sample_sigma_batch

LOG4 = 2 * math.log(2)


def _exact_bubble_origin():
    # (m2, m3) with m2^2 + m3^2 <= 3, weight 1/(1 + p^2)^2
    total = Fraction(0)
    for a in range(-1, 2):
        for b in range(-1, 2):
            total += Fraction(1, (1 + a * a + b * b) ** 2)
    return total


def test_bubble_golden_value():
    assert _exact_bubble_origin() == Fraction(22, 9)
    assert B.q_bubble(1, 1, 1, 0, 0, 2) == pytest.approx(22 / 9, rel=1e-15)


def test_bubble_outside_support_is_zero():
    # m = 2 has 1 + m^2 = 5 > 4, outside slice 1
    assert B.q_bubble(2, 1, 1, 2, 0, 2) == 0.0
    assert B.q_bubble(1, 1, 2, 0, 2, 2) == 0.0


def test_bubble_disjoint_slices_kind_two():
    # same momentum in two different slices
    assert B.q_form(3, 2, 2, 2).matrix.max() == 0.0


@pytest.mark.parametrize("j,k,kind", [(1, 1, 1), (2, 1, 1), (2, 2, 1), (2, 2, 2), (3, 1, 1)])
def test_bubble_matrix_matches_entrywise(j, k, kind):
    f = B.q_form(j, k, kind, 2)
    r = f.radius
    for m in range(-r, r + 1, 2):
        for n in range(-r, r + 1, 3):
            assert f.entry(m, n) == pytest.approx(B.q_bubble(j, k, kind, m, n, 2), abs=1e-15)
    assert (f.matrix >= 0).all()


def test_bubble_decay_slope():
    vals = [B.q_bubble(j, j, 1, 0, 0, 2) for j in range(1, 6)]
    assert B.log_slope(range(1, 6), vals) == pytest.approx(-LOG4, rel=0.1)


def test_same_scale_bubble_is_psd():
    mat = B.q_form(3, 3, 1, 2).matrix
    assert np.allclose(mat, mat.T)
    assert np.linalg.eigvalsh(mat)[0] > -1e-14


def test_vertex_form_zero_coupling():
    f = B.q_a_matrix(2, 0.0, 2)
    assert not f.dense().any()
    assert f.trace() == 0.0 and f.norm() == 0.0


def test_vertex_form_sparsity_and_psd():
    f = B.q_a_matrix(2, 0.3, 2)
    d = f.d
    Q = f.dense().reshape(3, d, d, 3, d, d)
    c, m, n, c2, m2, n2 = np.nonzero(Q)
    same = c == c2
    # colour-diagonal part sits on the diagonal (c, m, n) = (c', m', n')
    assert ((m[same] == m2[same]) & (n[same] == n2[same])).all()
    # the coupling between colours only touches diagonal entries
    assert ((m[~same] == n[~same]) & (m2[~same] == n2[~same])).all()
    D = f.dense()
    assert np.allclose(D, D.T)
    assert np.linalg.eigvalsh(D)[0] > -1e-12
    assert f.norm() == pytest.approx(np.linalg.eigvalsh(D)[-1], rel=1e-12)
    assert f.trace() == pytest.approx(np.trace(D), rel=1e-12)


def test_vertex_form_is_the_trace_integral():
    # 2 rho int dt Tr(C_<=j(t) sigma C_j sigma) on the ball of slice j, by brute force
    j, rho, M = 2, 0.7, 2
    f = B.q_a_matrix(j, rho, M)
    d = f.d
    rng = np.random.default_rng(3)
    sig = np.stack([sample_gue(d, rng) for _ in range(3)])
    I = np.eye(d)
    S = sum(np.kron(np.kron(*(sig[c] if k == c else I for k in range(2))), sig[c] if c == 2 else I)
            for c in range(3))
    Cj = B.slice_propagator_cube(j, M, f.radius).ravel()
    low = B.slice_propagator_cube(1, M, f.radius).ravel()
    ts, ws = np.polynomial.legendre.leggauss(3)
    val = 0.0
    for t, w in zip(0.5 * (ts + 1), 0.5 * ws):
        val += w * np.trace((low + t * Cj)[:, None] * S * Cj[None, :] @ S).real
    assert f.quadratic(sig) == pytest.approx(2 * rho * val, rel=1e-12)


def test_real_coordinates_roundtrip_and_form():
    f = B.q_a_matrix(2, 0.1, 2)
    rng = np.random.default_rng(0)
    sig = np.stack([sample_gue(f.d, rng, (5,)) for _ in range(3)])
    v = B.real_coordinates(sig)
    assert np.allclose(B.from_real_coordinates(v, f.d), sig)
    Q = f.real_matrix()
    assert np.allclose(0.5 * np.einsum("bi,ij,bj->b", v, Q, v), f.quadratic(sig), rtol=1e-13)
    assert np.trace(Q) == pytest.approx(f.real_trace(), rel=1e-14)


def test_real_coordinates_have_unit_variance():
    rng = np.random.default_rng(1)
    v = B.real_coordinates(np.stack([sample_gue(3, rng, (20000,)) for _ in range(3)]))
    assert np.allclose(np.cov(v.T), np.eye(v.shape[1]), atol=0.04)


def test_trace_bounded_over_scales():
    tr = np.array([B.q_a_matrix(j, 1.0, 2).trace() for j in range(1, 6)])
    inc = np.diff(tr)
    assert (inc > 0).all() and (np.diff(inc) < 0).all()
    assert inc[-1] < 0.1 * tr[-1]


def test_norm_scaling_slope():
    js = range(1, 6)
    norms = [B.q_a_matrix(j, 1.0, 2).norm() / j for j in js]
    assert B.log_slope(js, norms) == pytest.approx(-LOG4, rel=0.1)


def test_hilbert_schmidt_domination():
    for j in range(1, 5):
        for k in range(1, j + 1):
            op, hs = B.hs_domination(j, k, 2)
            assert op <= hs * (1 + 1e-12)
    hs = [B.hs_domination(j, j, 2)[1] for j in range(1, 6)]
    assert B.log_slope(range(1, 6), hs) == pytest.approx(-LOG4, rel=0.1)


def test_det_side_zero_coupling():
    det, est = B.det_bound_check((1, 2), 0.0, np.eye(2), 10, 0)
    assert det.value == 1.0 and est.mean == 1.0 and est.std_error == 0.0


def test_det_side_requires_distinct_scales():
    with pytest.raises(DomainError):
        B.det_side((2, 2), 0.05, np.eye(2))


def test_det_side_signals_large_norm():
    with pytest.raises(DomainError):
        B.det_side((1, 2), 0.2, np.ones((2, 2)))


@settings(max_examples=10, deadline=None)
@given(w=st.floats(0.0, 1.0), rho=st.floats(0.001, 0.05))
def test_det_side_structured_equals_dense(w, rho):
    X = bosonic_x(2, [(1, 2)], [w])
    det = B.det_side((1, 2), rho, X)
    A = B.dense_a_matrix((1, 2), rho, X)
    sign, logabs = np.linalg.slogdet(np.eye(len(A)) - A)
    assert sign > 0
    assert det.log_value == pytest.approx(-0.5 * logabs, rel=1e-10)
    assert det.trace_A == pytest.approx(np.trace(A), rel=1e-12)
    assert abs(det.trace_A - det.trace_forms) <= 1e-12 * det.trace_forms


def test_det_side_factorises_for_independent_vertices():
    both = B.det_side((1, 2), 0.05, np.eye(2)).log_value
    one = B.det_side((1,), 0.05, np.eye(1)).log_value + B.det_side((2,), 0.05, np.eye(1)).log_value
    assert both == pytest.approx(one, rel=1e-12)


def test_det_side_against_monte_carlo():
    X = bosonic_x(2, [(1, 2)], [0.6])
    det, est = B.det_bound_check((1, 2), 0.05, X, 20000, 11)
    assert abs(est.mean.real - det.value) <= 3 * est.std_error


def test_plain_monte_carlo_when_variance_is_finite():
    # tiny rho keeps every eigenvalue below 1/4, so no direction is widened
    det, est = B.det_bound_check((1, 2), 0.01, np.eye(2), 20000, 2)
    assert det.norm_A < 0.25
    assert abs(est.mean.real - det.value) <= 3 * est.std_error


def test_det_side_growth_per_vertex():
    rho = 0.05
    for n in range(1, 5):
        det = B.det_side(tuple(range(1, n + 1)), rho, np.eye(n))
        tr_max = max(B.q_a_matrix(j, rho, 2).real_trace() for j in range(1, n + 1))
        assert det.log_value / n <= 0.5 * tr_max / (1 - det.norm_A)


def test_cumulative_trace_nonnegative_and_brute_force():
    p = ModelParams(0.02, 2, 2, N=1, cutoff="slice")
    sig = sample_sigma_batch(3, np.random.default_rng(4), 6)
    tr = B.cumulative_trace(sig, 1, p)
    assert (tr >= 0).all()
    from t34lab.sigma import field_model
    fm = field_model(p)
    le = fm.lattice.ball(1)[fm.active] * fm.C
    cj = fm.lattice.slice(1)[fm.active] * fm.C
    for b in range(6):
        S = fm.sigma_vec(sig[:, b])
        ref = np.trace(le[:, None] * S * cj[None, :] @ S).real
        assert tr[b] == pytest.approx(ref, rel=1e-12)


def test_vj_ratio_zero_coupling():
    p = ModelParams(0.0, 2, 2, N=1, cutoff="slice")
    assert B.vj_bound_sampler(1, p, 20, 0).max_ratio == 0.0


def test_vj_ratio_finite():
    p = ModelParams(0.02, 2, 2, N=2, cutoff="slice")
    reps = [B.vj_bound_sampler(j, p, 40, 1) for j in (1, 2)]
    assert all(np.isfinite(r.max_ratio) and r.max_ratio > 0 for r in reps)
    assert all(r.min_denominator_trace >= 0 for r in reps)
