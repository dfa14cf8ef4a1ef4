import itertools
import math

import numpy as np
import pytest

from t34lab import multiscale as ms
from t34lab import sigma as sg
from t34lab.params import DomainError, Lattice, ModelParams

P3 = ModelParams(0.02, M=2, j_max=3, N=2, cutoff="slice")


def test_slice_indicator_examples():
    assert ms.slice_indicator(1, (1, 1, 1), 2) == 1
    assert ms.slice_indicator(2, (2, 0, 0), 2) == 1
    assert ms.slice_indicator(1, (2, 0, 0), 2) == 0
    lat = Lattice(1, 2, 1)
    assert int(lat.slice(1).sum()) == 27
    with pytest.raises(DomainError):
        ms.slice_indicator(0, (0, 0, 0), 2)


def test_partition_of_unity():
    lat = Lattice(6, 2, 3)
    total = sum(lat.slice(j) for j in (1, 2, 3))
    assert np.array_equal(total, lat.ball(3))
    for n in itertools.product(range(-4, 5), repeat=3):
        hits = [ms.slice_indicator(j, n, 2) for j in range(1, 6)]
        assert sum(hits) == 1 and hits.index(1) + 1 == ms.slice_of(n, 2)


def test_interpolation_identity():
    lat = Lattice(4, 2, 3)
    below, shell = lat.ball(1), lat.slice(2)
    for t in (0.0, 0.3, 1.0):
        P, P2 = ms.SliceInterpolation(2, t).weights(below, shell)
        assert np.array_equal(P * P, P2)


@pytest.mark.parametrize("t", [0.0, 0.4, 1.0])
def test_sliced_operator_identities(t):
    for j in (1, 2, 3):
        ops = ms.sliced_operators(j, t, P3)
        assert np.allclose(ops.sqrt_C_le ** 2, ops.C_le, rtol=0, atol=0)
        assert np.array_equal(ops.sqrt_C_j ** 2, ops.C_j)
        assert np.allclose(ops.sqrt_C_le * ops.sqrt_C_j, t * ops.C_j)
        assert np.allclose(ops.D_j, ops.sqrt_C_j * ops.A_j * ops.sqrt_C_j)
        assert np.all(ops.sqrt_C_j <= 2.0 ** (-(j - 1)) + 1e-15)


def test_sliced_operator_endpoints():
    fm = sg.field_model(P3)
    lower = ms.sliced_operators(1, 1.0, P3).C_le
    assert np.array_equal(ms.sliced_operators(2, 0.0, P3).C_le, lower)
    assert np.allclose(ms.sliced_operators(3, 1.0, P3).C_le, fm.C)


def test_e_counterterm_growth():
    p = ModelParams(0.02, M=2, j_max=4, N=5, cutoff="slice")
    E = [ms.e_counterterm_sliced(j, 1.0, p).real for j in range(1, 5)]
    inc = np.diff([0.0] + E)
    assert E[0] > 0 and np.all(inc >= 0)
    assert max(e / j for j, e in enumerate(E, 1)) < 2 * E[0]
    assert ms.e_counterterm_sliced(2, 1.0, p.with_g(0)) == 0


def test_e_counterterm_matches_mc():
    p = ModelParams(0.02, M=2, j_max=1, N=1, cutoff="slice")
    fm = sg.field_model(p)
    rng = np.random.default_rng(2)
    sig = sg.sample_sigma_batch(3, rng, 20_000)
    S = fm.sigma_vec(sig)
    W = fm.C
    vals = np.einsum("i,bij,j,bji->b", W, S, W, S)
    est, err = vals.mean(), vals.std() / math.sqrt(len(vals))
    closed = ms.e_counterterm_sliced(1, 1.0, p) * 2 / p.g
    assert abs(est - closed) < 3 * err


def test_vj_zero_coupling(rng):
    s = sg.sample_sigma(5, rng)
    assert ms.slice_interaction_Vj(s, 1, P3.with_g(0)) == 0
    assert ms.w_vertex(s, 2, P3.with_g(0)) == 0


def test_vj_integral_difference_telescoping(rng):
    for _ in range(5):
        s = sg.sample_sigma(5, rng)
        I = [ms.slice_interaction_Vj(s, j, P3) for j in (1, 2, 3)]
        D = [ms.slice_interaction_Vj(s, j, P3, method="difference") for j in (1, 2, 3)]
        assert np.allclose(I, D, rtol=0, atol=1e-10)
        assert abs(sum(I) - sg.interaction_V(s, P3)) < 1e-10


def test_vj_dense_resolvent_route(rng):
    s = sg.sample_sigma(5, rng)
    for j in (1, 2):
        a = ms.slice_interaction_Vj(s, j, P3)
        b = ms.slice_interaction_Vj(s, j, P3, dense=True)
        assert a == pytest.approx(b, abs=1e-12)


def test_vj_batch(rng):
    sig = sg.sample_sigma_batch(5, rng, 3)
    for j in (1, 2):
        fast = ms.slice_vj_batch(sig, j, P3)
        for b in range(3):
            s = sg.SigmaTriple(tuple(sig[c, b] for c in range(3)))
            assert fast[b] == pytest.approx(ms.slice_interaction_Vj(s, j, P3), abs=1e-12)


def test_vj_locality(rng):
    # sigma entries touching only modes outside the slice-1 ball do not enter V_1
    s = sg.sample_sigma(5, rng)
    base = ms.slice_interaction_Vj(s, 1, P3)
    x = [m.copy() for m in s.sigma]
    x[0][0, 4] += 0.7
    x[0][4, 0] += 0.7
    moved = ms.slice_interaction_Vj(sg.SigmaTriple(tuple(x)), 1, P3)
    assert abs(moved - base) < 1e-12
    assert abs(ms.slice_interaction_Vj(sg.SigmaTriple(tuple(x)), 2, P3) - ms.slice_interaction_Vj(s, 2, P3)) > 1e-6


def test_w_vertex_small_coupling(rng):
    p = ModelParams(1e-4, M=2, j_max=2, N=2, cutoff="slice")
    s = sg.sample_sigma(5, rng)
    V = ms.slice_interaction_Vj(s, 2, p)
    W = ms.w_vertex(s, 2, p)
    assert abs(W + V) <= abs(V) ** 2


def test_vj_rejects_bad_slice(rng):
    with pytest.raises(DomainError):
        ms.slice_interaction_Vj(sg.sample_sigma(5, rng), 4, P3)


def test_quadrature_doubling_failure(rng):
    s = sg.sample_sigma(5, rng)
    with pytest.raises(ms.QuadratureError):
        ms.slice_interaction_Vj(s, 2, P3, quad_points=1, tol=1e-14)
