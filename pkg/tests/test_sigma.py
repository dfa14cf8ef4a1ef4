import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from t34lab import sigma as sg
from t34lab.params import DomainError, ModelParams


def test_cardioid_examples():
    assert sg.cardioid_contains(0.1, 0.2)
    assert not sg.cardioid_contains(0.2 * cmath.exp(1j * math.pi / 2), 0.25)
    assert not sg.cardioid_contains(-0.1, 1.0)
    with pytest.raises(DomainError):
        sg.cardioid_contains(0.1, 0)


@given(st.floats(0, 0.5), st.floats(-math.pi + 1e-6, math.pi), st.floats(0.01, 1))
def test_cardioid_matches_definition(r, phi, rho):
    g = r * cmath.exp(1j * phi)
    expect = r < rho * math.cos(cmath.phase(g) / 2) or r == 0
    assert sg.cardioid_contains(g, rho) == expect


def test_sigma_triple_validates():
    with pytest.raises(ValueError):
        sg.SigmaTriple((np.array([[0, 1], [0, 0]]),) * 3)
    with pytest.raises(ValueError):
        sg.SigmaTriple((np.eye(2),) * 2)


def test_sigma_vec_scalars_and_spectrum(rng):
    s = sg.SigmaTriple(tuple(np.array([[v]]) for v in (0.3, -1.2, 2.0)))
    assert sg.build_sigma_vec(s).matrix[0, 0] == pytest.approx(1.1)
    assert np.all(sg.build_sigma_vec(sg.SigmaTriple.zeros(2)).matrix == 0)
    s = sg.sample_sigma(2, rng)
    op = sg.build_sigma_vec(s)
    assert np.allclose(op.matrix, op.matrix.conj().T)
    e = [np.linalg.eigvalsh(x) for x in s.sigma]
    sums = np.sort([a + b + c for a in e[0] for b in e[1] for c in e[2]])
    assert np.allclose(np.sort(np.linalg.eigvalsh(op.matrix)), sums)


def test_restricted_sigma_vec_matches_kron(rng):
    p = ModelParams(0.05, N=1)
    fm = sg.field_model(p)
    s = sg.sample_sigma(3, rng)
    assert np.allclose(fm.sigma_vec(s), sg.build_sigma_vec(s).matrix)


def test_sample_sigma_moments():
    rng = np.random.default_rng(5)
    n = 100_000
    x = sg.sample_gue(3, rng, (n,))
    assert np.allclose(x, np.conj(np.swapaxes(x, -1, -2)))
    # E[sigma_mn sigma_n'm'] = delta_mn' delta_nm'
    pair = x[:, 0, 1] * x[:, 1, 0]
    same = x[:, 0, 1] * x[:, 0, 1]
    diag = x[:, 2, 2] ** 2
    for val, target in ((pair, 1.0), (same, 0.0), (diag, 1.0)):
        err = np.std(val) / math.sqrt(n)
        assert abs(np.mean(val) - target) < 4 * err
    one = sg.sample_sigma(1, np.random.default_rng(1))
    assert one.dims == (1, 1, 1)


def test_sampling_deterministic():
    a = sg.sample_sigma(3, np.random.default_rng(9))
    b = sg.sample_sigma(3, np.random.default_rng(9))
    assert all(np.array_equal(x, y) for x, y in zip(a.sigma, b.sigma))


def test_resolvent_trivial_and_scalar():
    s = sg.SigmaTriple.zeros(1)
    p0 = ModelParams(0.0, N=0)
    R = sg.resolvent(s, p0)
    assert np.allclose(R.matrix, 1) and R.norm() == pytest.approx(1)
    s = sg.SigmaTriple(tuple(np.array([[v]]) for v in (0.4, -0.1, 0.9)))
    p = ModelParams(0.05 + 0.02j, N=0)
    lam = p.lam
    # C(0) = 1 and D(0) = 0 on the single mode
    expect = 1 / (1 - 1j * lam * 1.2)
    assert sg.resolvent(s, p).matrix[0, 0] == pytest.approx(expect, abs=1e-14)


def test_resolvent_outside_cardioid():
    s = sg.SigmaTriple.zeros(3)
    with pytest.raises(DomainError):
        sg.resolvent(s, ModelParams(-0.01, N=1))


@pytest.mark.parametrize("d_weight", [1.0, -1.0])
def test_resolvent_bound_and_residual(rng, d_weight):
    p = ModelParams(0.05, N=1)
    fm = sg.field_model(p)
    assert p.rho * fm.D.max() < 0.5
    bound = sg.resolvent_norm_bound(p.g)
    for _ in range(200):
        R = sg.resolvent(sg.sample_sigma(3, rng), p, d_weight=d_weight)
        assert R.norm() <= bound


def test_resolvent_solves_many_samples():
    p = ModelParams(0.1 * cmath.exp(0.8j), rho=0.25, N=1)
    fm = sg.field_model(p)
    sig = sg.sample_sigma_batch(3, np.random.default_rng(3), 10_000)
    K = np.eye(fm.dim) - fm.u_matrix(sig)
    R = np.linalg.inv(K)
    res = np.linalg.norm(K @ R - np.eye(fm.dim), axis=(1, 2), ord=2)
    assert res.max() < 1e-10


def test_translation_path_bounded(rng):
    p = ModelParams(0.08 * cmath.exp(-1.0j), N=1)
    bound = sg.resolvent_norm_bound(p.g)
    for _ in range(10):
        norms = sg.translation_path_norms(sg.sample_sigma(3, rng), p)
        assert len(norms) == 21 and norms.max() <= bound


def test_interaction_zero_coupling(rng):
    assert sg.interaction_V(sg.sample_sigma(3, rng), ModelParams(0, N=1)) == 0


def test_interaction_scalar_closed_form():
    s = sg.SigmaTriple(tuple(np.array([[v]]) for v in (0.4, -0.1, 0.9)))
    p = ModelParams(0.05, N=0)
    u = 1j * p.lam * 1.2
    E = p.g / 2 * 3  # one mode, three colours
    assert sg.interaction_V(s, p) == pytest.approx(u + cmath.log(1 - u) - E, abs=1e-14)


def test_interaction_power_series(rng):
    p = ModelParams(1e-4, N=1)
    fm = sg.field_model(p)
    s = sg.sample_sigma(3, rng)
    U = fm.u_matrix(s)
    series, P = 0, U.copy()
    for k in range(2, 12):
        P = P @ U
        series -= np.trace(P) / k
    assert sg.interaction_V(s, p) == pytest.approx(series - fm.E, abs=1e-8)


def test_interaction_conjugation(rng):
    s = sg.sample_sigma(3, rng)
    p = ModelParams(0.04, N=1)
    fm = sg.field_model(p)
    V_plus = sg.log2_trace(fm.u_matrix(s, lam=p.lam)) - fm.E
    V_minus = sg.log2_trace(fm.u_matrix(s, lam=-p.lam)) - fm.E
    assert V_minus == pytest.approx(np.conj(V_plus), abs=1e-12)


def test_batched_exp_matches_single(rng):
    p = ModelParams(0.03 + 0.01j, N=1)
    fm = sg.field_model(p)
    sig = sg.sample_sigma_batch(3, rng, 5)
    fast = sg.neg_exp_V_batch(fm, sig)
    for b in range(5):
        s = sg.SigmaTriple(tuple(sig[c, b] for c in range(3)))
        assert fast[b] == pytest.approx(cmath.exp(-sg.interaction_V(s, p)), rel=1e-12)


def test_hubbard_stratonovich():
    assert sg.hubbard_stratonovich_check(0.0, 0.3) < 1e-15
    assert sg.hubbard_stratonovich_check(1.0, 0.3) <= 1e-10
    for g in (0.1 * cmath.exp(1j * a) for a in (-2.5, -1.0, 0.5, 2.0)):
        assert sg.hubbard_stratonovich_check(1.3, cmath.sqrt(g)) <= 1e-10


def test_partition_zero_coupling():
    z = sg.partition_function_mc(ModelParams(0.0, N=1), 50, seed=1)
    assert z.mean == 1 and z.std_error == 0


def test_partition_single_mode_exact():
    # one mode: both representations reduce to a 1-d integral
    g = 0.1
    exact = integrate.quad(lambda x: math.exp(-x - 1.5 * g * x * x + 3 * g * x), 0, np.inf)[0]
    p = ModelParams(g, N=0)
    for est in (sg.partition_function_mc(p, 100_000, 1), sg.tensor_partition_mc(p, 100_000, 2)):
        assert abs(est.mean - exact) < 4 * est.std_error


def test_partition_worker_independent():
    p = ModelParams(0.02, N=1)
    a = sg.partition_function_mc(p, 3000, seed=4, workers=1)
    b = sg.partition_function_mc(p, 3000, seed=4, workers=3)
    assert a == b


def test_representations_agree_small():
    p = ModelParams(0.03, N=1)
    a = sg.partition_function_mc(p, 40_000, seed=10)
    b = sg.tensor_partition_mc(p, 40_000, seed=11)
    assert a.agrees_with(b, 3)
