import cmath
import itertools

import numpy as np
import pytest

from t34lab import forests as fo
from t34lab import mlve, sigma
from t34lab.mlve import DerivativeSlot
from t34lab.params import DomainError, ModelParams

N1 = ModelParams(0.02, M=2, j_max=1, N=1)
N2 = ModelParams(0.02 * cmath.exp(0.5j), M=2, j_max=2, N=2)


def _random_slots(rng, k, d):
    return [DerivativeSlot(int(rng.integers(3)), int(rng.integers(d)), int(rng.integers(d))) for _ in range(k)]


def test_partition_counts():
    assert [len(mlve.faa_di_bruno_partitions(list(range(k)))) for k in (1, 3, 4)] == [1, 5, 15]
    assert [mlve.bell_number(k) for k in range(7)] == [1, 1, 2, 5, 15, 52, 203]
    for k in range(1, 6):
        parts = mlve.faa_di_bruno_partitions(list(range(k)))
        assert len({tuple(p) for p in parts}) == len(parts)
        for p in parts:
            assert sorted(x for blk in p for x in blk) == list(range(k))
    with pytest.raises(ValueError):
        mlve.faa_di_bruno_partitions(list(range(7)))


def test_every_chain_has_one_slice_factor():
    for k in range(1, 5):
        words = mlve.derivative_chains(k)
        assert words
        for w in words:
            assert w.count("Qd") == 1
            assert sorted(t for t in w if t.startswith("K")) == [f"K{i}" for i in range(k)]


def test_slot_validation():
    with pytest.raises(ValueError):
        DerivativeSlot(3, 0, 0)
    s = sigma.SigmaTriple.zeros(3)
    with pytest.raises(DomainError):
        mlve.dVj(s, 1, [DerivativeSlot(0, 3, 0)], N1)
    with pytest.raises(DomainError):
        mlve.dVj(s, 2, [DerivativeSlot(0, 0, 0)], N1)


def test_zero_coupling():
    s = sigma.sample_sigma(3, np.random.default_rng(0))
    P = ModelParams(0.0, M=2, j_max=1, N=1)
    assert mlve.dVj(s, 1, [DerivativeSlot(0, 0, 1)], P) == 0


@pytest.mark.parametrize("k", [1, 2])
def test_derivative_matches_finite_differences(k, rng):
    for _ in range(6):
        s = sigma.sample_sigma(3, rng)
        slots = _random_slots(rng, k, 3)
        fd = mlve.finite_difference_dVj(s, 1, slots, N1)
        for method in ("integral", "difference"):
            val = mlve.dVj(s, 1, slots, N1, method=method)
            assert abs(val - fd) <= 1e-6 * abs(fd)


def test_derivative_with_lower_slices(rng):
    # slice 2 at N = 2 has a non-empty lower ball
    s = sigma.sample_sigma(5, rng)
    for k in (1, 2):
        slots = _random_slots(rng, k, 5)
        a = mlve.dVj(s, 2, slots, N2)
        b = mlve.dVj(s, 2, slots, N2, method="difference")
        fd = mlve.finite_difference_dVj(s, 2, slots, N2)
        assert abs(a - b) <= 1e-10 * abs(b)
        assert abs(b - fd) <= 1e-5 * abs(fd)


def test_third_derivative_by_nested_differences(rng):
    s = sigma.sample_sigma(3, rng)
    slots = _random_slots(rng, 3, 3)
    h = 1e-4
    last = slots[2]
    up = mlve.dVj(s.perturbed(last.color, last.row, last.col, h), 1, slots[:2], N1, method="difference")
    dn = mlve.dVj(s.perturbed(last.color, last.row, last.col, -h), 1, slots[:2], N1, method="difference")
    val = mlve.dVj(s, 1, slots, N1)
    assert abs((up - dn) / (2 * h) - val) <= 1e-6 * abs(val)


def test_slot_order_invariance(rng):
    s = sigma.sample_sigma(3, rng)
    slots = _random_slots(rng, 3, 3)
    ref = mlve.dVj(s, 1, slots, N1, method="difference")
    for perm in itertools.permutations(slots):
        assert mlve.dVj(s, 1, list(perm), N1, method="difference") == pytest.approx(ref, rel=1e-10)


def test_tensor_route_matches_dense(rng):
    s = sigma.sample_sigma(5, rng)
    fields = mlve._VertexFields(np.stack([x[None] for x in s.sigma]), 2, N2)
    for k in (1, 2, 3):
        slots = _random_slots(rng, k, 5)
        T = mlve.slot_derivative_tensor(fields, tuple(x.color for x in slots))[0]
        idx = tuple(v for x in slots for v in (x.row, x.col))
        ref = mlve.dVj(s, 2, slots, N2, method="difference")
        assert T[idx] == pytest.approx(ref, rel=1e-10)


def test_fermionic_factor_values():
    # two single-vertex blocks joined by a Fermionic edge: int_0^1 (-2w) dw = -1
    jg = fo.Jungle(fo.ColoredForest(2), ((1, 2),))
    assert mlve.fermionic_factor(jg, (1, 1)) == pytest.approx(-1.0)
    assert mlve.fermionic_factor(jg, (1, 2)) == 0.0
    jg = fo.Jungle(fo.ColoredForest(3), ((1, 2), (2, 3)))
    a = mlve.fermionic_factor(jg, (1, 1, 1))
    assert mlve.fermionic_factor(jg, (1, 1, 1), quad_points=12) == pytest.approx(a, abs=1e-13)


def test_single_scale_series_is_log_one_plus_w():
    # at N = 1 only slice 1 is populated; the expansion must reproduce log(1 + E W) term by term
    P = ModelParams(0.01, M=2, j_max=2, N=1)
    res = mlve.log_partition_mlve(P, 3, 20000, 11)
    w = res.per_n[0].mean
    for n, est in enumerate(res.per_n, start=1):
        assert est.mean == pytest.approx((-1) ** (n + 1) * w ** n / n, rel=1e-10)
    assert abs(res.per_n[0].mean) > abs(res.per_n[1].mean) > abs(res.per_n[2].mean)


def test_zero_coupling_log_partition():
    res = mlve.log_partition_mlve(ModelParams(0.0, M=2, j_max=2, N=1), 2, 100, 0)
    assert res.total.mean == 0


def test_single_vertex_term_is_second_order():
    for g in (0.005, 0.01, 0.02):
        P = ModelParams(g, M=2, j_max=1, N=1)
        est = mlve.block_value(mlve.BlockKey.canonical((1,), ()), P, 40000, 2)
        assert abs(est.mean) + 3 * est.std_error <= 100 * g * g
        assert abs(est.mean) >= 20 * g * g


def test_hard_core_term_is_exact_zero():
    jg = fo.Jungle(fo.ColoredForest(2, ((1, 2, 1),)))
    term = mlve.JungleTerm(jg, (1, 1))
    val = mlve.jungle_term_value(term, N2, 10, 0)
    assert val.mean == 0 and val.std_error == 0


def test_partitions_cover_touched_vertices():
    jg = fo.Jungle(fo.ColoredForest(3, ((1, 2, 1), (1, 3, 2))))
    parts = mlve.JungleTerm(jg, (1, 2, 3)).partitions()
    assert len(parts[1]) == 2 and len(parts[2]) == 1 and len(parts[3]) == 1


def test_relabeling_invariance():
    jg = fo.Jungle(fo.ColoredForest(3, ((1, 2, 3),)), ((2, 3),))
    scales = (1, 2, 2)
    cache = mlve.BlockCache(N2, 300, 9)
    ref = mlve.jungle_term_value(mlve.JungleTerm(jg, scales), N2, 300, 9, cache=cache)
    assert ref.std_error > 0
    for perm in itertools.permutations((1, 2, 3)):
        p = {i + 1: perm[i] for i in range(3)}
        bos = tuple((p[a], p[b], c) for a, b, c in jg.bosonic.edges)
        fer = tuple(tuple(sorted((p[a], p[b]))) for a, b in jg.fermionic)
        new = fo.Jungle(fo.ColoredForest(3, bos), fer)
        sc = tuple(scales[perm.index(v)] for v in (1, 2, 3))
        val = mlve.jungle_term_value(mlve.JungleTerm(new, sc), N2, 300, 9, cache=cache)
        assert val.mean == pytest.approx(ref.mean, rel=1e-12)


def test_bosonic_edge_sum_is_covariance():
    # summed over colours, one Bosonic edge between scales 1 and 2 gives Cov(exp(-V_1), exp(-V_2))
    P = ModelParams(0.02, M=2, j_max=2, N=2)
    vals = [mlve.block_value(mlve.BlockKey.canonical((1, 2), ((0, 1, c),)), P, 600, 1) for c in range(3)]
    tot = sum(v.mean for v in vals)
    err = np.sqrt(sum(v.std_error ** 2 for v in vals))
    from t34lab.multiscale import slice_exp_neg_vj_batch

    rng = np.random.default_rng(3)
    sig = sigma.sample_sigma_batch(5, rng, 3000)
    a = slice_exp_neg_vj_batch(sig, 1, P)
    b = slice_exp_neg_vj_batch(sig, 2, P)
    prod = (a - a.mean()) * (b - b.mean())
    cov, cerr = prod.mean(), prod.std() / np.sqrt(len(prod))
    assert abs(tot - cov) <= 3 * np.hypot(err, cerr)
    assert abs(tot) > 5 * err


def test_integration_by_parts():
    P = ModelParams(0.02, M=2, j_max=1, N=1)
    for f in ("one", "entry", "exp"):
        for slot in (DerivativeSlot(0, 0, 1), DerivativeSlot(2, 1, 1)):
            r = mlve.integration_by_parts_check(P, 20000, 3, slot=slot, function=f)
            assert abs(r.mean) <= 3 * r.std_error + 1e-15
