"""Deterministic check suites behind ``t34lab verify``.

Every check records its value next to the tolerance it is held to.  Seeds are
derived from the suite seed, and the report holds no timings, so equal
arguments give byte-identical JSON.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bounds, forests, grassmann, lattice, mlve, multiscale, sigma
from .params import ModelParams

SUITES = ("counterterms", "forests", "grassmann", "multiscale", "derivatives", "bounds")


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.value = float(self.value)
        self.tolerance = float(self.tolerance)


def _rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng([seed, sum(map(ord, tag))])


def _slope_check(name, xs, ys, target, rel=0.1, **detail) -> Check:
    slope = bounds.log_slope(xs, ys)
    return Check(name, abs(slope / target - 1) <= rel, slope, abs(target) * rel, {"target": target, **detail})


def counterterm_checks(seed: int) -> list[Check]:
    out = [
        Check("mass_counterterm_N0", lattice.mass_counterterm(0) == 1.0, lattice.mass_counterterm(0) - 1.0, 0.0),
    ]
    dm1 = lattice.mass_counterterm(1)
    out.append(Check("mass_counterterm_N1", abs(dm1 - 13 / 3) <= 1e-15, dm1 - 13 / 3, 1e-15))
    gap = lattice.mass_counterterm(8192) - lattice.mass_counterterm(4096)
    target = 2 * math.pi * math.log(2)
    out.append(Check("mass_counterterm_doubling", abs(gap / target - 1) <= 1e-3, gap, 1e-3 * target,
                     {"target": target}))
    rng = _rng(seed, "wick")
    worst = 0.0
    for c in (1, 2, 3):
        for _ in range(10):
            T = rng.standard_normal((3, 3, 3)) + 1j * rng.standard_normal((3, 3, 3))
            worst = max(worst, lattice.wick_translation_identity_check(T, c, 1, "half") / np.sum(np.abs(T) ** 4))
    out.append(Check("translation_identity_half", worst <= 1e-10, worst, 1e-10))
    res = lattice.counterterm_identity_residual(ModelParams(0.02, N=2))
    out.append(Check("counterterm_recombination", res <= 1e-12, res, 1e-12))
    return out


def forest_checks(seed: int) -> list[Check]:
    counts = [forests.count_jungle_trees(n) for n in (1, 2, 3)]
    out = [Check("jungle_tree_counts", counts == [1, 4, 48], float(sum(counts)), 0.0, {"counts": counts})]
    ok = all(forests.jungle_tree_count(n) <= forests.proposition_bound(n) for n in range(1, 6))
    out.append(Check("jungle_tree_bound", ok, float(forests.jungle_tree_count(5)), 0.0,
                     {"bound_n5": forests.proposition_bound(5)}))
    rng = _rng(seed, "forest")
    worst = max(forests.forest_formula_check(n, rng=rng) for n in (2, 3))
    out.append(Check("forest_formula_residual", worst <= 1e-8, worst, 1e-8))
    return out


def grassmann_checks(seed: int) -> list[Check]:
    count, worst = grassmann.oracle_sweep(_rng(seed, "grassmann"), n_exhaustive=3, n_random=40)
    out = [Check("minor_formula_vs_exterior", worst <= 1e-12, worst, 1e-12, {"configurations": count})]
    Ys = grassmann.sampled_block_covariances(2000, 5, _rng(seed, "minors"))
    top = grassmann.max_abs_minor(Ys)
    out.append(Check("minor_bound", top <= 1 + 1e-12, top, 1 + 1e-12))
    hc = grassmann.fermionic_block_integral(np.ones((1, 1)), [], (2, 2), [frozenset({1, 2})])
    ora = grassmann.exterior_oracle(np.ones((1, 1)), [], (2, 2), [frozenset({1, 2})])
    out.append(Check("hard_core_zero", hc == 0.0 and ora == 0.0, abs(hc) + abs(ora), 0.0))
    return out


def multiscale_checks(seed: int) -> list[Check]:
    p = ModelParams(0.02, M=2, j_max=3, N=2, cutoff="slice")
    rng = _rng(seed, "slices")
    tele = paths = 0.0
    for _ in range(5):
        s = sigma.sample_sigma(5, rng)
        I = [multiscale.slice_interaction_Vj(s, j, p) for j in (1, 2, 3)]
        D = [multiscale.slice_interaction_Vj(s, j, p, method="difference") for j in (1, 2, 3)]
        paths = max(paths, max(abs(a - b) for a, b in zip(I, D)))
        tele = max(tele, abs(sum(I) - sigma.interaction_V(s, p)))
    return [
        Check("telescoping", tele <= 1e-8, tele, 1e-8),
        Check("integral_vs_difference", paths <= 1e-8, paths, 1e-8),
    ]


def derivative_checks(seed: int) -> list[Check]:
    p = ModelParams(0.02, M=2, j_max=1, N=1)
    rng = _rng(seed, "derivatives")
    out = []
    for k in (1, 2):
        worst = 0.0
        for _ in range(5):
            s = sigma.sample_sigma(3, rng)
            slots = [mlve.DerivativeSlot(int(rng.integers(3)), int(rng.integers(3)), int(rng.integers(3)))
                     for _ in range(k)]
            fd = mlve.finite_difference_dVj(s, 1, slots, p)
            worst = max(worst, abs(mlve.dVj(s, 1, slots, p) - fd) / abs(fd))
        out.append(Check(f"derivative_order{k}_vs_finite_differences", worst <= 1e-6, worst, 1e-6))
    return out


def bounds_checks(seed: int, mc_samples: int = 20000, vj_samples: int = 100) -> list[Check]:
    M = 2
    log_m2 = -2 * math.log(M)
    js = list(range(1, 6))
    golden = bounds.q_bubble(1, 1, 1, 0, 0, M)
    out = [Check("bubble_origin", abs(golden - 22 / 9) <= 1e-14, golden, 1e-14, {"target": 22 / 9})]
    out.append(_slope_check("bubble_decay_slope", js, [bounds.q_bubble(j, j, 1, 0, 0, M) for j in js], log_m2))
    forms = [bounds.q_a_matrix(j, 1.0, M) for j in js]
    tr = np.array([f.trace() for f in forms])
    inc = np.diff(tr)
    bounded = bool((inc > 0).all() and (np.diff(inc) < 0).all() and inc[-1] < 0.1 * tr[-1])
    out.append(Check("vertex_trace_bounded", bounded, float(tr.max()), 0.0, {"trace_over_rho": tr.tolist()}))
    norms = [f.norm() for f in forms]
    out.append(_slope_check("vertex_norm_slope", js, [n / j for n, j in zip(norms, js)], log_m2,
                            norm_over_rho=norms))
    hs = [bounds.hs_domination(j, j, M) for j in js]
    dom = all(op <= h * (1 + 1e-12) for op, h in hs)
    out.append(Check("hilbert_schmidt_domination", dom, max(op / h for op, h in hs), 1.0))
    out.append(_slope_check("hilbert_schmidt_slope", js, [h for _, h in hs], log_m2))
    X = forests.bosonic_x(2, [(1, 2)], [float(_rng(seed, "x").uniform())])
    det, est = bounds.det_bound_check((1, 2), 0.05, X, mc_samples, seed)
    z = abs(est.mean.real - det.value) / est.std_error
    out.append(Check("determinant_vs_monte_carlo", z <= 3.0, z, 3.0,
                     {"det_side": det.value, "mc_mean": est.mean.real, "mc_error": est.std_error, "X01": X[0, 1]}))
    gap = abs(det.trace_A - det.trace_forms)
    out.append(Check("trace_identity", gap <= 1e-12 * det.trace_forms, gap, 1e-12 * det.trace_forms))
    p = ModelParams(0.02, M=M, j_max=3, N=3, cutoff="slice")
    reps = [bounds.vj_bound_sampler(j, p, vj_samples, seed + j) for j in (1, 2, 3)]
    ratios = [r.max_ratio for r in reps]
    stable = max(ratios) <= 2 * ratios[0] and min(r.min_denominator_trace for r in reps) >= 0
    out.append(Check("interaction_bound_stability", stable, max(ratios) / ratios[0], 2.0, {"max_ratio": ratios}))
    return out


_RUNNERS = {
    "counterterms": counterterm_checks,
    "forests": forest_checks,
    "grassmann": grassmann_checks,
    "multiscale": multiscale_checks,
    "derivatives": derivative_checks,
    "bounds": bounds_checks,
}


def run_suite(suite: str, seed: int) -> dict:
    names = SUITES if suite == "all" else (suite,)
    if any(n not in _RUNNERS for n in names):
        raise ValueError(f"unknown suite {suite!r}")
    groups = {n: [asdict(c) for c in _RUNNERS[n](seed)] for n in names}
    passed = all(c["passed"] for g in groups.values() for c in g)
    return {"suite": suite, "seed": seed, "passed": passed, "checks": groups}
