"""Multiscale loop vertex expansion of log Z at finite cutoff.

Derivatives of -V_j.  Write Q(t) = P(t)^2 for the interpolated cutoff of
slice j, Ucal = i lam C^{1/2} sigma C^{1/2} + lam^2 D on the ball of slice j and

    S(t) = Q (I - Ucal Q)^{-1},   K_s = i lam C^{1/2} Delta_s C^{1/2},

where Delta_s is the unit matrix at the slot's entry in its colour, tensored
with the identity on the other colours.  Then U(t) = P Ucal P and
P R P = S, so the sigma-derivatives of -V_{<=j}(t) are cyclic chains

    d_1 (-V)         = Tr (S - Q) K_1
    d_1 ... d_k (-V) = sum over orders of 2..k of Tr S K_1 S K_tau(2) ... S K_tau(k)

and the derivative of -V_j is the difference of these between t = 1 and
t = 0.  The t-derivative dS/dt = (I + S Ucal) Q' (I + Ucal S) with Q' = 2t 1_j
gives the integral form, in which every chain carries exactly one slice-j
factor Q'.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import mc
from .forests import Jungle, bosonic_x, bosonic_x_batch, cube_rule, enumerate_jungle_trees
from .grassmann import fermionic_block_integral, hard_core_violated
from .multiscale import QuadratureError, _gauss_legendre, _SliceFrame, slice_exp_neg_vj_batch, slice_interaction_Vj
from .params import DomainError, ModelParams
from .sigma import SigmaTriple, _check_dims, _check_inside, field_model, sample_gue

MAX_SLOTS = 6


@dataclass(frozen=True)
class DerivativeSlot:
    """Derivative with respect to sigma^color_{row, col} (all 0-based)."""

    color: int
    row: int
    col: int

    def __post_init__(self):
        if self.color not in (0, 1, 2):
            raise ValueError(f"colour must be 0, 1 or 2, got {self.color}")
        if self.row < 0 or self.col < 0:
            raise ValueError("negative matrix index")


def _check_slots(slots, d: int) -> None:
    for s in slots:
        if s.row >= d or s.col >= d:
            raise DomainError(f"slot {s} outside the cutoff (dimension {d})")


# ---------------------------------------------------------------------------
# Faa di Bruno


def set_partitions(items):
    """All set partitions of a list, each as a list of tuples (blocks in first-element order)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [(first,)] + part
        for i in range(len(part)):
            yield part[:i] + [(first,) + part[i]] + part[i + 1:]


def faa_di_bruno_partitions(slots) -> list:
    """Partitions of the slot positions 0..k-1; their number is the Bell number B_k."""
    k = len(slots)
    if k > MAX_SLOTS:
        raise ValueError(f"at most {MAX_SLOTS} slots")
    return [sorted(tuple(sorted(b)) for b in p) for p in set_partitions(range(k))]


def bell_number(k: int) -> int:
    row = [1]
    for _ in range(k):
        nxt = [row[-1]]
        for x in row:
            nxt.append(nxt[-1] + x)
        row = nxt
    return row[0]


# ---------------------------------------------------------------------------
# symbolic chains of the integral form


def cyclic_orders(k: int) -> list[tuple]:
    """Orders of 0..k-1 with 0 first (one per cyclic class)."""
    return [(0,) + p for p in itertools.permutations(range(1, k))]


_SDOT_WORDS = (("Qd",), ("S", "U", "Qd"), ("Qd", "U", "S"), ("S", "U", "Qd", "U", "S"))


def derivative_chains(k: int) -> list[tuple]:
    """Operator words whose traces, summed, give d/dt of d_1..d_k (-V_{<=j}(t)).

    Each word is a tuple of tokens: "S", "U" (Ucal), "Qd" (= 2t 1_j) and
    "K0".."K{k-1}" (slot insertions).  The trace is taken cyclically.
    """
    if k < 1:
        raise ValueError("need at least one slot")
    words = []
    for order in cyclic_orders(k):
        base = []
        for s in order:
            base.append("S")
            base.append(f"K{s}")
        s_pos = [i for i, tok in enumerate(base) if tok == "S"]
        for p in s_pos:
            for w in _SDOT_WORDS:
                if k == 1 and w == ("Qd",):
                    continue  # cancelled by the -Q term of the first derivative
                words.append(tuple(base[:p]) + w + tuple(base[p + 1:]))
    return words


# ---------------------------------------------------------------------------
# dense per-sigma evaluation


class _BallOperators:
    """Ucal, slice indicators and slot insertions on the ball of slice j."""

    def __init__(self, s: SigmaTriple, j: int, params: ModelParams):
        fm = field_model(params)
        frame = _SliceFrame(s, j, params)
        self.fm = fm
        self.Ucal = frame.u(1.0)
        self.below = frame.below
        self.shell = frame.shell
        self.sc = fm.sqrtC[frame.keep]
        self.index = fm.index[frame.keep]
        self.lam = fm.lam

    def slot(self, slot: DerivativeSlot) -> np.ndarray:
        idx = self.index
        c = slot.color
        others = [x for x in range(3) if x != c]
        same = np.ones((len(idx), len(idx)), dtype=bool)
        for o in others:
            same &= idx[:, o][:, None] == idx[:, o][None, :]
        delta = same & (idx[:, c][:, None] == slot.row) & (idx[:, c][None, :] == slot.col)
        return 1j * self.lam * self.sc[:, None] * delta * self.sc[None, :]

    def S(self, t: float) -> np.ndarray:
        Q = self.below + t * t * self.shell
        n = len(Q)
        return Q[:, None] * np.linalg.inv(np.eye(n) - self.Ucal * Q[None, :])


def _word_trace(word, mats) -> complex:
    out = mats[word[0]]
    for tok in word[1:]:
        out = out @ mats[tok]
    return complex(np.trace(out))


def _chain_value(ops: _BallOperators, K: list, t: float) -> complex:
    """d_1..d_k (-V_{<=j}(t)) from the chain formula."""
    S = ops.S(t)
    k = len(K)
    if k == 1:
        Q = ops.below + t * t * ops.shell
        return complex(np.sum((S - np.diag(Q)) * K[0].T))
    total = 0j
    for order in cyclic_orders(k):
        out = np.eye(len(S))
        for s in order:
            out = out @ S @ K[s]
        total += np.trace(out)
    return total


def _slope_value(ops: _BallOperators, K: list, t: float, words) -> complex:
    mats = {"S": ops.S(t), "U": ops.Ucal, "Qd": np.diag(2 * t * ops.shell)}
    mats.update({f"K{i}": m for i, m in enumerate(K)})
    return sum(_word_trace(w, mats) for w in words)


def dVj(
    s: SigmaTriple,
    j: int,
    slots,
    params: ModelParams,
    method: str = "integral",
    quad_points: int = 12,
    tol: float = 1e-10,
    check: bool = True,
) -> complex:
    """k-fold sigma-derivative of -V_j at s.

    ``integral`` integrates the t-derivative chains (one slice-j factor each)
    over t in [0, 1] by Gauss-Legendre with a node-doubling check;
    ``difference`` evaluates the chains at t = 1 and t = 0.
    """
    _check_inside(params)
    if not 1 <= j <= params.j_max:
        raise DomainError(f"slice {j} outside 1..{params.j_max}")
    slots = list(slots)
    if not slots:
        raise ValueError("need at least one slot")
    if len(slots) > MAX_SLOTS:
        raise ValueError(f"at most {MAX_SLOTS} slots")
    fm = field_model(params)
    _check_dims(s, fm)
    _check_slots(slots, fm.d)
    if fm.lam == 0:
        return 0j
    ops = _BallOperators(s, j, params)
    if not ops.shell.any():
        return 0j
    K = [ops.slot(x) for x in slots]
    if method == "difference":
        return _chain_value(ops, K, 1.0) - _chain_value(ops, K, 0.0)
    if method != "integral":
        raise ValueError(method)
    words = derivative_chains(len(K))

    def integrate(n):
        x, w = _gauss_legendre(n)
        return complex(sum(wk * _slope_value(ops, K, tk, words) for tk, wk in zip(x, w)))

    val = integrate(quad_points)
    if check:
        fine = integrate(2 * quad_points)
        if abs(fine - val) > tol * max(1.0, abs(fine)):
            raise QuadratureError(f"node doubling moved the derivative by {abs(fine - val):.3e}")
        val = fine
    return val


def finite_difference_dVj(s: SigmaTriple, j: int, slots, params: ModelParams, eps: float = 0.2,
                          levels: int = 3) -> complex:
    """Central differences of -V_j (difference form) with a Richardson table; k <= 2.

    Steps eps, eps/2, ... eps/2^(levels-1); the table removes the h^2, h^4, ...
    error terms, so fairly large steps can be used and rounding stays small.
    """
    slots = list(slots)
    if not 1 <= len(slots) <= 2:
        raise ValueError("finite differences implemented for one or two slots")

    def V(shifts):
        t = s
        for slot, e in zip(slots, shifts):
            t = t.perturbed(slot.color, slot.row, slot.col, e)
        return -slice_interaction_Vj(t, j, params, method="difference")

    def central(h):
        if len(slots) == 1:
            return (V([h]) - V([-h])) / (2 * h)
        return (V([h, h]) - V([h, -h]) - V([-h, h]) + V([-h, -h])) / (4 * h * h)

    table = [central(eps / 2 ** i) for i in range(levels)]
    for order in range(1, levels):
        f = 4 ** order
        table = [(f * table[i + 1] - table[i]) / (f - 1) for i in range(len(table) - 1)]
    return table[0]


# ---------------------------------------------------------------------------
# batched slot tensors


class _VertexFields:
    """G(t) = C^{1/2} S(t) C^{1/2} at t = 1 and t = 0 for a batch, on the full cube."""

    def __init__(self, sig: np.ndarray, j: int, params: ModelParams):
        fm = field_model(params)
        frame = _SliceFrame(sig, j, params)
        d = fm.d
        B = sig.shape[1]
        U = frame.u(1.0)
        n = U.shape[-1]
        sc = fm.sqrtC[frame.keep]
        cube = fm.active[frame.keep]
        S1 = np.linalg.inv(np.eye(n) - U)
        G1 = np.zeros((B, d ** 3, d ** 3), dtype=complex)
        G1[:, cube[:, None], cube[None, :]] = sc[:, None] * S1 * sc[None, :]
        G0 = np.zeros_like(G1)
        q = np.flatnonzero(frame.below)
        if len(q):
            S0 = np.linalg.inv(np.eye(len(q)) - U[:, q[:, None], q[None, :]])
            cq = cube[q]
            G0[:, cq[:, None], cq[None, :]] = sc[q, None] * S0 * sc[None, q]
        C1 = np.zeros(d ** 3)
        C1[cube] = sc * sc
        C0 = np.zeros(d ** 3)
        C0[cube[q]] = sc[q] ** 2
        shape = (B,) + (d,) * 6
        self.G = {1: G1.reshape(shape), 0: G0.reshape(shape)}
        idx = np.arange(d ** 3)
        G1c, G0c = G1.copy(), G0.copy()
        G1c[:, idx, idx] -= C1
        G0c[:, idx, idx] -= C0
        self.G_first = {1: G1c.reshape(shape), 0: G0c.reshape(shape)}
        self.exp_neg_V = slice_exp_neg_vj_batch(sig, j, params)
        self.lam = fm.lam
        self.d = d


_LETTERS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXY"


def _chain_tensor(G: np.ndarray, colours: tuple, order: tuple) -> np.ndarray:
    """Tr G D_o1 G D_o2 ... as a tensor (B, m_0, n_0, m_1, n_1, ...) in slot order."""
    k = len(colours)
    it = iter(_LETTERS[1:])
    x = [[next(it) for _ in range(3)] for _ in range(k)]
    m = [next(it) for _ in range(k)]
    n = [None] * k
    y = []
    for p, s in enumerate(order):
        n[s] = x[p][colours[s]]
        yp = list(x[p])
        yp[colours[s]] = m[s]
        y.append(yp)
    ops = []
    for p in range(k):
        ops.append("a" + "".join(x[p - 1]) + "".join(y[p]))
    out = "a" + "".join(m[s] + n[s] for s in range(k))
    return np.einsum(",".join(ops) + "->" + out, *([G] * k), optimize=True)


def slot_derivative_tensor(fields: _VertexFields, colours: tuple) -> np.ndarray:
    """All entries of d_1..d_k (-V_j) for the given slot colours, shape (B, d, d, ..)."""
    k = len(colours)
    pref = (1j * fields.lam) ** k
    if k == 1:
        return pref * (_chain_tensor(fields.G_first[1], colours, (0,)) - _chain_tensor(fields.G_first[0], colours, (0,)))
    out = 0
    for order in cyclic_orders(k):
        out = out + _chain_tensor(fields.G[1], colours, order) - _chain_tensor(fields.G[0], colours, order)
    return pref * out


def _vertex_tensor(fields: _VertexFields, colours: tuple) -> np.ndarray:
    """exp(-V) times the Faa di Bruno sum over partitions of the slots."""
    k = len(colours)
    cache = {}
    total = 0
    for part in faa_di_bruno_partitions(list(range(k))):
        ops, subs = [], []
        for blk in part:
            if blk not in cache:
                cache[blk] = slot_derivative_tensor(fields, tuple(colours[i] for i in blk))
            ops.append(cache[blk])
            subs.append("a" + "".join(_LETTERS[1 + 2 * i] + _LETTERS[2 + 2 * i] for i in blk))
        out = "a" + "".join(_LETTERS[1 + 2 * i] + _LETTERS[2 + 2 * i] for i in range(k))
        total = total + np.einsum(",".join(subs) + "->" + out, *ops)
    factor = fields.exp_neg_V
    return factor.reshape((-1,) + (1,) * (2 * k)) * total


# ---------------------------------------------------------------------------
# Bosonic blocks


@dataclass(frozen=True)
class BlockKey:
    """Bosonic block in canonical local labels 0..m-1: scales and coloured tree edges."""

    scales: tuple
    edges: tuple  # (a, b, colour 0..2) with a < b

    @classmethod
    def canonical(cls, scales: tuple, edges: tuple) -> "BlockKey":
        m = len(scales)
        best = None
        for perm in itertools.permutations(range(m)):
            sc = tuple(scales[perm.index(i)] for i in range(m))
            ed = tuple(sorted((min(perm[a], perm[b]), max(perm[a], perm[b]), c) for a, b, c in edges))
            cand = (sc, ed)
            if best is None or cand < best:
                best = cand
        return cls(*best)

    def seed(self, base: int) -> int:
        h = hashlib.sha256(repr((base, self.scales, self.edges)).encode()).hexdigest()
        return int(h[:15], 16)


def _psd_factor(X: np.ndarray) -> np.ndarray:
    """Symmetric factor L with L L^T = X, negative eigenvalues clipped to zero."""
    ev, vec = np.linalg.eigh(X)
    return vec * np.sqrt(np.clip(ev, 0, None))[..., None, :]


def _block_sampler(key: BlockKey, params: ModelParams):
    fm = field_model(params)
    d = fm.d
    m = len(key.scales)
    edges = [(a + 1, b + 1) for a, b, _ in key.edges]
    incident = [[e for e, (a, b, _) in enumerate(key.edges) if v in (a, b)] for v in range(m)]

    def sampler(rng, k):
        xi = np.stack([np.stack([sample_gue(d, rng, (k,)) for _ in range(3)]) for _ in range(m)])  # (m, 3, k, d, d)
        if m == 1:
            return slice_exp_neg_vj_batch(xi[0], key.scales[0], params) - 1.0
        w = rng.uniform(size=(k, len(edges)))
        L = _psd_factor(bosonic_x_batch(m, edges, w))  # (k, m, m)
        sig = np.einsum("kab,bckxy->ackxy", L, xi)
        tensors, subs = [], []
        for v in range(m):
            fields = _VertexFields(sig[v], key.scales[v], params)
            cols = tuple(key.edges[e][2] for e in incident[v])
            tensors.append(_vertex_tensor(fields, cols))
            letters = ""
            for e in incident[v]:
                p, q = _LETTERS[1 + 2 * e], _LETTERS[2 + 2 * e]
                # edge contraction sum_{pq} d/d sigma^a_{pq} d/d sigma^b_{qp}
                letters += p + q if key.edges[e][0] == v else q + p
            subs.append("a" + letters)
        return np.einsum(",".join(subs) + "->a", *tensors, optimize=True)

    return sampler


def block_is_zero(key: BlockKey, params: ModelParams) -> bool:
    """Exact zeros: hard core inside the block, or an empty slice at some vertex."""
    if len(set(key.scales)) < len(key.scales):
        return True
    lat = field_model(params).lattice
    fm = field_model(params)
    return any(not lat.slice(j)[fm.active].any() for j in key.scales)


def block_value(key: BlockKey, params: ModelParams, n_samples: int, seed: int, workers: int = 1) -> mc.McEstimate:
    """int dw int dnu_X prod_edges (d.d) prod_a W_{j_a}(sigma^a) for one Bosonic block."""
    if block_is_zero(key, params) or field_model(params).lam == 0:
        return mc.exact(0.0, seed)
    chunk = 1024 if field_model(params).d <= 3 else 128
    return mc.run(_block_sampler(key, params), n_samples, key.seed(seed), workers, chunk=chunk)


# ---------------------------------------------------------------------------
# Fermionic factor


def fermionic_factor(jungle: Jungle, scales, quad_points: int | None = None) -> float:
    """int dw_F of the Grassmann block integral, exact piecewise-polynomial quadrature."""
    blocks = jungle.blocks
    if hard_core_violated(scales, blocks):
        return 0.0
    if any(scales[a - 1] != scales[b - 1] for a, b in jungle.fermionic):
        return 0.0
    nb = len(blocks)
    where = jungle.block_of()
    fedges = [(where[a] + 1, where[b] + 1) for a, b in jungle.fermionic]
    k = len(fedges)
    if k == 0:
        return fermionic_block_integral(np.eye(nb), [], scales, blocks)
    q = quad_points or (jungle.n + 2)
    nodes, wts = cube_rule(k, q)
    total = 0.0
    for x, wt in zip(nodes, wts):
        Y = bosonic_x(nb, fedges, list(x))
        total += wt * fermionic_block_integral(Y, jungle.fermionic, scales, blocks)
    return total


# ---------------------------------------------------------------------------
# jungle terms and log Z


@dataclass(frozen=True)
class JungleTerm:
    jungle: Jungle
    scales: tuple

    def block_keys(self) -> list[BlockKey]:
        keys = []
        for blk in self.jungle.blocks:
            verts = sorted(blk)
            local = {v: i for i, v in enumerate(verts)}
            edges = tuple(
                (min(local[a], local[b]), max(local[a], local[b]), c - 1)
                for a, b, c in self.jungle.bosonic.edges
                if a in local
            )
            keys.append(BlockKey.canonical(tuple(self.scales[v - 1] for v in verts), edges))
        return keys

    def partitions(self) -> dict:
        """Faa di Bruno partitions of each vertex's slots (empty for isolated vertices)."""
        out = {}
        for v in range(1, self.jungle.n + 1):
            deg = sum(v in (a, b) for a, b, _ in self.jungle.bosonic.edges)
            out[v] = faa_di_bruno_partitions(list(range(deg))) if deg else []
        return out


class _Polynomial:
    """Sum of coefficient x product of block estimates, with delta-method errors."""

    def __init__(self):
        self.terms: dict = {}

    def add(self, coef: complex, keys) -> None:
        mono = tuple(sorted(keys, key=repr))
        self.terms[mono] = self.terms.get(mono, 0) + coef

    def evaluate(self, values: dict) -> tuple[complex, float]:
        mean = 0j
        grad: dict = {}
        for mono, coef in self.terms.items():
            prod = coef
            for k in mono:
                prod *= values[k].mean
            mean += prod
            for i, k in enumerate(mono):
                rest = coef
                for i2, k2 in enumerate(mono):
                    if i2 != i:
                        rest *= values[k2].mean
                grad[k] = grad.get(k, 0) + rest
        var = sum(abs(gv) ** 2 * values[k].std_error ** 2 for k, gv in grad.items())
        return mean, math.sqrt(var)


class BlockCache:
    def __init__(self, params: ModelParams, n_samples: int, seed: int, workers: int = 1):
        self.params, self.n_samples, self.seed, self.workers = params, n_samples, seed, workers
        self.values: dict = {}

    def get(self, key: BlockKey) -> mc.McEstimate:
        if key not in self.values:
            self.values[key] = block_value(key, self.params, self.n_samples, self.seed, self.workers)
        return self.values[key]


def _term_polynomial(term: JungleTerm, params: ModelParams, cache: BlockCache, poly: _Polynomial, coef: float) -> None:
    keys = term.block_keys()
    if any(block_is_zero(k, params) for k in keys):
        return
    fermi = fermionic_factor(term.jungle, term.scales)
    if fermi == 0:
        return
    for k in keys:
        if cache.get(k).mean == 0 and cache.get(k).std_error == 0:
            return
    poly.add(coef * fermi, keys)


def jungle_term_value(term: JungleTerm, params: ModelParams, n_samples: int, seed: int, workers: int = 1,
                      cache: BlockCache | None = None) -> mc.McEstimate:
    """int dw int dnu d_J [prod_B prod_a W_{j_a} chi chibar] for one jungle and scale assignment."""
    _check_inside(params)
    if hard_core_violated(term.scales, term.jungle.blocks):
        return mc.exact(0.0, seed)
    cache = cache or BlockCache(params, n_samples, seed, workers)
    poly = _Polynomial()
    _term_polynomial(term, params, cache, poly, 1.0)
    if not poly.terms:
        return mc.exact(0.0, seed)
    mean, err = poly.evaluate(cache.values)
    return mc.McEstimate(complex(mean), err, n_samples, seed)


@dataclass
class MlveResult:
    per_n: list
    total: mc.McEstimate
    n_blocks: int = 0
    term_counts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_n_partial_sums": [e.to_dict() for e in self.per_n],
            "total": self.total.to_dict(),
            "n_blocks": self.n_blocks,
            "term_counts": self.term_counts,
        }


def log_partition_mlve(params: ModelParams, n_max: int, n_samples: int, seed: int, workers: int = 1) -> MlveResult:
    """Sum of (1/n!) over jungle trees and scale assignments for n <= n_max.

    Bosonic block integrals are Monte-Carlo estimates shared between all the
    terms they appear in; errors are propagated to first order through the
    resulting polynomial.
    """
    _check_inside(params)
    if not 1 <= n_max <= 4:
        raise DomainError("n_max must lie in 1..4 at desk scale")
    cache = BlockCache(params, n_samples, seed, workers)
    polys, counts = [], []
    scales_range = range(1, params.j_max + 1)
    for n in range(1, n_max + 1):
        poly = _Polynomial()
        count = 0
        coef = 1.0 / math.factorial(n)
        for jg in enumerate_jungle_trees(n):
            for scales in itertools.product(scales_range, repeat=n):
                if hard_core_violated(scales, jg.blocks):
                    continue
                count += 1
                _term_polynomial(JungleTerm(jg, scales), params, cache, poly, coef)
        polys.append(poly)
        counts.append(count)
    per_n = []
    for poly in polys:
        mean, err = poly.evaluate(cache.values)
        per_n.append(mc.McEstimate(complex(mean), err, n_samples, seed))
    total = _Polynomial()
    for poly in polys:
        for mono, c in poly.terms.items():
            total.add(c, mono)
    mean, err = total.evaluate(cache.values)
    return MlveResult(per_n, mc.McEstimate(complex(mean), err, n_samples, seed), len(cache.values), counts)


# ---------------------------------------------------------------------------
# Gaussian integration by parts


def integration_by_parts_check(params: ModelParams, n_samples: int, seed: int, j: int = 1,
                               slot: DerivativeSlot | None = None, function: str = "exp") -> mc.McEstimate:
    """Paired estimate of E[sigma_{mn} F] - E[d F / d sigma_{nm}].

    ``function`` is "exp" (F = exp(-V_j)), "one" (F = 1) or "entry" (F = sigma_{nm}).
    """
    _check_inside(params)
    fm = field_model(params)
    d = fm.d
    slot = slot or DerivativeSlot(0, 0, min(1, d - 1))
    _check_slots([slot], d)
    c, m, n = slot.color, slot.row, slot.col

    def sampler(rng, k):
        sig = np.stack([sample_gue(d, rng, (k,)) for _ in range(3)])
        x = sig[c][:, m, n]
        if function == "one":
            return x
        if function == "entry":
            return x * sig[c][:, n, m] - 1.0
        if function != "exp":
            raise ValueError(function)
        fields = _VertexFields(sig, j, params)
        F = fields.exp_neg_V
        dF = F * slot_derivative_tensor(fields, (c,))[:, n, m]
        # E[sigma_mn] = 0 exactly, so sigma_mn (F - 1) carries the same mean with far less noise
        return x * (F - 1.0) - dF

    return mc.run(sampler, n_samples, seed, chunk=512)
