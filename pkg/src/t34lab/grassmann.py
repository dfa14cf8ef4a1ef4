"""Grassmann block integrals as signed sums of minors, with an exterior-algebra oracle.

Vertices a = 1..n carry a scale j_a and sit in a Bosonic block B(a).  The
generators are chi^B_j, chibar^B_j, one pair per (block, scale) label, and the
integrand is

    prod_a dchibar_{g(a)} dchi_{g(a)}  exp(-sum_{ab} chibar_{g(a)} Ybold_ab chi_{g(b)})
        prod_{(a,b) Fermionic} delta_{j_a j_b} (chi_{g(a)} chibar_{g(b)} + chi_{g(b)} chibar_{g(a)})

with g(a) = (B(a), j_a) and Ybold_ab = Y_{B(a) B(b)} delta_{j_a j_b}.  A
repeated label inside one block repeats a differential, which is the
hard-core zero.  The Berezin convention is int dchibar dchi chi chibar = 1, so
that int dchibar dchi exp(-chibar chi) = 1.

Sign convention.  Once all labels are distinct, generators and vertices are
in bijection and the term with the chi's on vertices a_1..a_k and the
chibar's on b_1..b_k equals

    sgn(a) sgn(b) (-1)^(sum a_i + sum b_i) det Ybold[rows without b, cols without a]

where sgn(a) is the sign of the permutation sorting (a_1, ..., a_k) (same for
b).  The oracle below confirms this convention term by term.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

MAX_GENERATORS = 12


def minor(Y, deleted_rows=(), deleted_cols=()) -> float:
    """Determinant of Y with the given rows and columns removed (0-based)."""
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
        raise ValueError("Y must be square")
    rows, cols = list(deleted_rows), list(deleted_cols)
    if len(rows) != len(cols):
        raise ValueError("unbalanced deletion")
    n = Y.shape[0]
    for i in rows + cols:
        if not 0 <= i < n:
            raise IndexError(f"index {i} out of range for size {n}")
    if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
        raise IndexError("repeated deletion index")
    keep_r = [i for i in range(n) if i not in rows]
    keep_c = [i for i in range(n) if i not in cols]
    if not keep_r:
        return 1.0
    return float(np.linalg.det(Y[np.ix_(keep_r, keep_c)]))


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for k in range(i + 1, len(seq)):
            if seq[i] > seq[k]:
                sign = -sign
    return sign


@dataclass(frozen=True)
class GrassmannIntegral:
    Y: np.ndarray
    fermionic_edges: tuple
    scale_assignment: tuple
    value: float


def _block_map(blocks, n: int) -> dict:
    where = {}
    for i, blk in enumerate(blocks):
        for v in blk:
            if v in where:
                raise ValueError(f"vertex {v} in two blocks")
            where[v] = i
    if sorted(where) != list(range(1, n + 1)):
        raise ValueError("blocks must partition the vertices 1..n")
    return where


def vertex_covariance(Y, scale_assignment, blocks) -> np.ndarray:
    """Ybold_ab = Y_{B(a) B(b)} delta_{j_a j_b} over vertices (0-based array)."""
    Y = np.asarray(Y, dtype=float)
    j = list(scale_assignment)
    n = len(j)
    where = _block_map(blocks, n)
    b = np.array([where[a] for a in range(1, n + 1)])
    same = np.equal.outer(j, j)
    return Y[np.ix_(b, b)] * same


def hard_core_violated(scale_assignment, blocks) -> bool:
    j = list(scale_assignment)
    return any(len({j[v - 1] for v in blk}) < len(blk) for blk in blocks)


def orientation_term(Ybold, psi_vertices, psibar_vertices) -> float:
    """Integral of exp(-psibar Ybold psi) prod_i psi_{a_i} psibar_{b_i} (1-based vertices)."""
    a = list(psi_vertices)
    b = list(psibar_vertices)
    if len(set(a)) < len(a) or len(set(b)) < len(b):
        return 0.0
    sign = _perm_sign(a) * _perm_sign(b) * (-1) ** ((sum(a) + sum(b)) % 2)
    return sign * minor(Ybold, [x - 1 for x in b], [x - 1 for x in a])


def fermionic_block_integral(Y, fermionic_edges, scale_assignment, blocks) -> float:
    """Hard-core prefactor times the 2^k-term signed sum of minors."""
    if hard_core_violated(scale_assignment, blocks):
        return 0.0
    j = list(scale_assignment)
    edges = [tuple(e) for e in fermionic_edges]
    if any(j[a - 1] != j[b - 1] for a, b in edges):
        return 0.0
    Yb = vertex_covariance(Y, j, blocks)
    total = 0.0
    for flips in itertools.product((False, True), repeat=len(edges)):
        psi = [b if f else a for (a, b), f in zip(edges, flips)]
        psibar = [a if f else b for (a, b), f in zip(edges, flips)]
        total += orientation_term(Yb, psi, psibar)
    return total


def grassmann_integral(Y, fermionic_edges, scale_assignment, blocks) -> GrassmannIntegral:
    val = fermionic_block_integral(Y, fermionic_edges, scale_assignment, blocks)
    return GrassmannIntegral(np.asarray(Y), tuple(map(tuple, fermionic_edges)), tuple(scale_assignment), val)


# ---------------------------------------------------------------------------
# exterior algebra oracle


class Exterior:
    """Element of a finite Grassmann algebra: {bitmask of generators: coefficient}.

    A bitmask stands for the product of its generators in increasing index order.
    """

    def __init__(self, n_gen: int, terms=None):
        if n_gen > MAX_GENERATORS:
            raise ValueError(f"{n_gen} generators exceed the limit {MAX_GENERATORS}")
        self.n_gen = n_gen
        self.terms = dict(terms or {})

    @classmethod
    def scalar(cls, n_gen: int, c: float = 1.0) -> "Exterior":
        return cls(n_gen, {0: c})

    @classmethod
    def generator(cls, n_gen: int, i: int) -> "Exterior":
        return cls(n_gen, {1 << i: 1.0})

    @staticmethod
    def _mono_sign(p: int, q: int) -> int:
        # sign of reordering (gens of p)(gens of q) into increasing order
        swaps = 0
        while q:
            low = q & -q
            swaps += bin(p & ~(low - 1) & ~low).count("1")
            q ^= low
        return -1 if swaps & 1 else 1

    def __mul__(self, other):
        if not isinstance(other, Exterior):
            return Exterior(self.n_gen, {k: v * other for k, v in self.terms.items()})
        out: dict = {}
        for p, x in self.terms.items():
            for q, y in other.terms.items():
                if p & q:
                    continue
                key = p | q
                out[key] = out.get(key, 0.0) + self._mono_sign(p, q) * x * y
        return Exterior(self.n_gen, {k: v for k, v in out.items() if v != 0})

    __rmul__ = __mul__

    def __add__(self, other):
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0.0) + v
        return Exterior(self.n_gen, out)

    def __neg__(self):
        return self * -1.0

    def berezin(self, i: int) -> "Exterior":
        """Left integration d theta_i: move theta_i to the front and drop it."""
        bit = 1 << i
        out = {}
        for p, x in self.terms.items():
            if p & bit:
                before = bin(p & (bit - 1)).count("1")
                out[p ^ bit] = -x if before & 1 else x
        return Exterior(self.n_gen, out)

    def integrate(self, differentials) -> float:
        """int d theta_{i_1} ... d theta_{i_m} F, innermost (rightmost) first."""
        f = self
        for i in reversed(list(differentials)):
            f = f.berezin(i)
        return float(f.terms.get(0, 0.0))


def exterior_oracle(Y, fermionic_edges, scale_assignment, blocks) -> float:
    """Multiply out the Grassmann integrand literally and integrate it."""
    j = list(scale_assignment)
    n = len(j)
    where = _block_map(blocks, n)
    labels = sorted({(where[a], j[a - 1]) for a in range(1, n + 1)})
    m = len(labels)
    if 2 * m > MAX_GENERATORS:
        raise ValueError(f"{2 * m} generators exceed the limit {MAX_GENERATORS}")
    slot = {lab: i for i, lab in enumerate(labels)}
    g = [slot[(where[a], j[a - 1])] for a in range(1, n + 1)]
    chi = lambda a: Exterior.generator(2 * m, 2 * g[a - 1] + 1)  # noqa: E731
    chibar = lambda a: Exterior.generator(2 * m, 2 * g[a - 1])  # noqa: E731
    Yb = vertex_covariance(Y, j, blocks)
    f = Exterior.scalar(2 * m)
    # exp of a sum of commuting even bilinears, one factor per vertex pair
    for a in range(1, n + 1):
        for b in range(1, n + 1):
            c = Yb[a - 1, b - 1]
            if c == 0:
                continue
            # a bilinear squares to zero, so exp(-c x) = 1 - c x
            f = f * (Exterior.scalar(2 * m) + chibar(a) * chi(b) * (-c))
    for a, b in fermionic_edges:
        if j[a - 1] != j[b - 1]:
            return 0.0
        f = f * (chi(a) * chibar(b) + chi(b) * chibar(a))
    diffs = []
    for a in range(1, n + 1):
        diffs += [2 * g[a - 1], 2 * g[a - 1] + 1]
    return f.integrate(diffs)


# ---------------------------------------------------------------------------
# minor bound on sampled covariances


def balanced_deletions(size: int, max_k: int = 3):
    """All (rows, cols) deletion pairs with k = 0..max_k."""
    for k in range(0, min(max_k, size) + 1):
        for r in itertools.combinations(range(size), k):
            for c in itertools.combinations(range(size), k):
                yield r, c


def max_abs_minor(Ys: np.ndarray, max_k: int = 3) -> float:
    """Largest |minor| over a stack of matrices and all balanced deletions up to max_k."""
    Ys = np.asarray(Ys)
    size = Ys.shape[-1]
    worst = 0.0
    for r, c in balanced_deletions(size, max_k):
        keep_r = [i for i in range(size) if i not in r]
        keep_c = [i for i in range(size) if i not in c]
        if not keep_r:
            worst = max(worst, 1.0)
            continue
        d = np.linalg.det(Ys[..., keep_r, :][..., keep_c])
        worst = max(worst, float(np.max(np.abs(d))))
    return worst


def oracle_sweep(rng: np.random.Generator, n_exhaustive: int = 4, n_random: int = 200):
    """Compare the minor formula with the oracle.

    Every jungle on n <= n_exhaustive vertices is paired with every scale
    assignment (scales 0..2 for n <= 3, 0..1 for n = 4), with BKAR covariances
    at random weights.  Then n_random random configurations on 5 and 6
    vertices cover 10 and 12 generators.  Returns (count, worst residual).
    """
    from . import forests as fo

    count, worst = 0, 0.0

    def one(Y, edges, js, blocks):
        nonlocal count, worst
        o = exterior_oracle(Y, edges, js, blocks)
        m = fermionic_block_integral(Y, edges, js, blocks)
        worst = max(worst, abs(o - m))
        count += 1

    for n in range(1, n_exhaustive + 1):
        n_scales = 3 if n <= 3 else 2
        for jg in fo.enumerate_jungles(n):
            w = {k: rng.uniform() for k in jg.edge_keys()}
            cov = fo.bkar_covariance(jg.with_weights(w))
            for js in itertools.product(range(n_scales), repeat=n):
                one(cov.Y, jg.fermionic, js, cov.blocks)
    for _ in range(n_random):
        n = int(rng.integers(5, 7))
        jg = random_jungle(n, rng)
        cov = fo.bkar_covariance(jg)
        js = tuple(int(x) for x in rng.integers(0, 2, size=n))
        one(cov.Y, jg.fermionic, js, cov.blocks)
    return count, worst


def random_jungle(n: int, rng: np.random.Generator, p_fermionic: float = 0.5):
    """Random jungle tree with uniform weights: random spanning tree, random edge types."""
    from . import forests as fo

    # random labelled tree via a random attachment order
    order = rng.permutation(n) + 1
    edges = [(int(order[i]), int(order[rng.integers(0, i)])) for i in range(1, n)]
    bos, ferm = [], []
    for a, b in edges:
        a, b = min(a, b), max(a, b)
        if rng.uniform() < p_fermionic:
            ferm.append((a, b))
        else:
            bos.append((a, b, int(rng.integers(1, 4))))
    forest = fo.ColoredForest(n, tuple(bos))
    where = {v: i for i, blk in enumerate(forest.blocks()) for v in blk}
    ferm = [e for e in ferm if where[e[0]] != where[e[1]]]
    weights = {("B", a, b): rng.uniform() for a, b, _ in bos}
    weights.update({("F", a, b): rng.uniform() for a, b in ferm})
    return fo.Jungle(forest, tuple(ferm), weights)


def sampled_block_covariances(n_samples: int, n_blocks: int, rng: np.random.Generator) -> np.ndarray:
    """Y matrices from BKAR on random block trees with random weights."""
    from . import forests as fo

    out = np.empty((n_samples, n_blocks, n_blocks))
    per_tree = 100
    for start in range(0, n_samples, per_tree):
        stop = min(start + per_tree, n_samples)
        order = rng.permutation(n_blocks) + 1
        edges = [tuple(sorted((int(order[i]), int(order[rng.integers(0, i)])))) for i in range(1, n_blocks)]
        W = rng.uniform(size=(stop - start, len(edges)))
        out[start:stop] = fo.bosonic_x_batch(n_blocks, edges, W)
    return out
