"""Colored forests, two-level jungles and the BKAR forest formula.

Vertices are labelled 1..n.  A jungle is a Bosonic forest whose edges carry a
colour in {1, 2, 3}, plus Fermionic edges between vertices of distinct
Bosonic blocks, such that the union is still a forest.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np

COLORS = (1, 2, 3)
MAX_EXHAUSTIVE = 7


def _pair(a: int, b: int) -> tuple:
    return (a, b) if a < b else (b, a)


# ---------------------------------------------------------------------------
# connectivity


def blocks_union_find(n: int, edges) -> list[frozenset]:
    parent = list(range(n + 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in edges:
        ra, rb = find(e[0]), find(e[1])
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, set] = {}
    for v in range(1, n + 1):
        groups.setdefault(find(v), set()).add(v)
    return sorted((frozenset(g) for g in groups.values()), key=min)


def blocks_bfs(n: int, edges) -> list[frozenset]:
    adj = {v: [] for v in range(1, n + 1)}
    for e in edges:
        adj[e[0]].append(e[1])
        adj[e[1]].append(e[0])
    seen, out = set(), []
    for v in range(1, n + 1):
        if v in seen:
            continue
        comp, queue = {v}, deque([v])
        while queue:
            x = queue.popleft()
            for y in adj[x]:
                if y not in comp:
                    comp.add(y)
                    queue.append(y)
        seen |= comp
        out.append(frozenset(comp))
    return out


def is_forest(n: int, edges) -> bool:
    distinct = {_pair(e[0], e[1]) for e in edges}
    return len(distinct) == len(edges) and len(blocks_union_find(n, edges)) == n - len(edges)


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class ColoredForest:
    n: int
    edges: tuple = ()

    def __post_init__(self):
        edges = tuple(sorted((*_pair(a, b), c) for a, b, c in self.edges))
        for a, b, c in edges:
            if not (1 <= a < b <= self.n):
                raise ValueError(f"edge ({a},{b}) outside 1..{self.n}")
            if c not in COLORS:
                raise ValueError(f"colour {c} not in {COLORS}")
        if not is_forest(self.n, edges):
            raise ValueError("edges contain a cycle")
        object.__setattr__(self, "edges", edges)

    def blocks(self) -> list[frozenset]:
        return blocks_union_find(self.n, self.edges)


@dataclass(frozen=True)
class Jungle:
    """Bosonic coloured forest plus Fermionic vertex-pair edges.

    ``weights`` maps ("B", a, b) / ("F", a, b) keys to values in [0, 1].
    """

    bosonic: ColoredForest
    fermionic: tuple = ()
    weights: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        ferm = tuple(sorted(_pair(a, b) for a, b in self.fermionic))
        object.__setattr__(self, "fermionic", ferm)
        n = self.bosonic.n
        where = self.block_of()
        for a, b in ferm:
            if not (1 <= a < b <= n):
                raise ValueError(f"fermionic edge ({a},{b}) outside 1..{n}")
            if where[a] == where[b]:
                raise ValueError("fermionic edge inside a bosonic block")
        if not is_forest(n, [e[:2] for e in self.bosonic.edges] + list(ferm)):
            raise ValueError("bosonic and fermionic edges together contain a cycle")
        for k, w in self.weights.items():
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"weight {k} = {w} outside [0, 1]")

    @property
    def n(self) -> int:
        return self.bosonic.n

    @property
    def blocks(self) -> list[frozenset]:
        return self.bosonic.blocks()

    def block_of(self) -> dict:
        return {v: i for i, b in enumerate(self.bosonic.blocks()) for v in b}

    def edge_keys(self) -> list[tuple]:
        return [("B", a, b) for a, b, _ in self.bosonic.edges] + [("F", a, b) for a, b in self.fermionic]

    def is_tree(self) -> bool:
        return len(self.bosonic.edges) + len(self.fermionic) == self.n - 1

    def with_weights(self, weights: dict) -> "Jungle":
        return Jungle(self.bosonic, self.fermionic, dict(weights))


@dataclass(frozen=True)
class CovariancePairing:
    X: np.ndarray
    Y: np.ndarray
    blocks: tuple


# ---------------------------------------------------------------------------
# enumeration


def spanning_forests(n: int, tree_only: bool = False) -> Iterator[tuple]:
    """Uncoloured forests on 1..n by recursive edge inclusion in canonical order."""
    pairs = list(itertools.combinations(range(1, n + 1), 2))

    def rec(i, chosen, parent):
        if tree_only and len(chosen) + (len(pairs) - i) < n - 1:
            return
        if i == len(pairs):
            if not tree_only or len(chosen) == n - 1:
                yield tuple(chosen)
            return
        a, b = pairs[i]
        ra, rb = _root(parent, a), _root(parent, b)
        if ra != rb and (not tree_only or len(chosen) < n - 1):
            p2 = dict(parent)
            p2[max(ra, rb)] = min(ra, rb)
            yield from rec(i + 1, chosen + [(a, b)], p2)
        yield from rec(i + 1, chosen, parent)

    yield from rec(0, [], {})


def _root(parent: dict, x: int) -> int:
    while x in parent:
        x = parent[x]
    return x


def _decorate(shape, n) -> Iterator[Jungle]:
    # every Bosonic colouring / Fermionic choice of one forest shape
    for labels in itertools.product(("F",) + COLORS, repeat=len(shape)):
        bos = tuple((a, b, c) for (a, b), c in zip(shape, labels) if c != "F")
        ferm = tuple(e for e, c in zip(shape, labels) if c == "F")
        yield Jungle(ColoredForest(n, bos), ferm)


def enumerate_jungle_trees(n: int) -> Iterator[Jungle]:
    """Lazily yield every two-level spanning tree on 1..n (n <= 7).

    In a tree a Fermionic edge can never join two vertices of one Bosonic
    block (that would close a cycle), so every decoration of every spanning
    tree is admissible.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > MAX_EXHAUSTIVE:
        raise ValueError(f"exhaustive enumeration limited to n <= {MAX_EXHAUSTIVE}")
    if n == 1:
        yield Jungle(ColoredForest(1))
        return
    for shape in spanning_forests(n, tree_only=True):
        yield from _decorate(shape, n)


def enumerate_jungles(n: int) -> Iterator[Jungle]:
    """All two-level jungles (forests, not only trees) on 1..n."""
    if n > MAX_EXHAUSTIVE:
        raise ValueError(f"exhaustive enumeration limited to n <= {MAX_EXHAUSTIVE}")
    for shape in spanning_forests(n):
        yield from _decorate(shape, n)


def jungle_tree_count(n: int) -> int:
    """Closed form n^(n-2) 4^(n-1)."""
    if n == 1:
        return 1
    return n ** (n - 2) * 4 ** (n - 1)


def count_jungle_trees(n: int) -> int:
    """Count by enumerating shapes and multiplying by the 4^(n-1) decorations."""
    if n == 1:
        return 1
    shapes = sum(1 for _ in spanning_forests(n, tree_only=True))
    return shapes * 4 ** (n - 1)


def jungle_count_table(n: int) -> dict:
    """Counts keyed by (#bosonic edges, #fermionic edges), from the enumeration stream."""
    if n == 1:
        return {(0, 0): 1}
    table = Counter()
    shapes = sum(1 for _ in spanning_forests(n, tree_only=True))
    for k in range(n):
        table[(n - 1 - k, k)] = shapes * math.comb(n - 1, k) * 3 ** (n - 1 - k)
    return dict(table)


def proposition_bound(n: int) -> int:
    return 12 ** n * n ** (n - 2) if n >= 2 else 12


# ---------------------------------------------------------------------------
# BKAR covariances


def _path_min(n: int, edges: list, weights: list, start: int) -> dict:
    """Infimum of weights along the unique forest path from start to every reachable vertex."""
    adj = {v: [] for v in range(n + 1)}
    for (a, b), w in zip(edges, weights):
        adj[a].append((b, w))
        adj[b].append((a, w))
    best = {start: 1.0}
    queue = deque([start])
    while queue:
        x = queue.popleft()
        for y, w in adj[x]:
            if y not in best:
                best[y] = min(best[x], w)
                queue.append(y)
    return best


def forest_paths(n: int, edges: list) -> dict:
    """Edge indices on the forest path between each connected pair (a < b)."""
    adj = {v: [] for v in range(1, n + 1)}
    for i, (a, b) in enumerate(edges):
        adj[a].append((b, i))
        adj[b].append((a, i))
    paths = {}
    for a in range(1, n + 1):
        route = {a: []}
        queue = deque([a])
        while queue:
            x = queue.popleft()
            for y, i in adj[x]:
                if y not in route:
                    route[y] = route[x] + [i]
                    queue.append(y)
        for b, r in route.items():
            if b > a:
                paths[(a, b)] = r
    return paths


def bosonic_x_batch(n: int, edges: list, W: np.ndarray) -> np.ndarray:
    """X for many weight vectors at once; W has shape (S, len(edges))."""
    X = np.zeros((W.shape[0], n, n))
    X[:, np.arange(n), np.arange(n)] = 1.0
    for (a, b), r in forest_paths(n, edges).items():
        X[:, a - 1, b - 1] = X[:, b - 1, a - 1] = W[:, r].min(axis=1)
    return X


def bosonic_x(n: int, edges: list, weights: list) -> np.ndarray:
    X = np.zeros((n, n))
    for a in range(1, n + 1):
        for b, v in _path_min(n, edges, weights, a).items():
            X[a - 1, b - 1] = v
    return X


def bkar_covariance(jungle: Jungle) -> CovariancePairing:
    """X over vertices from Bosonic edges, Y over blocks from Fermionic edges."""
    n = jungle.n
    w = jungle.weights
    bedges = [(a, b) for a, b, _ in jungle.bosonic.edges]
    bw = [w.get(("B", a, b), 1.0) for a, b in bedges]
    X = bosonic_x(n, bedges, bw)
    blocks = jungle.blocks
    where = jungle.block_of()
    fedges = [(where[a] + 1, where[b] + 1) for a, b in jungle.fermionic]
    fw = [w.get(("F", a, b), 1.0) for a, b in jungle.fermionic]
    Y = bosonic_x(len(blocks), fedges, fw)
    return CovariancePairing(X, Y, tuple(blocks))


# ---------------------------------------------------------------------------
# forest formula


@lru_cache(maxsize=16)
def _simplex_rule(k: int, q: int):
    """Nodes/weights for 0 <= u_1 <= ... <= u_k <= 1 (collapsed coordinates)."""
    x, w = np.polynomial.legendre.leggauss(q)
    x, w = 0.5 * (x + 1), 0.5 * w
    if k == 0:
        return np.zeros((1, 0)), np.ones(1)
    grids = np.meshgrid(*([x] * k), indexing="ij")
    wts = np.meshgrid(*([w] * k), indexing="ij")
    a = np.stack([g.ravel() for g in grids], axis=1)
    wt = np.prod(np.stack([g.ravel() for g in wts], axis=1), axis=1)
    u = np.empty_like(a)
    u[:, k - 1] = a[:, k - 1]
    for i in range(k - 2, -1, -1):
        u[:, i] = a[:, i] * u[:, i + 1]
    jac = np.ones(len(a))
    for i in range(1, k):
        jac = jac * a[:, i] ** i
    return u, wt * jac


def cube_rule(k: int, q: int):
    """Rule on [0,1]^k exact between kinks of min(): one simplex per ordering."""
    u, w = _simplex_rule(k, q)
    if k == 0:
        return u, w
    nodes, weights = [], []
    for perm in itertools.permutations(range(k)):
        z = np.empty_like(u)
        z[:, list(perm)] = u
        nodes.append(z)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


@dataclass(frozen=True)
class ExpTestFunction:
    """F = exp(sum_c sum_{a<b} k[c][a,b] x^c_ab + sum_{a<b} m[a,b] y_ab) + poly.

    Colour couplings k have shape (ncolors, n, n) (upper triangle used); ``m``
    couples the second-level variables.  ``poly`` adds a + sum b_ab x_ab (all
    colours summed) for the low-degree polynomial family.
    """

    k: np.ndarray
    m: np.ndarray | None = None
    poly_const: float = 0.0
    poly_lin: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.k.shape[1]

    def exponent(self, X: np.ndarray, Y: np.ndarray | None = None) -> np.ndarray:
        """X, Y of shape (..., n, n)."""
        iu = np.triu_indices(self.n, 1)
        ktot = self.k.sum(axis=0)[iu]
        out = (X[..., iu[0], iu[1]] * ktot).sum(axis=-1)
        if self.m is not None and Y is not None:
            out = out + (Y[..., iu[0], iu[1]] * self.m[iu]).sum(axis=-1)
        return out

    def poly(self, X: np.ndarray) -> np.ndarray:
        iu = np.triu_indices(self.n, 1)
        val = self.poly_const
        if self.poly_lin is not None:
            val = val + (X[..., iu[0], iu[1]] * self.poly_lin[iu]).sum(axis=-1)
        return val

    def value_at_one(self) -> float:
        one = np.ones((self.n, self.n))
        return float(np.exp(self.exponent(one, one if self.m is not None else None)) + self.poly(one))


def random_test_function(n: int, rng: np.random.Generator, colored: bool = False, two_level: bool = False, scale: float = 1.0):
    ncol = 3 if colored else 1
    k = np.triu(rng.uniform(-scale, scale, size=(ncol, n, n)), 1)
    m = np.triu(rng.uniform(-scale, scale, size=(n, n)), 1) if two_level else None
    return ExpTestFunction(k, m)


def _forest_term(f: ExpTestFunction, n: int, edges: list, colors: list, q: int, X=None) -> float:
    """int dw (prod d/dx^{c_l}_l) F at x = X(w), single level."""
    nodes, wts = cube_rule(len(edges), q)
    pref = 1.0
    for (a, b), c in zip(edges, colors):
        pref *= f.k[c, a - 1, b - 1]
    if X is None:
        X = bosonic_x_batch(n, edges, nodes)
    vals = pref * np.exp(f.exponent(X))
    if f.poly_lin is not None or f.poly_const:
        # polynomial part: survives only up to one derivative
        if len(edges) == 0:
            vals = vals + f.poly(X)
        elif len(edges) == 1:
            a, b = edges[0]
            vals = vals + (f.poly_lin[a - 1, b - 1] if f.poly_lin is not None else 0.0)
    return float(np.dot(wts, vals))


def forest_formula_check(n: int, f: ExpTestFunction | None = None, quad_points: int = 12, colored: bool = False,
                         rng: np.random.Generator | None = None) -> float:
    """|F(1) - sum over forests of the interpolated derivative integrals|.

    In the coloured version each forest edge also picks the colour of the
    variable it differentiates; X is colour blind.
    """
    if n < 1 or n > 4:
        raise ValueError("forest formula check supports 1 <= n <= 4")
    if f is None:
        f = random_test_function(n, rng or np.random.default_rng(0), colored)
    if colored and f.k.shape[0] != 3:
        raise ValueError("coloured check needs three colour couplings")
    ncol = f.k.shape[0]
    total = 0.0
    for shape in spanning_forests(n):
        X = bosonic_x_batch(n, list(shape), cube_rule(len(shape), quad_points)[0])
        for cols in itertools.product(range(ncol), repeat=len(shape)):
            total += _forest_term(f, n, list(shape), list(cols), quad_points, X)
    return abs(total - f.value_at_one())


def jungle_formula_check(n: int, f: ExpTestFunction, quad_points: int = 10) -> float:
    """Two-level version: BKAR on x over vertices, then on y over Bosonic blocks.

    The second-level variable between a and b is set to Y of their blocks
    (1 inside a block); a Fermionic edge (d, e) differentiates y_de.
    """
    if n > 4:
        raise ValueError("jungle formula check supports n <= 4")
    total = 0.0
    for jungle in enumerate_jungles(n):
        total += _jungle_term(f, jungle, quad_points)
    return abs(total - f.value_at_one())


def _jungle_term(f: ExpTestFunction, jungle: Jungle, q: int) -> float:
    n = jungle.n
    bedges = [(a, b) for a, b, _ in jungle.bosonic.edges]
    cols = [c - 1 for _, _, c in jungle.bosonic.edges]
    fedges = list(jungle.fermionic)
    pref = 1.0
    for (a, b), c in zip(bedges, cols):
        pref *= f.k[c, a - 1, b - 1]
    for a, b in fedges:
        pref *= f.m[a - 1, b - 1]
    if pref == 0.0:
        return 0.0
    where = jungle.block_of()
    blk = np.array([where[v] for v in range(1, n + 1)])
    nb = len(jungle.blocks)
    fblk = [(where[a] + 1, where[b] + 1) for a, b in fedges]
    kb = len(bedges)
    nodes, wts = cube_rule(kb + len(fedges), q)
    X = bosonic_x_batch(n, bedges, nodes[:, :kb])
    Yb = bosonic_x_batch(nb, fblk, nodes[:, kb:])
    vals = f.exponent(X, Yb[:, blk[:, None], blk[None, :]])
    return float(pref * np.dot(wts, np.exp(vals)))
