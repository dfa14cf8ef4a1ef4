"""Numerical checks of the analytic estimates used for the Bosonic integration.

Bubbles
    ``bubble(j, k, 1)(m, n) = sum_{p in Z^2} C_k(m, p) C_j(n, p)`` and
    ``bubble(j, k, 2)(m, m') = sum_{m3} C_k(m, m', m3) C_j(m, m', m3)``, with
    ``C_j`` the propagator restricted to slice j.

Quadratic form of one vertex
    ``<sigma, Q sigma> = 2 rho int_0^1 dt Tr(C_{<=j}(t) sigma C_j sigma)`` with
    ``C_{<=j}(t) = C_{<j} + t C_j``.  Written on the single-colour entries
    ``sigma^c_{mn}`` it has a colour-diagonal part, weight ``pair(m, n)`` on
    ``|sigma^c_{mn}|^2``, and a part coupling the diagonal entries of two
    different colours with weight ``diag(m, m')``.

Gaussian identity
    For replicas ``sigma^a`` with covariance ``X_ab`` between vertices, the
    Gaussian average of ``exp(sum_a <sigma^a, Q^a sigma^a>)`` equals
    ``det(1 - A)^{-1/2}`` with ``A = (X x 1) Q_real``.  ``Q_real`` is the form in
    the real coordinates of unit variance (diagonal entries, sqrt 2 Re and
    sqrt 2 Im of the upper entries), normalised by
    ``<sigma, Q sigma> = v^T Q_real v / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import mc
from .multiscale import slice_vj_batch
from .params import DomainError, ModelParams, ball_radius
from .sigma import _check_inside, field_model, sample_sigma_batch


# ---------------------------------------------------------------------------
# bubbles


def _check_slice(j: int) -> None:
    if j < 1:
        raise DomainError("slice index starts at 1")


def slice_propagator_cube(j: int, M: int, radius: int) -> np.ndarray:
    """C_j on the cube [-radius, radius]^3 (zero outside slice j)."""
    _check_slice(j)
    ax = np.arange(-radius, radius + 1)
    q = 1 + ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2
    inside = q <= M ** (2 * j)
    if j > 1:
        inside &= q > M ** (2 * (j - 1))
    return np.where(inside, 1.0 / q, 0.0)


def q_bubble(j: int, k: int, kind: int, m: int, n: int, M: int) -> float:
    """One entry of the two-propagator bubble, summed term by term."""
    _check_slice(j)
    _check_slice(k)
    if kind not in (1, 2):
        raise ValueError("kind must be 1 or 2")

    def prop(s, x):
        q = 1 + sum(c * c for c in x)
        lo = M ** (2 * (s - 1)) if s > 1 else 0
        return 1.0 / q if lo < q <= M ** (2 * s) else 0.0

    r = ball_radius(M, max(j, k))
    rng = range(-r, r + 1)
    if kind == 1:
        terms = [prop(k, (m, a, b)) * prop(j, (n, a, b)) for a in rng for b in rng]
    else:
        terms = [prop(k, (m, n, a)) * prop(j, (m, n, a)) for a in rng]
    return math.fsum(terms)


@dataclass(frozen=True)
class QForm:
    """Bubble matrix over single-colour indices m, n in [-radius, radius]."""

    j: int
    k: int
    kind: int
    M: int
    radius: int
    matrix: np.ndarray

    def entry(self, m: int, n: int) -> float:
        return float(self.matrix[m + self.radius, n + self.radius])


def q_form(j: int, k: int, kind: int, M: int, radius: int | None = None) -> QForm:
    _check_slice(j)
    _check_slice(k)
    if kind not in (1, 2):
        raise ValueError("kind must be 1 or 2")
    r = ball_radius(M, max(j, k)) if radius is None else radius
    d = 2 * r + 1
    Cj = slice_propagator_cube(j, M, r)
    Ck = slice_propagator_cube(k, M, r)
    if kind == 1:
        mat = Ck.reshape(d, -1) @ Cj.reshape(d, -1).T
    else:
        mat = (Ck * Cj).sum(axis=-1)
    return QForm(j, k, kind, M, r, mat)


def hs_domination(j: int, k: int, M: int) -> tuple[float, float]:
    """(operator norm, Hilbert-Schmidt norm) of the kind-2 bubble matrix."""
    mat = q_form(j, k, 2, M).matrix
    return float(np.linalg.norm(mat, 2)), float(np.linalg.norm(mat))


def log_slope(xs, ys) -> float:
    """Least-squares slope of log(ys) against xs."""
    return float(np.polyfit(np.asarray(xs, float), np.log(np.asarray(ys, float)), 1)[0])


# ---------------------------------------------------------------------------
# the form of one vertex


@lru_cache(maxsize=32)
def _vertex_weights(j: int, M: int, radius: int, quad_points: int):
    d = 2 * radius + 1
    Cj = slice_propagator_cube(j, M, radius)
    lower = sum((slice_propagator_cube(k, M, radius) for k in range(1, j)), np.zeros_like(Cj))
    ts, ws = np.polynomial.legendre.leggauss(quad_points)
    ts, ws = 0.5 * (ts + 1), 0.5 * ws
    pair = np.zeros((d, d))
    diag = np.zeros((d, d))
    for t, w in zip(ts, ws):
        le = lower + t * Cj
        pair += w * (le.reshape(d, -1) @ Cj.reshape(d, -1).T)
        diag += w * (le * Cj).sum(axis=-1)
    return pair, diag


@dataclass(frozen=True)
class VertexForm:
    """The quadratic form of a vertex of scale j, on colour dimension 2 radius + 1."""

    j: int
    rho: float
    M: int
    radius: int
    pair: np.ndarray
    diag: np.ndarray

    @property
    def d(self) -> int:
        return 2 * self.radius + 1

    def dense(self) -> np.ndarray:
        """Matrix over the entries (c, m, n), flattened in C order."""
        d = self.d
        Q = np.zeros((3, d, d, 3, d, d))
        m, n = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
        for c in range(3):
            Q[c, m, n, c, m, n] = self.pair
            for c2 in range(3):
                if c2 != c:
                    Q[c, m, m, c2, n, n] = self.diag
        return Q.reshape(3 * d * d, 3 * d * d)

    def diagonal_block(self) -> np.ndarray:
        """Restriction to the diagonal entries sigma^c_{mm}, ordered (c, m)."""
        d = self.d
        B = np.kron(np.ones((3, 3)) - np.eye(3), self.diag)
        B[np.arange(3 * d), np.arange(3 * d)] = np.tile(np.diag(self.pair), 3)
        return B

    def trace(self) -> float:
        return 3.0 * float(self.pair.sum())

    def norm(self) -> float:
        off = self.pair - np.diag(np.diag(self.pair))
        top = np.linalg.eigvalsh(self.diagonal_block())[-1]
        return float(max(off.max(initial=0.0), top))

    def quadratic(self, sig: np.ndarray) -> np.ndarray:
        """<sigma, Q sigma> for sigma of shape (3, ..., d, d)."""
        val = np.einsum("mn,c...mn->...", self.pair, np.abs(sig) ** 2)
        dg = np.diagonal(sig, axis1=-2, axis2=-1).real
        for c in range(3):
            for c2 in range(3):
                if c2 != c:
                    val = val + np.einsum("...m,mn,...n->...", dg[c], self.diag, dg[c2])
        return val

    # real coordinates ---------------------------------------------------

    def upper_weights(self) -> np.ndarray:
        """Real-form eigenvalue of each upper pair m < n (shared by Re, Im and colours)."""
        iu = np.triu_indices(self.d, 1)
        return (self.pair + self.pair.T)[iu]

    def real_matrix(self) -> np.ndarray:
        """Q_real over per colour [diagonal entries, Re upper, Im upper]."""
        d = self.d
        u = self.upper_weights()
        per = d + 2 * len(u)
        Q = np.zeros((3 * per, 3 * per))
        Bd = 2 * self.diagonal_block()
        for c in range(3):
            for c2 in range(3):
                Q[c * per: c * per + d, c2 * per: c2 * per + d] = Bd[c * d:(c + 1) * d, c2 * d:(c2 + 1) * d]
            idx = c * per + d + np.arange(2 * len(u))
            Q[idx, idx] = np.tile(u, 2)
        return Q

    def real_trace(self) -> float:
        return 2.0 * self.trace()


def q_a_matrix(j_a: int, rho: float, M: int, radius: int | None = None, quad_points: int = 4) -> VertexForm:
    """Quadratic form of a vertex of scale j_a, including the slices below it."""
    _check_slice(j_a)
    if rho < 0:
        raise DomainError("rho must be nonnegative")
    r = ball_radius(M, j_a) if radius is None else radius
    if r < ball_radius(M, j_a):
        raise DomainError("radius too small for the slice")
    pair, diag = _vertex_weights(j_a, M, r, quad_points)
    scale = 2.0 * rho
    return VertexForm(j_a, rho, M, r, scale * pair, scale * diag)


def real_coordinates(sig: np.ndarray) -> np.ndarray:
    """Unit-variance real coordinates of Hermitian sigma (3, ..., d, d), matching real_matrix."""
    d = sig.shape[-1]
    iu = np.triu_indices(d, 1)
    parts = []
    for c in range(3):
        s = sig[c]
        up = s[..., iu[0], iu[1]]
        parts += [np.diagonal(s, axis1=-2, axis2=-1).real, math.sqrt(2) * up.real, math.sqrt(2) * up.imag]
    return np.concatenate(parts, axis=-1)


def from_real_coordinates(v: np.ndarray, d: int) -> np.ndarray:
    """Inverse of real_coordinates; returns shape (3, ..., d, d)."""
    iu = np.triu_indices(d, 1)
    nu = len(iu[0])
    per = d + 2 * nu
    out = np.zeros((3,) + v.shape[:-1] + (d, d), dtype=complex)
    for c in range(3):
        blk = v[..., c * per:(c + 1) * per]
        up = (blk[..., d:d + nu] + 1j * blk[..., d + nu:]) / math.sqrt(2)
        out[c][..., iu[0], iu[1]] = up
        out[c][..., iu[1], iu[0]] = np.conj(up)
        out[c][..., np.arange(d), np.arange(d)] = blk[..., :d]
    return out


# ---------------------------------------------------------------------------
# the Gaussian determinant identity


def _vertex_forms(scales, rho: float, M: int) -> list[VertexForm]:
    scales = tuple(int(s) for s in scales)
    if len(set(scales)) != len(scales):
        raise DomainError("scales in a block must be distinct")
    r = ball_radius(M, max(scales))
    return [q_a_matrix(j, rho, M, radius=r) for j in scales]


def _check_x(X: np.ndarray, n: int) -> np.ndarray:
    X = np.asarray(X, float)
    if X.shape != (n, n) or not np.allclose(X, X.T) or not np.allclose(np.diag(X), 1.0):
        raise ValueError("X must be symmetric with unit diagonal")
    if np.linalg.eigvalsh(X)[0] < -1e-12:
        raise ValueError("X must be positive semidefinite")
    return X


@dataclass(frozen=True)
class DetSide:
    log_value: float  # log det(1 - A)^{-1/2}
    norm_A: float
    trace_A: float
    trace_forms: float  # sum_a Tr Q_real^a

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def det_side(scales, rho: float, X, M: int = 2) -> DetSide:
    """det(1 - A)^{-1/2} using the block structure of the forms.

    Upper entries decouple into |B| x |B| problems ``X diag(u_a)`` (six copies
    each: three colours, real and imaginary part); the diagonal entries give one
    matrix ``(X x 1) blockdiag(2 B_a)``.  Log-determinants use LU with pivoting.
    """
    forms = _vertex_forms(scales, rho, M)
    nb = len(forms)
    X = _check_x(X, nb)
    U = np.stack([f.upper_weights() for f in forms], axis=1)  # (pairs, |B|)
    A_up = X[None, :, :] * U[:, None, :]
    B = [2 * f.diagonal_block() for f in forms]
    k = B[0].shape[0]
    A_dg = np.kron(X, np.eye(k)) @ _block_diag(B)
    norm = max(np.linalg.norm(A_dg, 2), np.linalg.norm(A_up, 2, axis=(1, 2)).max(initial=0.0))
    if norm >= 1.0:
        raise DomainError(f"||A|| = {norm:.4f} >= 1")
    s_up, l_up = np.linalg.slogdet(np.eye(nb) - A_up)
    s_dg, l_dg = np.linalg.slogdet(np.eye(len(A_dg)) - A_dg)
    if (s_up <= 0).any() or s_dg <= 0:
        raise DomainError("1 - A is not positive")
    logdet = 6 * l_up.sum() + l_dg
    trace_A = 6 * np.trace(A_up, axis1=1, axis2=2).sum() + np.trace(A_dg)
    return DetSide(-0.5 * float(logdet), float(norm), float(trace_A), math.fsum(f.real_trace() for f in forms))


def _block_diag(blocks) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i:i + k, i:i + k] = b
        i += k
    return out


def dense_a_matrix(scales, rho: float, X, M: int = 2) -> np.ndarray:
    """A = (X x 1) blockdiag(Q_real^a) assembled in full (tiny dims only)."""
    forms = _vertex_forms(scales, rho, M)
    X = _check_x(X, len(forms))
    Qs = [f.real_matrix() for f in forms]
    return np.kron(X, np.eye(Qs[0].shape[0])) @ _block_diag(Qs)


def _psd_root(X: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(X)
    return V * np.sqrt(np.clip(w, 0.0, None))


def gaussian_side_mc(scales, rho: float, X, n_samples: int, seed: int, M: int = 2,
                     widen: float = 2.0, workers: int = 1) -> mc.McEstimate:
    """Average of exp(sum_a <sigma^a, Q^a sigma^a>) over the replica ensemble.

    Replicas are ``sigma^a = sum_b L_ab xi^b`` with ``L L^T = X`` and independent
    Hermitian ``xi``.  The plain estimator has infinite variance once an
    eigenvalue of A exceeds 1/2, so the whitened coordinates along the
    eigendirections of ``L^T Q L`` with eigenvalue above 1/4 are drawn with
    variance ``widen`` and reweighted by the ratio of the two Gaussian densities.
    The normalisation of that ratio is ``widen^{1/2}`` per direction and never
    involves the determinant being tested.
    """
    forms = _vertex_forms(scales, rho, M)
    nb = len(forms)
    X = _check_x(X, nb)
    d = forms[0].d
    L = _psd_root(X)
    Qs = [f.real_matrix() for f in forms]
    per = Qs[0].shape[0]
    K = np.kron(L.T, np.eye(per)) @ _block_diag(Qs) @ np.kron(L, np.eye(per))
    lam, V = np.linalg.eigh(0.5 * (K + K.T))
    if lam[-1] >= 1.0:
        raise DomainError(f"||A|| = {lam[-1]:.4f} >= 1")
    wide = V[:, lam > 0.25]
    log_norm = 0.5 * wide.shape[1] * math.log(widen)
    shrink = 0.5 * (1.0 - 1.0 / widen)

    def sampler(rng, k):
        u = rng.standard_normal((k, nb * per))
        c = u @ wide
        u = u + (math.sqrt(widen) - 1.0) * c @ wide.T
        logw = log_norm - shrink * widen * (c ** 2).sum(axis=-1)
        xi = np.stack([from_real_coordinates(u[:, b * per:(b + 1) * per], d) for b in range(nb)])
        sig = np.einsum("ab,bc...->ac...", L, xi)
        expo = sum(forms[a].quadratic(sig[a]) for a in range(nb))
        return np.exp(expo + logw)

    return mc.run(sampler, n_samples, seed, workers, chunk=2048)


def det_bound_check(scales, rho: float, X, n_samples: int, seed: int, M: int = 2, workers: int = 1):
    """(determinant side, Monte Carlo estimate of the Gaussian side)."""
    if rho == 0:
        return DetSide(0.0, 0.0, 0.0, 0.0), mc.exact(1.0, seed)
    det = det_side(scales, rho, X, M)
    return det, gaussian_side_mc(scales, rho, X, n_samples, seed, M, workers=workers)


# ---------------------------------------------------------------------------
# the interaction bound


@dataclass(frozen=True)
class VjBoundReport:
    j: int
    max_ratio: float
    min_denominator_trace: float
    n_samples: int

    def to_dict(self) -> dict:
        return {"j": self.j, "max_ratio": self.max_ratio,
                "min_trace": self.min_denominator_trace, "n_samples": self.n_samples}


def cumulative_trace(sig: np.ndarray, j: int, params: ModelParams) -> np.ndarray:
    """Tr(C_{<=j} sigma C_j sigma) = sum_{n,n'} C_{<=j}(n) C_j(n') |sigma_{n n'}|^2."""
    fm = field_model(params)
    lat = fm.lattice
    le = (lat.ball(j)[fm.active]) * fm.C
    cj = (lat.slice(j)[fm.active]) * fm.C
    keep_l = np.flatnonzero(le)
    keep_j = np.flatnonzero(cj)
    out = []
    for b in range(sig.shape[1]):
        S = fm.sigma_vec(sig[:, b])[keep_l[:, None], keep_j[None, :]]
        out.append(float(np.einsum("n,nk,k->", le[keep_l], np.abs(S) ** 2, cj[keep_j])))
    return np.array(out)


def vj_bound_sampler(j: int, params: ModelParams, n_samples: int, seed: int, chunk: int = 64) -> VjBoundReport:
    """Max over sampled sigma of |V_j| / (rho (1 + Tr C_{<=j} sigma C_j sigma))."""
    _check_inside(params)
    if not 1 <= j <= params.j_max:
        raise DomainError(f"slice {j} outside 1..{params.j_max}")
    fm = field_model(params)
    best, low = 0.0, math.inf
    for i, k in enumerate(mc._chunk_sizes(n_samples, chunk)):
        sig = sample_sigma_batch(fm.d, mc.chunk_rng(seed, i), k)
        tr = cumulative_trace(sig, j, params)
        v = np.zeros(k) if fm.lam == 0 else np.abs(slice_vj_batch(sig, j, params))
        best = max(best, float(np.max(v / (params.rho * (1.0 + tr)))))
        low = min(low, float(tr.min()))
    return VjBoundReport(j, best, low, n_samples)
