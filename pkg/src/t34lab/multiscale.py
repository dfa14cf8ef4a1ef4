"""Momentum slices and the sliced interactions V_j, W_j.

Slice j holds the modes with ``M^(2(j-1)) < 1 + n^2 <= M^(2j)`` (slice 1 is the
whole first ball).  Inside slice j the cutoff is interpolated by
``P(t) = 1_{<=j-1} + t 1_j``, so that the cumulative covariance is
``C_{<=j}(t) = P(t)^2 C``.  All operators below are diagonal and returned as
vectors over the active modes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .params import DomainError, ModelParams
from .sigma import (
    IllConditionedError,
    SigmaTriple,
    _check_dims,
    _check_inside,
    field_model,
    log2_trace,
    wick_pair,
)


class QuadratureError(ArithmeticError):
    """Gauss-Legendre node doubling did not reproduce the result."""


def slice_indicator(j: int, n, M: int) -> int:
    if j < 1:
        raise DomainError("slice index starts at 1")
    q = 1 + sum(x * x for x in n)
    inside = q <= M ** (2 * j)
    below = j > 1 and q <= M ** (2 * (j - 1))
    return int(inside and not below)


def slice_of(n, M: int) -> int:
    """Index of the slice containing n."""
    q = 1 + sum(x * x for x in n)
    j = 1
    while q > M ** (2 * j):
        j += 1
    return j


@dataclass(frozen=True)
class SliceInterpolation:
    j: int
    t: float

    def __post_init__(self):
        if self.j < 1:
            raise DomainError("slice index starts at 1")
        if not 0.0 <= self.t <= 1.0:
            raise DomainError("t must lie in [0, 1]")

    def weights(self, below: np.ndarray, shell: np.ndarray):
        """(P(t), P(t)^2) from the 0/1 indicators of the lower balls and slice j."""
        return below + self.t * shell, below + self.t ** 2 * shell


@dataclass(frozen=True)
class SlicedOperators:
    sqrt_C_le: np.ndarray
    sqrt_C_j: np.ndarray
    C_j: np.ndarray
    C_le: np.ndarray
    D_le: np.ndarray
    D_j: np.ndarray
    A_j: np.ndarray


def _indicators(params: ModelParams, j: int):
    fm = field_model(params)
    lat = fm.lattice
    below = lat.ball(j - 1)[fm.active]
    shell = lat.slice(j)[fm.active]
    return fm, below, shell


def sliced_operators(j: int, t: float, params: ModelParams) -> SlicedOperators:
    fm, below, shell = _indicators(params, j)
    P, P2 = SliceInterpolation(j, t).weights(below, shell)
    A = fm.D / fm.C
    # covariances are the squares of the stored roots, so the square identities are exact
    root_le = P * fm.sqrtC
    root_j = shell * fm.sqrtC
    return SlicedOperators(
        sqrt_C_le=root_le,
        sqrt_C_j=root_j,
        C_j=root_j * root_j,
        C_le=root_le * root_le,
        D_le=P2 * fm.D,
        D_j=shell * fm.D,
        A_j=shell * A,
    )


def e_counterterm_sliced(j: int, t: float, params: ModelParams) -> complex:
    """(g/2) E Tr(C_{<=j}(t) sigma C_{<=j}(t) sigma), by Wick contraction."""
    if j == 0:
        return 0j
    fm = field_model(params)
    W = fm.full_cube(sliced_operators(j, t, params).C_le)
    return fm.g / 2 * wick_pair(W, W)


def _e_counterterm_slope(j: int, t: float, params: ModelParams) -> complex:
    fm = field_model(params)
    ops = sliced_operators(j, t, params)
    W = fm.full_cube(ops.C_le)
    dW = fm.full_cube(2 * t * ops.C_j)
    return fm.g * wick_pair(dW, W)


# ---------------------------------------------------------------------------
# V_{<=j}(t) and V_j


class _SliceFrame:
    """Pieces of U_{<=j}(t) restricted to the ball of slice j.

    U(t) = i lam P H P + lam^2 P^2 D with H = C^{1/2} sigma C^{1/2}.
    """

    def __init__(self, s, j: int, params: ModelParams):
        fm, below, shell = _indicators(params, j)
        keep = np.flatnonzero(below + shell)
        self.fm = fm
        self.below = below[keep]
        self.shell = shell[keep]
        self.keep = keep
        lam = fm.lam
        S = fm.sigma_vec(s)[..., keep[:, None], keep[None, :]]
        sc = fm.sqrtC[keep]
        self.H = 1j * lam * sc[:, None] * S * sc[None, :]
        self.Dl = lam * lam * fm.D[keep]
        self.j = j
        self.params = params

    def u(self, t: float) -> np.ndarray:
        P = self.below + t * self.shell
        U = P[:, None] * self.H * P[None, :]
        idx = np.arange(len(P))
        U[..., idx, idx] += P * P * self.Dl
        return U

    def schur(self):
        """(Tr E, F) with E the shell block of U(1) and F = E + U_JQ (I - U_QQ)^{-1} U_QJ.

        The lower block I - U_QQ does not depend on t, and the Schur
        complement of I - U(t) is I - t^2 F.
        """
        if not hasattr(self, "_schur"):
            q = np.flatnonzero(self.below)
            s_ = np.flatnonzero(self.shell)
            U1 = self.u(1.0)
            E = U1[..., s_[:, None], s_[None, :]]
            F = E
            if len(q):
                Uqq = U1[..., q[:, None], q[None, :]]
                Uqj = U1[..., q[:, None], s_[None, :]]
                Ujq = U1[..., s_[:, None], q[None, :]]
                F = E + Ujq @ np.linalg.solve(np.eye(len(q)) - Uqq, Uqj)
            self._schur = (np.trace(E, axis1=-2, axis2=-1), F)
        return self._schur

    def spectrum(self):
        """(Tr E, eigenvalues of F)."""
        if not hasattr(self, "_spectrum"):
            trE, F = self.schur()
            f = np.linalg.eigvals(F)
            if np.min(np.abs(1 - f), initial=np.inf) < 1e-8:
                raise IllConditionedError("I - U is numerically singular")
            self._spectrum = (trE, f)
        return self._spectrum

    def u_slope(self, t: float) -> np.ndarray:
        P = self.below + t * self.shell
        dP = self.shell
        U = dP[:, None] * self.H * P[None, :] + P[:, None] * self.H * dP[None, :]
        idx = np.arange(len(P))
        U[..., idx, idx] += 2 * P * dP * self.Dl
        return U


def v_cumulative(s: SigmaTriple, j: int, t: float, params: ModelParams) -> complex:
    """V_{<=j}(t) = Tr log_2(I - U_{<=j}(t)) - E_{<=j}(t); V_{<=0} = 0."""
    if j == 0:
        return 0j
    fm = field_model(params)
    _check_dims(s, fm)
    if fm.lam == 0:
        return 0j
    frame = _SliceFrame(s, j, params)
    return log2_trace(frame.u(t)) - e_counterterm_sliced(j, t, params)


def _slope_integrand_dense(frame: _SliceFrame, t: float) -> complex:
    # d/dt V_{<=j}(t) = Tr U'(I - R) - E', with R from a dense inverse
    U = frame.u(t)
    dU = frame.u_slope(t)
    K = np.eye(U.shape[-1]) - U
    try:
        R = np.linalg.inv(K)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError(str(exc)) from exc
    tr = np.trace(dU) - np.sum(dU * R.T)
    return tr - _e_counterterm_slope(frame.j, t, frame.params)


def _slope_integrand(frame: _SliceFrame, t: float) -> complex:
    # same quantity with R eliminated blockwise: Tr U'R = 2t Tr F (I - t^2 F)^{-1}
    trE, f = frame.spectrum()
    tr = 2 * t * (trE - np.sum(f / (1 - t * t * f)))
    return tr - _e_counterterm_slope(frame.j, t, frame.params)


@lru_cache(maxsize=8)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _integrate(frame: _SliceFrame, n: int, dense: bool = False) -> complex:
    f = _slope_integrand_dense if dense else _slope_integrand
    x, w = _gauss_legendre(n)
    return complex(sum(wk * f(frame, tk) for tk, wk in zip(x, w)))


def slice_interaction_Vj(
    s: SigmaTriple,
    j: int,
    params: ModelParams,
    quad_points: int = 16,
    method: str = "integral",
    tol: float = 1e-10,
    check: bool = True,
    dense: bool = False,
) -> complex:
    """V_j(sigma) = V_{<=j}(1) - V_{<=j}(0).

    ``integral`` integrates the t-derivative ``Tr U'(I - R) - E'`` by
    Gauss-Legendre quadrature (with a node-doubling check when ``check``);
    ``difference`` takes the two endpoint values directly.  With ``dense``
    the resolvent at each node is a full inverse instead of the blockwise
    elimination of the lower modes.
    """
    _check_inside(params)
    if not 1 <= j <= params.j_max:
        raise DomainError(f"slice {j} outside 1..{params.j_max}")
    fm = field_model(params)
    _check_dims(s, fm)
    if fm.lam == 0:
        return 0j
    if method == "difference":
        return v_cumulative(s, j, 1.0, params) - v_cumulative(s, j - 1, 1.0, params)
    if method != "integral":
        raise ValueError(method)
    frame = _SliceFrame(s, j, params)
    if not frame.shell.any():
        return 0j
    val = _integrate(frame, quad_points, dense)
    if check:
        fine = _integrate(frame, 2 * quad_points, dense)
        if abs(fine - val) > tol * max(1.0, abs(fine)):
            raise QuadratureError(f"node doubling moved V_{j} by {abs(fine - val):.3e}")
        val = fine
    return val


def w_vertex(s: SigmaTriple, j: int, params: ModelParams, **kw) -> complex:
    """W_j = exp(-V_j) - 1."""
    return complex(np.expm1(-slice_interaction_Vj(s, j, params, **kw)))


# ---------------------------------------------------------------------------
# fast exact route for sampling loops


def slice_vj_batch(sig: np.ndarray, j: int, params: ModelParams) -> np.ndarray:
    """V_j for a batch of sigma arrays of shape (3, B, d, d).

    Splitting the ball into the lower modes Q and the shell J, the Schur
    complement of the Q block of I - U(t) is I - t^2 F with F independent of
    t.  Hence log det(I - U(1)) - log det(I - U(0)) = sum log(1 - f_k) over the
    eigenvalues f_k of F, and the principal logarithm is the branch reached
    continuously from t = 0 (1 - t^2 f crosses the cut only for real f >= 1).
    """
    fm = field_model(params)
    frame = _SliceFrame(sig, j, params)
    if not frame.shell.any() or fm.lam == 0:
        return np.zeros(sig.shape[1], dtype=complex)
    trE, f = frame.spectrum()
    de = e_counterterm_sliced(j, 1.0, params) - e_counterterm_sliced(j, 0.0, params)
    return trE + np.log(1 - f).sum(axis=-1) - de


def slice_exp_neg_vj_batch(sig: np.ndarray, j: int, params: ModelParams) -> np.ndarray:
    """exp(-V_j) for a batch; a log-determinant replaces the eigenvalues (no branch needed)."""
    fm = field_model(params)
    frame = _SliceFrame(sig, j, params)
    if not frame.shell.any() or fm.lam == 0:
        return np.ones(sig.shape[1], dtype=complex)
    trE, F = frame.schur()
    sign, logabs = np.linalg.slogdet(np.eye(F.shape[-1]) - F)
    de = e_counterterm_sliced(j, 1.0, params) - e_counterterm_sliced(j, 0.0, params)
    return np.exp(-trE - np.log(sign) - logabs + de)
