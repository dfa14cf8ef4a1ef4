"""Intermediate Hermitian field: the operator U, the resolvent and V(sigma).

Operators act on the active modes only.  Inactive modes are killed by the
cutoff on ``C^{1/2}``, so ``I - U`` is the identity there and contributes
nothing to traces, determinants or logarithms.

Convention for the Gaussian Hermitian ensemble: ``E[sigma_mn sigma_nm] = 1``
for every pair, i.e. diagonal entries are N(0, 1) and the real and imaginary
parts of an off-diagonal entry each have variance 1/2.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import mc
from .params import DomainError, Lattice, ModelParams

HERMITIAN_TOL = 1e-12
RESIDUAL_TOL = 1e-10


class IllConditionedError(ArithmeticError):
    """A linear solve or logarithm left its accuracy envelope."""


def cardioid_contains(g: complex, rho: float) -> bool:
    if not rho > 0:
        raise DomainError("rho must be positive")
    g = complex(g)
    if g == 0:
        return True
    return abs(g) < rho * math.cos(cmath.phase(g) / 2)


def resolvent_norm_bound(g: complex) -> float:
    return 2.0 / math.cos(cmath.phase(complex(g)) / 2)


@dataclass(frozen=True)
class SigmaTriple:
    """One square matrix per colour.

    Hermiticity is checked unless ``check=False``; unchecked triples are used
    for holomorphic perturbations of single entries.
    """

    sigma: tuple
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        s = tuple(np.asarray(x, dtype=complex) for x in self.sigma)
        if len(s) != 3:
            raise ValueError("need one matrix per colour")
        for x in s:
            if x.ndim != 2 or x.shape[0] != x.shape[1]:
                raise ValueError("colour matrices must be square")
            if self.check and not np.allclose(x, x.conj().T, rtol=0, atol=HERMITIAN_TOL):
                raise ValueError("colour matrix is not Hermitian")
        object.__setattr__(self, "sigma", s)

    @classmethod
    def zeros(cls, dims) -> "SigmaTriple":
        if np.ndim(dims) == 0:
            dims = (dims,) * 3
        return cls(tuple(np.zeros((d, d)) for d in dims))

    @property
    def dims(self) -> tuple:
        return tuple(x.shape[0] for x in self.sigma)

    def __getitem__(self, c: int) -> np.ndarray:
        return self.sigma[c]

    def __add__(self, other: "SigmaTriple") -> "SigmaTriple":
        return SigmaTriple(tuple(a + b for a, b in zip(self.sigma, other.sigma)), check=False)

    def perturbed(self, c: int, m: int, n: int, eps: complex) -> "SigmaTriple":
        """Shift the single entry (m, n) of colour c (0-based)."""
        s = [x.copy() for x in self.sigma]
        s[c][m, n] += eps
        return SigmaTriple(tuple(s), check=False)


@dataclass(frozen=True)
class OperatorOnH:
    """Operator on the active modes of the tensor product space.

    ``index`` holds the per-colour matrix indices of each active mode, so
    ``embed`` can scatter the operator back onto the full product space.
    """

    matrix: np.ndarray
    index: np.ndarray
    diagonal: bool = False
    dims: tuple = ()

    @property
    def dim(self) -> int:
        return self.index.shape[0]

    def dense(self) -> np.ndarray:
        return np.diag(self.matrix) if self.diagonal else self.matrix

    def embed(self) -> np.ndarray:
        d1, d2, d3 = self.dims
        flat = np.ravel_multi_index(self.index.T, self.dims)
        out = np.zeros((d1 * d2 * d3,) * 2, dtype=complex)
        out[np.ix_(flat, flat)] = self.dense()
        return out

    def norm(self) -> float:
        if self.diagonal:
            return float(np.abs(self.matrix).max(initial=0.0))
        return float(np.linalg.norm(self.matrix, 2))


# ---------------------------------------------------------------------------
# model on the active modes


def wick_pair(W1: np.ndarray, W2: np.ndarray) -> float:
    """E Tr(W1 sigma W2 sigma) for diagonal W1, W2 given on the full cube (d,d,d)."""
    return sum(float(np.sum(W1.sum(axis=c) * W2.sum(axis=c))) for c in range(3))


def tadpole(chiC: np.ndarray, c: int) -> np.ndarray:
    """sum over the two other colours of the cut-off propagator, per n_c."""
    other = tuple(a for a in range(3) if a != c)
    return chiC.sum(axis=other)


def self_energy_on_cutoff(chiC: np.ndarray, c: int) -> np.ndarray:
    """A(n_c) = tadpole(0) - tadpole(n_c) for the given cut-off propagator."""
    t = tadpole(chiC, c)
    return t[len(t) // 2] - t


class FieldModel:
    """Diagonal operators (C, D) and constants at fixed parameters."""

    def __init__(self, params: ModelParams):
        self.params = params
        lat = Lattice.from_params(params)
        self.lattice = lat
        self.d = lat.d
        self.dims = (lat.d,) * 3
        act = np.flatnonzero(lat.active)
        self.active = act
        self.index = lat.momenta[act] + lat.L
        self.C = lat.propagator[act]
        self.sqrtC = np.sqrt(self.C)
        self.chiC = (lat.active * lat.propagator).reshape(self.dims)
        self.A = [self_energy_on_cutoff(self.chiC, c) for c in range(3)]
        self.D = self.C * sum(self.A[c][self.index[:, c]] for c in range(3))
        self.delta_m = float(tadpole(self.chiC, 0)[lat.L])
        self.lam = params.lam
        self.g = params.g
        self.E = self.g / 2 * wick_pair(self.chiC, self.chiC)
        i1, i2, i3 = self.index.T
        self._same = [
            (i2[:, None] == i2[None, :]) & (i3[:, None] == i3[None, :]),
            (i1[:, None] == i1[None, :]) & (i3[:, None] == i3[None, :]),
            (i1[:, None] == i1[None, :]) & (i2[:, None] == i2[None, :]),
        ]

    @property
    def dim(self) -> int:
        return len(self.active)

    def diag_op(self, values) -> OperatorOnH:
        return OperatorOnH(np.asarray(values, dtype=complex), self.index, True, self.dims)

    def full_cube(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(self.d ** 3, dtype=np.result_type(values, float))
        out[self.active] = values
        return out.reshape(self.dims)

    def sigma_vec(self, s) -> np.ndarray:
        """Kronecker sum restricted to the active modes; accepts batches (..., d, d)."""
        sig = s.sigma if isinstance(s, SigmaTriple) else s
        out = 0
        for c in range(3):
            ic = self.index[:, c]
            out = out + sig[c][..., ic[:, None], ic[None, :]] * self._same[c]
        return out

    def u_matrix(self, s, lam=None, d_weight=1.0) -> np.ndarray:
        """U = i lam C^{1/2} sigma C^{1/2} + d_weight lam^2 D.

        With d_weight = 1 the diagonal translation that absorbs the mass
        counterterm is exact: E[exp(-V)] equals the tensor-integral Z.
        """
        lam = self.lam if lam is None else lam
        S = self.sigma_vec(s)
        U = 1j * lam * self.sqrtC[:, None] * S * self.sqrtC[None, :]
        idx = np.arange(self.dim)
        U[..., idx, idx] += d_weight * lam * lam * self.D
        return U


@lru_cache(maxsize=64)
def field_model(params: ModelParams) -> FieldModel:
    return FieldModel(params)


# ---------------------------------------------------------------------------
# operators


def build_sigma_vec(s: SigmaTriple) -> OperatorOnH:
    """Kronecker sum on the full product space of the colour dimensions."""
    d1, d2, d3 = s.dims
    I1, I2, I3 = np.eye(d1), np.eye(d2), np.eye(d3)
    M = np.kron(np.kron(s[0], I2), I3) + np.kron(np.kron(I1, s[1]), I3) + np.kron(np.kron(I1, I2), s[2])
    index = np.stack(np.unravel_index(np.arange(d1 * d2 * d3), (d1, d2, d3)), axis=1)
    return OperatorOnH(M, index, False, (d1, d2, d3))


def _check_inside(params: ModelParams) -> None:
    if not cardioid_contains(params.g, params.rho):
        raise DomainError(f"g={params.g} lies outside the cardioid of radius {params.rho}")


def resolvent(s: SigmaTriple, params: ModelParams, d_weight: float = 1.0) -> OperatorOnH:
    """R = (I - U)^{-1}; ``d_weight`` scales the D term (1 gives the translated resolvent).

    ``d_weight = -1`` flips the sign of the D term; the norm bound holds for
    either sign since it only uses |lam^2| sup D < cos(Arg g / 2) / 2.
    """
    _check_inside(params)
    model = field_model(params)
    _check_dims(s, model)
    K = np.eye(model.dim) - model.u_matrix(s, d_weight=d_weight)
    R = np.linalg.inv(K)
    res = np.linalg.norm(K @ R - np.eye(model.dim), 2)
    if not res <= RESIDUAL_TOL:
        raise IllConditionedError(f"resolvent residual {res:.3e}")
    return OperatorOnH(R, model.index, False, model.dims)


def translation_path_norms(s: SigmaTriple, params: ModelParams, n_t: int = 21) -> np.ndarray:
    """Norm of the resolvent while the diagonal of sigma moves by -i t lambda A, t in [0, 1]."""
    return np.array([resolvent(s, params, d_weight=t).norm() for t in np.linspace(0, 1, n_t)])


def _check_dims(s: SigmaTriple, model: FieldModel) -> None:
    if s.dims != model.dims:
        raise ValueError(f"sigma dims {s.dims} do not match cutoff dims {model.dims}")


def log2_trace(U: np.ndarray) -> complex:
    """Tr log_2(I - U) = Tr U + sum of principal logs of eigenvalues of I - U."""
    ev = 1.0 - np.linalg.eigvals(U)
    if np.min(np.abs(ev), initial=np.inf) < 1e-8:
        raise IllConditionedError("I - U is numerically singular")
    return complex(np.trace(U) + np.sum(np.log(ev)))


def interaction_V(s: SigmaTriple, params: ModelParams) -> complex:
    """V = Tr log_2(I - U) - E_script."""
    model = field_model(params)
    _check_dims(s, model)
    if model.lam == 0:
        return 0j
    return log2_trace(model.u_matrix(s)) - model.E


def neg_exp_V_batch(model: FieldModel, sig: np.ndarray) -> np.ndarray:
    """exp(-V) for a batch; ``sig`` has shape (3, B, d, d).

    Only the exponential is needed, so log det replaces the branch-sensitive
    sum of logarithms.
    """
    U = model.u_matrix(sig)
    K = np.eye(model.dim) - U
    sign, logabs = np.linalg.slogdet(K)
    trU = np.trace(U, axis1=-2, axis2=-1)
    return np.exp(-trU - np.log(sign) - logabs + model.E)


# ---------------------------------------------------------------------------
# sampling


def sample_gue(d: int, rng: np.random.Generator, size: tuple = ()) -> np.ndarray:
    shape = size + (d, d)
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
    upper = np.triu(z, 1)
    diag = rng.standard_normal(size + (d,))
    return upper + np.conj(np.swapaxes(upper, -1, -2)) + diag[..., None] * np.eye(d)


def sample_sigma(dims, rng: np.random.Generator) -> SigmaTriple:
    if np.ndim(dims) == 0:
        dims = (dims,) * 3
    return SigmaTriple(tuple(sample_gue(d, rng) for d in dims))


def sample_sigma_batch(d: int, rng: np.random.Generator, n: int) -> np.ndarray:
    """Array of shape (3, n, d, d) with independent Hermitian samples."""
    return np.stack([sample_gue(d, rng, (n,)) for _ in range(3)])


def hubbard_stratonovich_check(x: float, lam: complex, order: int = 120) -> float:
    """|exp(-lam^2 x^2 / 2) - E_s[exp(i lam x s)]| with s ~ N(0, 1), by Gauss-Hermite."""
    s, w = np.polynomial.hermite_e.hermegauss(order)
    rhs = np.sum(w * np.exp(1j * lam * x * s)) / math.sqrt(2 * math.pi)
    lhs = cmath.exp(-(lam * lam) * x * x / 2)
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# partition function


def partition_function_mc(params: ModelParams, n_samples: int, seed: int, workers: int = 1) -> mc.McEstimate:
    """Plain MC of E[exp(-V(sigma))] over the Hermitian ensemble."""
    _check_inside(params)
    model = field_model(params)

    def sampler(rng, k):
        return neg_exp_V_batch(model, sample_sigma_batch(model.d, rng, k))

    return mc.run(sampler, n_samples, seed, workers, chunk=1024)


class TensorModel:
    """Quartic tensor weight with its counterterms, on the active modes."""

    def __init__(self, params: ModelParams):
        fm = field_model(params)
        self.fm = fm
        self.g = params.g
        chiC = fm.chiC
        dm = fm.delta_m
        s = tadpole(chiC, 0)
        t = chiC.sum(axis=0)
        # colour symmetric, so one colour times three
        v1 = self.g / 2 * np.sum(s * s)
        v2 = self.g / 2 * np.sum(t * t)
        vdm = -self.g * dm * np.sum(chiC)
        self.log_prefactor = 3 * (v1 + v2 + vdm)
        self.delta_m = dm

    def log_weight(self, T: np.ndarray) -> np.ndarray:
        """-(g/2) sum_c V^c(T) + g delta_m sum_c |T|^2 for a batch (B, d, d, d)."""
        B = T.shape[0]
        d = T.shape[1]
        norm2 = np.sum(np.abs(T) ** 2, axis=(1, 2, 3))
        quartic = 0
        for c in range(3):
            Tc = np.moveaxis(T, c + 1, 1).reshape(B, d, d * d)
            Mc = Tc @ np.conj(np.swapaxes(Tc, 1, 2))
            quartic = quartic + np.sum(np.abs(Mc) ** 2, axis=(1, 2))
        return -self.g / 2 * quartic + 3 * self.g * self.delta_m * norm2

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        fm = self.fm
        z = (rng.standard_normal((n, fm.dim)) + 1j * rng.standard_normal((n, fm.dim))) / math.sqrt(2)
        T = np.zeros((n, fm.d ** 3), dtype=complex)
        T[:, fm.active] = z * fm.sqrtC
        return T.reshape((n,) + fm.dims)


def tensor_partition_mc(params: ModelParams, n_samples: int, seed: int, workers: int = 1) -> mc.McEstimate:
    """Independent oracle: MC over the complex Gaussian tensor with covariance C."""
    tm = TensorModel(params)
    pref = complex(np.exp(tm.log_prefactor))

    def sampler(rng, k):
        return np.exp(tm.log_weight(tm.sample(rng, k)))

    return mc.run(sampler, n_samples, seed, workers, chunk=1024).scale(pref)
