"""Momentum lattice, bare propagator and renormalization counterterms."""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import special

from .params import DomainError, Lattice, ModelParams


def propagator_entry(n) -> float:
    n1, n2, n3 = n
    return 1.0 / (n1 * n1 + n2 * n2 + n3 * n3 + 1)


# ---------------------------------------------------------------------------
# mass counterterm


def _square_row_sums(N: int) -> np.ndarray:
    p2 = np.arange(-N, N + 1, dtype=float) ** 2
    return (1.0 / (p2[:, None] + p2[None, :] + 1.0)).sum(axis=1)


def _line_sum(a: np.ndarray, N: int) -> np.ndarray:
    """sum_{|k|<=N} 1/(k^2 + a^2), from the coth series minus a digamma tail."""
    full = math.pi / (a * np.tanh(math.pi * a))
    tail = special.psi(N + 1 + 1j * a).imag / a
    return full - 2.0 * tail


def mass_counterterm(N: int) -> float:
    """delta m = sum over p in [-N, N]^2 of 1/(p^2 + 1)."""
    if N < 0:
        raise DomainError("N must be >= 0")
    if N <= 512:
        return math.fsum(_square_row_sums(N))
    a = np.sqrt(np.arange(-N, N + 1, dtype=float) ** 2 + 1.0)
    return math.fsum(_line_sum(a, N))


def mass_counterterm_bruteforce(N: int, order: str = "row") -> float:
    """Reference sum term by term, in row-major or outward spiral order.

    ``math.fsum`` is correctly rounded, so both orders give the same float.
    """
    pts = [(x, y) for x in range(-N, N + 1) for y in range(-N, N + 1)]
    if order == "spiral":
        pts.sort(key=lambda p: (max(abs(p[0]), abs(p[1])), math.atan2(p[1], p[0])))
    elif order != "row":
        raise ValueError(order)
    return math.fsum(1.0 / (x * x + y * y + 1) for x, y in pts)


# ---------------------------------------------------------------------------
# self-energy A(n)


def _cothm1(x):
    # coth(pi x) - 1, stable for large x
    return 2.0 / np.expm1(np.minimum(2.0 * math.pi * x, 700.0))


def _outer_terms(n: int, p: np.ndarray) -> np.ndarray:
    # sum over the second momentum done exactly by partial fractions
    a = np.sqrt(p * p + 1.0)
    b = np.sqrt(p * p + n * n + 1.0)
    return math.pi * (n * n / (a * b * (a + b)) + _cothm1(a) / a - _cothm1(b) / b)


def _tail_integral(n: int, P: float) -> float:
    """pi * integral_P^inf (1/sqrt(x^2+1) - 1/sqrt(x^2+n^2+1)) dx."""
    r1 = math.sqrt(P * P + 1.0)
    r2 = math.sqrt(P * P + n * n + 1.0)
    return math.pi * math.log1p((n * n / (r1 + r2)) / (P + r1))


def renorm_self_energy(n_c: int, tol: float = 1e-8, max_radius: int = 1 << 24) -> float:
    """A(n) = sum over p in Z^2 of n^2 / ((n^2 + p^2 + 1)(p^2 + 1)).

    Truncated outer sum plus a two-sided integral bound on the tail; the
    returned value is the midpoint and its error is at most ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = abs(int(n_c))
    if n == 0:
        return 0.0
    P = 64
    while True:
        lo = _tail_integral(n, P + 1)
        hi = _tail_integral(n, P) + _cothm1(P) / P
        if hi - lo <= tol:  # two tails, half-width each
            break
        P *= 2
        if P > max_radius:
            raise DomainError(f"tail bound for A({n}) cannot reach tol={tol}")
    p = np.arange(1, P + 1, dtype=float)
    body = math.fsum(_outer_terms(n, p)) * 2.0 + float(_outer_terms(n, np.zeros(1))[0])
    return body + (lo + hi)


def renorm_self_energy_bruteforce(n_c: int, radius2: int = 10**6) -> float:
    """Independent oracle: direct 2-d sum over p^2 <= radius2 plus an integral tail."""
    n = abs(int(n_c))
    R = math.isqrt(radius2)
    ax = np.arange(-R, R + 1, dtype=float)
    tot = []
    for x in ax:
        p2 = x * x + ax * ax
        m = p2 <= radius2
        p2 = p2[m]
        tot.append(np.sum(n * n / ((n * n + p2 + 1.0) * (p2 + 1.0))))
    # the region outside the disc of radius sqrt(radius2), as a radial integral
    r2 = radius2 + 0.5 * math.sqrt(radius2)  # lattice-point counting correction
    tail = math.pi * math.log1p(n * n / (r2 + 1.0))
    return math.fsum(tot) + tail


def cutoff_self_energy(n_c, N: int):
    """Finite-cutoff A_N(n) = delta m(N) - sum_{p in [-N,N]^2} C(n, p)."""
    n = np.abs(np.asarray(n_c, dtype=float))
    p2 = np.arange(-N, N + 1, dtype=float) ** 2
    q = p2[:, None] + p2[None, :]
    s = (n[..., None] ** 2 / ((q.ravel() + 1.0) * (n[..., None] ** 2 + q.ravel() + 1.0))).sum(axis=-1)
    return s if s.ndim else float(s)


# ---------------------------------------------------------------------------
# vacuum counterterms


@dataclass(frozen=True)
class CountertermSet:
    N: int
    delta_m: float
    deltaV1: tuple
    deltaV2: tuple
    deltaV3: tuple
    deltaV_dm: tuple
    D_script: complex
    E_script: complex

    def rows(self) -> list[tuple]:
        out = [("delta_m", c, self.N, self.delta_m) for c in (1, 2, 3)]
        for name in ("deltaV1", "deltaV2", "deltaV3", "deltaV_dm"):
            for c, v in enumerate(getattr(self, name), start=1):
                out.append((name, c, self.N, v))
        out.append(("D_script", 0, self.N, self.D_script))
        out.append(("E_script", 0, self.N, self.E_script))
        return out


def vacuum_counterterms(params: ModelParams) -> CountertermSet:
    """All counterterms at the cubic cutoff ``N = params.L``.

    The range factor in the delta V_3 counterterm is the cardinality 2N+1 of the
    unconstrained colour-c momentum sum.
    """
    N = params.L
    g = params.g
    lat = Lattice(N)
    C = lat.propagator.reshape(lat.d, lat.d, lat.d)
    dm = mass_counterterm(N)
    s = C.sum(axis=(1, 2))  # sum over the two other colours, per n_1
    t = C.sum(axis=0)  # sum over n_1, per (n_2, n_3)
    v1 = g / 2 * math.fsum(s * s)
    v2 = g / 2 * math.fsum((t * t).ravel())
    v3 = g / 2 * (2 * N + 1) * dm * dm
    vdm = -g * dm * math.fsum(s)
    three = lambda v: (v, v, v)  # colour symmetry of the cube
    A = cutoff_self_energy(lat.axis, N)
    D_script = 3 * g / 2 * math.fsum(np.asarray(A) ** 2)
    return CountertermSet(
        N=N,
        delta_m=dm,
        deltaV1=three(v1),
        deltaV2=three(v2),
        deltaV3=three(v3),
        deltaV_dm=three(vdm),
        D_script=D_script,
        E_script=3 * v2,
    )


def counterterm_identity_residual(params: ModelParams) -> float:
    """Relative gap between the three counterterm sums and (g/2) sum_c sum A^2.

    The left side is enumerated index by index, independently of the
    self-energy routine used on the right.
    """
    N = params.L
    g = params.g
    r = range(-N, N + 1)
    lhs = []
    for c in range(3):
        v1, vdm = [], []
        for n in itertools.product(r, repeat=3):
            Cn = propagator_entry(n)
            for p in itertools.product(r, repeat=2):
                q = list(p)
                q.insert(c, n[c])
                v1.append(Cn * propagator_entry(q))
                pp = list(p)
                pp.insert(c, 0)
                vdm.append(Cn * propagator_entry(pp))
        v3 = [propagator_entry(m) * propagator_entry(q)
              for m in itertools.product(r, repeat=3) if m[c] == 0
              for q in itertools.product(r, repeat=3) if q[c] == 0]
        lhs.append(g / 2 * math.fsum(v1) - g * math.fsum(vdm) + g / 2 * (2 * N + 1) * math.fsum(v3))
    lhs = sum(lhs)
    rhs = vacuum_counterterms(params).D_script
    scale = max(abs(rhs), 1e-300)
    return abs(lhs - rhs) / scale


# ---------------------------------------------------------------------------
# D operator


def d_operator_entry(n, N: int | None = None) -> float:
    """D(n) = C(n) sum_c A(n_c); ``N`` selects the cutoff self-energy A_N."""
    if N is None:
        A = sum(renorm_self_energy(k) for k in n)
    else:
        A = sum(cutoff_self_energy(k, N) for k in n)
    return propagator_entry(n) * A


def d_diagonal(lattice: Lattice) -> np.ndarray:
    """Eigenvalues of D on the cube, with the self-energy at cutoff L."""
    A = cutoff_self_energy(lattice.axis, lattice.L)
    idx = lattice.momenta + lattice.L
    return lattice.propagator * A[idx].sum(axis=1)


def self_energy_table(n_max: int, P: int = 512, block: int = 256) -> np.ndarray:
    """A(0..n_max) on a shared grid |p_1| <= P, vectorized.

    The tail beyond P uses the midpoint rule with an Euler-Maclaurin end
    correction, so the error is O(P^-4) uniformly in n; ``renorm_self_energy``
    is the rigorous, bounded-error routine this is tested against.
    """
    n = np.arange(n_max + 1, dtype=float)
    p = np.arange(1, P + 1, dtype=float)
    out = np.empty(n_max + 1)
    X = P + 0.5
    r1 = math.sqrt(X * X + 1.0)
    a = np.sqrt(p * p + 1.0)[None, :]
    for lo in range(0, n_max + 1, block):
        nb = n[lo:lo + block]
        b = np.sqrt(p[None, :] ** 2 + nb[:, None] ** 2 + 1.0)
        with np.errstate(over="ignore"):
            body = math.pi * (nb[:, None] ** 2 / (a * b * (a + b)) + _cothm1(a) / a - _cothm1(b) / b)
            b0 = np.sqrt(nb * nb + 1.0)
            zero = math.pi * (nb * nb / (b0 * (1.0 + b0)) + _cothm1(1.0) - _cothm1(b0) / b0)
        r2 = np.sqrt(X * X + nb * nb + 1.0)
        tail = math.pi * np.log1p((nb * nb / (r1 + r2)) / (X + r1))
        slope = math.pi * (-X / r1 ** 3 + X / r2 ** 3)
        out[lo:lo + block] = zero + 2.0 * (body.sum(axis=1) + tail + slope / 24.0)
    out[0] = 0.0
    return out


def d_sup(L: int, A: np.ndarray | None = None) -> float:
    """sup over the cube [-L, L]^3 of D(n) with the Z^2 self-energy."""
    if A is None:
        A = self_energy_table(L)
    ax = np.arange(0, L + 1)
    best = 0.0
    for n1 in ax:
        D = (A[n1] + A[ax][:, None] + A[ax][None, :]) / (n1 * n1 + ax[:, None] ** 2 + ax[None, :] ** 2 + 1.0)
        best = max(best, float(D.max()))
    return best


def _sq_line_sum(q: np.ndarray, L: int) -> np.ndarray:
    """sum_{|k|<=L} 1/(k^2 + q)^2 for q >= 1 (closed form minus Euler-Maclaurin tail)."""
    if L <= 64:
        k2 = np.arange(-L, L + 1, dtype=float) ** 2
        return (1.0 / (np.asarray(q)[..., None] + k2) ** 2).sum(axis=-1)
    a = np.sqrt(q)
    e = np.exp(-2.0 * math.pi * a)
    # pi coth(pi a)/(2 a^3) + pi^2 csch^2(pi a)/(2 a^2)
    full = math.pi * (1 + e) / ((1 - e) * 2 * a ** 3) + (math.pi ** 2 / (2 * q)) * 4 * e / (1 - e) ** 2
    f = 1.0 / (L * L + q) ** 2
    f1 = -4.0 * L / (L * L + q) ** 3
    f3 = -96.0 * L ** 3 / (L * L + q) ** 5 + 48.0 * L / (L * L + q) ** 4
    integral = np.arctan(a / L) / (2 * a ** 3) - L / (2 * q * (L * L + q))
    tail = integral - f / 2 - f1 / 12 + f3 / 720
    return full - 2.0 * tail


def sum_d_squared(L: int, A: np.ndarray | None = None) -> float:
    """sum over the cube [-L, L]^3 of D(n)^2 (Z^2 self-energy).

    Expanding (sum_c A(n_c))^2 and using colour symmetry leaves sums over two
    momenta; the third is done in closed form.
    """
    if A is None:
        A = self_energy_table(L)
    ax = np.arange(0, L + 1)
    w = np.where(ax == 0, 1.0, 2.0)
    Aa = A[ax]
    diag, cross = [], []
    for n1 in ax:
        G = _sq_line_sum(n1 * n1 + ax.astype(float) ** 2 + 1.0, L)
        row_w = w[n1] * w
        diag.append(A[n1] ** 2 * np.sum(row_w * G))
        cross.append(A[n1] * np.sum(row_w * Aa * G))
    return 3.0 * math.fsum(diag) + 6.0 * math.fsum(cross)


# ---------------------------------------------------------------------------
# translation identity for the mass counterterm


def wick_translation_identity_check(T: np.ndarray, c: int, N: int, variant: str = "printed") -> float:
    """Max |LHS - RHS| of the mass-counterterm translation identity for colour c.

    ``variant``:
      * ``printed`` - both sides as printed (no overall factor on the RHS);
      * ``full_propagator`` - the subtracted propagator 1/(n^2 + 1) replaces
        1/(n^2 - n_c^2 + 1) on both sides;
      * ``half`` - as printed, with the RHS multiplied by 1/2.

    Only ``half`` is an identity: the RHS equals
    Tr(M - delta m)^2 = V - 2 delta m |T|^2 + (2N+1) delta m^2, twice the LHS.
    """
    d = 2 * N + 1
    if T.shape != (d, d, d):
        raise ValueError("tensor shape does not match the cutoff")
    Tc = np.moveaxis(T, c - 1, 0).reshape(d, d * d)
    M = Tc @ Tc.conj().T  # colour-c matrix, other colours traced
    V = np.sum(M * M.T)
    norm2 = np.sum(np.abs(T) ** 2)
    lat = Lattice(N)
    n = lat.momenta
    if variant == "full_propagator":
        sub = lat.propagator
    else:
        sub = 1.0 / ((n ** 2).sum(axis=1) - n[:, c - 1] ** 2 + 1.0)
    sub = np.moveaxis(sub.reshape(d, d, d), c - 1, 0).reshape(d, d * d)
    dm = mass_counterterm(N)
    # sum_{n,p: n_c = p_c} sub(n) sub(p)
    K = np.sum(sub.sum(axis=1) ** 2)
    lhs = 0.5 * V - dm * norm2 + 0.5 * K
    # RHS: sum_{a,b} (M_ab - delta_ab s_a)(M_ba - delta_ab s_a), s_a = sum_rest sub
    Mt = M - np.diag(sub.sum(axis=1))
    rhs = np.sum(Mt * Mt.T)
    if variant == "half":
        rhs = 0.5 * rhs
    elif variant not in ("printed", "full_propagator"):
        raise ValueError(variant)
    return float(abs(lhs - rhs))


# ---------------------------------------------------------------------------
# export and cache


def write_counterterm_csv(cs: CountertermSet, fh, tol: float = 0.0) -> None:
    """Columns: quantity, color, cutoff, value, tolerance (complex as re/im)."""
    w = csv.writer(fh)
    w.writerow(["quantity", "color", "cutoff", "value_re", "value_im", "tolerance"])
    for name, c, N, v in cs.rows():
        v = complex(v)
        w.writerow([name, c, N, repr(v.real), repr(v.imag), tol])


def _encode(v):
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, tuple):
        return [_encode(x) for x in v]
    return v


def _decode(v):
    if isinstance(v, list) and len(v) == 2 and all(isinstance(x, float) for x in v):
        return complex(*v)
    if isinstance(v, list):
        return tuple(_decode(x) for x in v)
    return v


def cached_counterterms(params: ModelParams, cache_dir: str | os.PathLike | None) -> CountertermSet:
    """vacuum_counterterms, memoized on disk under a hash of the parameters."""
    if cache_dir is None:
        return vacuum_counterterms(params)
    path = Path(cache_dir) / f"counterterms-{params.digest()}.json"
    if path.exists():
        try:
            data = json.loads(path.read_text())
            return CountertermSet(**{k: _decode(v) for k, v in data.items()})
        except (ValueError, TypeError) as exc:
            warnings.warn(f"ignoring unreadable cache file {path}: {exc}")
    cs = vacuum_counterterms(params)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps({k: _encode(v) for k, v in asdict(cs).items()}))
    tmp.replace(path)
    return cs
