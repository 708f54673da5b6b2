"""Phase-space representations of the subsystem states.

The field is represented by the Wigner quasi-distribution

    W_b(alpha) = sum_n (-1)^n <n| D(alpha)^dag rho_b D(alpha) |n>,

evaluated through the operator identity D(alpha) P D(alpha)^dag = D(2 alpha) P
(P the photon parity), which reduces each grid point to a contraction of
rho_b with closed-form displacement matrix elements

    <n|D(beta)|m> = sqrt(m!/n!) beta^(n-m) e^(-|beta|^2/2) L_m^(n-m)(|beta|^2),   n >= m,

computed with stable Laguerre recurrences.  Quadratures follow the
sqrt(2) alpha = x + i p convention.  'raw' mode keeps the bare sum (so the
vacuum gives W_b(0) = 1); 'normalized' divides by pi so the distribution
integrates to one.

The collective spin is represented on the Bloch sphere by the spherical
multipole expansion W_q(theta, phi) = sum_{l,m} T_{l,m} Y_{l,m}(theta, phi)
with T_{l,m} the expectation values of the irreducible tensor operators.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.special import sph_harm_y

from .observables import field_quadrature_stats

AWF_IMAG_WARN = 1e-9
AWF_IMAG_FAIL = 1e-6


class QuasiprobError(RuntimeError):
    """Inconsistent phase-space computation (e.g. complex AWF residual)."""


# ---------------------------------------------------------------------------
# Wigner 3j symbols (Racah formula, log-factorial cache)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _log_factorial(n: int) -> float:
    return math.lgamma(n + 1)


def _as_twice(x, name: str) -> int:
    two = round(2.0 * x)
    if abs(2.0 * x - two) > 1e-9:
        raise ValueError(f"{name}={x} is not a half-integer")
    return int(two)


def wigner_3j_is_valid(j1, j2, j3, m1, m2, m3) -> bool:
    """True iff the quantum numbers satisfy all selection rules."""
    tj = [_as_twice(v, n) for v, n in ((j1, "j1"), (j2, "j2"), (j3, "j3"))]
    tm = [_as_twice(v, n) for v, n in ((m1, "m1"), (m2, "m2"), (m3, "m3"))]
    if any(j < 0 for j in tj):
        return False
    if tm[0] + tm[1] + tm[2] != 0:
        return False
    for j, m in zip(tj, tm):
        if abs(m) > j or (j + m) % 2 != 0:
            return False
    if (tj[0] + tj[1] + tj[2]) % 2 != 0:
        return False
    if not (abs(tj[0] - tj[1]) <= tj[2] <= tj[0] + tj[1]):
        return False
    return True


@lru_cache(maxsize=65536)
def wigner_3j(j1, j2, j3, m1, m2, m3) -> float:
    """Wigner 3j symbol by the Racah sum.  Invalid quantum-number
    combinations return 0 by convention (query wigner_3j_is_valid for the
    flag); non-half-integer arguments raise."""
    if not wigner_3j_is_valid(j1, j2, j3, m1, m2, m3):
        # raises on malformed arguments, returns False on selection rules
        return 0.0

    def lf(x: float) -> float:
        n = round(x)
        if abs(x - n) > 1e-9 or n < 0:
            raise ValueError(f"internal factorial argument {x} invalid")
        return _log_factorial(int(n))

    log_delta = 0.5 * (lf(j1 + j2 - j3) + lf(j1 - j2 + j3) + lf(-j1 + j2 + j3)
                       - lf(j1 + j2 + j3 + 1))
    log_pref = 0.5 * (lf(j1 + m1) + lf(j1 - m1) + lf(j2 + m2) + lf(j2 - m2)
                      + lf(j3 + m3) + lf(j3 - m3))
    k_min = round(max(0.0, j2 - j3 - m1, j1 - j3 + m2))
    k_max = round(min(j1 + j2 - j3, j1 - m1, j2 + m2))
    if k_max < k_min:
        return 0.0
    term_logs, signs = [], []
    for k in range(k_min, k_max + 1):
        term_logs.append(-(lf(k) + lf(j1 + j2 - j3 - k) + lf(j1 - m1 - k)
                           + lf(j2 + m2 - k) + lf(j3 - j2 + m1 + k)
                           + lf(j3 - j1 - m2 + k)))
        signs.append(-1.0 if k % 2 else 1.0)
    t_max = max(term_logs)
    total = sum(s * math.exp(t - t_max) for s, t in zip(signs, term_logs))
    phase = -1.0 if round(j1 - j2 - m3) % 2 else 1.0
    return phase * math.exp(log_delta + log_pref + t_max) * total


# ---------------------------------------------------------------------------
# Spin multipoles and the Agarwal-Wigner function
# ---------------------------------------------------------------------------

def multipole_expectations(rho_q: np.ndarray) -> np.ndarray:
    """Multipole table T[l, m + N] = tr(rho_q T_lm), l = 0..N, m = -l..l.

    The tensor operator matrix element is
    <j,M|T_lm|j,M'> = (-1)^(j-M) sqrt(2l+1) * 3j(j, l, j; -M, m, M'),
    with j = N/2 and basis index s = M + j.  Entries outside |m| <= l stay 0.
    """
    n_qubits = rho_q.shape[0] - 1
    j = n_qubits / 2.0
    table = np.zeros((n_qubits + 1, 2 * n_qubits + 1), dtype=complex)
    ms = np.arange(n_qubits + 1) - j  # M values per basis index
    for l in range(n_qubits + 1):
        pref = math.sqrt(2 * l + 1)
        for m in range(-l, l + 1):
            acc = 0.0 + 0.0j
            for s, big_m in enumerate(ms):
                big_mp = big_m - m  # forced by -M + m + M' = 0
                sp_idx = round(big_mp + j)
                if not (0 <= sp_idx <= n_qubits):
                    continue
                w3 = wigner_3j(j, l, j, -big_m, m, big_mp)
                if w3 == 0.0:
                    continue
                phase = -1.0 if round(j - big_m) % 2 else 1.0
                # tr(rho |j,M><j,M'|) = <j,M'| rho |j,M>
                acc += phase * pref * w3 * rho_q[sp_idx, s]
            table[l, m + n_qubits] = acc
    return table


@dataclass(frozen=True)
class SphereGrid:
    """Gauss-Legendre x uniform-azimuth quadrature grid on the Bloch sphere."""

    n_theta: int = 64
    n_phi: int = 128

    def __post_init__(self):
        if self.n_theta < 2 or self.n_phi < 2:
            raise ValueError("grid needs at least 2 points per direction")

    @cached_property
    def _gauss(self) -> tuple[np.ndarray, np.ndarray]:
        x, w = np.polynomial.legendre.leggauss(self.n_theta)
        order = np.argsort(-x)  # descending cos(theta) => ascending theta
        return x[order], w[order]

    @property
    def thetas(self) -> np.ndarray:
        return np.arccos(self._gauss[0])

    @property
    def phis(self) -> np.ndarray:
        return np.linspace(0.0, 2.0 * math.pi, self.n_phi, endpoint=False)

    @property
    def weights(self) -> np.ndarray:
        """(n_theta, n_phi) surface weights; they sum to 4*pi."""
        w_theta = self._gauss[1]
        return np.outer(w_theta, np.full(self.n_phi, 2.0 * math.pi / self.n_phi))


def agarwal_wigner(rho_q: np.ndarray, grid: SphereGrid) -> np.ndarray:
    """Spin Wigner function W_q(theta, phi) on the grid, shape
    (n_theta, n_phi).  Raises if the imaginary residual of the harmonic sum
    exceeds 1e-6 (a broken multipole table)."""
    table = multipole_expectations(rho_q)
    n_qubits = rho_q.shape[0] - 1
    theta = grid.thetas[:, None]
    phi = grid.phis[None, :]
    w = np.zeros((grid.n_theta, grid.n_phi), dtype=complex)
    for l in range(n_qubits + 1):
        for m in range(-l, l + 1):
            coeff = table[l, m + n_qubits]
            if coeff == 0.0:
                continue
            w += coeff * sph_harm_y(l, m, theta, phi)
    resid = float(np.max(np.abs(w.imag)))
    if resid > AWF_IMAG_FAIL:
        raise QuasiprobError(f"AWF imaginary residual {resid:.3e} exceeds {AWF_IMAG_FAIL:.0e}")
    if resid > AWF_IMAG_WARN:
        warnings.warn(f"AWF imaginary residual {resid:.3e} above {AWF_IMAG_WARN:.0e}",
                      stacklevel=2)
    return w.real


# ---------------------------------------------------------------------------
# Field Wigner function
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlaneGrid:
    """Uniform rectangular grid in the (x, p) quadrature plane."""

    x_min: float = -5.0
    x_max: float = 5.0
    p_min: float = -5.0
    p_max: float = 5.0
    n_x: int = 201
    n_p: int = 201

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.p_max > self.p_min):
            raise ValueError("grid ranges must be non-empty")
        if self.n_x < 2 or self.n_p < 2:
            raise ValueError("grid needs at least 2 points per direction")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def ps(self) -> np.ndarray:
        return np.linspace(self.p_min, self.p_max, self.n_p)


@dataclass
class WignerField:
    """Field Wigner function sampled on a PlaneGrid; values[i, j] is
    W(x_i, p_j)."""

    grid: PlaneGrid
    values: np.ndarray
    mode: str  # "raw" or "normalized"

    def integral(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.values, self.grid.ps, axis=1),
                                  self.grid.xs))


def _displacement_trace(rho_signed: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """sum_{m,n} rho_signed[m, n] * <n|D(beta)|m> for a batch of beta values.

    Only the diagonals of rho_signed enter at each Laguerre offset, so the
    cost is O(n_grid * fock^2) without materializing any D matrix.
    """
    fock = rho_signed.shape[0]
    x = np.abs(beta) ** 2
    envelope = np.exp(-0.5 * x)
    out = np.zeros(beta.shape, dtype=complex)
    for d in range(fock):
        n_terms = fock - d
        ks = np.arange(n_terms)
        # sqrt(k!/(k+d)!)
        coef = np.exp(0.5 * (np.array([_log_factorial(int(k)) for k in ks])
                             - np.array([_log_factorial(int(k + d)) for k in ks])))
        # associated Laguerre L_k^(d)(x), k = 0..n_terms-1, recurrence in k
        lag = np.empty((n_terms,) + beta.shape)
        lag[0] = 1.0
        if n_terms > 1:
            lag[1] = 1.0 + d - x
            for k in range(1, n_terms - 1):
                lag[k + 1] = ((2 * k + 1 + d - x) * lag[k] - (k + d) * lag[k - 1]) / (k + 1)
        upper = np.diagonal(rho_signed, d) * coef     # rho[k, k+d] <n=k+d|D|m=k>
        contrib = np.tensordot(upper, lag, axes=(0, 0)) * beta ** d
        if d > 0:
            lower = np.diagonal(rho_signed, -d) * coef  # rho[k+d, k] <n=k|D|m=k+d>
            contrib = contrib + np.tensordot(lower, lag, axes=(0, 0)) * (-beta.conj()) ** d
        out += contrib
    return out * envelope


def field_wigner(rho_b: np.ndarray, grid: PlaneGrid, mode: str = "normalized",
                 chunk: int = 4096) -> WignerField:
    """Field Wigner function on the quadrature grid.

    mode="raw" evaluates the bare parity sum; "normalized" divides by pi so
    the function integrates to 1.  Warns (with a recommendation) if the grid
    does not cover the state's support as judged by its quadrature stats.
    """
    if mode not in ("raw", "normalized"):
        raise ValueError(f"mode must be 'raw' or 'normalized', got {mode!r}")
    stats = field_quadrature_stats(rho_b)
    pad_x = 4.0 * math.sqrt(max(stats.var_x, 0.0))
    pad_p = 4.0 * math.sqrt(max(stats.var_p, 0.0))
    if (stats.mean_x - pad_x < grid.x_min or stats.mean_x + pad_x > grid.x_max
            or stats.mean_p - pad_p < grid.p_min or stats.mean_p + pad_p > grid.p_max):
        warnings.warn(
            "grid may not cover the state support; recommend x in "
            f"[{stats.mean_x - pad_x:.2f}, {stats.mean_x + pad_x:.2f}], p in "
            f"[{stats.mean_p - pad_p:.2f}, {stats.mean_p + pad_p:.2f}]",
            stacklevel=2)

    signs = np.where(np.arange(rho_b.shape[0]) % 2 == 0, 1.0, -1.0)
    rho_signed = signs[:, None] * rho_b  # (-1)^m rho[m, n]

    xs, ps = grid.xs, grid.ps
    alphas = ((xs[:, None] + 1j * ps[None, :]) / math.sqrt(2.0)).ravel()
    values = np.empty(alphas.shape, dtype=float)
    for start in range(0, len(alphas), chunk):
        sl = slice(start, start + chunk)
        w = _displacement_trace(rho_signed, 2.0 * alphas[sl])
        values[sl] = w.real
    values = values.reshape(grid.n_x, grid.n_p)
    if mode == "normalized":
        values = values / math.pi
    return WignerField(grid, values, mode)


def negativity_volume(wf: WignerField) -> float:
    """Integral of the negative part, int max(0, -W) dx dp, by grid
    quadrature.  Requires a normalized-mode field."""
    if wf.mode != "normalized":
        raise ValueError("negativity volume is defined on the normalized mode")
    neg = np.maximum(0.0, -wf.values)
    return float(np.trapezoid(np.trapezoid(neg, wf.grid.ps, axis=1), wf.grid.xs))


def fringe_wavelength(wf: WignerField, axis: str = "p") -> float:
    """Crude sub-Planck diagnostic: dominant interference wavelength of the
    central cut of W along x or p, from the FFT peak at nonzero frequency.
    Returns inf when no oscillatory component stands out."""
    if axis == "p":
        cut = wf.values[wf.grid.n_x // 2, :]
        step = (wf.grid.p_max - wf.grid.p_min) / (wf.grid.n_p - 1)
    elif axis == "x":
        cut = wf.values[:, wf.grid.n_p // 2]
        step = (wf.grid.x_max - wf.grid.x_min) / (wf.grid.n_x - 1)
    else:
        raise ValueError("axis must be 'x' or 'p'")
    spec = np.abs(np.fft.rfft(cut - cut.mean()))
    freqs = np.fft.rfftfreq(len(cut), d=step)
    if len(spec) < 2 or spec[1:].max() == 0.0:
        return math.inf
    k = 1 + int(np.argmax(spec[1:]))
    return float(1.0 / freqs[k]) if freqs[k] > 0 else math.inf
