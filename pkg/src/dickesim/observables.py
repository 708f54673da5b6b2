"""Scalar diagnostics of a Dicke-model state.

Order parameters are the scaled excitation densities <Jz>/N + 1/2 (matter)
and <a^dag a>/N (light).  Spin squeezing is reported as 1 - xi_q^2 with
1 - xi_q^2 = (2/N)(|<J+^2>| + <Jz^2> - N^2/4), which for even-parity unitary
evolution equals (N-1) times the two-qubit Wootters concurrence.  Field
squeezing is 1 - xi_b^2 where xi_b^2 is the minimal principal variance of
the quadrature covariance matrix, with x = (a + a^dag)/sqrt(2) and
p = i (a^dag - a)/sqrt(2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import HilbertSpace, QuantumState

# Fixed CSV column order for trajectory exports (versioned; do not reorder).
OBSERVABLE_COLUMNS = (
    "t", "lambda", "qubit_op", "field_op", "spin_sq", "concurrence",
    "field_sq", "parity", "purity_qubits", "purity_field",
)

_SIGMA_YY = np.array([
    [0, 0, 0, -1],
    [0, 0, 1, 0],
    [0, 1, 0, 0],
    [-1, 0, 0, 0],
], dtype=complex)

# Triplet states embedded in the computational basis {uu, ud, du, dd};
# columns are |1,-1>, |1,0>, |1,+1>.
_TRIPLET_EMBED = np.array([
    [0.0, 0.0, 1.0],
    [0.0, 1.0 / math.sqrt(2.0), 0.0],
    [0.0, 1.0 / math.sqrt(2.0), 0.0],
    [1.0, 0.0, 0.0],
])


@dataclass(frozen=True)
class ObservableRecord:
    """One time sample of all scalar observables along a trajectory."""

    t: float
    lam: float
    qubit_op: float
    field_op: float
    spin_sq: float
    concurrence: float
    field_sq: float
    parity: float
    purity_qubits: float
    purity_field: float

    def as_row(self) -> tuple[float, ...]:
        return (self.t, self.lam, self.qubit_op, self.field_op, self.spin_sq,
                self.concurrence, self.field_sq, self.parity,
                self.purity_qubits, self.purity_field)


@dataclass(frozen=True)
class QuadratureStats:
    mean_x: float
    mean_p: float
    var_x: float
    var_p: float
    cov_xp: float


def _full_matrix_view(state: QuantumState) -> tuple[np.ndarray, HilbertSpace]:
    """State amplitudes reshaped to (spin_dim, fock_dim) for pure states, or
    the full density matrix reshaped to the 4-index tensor."""
    st = state.to_full_space() if state.is_pure else state
    space = st.space
    if st.is_pure:
        return st.data.reshape(space.spin_dim, space.fock_dim), space
    return st.data.reshape(space.spin_dim, space.fock_dim,
                           space.spin_dim, space.fock_dim), space


def reduce_to_qubits(state: QuantumState) -> np.ndarray:
    """Partial trace over the field: (N+1) x (N+1) density matrix of the
    collective spin in the Dicke basis (s = m + N/2)."""
    view, _ = _full_matrix_view(state)
    if state.is_pure:
        return view @ view.conj().T
    return np.einsum("abcb->ac", view)


def reduce_to_field(state: QuantumState) -> np.ndarray:
    """Partial trace over the qubits: fock_dim x fock_dim field density matrix."""
    view, _ = _full_matrix_view(state)
    if state.is_pure:
        return view.T @ view.conj()
    return np.einsum("abad->bd", view)


def purity(rho: np.ndarray) -> float:
    """tr(rho^2) for a (near-)Hermitian matrix."""
    return float(np.sum(rho * rho.T).real)


def validate_density(rho: np.ndarray, trace_tol: float = 1e-10,
                     eig_tol: float = 1e-8) -> None:
    """Sanity checks for a reduced density matrix."""
    if abs(np.trace(rho).real - 1.0) > trace_tol:
        raise ValueError(f"reduced matrix trace {np.trace(rho).real} deviates from 1")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-9:
        raise ValueError("reduced matrix is not Hermitian")
    if np.linalg.eigvalsh(rho).min() < -eig_tol:
        raise ValueError("reduced matrix has a negative eigenvalue")


def _jz_values(n_qubits: int) -> np.ndarray:
    return np.arange(n_qubits + 1) - n_qubits / 2.0


def collective_spin_moments(rho_q: np.ndarray) -> dict[str, complex]:
    """<Jz>, <Jz^2> and <J+^2> from the collective-spin density matrix."""
    n_qubits = rho_q.shape[0] - 1
    j = n_qubits / 2.0
    m = _jz_values(n_qubits)
    diag = np.diagonal(rho_q).real
    ladder = np.sqrt(j * (j + 1) - m[:-1] * (m[:-1] + 1))  # <m+1|J+|m>
    # tr(rho J+^2) = sum_s rho[s, s+2] * <m_s+2|J+^2|m_s>
    jp2 = ladder[1:] * ladder[:-1]
    return {
        "jz": complex(np.dot(diag, m)),
        "jz2": complex(np.dot(diag, m * m)),
        "jplus2": complex(np.dot(np.diagonal(rho_q, 2), jp2)),
    }


def spin_squeezing_even(state_or_rho_q) -> float:
    """1 - xi_q^2 = (2/N)(|<J+^2>| + <Jz^2> - N^2/4).

    Valid as an entanglement witness in the even-parity unitary regime; the
    formula itself is evaluable for any state.  Accepts a QuantumState or an
    already-reduced collective-spin density matrix.
    """
    rho_q = (reduce_to_qubits(state_or_rho_q)
             if isinstance(state_or_rho_q, QuantumState) else state_or_rho_q)
    n_qubits = rho_q.shape[0] - 1
    mom = collective_spin_moments(rho_q)
    return (2.0 / n_qubits) * (abs(mom["jplus2"]) + mom["jz2"].real - n_qubits ** 2 / 4.0)


def _pair_coefficients(n_qubits: int) -> np.ndarray:
    """Branching coefficients c[t, k] of the symmetric decomposition

        |j=N/2, k excitations> = sum_t c[t,k] |pair: t exc> |rest: k-t exc>

    with c[t,k] = sqrt(C(2,t) C(N-2,k-t) / C(N,k)), zero outside the domain.
    """
    c = np.zeros((3, n_qubits + 1))
    for k in range(n_qubits + 1):
        for t in range(3):
            if 0 <= k - t <= n_qubits - 2:
                c[t, k] = math.sqrt(
                    math.comb(2, t) * math.comb(n_qubits - 2, k - t)
                    / math.comb(n_qubits, k))
    return c


def pair_dm_from_collective(rho_q: np.ndarray) -> np.ndarray:
    """Two-qubit reduced density matrix of a symmetric N-qubit state given on
    the Dicke manifold, in the computational basis {uu, ud, du, dd}.

    The singlet component vanishes by symmetry; the triplet block is obtained
    by tracing the branching decomposition over the remaining N-2 qubits.
    """
    n_qubits = rho_q.shape[0] - 1
    if n_qubits < 2:
        raise ValueError("pair reduction needs at least 2 qubits")
    if n_qubits == 2:
        tri = rho_q.astype(complex)  # already the triplet block (k = 0,1,2)
    else:
        c = _pair_coefficients(n_qubits)
        tri = np.zeros((3, 3), dtype=complex)
        for t in range(3):
            for tp in range(3):
                # matching rest-excitations forces k' = k + tp - t
                ks = np.arange(n_qubits + 1)
                kps = ks + tp - t
                ok = (kps >= 0) & (kps <= n_qubits)
                ks, kps = ks[ok], kps[ok]
                tri[t, tp] = np.sum(c[t, ks] * c[tp, kps] * rho_q[ks, kps])
    return _TRIPLET_EMBED @ tri @ _TRIPLET_EMBED.T


def two_qubit_reduced_dm(state: QuantumState) -> np.ndarray:
    """4x4 reduced density matrix of any qubit pair (all pairs are equivalent
    on the maximal Dicke manifold)."""
    return pair_dm_from_collective(reduce_to_qubits(state))


def wootters_concurrence(rho2: np.ndarray) -> float:
    """Wootters concurrence of a two-qubit density matrix:
    max(0, mu1 - mu2 - mu3 - mu4) with mu_i the decreasing square roots of
    the eigenvalues of rho (sy x sy) rho* (sy x sy)."""
    if rho2.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got {rho2.shape}")
    r = rho2 @ _SIGMA_YY @ rho2.conj() @ _SIGMA_YY
    mu = np.sqrt(np.clip(np.linalg.eigvals(r).real, 0.0, None))
    mu.sort()
    return float(max(0.0, mu[-1] - mu[-2] - mu[-3] - mu[-4]))


def field_moments(rho_b: np.ndarray) -> dict[str, complex]:
    """<a>, <a^2> and <a^dag a> from the field density matrix."""
    fock = rho_b.shape[0]
    n = np.arange(fock)
    a_mean = np.dot(np.sqrt(n[1:]), np.diagonal(rho_b, -1)) if fock > 1 else 0.0
    a2_mean = (np.dot(np.sqrt(n[2:] * (n[2:] - 1)), np.diagonal(rho_b, -2))
               if fock > 2 else 0.0)
    n_mean = np.dot(n, np.diagonal(rho_b).real)
    return {"a": complex(a_mean), "a2": complex(a2_mean), "n": complex(n_mean)}


def field_quadrature_stats(state_or_rho_b) -> QuadratureStats:
    """Means, variances, and symmetrized covariance of x and p."""
    rho_b = (reduce_to_field(state_or_rho_b)
             if isinstance(state_or_rho_b, QuantumState) else state_or_rho_b)
    return _stats_from_moments(field_moments(rho_b))


def _stats_from_moments(mom: dict[str, complex]) -> QuadratureStats:
    mean_x = math.sqrt(2.0) * mom["a"].real
    mean_p = math.sqrt(2.0) * mom["a"].imag
    n_mean = mom["n"].real
    var_x = mom["a2"].real + n_mean + 0.5 - mean_x ** 2
    var_p = -mom["a2"].real + n_mean + 0.5 - mean_p ** 2
    cov_xp = mom["a2"].imag - mean_x * mean_p
    return QuadratureStats(mean_x, mean_p, var_x, var_p, cov_xp)


def field_squeezing(stats: QuadratureStats) -> float:
    """1 - xi_b^2 with xi_b^2 = Var x + Var p - sqrt((Var x - Var p)^2 + 4 Cov^2)."""
    xi2 = (stats.var_x + stats.var_p
           - math.sqrt((stats.var_x - stats.var_p) ** 2 + 4.0 * stats.cov_xp ** 2))
    return 1.0 - xi2


def parity_expectation(state: QuantumState) -> float:
    """<Pi> with Pi the joint spin-field parity."""
    if state.space.is_restricted:
        return 1.0 if state.space.parity_sector == "even" else -1.0
    signs = state.space.parity_signs
    if state.is_pure:
        return float(np.dot(signs, np.abs(state.data) ** 2))
    return float(np.dot(signs, np.diagonal(state.data).real))


def observe(state: QuantumState) -> ObservableRecord:
    """Evaluate the full scalar observable suite on one state."""
    n_qubits = state.space.n_qubits
    rho_q = reduce_to_qubits(state)
    rho_b = reduce_to_field(state)
    spin_mom = collective_spin_moments(rho_q)
    field_mom = field_moments(rho_b)
    stats = _stats_from_moments(field_mom)
    spin_sq = (2.0 / n_qubits) * (abs(spin_mom["jplus2"]) + spin_mom["jz2"].real
                                  - n_qubits ** 2 / 4.0)
    if n_qubits >= 2:
        conc = wootters_concurrence(pair_dm_from_collective(rho_q))
    else:
        conc = 0.0
    return ObservableRecord(
        t=state.time,
        lam=state.lam,
        qubit_op=float(spin_mom["jz"].real / n_qubits + 0.5),
        field_op=float(field_mom["n"].real / n_qubits),
        spin_sq=float(spin_sq),
        concurrence=conc,
        field_sq=field_squeezing(stats),
        parity=parity_expectation(state),
        purity_qubits=purity(rho_q),
        purity_field=purity(rho_b),
    )
