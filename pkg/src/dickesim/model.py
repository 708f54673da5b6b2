"""Hilbert space, operators, and states of the driven Dicke model.

Conventions used throughout the package (fixed so results are reproducible
bit-for-bit):

* The qubit part lives on the maximal Dicke manifold j = N/2, so the spin
  factor has dimension N+1.  Basis label s = 0..N corresponds to the Jz
  eigenvalue m = s - N/2.
* The field mode is truncated to Fock states n = 0..n_max-1.
* Product basis is spin-major, Fock-minor: composite index i = s*n_max + n.
* Density matrices are vectorized by column stacking, i.e.
  vec(rho)[i + j*dim] = rho[i, j], so vec(A rho B) = (B^T kron A) vec(rho).
* Parity is (-1)^(m + N/2 + n) = (-1)^(s + n); the initial ground state
  (all qubits down, vacuum) has parity +1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh

PARITY_SECTORS = ("full", "even", "odd")

# Default cap on the dense diagonalization used by spectral_gap.
DENSE_DIM_LIMIT = 4000


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of one Dicke-model run.

    epsilon and omega are the qubit and field excitation energies, kappa the
    cavity damping rate, nbar the thermal mean photon number of the bath,
    fock_cutoff the (exclusive) Fock truncation index.
    """

    n_qubits: int
    fock_cutoff: int
    epsilon: float = 1.0
    omega: float = 1.0
    kappa: float = 0.0
    nbar: float = 0.0

    def __post_init__(self):
        if int(self.n_qubits) != self.n_qubits or self.n_qubits < 1:
            raise ValueError(f"n_qubits must be a positive integer, got {self.n_qubits}")
        if int(self.fock_cutoff) != self.fock_cutoff or self.fock_cutoff < 1:
            raise ValueError(f"fock_cutoff must be a positive integer, got {self.fock_cutoff}")
        if self.kappa < 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if self.nbar < 0:
            raise ValueError(f"nbar must be >= 0, got {self.nbar}")

    @property
    def lambda_c(self) -> float:
        """Thermodynamic-limit critical coupling sqrt(epsilon*omega)/2."""
        return math.sqrt(self.epsilon * self.omega) / 2.0

    def space(self, parity_sector: str = "full") -> "HilbertSpace":
        return HilbertSpace(self.n_qubits, self.fock_cutoff, parity_sector)


@dataclass(frozen=True)
class HilbertSpace:
    """Product space (Dicke manifold) x (truncated Fock), optionally
    restricted to one parity sector."""

    n_qubits: int
    fock_cutoff: int
    parity_sector: str = "full"

    def __post_init__(self):
        if self.parity_sector not in PARITY_SECTORS:
            raise ValueError(f"parity_sector must be one of {PARITY_SECTORS}")

    @property
    def j(self) -> float:
        return self.n_qubits / 2.0

    @property
    def spin_dim(self) -> int:
        return self.n_qubits + 1

    @property
    def fock_dim(self) -> int:
        return self.fock_cutoff

    @property
    def total_dim(self) -> int:
        """Dimension of the unrestricted product space."""
        return self.spin_dim * self.fock_dim

    @cached_property
    def parity_signs(self) -> np.ndarray:
        """(-1)^(s+n) for every composite index of the full product space."""
        s = np.arange(self.spin_dim)[:, None]
        n = np.arange(self.fock_dim)[None, :]
        return np.where((s + n) % 2 == 0, 1.0, -1.0).ravel()

    @cached_property
    def sector_indices(self) -> np.ndarray:
        """Full-space composite indices retained in this sector."""
        if self.parity_sector == "full":
            return np.arange(self.total_dim)
        want = 1.0 if self.parity_sector == "even" else -1.0
        return np.flatnonzero(self.parity_signs == want)

    @property
    def dim(self) -> int:
        """Length of state vectors on this (possibly restricted) space."""
        return len(self.sector_indices)

    @property
    def is_restricted(self) -> bool:
        return self.parity_sector != "full"

    def composite_index(self, s: int, n: int) -> int:
        if not (0 <= s < self.spin_dim and 0 <= n < self.fock_dim):
            raise IndexError(f"(s={s}, n={n}) outside basis")
        return s * self.fock_dim + n

    def split_index(self, i: int) -> tuple[int, int]:
        return divmod(i, self.fock_dim)

    def m_value(self, s: int) -> float:
        return s - self.j

    def full(self) -> "HilbertSpace":
        return self if self.parity_sector == "full" else replace(self, parity_sector="full")

    def embed(self, vec: np.ndarray) -> np.ndarray:
        """Scatter a sector vector into the full product space."""
        if not self.is_restricted:
            return vec
        out = np.zeros(self.total_dim, dtype=complex)
        out[self.sector_indices] = vec
        return out

    def restrict(self, vec_full: np.ndarray) -> np.ndarray:
        """Keep the components of a full-space vector lying in this sector."""
        return vec_full[self.sector_indices]

    def project_operator(self, op: sp.spmatrix) -> sp.csr_matrix:
        """Sector block of a full-space operator (valid if op preserves the
        sector, which holds for every parity-even operator)."""
        ix = self.sector_indices
        return sp.csr_matrix(op.tocsr()[ix][:, ix])


@dataclass(eq=False)
class QuantumState:
    """Pure state vector or density matrix on a HilbertSpace.

    data is a complex vector of length space.dim (pure) or a dense complex
    matrix space.dim x space.dim (density).  time and lam record the instant
    and coupling the snapshot belongs to.
    """

    kind: str
    space: HilbertSpace
    data: np.ndarray
    time: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("pure", "density"):
            raise ValueError(f"kind must be 'pure' or 'density', got {self.kind!r}")
        d = self.space.dim
        want = (d,) if self.kind == "pure" else (d, d)
        if self.data.shape != want:
            raise ValueError(f"data shape {self.data.shape} does not match space shape {want}")
        self.data = np.ascontiguousarray(self.data, dtype=complex)

    @property
    def is_pure(self) -> bool:
        return self.kind == "pure"

    def norm(self) -> float:
        """L2 norm (pure) or trace (density)."""
        if self.is_pure:
            return float(np.linalg.norm(self.data))
        return float(np.trace(self.data).real)

    def to_full_space(self) -> "QuantumState":
        """Embed a parity-sector state into the full product space."""
        if not self.space.is_restricted:
            return self
        if not self.is_pure:
            raise ValueError("density matrices are only supported on the full space")
        return QuantumState("pure", self.space.full(), self.space.embed(self.data),
                            self.time, self.lam)

    def to_density(self) -> "QuantumState":
        """Promote a pure state to a density matrix on the full space."""
        if not self.is_pure:
            return self
        full = self.to_full_space()
        rho = np.outer(full.data, full.data.conj())
        return QuantumState("density", full.space, rho, self.time, self.lam)

    def validate(self, norm_tol: float = 1e-9, herm_tol: float = 1e-12,
                 eig_tol: float = 1e-8) -> None:
        """Raise ValueError if the state violates its defining invariants."""
        if self.is_pure:
            if abs(self.norm() - 1.0) > norm_tol:
                raise ValueError(f"pure state norm {self.norm()} deviates from 1")
            return
        rho = self.data
        if abs(np.trace(rho).real - 1.0) > norm_tol:
            raise ValueError(f"density trace {np.trace(rho).real} deviates from 1")
        if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
            raise ValueError("density matrix is not Hermitian")
        evals = np.linalg.eigvalsh(rho)
        if evals.min() < -eig_tol:
            raise ValueError(f"density matrix has negative eigenvalue {evals.min()}")


# ---------------------------------------------------------------------------
# Operator construction.  Spin/field factors are built small and dense-ish,
# then kron'ed onto the product space as CSR matrices.
# ---------------------------------------------------------------------------

def _spin_factors(n_qubits: int) -> dict[str, sp.csr_matrix]:
    j = n_qubits / 2.0
    m = np.arange(n_qubits + 1) - j
    # <m+1|J+|m> = sqrt(j(j+1) - m(m+1)), stored at row s+1, col s
    raise_elems = np.sqrt(j * (j + 1) - m[:-1] * (m[:-1] + 1))
    jz = sp.diags(m)
    jplus = sp.diags(raise_elems, -1)
    jminus = sp.diags(raise_elems, 1)
    jx = (jplus + jminus) / 2.0
    return {k: sp.csr_matrix(v, dtype=complex)
            for k, v in {"jz": jz, "jplus": jplus, "jminus": jminus, "jx": jx}.items()}


def _field_factors(fock_cutoff: int) -> dict[str, sp.csr_matrix]:
    n = np.arange(fock_cutoff)
    # <n-1|a|n> = sqrt(n), stored at row n-1, col n
    a = sp.diags(np.sqrt(n[1:]), 1, shape=(fock_cutoff, fock_cutoff))
    adag = sp.diags(np.sqrt(n[1:]), -1, shape=(fock_cutoff, fock_cutoff))
    number = sp.diags(n.astype(float))
    return {k: sp.csr_matrix(v, dtype=complex)
            for k, v in {"a": a, "adag": adag, "number": number}.items()}


def _require_full(space: HilbertSpace, what: str) -> None:
    if space.is_restricted:
        raise ValueError(f"{what} requires the full (unrestricted) space; "
                         f"got parity_sector={space.parity_sector!r}")


def _clean(op: sp.spmatrix) -> sp.csr_matrix:
    out = sp.csr_matrix(op)
    out.sum_duplicates()
    out.eliminate_zeros()
    return out


def build_spin_operators(space: HilbertSpace) -> dict[str, sp.csr_matrix]:
    """Collective spin operators Jx, Jz, J+, J- on the product space
    (identity on the Fock factor).  J+ and J- flip parity, so a full space
    is required."""
    _require_full(space, "build_spin_operators")
    fac = _spin_factors(space.n_qubits)
    eye_f = sp.identity(space.fock_dim, dtype=complex, format="csr")
    return {k: _clean(sp.kron(v, eye_f)) for k, v in fac.items()}


def build_field_operators(space: HilbertSpace) -> dict[str, sp.csr_matrix]:
    """Field operators a, a^dag, a^dag a on the product space (identity on
    the spin factor)."""
    _require_full(space, "build_field_operators")
    fac = _field_factors(space.fock_dim)
    eye_s = sp.identity(space.spin_dim, dtype=complex, format="csr")
    return {k: _clean(sp.kron(eye_s, v)) for k, v in fac.items()}


def hamiltonian_parts(space: HilbertSpace,
                      params: ModelParams) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Split H(lambda) = H0 + lambda * V.

    H0 = epsilon*Jz + omega*a^dag a is the bare part; V = (2/sqrt(N)) Jx (a + a^dag)
    carries the controlled coupling.  Both preserve total parity, so they are
    projected onto restricted spaces when asked for.
    """
    spin = _spin_factors(space.n_qubits)
    field = _field_factors(space.fock_dim)
    eye_s = sp.identity(space.spin_dim, dtype=complex, format="csr")
    eye_f = sp.identity(space.fock_dim, dtype=complex, format="csr")
    h0 = params.epsilon * sp.kron(spin["jz"], eye_f) + params.omega * sp.kron(eye_s, field["number"])
    v = (2.0 / math.sqrt(space.n_qubits)) * sp.kron(spin["jx"], field["a"] + field["adag"])
    h0, v = _clean(h0), _clean(v)
    if space.is_restricted:
        h0, v = space.project_operator(h0), space.project_operator(v)
    return h0, v


def build_hamiltonian(space: HilbertSpace, params: ModelParams, lam: float) -> sp.csr_matrix:
    """H(lambda) = epsilon*Jz + omega*a^dag a + (2 lambda/sqrt(N)) Jx (a^dag + a)."""
    if lam < 0:
        raise ValueError(f"coupling lambda must be >= 0, got {lam}")
    h0, v = hamiltonian_parts(space, params)
    return _clean(h0 + lam * v)


def build_parity_operator(space: HilbertSpace) -> sp.csr_matrix:
    """Diagonal parity operator with entries (-1)^(m + N/2 + n)."""
    signs = space.parity_signs[space.sector_indices]
    return sp.csr_matrix(sp.diags(signs.astype(complex)))


def liouvillian_parts(space: HilbertSpace,
                      params: ModelParams) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Split L(lambda) = L0 + lambda * L1 acting on column-stacked rho.

    L0 holds the bare-Hamiltonian commutator and the full dissipator; L1 is
    the commutator of the coupling term.  Dissipation mixes parity sectors,
    so kappa > 0 demands the full space.
    """
    if params.kappa > 0:
        _require_full(space, "build_liouvillian with kappa > 0")
    h0, v = hamiltonian_parts(space, params)
    dim = h0.shape[0]
    eye = sp.identity(dim, dtype=complex, format="csr")

    def commutator_super(h):
        return -1j * (sp.kron(eye, h) - sp.kron(h.T, eye))

    l0 = commutator_super(h0)
    l1 = commutator_super(v)
    if params.kappa > 0:
        field = build_field_operators(space)
        a, adag = field["a"], field["adag"]
        ada = _clean(adag @ a)
        aad = _clean(a @ adag)
        k_down = params.kappa * (params.nbar + 1.0)
        l0 = l0 + k_down * (2.0 * sp.kron(adag.T, a)
                            - sp.kron(eye, ada) - sp.kron(ada.T, eye))
        if params.nbar > 0:
            k_up = params.kappa * params.nbar
            l0 = l0 + k_up * (2.0 * sp.kron(a.T, adag)
                              - sp.kron(eye, aad) - sp.kron(aad.T, eye))
    return _clean(l0), _clean(l1)


def build_liouvillian(space: HilbertSpace, params: ModelParams, lam: float) -> sp.csr_matrix:
    """Full generator of d(rho)/dt at coupling lam, as a dim^2 x dim^2 sparse
    superoperator on column-stacked density matrices."""
    if lam < 0:
        raise ValueError(f"coupling lambda must be >= 0, got {lam}")
    l0, l1 = liouvillian_parts(space, params)
    return _clean(l0 + lam * l1)


def initial_state(space: HilbertSpace, params: ModelParams) -> QuantumState:
    """Ground-state qubits times the field thermal state at mean photon
    number nbar.  Pure (vacuum field) when nbar = 0, else a density matrix
    normalized over the truncated Fock space."""
    if params.nbar == 0.0:
        ground_full = 0  # s = 0 (m = -N/2), n = 0
        if space.is_restricted:
            if space.parity_sector != "even":
                raise ValueError("the ground state has even parity; use the even or full sector")
            local = int(np.searchsorted(space.sector_indices, ground_full))
            psi = np.zeros(space.dim, dtype=complex)
            psi[local] = 1.0
        else:
            psi = np.zeros(space.dim, dtype=complex)
            psi[ground_full] = 1.0
        return QuantumState("pure", space, psi, time=0.0, lam=0.0)

    _require_full(space, "thermal initial_state (nbar > 0)")
    q = params.nbar / (params.nbar + 1.0)
    tail = q ** space.fock_dim  # weight of the discarded infinite-series tail
    if tail > 1e-10:
        warnings.warn(
            f"thermal tail beyond fock_cutoff={space.fock_dim} carries weight "
            f"{tail:.3e} > 1e-10; increase the cutoff", stacklevel=2)
    weights = q ** np.arange(space.fock_dim)
    weights /= weights.sum()  # renormalize over the truncated space
    rho = np.zeros((space.dim, space.dim), dtype=complex)
    idx = np.arange(space.fock_dim)  # block s = 0
    rho[idx, idx] = weights
    return QuantumState("density", space, rho, time=0.0, lam=0.0)


def spectral_gap(space: HilbertSpace, params: ModelParams, lam: float,
                 dim_limit: int = DENSE_DIM_LIMIT) -> float:
    """E1 - E0 of H(lambda) restricted to the even-parity sector, by dense
    diagonalization.  Refuses spaces beyond dim_limit."""
    even = replace(space, parity_sector="even")
    if even.dim > dim_limit:
        raise ValueError(f"even-sector dimension {even.dim} exceeds the dense "
                         f"diagonalization limit {dim_limit}")
    h = build_hamiltonian(even, params, lam).toarray()
    evals = eigh(h, eigvals_only=True, subset_by_index=(0, 1))
    return float(evals[1] - evals[0])


def export_sparse_triplets(op: sp.spmatrix, path) -> None:
    """Write an operator in the textual triplet format: a 'rows cols nnz'
    header, then one 'row col re im' line per stored entry (row-major)."""
    coo = sp.coo_matrix(op)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for k in order:
            v = coo.data[k]
            fh.write(f"{coo.row[k]} {coo.col[k]} {v.real:.17g} {v.imag:.17g}\n")


def read_sparse_triplets(path) -> sp.csr_matrix:
    """Inverse of export_sparse_triplets."""
    with open(path) as fh:
        rows, cols, nnz = (int(x) for x in fh.readline().split())
        r = np.empty(nnz, dtype=int)
        c = np.empty(nnz, dtype=int)
        d = np.empty(nnz, dtype=complex)
        for k in range(nnz):
            parts = fh.readline().split()
            r[k], c[k] = int(parts[0]), int(parts[1])
            d[k] = float(parts[2]) + 1j * float(parts[3])
    return sp.csr_matrix((d, (r, c)), shape=(rows, cols))
