"""Truncated Fock-space linear algebra for few-mode bosonic systems.

Basis convention
----------------
A composite space over modes (m0, m1, ...) is indexed lexicographically with
mode 0 varying FASTEST:

    index = n0 + d0*n1 + d0*d1*n2 + ...      dk = n_max_k + 1

All sector extraction (photon-number-difference blocks, parity blocks) relies
on this ordering, so it is fixed and part of space equality.

Operators are stored sparse (CSR) by default; displacement exponentials are
dense.  Truncated ladder operators are exact on interior number sectors; any
identity involving creation operators should be asserted away from the top
boundary rows (see `interior_mask`).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import ceil, sqrt

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

__all__ = [
    "ModeSpace",
    "CompositeSpace",
    "Operator",
    "StateVector",
    "DensityMatrix",
    "two_mode_space",
    "annihilation",
    "creation",
    "number_operator",
    "identity_operator",
    "delta_projector",
    "parity_projector",
    "displacement",
    "embed_mode_operator",
    "tensor_states",
    "occupation_table",
    "delta_values",
    "sector_indices",
    "SectorBasis",
    "interior_mask",
    "default_n_max",
    "tail_weight",
    "fidelity",
    "trace_distance",
]

_COMPLEX = np.complex128


@dataclass(frozen=True)
class ModeSpace:
    """A single bosonic mode truncated at photon number `n_max` (inclusive)."""

    n_max: int

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")

    @property
    def dim(self) -> int:
        return self.n_max + 1


@dataclass(frozen=True)
class CompositeSpace:
    """Ordered tensor product of truncated modes (mode 0 fastest)."""

    modes: tuple[ModeSpace, ...]

    def __post_init__(self):
        if not self.modes:
            raise ValueError("need at least one mode")

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def dim(self) -> int:
        d = 1
        for m in self.modes:
            d *= m.dim
        return d

    @property
    def mode_dims(self) -> tuple[int, ...]:
        return tuple(m.dim for m in self.modes)

    def stride(self, k: int) -> int:
        s = 1
        for m in self.modes[:k]:
            s *= m.dim
        return s

    def occupations(self, k: int) -> np.ndarray:
        """Occupation of mode k for every basis index."""
        idx = np.arange(self.dim)
        return (idx // self.stride(k)) % self.modes[k].dim

    def index_of(self, ns) -> int:
        """Basis index of the Fock state |n0, n1, ...>."""
        if len(ns) != self.n_modes:
            raise ValueError("wrong number of occupations")
        i = 0
        for k, n in enumerate(ns):
            if not 0 <= n < self.modes[k].dim:
                raise ValueError(f"occupation {n} outside mode {k}")
            i += n * self.stride(k)
        return i

    def basis_state(self, ns) -> "StateVector":
        v = np.zeros(self.dim, dtype=_COMPLEX)
        v[self.index_of(ns)] = 1.0
        return StateVector(self, v)


def two_mode_space(n_max: int, n_max_b: int | None = None) -> CompositeSpace:
    return CompositeSpace((ModeSpace(n_max), ModeSpace(n_max_b if n_max_b is not None else n_max)))


class Operator:
    """A linear map on a CompositeSpace, sparse (CSR) or dense."""

    __slots__ = ("space", "mat")

    def __init__(self, space: CompositeSpace, mat):
        if mat.shape != (space.dim, space.dim):
            raise ValueError(f"matrix shape {mat.shape} != space dim {space.dim}")
        if sp.issparse(mat):
            mat = mat.tocsr().astype(_COMPLEX)
        else:
            mat = np.asarray(mat, dtype=_COMPLEX)
        self.space = space
        self.mat = mat

    # -- algebra ------------------------------------------------------------
    def _check(self, other: "Operator"):
        if self.space != other.space:
            raise ValueError("operators live on different spaces")

    def __add__(self, other: "Operator") -> "Operator":
        self._check(other)
        a, b = self.mat, other.mat
        if sp.issparse(a) != sp.issparse(b):
            a = a.toarray() if sp.issparse(a) else a
            b = b.toarray() if sp.issparse(b) else b
        return Operator(self.space, a + b)

    def __sub__(self, other: "Operator") -> "Operator":
        return self + (-1.0) * other

    def __neg__(self) -> "Operator":
        return (-1.0) * self

    def __mul__(self, scalar) -> "Operator":
        return Operator(self.space, self.mat * scalar)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.space, self.mat @ other.mat)
        if isinstance(other, StateVector):
            if other.space != self.space:
                raise ValueError("state lives on a different space")
            return StateVector(self.space, self.mat @ other.amplitudes)
        if isinstance(other, np.ndarray):
            return self.mat @ other
        return NotImplemented

    def dag(self) -> "Operator":
        m = self.mat
        return Operator(self.space, m.conj().T.tocsr() if sp.issparse(m) else m.conj().T)

    # -- conversions / diagnostics -------------------------------------------
    def to_dense(self) -> np.ndarray:
        return self.mat.toarray() if sp.issparse(self.mat) else np.array(self.mat)

    def to_sparse(self) -> sp.csr_matrix:
        return self.mat if sp.issparse(self.mat) else sp.csr_matrix(self.mat)

    def norm_max(self) -> float:
        m = self.mat
        if sp.issparse(m):
            return 0.0 if m.nnz == 0 else float(np.abs(m.data).max())
        return float(np.abs(m).max()) if m.size else 0.0

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return (self - self.dag()).norm_max() <= tol

    @classmethod
    def identity(cls, space: CompositeSpace) -> "Operator":
        return cls(space, sp.identity(space.dim, dtype=_COMPLEX, format="csr"))

    @classmethod
    def zero(cls, space: CompositeSpace) -> "Operator":
        return cls(space, sp.csr_matrix((space.dim, space.dim), dtype=_COMPLEX))

    @classmethod
    def from_diagonal(cls, space: CompositeSpace, diag) -> "Operator":
        return cls(space, sp.diags(np.asarray(diag, dtype=_COMPLEX), format="csr"))


@dataclass
class StateVector:
    """A (usually normalized) pure state on a CompositeSpace."""

    space: CompositeSpace
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=_COMPLEX)
        if self.amplitudes.shape != (self.space.dim,):
            raise ValueError("amplitude vector has wrong length")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.space, self.amplitudes / n)

    def inner(self, other: "StateVector") -> complex:
        if self.space != other.space:
            raise ValueError("states live on different spaces")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def expectation(self, op: Operator) -> complex:
        return complex(np.vdot(self.amplitudes, op.mat @ self.amplitudes))

    def projector(self) -> "DensityMatrix":
        return DensityMatrix(self.space, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass
class DensityMatrix:
    space: CompositeSpace
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=_COMPLEX)
        if self.matrix.shape != (self.space.dim, self.space.dim):
            raise ValueError("density matrix has wrong shape")

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def hermiticity_defect(self) -> float:
        return float(np.abs(self.matrix - self.matrix.conj().T).max())

    def eigenvalue_floor(self) -> float:
        return float(np.linalg.eigvalsh((self.matrix + self.matrix.conj().T) / 2).min())

    def expectation(self, op: Operator) -> complex:
        m = op.mat @ self.matrix if sp.issparse(op.mat) else op.mat @ self.matrix
        return complex(np.trace(m))

    def fidelity_with_pure(self, psi: StateVector) -> float:
        v = psi.amplitudes
        return float(np.real(np.vdot(v, self.matrix @ v)))


# -- elementary operators -----------------------------------------------------


def _single_mode_ladder(dim: int) -> sp.csr_matrix:
    # <n-1| a |n> = sqrt(n)
    n = np.arange(1, dim)
    return sp.diags(np.sqrt(n).astype(_COMPLEX), offsets=1, shape=(dim, dim), format="csr")


def embed_mode_operator(space: CompositeSpace, mode_index: int, small: sp.spmatrix) -> sp.csr_matrix:
    """Embed a single-mode matrix as identity on all other modes."""
    if not 0 <= mode_index < space.n_modes:
        raise ValueError(f"invalid mode index {mode_index}")
    d_before = space.stride(mode_index)
    d_after = space.dim // (d_before * space.modes[mode_index].dim)
    out = small
    if d_before > 1:
        out = sp.kron(out, sp.identity(d_before, dtype=_COMPLEX), format="csr")
    if d_after > 1:
        out = sp.kron(sp.identity(d_after, dtype=_COMPLEX), out, format="csr")
    return out.tocsr()


def annihilation(space: CompositeSpace, mode_index: int) -> Operator:
    """Truncated ladder operator on one mode, identity on the others."""
    a = _single_mode_ladder(space.modes[mode_index].dim)
    return Operator(space, embed_mode_operator(space, mode_index, a))


def creation(space: CompositeSpace, mode_index: int) -> Operator:
    return annihilation(space, mode_index).dag()


def number_operator(space: CompositeSpace, mode_index: int) -> Operator:
    if not 0 <= mode_index < space.n_modes:
        raise ValueError(f"invalid mode index {mode_index}")
    return Operator.from_diagonal(space, space.occupations(mode_index))


def identity_operator(space: CompositeSpace) -> Operator:
    return Operator.identity(space)


def delta_projector(space: CompositeSpace, delta: int, mode_pair: tuple[int, int] = (0, 1)) -> Operator:
    """Diagonal projector onto fixed photon-number difference n_b - n_a = delta.

    Empty (zero) projector is allowed when |delta| exceeds the cutoff.
    """
    if mode_pair == (0, 1) and space.n_modes != 2:
        raise ValueError("delta_projector expects a two-mode space")
    ia, ib = mode_pair
    diag = (space.occupations(ib) - space.occupations(ia) == delta).astype(_COMPLEX)
    return Operator.from_diagonal(space, diag)


def parity_projector(space: CompositeSpace, mode_index: int, parity: int) -> Operator:
    """(I + parity*(-1)^n) / 2 on the chosen mode; parity is +1 or -1."""
    if parity not in (+1, -1):
        raise ValueError("parity must be +1 or -1")
    signs = 1.0 - 2.0 * (space.occupations(mode_index) % 2)
    return Operator.from_diagonal(space, (1.0 + parity * signs) / 2.0)


def displacement(space: CompositeSpace, mode_index: int, amplitude: complex) -> Operator:
    """Unitary displacement exp(alpha a^dag - alpha* a) on one mode (dense).

    Requires the cutoff to sit safely above |alpha|^2; warns when the
    displaced vacuum column loses more than 1e-10 of its weight.
    """
    m = space.modes[mode_index]
    if abs(amplitude) ** 2 + 2.0 * sqrt(abs(amplitude) ** 2 + 1.0) > m.n_max:
        raise ValueError(
            f"displacement amplitude {amplitude} too large for n_max={m.n_max}"
        )
    a = _single_mode_ladder(m.dim).toarray()
    gen = amplitude * a.conj().T - np.conj(amplitude) * a
    d_small = expm(gen)
    lost = abs(1.0 - float(np.linalg.norm(d_small[:, 0]) ** 2))
    if lost > 1e-10:
        warnings.warn(
            f"displacement truncation tail: displaced vacuum lost {lost:.2e} weight",
            stacklevel=2,
        )
    return Operator(space, embed_mode_operator(space, mode_index, sp.csr_matrix(d_small)).toarray())


def tensor_states(states: list[StateVector]) -> StateVector:
    """Tensor product of states; the first argument's modes become the fastest."""
    modes: tuple[ModeSpace, ...] = ()
    amp = np.ones(1, dtype=_COMPLEX)
    for s in states:
        modes = modes + s.space.modes
        amp = np.kron(s.amplitudes, amp)
    return StateVector(CompositeSpace(modes), amp)


# -- sector machinery ---------------------------------------------------------


def occupation_table(space: CompositeSpace) -> np.ndarray:
    """Array of shape (n_modes, dim) with occupations per basis index."""
    return np.stack([space.occupations(k) for k in range(space.n_modes)])


def delta_values(space: CompositeSpace, mode_pair: tuple[int, int] = (0, 1)) -> np.ndarray:
    ia, ib = mode_pair
    return space.occupations(ib) - space.occupations(ia)


def sector_indices(
    space: CompositeSpace,
    deltas=None,
    mode_pair: tuple[int, int] = (0, 1),
    parity: int | None = None,
    parity_mode: int = 0,
) -> np.ndarray:
    """Basis indices with n_b - n_a in `deltas` and optionally fixed parity."""
    mask = np.ones(space.dim, dtype=bool)
    if deltas is not None:
        deltas = np.atleast_1d(deltas)
        mask &= np.isin(delta_values(space, mode_pair), deltas)
    if parity is not None:
        mask &= (1 - 2 * (space.occupations(parity_mode) % 2)) == parity
    return np.nonzero(mask)[0]


class SectorBasis:
    """A sub-basis of a CompositeSpace used to compress conserved-sector dynamics.

    Restriction is exact whenever the generators do not couple the selected
    indices to the rest; `closure_defect` measures any such coupling.
    """

    def __init__(self, space: CompositeSpace, indices: np.ndarray):
        self.space = space
        self.indices = np.asarray(indices, dtype=np.intp)
        if self.indices.size == 0:
            raise ValueError("sector basis is empty")
        self.dim = int(self.indices.size)
        self._complement = None

    @classmethod
    def from_masks(cls, space: CompositeSpace, mask: np.ndarray) -> "SectorBasis":
        return cls(space, np.nonzero(mask)[0])

    def restrict_matrix(self, mat) -> sp.csr_matrix:
        if isinstance(mat, Operator):
            mat = mat.mat
        if sp.issparse(mat):
            return mat.tocsr()[self.indices, :].tocsc()[:, self.indices].tocsr()
        return sp.csr_matrix(mat[np.ix_(self.indices, self.indices)])

    def restrict_vector(self, vec) -> np.ndarray:
        if isinstance(vec, StateVector):
            vec = vec.amplitudes
        return np.asarray(vec)[self.indices]

    def embed_vector(self, vec) -> np.ndarray:
        out = np.zeros(self.space.dim, dtype=_COMPLEX)
        out[self.indices] = vec
        return out

    def closure_defect(self, mat) -> float:
        """Largest coupling out of the sector: max |mat[outside, inside]| (and transpose)."""
        if isinstance(mat, Operator):
            mat = mat.mat
        if self._complement is None:
            comp = np.setdiff1d(np.arange(self.space.dim), self.indices)
            self._complement = comp
        comp = self._complement
        if comp.size == 0:
            return 0.0
        m = mat.tocsr() if sp.issparse(mat) else sp.csr_matrix(mat)
        out = m[comp, :].tocsc()[:, self.indices]
        inn = m[self.indices, :].tocsc()[:, comp]
        d = 0.0
        for block in (out, inn):
            if block.nnz:
                d = max(d, float(np.abs(block.data).max()))
        return d


def interior_mask(space: CompositeSpace, margin: int = 1) -> np.ndarray:
    """True on basis states with every occupation at least `margin` below cutoff."""
    mask = np.ones(space.dim, dtype=bool)
    for k in range(space.n_modes):
        mask &= space.occupations(k) <= space.modes[k].n_max - margin
    return mask


# -- truncation heuristics ------------------------------------------------------


def default_n_max(gamma: complex) -> int:
    """Per-mode cutoff comfortably above the pair-coherent occupation for |gamma|."""
    g2 = abs(gamma) ** 2
    return int(ceil(g2 + 8.0 * sqrt(g2 + 1.0) + 8.0))


def tail_weight(state: StateVector, shells: int = 2) -> float:
    """Probability weight within `shells` of any mode cutoff."""
    mask = ~interior_mask(state.space, margin=shells)
    return float(np.sum(np.abs(state.amplitudes[mask]) ** 2))


def tail_ok(state: StateVector, tol: float = 1e-10, shells: int = 2) -> bool:
    return tail_weight(state, shells) < tol


# -- metrics ------------------------------------------------------------------


def fidelity(a: StateVector, b: StateVector) -> float:
    """|<a|b>|^2 for normalized inputs (normalizes defensively)."""
    va = a.amplitudes / np.linalg.norm(a.amplitudes)
    vb = b.amplitudes / np.linalg.norm(b.amplitudes)
    return float(abs(np.vdot(va, vb)) ** 2)


def trace_distance(rho: np.ndarray | DensityMatrix, sigma: np.ndarray | DensityMatrix) -> float:
    a = rho.matrix if isinstance(rho, DensityMatrix) else rho
    b = sigma.matrix if isinstance(sigma, DensityMatrix) else sigma
    diff = a - b
    diff = (diff + diff.conj().T) / 2
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))
