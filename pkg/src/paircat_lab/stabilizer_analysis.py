"""Spectral structure of the stabilizing Hamiltonian and the numerical search
for lower-order stabilizers.

The protecting Hamiltonian H = -K (a^dag2 b^dag2 - conj(gamma)^4)(a^2 b^2 - gamma^4)
commutes with both the photon-number difference and the mode-a parity, so it
splits into blocks H_{mu,D} on the sectors {|n, n+D> : (-1)^n = mu}.  The code
states are its (degenerate) most-excited states; the gap to the first-less-
excited block eigenstate approaches 8K|gamma|^6.

The stabilizer search looks for Hermitian polynomials
H = sum f_{mnpq} a^dag^m a^n b^dag^p b^q of bounded total order that annihilate
both pair-coherent components of the code, by building the constraint system
numerically in a truncated space and extracting its SVD nullspace.  A solution
direction is called gamma-independent when it lies in the intersection of the
nullspaces over a set of gamma samples (scalar prefactors are irrelevant);
anything outside the intersection is gamma-dependent.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.sparse as sp

from .hilbert import (
    Operator,
    SectorBasis,
    StateVector,
    annihilation,
    creation,
    default_n_max,
    delta_projector,
    fidelity,
    sector_indices,
    two_mode_space,
)
from .paircat import PairCatParams, code_frame, coherent_product, pair_coherent_state

__all__ = [
    "stabilizer_hamiltonian",
    "SpectrumResult",
    "block_spectrum",
    "parity_gap_degeneracy",
    "MonomialIndex",
    "NullspaceResult",
    "search_low_order_hamiltonian",
    "verify_recursion_identity",
]

_COMPLEX = np.complex128


def stabilizer_hamiltonian(gamma: complex, coupling: float, space) -> Operator:
    """H = -K (a^dag2 b^dag2 - conj(g)^4)(a^2 b^2 - g^4)."""
    a = annihilation(space, 0)
    b = annihilation(space, 1)
    f = a @ a @ b @ b - (gamma**4) * Operator.identity(space)
    return (-coupling) * (f.dag() @ f)


@dataclass
class SpectrumResult:
    mu: int
    delta: int
    eigenvalues: np.ndarray  # descending (most-excited first), units of K
    gap: float  # |E_e1| of the first-less-excited state
    code_overlap: float  # fidelity of the top eigenvector with the code state
    e1_overlap: float  # fidelity of the e1 eigenvector with the displaced-pair ansatz
    n_max: int


def _block_basis(space, mu: int, delta: int) -> SectorBasis:
    parity_mode = 0 if delta >= 0 else 1
    idx = sector_indices(space, deltas=[delta], parity=mu, parity_mode=parity_mode)
    return SectorBasis(space, idx)


def block_spectrum(gamma: complex, coupling: float, mu: int, delta: int, n_max: int | None = None) -> SpectrumResult:
    """Diagonalize the (mu, D) block; returns gap and eigenvector diagnostics.

    The first-less-excited ansatz is Q_mu (a^dag + b^dag - 2 conj(g)) |g, g>,
    normalized in the truncated space.
    """
    n_max = n_max if n_max is not None else default_n_max(gamma)
    space = two_mode_space(n_max)
    basis = _block_basis(space, mu, delta)
    if basis.dim < 3:
        raise ValueError("block dimension must be at least 3")

    h = stabilizer_hamiltonian(gamma, coupling, space)
    hb = basis.restrict_matrix(h).toarray()
    hb = (hb + hb.conj().T) / 2
    evals, evecs = np.linalg.eigh(hb)  # ascending
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]

    frame_state = code_frame(PairCatParams(gamma, delta, space))
    target = frame_state.plus if mu == +1 else frame_state.minus
    top = basis.embed_vector(evecs[:, 0])
    code_ov = fidelity(StateVector(space, top), target)

    adag = creation(space, 0).mat
    bdag = creation(space, 1).mat
    prod = coherent_product(space, gamma, gamma).amplitudes
    ansatz_full = (adag + bdag - 2 * np.conj(gamma) * sp.identity(space.dim, dtype=_COMPLEX)) @ prod
    ansatz = basis.restrict_vector(ansatz_full)
    nrm = np.linalg.norm(ansatz)
    e1_ov = 0.0
    if nrm > 0:
        e1_ov = float(abs(np.vdot(evecs[:, 1], ansatz / nrm)) ** 2)

    return SpectrumResult(
        mu=mu,
        delta=delta,
        eigenvalues=evals,
        gap=float(abs(evals[1])),
        code_overlap=code_ov,
        e1_overlap=e1_ov,
        n_max=n_max,
    )


def parity_gap_degeneracy(gamma: complex, coupling: float, delta: int, n_max: int | None = None) -> float:
    """|E_e1(+) - E_e1(-)| for the two parity blocks at fixed D."""
    plus = block_spectrum(gamma, coupling, +1, delta, n_max)
    minus = block_spectrum(gamma, coupling, -1, delta, n_max)
    return float(abs(plus.gap - minus.gap))


# ---------------------------------------------------------------------------
# low-order stabilizer search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonomialIndex:
    """Powers (m, n, p, q) in a^dag^m a^n b^dag^p b^q."""

    m: int
    n: int
    p: int
    q: int

    @property
    def order(self) -> int:
        return self.m + self.n + self.p + self.q

    @property
    def conserves_delta(self) -> bool:
        return self.n + self.p == self.m + self.q

    @property
    def conjugate(self) -> "MonomialIndex":
        return MonomialIndex(self.n, self.m, self.q, self.p)

    def as_tuple(self):
        return (self.m, self.n, self.p, self.q)


def _enumerate_monomials(max_order: int, conserve_delta: bool) -> list[MonomialIndex]:
    out = []
    for m, n, p, q in product(range(max_order + 1), repeat=4):
        mono = MonomialIndex(m, n, p, q)
        if mono.order > max_order:
            continue
        if conserve_delta and not mono.conserves_delta:
            continue
        out.append(mono)
    return out


def _hermitian_unknowns(monomials: list[MonomialIndex]):
    """Real parameterization respecting f_{mnpq} = conj(f_{nmqp}).

    Returns a list of unknowns, each ('re'|'im', monomial, partner-or-None).
    Self-conjugate monomials carry one real unknown; conjugate pairs carry two.
    """
    seen = set()
    unknowns = []
    mono_set = {mo.as_tuple() for mo in monomials}
    for mo in monomials:
        key = mo.as_tuple()
        if key in seen:
            continue
        cj = mo.conjugate
        if cj.as_tuple() == key:
            seen.add(key)
            unknowns.append(("re", mo, None))
        else:
            if cj.as_tuple() not in mono_set:
                raise ValueError("monomial set is not closed under conjugation")
            seen.add(key)
            seen.add(cj.as_tuple())
            unknowns.append(("re", mo, cj))
            unknowns.append(("im", mo, cj))
    return unknowns


@dataclass
class NullspaceResult:
    monomials: list[MonomialIndex]
    unknowns: list
    gamma_samples: list[complex]
    bases: list[np.ndarray]  # per sample: (n_unknowns, k_s) orthonormal columns
    residuals: list[float]
    common_basis: np.ndarray  # (n_unknowns, k_common)
    n_max: int

    @property
    def sample_dims(self) -> list[int]:
        return [int(b.shape[1]) for b in self.bases]

    @property
    def common_dim(self) -> int:
        return int(self.common_basis.shape[1])

    @property
    def has_gamma_dependent(self) -> bool:
        return any(d > self.common_dim for d in self.sample_dims)

    def coefficient_vector(self, coeffs: dict) -> np.ndarray:
        """Real unknown vector for complex monomial coefficients {(m,n,p,q): f}."""
        x = np.zeros(len(self.unknowns))
        for i, (part, mo, partner) in enumerate(self.unknowns):
            f = coeffs.get(mo.as_tuple(), 0.0)
            if partner is not None:
                fc = coeffs.get(partner.as_tuple(), 0.0)
                if abs(np.conj(fc) - f) > 1e-9 * max(1.0, abs(f)):
                    raise ValueError("coefficients are not Hermitian")
            x[i] = float(np.real(f)) if part == "re" else float(np.imag(f))
        return x

    def overlap_with(self, coeffs: dict, sample_index: int = 0) -> float:
        """|projection| / |vector| of a coefficient direction onto one nullspace."""
        x = self.coefficient_vector(coeffs)
        nrm = np.linalg.norm(x)
        if nrm == 0:
            return 0.0
        proj = self.bases[sample_index] @ (self.bases[sample_index].T @ x)
        return float(np.linalg.norm(proj) / nrm)

    def common_overlap_with(self, coeffs: dict) -> float:
        x = self.coefficient_vector(coeffs)
        nrm = np.linalg.norm(x)
        if nrm == 0:
            return 0.0
        proj = self.common_basis @ (self.common_basis.T @ x)
        return float(np.linalg.norm(proj) / nrm)


def _monomial_columns(monomials, states, space):
    """Per monomial, the stacked vectors M|psi> for each constraint state."""
    max_pow = max(max(mo.m, mo.n, mo.p, mo.q) for mo in monomials)
    a = annihilation(space, 0).mat
    b = annihilation(space, 1).mat
    ad = a.conj().T.tocsr()
    bd = b.conj().T.tocsr()

    cache = {}

    def apply_mono(mo: MonomialIndex, psi: np.ndarray, si: int) -> np.ndarray:
        # apply right-to-left: b^q, b^dag^p, a^n, a^dag^m, caching partial chains
        key = (si, mo.q, 0, 0, 0)
        if key not in cache:
            v = psi
            for _ in range(mo.q):
                v = b @ v
            cache[key] = v
        v = cache[key]
        key = (si, mo.q, mo.p, 0, 0)
        if key not in cache:
            w = v
            for _ in range(mo.p):
                w = bd @ w
            cache[key] = w
        v = cache[key]
        key = (si, mo.q, mo.p, mo.n, 0)
        if key not in cache:
            w = v
            for _ in range(mo.n):
                w = a @ w
            cache[key] = w
        v = cache[key]
        key = (si, mo.q, mo.p, mo.n, mo.m)
        if key not in cache:
            w = v
            for _ in range(mo.m):
                w = ad @ w
            cache[key] = w
        return cache[key]

    del max_pow
    cols = {}
    for mo in monomials:
        cols[mo.as_tuple()] = [apply_mono(mo, s, i) for i, s in enumerate(states)]
    return cols


def _nullspace_basis(a_matrix: np.ndarray, tol: float):
    u, s, vh = np.linalg.svd(a_matrix, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > tol * max(smax, 1e-300)))
    basis = vh[rank:].T  # orthonormal columns
    resid = float(np.abs(a_matrix @ basis).max()) if basis.size else 0.0
    return basis, resid


def search_low_order_hamiltonian(
    max_order: int,
    delta0: int = 0,
    gamma_samples=None,
    conserve_delta: bool = False,
    n_max: int | None = None,
    tol: float = 1e-8,
) -> NullspaceResult:
    """Find all bounded-order Hermitian polynomials annihilating the code's
    pair-coherent components, per gamma sample, and classify gamma dependence.

    Constraints per sample g: H|g_D0> = 0 and H|(ig)_D0> = 0, evaluated in a
    truncated space large enough that creation-operator chains stay clear of
    the cutoff.  The nullspace is extracted by singular-value thresholding;
    directions shared by every sample's nullspace are gamma-independent.
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    if gamma_samples is None:
        gamma_samples = [g * ph for g in (0.7, 1.1, 1.6) for ph in (1.0, np.exp(1j * np.pi / 5))]
    gamma_samples = [complex(g) for g in gamma_samples]
    if any(g == 0 for g in gamma_samples):
        raise ValueError("gamma samples must be nonzero")
    if len(set(gamma_samples)) != len(gamma_samples):
        raise ValueError("gamma samples must be distinct")

    gmax = max(abs(g) for g in gamma_samples)
    if n_max is None:
        n_max = default_n_max(gmax) + max_order
    space = two_mode_space(n_max)

    monomials = _enumerate_monomials(max_order, conserve_delta)
    unknowns = _hermitian_unknowns(monomials)

    bases = []
    residuals = []
    for g in gamma_samples:
        psi_g = pair_coherent_state(PairCatParams(g, delta0, space)).amplitudes
        psi_ig = pair_coherent_state(PairCatParams(1j * g, delta0, space)).amplitudes
        cols = _monomial_columns(monomials, [psi_g, psi_ig], space)

        # tail sanity: constraint rows must not be dominated by cutoff artifacts
        top = space.occupations(0) > n_max - max_order - 1
        for mo in monomials:
            for v in cols[mo.as_tuple()]:
                vn = np.linalg.norm(v)
                if vn > 0 and np.linalg.norm(v[top]) > 1e-6 * vn:
                    raise ValueError(
                        f"truncation n_max={n_max} too small for monomial {mo.as_tuple()}"
                    )

        columns = []
        for part, mo, partner in unknowns:
            vecs = []
            for si in range(2):
                v = cols[mo.as_tuple()][si]
                if partner is None:
                    w = v
                else:
                    vp = cols[partner.as_tuple()][si]
                    w = (v + vp) if part == "re" else 1j * (v - vp)
                vecs.append(w)
            stacked = np.concatenate(vecs)
            columns.append(np.concatenate([stacked.real, stacked.imag]))
        a_matrix = np.column_stack(columns)
        basis, resid = _nullspace_basis(a_matrix, tol)
        bases.append(basis)
        residuals.append(resid)

    # intersection of the per-sample nullspaces: null directions of sum (I - P_s)
    n_unk = len(unknowns)
    m = np.zeros((n_unk, n_unk))
    for basis in bases:
        m += np.eye(n_unk) - basis @ basis.T
    evals, evecs = np.linalg.eigh(m)
    common = evecs[:, evals < max(tol, 1e-7) * len(bases)]

    return NullspaceResult(
        monomials=monomials,
        unknowns=unknowns,
        gamma_samples=gamma_samples,
        bases=bases,
        residuals=residuals,
        common_basis=common,
        n_max=n_max,
    )


def delta_operator_coefficients(delta0: int = 0) -> dict:
    """Coefficient dictionary of (n_b - n_a) - D0 in monomial form."""
    return {(0, 0, 1, 1): 1.0, (1, 1, 0, 0): -1.0, (0, 0, 0, 0): -float(delta0)}


def stabilizer_coefficients(gamma: complex) -> dict:
    """Coefficient dictionary of (a^dag2 b^dag2 - conj(g)^4)(a^2 b^2 - g^4)."""
    g4 = gamma**4
    return {
        (2, 2, 2, 2): 1.0,
        (2, 0, 2, 0): -g4,
        (0, 2, 0, 2): -np.conj(g4),
        (0, 0, 0, 0): abs(gamma) ** 8,
    }


def verify_recursion_identity(gamma: complex, delta: int, n: int, m: int, n_max: int | None = None) -> float:
    """Residual of the fixed-difference creation-chain recursion

        P_D a^dag^n b^dag^m |g,g> = P_D a^dag^(n+1) b^dag^(m-1) |g,g>
                                    + ((D + n - m + 1)/g) P_D a^dag^n b^dag^(m-1) |g,g>

    evaluated numerically (defined for m >= 1; g = 0 is rejected).
    """
    if gamma == 0:
        raise ValueError("recursion undefined at gamma = 0 (division by gamma)")
    if m < 1:
        raise ValueError("recursion requires m >= 1")
    if n_max is None:
        n_max = default_n_max(gamma) + n + m + 2
    space = two_mode_space(n_max)
    prod = coherent_product(space, gamma, gamma).amplitudes
    ad = creation(space, 0).mat
    bd = creation(space, 1).mat
    pd = delta_projector(space, delta).mat

    def chain(np_, mp_):
        v = prod
        for _ in range(mp_):
            v = bd @ v
        for _ in range(np_):
            v = ad @ v
        return pd @ v

    lhs = chain(n, m)
    rhs = chain(n + 1, m - 1) + ((delta + n - m + 1) / gamma) * chain(n, m - 1)
    scale = max(np.linalg.norm(lhs), 1e-300)
    return float(np.linalg.norm(lhs - rhs) / scale)
