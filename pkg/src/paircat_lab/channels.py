"""Lossy bosonic channels, their strong-stabilization limit, syndrome-conditioned
recovery, and Pauli process tomography on the code subspace.

Two channel variants are covered:

* the loss channel with the stabilizer held on at infinite strength, expanded
  order by order as  E = P + sum_k (k1 t)^k / k!  (P L_E P)^k  where P projects
  onto the stabilized manifold (both parities, |D| <= delta_max) and
  L_E = D[a] + D[b];
* the bare lossy bosonic channel with Kraus operators
  E_k = (k!)^{-1/2} eps^{k/2} (1-eps)^{n/2} a^k per mode, eps = 1 - e^{-k1 t},
  which shrinks the amplitude to gamma' = gamma sqrt(1-eps).

Recovery measures the photon-number difference and applies the isometry
R_D = sum_{mu'} |mu''_{gamma,0}><mu'_{*,D}| with mu'' = mu' (-1)^{|D|},
completed to a trace-preserving map by an identity branch on the orthogonal
complement.  Process matrices r_{jk} (E rho = sum r_{jk} W_j rho W_k^dag) are
solved from the Gram system of the sixteen Pauli superoperator basis elements.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import factorial

import numpy as np
import scipy.sparse as sp

from .hilbert import CompositeSpace, DensityMatrix, Operator, StateVector, annihilation
from .paircat import CodeFrame, PairCatParams, code_frame, norm_parity

__all__ = [
    "PauliProcess",
    "KrausChannel",
    "RecoveryMap",
    "StabilizedLossChannel",
    "lbc_kraus",
    "stabilized_loss_channel",
    "recovery_map",
    "process_tomography",
    "analytic_lbc_process",
    "compose_channels",
    "code_leakage",
    "pauli_superop_to_r",
    "logical_superop",
]

_COMPLEX = np.complex128

PAULI_LABELS = ("I", "X", "Y", "Z")

# logical 2x2 Paulis in the (|+>, |->) basis (X eigenbasis): X is diagonal there
_W = {
    "I": np.eye(2, dtype=_COMPLEX),
    "X": np.diag([1.0, -1.0]).astype(_COMPLEX),
    "Y": np.array([[0.0, 1j], [-1j, 0.0]], dtype=_COMPLEX),
    "Z": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=_COMPLEX),
}


@dataclass
class PauliProcess:
    """Process coefficients r[j, k], indices ordered (I, X, Y, Z)."""

    r: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=_COMPLEX)
        if self.r.shape != (4, 4):
            raise ValueError("r must be 4x4")

    def coeff(self, j: str, k: str) -> complex:
        return complex(self.r[PAULI_LABELS.index(j), PAULI_LABELS.index(k)])

    def diagonal(self) -> np.ndarray:
        return np.real(np.diag(self.r))

    def trace_defect(self) -> float:
        return float(abs(np.sum(np.diag(self.r)) - 1.0))

    def hermiticity_defect(self) -> float:
        return float(np.abs(self.r - self.r.conj().T).max())

    def off_diagonal_support(self, tol: float = 1e-10) -> set:
        out = set()
        for j in range(4):
            for k in range(4):
                if j != k and abs(self.r[j, k]) > tol:
                    out.add(PAULI_LABELS[j] + PAULI_LABELS[k])
        return out


def pauli_superop_to_r(t_mat: np.ndarray) -> PauliProcess:
    """Solve T = sum r_jk W_j (x) conj(W_k) for r via the 16x16 Gram system.

    T acts on row-major vec(rho) over the (|+>, |->) logical basis.
    """
    basis = []
    for j in PAULI_LABELS:
        for k in PAULI_LABELS:
            basis.append(np.kron(_W[j], _W[k].conj()))
    gram = np.array([[np.trace(a.conj().T @ b) for b in basis] for a in basis])
    rhs = np.array([np.trace(a.conj().T @ t_mat) for a in basis])
    coeffs = np.linalg.solve(gram, rhs)
    return PauliProcess(coeffs.reshape(4, 4))


def _apply_channel(channel, rho: np.ndarray) -> np.ndarray:
    if hasattr(channel, "apply"):
        return channel.apply(rho)
    return channel(rho)


def logical_superop(channel, frame: CodeFrame) -> np.ndarray:
    """4x4 action of a channel on the code subspace, row-major vec convention."""
    vs = (frame.plus.amplitudes, frame.minus.amplitudes)
    t_mat = np.zeros((4, 4), dtype=_COMPLEX)
    for m in range(2):
        for n in range(2):
            rho_in = np.outer(vs[m], vs[n].conj())
            out = _apply_channel(channel, rho_in)
            for j in range(2):
                for k in range(2):
                    t_mat[2 * j + k, 2 * m + n] = np.vdot(vs[j], out @ vs[k])
    return t_mat


def code_leakage(channel, frame: CodeFrame) -> float:
    """Largest weight left outside the code subspace over the two basis inputs."""
    vs = (frame.plus.amplitudes, frame.minus.amplitudes)
    worst = 0.0
    for v in vs:
        out = _apply_channel(channel, np.outer(v, v.conj()))
        tr = float(np.real(np.trace(out)))
        in_code = sum(float(np.real(np.vdot(w, out @ w))) for w in vs)
        worst = max(worst, tr - in_code)
    return worst


def process_tomography(channel, frame: CodeFrame) -> PauliProcess:
    """Pauli process matrix of a channel restricted to the code subspace.

    The channel is evaluated on the four code-basis matrix units; outputs are
    projected back onto the code subspace.  Large leakage makes the projected
    map unreliable, so it is reported via a warning.
    """
    leak = code_leakage(channel, frame)
    if leak > 0.05:
        warnings.warn(f"code-subspace leakage {leak:.3g} is large; r is ill-conditioned")
    return pauli_superop_to_r(logical_superop(channel, frame))


# ---------------------------------------------------------------------------
# lossy bosonic channel (Kraus form)
# ---------------------------------------------------------------------------


@dataclass
class KrausChannel:
    operators: list
    space: CompositeSpace

    def apply(self, rho) -> np.ndarray:
        mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=_COMPLEX)
        out = np.zeros_like(mat)
        for e in self.operators:
            em = e.mat if isinstance(e, Operator) else e
            er = em @ mat
            out += er @ em.conj().T
        return out

    def completeness_defect(self, indices=None) -> float:
        """max |(sum E^dag E - I)_ii| over the given basis indices (all by default)."""
        dim = self.space.dim
        acc = sp.csr_matrix((dim, dim), dtype=_COMPLEX)
        for e in self.operators:
            em = e.mat if isinstance(e, Operator) else e
            em = em.tocsr() if sp.issparse(em) else sp.csr_matrix(em)
            acc = acc + em.conj().T @ em
        diff = acc - sp.identity(dim, dtype=_COMPLEX, format="csr")
        arr = np.abs(diff.toarray())
        if indices is not None:
            arr = arr[np.ix_(indices, indices)]
        return float(arr.max())


def _single_mode_loss_kraus(space: CompositeSpace, mode: int, epsilon: float, k: int) -> sp.csr_matrix:
    """E_k = (k!)^{-1/2} eps^{k/2} (1-eps)^{n/2} a^k on one mode."""
    occ = space.occupations(mode)
    damp = sp.diags(((1.0 - epsilon) ** (occ / 2.0)).astype(_COMPLEX), format="csr")
    a = annihilation(space, mode).mat
    out = damp
    for _ in range(k):
        out = out @ a
    return (epsilon ** (k / 2.0) / np.sqrt(factorial(k))) * out


def lbc_kraus(epsilon: float, k_max: int, space: CompositeSpace, tol: float = 1e-8) -> KrausChannel:
    """Independent loss channels on both modes, Kraus set {E^a_k E^b_l : k,l <= k_max}.

    eps relates to a physical loss rate via eps = 1 - exp(-k1 t).  Raises when
    the truncated set is not complete to `tol` (increase k_max).
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must be in [0, 1)")
    if epsilon == 0.0:
        return KrausChannel([Operator.identity(space)], space)
    ops = []
    for k in range(k_max + 1):
        ea = _single_mode_loss_kraus(space, 0, epsilon, k)
        for l in range(k_max + 1):
            eb = _single_mode_loss_kraus(space, 1, epsilon, l)
            ops.append(Operator(space, ea @ eb))
    ch = KrausChannel(ops, space)
    defect = ch.completeness_defect()
    if defect > tol:
        raise ValueError(
            f"Kraus completeness defect {defect:.2e} above {tol:.1e}; raise k_max"
        )
    return ch


# ---------------------------------------------------------------------------
# strong-stabilization loss channel on the code manifold
# ---------------------------------------------------------------------------


def _manifold_frames(gamma: complex, delta_max: int, space: CompositeSpace) -> dict:
    return {
        d: code_frame(PairCatParams(gamma, d, space)) for d in range(-delta_max, delta_max + 1)
    }


def _manifold_matrix(frames: dict, delta_max: int) -> tuple[np.ndarray, list]:
    """Columns |mu_{gamma,D}> ordered [(+1, -dmax) ... (-1, +dmax)]; labels list."""
    labels = []
    cols = []
    for d in range(-delta_max, delta_max + 1):
        for mu in (+1, -1):
            labels.append((mu, d))
            f = frames[d]
            cols.append((f.plus if mu == +1 else f.minus).amplitudes)
    return np.column_stack(cols), labels


class StabilizedLossChannel:
    """Order-by-order loss channel in the infinite-stabilization limit.

    Exact on inputs supported in the stabilized manifold (the single-mode loss
    operators map manifold states to manifold states, so the order-k term is
    closed whenever delta_max >= order).
    """

    def __init__(self, gamma: complex, kappa1_t: float, order: int, delta_max: int, space: CompositeSpace):
        if delta_max < order:
            raise ValueError("delta_max < order: loss chains escape the projector")
        if kappa1_t < 0:
            raise ValueError("kappa1_t must be >= 0")
        if kappa1_t * abs(gamma) ** 2 > 0.3:
            warnings.warn("kappa1_t * |gamma|^2 > 0.3: the order expansion degrades")
        self.gamma = gamma
        self.kappa1_t = float(kappa1_t)
        self.order = int(order)
        self.delta_max = int(delta_max)
        self.space = space
        self.frames = _manifold_frames(gamma, delta_max, space)
        self.basis, self.labels = _manifold_matrix(self.frames, delta_max)
        m = self.basis.shape[1]
        self._m = m

        v = self.basis
        a = annihilation(space, 0).mat
        b = annihilation(space, 1).mat
        eye = np.eye(m, dtype=_COMPLEX)
        gen = np.zeros((m * m, m * m), dtype=_COMPLEX)
        for lop in (a, b):
            ltil = v.conj().T @ (lop @ v)
            ntil = v.conj().T @ ((lop.conj().T @ lop) @ v)
            gen += np.kron(ltil, ltil.conj())
            gen -= 0.5 * (np.kron(ntil, eye) + np.kron(eye, ntil.T))
        self._generator = gen

        e_red = np.eye(m * m, dtype=_COMPLEX)
        power = np.eye(m * m, dtype=_COMPLEX)
        fact = 1.0
        for k in range(1, self.order + 1):
            power = power @ gen
            fact *= k
            e_red = e_red + (self.kappa1_t**k / fact) * power
        self._e_reduced = e_red

    def apply_reduced(self, sigma: np.ndarray) -> np.ndarray:
        m = self._m
        return (self._e_reduced @ sigma.reshape(-1)).reshape(m, m)

    def apply(self, rho) -> np.ndarray:
        mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=_COMPLEX)
        v = self.basis
        sigma = v.conj().T @ mat @ v
        inside = float(np.real(np.trace(sigma)))
        total = float(np.real(np.trace(mat)))
        if abs(total - inside) > 1e-8 * max(abs(total), 1.0):
            warnings.warn(
                f"input has weight {total - inside:.2e} outside the stabilized manifold"
            )
        return v @ self.apply_reduced(sigma) @ v.conj().T


def stabilized_loss_channel(
    gamma: complex, kappa1_t: float, order: int, delta_max: int, space: CompositeSpace
) -> StabilizedLossChannel:
    return StabilizedLossChannel(gamma, kappa1_t, order, delta_max, space)


# ---------------------------------------------------------------------------
# syndrome-conditioned recovery
# ---------------------------------------------------------------------------


@dataclass
class RecoveryMap:
    """Difference-conditioned isometries R_D plus an identity completion branch."""

    space: CompositeSpace
    gamma: complex
    delta_max: int
    variant: str
    epsilon: float
    isometries: dict  # D -> csr
    completion: sp.csr_matrix

    def kraus_operators(self) -> list:
        ops = [Operator(self.space, m) for m in self.isometries.values()]
        ops.append(Operator(self.space, self.completion))
        return ops

    def apply(self, rho) -> np.ndarray:
        mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=_COMPLEX)
        out = np.zeros_like(mat)
        for e in self.kraus_operators():
            er = e.mat @ mat
            out += er @ e.mat.conj().T
        return out

    def isometry_defect(self) -> float:
        """max over D of || R_D^dag R_D - P_domain || (should vanish)."""
        worst = 0.0
        for m in self.isometries.values():
            g = (m.conj().T @ m).toarray()
            evals = np.linalg.eigvalsh((g + g.conj().T) / 2)
            ones = np.sort(evals)[-2:]
            rest = np.sort(evals)[:-2]
            worst = max(worst, float(np.abs(ones - 1.0).max()))
            if rest.size:
                worst = max(worst, float(np.abs(rest).max()))
        return worst


def _outer_sparse(dim: int, ket: np.ndarray, bra: np.ndarray) -> sp.csr_matrix:
    ki = np.nonzero(np.abs(ket) > 1e-300)[0]
    bi = np.nonzero(np.abs(bra) > 1e-300)[0]
    block = np.outer(ket[ki], bra[bi].conj())
    rows = np.repeat(ki, bi.size)
    cols = np.tile(bi, ki.size)
    return sp.csr_matrix((block.ravel(), (rows, cols)), shape=(dim, dim))


def recovery_map(
    gamma: complex,
    delta_max: int,
    variant: str = "stabilized",
    epsilon: float = 0.0,
    space: CompositeSpace | None = None,
) -> RecoveryMap:
    """Build R_D = sum_{mu'} |mu''_{gamma,0}><mu'_{*,D}|, mu'' = mu' (-1)^{|D|}.

    variant "stabilized": domain states at amplitude gamma (strong stabilization
    keeps the amplitude); variant "lbc": domain states at gamma' = gamma
    sqrt(1-eps) as left behind by the bare loss channel.
    """
    if variant not in ("stabilized", "lbc"):
        raise ValueError("variant must be 'stabilized' or 'lbc'")
    if space is None:
        raise ValueError("recovery_map needs the embedding space")
    g_dom = gamma * np.sqrt(1.0 - epsilon) if variant == "lbc" else gamma
    target = code_frame(PairCatParams(gamma, 0, space))
    dim = space.dim

    isometries = {}
    dom_acc = sp.csr_matrix((dim, dim), dtype=_COMPLEX)
    for d in range(-delta_max, delta_max + 1):
        dom = code_frame(PairCatParams(g_dom, d, space))
        r_mat = sp.csr_matrix((dim, dim), dtype=_COMPLEX)
        for mu, ket_src in ((+1, dom.plus), (-1, dom.minus)):
            mu_out = mu * (-1) ** abs(d)
            ket_dst = target.plus if mu_out == +1 else target.minus
            r_mat = r_mat + _outer_sparse(dim, ket_dst.amplitudes, ket_src.amplitudes)
            dom_acc = dom_acc + _outer_sparse(dim, ket_src.amplitudes, ket_src.amplitudes)
        isometries[d] = r_mat.tocsr()

    completion = (sp.identity(dim, dtype=_COMPLEX, format="csr") - dom_acc).tocsr()
    return RecoveryMap(
        space=space,
        gamma=gamma,
        delta_max=delta_max,
        variant=variant,
        epsilon=float(epsilon),
        isometries=isometries,
        completion=completion,
    )


def compose_channels(outer, inner):
    """Channel applying `inner` first, then `outer`."""

    def apply(rho):
        return _apply_channel(outer, _apply_channel(inner, rho))

    return apply


# ---------------------------------------------------------------------------
# closed-form process matrix of loss + recovery (bare channel)
# ---------------------------------------------------------------------------


def analytic_lbc_process(gamma: complex, epsilon: float, k_max: int) -> PauliProcess:
    """Process matrix of the bare loss channel followed by recovery, in closed
    form: a weighted sum over loss multiplicities (k, l) of normalization-ratio
    matrices with parity selectors on min(k, l).
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must be in [0, 1)")
    g2 = abs(gamma) ** 2
    gp = gamma * np.sqrt(1.0 - epsilon)
    n_p0 = norm_parity(gamma, 0, +1)
    n_m0 = norm_parity(gamma, 0, -1)

    t_mat = np.zeros((4, 4), dtype=_COMPLEX)
    for k in range(k_max + 1):
        for l in range(k_max + 1):
            weight = (epsilon * g2) ** (k + l) * np.exp(-2.0 * epsilon * g2)
            weight /= factorial(k) * factorial(l)
            d = k - l
            flip = min(k, l) % 2 == 1
            mu_from_plus = (+1) * (-1) ** max(k, l)
            mu_from_minus = (-1) * (-1) ** max(k, l)
            npp = norm_parity(gp, d, mu_from_plus)
            npm = norm_parity(gp, d, mu_from_minus)
            sqr = np.sqrt(norm_parity(gp, d, +1) * norm_parity(gp, d, -1) / (n_p0 * n_m0))
            block = np.zeros((4, 4))
            if not flip:
                block[0, 0] = npp / n_p0
                block[3, 3] = npm / n_m0
                block[1, 1] = sqr
                block[2, 2] = sqr
            else:
                block[0, 3] = npm / n_m0
                block[3, 0] = npp / n_p0
                block[1, 2] = sqr
                block[2, 1] = sqr
            t_mat += weight * block
    return pauli_superop_to_r(t_mat)
