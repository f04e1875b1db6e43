"""Pair-coherent states and the two-mode pair-cat code.

A pair-coherent state |gamma_D> is the two-mode coherent state |gamma, gamma>
projected onto fixed photon-number difference D = n_b - n_a and normalized by

    N_D = exp(-2|gamma|^2) I_D(2|gamma|^2),

with I_D the modified Bessel function.  The code's X-basis states carry, in
addition, fixed generalized parity: |+-> = Q_pm |gamma,gamma> / sqrt(N_pm),
where Q_pm projects on (parity of mode a) x (fixed D) for D >= 0, and

    N_{pm,D} = exp(-2|gamma|^2) [I_D(2|gamma|^2) +- J_D(2|gamma|^2)] / 2.

Negative D uses the SWAP convention: build at |D| with the modes exchanged
(parity then read from mode b), then swap back.  Phase exponents use |D|.

Z-basis states are |0> = (|+> + |->)/sqrt(2), |1> = (|+> - |->)/sqrt(2); the
simultaneous pair loss a*b acts within the code space as predominantly a
logical Z with an exponentially small Y admixture controlled by
r_D = sqrt(N_{-,D}/N_{+,D}).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import pi

import numpy as np
import scipy.sparse as sp

from .hilbert import (
    CompositeSpace,
    Operator,
    StateVector,
    annihilation,
    delta_projector,
    parity_projector,
    tail_ok,
)

__all__ = [
    "bessel_i_series",
    "bessel_j_series",
    "norm_delta",
    "norm_parity",
    "PairCatParams",
    "CodeFrame",
    "coherent_product",
    "pair_coherent_state",
    "code_frame",
    "pauli_project",
    "pair_jump_operator",
    "swap_two_modes",
]

_COMPLEX = np.complex128


def _bessel_series(order: int, x: float, signed: bool) -> float:
    """Power series sum_k s^k (x/2)^(2k+order) / (k! (k+order)!), s = -1 for J."""
    if order < 0:
        raise ValueError("order must be >= 0")
    if x == 0.0:
        return 1.0 if order == 0 else 0.0
    half = x / 2.0
    # leading term (x/2)^order / order!
    term = 1.0
    for k in range(1, order + 1):
        term *= half / k
    total = term
    k = 0
    while True:
        k += 1
        term *= (half * half) / (k * (k + order))
        contrib = -term if (signed and k % 2) else term
        total += contrib
        if abs(term) < 1e-16 * max(abs(total), 1e-300) and k > 4:
            return total
        if k > 10_000:
            raise RuntimeError("Bessel series failed to converge")


def bessel_i_series(order: int, x: float) -> float:
    """Modified Bessel I_order(x) by direct power series (x >= 0, integer order)."""
    return _bessel_series(order, x, signed=False)


def bessel_j_series(order: int, x: float) -> float:
    """Bessel J_order(x) by direct power series (integer order)."""
    return _bessel_series(order, x, signed=True)


def norm_delta(gamma: complex, delta: int) -> float:
    """Pair-coherent normalization N_D = exp(-2|g|^2) I_|D|(2|g|^2)."""
    g2 = abs(gamma) ** 2
    return float(np.exp(-2.0 * g2) * bessel_i_series(abs(delta), 2.0 * g2))


def norm_parity(gamma: complex, delta: int, parity: int) -> float:
    """Generalized-parity normalization N_{pm,D} (|D| convention for D < 0)."""
    if parity not in (+1, -1):
        raise ValueError("parity must be +1 or -1")
    g2 = abs(gamma) ** 2
    i_term = bessel_i_series(abs(delta), 2.0 * g2)
    j_term = bessel_j_series(abs(delta), 2.0 * g2)
    return float(np.exp(-2.0 * g2) * (i_term + parity * j_term) / 2.0)


@dataclass(frozen=True)
class PairCatParams:
    """Code parameters: complex amplitude gamma, integer difference delta, space."""

    gamma: complex
    delta: int
    space: CompositeSpace

    def __post_init__(self):
        if self.space.n_modes != 2:
            raise ValueError("pair-cat code lives on a two-mode space")
        if self.space.modes[0].n_max != self.space.modes[1].n_max:
            raise ValueError("both modes must share one cutoff")


def coherent_product(space: CompositeSpace, gamma_a: complex, gamma_b: complex) -> StateVector:
    """Truncated |gamma_a> x |gamma_b> with analytic coefficients (norm < 1 from the tail)."""

    def coeffs(g, dim):
        n = np.arange(dim)
        logfact = np.cumsum(np.concatenate(([0.0], np.log(np.arange(1, dim)))))
        mag = np.exp(-abs(g) ** 2 / 2.0 + n * np.log(abs(g) + (abs(g) == 0)) - logfact / 2.0)
        if g == 0:
            mag = np.zeros(dim)
            mag[0] = 1.0
            return mag.astype(_COMPLEX)
        phase = np.exp(1j * n * np.angle(g))
        return (mag * phase).astype(_COMPLEX)

    ca = coeffs(gamma_a, space.modes[0].dim)
    cb = coeffs(gamma_b, space.modes[1].dim)
    return StateVector(space, np.kron(cb, ca))


def swap_two_modes(space: CompositeSpace, vec: np.ndarray) -> np.ndarray:
    """Exchange the two modes of a state vector (cutoffs must match)."""
    da, db = space.mode_dims
    if da != db:
        raise ValueError("mode swap needs equal cutoffs")
    return np.asarray(vec).reshape(db, da).T.reshape(-1)


def pair_coherent_state(params: PairCatParams) -> StateVector:
    """|gamma_D>: the fixed-difference projection of |gamma,gamma>, unit norm.

    At gamma = 0 the only surviving basis state is returned: |0, D> for D >= 0
    (|  |D|, 0> for D < 0).
    """
    g, d, space = params.gamma, params.delta, params.space
    if g == 0:
        ns = (0, d) if d >= 0 else (-d, 0)
        return space.basis_state(ns)
    raw = delta_projector(space, d) @ coherent_product(space, g, g)
    return raw.normalized()


@dataclass
class CodeFrame:
    """Code vectors, normalization scalars and embedded logical operators."""

    params: PairCatParams
    plus: StateVector
    minus: StateVector
    zero: StateVector
    one: StateVector
    norm_delta: float
    norm_plus: float
    norm_minus: float
    r: float
    phi: float
    code_projector: Operator
    logical_x: Operator
    logical_y: Operator
    logical_z: Operator

    @property
    def space(self) -> CompositeSpace:
        return self.params.space

    def logical_matrix(self, op: Operator) -> np.ndarray:
        """2x2 matrix of an operator in the (|+>, |->) basis."""
        vs = (self.plus.amplitudes, self.minus.amplitudes)
        return np.array([[np.vdot(u, op.mat @ v) for v in vs] for u in vs])

    def logical_amplitudes(self, vec: np.ndarray | StateVector) -> np.ndarray:
        """(<+|psi>, <-|psi>)."""
        v = vec.amplitudes if isinstance(vec, StateVector) else vec
        return np.array([np.vdot(self.plus.amplitudes, v), np.vdot(self.minus.amplitudes, v)])


def _rank_operator(space: CompositeSpace, kets, bras, weights) -> Operator:
    """Sparse sum_k w_k |ket_k><bra_k| built from (dense) vectors."""
    mat = sp.csr_matrix((space.dim, space.dim), dtype=_COMPLEX)
    for ket, bra, w in zip(kets, bras, weights):
        ki = np.nonzero(np.abs(ket) > 1e-300)[0]
        bi = np.nonzero(np.abs(bra) > 1e-300)[0]
        block = w * np.outer(ket[ki], bra[bi].conj())
        rows = np.repeat(ki, bi.size)
        cols = np.tile(bi, ki.size)
        mat = mat + sp.csr_matrix((block.ravel(), (rows, cols)), shape=(space.dim, space.dim))
    return Operator(space, mat)


def code_frame(params: PairCatParams) -> CodeFrame:
    """Build the X-basis code states and embedded logical Paulis for (gamma, D).

    Logical sign conventions: X = |+><+| - |-><-|, Z = |0><0| - |1><1|,
    Y = i X Z.  |+> and |-> are exactly orthogonal (opposite parity sectors).
    """
    g, d, space = params.gamma, params.delta, params.space

    if g == 0:
        plus = pair_coherent_state(params)
        ns = (1, d + 1) if d >= 0 else (-d + 1, 1)
        minus = space.basis_state(ns)
    elif d >= 0:
        prod = coherent_product(space, g, g)
        pd = delta_projector(space, d)
        plus = (parity_projector(space, 0, +1) @ (pd @ prod)).normalized()
        minus = (parity_projector(space, 0, -1) @ (pd @ prod)).normalized()
    else:
        swapped = code_frame(PairCatParams(g, -d, space))
        plus = StateVector(space, swap_two_modes(space, swapped.plus.amplitudes))
        minus = StateVector(space, swap_two_modes(space, swapped.minus.amplitudes))

    if g != 0 and not tail_ok(plus):
        raise ValueError(
            f"cutoff n_max={space.modes[0].n_max} too small for gamma={g} (tail check failed)"
        )

    sq2 = np.sqrt(2.0)
    zero = StateVector(space, (plus.amplitudes + minus.amplitudes) / sq2)
    one = StateVector(space, (plus.amplitudes - minus.amplitudes) / sq2)

    n_d = norm_delta(g, d)
    n_p = norm_parity(g, d, +1)
    n_m = norm_parity(g, d, -1)
    r = float(np.sqrt(n_m / n_p)) if n_p > 0 else float("inf")
    phi = 2.0 * abs(g) ** 2 - (2.0 * abs(d) + 1.0) * pi / 4.0

    vp, vm = plus.amplitudes, minus.amplitudes
    proj = _rank_operator(space, [vp, vm], [vp, vm], [1.0, 1.0])
    lx = _rank_operator(space, [vp, vm], [vp, vm], [1.0, -1.0])
    lz = _rank_operator(space, [vp, vm], [vm, vp], [1.0, 1.0])
    ly = _rank_operator(space, [vp, vm], [vm, vp], [1j, -1j])

    return CodeFrame(
        params=params,
        plus=plus,
        minus=minus,
        zero=zero,
        one=one,
        norm_delta=n_d,
        norm_plus=n_p,
        norm_minus=n_m,
        r=r,
        phi=phi,
        code_projector=proj,
        logical_x=lx,
        logical_y=ly,
        logical_z=lz,
    )


def pauli_project(op: Operator, frame: CodeFrame) -> np.ndarray:
    """Coefficients (c_I, c_X, c_Y, c_Z) of P_c op P_c in the logical Pauli basis."""
    m = frame.logical_matrix(op)
    c_i = (m[0, 0] + m[1, 1]) / 2.0
    c_x = (m[0, 0] - m[1, 1]) / 2.0
    c_z = (m[0, 1] + m[1, 0]) / 2.0
    c_y = (m[0, 1] - m[1, 0]) / 2.0j
    return np.array([c_i, c_x, c_y, c_z])


def pair_jump_operator(gamma: complex, space: CompositeSpace, mode_pair: tuple[int, int] = (0, 1)) -> Operator:
    """The stabilizing jump a^2 b^2 - gamma^4 acting on the given mode pair."""
    a = annihilation(space, mode_pair[0])
    b = annihilation(space, mode_pair[1])
    return a @ a @ b @ b - (gamma**4) * Operator.identity(space)
