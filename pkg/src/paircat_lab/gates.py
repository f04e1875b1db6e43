"""Bias-preserving operations on pair-cat qubits in both stabilization schemes.

Single-qubit pieces: state preparation (dissipative relaxation or amplitude
ramp), X-basis readout through dispersively coupled ancillas, Z(theta) by the
pair drive eps (a b e^{-i phi} + h.c.), and the X gate by rotating the
stabilizer amplitude gamma(t) = gamma e^{i pi t / 2T} with the compensation
Hamiltonian -(pi/2T)(n_a + n_b).  Multi-qubit pieces: ZZ(theta), the CNOT
whose target stabilizer rotates conditioned on the control, and the Toffoli
generators in per-qubit factored form.

A single photon loss on the CNOT target at time t0 leaves the conditional
phase exp[-i pi/2 (1 - t0/T)] on the control's |1>.  Monitoring the target's
photon-number difference every dtau localizes t0, and a Z1 rotation cancels
the phase: midpoint timing in the monitored pipeline, exact timing for
injected-loss probes.  Undetected same-window pair losses are the residual
dephasing bookkept in `predict_error`.

Every dynamical run happens in a conserved-sector compressed basis: all gate
generators commute with the per-qubit photon-number differences (and often
with the parity), so blocks are selected by allowed difference windows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from math import ceil, pi, sqrt

import numpy as np
import scipy.sparse as sp

from .channels import PauliProcess, pauli_superop_to_r
from .dynamics import (
    EvolutionSpec,
    MonitorSpec,
    TermSum,
    evolve_master,
    steady_state,
    trajectory_ensemble,
)
from .hilbert import (
    CompositeSpace,
    DensityMatrix,
    ModeSpace,
    Operator,
    SectorBasis,
    StateVector,
    annihilation,
    default_n_max,
    two_mode_space,
)
from .paircat import CodeFrame, PairCatParams, code_frame, pair_coherent_state, pair_jump_operator

__all__ = [
    "GateSpec",
    "GateResult",
    "prepare_plus",
    "measure_x",
    "gate_z",
    "gate_zz",
    "gate_x",
    "gate_cnot",
    "cnot_conditional_phase",
    "cnot_loss_bookkeeping",
    "ToffoliGenerators",
    "toffoli_generators",
    "ErrorPrediction",
    "predict_error",
    "ScalingFit",
    "fit_scaling",
    "fit_cnot_bracket",
]

_COMPLEX = np.complex128


# ---------------------------------------------------------------------------
# specs and results
# ---------------------------------------------------------------------------


@dataclass
class GateSpec:
    """Parameters of one gate execution.

    kappa is the dissipative stabilization rate and coupling the Hamiltonian
    strength; epsilon is the Zeno drive amplitude (the negative sign convention
    yields positive rotation angles).  For Z/ZZ exactly one of (epsilon, T) may
    be None; the other is solved from theta.
    """

    kind: str
    scheme: str = "dissipative"
    gamma: complex = complex(sqrt(2.0))
    delta: int = 0
    kappa: float = 1.0
    coupling: float = 1.0
    kappa1: float = 0.0
    epsilon: float | None = None
    theta: float = pi / 2
    T: float | None = None
    dtau: float | None = None
    monitored: bool = False
    seed: int = 0
    n_max: int | None = None
    n_traj: int = 400
    engine: str = "auto"

    def __post_init__(self):
        if self.scheme not in ("dissipative", "hamiltonian"):
            raise ValueError("scheme must be 'dissipative' or 'hamiltonian'")
        if self.T is not None and self.T <= 0:
            raise ValueError("gate time must be positive")
        if self.monitored and self.dtau is None:
            raise ValueError("monitored execution needs dtau")

    @property
    def stab_rate(self) -> float:
        return self.kappa if self.scheme == "dissipative" else self.coupling


@dataclass
class GateResult:
    kind: str
    scheme: str
    process: PauliProcess | None = None
    logical_map: np.ndarray | None = None
    leakage: float = 0.0
    error_probs: dict = field(default_factory=dict)
    fidelity: float | None = None
    diagnostics: dict = field(default_factory=dict)


def _zeno_check(spec: GateSpec, gamma_power: int):
    if not spec.epsilon:
        return
    g = abs(spec.gamma)
    gap = 8.0 * spec.stab_rate * g**6
    leak = abs(spec.epsilon) * sqrt(2.0) * g ** (gamma_power - 1)
    if gap > 0 and leak / gap > 0.05:
        warnings.warn(
            f"Zeno margin weak: drive leakage rate {leak:.3g} vs stabilization gap {gap:.3g}"
        )


def _gate_n_max(spec: GateSpec, multi_qubit: bool = False) -> int:
    if spec.n_max is not None:
        return spec.n_max
    g2 = abs(spec.gamma) ** 2
    if multi_qubit:
        return max(8, int(ceil(g2 + 4.0 * sqrt(g2 + 1.0) + 2.0)))
    return max(10, int(ceil(g2 + 6.0 * sqrt(g2 + 1.0) + 4.0)))


def _flat(dim: int) -> CompositeSpace:
    # compressed blocks ride through the evolution engines as one synthetic mode
    return CompositeSpace((ModeSpace(dim - 1),))


def _resolve_drive(spec: GateSpec, gamma_power: int) -> tuple[float, float]:
    """Solve (epsilon, T) from theta with rotation rate 4 |eps| |gamma|^power."""
    g = abs(spec.gamma) ** gamma_power
    if spec.T is None and spec.epsilon is None:
        raise ValueError("give either T or epsilon")
    if spec.T is None:
        if not spec.epsilon:
            raise ValueError("epsilon = 0 needs an explicit T")
        return -abs(spec.epsilon), spec.theta / (4.0 * abs(spec.epsilon) * g)
    if spec.epsilon is None:
        return -spec.theta / (4.0 * g * spec.T), spec.T
    return spec.epsilon, spec.T


# ---------------------------------------------------------------------------
# compressed sectors, embeddings, recovery
# ---------------------------------------------------------------------------


class _Block:
    """Conserved-sector compressed view of a multi-mode space."""

    def __init__(self, space: CompositeSpace, mask: np.ndarray):
        self.space = space
        self.basis = SectorBasis.from_masks(space, mask)
        self.flat = _flat(self.basis.dim)

    def op(self, mat) -> sp.csr_matrix:
        return self.basis.restrict_matrix(mat)

    def vec(self, v) -> np.ndarray:
        return self.basis.restrict_vector(v)

    def state(self, v) -> StateVector:
        amp = self.vec(v)
        nrm = np.linalg.norm(amp)
        if abs(nrm - 1.0) > 1e-9:
            raise ValueError("state has weight outside the compressed sector")
        return StateVector(self.flat, amp / nrm)

    def terms(self, terms) -> TermSum:
        return TermSum([(spec, self.op(m)) for spec, m in terms])

    def operator(self, mat) -> Operator:
        return Operator(self.flat, self.op(mat))


def _qubit_delta_mask(space: CompositeSpace, qubit: int, allowed) -> np.ndarray:
    dvals = space.occupations(2 * qubit + 1) - space.occupations(2 * qubit)
    return np.isin(dvals, np.atleast_1d(allowed))


def _qubit_delta_diag(space: CompositeSpace, qubit: int) -> np.ndarray:
    return (space.occupations(2 * qubit + 1) - space.occupations(2 * qubit)).astype(float)


def _embed_block_operator(space: CompositeSpace, first_mode: int, n_modes: int, small) -> sp.csr_matrix:
    """Embed an operator on `n_modes` contiguous modes, identity elsewhere."""
    if isinstance(small, Operator):
        small = small.mat
    small = small.tocsr() if sp.issparse(small) else sp.csr_matrix(small)
    d_before = space.stride(first_mode)
    d_block = 1
    for k in range(first_mode, first_mode + n_modes):
        d_block *= space.modes[k].dim
    d_after = space.dim // (d_before * d_block)
    if small.shape != (d_block, d_block):
        raise ValueError("block operator has wrong dimension")
    out = small
    if d_before > 1:
        out = sp.kron(out, sp.identity(d_before, dtype=_COMPLEX), format="csr")
    if d_after > 1:
        out = sp.kron(sp.identity(d_after, dtype=_COMPLEX), out, format="csr")
    return out.tocsr()


def _logical_rotation_z(pc: sp.csr_matrix, zc: sp.csr_matrix, theta: float) -> sp.csr_matrix:
    """exp(i theta/2 Z_c), identity off the code space (Z_c^2 = P_c)."""
    eye = sp.identity(pc.shape[0], dtype=_COMPLEX, format="csr")
    return (eye + (np.cos(theta / 2.0) - 1.0) * pc + 1j * np.sin(theta / 2.0) * zc).tocsr()


def _sector_frames(gamma, qspace, deltas) -> dict:
    return {int(d): code_frame(PairCatParams(gamma, int(d), qspace)) for d in deltas}


class _SectorRecovery:
    """Measured-difference recovery for a single qubit on its own 2-mode block."""

    def __init__(self, frames_by_delta: dict, block: _Block, delta0: int):
        self.diag = np.round(_qubit_delta_diag(block.space, 0)[block.basis.indices]).astype(int)
        home = frames_by_delta[delta0]
        dst = {+1: block.vec(home.plus), -1: block.vec(home.minus)}
        self.pairs = {}
        for d, fr in frames_by_delta.items():
            entries = []
            for mu, ket in ((+1, fr.plus), (-1, fr.minus)):
                mu_out = mu * (-1) ** abs(d - delta0)
                entries.append((block.vec(ket), dst[mu_out]))
            self.pairs[int(d)] = entries

    def measure_and_recover(self, col: np.ndarray, rng) -> tuple[int, np.ndarray]:
        probs = np.abs(col) ** 2
        vals = np.unique(self.diag)
        ps = np.array([probs[self.diag == v].sum() for v in vals])
        ps = ps / ps.sum()
        d = int(rng.choice(vals, p=ps))
        proj = np.where(self.diag == d, col, 0.0).astype(_COMPLEX)
        proj /= np.linalg.norm(proj)
        if d not in self.pairs:
            return d, proj  # beyond the recovery window: counted as leakage
        out = proj.copy()
        for src, dst in self.pairs[d]:
            amp = np.vdot(src, proj)
            out += amp * (dst - src)
        return d, out

    def kraus(self, block: _Block, delta0: int) -> list:
        ops = []
        covered = np.zeros((block.basis.dim, block.basis.dim), dtype=_COMPLEX)
        for d, entries in self.pairs.items():
            mat = np.zeros((block.basis.dim, block.basis.dim), dtype=_COMPLEX)
            for src, dst in entries:
                mat += np.outer(dst, src.conj())
                covered += np.outer(src, src.conj())
            ops.append(mat)
        ops.append(np.eye(block.basis.dim, dtype=_COMPLEX) - covered)
        return ops


def _apply_kraus(ops, rho: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho)
    for k in ops:
        km = k.toarray() if sp.issparse(k) else k
        out += km @ rho @ km.conj().T
    return out


def _infer_loss_counts(outcomes, delta0: int, final_delta: int) -> tuple[int, int]:
    """Visible (a-loss, b-loss) counts in a difference-snapshot record."""
    k = l = 0
    prev = delta0
    for v in [v for _, v in outcomes] + [final_delta]:
        step = int(round(v - prev))
        if step > 0:
            k += step
        else:
            l -= step
        prev = v
    return k, l


# ---------------------------------------------------------------------------
# preparation
# ---------------------------------------------------------------------------


def prepare_plus(spec: GateSpec, which: str = "+") -> GateResult:
    """Prepare |+> (or |->) by relaxation or by ramping the amplitude.

    Dissipative scheme: start from |0, D> (|1, D+1> for minus) and relax under
    the pair jump; difference and parity are conserved, so the run stays in
    one sector block.  Hamiltonian scheme: gamma(t) = gamma t/T under
    -K F(t)^dag F(t); adiabatic for T K |gamma|^6 large.
    """
    if which not in ("+", "-"):
        raise ValueError("which must be '+' or '-'")
    n_max = _gate_n_max(spec)
    space = two_mode_space(n_max)
    frame = code_frame(PairCatParams(spec.gamma, spec.delta, space))
    target = frame.plus if which == "+" else frame.minus
    parity = +1 if which == "+" else -1
    start = space.basis_state((0, spec.delta) if which == "+" else (1, spec.delta + 1))

    dvals = space.occupations(1) - space.occupations(0)
    par = 1 - 2 * (space.occupations(0) % 2)
    block = _Block(space, (dvals == spec.delta) & (par == parity))

    diag = {"n_max": n_max, "scheme": spec.scheme}
    if spec.scheme == "dissipative":
        f_op = pair_jump_operator(spec.gamma, space)
        jumps = [(spec.kappa, block.operator(f_op.mat))]
        v0 = block.vec(start)
        rho0 = DensityMatrix(block.flat, np.outer(v0, v0.conj()))
        t_final = spec.T if spec.T is not None else 10.0 / spec.kappa
        espec = EvolutionSpec(t_final=t_final, jumps=jumps)
        rho = evolve_master(rho0, espec) if spec.T is not None else steady_state(rho0, espec, tol=1e-10)
        vt = block.vec(target)
        fid = float(np.real(np.vdot(vt, rho.matrix @ vt)))
        diag["t_final"] = t_final
    else:
        if spec.T is None:
            raise ValueError("hamiltonian-scheme preparation needs a ramp time T")
        a = annihilation(space, 0).mat
        b = annihilation(space, 1).mat
        a2b2 = ((a @ a) @ (b @ b)).tocsr()
        n8 = (a2b2.conj().T @ a2b2).tocsr()
        eye = sp.identity(space.dim, dtype=_COMPLEX, format="csr")
        g4 = spec.gamma**4
        k_str, t_ramp = spec.coupling, spec.T
        ramp4 = lambda t: (t / t_ramp) ** 4
        ramp8 = lambda t: (t / t_ramp) ** 8
        h_terms = [
            (-k_str, n8),
            (lambda t: k_str * np.conj(g4) * ramp4(t), a2b2),
            (lambda t: k_str * g4 * ramp4(t), a2b2.conj().T.tocsr()),
            (lambda t: -k_str * abs(g4) ** 2 * ramp8(t), eye),
        ]
        espec = EvolutionSpec(t_final=t_ramp, hamiltonian=block.terms(h_terms))
        finals, _ = trajectory_ensemble(block.state(start), espec, n_traj=1, seed=spec.seed, sample_jumps=False)
        fid = float(abs(np.vdot(block.vec(target), finals[:, 0])) ** 2)
        diag["t_ramp"] = t_ramp

    return GateResult(
        kind="prepare", scheme=spec.scheme, fidelity=fid, leakage=1.0 - fid, diagnostics=diag
    )


# ---------------------------------------------------------------------------
# X-basis measurement
# ---------------------------------------------------------------------------


def measure_x(
    state: StateVector,
    chi: float,
    kappa1: float,
    variant: str = "one_ancilla",
    seed: int = 0,
    delta: int = 0,
) -> tuple[int, StateVector, bool]:
    """Dispersive parity readout of a pair-cat qubit (stabilization off).

    One ancilla reads the parity of mode a over T = pi/chi; the two-ancilla
    variant reads both modes, cross-checks the outcomes against the code's
    difference, and consults a final difference measurement when they
    disagree.  Returns (outcome +-1, post-measurement cavity state, flag for
    the consulted-difference path).
    """
    if variant not in ("one_ancilla", "two_ancilla"):
        raise ValueError("variant must be 'one_ancilla' or 'two_ancilla'")
    two = variant == "two_ancilla"
    cav = state.space
    n_anc = 2 if two else 1
    space = CompositeSpace(cav.modes + tuple(ModeSpace(1) for _ in range(n_anc)))
    dim_cav = cav.dim

    plus_anc = np.full(2**n_anc, 1.0 / sqrt(2.0**n_anc), dtype=_COMPLEX)
    amp = np.kron(plus_anc, state.amplitudes)

    n_q1 = space.occupations(2).astype(_COMPLEX)
    n_a = space.occupations(0).astype(_COMPLEX)
    h_diag = -chi * n_q1 * n_a
    if two:
        h_diag = h_diag - chi * space.occupations(3).astype(_COMPLEX) * space.occupations(1).astype(_COMPLEX)
    h = sp.diags(h_diag, format="csr")

    dvals = space.occupations(1) - space.occupations(0)
    block = _Block(space, np.abs(dvals - delta) <= 2)

    jumps = []
    if kappa1 > 0:
        for mode in (0, 1):
            jumps.append((kappa1, block.operator(annihilation(space, mode).mat)))
    espec = EvolutionSpec(t_final=pi / chi, hamiltonian=block.operator(h), jumps=jumps, trace_tol=None)
    finals, _ = trajectory_ensemble(block.state(StateVector(space, amp)), espec, n_traj=1, seed=seed)
    col = block.basis.embed_vector(finals[:, 0])

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xA17))))

    def measure_ancilla_x(vec: np.ndarray, anc_mode: int) -> tuple[int, np.ndarray]:
        occ = space.occupations(anc_mode)
        shift = space.stride(anc_mode)
        g_part = np.where(occ == 0, vec, 0.0)
        e_idx = np.nonzero(occ == 1)[0]
        e_al = np.zeros_like(vec)
        e_al[e_idx - shift] = vec[e_idx]
        plus = (g_part + e_al) / sqrt(2.0)
        minus = (g_part - e_al) / sqrt(2.0)
        p_plus = float(np.linalg.norm(plus) ** 2)
        total = p_plus + float(np.linalg.norm(minus) ** 2)
        pick = rng.uniform() * total < p_plus
        out = plus if pick else minus
        # the measured ancilla is reset to |g>; it is discarded afterwards
        return (+1 if pick else -1), out / np.linalg.norm(out)

    o_a, col = measure_ancilla_x(col, 2)
    flag = False
    outcome = o_a
    if two:
        o_b, col = measure_ancilla_x(col, 3)
        sign = -1 if delta % 2 else 1
        if o_b != o_a * sign:
            flag = True
            probs = np.abs(col) ** 2
            vals = np.unique(dvals)
            ps = np.array([probs[dvals == v].sum() for v in vals])
            ps = ps / ps.sum()
            d_meas = int(rng.choice(vals, p=ps))
            col = np.where(dvals == d_meas, col, 0.0)
            col /= np.linalg.norm(col)
            if d_meas == delta + 1:
                outcome = o_b * sign  # mode a lost a photon: trust mode b's parity
            else:
                outcome = o_a  # mode b lost (or unresolved): trust mode a

    cav_amp = col[:dim_cav].copy()
    post = StateVector(cav, cav_amp / np.linalg.norm(cav_amp))
    return int(outcome), post, bool(flag)


# ---------------------------------------------------------------------------
# Z(theta)
# ---------------------------------------------------------------------------


def _z_rotation_angle(frame: CodeFrame, eps: float, t: float) -> float:
    """Exact code-space angle theta(t) = -2 eps |g|^2 (r + 1/r) t (phase-aligned drive)."""
    g2 = abs(frame.params.gamma) ** 2
    return -2.0 * eps * g2 * (frame.r + 1.0 / frame.r) * t


def _derotate_logical(t_mat: np.ndarray, theta: float) -> np.ndarray:
    """Compose with Z(-theta) after the channel (in the |+->, |-> basis the
    logical-Z generator is the off-diagonal Pauli)."""
    u = np.array(
        [
            [np.cos(theta / 2.0), -1j * np.sin(theta / 2.0)],
            [-1j * np.sin(theta / 2.0), np.cos(theta / 2.0)],
        ],
        dtype=_COMPLEX,
    )
    return np.kron(u, u.conj()) @ t_mat


def _z_generators(spec: GateSpec, space: CompositeSpace, eps: float):
    a = annihilation(space, 0).mat
    b = annihilation(space, 1).mat
    ab = (a @ b).tocsr()
    phi = 2.0 * np.angle(spec.gamma) if spec.gamma != 0 else 0.0
    h_drive = (eps * np.exp(-1j * phi)) * ab + (eps * np.exp(1j * phi)) * ab.conj().T.tocsr()
    f_mat = pair_jump_operator(spec.gamma, space).mat
    h_terms = [(1.0, h_drive)]
    jumps = []
    if spec.scheme == "dissipative":
        jumps.append((spec.kappa, [(1.0, f_mat)]))
    else:
        h_terms.append((-spec.coupling, (f_mat.conj().T @ f_mat).tocsr()))
    if spec.kappa1 > 0:
        jumps.append((spec.kappa1, [(1.0, a)]))
        jumps.append((spec.kappa1, [(1.0, b)]))
    return h_terms, jumps


def gate_z(spec: GateSpec) -> GateResult:
    """Z(theta) under stabilization, with loss bookkeeping.

    Lossless or unmonitored runs use the master engine on the compressed
    sector and return the derotated code-subspace process (p_Z = r_ZZ after
    removing the nominal rotation).  Monitored runs use trajectory ensembles
    with difference snapshots every dtau, record-inferred flip corrections,
    and measured-difference recovery at the end.
    """
    if spec.kind != "z":
        raise ValueError("spec.kind must be 'z'")
    eps, t_gate = _resolve_drive(spec, gamma_power=2)
    _zeno_check(replace(spec, epsilon=eps), gamma_power=2)

    n_max = _gate_n_max(spec)
    space = two_mode_space(n_max)
    frame = code_frame(PairCatParams(spec.gamma, spec.delta, space))
    cap = 0 if spec.kappa1 == 0 else 3
    deltas = list(range(spec.delta - cap, spec.delta + cap + 1))
    block = _Block(space, _qubit_delta_mask(space, 0, deltas))
    h_terms, jumps = _z_generators(spec, space, eps)
    theta_exact = _z_rotation_angle(frame, eps, t_gate)

    engine = spec.engine
    if engine == "auto":
        engine = "trajectory" if spec.monitored else "master"
    runner = _z_master if engine == "master" else _z_trajectories
    result = runner(spec, space, frame, block, h_terms, jumps, t_gate, theta_exact, deltas)
    result.diagnostics.update(
        {"n_max": n_max, "T": t_gate, "epsilon": eps, "theta_exact": theta_exact, "engine": engine}
    )
    return result


def _z_master(spec, space, frame, block, h_terms, jumps, t_gate, theta_exact, deltas):
    ham = block.terms(h_terms)
    jump_ops = [(r, block.terms(ts)) for r, ts in jumps]
    espec = EvolutionSpec(t_final=t_gate, hamiltonian=ham, jumps=jump_ops, trace_tol=None)
    vp, vm = block.vec(frame.plus), block.vec(frame.minus)

    rec_ops = None
    if spec.kappa1 > 0:
        rec = _SectorRecovery(_sector_frames(spec.gamma, space, deltas), block, spec.delta)
        rec_ops = rec.kraus(block, spec.delta)

    omega = theta_exact / t_gate
    sample_times = list(np.linspace(t_gate / 5.0, t_gate, 5))
    units = [np.outer(x, y.conj()) for x, y in ((vp, vp), (vp, vm), (vm, vp), (vm, vm))]
    outs = []
    pz_t = []
    for idx, u in enumerate(units):
        rho0 = DensityMatrix(block.flat, u)
        if idx == 0:
            rhos = evolve_master(rho0, espec, sample_times=sample_times)
            for t_s, r_s in zip(sample_times, rhos):
                mat = _apply_kraus(rec_ops, r_s.matrix) if rec_ops is not None else r_s.matrix
                rho_l = np.array(
                    [[np.vdot(vp, mat @ vp), np.vdot(vp, mat @ vm)], [np.vdot(vm, mat @ vp), np.vdot(vm, mat @ vm)]]
                )
                rho_c = _derotate_logical(rho_l.reshape(-1), omega * t_s).reshape(2, 2)
                tot = float(np.real(rho_c[0, 0] + rho_c[1, 1]))
                pz_t.append((float(t_s), float(np.real(rho_c[1, 1])) / tot if tot > 0 else 0.0))
            final = rhos[-1].matrix
        else:
            final = evolve_master(rho0, espec).matrix
        outs.append(_apply_kraus(rec_ops, final) if rec_ops is not None else final)

    basis = (vp, vm)
    order = [(0, 0), (0, 1), (1, 0), (1, 1)]
    t_mat = np.zeros((4, 4), dtype=_COMPLEX)
    for col_i, (m, n) in enumerate(order):
        for row_i, (j, k) in enumerate(order):
            t_mat[row_i, col_i] = np.vdot(basis[j], outs[col_i] @ basis[k])

    proc = pauli_superop_to_r(_derotate_logical(t_mat, theta_exact))
    leak = 1.0 - float(np.real(t_mat[0, 0] + t_mat[3, 0]))
    return GateResult(
        kind="z",
        scheme=spec.scheme,
        process=proc,
        leakage=max(leak, 0.0),
        error_probs={"Z": float(np.real(proc.r[3, 3])), "Y": float(np.real(proc.r[2, 2]))},
        diagnostics={"p_z_of_t": pz_t},
    )


def _z_trajectories(spec, space, frame, block, h_terms, jumps, t_gate, theta_exact, deltas):
    ham = block.terms(h_terms)
    jump_ops = [(r, block.terms(ts)) for r, ts in jumps]
    espec = EvolutionSpec(t_final=t_gate, hamiltonian=ham, jumps=jump_ops)
    psi0 = block.state(frame.plus)

    monitor = None
    if spec.monitored:
        ddiag = _qubit_delta_diag(space, 0)[block.basis.indices]
        monitor = MonitorSpec(interval=spec.dtau, observable=Operator.from_diagonal(block.flat, ddiag))

    finals, records = trajectory_ensemble(psi0, espec, n_traj=spec.n_traj, seed=spec.seed, monitor=monitor)
    rec = _SectorRecovery(_sector_frames(spec.gamma, space, deltas), block, spec.delta)

    vp, vm = block.vec(frame.plus), block.vec(frame.minus)
    th = theta_exact
    ok = np.cos(th / 2.0) * vp + 1j * np.sin(th / 2.0) * vm
    err = np.cos(th / 2.0) * vm + 1j * np.sin(th / 2.0) * vp
    zc_flip = np.outer(vp, vm.conj()) + np.outer(vm, vp.conj())
    p_code = np.outer(vp, vp.conj()) + np.outer(vm, vm.conj())

    q_err = np.empty(finals.shape[1])
    q_ok = np.empty(finals.shape[1])
    for i in range(finals.shape[1]):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((spec.seed, i, 0xF1))))
        d_meas, col = rec.measure_and_recover(finals[:, i], rng)
        if spec.monitored:
            k_cnt, l_cnt = _infer_loss_counts(records[i].outcomes, spec.delta, d_meas)
            if min(k_cnt, l_cnt) % 2 == 1:
                col = zc_flip @ col + (col - p_code @ col)
                col /= np.linalg.norm(col)
        q_err[i] = abs(np.vdot(err, col)) ** 2
        q_ok[i] = abs(np.vdot(ok, col)) ** 2

    p_z = float(np.mean(q_err))
    return GateResult(
        kind="z",
        scheme=spec.scheme,
        leakage=max(1.0 - float(np.mean(q_ok)) - p_z, 0.0),
        error_probs={"Z": p_z, "Z_stderr": float(np.std(q_err) / sqrt(len(q_err)))},
        diagnostics={"n_traj": spec.n_traj},
    )


# ---------------------------------------------------------------------------
# ZZ(theta)
# ---------------------------------------------------------------------------


def _multi_qubit_space(spec: GateSpec, n_qubits: int) -> CompositeSpace:
    n_max = _gate_n_max(spec, multi_qubit=True)
    return CompositeSpace(tuple(ModeSpace(n_max) for _ in range(2 * n_qubits)))


def _pair_product(space: CompositeSpace, qubit: int) -> sp.csr_matrix:
    a = annihilation(space, 2 * qubit).mat
    b = annihilation(space, 2 * qubit + 1).mat
    return (a @ b).tocsr()


def _qubit_pair_jump(gamma: complex, space: CompositeSpace, qubit: int) -> sp.csr_matrix:
    qspace = two_mode_space(space.modes[2 * qubit].n_max)
    return _embed_block_operator(space, 2 * qubit, 2, pair_jump_operator(gamma, qspace).mat)


def gate_zz(spec: GateSpec) -> GateResult:
    """ZZ(theta) via the cross pair-exchange drive; noiseless map extraction
    from the deterministic no-jump evolution of the four Z-basis products."""
    if spec.kind != "zz":
        raise ValueError("spec.kind must be 'zz'")
    eps, t_gate = _resolve_drive(spec, gamma_power=4)
    _zeno_check(replace(spec, epsilon=eps), gamma_power=4)
    space = _multi_qubit_space(spec, 2)
    n_max = space.modes[0].n_max
    frame = code_frame(PairCatParams(spec.gamma, spec.delta, two_mode_space(n_max)))

    pair1, pair2 = _pair_product(space, 0), _pair_product(space, 1)
    h_drive = eps * (pair1 @ pair2.conj().T.tocsr() + pair1.conj().T.tocsr() @ pair2)
    f1 = _qubit_pair_jump(spec.gamma, space, 0)
    f2 = _qubit_pair_jump(spec.gamma, space, 1)
    h_terms = [(1.0, h_drive)]
    jumps = []
    if spec.scheme == "dissipative":
        jumps = [(spec.kappa, [(1.0, f1)]), (spec.kappa, [(1.0, f2)])]
    else:
        h_terms.append((-spec.coupling, (f1.conj().T @ f1 + f2.conj().T @ f2).tocsr()))

    mask = _qubit_delta_mask(space, 0, [spec.delta]) & _qubit_delta_mask(space, 1, [spec.delta])
    block = _Block(space, mask)
    espec = EvolutionSpec(
        t_final=t_gate,
        hamiltonian=block.terms(h_terms),
        jumps=[(r, block.terms(ts)) for r, ts in jumps],
    )

    z_states = {0: frame.zero, 1: frame.one}
    ins = [(0, 0), (0, 1), (1, 0), (1, 1)]
    amps = np.zeros((4, 4), dtype=_COMPLEX)
    leak = 0.0
    for col_i, (x1, x2) in enumerate(ins):
        psi_full = StateVector(space, np.kron(z_states[x2].amplitudes, z_states[x1].amplitudes))
        finals, _ = trajectory_ensemble(block.state(psi_full), espec, n_traj=1, seed=spec.seed, sample_jumps=False)
        fin = finals[:, 0]
        for row_i, (y1, y2) in enumerate(ins):
            ref = block.vec(StateVector(space, np.kron(z_states[y2].amplitudes, z_states[y1].amplitudes)))
            amps[row_i, col_i] = np.vdot(ref, fin)
        leak = max(leak, 1.0 - float(np.sum(np.abs(amps[:, col_i]) ** 2)))

    phases = np.angle(np.diag(amps))
    theta_measured = (phases[0] + phases[3] - phases[1] - phases[2]) / 2.0
    return GateResult(
        kind="zz",
        scheme=spec.scheme,
        logical_map=amps,
        leakage=leak,
        diagnostics={"T": t_gate, "epsilon": eps, "theta_measured": float(theta_measured), "n_max": n_max},
    )


# ---------------------------------------------------------------------------
# X gate
# ---------------------------------------------------------------------------


def gate_x(spec: GateSpec) -> GateResult:
    """X gate by gamma(t) = gamma e^{i pi t/2T} plus -(pi/2T)(n_a + n_b).

    The compensated path is exactly stabilized, so at kappa1 = 0 the map is
    e^{i D pi/2} X_c (including the deterministic phase) for any T, with
    leakage at the truncation/integration floor.
    """
    if spec.kind != "x":
        raise ValueError("spec.kind must be 'x'")
    if spec.T is None:
        raise ValueError("the X gate needs an explicit T")
    t_gate = spec.T
    n_max = _gate_n_max(spec)
    space = two_mode_space(n_max)
    frame = code_frame(PairCatParams(spec.gamma, spec.delta, space))
    omega = 2.0 * pi / t_gate
    g4 = spec.gamma**4

    a = annihilation(space, 0).mat
    b = annihilation(space, 1).mat
    a2b2 = ((a @ a) @ (b @ b)).tocsr()
    eye = sp.identity(space.dim, dtype=_COMPLEX, format="csr")
    n_tot = sp.diags((space.occupations(0) + space.occupations(1)).astype(_COMPLEX), format="csr")

    f_terms = [(1.0, a2b2), (("phase", omega), -g4 * eye)]
    h_terms = [(-pi / (2.0 * t_gate), n_tot)]
    jumps = []
    if spec.scheme == "dissipative":
        jumps.append((spec.kappa, f_terms))
    else:
        n8 = (a2b2.conj().T @ a2b2).tocsr()
        h_terms += [
            (-spec.coupling, n8),
            (("phase", omega), spec.coupling * g4 * a2b2.conj().T.tocsr()),
            (("phase", -omega), spec.coupling * np.conj(g4) * a2b2),
            (-spec.coupling * abs(g4) ** 2, eye),
        ]
    if spec.kappa1 > 0:
        jumps += [(spec.kappa1, [(1.0, a)]), (spec.kappa1, [(1.0, b)])]

    cap = 0 if spec.kappa1 == 0 else 2
    deltas = list(range(spec.delta - cap, spec.delta + cap + 1))
    par = 1 - 2 * (space.occupations(0) % 2)

    amps = np.zeros((2, 2), dtype=_COMPLEX)
    leak = 0.0
    for col_i, (src, parity) in enumerate(((frame.plus, +1), (frame.minus, -1))):
        mask = _qubit_delta_mask(space, 0, deltas)
        if spec.kappa1 == 0:
            mask &= par == parity
        block = _Block(space, mask)
        espec = EvolutionSpec(
            t_final=t_gate,
            hamiltonian=block.terms(h_terms),
            jumps=[(r, block.terms(ts)) for r, ts in jumps],
        )
        finals, _ = trajectory_ensemble(block.state(src), espec, n_traj=1, seed=spec.seed, sample_jumps=False)
        fin = finals[:, 0]
        amps[0, col_i] = np.vdot(block.vec(frame.plus), fin)
        amps[1, col_i] = np.vdot(block.vec(frame.minus), fin)
        leak = max(leak, 1.0 - float(np.sum(np.abs(amps[:, col_i]) ** 2)))

    target = (1j**spec.delta) * np.diag([1.0, -1.0]).astype(_COMPLEX)
    infidelity = 1.0 - float(abs(np.trace(target.conj().T @ amps)) / 2.0)
    return GateResult(
        kind="x",
        scheme=spec.scheme,
        logical_map=amps,
        leakage=leak,
        error_probs={"map_infidelity": infidelity},
        diagnostics={"T": t_gate, "n_max": n_max},
    )


# ---------------------------------------------------------------------------
# CNOT
# ---------------------------------------------------------------------------


class _CnotContext:
    """Assembled generators, compressed block and logical probes for one CNOT."""

    def __init__(self, spec: GateSpec, delta2_window: int):
        if spec.T is None:
            raise ValueError("the CNOT needs an explicit T")
        self.spec = spec
        self.t_gate = spec.T
        space = _multi_qubit_space(spec, 2)
        self.space = space
        self.n_max = space.modes[0].n_max
        self.qspace = two_mode_space(self.n_max)
        self.frame = code_frame(PairCatParams(spec.gamma, spec.delta, self.qspace))
        d0 = spec.delta
        self.target_deltas = list(range(d0 - delta2_window, d0 + delta2_window + 1))
        ctrl_window = 0 if spec.kappa1 == 0 else delta2_window
        self.ctrl_deltas = list(range(d0 - ctrl_window, d0 + ctrl_window + 1))
        mask = _qubit_delta_mask(space, 0, self.ctrl_deltas) & _qubit_delta_mask(space, 1, self.target_deltas)
        self.block = _Block(space, mask)

        g2 = spec.gamma**2
        g4 = spec.gamma**4
        omega = 2.0 * pi / self.t_gate
        eye = sp.identity(space.dim, dtype=_COMPLEX, format="csr")
        a1b1 = _pair_product(space, 0)
        a2sq = (_qubit_pair_jump(spec.gamma, space, 1) + g4 * eye).tocsr()  # a2^2 b2^2
        g0 = (a2sq - 0.5 * g2 * a1b1 - 0.5 * g4 * eye).tocsr()
        g1 = (0.5 * g2 * a1b1 - 0.5 * g4 * eye).tocsr()
        self.f1 = _qubit_pair_jump(spec.gamma, space, 0)
        self.f2_terms = [(1.0, g0), (("phase", omega), g1)]

        n2 = (
            sp.diags((space.occupations(2) + space.occupations(3)).astype(_COMPLEX), format="csr")
            - 2.0 * abs(spec.gamma) ** 2 * eye
        )
        x1 = (pi / (4.0 * self.t_gate) / (2.0 * g2)) * (a1b1 - g2 * eye)
        h_rot = (x1 @ n2 + x1.conj().T.tocsr() @ n2).tocsr()
        self.h_terms = [(1.0, h_rot)]
        self.jumps = []
        if spec.scheme == "dissipative":
            self.jumps.append((spec.kappa, [(1.0, self.f1)]))
            self.jumps.append((spec.kappa, self.f2_terms))
        else:
            self.h_terms += [
                (-spec.coupling, (self.f1.conj().T @ self.f1).tocsr()),
                (-spec.coupling, (g0.conj().T @ g0 + g1.conj().T @ g1).tocsr()),
                (("phase", omega), -spec.coupling * (g0.conj().T @ g1).tocsr()),
                (("phase", -omega), -spec.coupling * (g1.conj().T @ g0).tocsr()),
            ]
        if spec.kappa1 > 0:
            for mode in range(4):
                self.jumps.append((spec.kappa1, [(1.0, annihilation(space, mode).mat)]))

        self.pc1 = _embed_block_operator(space, 0, 2, self.frame.code_projector.mat)
        self.zc1 = _embed_block_operator(space, 0, 2, self.frame.logical_z.mat)
        self.delta2_diag = _qubit_delta_diag(space, 1)[self.block.basis.indices]

    def z1_rotation_restricted(self, theta: float) -> sp.csr_matrix:
        return self.block.op(_logical_rotation_z(self.pc1, self.zc1, theta))

    def product_vec(self, ctrl: StateVector, targ: StateVector) -> np.ndarray:
        return self.block.vec(StateVector(self.space, np.kron(targ.amplitudes, ctrl.amplitudes)))

    def product_state(self, ctrl: StateVector, targ: StateVector) -> StateVector:
        v = self.product_vec(ctrl, targ)
        return StateVector(self.block.flat, v / np.linalg.norm(v))

    def evolution(self) -> EvolutionSpec:
        return EvolutionSpec(
            t_final=self.t_gate,
            hamiltonian=self.block.terms(self.h_terms),
            jumps=[(r, self.block.terms(ts)) for r, ts in self.jumps],
            trace_tol=None,
        )

    def target_recovery_restricted(self, d_meas: int) -> sp.csr_matrix:
        """Embedded target-qubit recovery isometry for one measured sector."""
        frames = _sector_frames(self.spec.gamma, self.qspace, [self.spec.delta, d_meas])
        home, fr = frames[self.spec.delta], frames[d_meas]
        r_small = np.zeros((self.qspace.dim, self.qspace.dim), dtype=_COMPLEX)
        dom = np.zeros_like(r_small)
        for mu, ket in ((+1, fr.plus), (-1, fr.minus)):
            mu_out = mu * (-1) ** abs(d_meas - self.spec.delta)
            dst = home.plus if mu_out == +1 else home.minus
            r_small += np.outer(dst.amplitudes, ket.amplitudes.conj())
            dom += np.outer(ket.amplitudes, ket.amplitudes.conj())
        r_small += np.eye(self.qspace.dim, dtype=_COMPLEX) - dom
        full = _embed_block_operator(self.space, 2, 2, sp.csr_matrix(r_small))
        return self.block.op(full)


def gate_cnot(spec: GateSpec) -> GateResult:
    """Noiseless CNOT map from the deterministic no-jump evolution.

    Reads the 4x4 logical map on the Z-basis product code states; the rotating
    target leaves exp[-i pi(|gamma|^2 - delta/2)] on the |1> control branch,
    which is trivial when (|gamma|^2 - delta/2) is an even integer.
    """
    if spec.kind != "cnot":
        raise ValueError("spec.kind must be 'cnot'")
    g2 = abs(spec.gamma) ** 2
    cond = g2 - spec.delta / 2.0
    if abs(cond / 2.0 - round(cond / 2.0)) > 1e-9:
        warnings.warn(
            f"(|gamma|^2 - delta/2) = {cond:.6g} is not an even integer; "
            "the conditional phase needs a Z(theta) fix-up on the control"
        )
    ctx = _CnotContext(spec, delta2_window=0)
    espec = ctx.evolution()
    z_states = {0: ctx.frame.zero, 1: ctx.frame.one}
    ins = [(0, 0), (0, 1), (1, 0), (1, 1)]
    amps = np.zeros((4, 4), dtype=_COMPLEX)
    leak = 0.0
    for col_i, (x1, x2) in enumerate(ins):
        psi0 = ctx.product_state(z_states[x1], z_states[x2])
        finals, _ = trajectory_ensemble(psi0, espec, n_traj=1, seed=spec.seed, sample_jumps=False)
        fin = finals[:, 0]
        for row_i, (y1, y2) in enumerate(ins):
            amps[row_i, col_i] = np.vdot(ctx.product_vec(z_states[y1], z_states[y2]), fin)
        leak = max(leak, 1.0 - float(np.sum(np.abs(amps[:, col_i]) ** 2)))

    ideal = np.zeros((4, 4), dtype=_COMPLEX)
    ideal[0, 0] = ideal[1, 1] = 1.0
    phase_11 = np.exp(-1j * pi * cond)
    ideal[3, 2] = ideal[2, 3] = phase_11
    infidelity = 1.0 - float(abs(np.trace(ideal.conj().T @ amps)) / 4.0)
    return GateResult(
        kind="cnot",
        scheme=spec.scheme,
        logical_map=amps,
        leakage=leak,
        error_probs={"map_infidelity": infidelity},
        diagnostics={"T": ctx.t_gate, "n_max": ctx.n_max},
    )


def cnot_loss_bookkeeping(spec: GateSpec, t0_frac: float = 0.37) -> dict:
    """Inject one a2 loss at t0 and check the mapped code rows.

    Each computational input |x1, x2> ends with the target in the upshifted
    difference sector as |x2 xor x1>, times the loss-time phase on the |1>
    control branch; returns per-row fidelities and phases.
    """
    ctx = _CnotContext(spec, delta2_window=1)
    t0 = t0_frac * ctx.t_gate
    a2 = annihilation(ctx.space, 2).mat
    inj = [(t0, ctx.block.op(a2))]
    espec = ctx.evolution()
    frame_up = code_frame(PairCatParams(spec.gamma, spec.delta + 1, ctx.qspace))
    z_states = {0: ctx.frame.zero, 1: ctx.frame.one}
    z_up = {0: frame_up.zero, 1: frame_up.one}

    out = {}
    for x1 in (0, 1):
        for x2 in (0, 1):
            psi0 = ctx.product_state(z_states[x1], z_states[x2])
            finals, _ = trajectory_ensemble(
                psi0, espec, n_traj=1, seed=spec.seed, injections=inj, sample_jumps=False
            )
            fin = finals[:, 0]
            ref = ctx.product_vec(z_states[x1], z_up[x2 ^ x1])
            amp = np.vdot(ref, fin)
            out[(x1, x2)] = {
                "fidelity": float(abs(amp) ** 2),
                "phase": complex(amp / abs(amp)) if abs(amp) > 0 else complex(0),
            }
    return out


def cnot_conditional_phase(spec: GateSpec, t0_frac: float, feedback: str | None = None) -> dict:
    """Measure the loss-induced conditional phase on the control.

    Runs the gate on (|0> + |1>)_1 |0>_2 with and without a deterministic a2
    injection at t0 = t0_frac T, applies measured-difference recovery on the
    target, and compares the |11>/|00> amplitude ratios of the two runs.  The
    expected extra factor is exp[-i pi/2 (1 - t0/T)].  With feedback "exact"
    or "midpoint" a Z1 rotation computed from the (exact / dtau-window
    midpoint) loss time is applied afterwards and the residual reported.
    """
    ctx = _CnotContext(spec, delta2_window=1)
    t0 = t0_frac * ctx.t_gate
    espec = ctx.evolution()
    frame = ctx.frame
    ctrl_sup = StateVector(
        frame.space, (frame.zero.amplitudes + frame.one.amplitudes) / sqrt(2.0)
    )

    def run(inject: bool) -> np.ndarray:
        inj = [(t0, ctx.block.op(annihilation(ctx.space, 2).mat))] if inject else None
        psi0 = ctx.product_state(ctrl_sup, frame.zero)
        finals, _ = trajectory_ensemble(
            psi0, espec, n_traj=1, seed=spec.seed, injections=inj, sample_jumps=False
        )
        return finals[:, 0]

    base = run(False)
    lossy = run(True)
    rec = ctx.target_recovery_restricted(spec.delta + 1)
    lossy = rec @ lossy
    lossy /= np.linalg.norm(lossy)

    v00 = ctx.product_vec(frame.zero, frame.zero)
    v11 = ctx.product_vec(frame.one, frame.one)
    ratio_base = np.vdot(v11, base) / np.vdot(v00, base)
    ratio_loss = np.vdot(v11, lossy) / np.vdot(v00, lossy)
    phase = ratio_loss / ratio_base
    phase /= abs(phase)
    expected = np.exp(-1j * (pi / 2.0) * (1.0 - t0 / ctx.t_gate))
    result = {
        "phase": complex(phase),
        "expected": complex(expected),
        "phase_error": float(abs(phase - expected)),
    }

    if feedback is not None:
        if feedback == "exact":
            t_est = t0
        elif feedback == "midpoint":
            if spec.dtau is None:
                raise ValueError("midpoint feedback needs dtau")
            window = int(np.floor(t0 / spec.dtau)) + 1
            t_est = (window - 0.5) * spec.dtau
        else:
            raise ValueError("feedback must be None, 'exact', or 'midpoint'")
        corr = ctx.z1_rotation_restricted(-pi * (1.0 - t_est / ctx.t_gate))
        fixed = corr @ lossy
        ratio_fix = np.vdot(v11, fixed) / np.vdot(v00, fixed)
        resid = ratio_fix / ratio_base
        resid /= abs(resid)
        result["feedback_mode"] = feedback
        result["residual_error"] = float(abs(resid - 1.0))
    return result


# ---------------------------------------------------------------------------
# Toffoli generators (factored form)
# ---------------------------------------------------------------------------


@dataclass
class _FactoredTerm:
    coeff: object  # constant or ("phase", omega)
    factors: tuple  # per-qubit 2-mode csr or None for identity


@dataclass
class ToffoliGenerators:
    """Target jump F3(t) and compensation Hamiltonian as per-qubit factors.

    Factored storage keeps the three-qubit construction at two-mode cost: the
    residual of F3 on a product state only needs per-qubit mat-vecs and Gram
    inner products, so generous per-mode cutoffs stay cheap.
    """

    spec: GateSpec
    qspace: CompositeSpace
    f3_terms: list
    h_rot_terms: list
    report: dict

    def f3_residual(self, t: float, vecs) -> float:
        pieces = []
        for term in self.f3_terms:
            c = TermSum._coeff(term.coeff, t)
            ws = [v if f is None else f @ v for v, f in zip(vecs, term.factors)]
            pieces.append((c, ws))
        total = 0.0
        for ci, wi in pieces:
            for cj, wj in pieces:
                g = np.conj(ci) * cj
                for av, bv in zip(wi, wj):
                    g *= np.vdot(av, bv)
                total += g.real
        return float(sqrt(max(total, 0.0)))

    def h_rot_projected(self, ctrl1: np.ndarray, ctrl2: np.ndarray) -> np.ndarray:
        """<c1 c2| H_rot |c1 c2> as a dense operator on the target mode pair."""
        dim = self.qspace.dim
        out = np.zeros((dim, dim), dtype=_COMPLEX)
        for term in self.h_rot_terms:
            c = TermSum._coeff(term.coeff, 0.0)
            f1, f2, f3 = term.factors
            s1 = np.vdot(ctrl1, f1 @ ctrl1 if f1 is not None else ctrl1)
            s2 = np.vdot(ctrl2, f2 @ ctrl2 if f2 is not None else ctrl2)
            out += (c * s1 * s2) * (f3.toarray() if f3 is not None else np.eye(dim))
        return out


def toffoli_generators(spec: GateSpec) -> ToffoliGenerators:
    """Build F1, F2, F3(t) and the compensation Hamiltonian; verify that F3(t)
    annihilates the instantaneous target state for all four control
    configurations (the target rotates only when both controls are set)."""
    if spec.kind != "toffoli":
        raise ValueError("spec.kind must be 'toffoli'")
    if spec.T is None:
        raise ValueError("the Toffoli generators need T")
    g = spec.gamma
    g2 = g**2
    n_max = spec.n_max if spec.n_max is not None else default_n_max(g) + 4
    qspace = two_mode_space(n_max)
    a = annihilation(qspace, 0).mat
    b = annihilation(qspace, 1).mat
    pair = (a @ b).tocsr()
    a2b2 = ((a @ a) @ (b @ b)).tocsr()
    eye = sp.identity(qspace.dim, dtype=_COMPLEX, format="csr")
    plus_op = (pair + g2 * eye).tocsr()
    minus_op = (pair - g2 * eye).tocsr()
    omega = 2.0 * pi / spec.T

    f3_terms = [
        _FactoredTerm(1.0, (None, None, a2b2)),
        _FactoredTerm(-0.25, (plus_op, plus_op, None)),
        _FactoredTerm(+0.25, (minus_op, plus_op, None)),
        _FactoredTerm(+0.25, (plus_op, minus_op, None)),
        _FactoredTerm(("phase", omega), ((-0.25) * minus_op, minus_op, None)),
    ]

    n3 = (
        sp.diags((qspace.occupations(0) + qspace.occupations(1)).astype(_COMPLEX), format="csr")
        - 2.0 * abs(g) ** 2 * eye
    )
    x1 = ((1.0 / (2.0 * g2)) * minus_op).tocsr()
    y2 = ((1.0 / (2.0 * np.conj(g2))) * (pair.conj().T - np.conj(g2) * eye)).tocsr()
    h_rot_terms = [
        _FactoredTerm(-pi / (4.0 * spec.T), (x1, y2, n3)),
        _FactoredTerm(-pi / (4.0 * spec.T), (x1.conj().T.tocsr(), y2.conj().T.tocsr(), n3)),
    ]

    gens = ToffoliGenerators(spec=spec, qspace=qspace, f3_terms=f3_terms, h_rot_terms=h_rot_terms, report={})

    frame = code_frame(PairCatParams(g, spec.delta, qspace))
    ctrl = {
        0: pair_coherent_state(PairCatParams(g, spec.delta, qspace)).amplitudes,
        1: pair_coherent_state(PairCatParams(1j * g, spec.delta, qspace)).amplitudes,
    }
    probes = [0.0, 0.33 * spec.T, 0.71 * spec.T]
    report = {}
    for x1c in (0, 1):
        for x2c in (0, 1):
            worst = 0.0
            for t in probes:
                if (x1c, x2c) == (1, 1):
                    g_t = g * np.exp(1j * pi * t / (2.0 * spec.T))
                    targ = code_frame(PairCatParams(g_t, spec.delta, qspace)).plus.amplitudes
                else:
                    targ = frame.plus.amplitudes
                worst = max(worst, gens.f3_residual(t, (ctrl[x1c], ctrl[x2c], targ)))
            report[(x1c, x2c)] = worst
    report["(1,1)-static-target"] = gens.f3_residual(
        0.5 * spec.T, (ctrl[1], ctrl[1], frame.plus.amplitudes)
    )
    gens.report = report
    return gens


# ---------------------------------------------------------------------------
# closed-form error predictions and scaling fits
# ---------------------------------------------------------------------------


@dataclass
class ErrorPrediction:
    kind: str
    monitored: bool
    probs: dict
    total: float
    T_opt: float
    p_opt: float


def predict_error(spec: GateSpec) -> ErrorPrediction:
    """Closed-form dephasing budgets and the optimal gate time.

    Z:  p = eps^2 T/(kappa g^4) + (k1 g^2 T)^2     (unmonitored)
        p = eps^2 T/(kappa g^4) + k1^2 g^4 dtau T  (monitored)
        with eps = theta/(4 g^2 T); unmonitored optimum at
        T = (theta^2/(32 kappa k1^2 g^12))^{1/3}.
    ZZ: leakage theta^2/(8 kappa g^8 T) plus per-qubit loss terms.
    X:  loss only; the optimum is T -> 0.
    CNOT: p_Z1 = k1^2 g^4 dtau T + pi^2/(128 kappa g^6 T) + k1 g^2 dtau^2 pi^2/(96 T),
          p_Z2 = p_Z1Z2 = k1^2 g^4 dtau T / 2.
    Toffoli: the same bookkeeping with 1/256 and 1/384 coefficients,
          p_Z3 = 5/8 X, triple/cross terms X/8, where X = k1^2 g^4 dtau T.
    """
    g = abs(spec.gamma)
    kappa, kappa1, dtau, theta = spec.stab_rate, spec.kappa1, spec.dtau, spec.theta
    mon = spec.monitored

    if spec.kind == "z":
        a_c = theta**2 / (16.0 * kappa * g**8)
        if mon:
            if dtau is None:
                raise ValueError("monitored prediction needs dtau")
            b_c = kappa1**2 * g**4 * dtau
            t_opt = sqrt(a_c / b_c) if b_c > 0 else float("inf")
            p_fun = lambda T: {"Z_leak": a_c / T, "Z_loss": b_c * T}
        else:
            c_c = (kappa1 * g**2) ** 2
            t_opt = (a_c / (2.0 * c_c)) ** (1.0 / 3.0) if c_c > 0 else float("inf")
            p_fun = lambda T: {"Z_leak": a_c / T, "Z_loss": c_c * T**2}
    elif spec.kind == "zz":
        a_c = theta**2 / (8.0 * kappa * g**8)
        if mon:
            if dtau is None:
                raise ValueError("monitored prediction needs dtau")
            b_c = kappa1**2 * g**4 * dtau
            t_opt = sqrt(a_c / (2.0 * b_c)) if b_c > 0 else float("inf")
            p_fun = lambda T: {"Z1Z2": a_c / T, "Z1": b_c * T, "Z2": b_c * T}
        else:
            c_c = (kappa1 * g**2) ** 2
            t_opt = (a_c / (4.0 * c_c)) ** (1.0 / 3.0) if c_c > 0 else float("inf")
            p_fun = lambda T: {"Z1Z2": a_c / T, "Z1": c_c * T**2, "Z2": c_c * T**2}
    elif spec.kind == "x":
        if mon:
            if dtau is None:
                raise ValueError("monitored prediction needs dtau")
            p_fun = lambda T: {"Z": kappa1**2 * g**4 * dtau * T}
        else:
            p_fun = lambda T: {"Z": (kappa1 * g**2 * T) ** 2}
        t_opt = 0.0
    elif spec.kind == "cnot":
        if dtau is None:
            raise ValueError("the CNOT budget assumes difference monitoring: set dtau")
        lin = 2.0 * kappa1**2 * g**4 * dtau
        inv = pi**2 / (128.0 * kappa * g**6) + kappa1 * g**2 * dtau**2 * pi**2 / 96.0
        t_opt = sqrt(inv / lin) if lin > 0 else float("inf")
        p_fun = lambda T: {
            "Z1": kappa1**2 * g**4 * dtau * T
            + pi**2 / (128.0 * kappa * g**6 * T)
            + kappa1 * g**2 * dtau**2 * pi**2 / (96.0 * T),
            "Z2": kappa1**2 * g**4 * dtau * T / 2.0,
            "Z1Z2": kappa1**2 * g**4 * dtau * T / 2.0,
        }
    elif spec.kind == "toffoli":
        if dtau is None:
            raise ValueError("the Toffoli budget assumes difference monitoring: set dtau")
        x_c = kappa1**2 * g**4 * dtau
        a_c = pi**2 / (256.0 * kappa * g**6) + kappa1 * g**2 * dtau**2 * pi**2 / 384.0
        t_opt = sqrt(a_c / x_c) if x_c > 0 else float("inf")
        p_fun = lambda T: {
            "Z1": x_c * T + a_c / T,
            "Z2": x_c * T + a_c / T,
            "Z1Z2": a_c / T,
            "Z3": 5.0 / 8.0 * x_c * T,
            "Z1Z3": x_c * T / 8.0,
            "Z2Z3": x_c * T / 8.0,
            "Z1Z2Z3": x_c * T / 8.0,
        }
    else:
        raise ValueError(f"no prediction model for kind '{spec.kind}'")

    if spec.kind == "x":
        p_opt = 0.0
    elif 0.0 < t_opt < float("inf"):
        p_opt = float(sum(p_fun(t_opt).values()))
    else:
        p_opt = 0.0
    t_eval = spec.T if spec.T is not None else (t_opt if 0.0 < t_opt < float("inf") else 1.0)
    probs = p_fun(t_eval)
    return ErrorPrediction(
        kind=spec.kind,
        monitored=mon,
        probs=probs,
        total=float(sum(probs.values())),
        T_opt=float(t_opt),
        p_opt=float(p_opt),
    )


@dataclass
class ScalingFit:
    exponent: float
    exponent_stderr: float
    log_prefactor: float

    @property
    def prefactor(self) -> float:
        return float(np.exp(self.log_prefactor))


def fit_scaling(xs, ps) -> ScalingFit:
    """Least-squares log-log fit p = C x^s with the standard error of s."""
    xs = np.asarray(xs, dtype=float)
    ps = np.asarray(ps, dtype=float)
    if xs.size < 3:
        raise ValueError("need at least 3 sweep points")
    if np.any(xs <= 0) or np.any(ps <= 0):
        raise ValueError("log-log fit needs positive data")
    if xs.max() / xs.min() < 3.0:
        raise ValueError("insufficient dynamic range for a scaling fit")
    lx, lp = np.log(xs), np.log(ps)
    a = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(a, lp, rcond=None)
    slope, intercept = coef
    resid = lp - a @ coef
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    if xs.size > 2 and sxx > 0:
        stderr = sqrt(float(resid @ resid) / (xs.size - 2) / sxx)
    else:
        stderr = float("inf")
    return ScalingFit(float(slope), float(stderr), float(intercept))


def fit_cnot_bracket(dtaus, p_opts, kappa: float, kappa1: float, gamma: complex) -> float:
    """Bracket constant C in p_opt^2 = (pi^2 k1^2 dtau/(16 kappa g^2)) (1 + C kappa k1 g^8 dtau^2)."""
    g = abs(gamma)
    dtaus = np.asarray(dtaus, dtype=float)
    p_opts = np.asarray(p_opts, dtype=float)
    base = pi**2 * kappa1**2 * dtaus / (16.0 * kappa * g**2)
    z = p_opts**2 / base - 1.0
    w = kappa * kappa1 * g**8 * dtaus**2
    return float(np.sum(z * w) / np.sum(w * w))
