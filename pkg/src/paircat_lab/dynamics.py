"""Time-evolution engines: Lindblad master equation, quantum-jump trajectories
with projective syndrome monitoring and feedback, and steady-state relaxation.

Time-dependent generators are handled as term sums

    O(t) = sum_k c_k(t) M_k,

where each coefficient is a constant, a pure phase e^{i w t} (the common case
for rotating stabilizers), or an arbitrary callable.  Effective non-Hermitian
drifts L(t)^dag L(t) are expanded into term sums with combined phases, so the
hot loops only ever do sparse mat-vec products against precomputed matrices.

Integrators: fixed-step RK4 with the step bounded by a spectral-radius
stability estimate of the stiff dissipator and by a phase-accuracy rule on the
coherent part; for static generators an exact exponential engine (dense
Liouville matrix for small blocks, Krylov/Taylor `expm_multiply` otherwise) is
used for long relaxation runs.

Trajectories use norm-threshold jump sampling with bisection refinement of the
jump time to a hundredth of a step; the syndrome monitor performs ideal
projective snapshots of a basis-diagonal observable every `interval` and may
apply feedback unitaries.  All randomness comes from one per-trajectory PCG64
generator, so records are bit-identical for identical seeds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm as dense_expm
from scipy.sparse.linalg import expm_multiply

from .hilbert import DensityMatrix, Operator, StateVector

__all__ = [
    "EvolutionSpec",
    "MonitorSpec",
    "TrajectoryRecord",
    "TermSum",
    "StepSizeError",
    "ConvergenceError",
    "evolve_master",
    "evolve_trajectory",
    "trajectory_ensemble",
    "steady_state",
    "build_liouvillian",
]

_COMPLEX = np.complex128

_DENSE_EXPM_MAX_DIM = 40  # dense Liouville propagators up to (40^2)^2


class StepSizeError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# term sums
# ---------------------------------------------------------------------------


def _as_csr(mat) -> sp.csr_matrix:
    if isinstance(mat, Operator):
        mat = mat.mat
    if sp.issparse(mat):
        return mat.tocsr().astype(_COMPLEX)
    return sp.csr_matrix(np.asarray(mat, dtype=_COMPLEX))


def _is_phase(spec) -> bool:
    return isinstance(spec, tuple) and len(spec) == 2 and spec[0] == "phase"


class TermSum:
    """O(t) = sum_k c_k(t) M_k with c_k a constant, ("phase", w), or callable."""

    def __init__(self, terms):
        self.terms = [(spec, _as_csr(mat)) for spec, mat in terms]

    @classmethod
    def wrap(cls, obj, dim: int | None = None) -> "TermSum":
        """Accept Operator, matrix, TermSum, term list, or None (-> zero)."""
        if obj is None:
            if dim is None:
                raise ValueError("need dim for an empty TermSum")
            return cls([(1.0, sp.csr_matrix((dim, dim), dtype=_COMPLEX))])
        if isinstance(obj, TermSum):
            return obj
        if isinstance(obj, (Operator, np.ndarray)) or sp.issparse(obj):
            return cls([(1.0, obj)])
        if isinstance(obj, (list, tuple)):
            return cls(list(obj))
        raise TypeError(f"cannot interpret {type(obj)} as a TermSum")

    @staticmethod
    def _coeff(spec, t: float) -> complex:
        if callable(spec):
            return complex(spec(t))
        if _is_phase(spec):
            return complex(np.exp(1j * spec[1] * t))
        return complex(spec)

    def is_static(self) -> bool:
        return all(not callable(s) and not _is_phase(s) for s, _ in self.terms)

    def apply(self, t: float, x: np.ndarray) -> np.ndarray:
        out = None
        for spec, mat in self.terms:
            c = self._coeff(spec, t)
            if c == 0.0:
                continue
            piece = mat @ x
            if c != 1.0:
                piece *= c
            out = piece if out is None else out + piece
        if out is None:
            out = np.zeros_like(x)
        return out

    def materialize(self, t: float) -> sp.csr_matrix:
        out = None
        for spec, mat in self.terms:
            c = self._coeff(spec, t)
            piece = mat if c == 1.0 else c * mat
            out = piece if out is None else out + piece
        return out.tocsr()

    def static_matrix(self) -> sp.csr_matrix:
        if not self.is_static():
            raise ValueError("term sum is time dependent")
        return self.materialize(0.0)

    def scaled(self, factor: complex) -> "TermSum":
        # scalar factors fold into the matrices for phase/callable terms
        return TermSum(
            [
                (s, factor * m) if (_is_phase(s) or callable(s)) else (s * factor, m)
                for s, m in self.terms
            ]
        )

    def dag_products(self, other: "TermSum") -> "TermSum":
        """Term sum for self(t)^dag @ other(t), phases combined."""
        terms = []
        for sj, mj in self.terms:
            mjd = mj.conj().T.tocsr()
            for sk, mk in other.terms:
                terms.append((_conj_product_spec(sj, sk), mjd @ mk))
        return TermSum(terms)

    def plus(self, other: "TermSum") -> "TermSum":
        return TermSum(self.terms + other.terms)

    def consolidated(self) -> "TermSum":
        """Merge constant terms into one matrix and phase terms by frequency."""
        const = None
        by_phase: dict = {}
        rest = []
        for spec, mat in self.terms:
            if callable(spec):
                rest.append((spec, mat))
            elif _is_phase(spec):
                w = round(float(spec[1]), 12)
                by_phase[w] = mat if w not in by_phase else by_phase[w] + mat
            else:
                piece = mat if spec == 1.0 else spec * mat
                const = piece if const is None else const + piece
        terms = []
        if const is not None:
            terms.append((1.0, const))
        for w, mat in sorted(by_phase.items()):
            if w == 0.0:
                terms.append((1.0, mat))
            else:
                terms.append((("phase", w), mat))
        return TermSum(terms + rest)

    def norm_bound(self, t_final: float = 1.0) -> float:
        """Spectral-radius upper bound: sum of max |c(t)| * ||M||_inf over the run."""
        total = 0.0
        tgrid = np.linspace(0.0, max(t_final, 1e-12), 33)
        for spec, mat in self.terms:
            if callable(spec):
                cmax = float(max(abs(self._coeff(spec, tt)) for tt in tgrid))
            elif _is_phase(spec):
                cmax = 1.0
            else:
                cmax = abs(spec)
            if mat.nnz and cmax > 0:
                rowsum = float(np.abs(mat).sum(axis=1).max())
                total += cmax * rowsum
        return total

    @property
    def dim(self) -> int:
        return self.terms[0][1].shape[0]


def _conj_product_spec(sj, sk):
    if not callable(sj) and not callable(sk):
        j_phase, k_phase = _is_phase(sj), _is_phase(sk)
        if j_phase and k_phase:
            return ("phase", sk[1] - sj[1])
        if j_phase:
            return lambda t, _w=sj[1], _c=sk: _c * np.exp(-1j * _w * t)
        if k_phase:
            return lambda t, _w=sk[1], _c=sj: np.conj(_c) * np.exp(1j * _w * t)
        return np.conj(sj) * sk
    return lambda t, _sj=sj, _sk=sk: np.conj(TermSum._coeff(_sj, t)) * TermSum._coeff(_sk, t)


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------


@dataclass
class EvolutionSpec:
    """Evolution window, step control and generators.

    `hamiltonian` and each jump operator may be an Operator, a TermSum, a term
    list [(coeff, matrix), ...], or a callable t -> Operator (master engine
    only, slow path).  `jumps` is a list of (rate, operator-like) pairs or a
    callable t -> such a list.  `trace_tol` of None disables the trace-drift
    guard (used for deliberately truncated sector dynamics where jumps leak).
    """

    t_final: float
    dt: float | None = None
    hamiltonian: object | None = None
    jumps: object | None = None
    method: str = "auto"  # auto | rk4 | expm
    trace_tol: float | None = 1e-6

    def __post_init__(self):
        if self.t_final < 0:
            raise ValueError("t_final must be >= 0")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class MonitorSpec:
    """Projective snapshots of a basis-diagonal observable every `interval`.

    `feedback(outcomes, t)` may return None or (unitary, angle); the unitary is
    applied right after the snapshot and the angle is logged.
    """

    interval: float
    observable: object = None  # Operator | diagonal array
    feedback: object | None = None

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("monitor interval must be positive")


@dataclass
class TrajectoryRecord:
    jumps: list = field(default_factory=list)  # (time, jump index); -1 marks injections
    outcomes: list = field(default_factory=list)  # (time, value)
    corrections: list = field(default_factory=list)  # (time, angle)


# ---------------------------------------------------------------------------
# input normalization
# ---------------------------------------------------------------------------


def _norm_hamiltonian(h, dim: int):
    if callable(h) and not isinstance(h, TermSum):
        return h  # t -> Operator (master slow path)
    return TermSum.wrap(h, dim)


def _norm_jumps(jumps, dim: int):
    if jumps is None:
        return []
    if callable(jumps):
        return jumps
    return [(float(rate), TermSum.wrap(op, dim)) for rate, op in jumps]


def _materialize_h(h, t: float) -> sp.csr_matrix:
    if isinstance(h, TermSum):
        return h.materialize(t)
    return _as_csr(h(t))


def _materialize_jumps(jumps, t: float):
    if callable(jumps):
        return [(float(r), _as_csr(op)) for r, op in jumps(t)]
    return [(r, ts.materialize(t)) for r, ts in jumps]


def _static_generators(h, jumps):
    h_static = isinstance(h, TermSum) and h.is_static()
    j_static = not callable(jumps) and all(ts.is_static() for _, ts in jumps)
    return h_static and j_static


def _coherent_bound(h, t_final: float) -> float:
    if isinstance(h, TermSum):
        return h.norm_bound(t_final)
    return float(np.abs(_materialize_h(h, 0.0)).sum(axis=1).max())


# ---------------------------------------------------------------------------
# master equation
# ---------------------------------------------------------------------------


def _lindblad_rhs(t, rho, h, jumps):
    hm = _materialize_h(h, t)
    out = -1j * (hm @ rho - rho @ hm)
    for rate, lm in _materialize_jumps(jumps, t):
        ld = lm.conj().T.tocsr()
        nm = ld @ lm
        out = out + rate * ((lm @ rho) @ ld - 0.5 * (nm @ rho + rho @ nm))
    return out


def _master_dt(h, jumps, spec: EvolutionSpec) -> float:
    total = _coherent_bound(h, spec.t_final)
    jl = jumps(0.0) if callable(jumps) else jumps
    for rate, op in jl:
        ts = op if isinstance(op, TermSum) else TermSum.wrap(op)
        total += rate * ts.norm_bound(spec.t_final) ** 2
    total = max(total, 1e-30)
    dt = 1.1 / total  # RK4 stability; the Liouvillian doubles the one-sided rate
    dt = min(dt, 0.05 / max(_coherent_bound(h, spec.t_final), 1e-30))
    if spec.dt is not None:
        if spec.dt > 1.1 / total:
            warnings.warn(
                f"requested dt={spec.dt:.3g} exceeds the stability estimate {1.1 / total:.3g}",
                stacklevel=3,
            )
        dt = spec.dt
    return min(dt, spec.t_final) if spec.t_final > 0 else dt


def build_liouvillian(h, jumps, dim: int) -> sp.csr_matrix:
    """Static Liouville matrix, row-major vec convention: vec(A rho B) = (A (x) B^T) vec(rho)."""
    h_ts = _norm_hamiltonian(h, dim)
    j_ts = _norm_jumps(jumps, dim)
    if not _static_generators(h_ts, j_ts):
        raise ValueError("Liouville matrix requires time-independent generators")
    eye = sp.identity(dim, dtype=_COMPLEX, format="csr")
    hm = h_ts.static_matrix()
    lio = -1j * (sp.kron(hm, eye) - sp.kron(eye, hm.T))
    for rate, ts in j_ts:
        lm = ts.static_matrix()
        nm = (lm.conj().T @ lm).tocsr()
        lio = lio + rate * (
            sp.kron(lm, lm.conj()) - 0.5 * sp.kron(nm, eye) - 0.5 * sp.kron(eye, nm.T)
        )
    return lio.tocsr()


def _expm_propagate(lio: sp.csr_matrix, vec: np.ndarray, t: float, dense_ok: bool):
    if dense_ok:
        return dense_expm((lio * t).toarray()) @ vec
    return expm_multiply(lio * t, vec)


def evolve_master(rho0: DensityMatrix, spec: EvolutionSpec, sample_times=None):
    """Integrate drho/dt = -i[H, rho] + sum_j rate_j D[L_j] rho.

    Returns the final DensityMatrix, or the list at `sample_times`.
    Hermiticity is enforced by symmetrization each step; trace drift beyond
    spec.trace_tol raises StepSizeError with a suggested smaller step.
    """
    dim = rho0.space.dim
    h = _norm_hamiltonian(spec.hamiltonian, dim)
    jumps = _norm_jumps(spec.jumps, dim)
    static = _static_generators(h, jumps)

    method = spec.method
    if method == "auto":
        method = "expm" if static and spec.dt is None and dim <= _DENSE_EXPM_MAX_DIM else "rk4"
    if method == "expm" and not static:
        raise ValueError("expm engine requires time-independent generators")

    times = sorted({float(spec.t_final)} | {float(t) for t in (sample_times or [])})
    if any(t < 0 or t > spec.t_final + 1e-12 for t in times):
        raise ValueError("sample times must lie inside [0, t_final]")

    out = []
    tr0 = float(np.real(np.trace(rho0.matrix)))
    if method == "expm":
        lio = build_liouvillian(h, jumps, dim)
        dense_ok = dim <= _DENSE_EXPM_MAX_DIM
        vec = rho0.matrix.reshape(-1).copy()
        t_prev = 0.0
        for t in times:
            if t > t_prev:
                vec = _expm_propagate(lio, vec, t - t_prev, dense_ok)
                t_prev = t
            rho = vec.reshape(dim, dim)
            out.append(DensityMatrix(rho0.space, (rho + rho.conj().T) / 2))
    else:
        dt = _master_dt(h, jumps, spec)
        rho = rho0.matrix.copy()
        t_prev = 0.0
        for t in times:
            span = t - t_prev
            if span > 0:
                n = max(1, int(np.ceil(span / dt)))
                hh = span / n
                tt = t_prev
                for _ in range(n):
                    k1 = _lindblad_rhs(tt, rho, h, jumps)
                    k2 = _lindblad_rhs(tt + hh / 2, rho + (hh / 2) * k1, h, jumps)
                    k3 = _lindblad_rhs(tt + hh / 2, rho + (hh / 2) * k2, h, jumps)
                    k4 = _lindblad_rhs(tt + hh, rho + hh * k3, h, jumps)
                    rho = rho + (hh / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
                    rho = (rho + rho.conj().T) / 2
                    tt += hh
                t_prev = t
            if spec.trace_tol is not None:
                drift = abs(float(np.real(np.trace(rho))) - tr0)
                if drift > spec.trace_tol:
                    raise StepSizeError(
                        f"trace drifted by {drift:.2e}; retry with dt <= {dt / 4:.3g}"
                    )
            out.append(DensityMatrix(rho0.space, rho.copy()))

    by_time = dict(zip(times, out))
    if sample_times is not None:
        return [by_time[float(t)] for t in sample_times]
    return by_time[float(spec.t_final)]


def steady_state(rho0: DensityMatrix, spec: EvolutionSpec, tol: float = 1e-8, t_max: float = 1e4) -> DensityMatrix:
    """Relax a time-independent Lindbladian to its fixed point from rho0.

    Convergence criterion: max |drho/dt| < tol.  The reachable fixed point
    depends on rho0 through the conserved sectors, so this integrates in
    doubling time chunks rather than diagonalizing.
    """
    dim = rho0.space.dim
    h = _norm_hamiltonian(spec.hamiltonian, dim)
    jumps = _norm_jumps(spec.jumps, dim)
    if not _static_generators(h, jumps):
        raise ValueError("steady_state requires time-independent generators")

    lio = build_liouvillian(h, jumps, dim)
    dense_ok = dim <= _DENSE_EXPM_MAX_DIM
    vec = rho0.matrix.reshape(-1).copy()
    if float(np.abs(lio @ vec).max()) < tol:
        return rho0
    chunk = spec.t_final if spec.t_final > 0 else 1.0
    elapsed = 0.0
    while elapsed < t_max:
        vec = _expm_propagate(lio, vec, chunk, dense_ok)
        elapsed += chunk
        chunk *= 2.0
        resid = float(np.abs(lio @ vec).max())
        if resid < tol:
            rho = vec.reshape(dim, dim)
            return DensityMatrix(rho0.space, (rho + rho.conj().T) / 2)
    raise ConvergenceError(f"no fixed point within t_max={t_max} (residual {resid:.2e})")


# ---------------------------------------------------------------------------
# quantum-jump trajectories
# ---------------------------------------------------------------------------


def _drift_terms(h: TermSum, jumps, dim: int) -> TermSum:
    """-i H(t) - (i/2) * (-i) ... i.e. the generator of d psi/dt = A(t) psi."""
    drift = h.scaled(-1j)
    for rate, ts in jumps:
        drift = drift.plus(ts.dag_products(ts).scaled(-0.5 * rate))
    return drift.consolidated()


def _rk4_step(drift: TermSum, y: np.ndarray, t: float, h: float) -> np.ndarray:
    k1 = drift.apply(t, y)
    k2 = drift.apply(t + h / 2, y + (h / 2) * k1)
    k3 = drift.apply(t + h / 2, y + (h / 2) * k2)
    k4 = drift.apply(t + h, y + h * k3)
    return y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def _monitor_diag(observable, dim: int) -> np.ndarray:
    if isinstance(observable, Operator):
        mat = observable.mat
        m = mat.tocsr() if sp.issparse(mat) else sp.csr_matrix(mat)
        off = m - sp.diags(m.diagonal())
        if off.nnz and np.abs(off.data).max() > 1e-12:
            raise ValueError(
                "monitor observable must be diagonal in the evolution basis: a "
                "projective snapshot of anything else would disturb the state"
            )
        diag = np.real(m.diagonal().copy())
    else:
        diag = np.real(np.asarray(observable, dtype=float))
        if diag.shape != (dim,):
            raise ValueError("diagonal observable has wrong length")
    return diag


def _snapshot(col: np.ndarray, diag: np.ndarray, rng) -> tuple[float, np.ndarray]:
    probs = np.abs(col) ** 2
    total = probs.sum()
    vals = np.round(diag, 9)
    mask = probs > 1e-280 * max(total, 1e-280)
    uniq = np.unique(vals[mask])
    if uniq.size == 1:
        v = float(uniq[0])
    else:
        ps = np.array([probs[vals == u].sum() for u in uniq]) / total
        v = float(rng.choice(uniq, p=ps))
    out = np.where(vals == v, col, 0.0)
    return v, out / np.linalg.norm(out)


class _ColumnState:
    __slots__ = ("rng", "threshold", "record")

    def __init__(self, seed_key):
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed_key)))
        self.threshold = self.rng.uniform()
        self.record = TrajectoryRecord()


def _advance_column(col, t0, t1, dt, drift, jump_terms, rates, cs: _ColumnState):
    """Advance one column through [t0, t1], resolving norm-threshold jumps."""
    t = t0
    while t < t1 - 1e-15:
        h = min(dt, t1 - t)
        nxt = _rk4_step(drift, col, t, h)
        if float(np.vdot(nxt, nxt).real) > cs.threshold:
            col = nxt
            t += h
            continue
        lo, hi = 0.0, h
        base = col
        while hi - lo > dt / 100.0:
            mid = (lo + hi) / 2
            trial = _rk4_step(drift, base, t, mid)
            if float(np.vdot(trial, trial).real) > cs.threshold:
                lo = mid
            else:
                hi = mid
        tj = t + (lo + hi) / 2
        col = _rk4_step(drift, base, t, (lo + hi) / 2)
        weights = []
        applied = []
        for rate, ts in zip(rates, jump_terms):
            lv = ts.apply(tj, col)
            applied.append(lv)
            weights.append(rate * float(np.vdot(lv, lv).real))
        weights = np.array(weights)
        wsum = weights.sum()
        if wsum <= 0.0:
            col = col / np.linalg.norm(col)
            cs.threshold = cs.rng.uniform()
            t = tj
            continue
        j = int(cs.rng.choice(len(weights), p=weights / wsum))
        col = applied[j] / np.linalg.norm(applied[j])
        cs.record.jumps.append((float(tj), j))
        cs.threshold = cs.rng.uniform()
        t = tj
    return col


def _run_batch(
    psi0_cols,
    drift: TermSum,
    jumps,
    t_final: float,
    dt: float,
    seed_keys,
    monitor=None,
    injections=None,
    sample_jumps: bool = True,
):
    """Core batch trajectory engine on raw arrays.

    psi0_cols: (dim, N); jumps: list of (rate, TermSum); monitor: (interval,
    diag, feedback) or None; injections: list of (time, csr).  With
    sample_jumps False the norm-threshold machinery is skipped entirely (the
    deterministic no-jump conditional evolution), and columns are renormalized
    at the end.
    """
    y = np.array(psi0_cols, dtype=_COMPLEX)
    if y.ndim == 1:
        y = y[:, None]
    n_cols = y.shape[1]
    states = [_ColumnState(k) for k in seed_keys]
    rates = [r for r, _ in jumps]
    jump_terms = [ts for _, ts in jumps]

    events: dict[float, dict] = {}

    def _event(t):
        key = round(float(t), 12)
        return events.setdefault(key, {"inject": [], "monitor": False})

    if monitor is not None:
        interval = monitor[0]
        k = 1
        while k * interval <= t_final + 1e-9:
            _event(min(k * interval, t_final))["monitor"] = True
            k += 1
    for t_inj, mat in injections or []:
        if not 0.0 <= t_inj <= t_final:
            raise ValueError("injection time outside the evolution window")
        _event(t_inj)["inject"].append(mat)
    _event(t_final)

    t = 0.0
    for tb in sorted(events):
        span = tb - t
        if span > 1e-15:
            n = max(1, int(np.ceil(span / dt)))
            h = span / n
            tt = t
            for _ in range(n):
                if sample_jumps:
                    y_pre = y.copy()
                y = _rk4_step(drift, y, tt, h)
                if sample_jumps:
                    norms2 = np.real(np.einsum("ij,ij->j", y.conj(), y))
                    thresholds = np.array([s.threshold for s in states])
                    for c in np.nonzero(norms2 <= thresholds)[0]:
                        y[:, c] = _advance_column(
                            y_pre[:, c], tt, tt + h, h, drift, jump_terms, rates, states[c]
                        )
                tt += h
        t = tb
        ev = events[round(float(tb), 12)]
        for mat in ev["inject"]:
            y = mat @ y
            for c in range(n_cols):
                nc = np.linalg.norm(y[:, c])
                if nc == 0.0:
                    raise ValueError("injected operator annihilated the state")
                y[:, c] /= nc
                states[c].record.jumps.append((float(t), -1))
        if ev["monitor"]:
            interval, diag, feedback = monitor
            for c in range(n_cols):
                v, y[:, c] = _snapshot(y[:, c], diag, states[c].rng)
                states[c].record.outcomes.append((float(t), v))
                if feedback is not None:
                    fb = feedback(states[c].record.outcomes, t)
                    if fb is not None:
                        u, angle = fb
                        um = u.mat if isinstance(u, Operator) else u
                        col = um @ y[:, c]
                        y[:, c] = col / np.linalg.norm(col)
                        states[c].record.corrections.append((float(t), float(angle)))

    if not sample_jumps:
        for c in range(n_cols):
            y[:, c] /= np.linalg.norm(y[:, c])
    return y, [s.record for s in states]


def _prepare_trajectory(spec: EvolutionSpec, dim: int, monitor: MonitorSpec | None):
    h = _norm_hamiltonian(spec.hamiltonian, dim)
    jumps = _norm_jumps(spec.jumps, dim)
    if callable(h) or callable(jumps):
        raise ValueError(
            "trajectory engine needs term-sum generators (Operator, TermSum, or term lists)"
        )
    drift = _drift_terms(h, jumps, dim)
    bound = max(drift.norm_bound(spec.t_final), 1e-30)
    dt = 2.2 / bound
    dt = min(dt, 0.05 / max(_coherent_bound(h, spec.t_final), 1e-30))
    if monitor is not None:
        dt = min(dt, monitor.interval / 10.0)
    if spec.dt is not None:
        if spec.dt > 2.2 / bound:
            warnings.warn(
                f"requested dt={spec.dt:.3g} exceeds the stability estimate {2.2 / bound:.3g}",
                stacklevel=3,
            )
        dt = spec.dt
    dt = min(dt, spec.t_final) if spec.t_final > 0 else dt
    mon = None
    if monitor is not None:
        mon = (monitor.interval, _monitor_diag(monitor.observable, dim), monitor.feedback)
    return drift, jumps, dt, mon


def evolve_trajectory(
    psi0: StateVector,
    spec: EvolutionSpec,
    monitor: MonitorSpec | None = None,
    seed: int = 0,
    injections=None,
    sample_jumps: bool = True,
):
    """Single quantum-jump trajectory; deterministic given the seed.

    Injections are (time, operator) pairs applied (and renormalized) at fixed
    times inside an otherwise standard run; they appear in the record with
    jump index -1.  sample_jumps=False gives the no-jump conditional run.
    """
    if abs(psi0.norm() - 1.0) > 1e-10:
        raise ValueError("initial state must be normalized")
    drift, jumps, dt, mon = _prepare_trajectory(spec, psi0.space.dim, monitor)
    inj = [(float(t), _as_csr(op)) for t, op in (injections or [])]
    finals, records = _run_batch(
        psi0.amplitudes, drift, jumps, spec.t_final, dt, [(seed, 0)], mon, inj, sample_jumps
    )
    return StateVector(psi0.space, finals[:, 0]), records[0]


def trajectory_ensemble(
    psi0: StateVector,
    spec: EvolutionSpec,
    n_traj: int,
    seed: int = 0,
    monitor: MonitorSpec | None = None,
    injections=None,
    sample_jumps: bool = True,
):
    """Vectorized batch of independent trajectories (one PCG64 per index).

    Returns (final columns as a (dim, n_traj) array, list of records).
    """
    if abs(psi0.norm() - 1.0) > 1e-10:
        raise ValueError("initial state must be normalized")
    drift, jumps, dt, mon = _prepare_trajectory(spec, psi0.space.dim, monitor)
    inj = [(float(t), _as_csr(op)) for t, op in (injections or [])]
    cols = np.repeat(psi0.amplitudes[:, None], n_traj, axis=1)
    seed_keys = [(seed, i) for i in range(n_traj)]
    return _run_batch(cols, drift, jumps, spec.t_final, dt, seed_keys, mon, inj, sample_jumps)
