"""Configuration-driven experiment runner emitting CSV tables plus a JSON
manifest: spectral gap scans, the low-order stabilizer search, loss-channel
process tomography, gate sweeps with scaling fits, preparation curves, and
closed-form error predictions.

Config format: a flat key = value text file; `--set key=value` overrides.
Values may be scalars, comma lists, or lo:hi:step ranges.  Grids re-run
byte-identically for a fixed seed (the manifest records wall-clock and is the
only non-reproducible artifact).  Worker processes handle grid points when
--threads > 1 (or PAIRCAT_LAB_THREADS is set); a single collector writes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import pi, sqrt
from pathlib import Path

import numpy as np

from . import __version__
from .channels import analytic_lbc_process, compose_channels, lbc_kraus, process_tomography, recovery_map, stabilized_loss_channel
from .gates import GateSpec, fit_scaling, gate_z, predict_error, prepare_plus
from .hilbert import default_n_max, tail_ok, two_mode_space
from .paircat import PairCatParams, code_frame
from .stabilizer_analysis import block_spectrum, search_low_order_hamiltonian, stabilizer_coefficients

__all__ = ["main", "run", "RunConfig", "Manifest"]

ENV_THREADS = "PAIRCAT_LAB_THREADS"

_DEFAULTS = {
    "gap-scan": {
        "gamma2": "1:6:0.5",
        "delta": "0,1,2,3",
        "mu": "1,-1",
        "coupling": 1.0,
    },
    "ham-search": {
        "max_order": "2,4,6",
        "delta0": 0,
        "conserve_delta": "false",
        "tol": 1e-8,
        "n_max": 0,  # 0 -> automatic
    },
    "tomography": {
        "gamma": "0.4:2.6:0.05",
        "eps": 0.02,
        "variant": "stabilized",
        "order": 4,
        "delta_max": 4,
        "k_max": 5,
    },
    "gate-sim": {
        "gate": "z",
        "scheme": "dissipative",
        "gamma2": 2.0,
        "delta": 0,
        "kappa1": "0.05,0.1,0.2,0.4",
        "dtau": 0.2,
        "theta": pi / 2,
        "monitored": "true",
        "n_traj": 400,
        "n_max": 12,
        "use_optimal_T": "true",
        "T": 1.0,
    },
    "prep": {
        "scheme": "dissipative",
        "gamma2": "1,2,4",
        "delta": 0,
        "T": 0.0,  # 0 -> steady state (dissipative) / required for hamiltonian
        "coupling": 1.0,
    },
    "predict": {
        "gate": "z,zz,x,cnot,toffoli",
        "gamma2": 4.0,
        "kappa1": "0.001,0.01",
        "dtau": 0.1,
        "theta": pi / 2,
        "monitored": "true",
    },
}


@dataclass
class RunConfig:
    subcommand: str
    params: dict
    out_dir: Path
    seed: int = 0
    threads: int = 1


@dataclass
class Manifest:
    subcommand: str
    config: dict
    seed: int
    threads: int
    version: str = __version__
    wall_clock_s: float = 0.0
    rows: int = 0
    partial: bool = False
    notes: list = field(default_factory=list)

    def write(self, path: Path):
        payload = {
            "tool": "paircat-lab",
            "version": self.version,
            "subcommand": self.subcommand,
            "config": {k: _jsonable(v) for k, v in self.config.items()},
            "seed": self.seed,
            "threads": self.threads,
            "wall_clock_s": self.wall_clock_s,
            "rows": self.rows,
            "partial": self.partial,
            "notes": self.notes,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def _parse_scalar(text: str):
    s = text.strip()
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    try:
        return complex(s)
    except ValueError:
        return s


def parse_value(text: str):
    s = text.strip()
    if "," in s:
        return [_parse_scalar(p) for p in s.split(",") if p.strip()]
    if ":" in s and s.count(":") == 2:
        lo, hi, step = (float(p) for p in s.split(":"))
        n = int(round((hi - lo) / step)) + 1
        return [lo + k * step for k in range(n) if lo + k * step <= hi + 1e-12]
    return _parse_scalar(s)


def _as_list(v):
    return v if isinstance(v, list) else [v]


def load_config(subcommand: str, config_file: str | None, overrides: list[str]) -> dict:
    params = dict(_DEFAULTS[subcommand])
    if config_file:
        for line in Path(config_file).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(f"bad config line: {line!r}")
            key, val = (p.strip() for p in line.split("=", 1))
            params[key] = val
    for item in overrides:
        if "=" not in item:
            raise SystemExit(f"--set needs key=value, got {item!r}")
        key, val = (p.strip() for p in item.split("=", 1))
        params[key] = val
    return {k: (parse_value(v) if isinstance(v, str) else v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# CSV writing
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    if isinstance(v, complex):
        return f"{v.real:.12g}{v.imag:+.12g}j"
    return str(v)


def write_csv(path: Path, comment: str, columns: list[str], rows: list[dict], partial: bool = False):
    lines = [f"# {comment}"]
    if partial:
        lines.append("# partial: run aborted before completing the grid")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(row.get(c, "")) for c in columns))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# grid workers (top level for process pools)
# ---------------------------------------------------------------------------


def _gap_scan_task(args):
    gamma2, delta, mu, coupling = args
    gamma = sqrt(gamma2)
    res = block_spectrum(gamma, coupling, int(mu), int(delta))
    denom = 8.0 * coupling * abs(gamma) ** 6
    space = two_mode_space(res.n_max)
    frame = code_frame(PairCatParams(gamma, int(delta), space))
    return {
        "gamma2": gamma2,
        "delta": int(delta),
        "mu": int(mu),
        "gap_over_K": res.gap / coupling,
        "ratio_to_8g6": res.gap / denom,
        "e1_overlap": res.e1_overlap,
        "n_max": res.n_max,
        "tail_ok": tail_ok(frame.plus),
    }


def _ham_search_task(args):
    max_order, delta0, conserve, tol, n_max = args
    res = search_low_order_hamiltonian(
        int(max_order),
        delta0=int(delta0),
        conserve_delta=bool(conserve),
        n_max=(int(n_max) or None),
        tol=float(tol),
    )
    row = {
        "max_order": int(max_order),
        "conserve_delta": bool(conserve),
        "delta0": int(delta0),
        "n_monomials": len(res.monomials),
        "n_unknowns": len(res.unknowns),
        "min_sample_dim": min(res.sample_dims),
        "common_dim": res.common_dim,
        "gamma_dependent": res.has_gamma_dependent,
        "max_residual": max(res.residuals),
        "n_max": res.n_max,
        "tail_ok": True,
    }
    if int(max_order) >= 8 and bool(conserve):
        row["stabilizer_overlap"] = res.overlap_with(stabilizer_coefficients(res.gamma_samples[0]), 0)
    return row


def _tomography_task(args):
    gamma, eps, variant, order, delta_max, k_max = args
    n_max = default_n_max(gamma)
    space = two_mode_space(n_max)
    frame = code_frame(PairCatParams(gamma, 0, space))
    if variant == "stabilized":
        kappa1_t = -np.log1p(-eps)
        evo = stabilized_loss_channel(gamma, kappa1_t, int(order), int(delta_max), space)
        rec = recovery_map(gamma, int(delta_max), variant="stabilized", space=space)
        proc = process_tomography(compose_channels(rec, evo), frame)
    else:
        evo = lbc_kraus(eps, int(k_max), space)
        rec = recovery_map(gamma, int(k_max), variant="lbc", epsilon=eps, space=space)
        proc = process_tomography(compose_channels(rec, evo), frame)
    return {
        "gamma": gamma,
        "eps": eps,
        "r_II": float(np.real(proc.r[0, 0])),
        "r_XX": float(np.real(proc.r[1, 1])),
        "r_YY": float(np.real(proc.r[2, 2])),
        "r_ZZ": float(np.real(proc.r[3, 3])),
        "abs_r_IX": float(abs(proc.r[0, 1])),
        "variant": variant,
        "n_max": n_max,
        "tail_ok": tail_ok(frame.plus),
    }


def _gate_sim_task(args):
    (gate, scheme, gamma2, delta, kappa1, dtau, theta, monitored, n_traj, n_max, use_opt, t_gate, seed) = args
    gamma = sqrt(gamma2)
    if gate != "z":
        raise SystemExit(f"gate-sim currently sweeps the Z gate; got {gate!r}")
    spec = GateSpec(
        kind="z",
        scheme=scheme,
        gamma=gamma,
        delta=int(delta),
        kappa1=float(kappa1),
        theta=float(theta),
        dtau=float(dtau) if monitored else None,
        monitored=bool(monitored),
        n_traj=int(n_traj),
        n_max=int(n_max),
        seed=int(seed),
        engine="trajectory",
    )
    if use_opt:
        pred = predict_error(spec)
        spec = GateSpec(**{**spec.__dict__, "T": pred.T_opt})
    else:
        spec = GateSpec(**{**spec.__dict__, "T": float(t_gate)})
    res = gate_z(spec)
    return {
        "gate": gate,
        "scheme": scheme,
        "gamma2": gamma2,
        "kappa1_over_kappa": float(kappa1),
        "dtau": float(dtau) if monitored else 0.0,
        "T": res.diagnostics["T"],
        "p_Z": res.error_probs["Z"],
        "p_Z_stderr": res.error_probs.get("Z_stderr", 0.0),
        "leakage": res.leakage,
        "n_traj": int(n_traj),
        "seed": int(seed),
        "n_max": res.diagnostics["n_max"],
        "tail_ok": True,
    }


def _prep_task(args):
    scheme, gamma2, delta, t_final, coupling, seed = args
    gamma = sqrt(gamma2)
    spec = GateSpec(
        kind="prepare",
        scheme=scheme,
        gamma=gamma,
        delta=int(delta),
        coupling=float(coupling),
        T=(float(t_final) if t_final else None),
        seed=int(seed),
    )
    res = prepare_plus(spec)
    return {
        "scheme": scheme,
        "gamma2": gamma2,
        "delta": int(delta),
        "t_final": res.diagnostics.get("t_final", res.diagnostics.get("t_ramp", 0.0)),
        "fidelity": res.fidelity,
        "n_max": res.diagnostics["n_max"],
        "tail_ok": True,
    }


def _predict_task(args):
    gate, gamma2, kappa1, dtau, theta, monitored = args
    spec = GateSpec(
        kind=gate,
        gamma=sqrt(gamma2),
        kappa1=float(kappa1),
        theta=float(theta),
        dtau=float(dtau),
        monitored=bool(monitored),
    )
    pred = predict_error(spec)
    return {
        "gate": gate,
        "monitored": bool(monitored),
        "gamma2": gamma2,
        "kappa1": float(kappa1),
        "dtau": float(dtau),
        "theta": float(theta),
        "T_opt": pred.T_opt,
        "p_opt": pred.p_opt,
        "p_terms": ";".join(f"{k}={_fmt(v)}" for k, v in sorted(pred.probs.items())),
    }


_TASKS = {
    "gap-scan": _gap_scan_task,
    "ham-search": _ham_search_task,
    "tomography": _tomography_task,
    "gate-sim": _gate_sim_task,
    "prep": _prep_task,
    "predict": _predict_task,
}


def _validate(sub: str, p: dict):
    def bad(msg):
        raise SystemExit(f"invalid config for {sub}: {msg}")

    if sub == "gap-scan":
        if any(g2 <= 0 for g2 in _as_list(p["gamma2"])):
            bad("gamma2 must be positive")
        if any(int(m) not in (+1, -1) for m in _as_list(p["mu"])):
            bad("mu must be +1 or -1")
    elif sub == "ham-search":
        if any(int(n) < 1 for n in _as_list(p["max_order"])):
            bad("max_order must be >= 1")
    elif sub == "tomography":
        if not all(0.0 <= e < 1.0 for e in _as_list(p["eps"])):
            bad("eps must be in [0, 1)")
        if int(p["delta_max"]) < int(p["order"]):
            bad("delta_max must be >= order")
        if p["variant"] not in ("stabilized", "lbc", "both"):
            bad("variant must be stabilized | lbc | both")
        if any(g <= 0 for g in _as_list(p["gamma"])):
            bad("gamma must be positive")
    elif sub == "gate-sim":
        if any(k1 < 0 for k1 in _as_list(p["kappa1"])):
            bad("kappa1 must be >= 0")
        if p["monitored"] and float(p["dtau"]) <= 0:
            bad("dtau must be positive when monitored")
        if int(p["n_traj"]) < 1:
            bad("n_traj must be >= 1")
    elif sub == "prep":
        if p["scheme"] not in ("dissipative", "hamiltonian"):
            bad("scheme must be dissipative | hamiltonian")
        if p["scheme"] == "hamiltonian" and not p["T"]:
            bad("hamiltonian preparation needs T > 0")
    elif sub == "predict":
        for g in _as_list(p["gate"]):
            if g not in ("z", "zz", "x", "cnot", "toffoli"):
                bad(f"unknown gate {g!r}")


def _build_tasks(sub: str, p: dict, seed: int) -> list:
    if sub == "gap-scan":
        return [
            (g2, d, m, float(p["coupling"]))
            for g2 in _as_list(p["gamma2"])
            for d in _as_list(p["delta"])
            for m in _as_list(p["mu"])
        ]
    if sub == "ham-search":
        return [
            (n, p["delta0"], c, p["tol"], p["n_max"])
            for n in _as_list(p["max_order"])
            for c in _as_list(p["conserve_delta"])
        ]
    if sub == "tomography":
        variants = ["stabilized", "lbc"] if p["variant"] == "both" else [p["variant"]]
        return [
            (g, e, v, p["order"], p["delta_max"], p["k_max"])
            for v in variants
            for g in _as_list(p["gamma"])
            for e in _as_list(p["eps"])
        ]
    if sub == "gate-sim":
        return [
            (
                p["gate"],
                p["scheme"],
                float(p["gamma2"]),
                p["delta"],
                k1,
                p["dtau"],
                p["theta"],
                bool(p["monitored"]),
                p["n_traj"],
                p["n_max"],
                bool(p["use_optimal_T"]),
                p["T"],
                seed,
            )
            for k1 in _as_list(p["kappa1"])
        ]
    if sub == "prep":
        return [
            (p["scheme"], g2, p["delta"], p["T"], p["coupling"], seed)
            for g2 in _as_list(p["gamma2"])
        ]
    if sub == "predict":
        return [
            (g, float(p["gamma2"]), k1, p["dtau"], p["theta"], bool(p["monitored"]))
            for g in _as_list(p["gate"])
            for k1 in _as_list(p["kappa1"])
        ]
    raise SystemExit(f"unknown subcommand {sub!r}")


_COLUMNS = {
    "gap-scan": ["gamma2", "delta", "mu", "gap_over_K", "ratio_to_8g6", "e1_overlap", "n_max", "tail_ok"],
    "ham-search": [
        "max_order",
        "conserve_delta",
        "delta0",
        "n_monomials",
        "n_unknowns",
        "min_sample_dim",
        "common_dim",
        "gamma_dependent",
        "stabilizer_overlap",
        "max_residual",
        "n_max",
        "tail_ok",
    ],
    "tomography": ["gamma", "eps", "r_II", "r_XX", "r_YY", "r_ZZ", "abs_r_IX", "variant", "n_max", "tail_ok"],
    "gate-sim": [
        "gate",
        "scheme",
        "gamma2",
        "kappa1_over_kappa",
        "dtau",
        "T",
        "p_Z",
        "p_Z_stderr",
        "leakage",
        "n_traj",
        "seed",
        "n_max",
        "tail_ok",
    ],
    "prep": ["scheme", "gamma2", "delta", "t_final", "fidelity", "n_max", "tail_ok"],
    "predict": ["gate", "monitored", "gamma2", "kappa1", "dtau", "theta", "T_opt", "p_opt", "p_terms"],
}

_COMMENTS = {
    "gap-scan": "spectral gap of the stabilizing Hamiltonian; gap_over_K in units of K, ratio to 8K|gamma|^6",
    "ham-search": "bounded-order stabilizer nullspace search; dims of per-sample and common solution spaces",
    "tomography": "code-subspace process coefficients after loss + recovery; dimensionless",
    "gate-sim": "Z-gate dephasing probability from trajectory ensembles; times in 1/kappa",
    "prep": "preparation fidelity with the target code state; times in 1/kappa (or ramp time)",
    "predict": "closed-form error budgets; times in 1/kappa, probabilities dimensionless",
}


def run(cfg: RunConfig) -> int:
    """Execute one subcommand; returns the process exit code."""
    _validate(cfg.subcommand, cfg.params)
    tasks = _build_tasks(cfg.subcommand, cfg.params, cfg.seed)
    worker = _TASKS[cfg.subcommand]
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(
        subcommand=cfg.subcommand, config=cfg.params, seed=cfg.seed, threads=cfg.threads
    )
    t_start = time.monotonic()
    rows: list[dict] = []
    partial = False
    try:
        if cfg.threads > 1:
            with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
                rows = list(pool.map(worker, tasks))
        else:
            rows = [worker(t) for t in tasks]
    except Exception as exc:  # noqa: BLE001 - partial results are flushed on any failure
        partial = True
        manifest.notes.append(f"aborted: {exc}")
    manifest.wall_clock_s = time.monotonic() - t_start
    manifest.rows = len(rows)
    manifest.partial = partial

    csv_path = cfg.out_dir / f"{cfg.subcommand}.csv"
    write_csv(csv_path, _COMMENTS[cfg.subcommand], _COLUMNS[cfg.subcommand], rows, partial)

    if cfg.subcommand == "gate-sim" and not partial and len(rows) >= 3:
        xs = [r["kappa1_over_kappa"] for r in rows]
        ps = [r["p_Z"] for r in rows]
        try:
            fit = fit_scaling(xs, ps)
            write_csv(
                cfg.out_dir / "gate-sim-fits.csv",
                "log-log exponent of p_Z versus kappa1/kappa",
                ["gate", "scheme", "exponent", "exponent_stderr", "prefactor"],
                [
                    {
                        "gate": rows[0]["gate"],
                        "scheme": rows[0]["scheme"],
                        "exponent": fit.exponent,
                        "exponent_stderr": fit.exponent_stderr,
                        "prefactor": fit.prefactor,
                    }
                ],
            )
        except ValueError as exc:
            manifest.notes.append(f"scaling fit skipped: {exc}")

    manifest.write(cfg.out_dir / "manifest.json")
    return 1 if partial else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="paircat-lab",
        description="pair-cat code laboratory: spectra, stabilizer search, channels, gates",
    )
    parser.add_argument("subcommand", choices=sorted(_TASKS))
    parser.add_argument("--config", default=None, help="flat key = value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    threads = args.threads
    if threads is None:
        threads = int(os.environ.get(ENV_THREADS, "1"))
    params = load_config(args.subcommand, args.config, args.set)
    cfg = RunConfig(
        subcommand=args.subcommand,
        params=params,
        out_dir=Path(args.out),
        seed=args.seed,
        threads=max(1, threads),
    )
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
