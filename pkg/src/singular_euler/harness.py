"""Command-line experiment driver.

    singular-euler <subcommand> --config <path> [--out <dir>] [--threads N]

The config is a JSON object.  Unknown keys are rejected, defaults are
filled in and the effective config is written next to the artifacts so a
run can be replayed exactly.  Exit codes: 0 success, 1 an invariant or
acceptance check failed, 2 the configuration (or output path) is invalid.

All artifacts are deterministic for a fixed config and thread count:
fixed column/key order, floats written with 17 significant digits, no
timestamps.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import jsonschema
import numpy as np

log = logging.getLogger("singular_euler")

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2
SUBCOMMANDS = ("blowup", "instability", "separation", "kernel-check", "calibrate", "norms", "evolve2d", "origin-limit")
REPORT_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class InvariantViolation(RuntimeError):
    """A science check failed; maps to exit code 1."""


# --------------------------------------------------------------------------
# configuration

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_numlist = {"type": "array", "items": _num, "minItems": 1}

COMMON = {
    "cmd": {"enum": list(SUBCOMMANDS)},
    "m": {"type": "integer"},
    "alpha": _num,
    "convention": {"enum": ["blowup", "intro"]},
    "threads": _posint,
    "out": {"type": "string"},
}

# per-subcommand keys with their defaults
DEFAULTS: dict[str, dict[str, Any]] = {
    "blowup": {"N": 2048, "dt0": 2e-3, "growth": 50.0, "max_steps": 200000, "history_stride": 10, "tol_identity": 1e-4},
    "instability": {"N": 1024, "dt0": 2e-3, "p": 1.5, "eps_fractions": [0.1, 0.05, 0.025], "T_star": None, "balls": 40},
    "separation": {"N": 1024, "dt0": 2e-3, "eps_fractions": [0.1, 0.05, 0.025], "T_star": None},
    "kernel-check": {"samples": 50, "seed": 0, "lam_max": 0.9, "tol": 1e-12},
    "calibrate": {"points": 20, "tol": 1e-6, "lemmas": False},
    "norms": {"lam": 0.5, "K_max": 40, "C": 1.0, "C_lambda": 2.0, "horizon": None, "dt": None, "profile": "power"},
    "evolve2d": {"resolution": [64, 32], "r_span": [1e-4, 1.0], "dt": 1e-3, "steps": 10, "profile": "power", "blob_factor": 0.5},
    "origin-limit": {
        "r0": [0.1, 0.03, 0.01],
        "horizon_fraction": 0.05,
        "T_star": None,
        "resolution": [120, 80],
        "r_span": [1e-4, 1.0],
        "steps": 8,
        "markers": 1024,
        "tol": 0.05,
    },
}

_KEY_SCHEMAS = {
    "N": {"type": "integer", "minimum": 8},
    "dt0": _pos,
    "dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "growth": {"type": "number", "exclusiveMinimum": 1},
    "max_steps": _posint,
    "history_stride": _posint,
    "tol_identity": _pos,
    "p": {"type": "number", "minimum": 1},
    "eps_fractions": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}, "minItems": 1},
    "T_star": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "balls": _posint,
    "samples": _posint,
    "seed": {"type": "integer", "minimum": 0},
    "lam_max": _pos,
    "tol": _pos,
    "points": _posint,
    "lam": {"type": "number", "minimum": 0},
    "K_max": {"type": ["integer", "null"], "minimum": 2},
    "C": _pos,
    "C_lambda": _pos,
    "horizon": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "profile": {"enum": ["power", "zero"]},
    "resolution": {"type": "array", "items": {"type": "integer", "minimum": 16}, "minItems": 2, "maxItems": 2},
    "r_span": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
    "steps": _posint,
    "blob_factor": _pos,
    "r0": {"type": "array", "items": _pos, "minItems": 1},
    "horizon_fraction": _pos,
    "markers": {"type": "integer", "minimum": 8},
    "lemmas": {"type": "boolean"},
}


def config_schema(cmd: str) -> dict:
    props = dict(COMMON)
    props.update({k: _KEY_SCHEMAS[k] for k in DEFAULTS[cmd]})
    return {"type": "object", "properties": props, "additionalProperties": False}


@dataclass
class RunConfig:
    cmd: str
    m: int = 3
    alpha: float = 0.5
    convention: str = "blowup"
    threads: int = 1
    out: str | None = None
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"cmd": self.cmd, "m": self.m, "alpha": self.alpha, "convention": self.convention, "threads": self.threads}
        if self.out is not None:
            d["out"] = self.out
        d.update(self.params)
        return d

    def sector(self):
        from .sector import make_sector_config

        return make_sector_config(self.m, self.alpha, self.convention)


def parse_config(text: str | dict, cmd: str | None = None) -> RunConfig:
    """Validate a JSON config document and fill in defaults."""
    if isinstance(text, dict):
        doc = dict(text)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("", "config must be a JSON object")
    name = doc.get("cmd", cmd)
    if cmd is not None and name != cmd:
        raise ConfigError("cmd", f"config is for {name!r} but subcommand {cmd!r} was requested")
    if name not in SUBCOMMANDS:
        raise ConfigError("cmd", f"unknown subcommand {name!r}")
    try:
        jsonschema.validate(doc, config_schema(name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path)
        if exc.validator == "additionalProperties":
            extra = sorted(set(doc) - set(config_schema(name)["properties"]))
            raise ConfigError(extra[0] if extra else where, f"unknown key(s) {extra}") from None
        raise ConfigError(where, exc.message) from None
    params = {k: doc.get(k, v) for k, v in DEFAULTS[name].items()}
    rc = RunConfig(
        cmd=name,
        m=doc.get("m", 3),
        alpha=float(doc.get("alpha", 0.5)),
        convention=doc.get("convention", "blowup"),
        threads=doc.get("threads", 1),
        out=doc.get("out"),
        params=params,
    )
    _semantic_checks(rc)
    return rc


def _semantic_checks(rc: RunConfig) -> None:
    if rc.m < 3:
        raise ConfigError("m", f"symmetry order must be >= 3, got {rc.m}")
    if not (0.0 <= rc.alpha < 1.0):
        raise ConfigError("alpha", f"must lie in [0, 1), got {rc.alpha}")
    p = rc.params
    if rc.cmd == "instability" and rc.alpha > 0 and p["p"] >= 1.0 / rc.alpha:
        raise ConfigError("p", f"instability needs p < 1/alpha = {1 / rc.alpha:g}, got {p['p']}")
    if rc.cmd == "norms" and p["lam"] >= 1:
        raise ConfigError("lam", f"must be < 1, got {p['lam']}")
    if rc.cmd in ("evolve2d", "origin-limit"):
        lo, hi = p["r_span"]
        if lo <= 0:
            raise ConfigError("r_span/0", f"r_min must be positive, got {lo}")
        if hi <= lo:
            raise ConfigError("r_span/1", "r_max must exceed r_min")
    if rc.cmd == "origin-limit":
        if p["horizon_fraction"] > 0.1:
            raise ConfigError("horizon_fraction", "horizon must be at most 0.1 T*")
        lo, hi = p["r_span"]
        for i, r0 in enumerate(p["r0"]):
            if not (2 * lo <= r0 <= 0.5 * hi):
                raise ConfigError(f"r0/{i}", f"ring radius {r0} leaves no band [r0/2, 2 r0] inside the particle span")
    if rc.cmd in ("instability", "separation") and p["T_star"] is None and rc.alpha == 0:
        raise ConfigError("alpha", "bounded data does not blow up; give T_star explicitly")


# --------------------------------------------------------------------------
# deterministic output


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def _json_text(obj, indent: int = 0) -> str:
    """JSON with sorted keys and 17-significant-digit floats (non-finite -> null)."""
    pad, pad1 = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad1}{json.dumps(str(k))}: {_json_text(v, indent + 1)}" for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_json_text(v, indent + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad1 + _json_text(v, indent + 1) for v in seq) + "\n" + pad + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(obj) if math.isfinite(obj) else "null"
    return json.dumps(str(obj))


REPORT_SCHEMA = {
    "type": "object",
    "required": ["command", "version", "config", "status", "results"],
    "properties": {
        "command": {"enum": list(SUBCOMMANDS)},
        "version": {"const": REPORT_VERSION},
        "config": {"type": "object"},
        "status": {"enum": ["ok", "invariant-violation"]},
        "results": {"type": "object"},
        "checks": {"type": "object", "additionalProperties": {"type": "boolean"}},
        "message": {"type": "string"},
    },
    "additionalProperties": False,
}


def write_report(records, fmt: str, path, columns: Sequence[str] | None = None) -> None:
    """Write ``records`` as CSV (rows under ``columns``) or JSON (one object).

    Raises ``ConfigError`` for an unwritable path.
    """
    path = Path(path)
    if fmt == "csv":
        if columns is None:
            raise ValueError("CSV output needs column names")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in records:
            w.writerow([_fmt(v) for v in row])
        text = buf.getvalue()
    elif fmt == "json":
        if isinstance(records, dict) and "command" in records:
            jsonschema.validate(json.loads(_json_text(records)), REPORT_SCHEMA)
        text = _json_text(records) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ConfigError("out", f"cannot write {path}: {exc}") from None


# --------------------------------------------------------------------------
# subcommands


@dataclass
class Outcome:
    results: dict
    checks: dict
    tables: dict = field(default_factory=dict)  # file name -> (columns, rows)
    message: str = ""


def _t_star(rc: RunConfig, cfg):
    from . import si_euler as se

    if rc.params.get("T_star") is not None:
        return float(rc.params["T_star"]), None
    rep = se.run_blowup(cfg, N=rc.params["N"], dt0=rc.params["dt0"])
    return rep.T_star, rep.history


def _cmd_blowup(rc: RunConfig) -> Outcome:
    from . import si_euler as se

    p = rc.params
    cfg = rc.sector()
    rep = se.run_blowup(cfg, N=p["N"], dt0=p["dt0"], growth=p["growth"], max_steps=p["max_steps"], history_stride=p["history_stride"])
    rows = [r.row() + [r.slope_residual] for r in rep.records]
    cols = list(se.MonitorRecord.CSV_COLUMNS) + ["slope_residual"]
    checks = {"no_marker_collision": rep.stop_reason != "collision"}
    msg = ""
    if rep.stop_reason == "collision":
        msg = f"marker collision in the step after t={rep.records[-1].t:.6g} ({len(rep.records) - 1} steps accepted); dt0 too large?"
    if len(rep.records) < 10:
        checks["enough_records"] = False
        msg = msg or f"run stopped after {len(rep.records) - 1} steps ({rep.stop_reason}); dt0 too large?"
    else:
        checks.update(se.blowup_verdicts(rep, p["tol_identity"]))
    res = {
        "T_star": rep.T_star,
        "r_squared": rep.r_squared,
        "c_min": rep.c_min,
        "stop_reason": rep.stop_reason,
        "records": len(rep.records),
        "final_time": rep.records[-1].t,
        "final_mass": rep.records[-1].I,
    }
    return Outcome(res, checks, {"monitors.csv": (cols, rows)}, msg)


def _cmd_instability(rc: RunConfig) -> Outcome:
    from . import si_euler as se

    p = rc.params
    cfg = rc.sector()
    T, history = _t_star(rc, cfg)
    eps = [f * T for f in p["eps_fractions"]]
    cases = se.run_instability(cfg, p["p"], eps, T, history=history, N=p["N"], dt0=p["dt0"], balls=p["balls"])
    cols = ["eps", "d_final_sphere", "d_final_loc", "d0_sphere", "d0_loc", "reversibility"]
    rows = [[getattr(c, k) for k in cols] for c in cases]
    order = np.argsort(eps)[::-1]
    d1 = np.array([cases[i].d_final_sphere for i in order])
    d0 = np.array([c.d0_sphere for c in cases])
    checks = {
        "final_distance_decreasing": bool(np.all(np.diff(d1) < 0)),
        "initial_distance_bounded_below": bool(np.all(d0 >= 0.5 * d0.max())),
    }
    return Outcome({"T_star": T, "p": p["p"], "cases": [dict(zip(cols, r)) for r in rows]}, checks, {"instability.csv": (cols, rows)})


def _cmd_separation(rc: RunConfig) -> Outcome:
    from . import si_euler as se

    p = rc.params
    cfg = rc.sector()
    T, history = _t_star(rc, cfg)
    if history is None:
        history = se.run_blowup(cfg, N=p["N"], dt0=p["dt0"]).history
    eps = [f * T for f in p["eps_fractions"]]
    rep = se.flow_separation_check(history, eps, T, cfg, p["dt0"])
    cols = ["eps", "forward", "preimage"]
    rows = [[e, f, q] for e, f, q in zip(rep.eps, rep.forward, rep.preimage)]
    checks = {"separation_positive": rep.c > 0}
    res = {"T_star": T, "c": rep.c, "inf_forward": rep.inf_forward, "sup_preimage": rep.sup_preimage}
    return Outcome(res, checks, {"separation.csv": (cols, rows)})


def _cmd_kernel_check(rc: RunConfig) -> Outcome:
    from .biot_savart import kernel_identity_check

    p = rc.params
    rng = np.random.default_rng(p["seed"])
    L = math.pi / rc.m
    cols = ["lam", "phi", "theta", "series_sin_cos", "closed_sin_cos", "series_sin_sin", "closed_sin_sin", "series_sin_sin_mk"]
    rows, worst_sc, worst_ss, worst_mk = [], 0.0, 0.0, 0.0
    for _ in range(p["samples"]):
        lam = float(rng.uniform(0.0, p["lam_max"]))
        phi, th = (float(x) for x in rng.uniform(0.0, L, 2))
        ic = kernel_identity_check(lam, rc.m, phi, th)
        rows.append([lam, phi, th, ic.series_sin_cos, ic.closed_sin_cos, ic.series_sin_sin, ic.closed_sin_sin, ic.series_sin_sin_mk])
        worst_sc = max(worst_sc, abs(ic.series_sin_cos - ic.closed_sin_cos))
        worst_ss = max(worst_ss, abs(ic.series_sin_sin - ic.closed_sin_sin))
        worst_mk = max(worst_mk, abs(ic.series_sin_sin_mk - ic.closed_sin_sin))
    checks = {"sin_cos_identity": worst_sc <= p["tol"], "sin_sin_identity": worst_ss <= p["tol"]}
    res = {"max_error_sin_cos": worst_sc, "max_error_sin_sin": worst_ss, "max_error_sin_sin_alt": worst_mk, "normalisation": "1/k" if worst_ss <= p["tol"] else "none"}
    return Outcome(res, checks, {"identities.csv": (cols, rows)})


def _cmd_calibrate(rc: RunConfig) -> Outcome:
    from . import biot_savart as bs

    p = rc.params
    cfg = rc.sector()
    rep, _ = bs.calibrate_kernel_constants(cfg, points=p["points"], tolerance=p["tol"])
    passing = sorted(k for k, v in rep.variants.items() if max(v.values()) <= p["tol"])
    cols = ["variant", "psi", "ur", "ut"]
    rows = [[k, v["psi"], v["ur"], v["ut"]] for k, v in sorted(rep.variants.items())]
    checks = {"unique_variant": len(passing) == 1}
    res = {"accepted": rep.accepted, "passing": passing, "psi_prefactor": rep.psi_prefactor, "velocity_prefactor": rep.velocity_prefactor, "ur_domain": rep.ur_domain, "max_residual": rep.max_residual}
    tables = {"calibration.csv": (cols, rows)}
    if p["lemmas"]:
        cfg = replace(cfg, kernel_variant=rep.accepted)
        omega = bs.envelope_field(rc.alpha, bs.smoothstep_cutoff(0.5, 1.0))
        lin = bs.verify_linear_growth(omega, cfg)
        wd = bs.weighted_derivative_refinement(omega, cfg)
        tables["lemma_checks.csv"] = (list(bs.VERIFICATION_COLUMNS), bs.verification_rows(lin, wd))
        checks["linear_growth_stable"] = bool(lin["stable"])
        checks["weighted_derivatives_stable"] = all(v["stable"] for v in wd.values())
    return Outcome(res, checks, tables)


def _cmd_norms(rc: RunConfig) -> Outcome:
    from . import norms as nm

    p = rc.params
    cfg = rc.sector()
    alpha = rc.alpha
    oracle = nm.power_law_oracle(alpha) if p["profile"] == "power" else nm.zero_oracle(alpha)
    rep = nm.series_norm(oracle, p["lam"], None, cfg=cfg)
    K = p["K_max"] or nm.DEFAULT_K_MAX
    checks: dict = {}
    res: dict = {"norm": rep.to_dict()}
    tables: dict = {}
    if p["lam"] > 0:
        seq_f = [nm.weighted_sups(oracle, k, cfg=cfg, check=False).f for k in range(K + 1)]
        seq_g = [nm.weighted_sups(oracle, k, cfg=cfg, check=False).g for k in range(K + 1)]
        st = nm.MajorantState(0.0, seq_f, seq_g, p["lam"], alpha, p["C"], p["C_lambda"])
        E0 = st.energies()[0]
        nominal = p["lam"] * (1 - alpha) ** 2 / (p["C_lambda"] * E0) if E0 > 0 else 1.0
        horizon = p["horizon"] or 2 * nominal
        dt = p["dt"] or horizon / 800
        tr = nm.integrate_majorant(st, horizon, dt)
        verdict = nm.majorant_bound_check(tr)
        checks = {"E_nonincreasing": tr.E_nonincreasing(), "lam_lower_bound": verdict.lam_bound, "norm_bound": verdict.norm_bound}
        res["majorant"] = {"stop_reason": tr.stop_reason, "lam_zero_time": tr.lam_zero_time, "lam_margin": verdict.lam_margin, "norm_ratio": verdict.norm_ratio, "C": tr.C, "C_lambda": tr.C_lambda}
        rows = [[t, l, e, et, d, ta] for t, l, e, et, d, ta in zip(tr.times, tr.lam, tr.E, tr.E_tilde, tr.dEdt, tr.tail)]
        tables["majorant.csv"] = (["t", "lam", "E", "E_tilde", "dEdt", "tail"], rows)
    return Outcome(res, checks, tables)


def _initial_omega(rc: RunConfig):
    a = rc.alpha
    if rc.params["profile"] == "zero":
        return lambda r, th: np.zeros(np.broadcast(r, th).shape)
    return lambda r, th: -(th ** (-a)) if a else -np.ones(np.broadcast(r, th).shape)


def _cmd_evolve2d(rc: RunConfig, out: Path) -> Outcome:
    from . import lagrangian2d as l2

    p = rc.params
    cfg = rc.sector()
    cloud = l2.init_cloud(_initial_omega(rc), p["r_span"], p["resolution"], cfg, blob_factor=p["blob_factor"])
    om0, w0 = cloud.omega.copy(), cloud.w.copy()
    rows = []
    try:
        for _ in range(p["steps"]):
            cloud = l2.step2d(cloud, p["dt"], None, cfg)
            rows.append([cloud.time, float(cloud.r.min()), float(cloud.theta.min()), float(cloud.theta.max())])
    except l2.ParticleExitError as exc:
        raise InvariantViolation(str(exc)) from None
    l2.save_checkpoint(cloud, out / "cloud.bin", cfg)
    checks = {
        "values_unchanged": bool(np.array_equal(cloud.omega, om0)),
        "weights_unchanged": bool(np.array_equal(cloud.w, w0)),
        "sector_invariant": bool(np.all((cloud.theta > 0) & (cloud.theta < cfg.half_width))),
    }
    res = {"particles": cloud.size, "time": cloud.time, "checkpoint": "cloud.bin"}
    return Outcome(res, checks, {"evolve2d.csv": (["t", "r_min", "theta_min", "theta_max"], rows)})


def _cmd_origin_limit(rc: RunConfig) -> Outcome:
    from . import lagrangian2d as l2

    p = rc.params
    cfg = rc.sector()
    rep = l2.origin_limit_experiment(
        cfg,
        p["r0"],
        horizon_fraction=p["horizon_fraction"],
        T_star=p["T_star"],
        resolution=tuple(p["resolution"]),
        r_span=tuple(p["r_span"]),
        steps=p["steps"],
        markers=p["markers"],
    )
    metric = "value" if rc.alpha > 0 else "angle"
    d = rep.value_distance if metric == "value" else rep.angle_distance
    smallest = d[int(np.argmin(rep.r0))]
    checks = {"monotone_in_r0": rep.monotone(metric), "smallest_within_tolerance": smallest <= p["tol"]}
    res = {
        "metric": metric,
        "r0": rep.r0,
        "value_distance": rep.value_distance,
        "angle_distance": rep.angle_distance,
        "T_star": rep.T_star,
        "horizon": rep.horizon,
        "particles": rep.particles,
        "outer_tail_bound": rep.outer_tail_bound,
        "core_bound": rep.core_bound,
    }
    return Outcome(res, checks, {"origin_limit.csv": (list(rep.CSV_COLUMNS), list(rep.rows()))})


def dispatch(rc: RunConfig, out: str | Path | None = None) -> int:
    """Run one subcommand, write its artifacts and return the exit code."""
    out = Path(out or rc.out or ".")
    _set_threads(rc.threads)
    try:
        if rc.cmd == "evolve2d":
            out.mkdir(parents=True, exist_ok=True)
            outcome = _cmd_evolve2d(rc, out)
        else:
            outcome = _HANDLERS[rc.cmd](rc)
    except InvariantViolation as exc:
        outcome = Outcome({}, {"completed": False}, message=str(exc))
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    ok = all(outcome.checks.values())
    for name, (cols, rows) in outcome.tables.items():
        write_report(rows, "csv", out / name, cols)
    report = {
        "command": rc.cmd,
        "version": REPORT_VERSION,
        "config": rc.to_dict(),
        "status": "ok" if ok else "invariant-violation",
        "results": outcome.results,
        "checks": outcome.checks,
    }
    if outcome.message:
        report["message"] = outcome.message
    write_report(report, "json", out / "report.json")
    write_report(rc.to_dict(), "json", out / "config.json")
    for k, v in outcome.checks.items():
        log.info("%-32s %s", k, "PASS" if v else "FAIL")
    return EXIT_OK if ok else EXIT_INVARIANT


_HANDLERS = {
    "blowup": _cmd_blowup,
    "instability": _cmd_instability,
    "separation": _cmd_separation,
    "kernel-check": _cmd_kernel_check,
    "calibrate": _cmd_calibrate,
    "norms": _cmd_norms,
    "origin-limit": _cmd_origin_limit,
}


def _set_threads(n: int) -> None:
    import numba

    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="singular-euler", description="Experiments for scale-invariant singular vortices.")
    ap.add_argument("subcommand")
    ap.add_argument("--config", required=True, help="JSON config file")
    ap.add_argument("--out", help="output directory (default: config 'out' or the current directory)")
    ap.add_argument("--threads", type=int, help="worker threads (recorded in the report)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.subcommand not in SUBCOMMANDS:
        print(f"error: unknown subcommand {args.subcommand!r} (choose from {', '.join(SUBCOMMANDS)})", file=sys.stderr)
        return EXIT_CONFIG
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if isinstance(doc, dict) and args.threads is not None:
        doc["threads"] = args.threads
    try:
        rc = parse_config(doc, args.subcommand)
        return dispatch(rc, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
