"""Experiment configuration, orchestration, persistence and plotting.

Configs are JSON objects.  Every default is materialized into the stored
record, so a record alone is enough to re-run it.  Seeds are derived from
(master seed, task key) and never from worker identity, so results do not
depend on ``jobs``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .chains import MCConfig
from .duality import PressureBackend, chi_slack, duality_gap, penalty_polynomial
from .equilibrium import solve_equilibrium
from .gibbs import boltzmann_entropy, estimate_state, run_chain
from .matrixmc import (MicrostateSpec, Schedule, extrapolate_pressure, log_ball_volume, micro_record,
                       microstate_volume, pressure_path, scaled_log_volume, volume_limit)
from .measures import make_measure
from .moments import MomentSpec
from .ncpoly import NCPolynomial

SCHEMA_VERSION = 1
COMMANDS = ("volume", "pressure", "equilibrium", "gibbs-entropy", "chi-penalty", "duality-gap", "microstate")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# -- defaults and validation ---------------------------------------------------------

_MC_DEFAULTS = asdict(MCConfig())
_SCHED_DEFAULTS = asdict(Schedule())

DEFAULTS = {
    "volume": {"R": 2.0, "N": 1, "n": list(range(4, 65))},
    "pressure": {"R": 3.0, "h": "0.5 * X1.X1", "N": None, "n": [8, 16, 32], "mc": {}, "schedule": {}},
    "equilibrium": {"R": 3.0, "h": "0.5 * X1.X1", "grid": 1000,
                    "reference": {"kind": "semicircle", "params": {"m": 0.0, "r": 2.0}}},
    "gibbs-entropy": {"R": 3.0, "h": "0.5 * X1.X1", "N": None, "n": [8, 16, 32], "mc": {}, "schedule": {},
                      "moments_degree": 4},
    "chi-penalty": {"R": 3.0, "target": {"kind": "semicircular", "nvars": 1, "variance": 1.0},
                    "r": 2, "eps": 0.25, "betas": [10.0], "n": [8, 16, 32], "mc": {},
                    "schedule": {"nodes": 24, "kind": "log", "floor": 1e-8}},
    "duality-gap": {"R": 2.0, "h": "0", "grid": 1000,
                    "candidates": [{"kind": "arcsine", "params": {"a": 2.0}},
                                   {"kind": "semicircle", "params": {"m": 0.0, "r": 2.0}}]},
    "microstate": {"R": 2.0, "target": {"kind": "semicircular", "nvars": 1, "variance": 1.0},
                   "r": 2, "eps": 0.3, "n": [4], "samples": 20000},
}


def _require(cond: bool, fld: str, msg: str):
    if not cond:
        raise ConfigError(fld, msg)


def _check_n_list(v, fld="n"):
    _require(isinstance(v, list) and len(v) > 0, fld, "must be a nonempty list of positive integers")
    for i, n in enumerate(v):
        _require(isinstance(n, int) and not isinstance(n, bool) and n >= 1, f"{fld}[{i}]",
                 f"must be a positive integer, got {n!r}")


def _check_positive(cfg, key):
    v = cfg.get(key)
    _require(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 and math.isfinite(v), key,
             f"must be a positive number, got {v!r}")


def _check_poly(cfg, key):
    v = cfg.get(key)
    if isinstance(v, dict):
        _require("file" in v, key, "object form needs a 'file' entry")
        _require(os.path.exists(v["file"]), f"{key}.file", f"file {v['file']!r} does not exist")
        return
    _require(isinstance(v, str), key, "must be a polynomial string or {'file': path}")
    try:
        p = parse_polynomial(v)
    except Exception as exc:  # noqa: BLE001
        raise ConfigError(key, f"cannot parse polynomial: {exc}") from None
    _require(p.is_selfadjoint(), key, "polynomial must be selfadjoint")


def _check_sub(cfg, key, allowed):
    v = cfg.get(key, {})
    _require(isinstance(v, dict), key, "must be an object")
    for k in v:
        _require(k in allowed, f"{key}.{k}", "unknown option")


def _check_measure(spec, fld):
    _require(isinstance(spec, dict), fld, "must be an object with 'kind' and 'params'")
    kinds = ("semicircle", "arcsine", "uniform", "free_poisson", "point")
    _require(spec.get("kind") in kinds, f"{fld}.kind", f"must be one of {kinds}")
    _require(isinstance(spec.get("params", {}), dict), f"{fld}.params", "must be an object")


def _check_target(cfg):
    t = cfg.get("target")
    _require(isinstance(t, dict), "target", "must be an object")
    if "csv" in t:
        _require(os.path.exists(t["csv"]), "target.csv", f"file {t['csv']!r} does not exist")
    elif t.get("kind") == "semicircular":
        _require(isinstance(t.get("nvars", 1), int) and t.get("nvars", 1) >= 1, "target.nvars",
                 "must be a positive integer")
        _require(t.get("variance", 1.0) > 0, "target.variance", "must be positive")
    elif t.get("kind") == "measure":
        _check_measure(t.get("measure"), "target.measure")
    else:
        _require(False, "target.kind", "must be 'semicircular', 'measure', or give 'csv'")


def materialize(command: str, config: dict, seed: int | None = None) -> dict:
    """Validate ``config`` and return it with every default filled in."""
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command {command!r}; expected one of {COMMANDS}")
    _require(isinstance(config, dict), "config", "must be a JSON object")
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    extra = set(config) - set(cfg) - {"command", "seed", "schema"}
    if extra:
        raise ConfigError(sorted(extra)[0], "unknown field")
    if "command" in config:
        _require(config["command"] == command, "command",
                 f"config is for {config['command']!r}, not {command!r}")
    cfg.update({k: v for k, v in config.items() if k not in ("command", "seed", "schema")})
    cfg["command"] = command
    cfg["schema"] = SCHEMA_VERSION
    s = config.get("seed", 0) if seed is None else seed
    _require(isinstance(s, int) and not isinstance(s, bool) and 0 <= s < 2 ** 64, "seed",
             "must be an unsigned 64-bit integer")
    cfg["seed"] = s
    _check_positive(cfg, "R")
    if "n" in cfg:
        _check_n_list(cfg["n"])
    if "h" in cfg:
        _check_poly(cfg, "h")
    if "N" in cfg and cfg["N"] is not None:
        _require(isinstance(cfg["N"], int) and cfg["N"] >= 1, "N", "must be a positive integer")
    if "grid" in cfg:
        _require(isinstance(cfg["grid"], int) and cfg["grid"] >= 200, "grid", "must be an integer >= 200")
    if "mc" in cfg:
        _check_sub(cfg, "mc", _MC_DEFAULTS)
        cfg["mc"] = {**_MC_DEFAULTS, **cfg["mc"]}
        for k in ("chains", "adapt", "samples", "max_thin", "pilot"):
            _require(isinstance(cfg["mc"][k], int) and cfg["mc"][k] >= 1, f"mc.{k}", "must be a positive integer")
        _require(cfg["mc"]["chains"] >= 2, "mc.chains", "need at least 2 chains for error bars")
    if "schedule" in cfg:
        _check_sub(cfg, "schedule", _SCHED_DEFAULTS)
        cfg["schedule"] = {**_SCHED_DEFAULTS, **cfg["schedule"]}
        try:
            Schedule(**cfg["schedule"])
        except ValueError as exc:
            raise ConfigError("schedule", str(exc)) from None
    if command == "equilibrium":
        _check_measure(cfg["reference"], "reference") if cfg["reference"] is not None else None
    if command in ("chi-penalty", "microstate"):
        _check_target(cfg)
        _require(isinstance(cfg["r"], int) and cfg["r"] >= 1, "r", "must be a positive integer")
        _check_positive(cfg, "eps")
    if command == "chi-penalty":
        _require(isinstance(cfg["betas"], list) and cfg["betas"], "betas", "must be a nonempty list")
        for i, b in enumerate(cfg["betas"]):
            _require(isinstance(b, (int, float)) and b >= 0, f"betas[{i}]", "must be a nonnegative number")
    if command == "duality-gap":
        _require(isinstance(cfg["candidates"], list) and cfg["candidates"], "candidates",
                 "must be a nonempty list")
        for i, c in enumerate(cfg["candidates"]):
            _check_measure(c, f"candidates[{i}]")
    if command == "microstate":
        _require(isinstance(cfg["samples"], int) and cfg["samples"] >= 1, "samples", "must be a positive integer")
        for i, n in enumerate(cfg["n"]):
            _require(n <= 6, f"n[{i}]", "microstate volumes need n <= 6")
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of the materialized config, stable under key reordering."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError("--config", f"file {path!r} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from None


# -- parsing helpers -----------------------------------------------------------------------

def parse_polynomial(spec) -> NCPolynomial:
    if isinstance(spec, dict):
        with open(spec["file"]) as fh:
            return NCPolynomial.from_text(fh.read())
    s = spec.strip()
    if s in ("", "0"):
        return NCPolynomial({}, 1)
    return NCPolynomial.from_text(s)


def build_target(t: dict, degree: int) -> MomentSpec:
    if "csv" in t:
        return MomentSpec.from_csv(t["csv"])
    if t["kind"] == "semicircular":
        return MomentSpec.semicircular(t.get("nvars", 1), degree, t.get("variance", 1.0))
    m = t["measure"]
    mu = make_measure(m["kind"], m.get("params", {}), m.get("grid", 2000), m.get("R"))
    return MomentSpec.from_measure(mu, degree)


def _version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=os.path.dirname(__file__), timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# -- records --------------------------------------------------------------------------------

@dataclass
class ResultRecord:
    config_hash: str
    version: str
    timestamp: float
    command: str
    metric: str
    value: float
    stderr: float
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=_jsonable)

    def metric_key(self) -> str:
        """Canonical text of the reproducible part of the record."""
        return json.dumps({"metric": self.metric, "value": self.value, "stderr": self.stderr},
                          sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serializable: {type(o).__name__}")


@dataclass
class RunResult:
    records: list
    artifacts: dict          # file name -> text
    ok: bool
    config: dict


def _mc(cfg) -> MCConfig:
    return MCConfig(**cfg["mc"])


def _sched(cfg) -> Schedule:
    return Schedule(**cfg["schedule"])


def _pmap(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, *zip(*tasks)))


def _csv(header, rows, comment=None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


# -- tasks (top level so worker processes can import them) -------------------------------------------

def _pressure_task(h_text, n, R, N, sched, mc, seed):
    h = parse_polynomial(h_text)
    return pressure_path(h, n, R, (1.0,), Schedule(**sched), seed, MCConfig(**mc), nvars=N)[0]


def _entropy_task(h_text, n, R, N, sched, mc, seed):
    h = parse_polynomial(h_text)
    return boltzmann_entropy(h, n, R, MCConfig(**mc), Schedule(**sched), seed, nvars=N)


def _penalty_task(target_cfg, r, eps, betas, n, R, sched, mc, seed):
    target = build_target(target_cfg, r)
    q1 = penalty_polynomial(target, r, eps, 1.0)
    return pressure_path(None, n, R, betas, Schedule(**sched), seed, MCConfig(**mc), q=q1, nvars=target.nvars)


def _microstate_task(target_cfg, r, eps, R, n, samples, seed):
    spec = MicrostateSpec(build_target(target_cfg, r), eps, R, r)
    return microstate_volume(spec, n, samples, seed)


# -- commands -------------------------------------------------------------------------------------------

def _rec(cfg, metric, value, stderr=0.0, /, **diag):
    return {"metric": metric, "value": float(value), "stderr": float(stderr), "diagnostics": diag}


def _run_volume(cfg, jobs):
    R, N = cfg["R"], cfg["N"]
    rows, recs = [], []
    for n in cfg["n"]:
        lv = log_ball_volume(n, R)
        sv = N * scaled_log_volume(n, R)
        rows.append((n, N * lv, sv))
        recs.append(_rec(cfg, f"scaled_log_volume[n={n}]", sv, 0.0, log_volume=N * lv))
    arts = {"volume.csv": _csv(["n", "log_volume", "scaled"], rows, f"R={R!r} N={N}")}
    if len(set(cfg["n"])) >= 3:
        fit = extrapolate_pressure([(n, s, 0.0) for n, _, s in rows])
        recs.append(_rec(cfg, "extrapolated_scaled_log_volume", fit.value, fit.stderr,
                         slope=fit.slope, residual=fit.residual, limit=volume_limit(R, N)))
    return recs, arts, True


def _run_pressure(cfg, jobs):
    h = parse_polynomial(cfg["h"])
    N = cfg["N"] or h.nvars
    tasks = [(cfg["h"], n, cfg["R"], N, cfg["schedule"], cfg["mc"], cfg["seed"]) for n in cfg["n"]]
    ests = _pmap(_pressure_task, tasks, jobs)
    recs, rows = [], []
    for e in ests:
        rows.append((e.n, e.value, e.stderr, e.scaled, e.scaled_stderr, int(e.ok)))
        rec = micro_record(h, e, _sched(cfg), cfg["seed"])
        recs.append(_rec(cfg, f"scaled_pressure[n={e.n}]", e.scaled, e.scaled_stderr,
                         value=e.value, value_stderr=e.stderr, ok=e.ok, run=rec))
    if len(set(cfg["n"])) >= 3:
        fit = extrapolate_pressure(ests, h=h.to_text())
        recs.append(_rec(cfg, "extrapolated_pressure", fit.value, fit.stderr, slope=fit.slope,
                         residual=fit.residual, cov=fit.cov.tolist()))
    arts = {"pressure.csv": _csv(["n", "P", "P_stderr", "scaled", "scaled_stderr", "ok"], rows, f"R={cfg['R']!r}")}
    return recs, arts, all(e.ok for e in ests)


def _run_equilibrium(cfg, jobs):
    h = parse_polynomial(cfg["h"])
    res = solve_equilibrium(h, cfg["R"], cfg["grid"])
    recs = [_rec(cfg, "pressure", res.pressure, 0.0, residual_on=res.residual_on, residual_off=res.residual_off,
                 converged=res.converged, frostman=res.frostman_constant),
            _rec(cfg, "chi", res.chi, 0.0),
            _rec(cfg, "moment2", res.sigma.moment(2), 0.0)]
    if cfg["reference"] is not None:
        ref = make_measure(cfg["reference"]["kind"], cfg["reference"].get("params", {}), cfg["grid"], cfg["R"])
        recs.append(_rec(cfg, "l1_to_reference", res.sigma.l1_distance(ref), 0.0, reference=cfg["reference"]))
    arts = {"equilibrium.csv": res.to_csv(), "measure.csv": res.sigma.to_csv()}
    return recs, arts, bool(res.converged)


def _run_entropy(cfg, jobs):
    h = parse_polynomial(cfg["h"])
    N = cfg["N"] or h.nvars
    tasks = [(cfg["h"], n, cfg["R"], N, cfg["schedule"], cfg["mc"], cfg["seed"]) for n in cfg["n"]]
    ests = _pmap(_entropy_task, tasks, jobs)
    recs, rows = [], []
    for e in ests:
        rows.append((e.n, e.S, e.stderr, e.scaled, e.scaled_stderr, int(e.ok)))
        recs.append(_rec(cfg, f"scaled_entropy[n={e.n}]", e.scaled, e.scaled_stderr, S=e.S, S_stderr=e.stderr,
                         pressure=e.pressure, mean_energy=e.mean_energy, ok=e.ok))
    if len(set(cfg["n"])) >= 3:
        fit = extrapolate_pressure([(e.n, e.scaled, e.scaled_stderr) for e in ests])
        recs.append(_rec(cfg, "extrapolated_entropy", fit.value, fit.stderr, slope=fit.slope, residual=fit.residual))
    nmax = max(cfg["n"])
    chain = run_chain(h, nmax, cfg["R"], _mc(cfg), cfg["seed"], N=N)
    state = estimate_state(chain, cfg["moments_degree"])
    arts = {"entropy.csv": _csv(["n", "S", "S_stderr", "scaled", "scaled_stderr", "ok"], rows, f"R={cfg['R']!r}"),
            "moments.csv": state.to_csv()}
    return recs, arts, all(e.ok for e in ests) and chain.ok


def _run_chi(cfg, jobs):
    target = build_target(cfg["target"], cfg["r"])
    N = target.nvars
    betas = sorted(float(b) for b in cfg["betas"] if b > 0)
    tasks = [(cfg["target"], cfg["r"], cfg["eps"], betas, n, cfg["R"], cfg["schedule"], cfg["mc"], cfg["seed"])
             for n in cfg["n"]] if betas else []
    paths = dict(zip(cfg["n"], _pmap(_penalty_task, tasks, jobs))) if betas else {}
    recs, rows, ok = [], [], True
    for b in cfg["betas"]:
        b = float(b)
        if b == 0:
            seq = [(n, N * scaled_log_volume(n, cfg["R"]), 0.0) for n in cfg["n"]]
        else:
            k = betas.index(b)
            seq = [(n, paths[n][k].scaled, paths[n][k].scaled_stderr) for n in cfg["n"]]
            ok &= all(paths[n][k].ok for n in cfg["n"])
        for n, v, e in seq:
            rows.append((b, n, v, e))
            recs.append(_rec(cfg, f"scaled_penalty_pressure[beta={b!r},n={n}]", v, e))
        if len(set(cfg["n"])) >= 3:
            fit = extrapolate_pressure(seq)
            recs.append(_rec(cfg, f"chi_hat[beta={b!r}]", fit.value, fit.stderr, slope=fit.slope,
                             residual=fit.residual, slack=chi_slack(fit.value, b, cfg["R"], N)))
    arts = {"chi_penalty.csv": _csv(["beta", "n", "scaled", "stderr"], rows, f"R={cfg['R']!r} eps={cfg['eps']!r}")}
    return recs, arts, ok


def _run_gap(cfg, jobs):
    h = parse_polynomial(cfg["h"])
    R, grid = cfg["R"], cfg["grid"]
    cands = [make_measure(c["kind"], c.get("params", {}), grid, R) for c in cfg["candidates"]]
    rep = duality_gap(h, cands, R, PressureBackend(R, grid=grid))
    recs = [_rec(cfg, "pressure", rep.pressure, rep.pressure_stderr)]
    rows = []
    for c, g, e in zip(cfg["candidates"], rep.gaps, rep.etas):
        name = f"{c['kind']}{json.dumps(c.get('params', {}), sort_keys=True)}"
        recs.append(_rec(cfg, f"gap[{name}]", g, 0.0, eta=e.minimum))
        rows.append((name, g, e.minimum))
    arts = {"duality_gap.csv": _csv(["candidate", "gap", "eta_upper"], rows, f"R={R!r}")}
    return recs, arts, rep.consistent


def _run_microstate(cfg, jobs):
    tasks = [(cfg["target"], cfg["r"], cfg["eps"], cfg["R"], n, cfg["samples"], cfg["seed"]) for n in cfg["n"]]
    res = _pmap(_microstate_task, tasks, jobs)
    recs, rows = [], []
    for n, m in zip(cfg["n"], res):
        v = m.log_volume if math.isfinite(m.log_volume) else None
        recs.append({"metric": f"log_volume[n={n}]", "value": v, "stderr": m.stderr if math.isfinite(m.stderr) else None,
                     "diagnostics": {"hits": m.hits, "samples": m.samples, "exact": m.exact,
                                     "log_upper": m.log_upper}})
        rows.append((n, m.log_volume, m.stderr, m.hits, m.samples))
    arts = {"microstate.csv": _csv(["n", "log_volume", "stderr", "hits", "samples"], rows, f"R={cfg['R']!r}")}
    return recs, arts, True


RUNNERS = {"volume": _run_volume, "pressure": _run_pressure, "equilibrium": _run_equilibrium,
           "gibbs-entropy": _run_entropy, "chi-penalty": _run_chi, "duality-gap": _run_gap,
           "microstate": _run_microstate}


def run(cfg: dict, jobs: int = 1) -> RunResult:
    """Execute a materialized config; returns records and artifact texts."""
    command = cfg["command"]
    h = config_hash(cfg)
    version = _version()
    raw, arts, ok = RUNNERS[command](cfg, jobs)
    now = time.time()
    records = [ResultRecord(h, version, now, command, r["metric"], r["value"], r["stderr"],
                            r.get("diagnostics", {}), cfg) for r in raw]
    return RunResult(records, arts, bool(ok), cfg)


# -- persistence and plots -----------------------------------------------------------------------------------

def write_outputs(result: RunResult, out_dir) -> list:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    path = os.path.join(out_dir, "metrics.jsonl")
    with open(path, "a") as fh:
        for r in result.records:
            fh.write(r.to_json() + "\n")
    written.append(path)
    for name, text in result.artifacts.items():
        p = os.path.join(out_dir, name)
        with open(p, "w") as fh:
            fh.write(text)
        written.append(p)
    for name in result.artifacts:
        svg = plot_artifact(os.path.join(out_dir, name))
        if svg:
            written.append(svg)
    return written


def _read_csv(path):
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    return rows


def plot_artifact(csv_path) -> str | None:
    """Render the SVG belonging to a persisted CSV; returns its path."""
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "freepressure"
    import matplotlib.pyplot as plt

    name = os.path.basename(csv_path)
    rows = _read_csv(csv_path)
    if not rows:
        return None
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if name in ("volume.csv", "pressure.csv", "entropy.csv"):
        x = np.array([1.0 / float(r["n"]) ** 2 for r in rows])
        y = np.array([float(r["scaled"]) for r in rows])
        err = np.array([float(r.get("scaled_stderr", 0.0) or 0.0) for r in rows])
        ax.errorbar(x, y, yerr=err, fmt="o-", ms=3)
        ax.set_xlabel("1/n^2")
        ax.set_ylabel("scaled value")
    elif name == "chi_penalty.csv":
        for b in sorted({r["beta"] for r in rows}):
            sel = [r for r in rows if r["beta"] == b]
            ax.errorbar([1.0 / float(r["n"]) ** 2 for r in sel], [float(r["scaled"]) for r in sel],
                        yerr=[float(r["stderr"]) for r in sel], fmt="o-", ms=3, label=f"beta={b}")
        ax.legend()
        ax.set_xlabel("1/n^2")
    elif name in ("equilibrium.csv", "measure.csv"):
        x = np.array([float(r["node"]) for r in rows])
        w = np.array([float(r["weight"]) for r in rows])
        width = x[1] - x[0] if x.size > 1 else 1.0
        ax.plot(x, w / width)
        ax.set_xlabel("x")
        ax.set_ylabel("density")
    elif name == "duality_gap.csv":
        ax.bar(range(len(rows)), [float(r["gap"]) for r in rows])
        ax.set_xticks(range(len(rows)), [r["candidate"].split("{")[0] for r in rows])
        ax.axhline(0.0, color="k", lw=0.5)
        ax.set_ylabel("duality gap")
    elif name == "microstate.csv":
        sel = [r for r in rows if r["log_volume"] not in ("-inf", "nan")]
        if not sel:
            plt.close(fig)
            return None
        n = np.array([float(r["n"]) for r in sel])
        ax.errorbar(n, [float(r["log_volume"]) / k ** 2 for r, k in zip(sel, n)],
                    yerr=[float(r["stderr"]) / k ** 2 for r, k in zip(sel, n)], fmt="o-", ms=3)
        ax.set_xlabel("n")
        ax.set_ylabel("log volume / n^2")
    else:
        plt.close(fig)
        return None
    svg = csv_path[:-4] + ".svg"
    fig.tight_layout()
    fig.savefig(svg, format="svg", metadata={"Date": None})
    plt.close(fig)
    return svg


# -- replay -----------------------------------------------------------------------------------------------------

@dataclass
class ReplayReport:
    config_hash: str
    same_seed: bool
    checks: list            # (metric, stored, replayed, passed)

    @property
    def ok(self) -> bool:
        return all(c[3] for c in self.checks)


def read_records(path) -> list:
    if not os.path.exists(path):
        raise ConfigError("--results", f"file {path!r} does not exist")
    with open(path) as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]


def replay(results_path, chash: str, seed: int | None = None, jobs: int = 1, z: float = 3.0) -> ReplayReport:
    """Re-run a recorded experiment and compare metrics.

    With the recorded seed values must match exactly; with another seed they
    must agree within ``z`` combined standard errors.
    """
    recs = [r for r in read_records(results_path) if r["config_hash"] == chash]
    if not recs:
        raise ConfigError("--hash", f"no records with config hash {chash!r} in {results_path}")
    cfg = recs[0]["config"]
    if config_hash(cfg) != chash:
        raise ConfigError("--hash", "embedded config does not reproduce its hash")
    same = seed is None or seed == cfg["seed"]
    if not same:
        cfg = dict(cfg, seed=seed)
    new = {r.metric: r for r in run(cfg, jobs).records}
    checks = []
    for r in recs:
        m = r["metric"]
        if m not in new:
            checks.append((m, r["value"], None, False))
            continue
        nv = new[m]
        if same:
            passed = json.dumps([r["value"], r["stderr"]]) == json.dumps([nv.value, nv.stderr], default=_jsonable)
        elif r["value"] is None or nv.value is None:
            passed = r["value"] == nv.value
        else:
            se = math.hypot(r["stderr"] or 0.0, nv.stderr or 0.0)
            passed = abs(r["value"] - nv.value) <= z * se if se > 0 else r["value"] == nv.value
        checks.append((m, r["value"], nv.value, bool(passed)))
    return ReplayReport(chash, same, checks)
