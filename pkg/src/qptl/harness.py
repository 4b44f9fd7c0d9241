"""Experiment configuration, deterministic sweeps and atomic output."""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
import os
import platform
import random
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

log = logging.getLogger("qptl")

SCHEMA_VERSION = 1
KINDS = ("lyapunov", "phi", "growth-site", "vset", "transport", "ids", "kkl", "dtcheck", "fejer", "cf")
GRID_AXES = ("E", "theta", "T", "k", "N", "zeta", "delta", "tau", "p", "kappa", "level")
TOP_KEYS = ("schema_version", "experiment", "frequency", "sampling", "grids", "theta_grid", "tolerances",
            "seed", "workers", "budget", "output", "options")
TOLERANCE_KEYS = ("tol", "tail", "quadrature")
OUTPUT_KEYS = ("dir", "prefix")
DEFAULT_TOLERANCES = {"tol": 1e-8, "tail": 1e-8, "quadrature": 1e-10}

# grid axes each experiment needs
REQUIRED_AXES = {
    "lyapunov": ("E", "k"),
    "phi": ("E", "T", "zeta", "delta"),
    "growth-site": ("E", "tau", "k"),
    "vset": ("E", "k", "level"),
    "transport": ("T", "p"),
    "ids": ("E",),
    "kkl": ("T",),
    "dtcheck": ("T", "zeta"),
    "fejer": ("N",),
    "cf": ("kappa",),
}


class ParseError(ValueError):
    """The config file is not well-formed structured text."""


class ValidationError(ValueError):
    """The config is well-formed but breaks the schema; ``violations`` lists every problem."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class BudgetExceeded(RuntimeError):
    """The sweep would launch more tasks than the configured budget."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    frequency: dict
    sampling: dict
    grids: dict
    theta_grid: int = 1024
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    seed: int = 0
    workers: int = 1
    budget: int = 100000
    output: dict = field(default_factory=lambda: {"dir": "out", "prefix": "run"})
    options: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grids"] = {k: list(v) for k, v in self.grids.items()}
        return {k: d[k] for k in TOP_KEYS}

    def hash(self) -> str:
        """Hash of everything that affects results (worker count and output paths excluded)."""
        d = self.to_dict()
        d.pop("workers")
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def validate(raw: Any) -> ExperimentConfig:
    """Check a parsed mapping against the schema, collecting every violation."""
    v: list[str] = []
    if not isinstance(raw, dict):
        raise ValidationError(["top level must be a mapping"])
    for key in raw:
        if key not in TOP_KEYS:
            v.append(f"unknown key '{key}'")
    if raw.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        v.append(f"schema_version must be {SCHEMA_VERSION}")
    kind = raw.get("experiment")
    if kind not in KINDS:
        v.append(f"experiment must be one of {', '.join(KINDS)}")
    freq = raw.get("frequency")
    if kind != "fejer" or freq is not None:
        if not isinstance(freq, dict) or freq.get("kind") not in ("quadratic", "decimal", "quotients"):
            v.append("frequency.kind must be quadratic, decimal or quotients")
        elif freq["kind"] == "quadratic" and not (isinstance(freq.get("form"), list) and len(freq["form"]) == 4):
            v.append("frequency.form must list four integers [a, b, d, c]")
        elif freq["kind"] == "decimal" and not isinstance(freq.get("digits"), str):
            v.append("frequency.digits must be a string")
        elif freq["kind"] == "quotients" and not (isinstance(freq.get("a"), list) and freq["a"]):
            v.append("frequency.a must be a nonempty list")
    samp = raw.get("sampling")
    if kind != "cf":
        if not isinstance(samp, dict) or not ({"builtin", "custom"} & set(samp)):
            v.append("sampling needs a 'builtin' or 'custom' entry")
        elif "builtin" in samp:
            if samp["builtin"] not in ("cosine", "sawtooth", "sturmian", "zero", "cusp"):
                v.append("sampling.builtin must be cosine, sawtooth, sturmian, zero or cusp")
            for key in samp:
                if key not in ("builtin", "lambda", "gamma"):
                    v.append(f"unknown key 'sampling.{key}'")
            if "lambda" in samp and not _is_number(samp["lambda"]):
                v.append("sampling.lambda must be a number")
            if "gamma" in samp and not (_is_number(samp["gamma"]) and 0 < samp["gamma"] <= 1):
                v.append("sampling.gamma must lie in (0, 1]")
    grids = raw.get("grids", {})
    clean_grids = {}
    if not isinstance(grids, dict):
        v.append("grids must be a mapping")
        grids = {}
    for axis, vals in grids.items():
        if axis not in GRID_AXES:
            v.append(f"unknown grid axis 'grids.{axis}'")
            continue
        if not isinstance(vals, list) or not vals:
            v.append(f"grids.{axis} must be a nonempty list")
            continue
        if not all(_is_number(x) for x in vals):
            v.append(f"grids.{axis} must contain numbers only")
            continue
        clean_grids[axis] = tuple(vals)
    for axis in REQUIRED_AXES.get(kind, ()):
        if axis not in grids:
            v.append(f"grids.{axis} is required for {kind}")
    tg = raw.get("theta_grid", 1024)
    if not isinstance(tg, int) or isinstance(tg, bool) or tg < 1:
        v.append("theta_grid must be a positive integer")
    tols = dict(DEFAULT_TOLERANCES)
    user_tols = raw.get("tolerances", {})
    if not isinstance(user_tols, dict):
        v.append("tolerances must be a mapping")
        user_tols = {}
    for key, val in user_tols.items():
        if key not in TOLERANCE_KEYS:
            v.append(f"unknown key 'tolerances.{key}'")
        elif not _is_number(val) or val <= 0:
            v.append(f"tolerances.{key} must be positive")
        else:
            tols[key] = val
    for key, lo in (("seed", 0), ("workers", 1), ("budget", 1)):
        val = raw.get(key)
        if val is not None and (not isinstance(val, int) or isinstance(val, bool) or val < lo):
            v.append(f"{key} must be an integer >= {lo}")
    out = raw.get("output", {"dir": "out", "prefix": "run"})
    if not isinstance(out, dict):
        v.append("output must be a mapping")
        out = {}
    for key in out:
        if key not in OUTPUT_KEYS:
            v.append(f"unknown key 'output.{key}'")
    opts = raw.get("options", {})
    if not isinstance(opts, dict):
        v.append("options must be a mapping")
        opts = {}
    if v:
        raise ValidationError(v)
    return ExperimentConfig(
        experiment=kind, frequency=freq or {}, sampling=samp or {}, grids=clean_grids, theta_grid=tg,
        tolerances=tols, seed=raw.get("seed", 0), workers=raw.get("workers", 1), budget=raw.get("budget", 100000),
        output={"dir": out.get("dir", "out"), "prefix": out.get("prefix", "run")}, options=opts,
        schema_version=raw.get("schema_version", SCHEMA_VERSION))


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ParseError(f"malformed config{where}: {getattr(exc, 'problem', exc)}") from exc
    return validate(raw)


def parse_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


def emit_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


# --------------------------------------------------------------------------- tasks

TASK_AXES = {
    "lyapunov": ("E", "theta"),
    "phi": ("E", "T", "zeta", "delta"),
    "growth-site": ("E", "tau", "k"),
    "vset": ("E", "k"),
    "transport": ("theta",),
    "ids": (),
    "kkl": ("T", "theta"),
    "dtcheck": ("theta", "zeta"),
    "fejer": ("N",),
    "cf": ("kappa",),
}


@dataclass(frozen=True)
class Task:
    index: int
    key: tuple
    params: dict


def build_tasks(cfg: ExperimentConfig) -> list[Task]:
    axes = [a for a in TASK_AXES[cfg.experiment] if a in cfg.grids]
    if cfg.experiment in ("transport", "kkl", "dtcheck") and "theta" not in cfg.grids:
        axes_vals = [cfg.grids[a] for a in axes] + [(0.0,)]
        axes = axes + ["theta"]
    else:
        axes_vals = [cfg.grids[a] for a in axes]
    tasks = []
    for i, combo in enumerate(itertools.product(*axes_vals)):
        tasks.append(Task(i, tuple(float(c) for c in combo), dict(zip(axes, combo))))
    return tasks


def _frequency(cfg: ExperimentConfig, n_terms: int = 60):
    from .arithmetic import frequency_from_spec
    return frequency_from_spec(cfg.frequency, n_terms=int(cfg.options.get("cf_terms", n_terms)))


def _sampling(cfg: ExperimentConfig, omega: float):
    from .sampling import from_spec
    return from_spec(cfg.sampling, omega)


def _energy(cfg, f, omega, E):
    from .dynamics import on_spectrum_energy
    if cfg.options.get("on_spectrum", False):
        return on_spectrum_energy(f, omega, float(E), 0.0, int(cfg.options.get("spectrum_box", 1000)))
    return float(E)


def _rng(cfg: ExperimentConfig, task: Task) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, task.index]))


def run_task(cfg: ExperimentConfig, task: Task) -> tuple[list[dict], list[str]]:
    """Compute the rows for one grid point; returns (rows, warnings)."""
    from . import cocycle as C, dynamics as D, sampling as S
    from .arithmetic import check_diophantine

    warnings: list[str] = []
    with threadpool_limits(1):
        kind = cfg.experiment
        opt = cfg.options
        P = task.params
        if kind == "cf":
            freq = _frequency(cfg)
            rep = check_diophantine(freq, float(P["kappa"]))
            viol = set(rep.violations)
            return [{"kappa": P["kappa"], "n": n, "a_n": freq.partial_quotients[n - 1], "q_n": freq.q(n),
                     "violation": n in viol, "verdict": rep.verdict.value} for n in range(1, freq.n_terms + 1)], warnings
        freq = _frequency(cfg) if cfg.frequency else None
        omega = float(freq.omega) if freq else 0.0
        f = _sampling(cfg, omega)
        if kind == "fejer":
            N = int(P["N"])
            approx = S.cesaro_approximant(f, N)
            M = 1 << max(14, int(math.ceil(math.log2(8 * N))))
            grid = np.arange(M) / M
            keep = S._circle_dist(grid, f.jump_set) >= 1.0 / N if f.jump_set else np.ones(M, dtype=bool)
            err = float(np.max(np.abs(approx.on_grid(M) - f(grid))[keep]))
            return [{"N": N, "sup_error": err, "M_bound": approx.sup_bound,
                     "sup_fN": float(np.max(np.abs(approx.on_grid(M))))}], warnings
        if kind == "lyapunov":
            E = _energy(cfg, f, omega, P["E"])
            scheme = C.ThetaScheme("birkhoff", cfg.theta_grid, float(P["theta"])) if "theta" in P \
                else C.ThetaScheme("grid", cfg.theta_grid)
            est = C.lyapunov_estimate(f, omega, E, cfg.grids["k"], scheme)
            row = {"E": E, "theta": P.get("theta", ""), "k_max": est.k_list[-1], "L_hat": est.L_hat,
                   "spread": est.spread, "cross_check": est.cross_check, "flagged": est.flagged}
            if est.flagged:
                warnings.append(f"Lyapunov estimate flagged at E={E}")
            return [row], warnings
        if kind == "phi":
            E = _energy(cfg, f, omega, P["E"])
            ph = C.phi_estimate(f, omega, E, float(P["zeta"]), float(P["delta"]), float(P["T"]),
                                int(opt.get("phi_theta", 256)), int(opt.get("phi_z", 16)))
            return [{"E": E, "T": P["T"], "zeta": P["zeta"], "delta": P["delta"], "phi": ph.value,
                     "log_phi": ph.log_value, "steps": ph.steps}], warnings
        if kind == "growth-site":
            E = _energy(cfg, f, omega, P["E"])
            L = C.lyapunov_estimate(f, omega, E, tuple(opt.get("lyapunov_k", (250, 500, 1000))),
                                    C.ThetaScheme("grid", cfg.theta_grid), cross_check=False).L_hat
            freq_big = _frequency(cfg, 100)
            thetas = cfg.grids.get("theta") or tuple(_rng(cfg, task).random(int(opt.get("random_thetas", 10))))
            rows = []
            for th in thetas:
                try:
                    cert = C.growth_site_search(f, E, float(P["tau"]), int(P["k"]), freq_big, float(th), L)
                    rows.append({"E": E, "tau": P["tau"], "k": P["k"], "theta": float(th), "n": cert.n, "x": cert.x,
                                 "bound": cert.bound, "achieved": cert.achieved, "threshold": cert.threshold,
                                 "found": True})
                except C.NotFound:
                    rows.append({"E": E, "tau": P["tau"], "k": P["k"], "theta": float(th), "found": False})
            return rows, warnings
        if kind == "vset":
            E = _energy(cfg, f, omega, P["E"])
            meas = C.v_set_profile(f, omega, E, int(P["k"]), cfg.grids["level"], max(cfg.theta_grid, 1000))
            return [{"E": E, "k": P["k"], "level": t, "measure": float(m)}
                    for t, m in zip(cfg.grids["level"], meas)], warnings
        if kind == "transport":
            T = cfg.grids["T"]
            p_list = cfg.grids["p"]
            zeta = cfg.grids.get("zeta", (0.2,))
            delta = cfg.grids.get("delta", (0.5,))
            L_box = opt.get("L_box")
            for attempt in range(4):
                try:
                    trace, rep = D.transport_run(f, omega, float(P["theta"]), T, p_list, zeta, delta,
                                                 L_box=L_box, tol=cfg.tolerances["tol"])
                    break
                except D.BoxTooSmall as exc:
                    if L_box is None or attempt == 3:
                        raise
                    warnings.append(f"BoxTooSmall at L_box={L_box}, retrying with {2 * L_box}: {exc}")
                    L_box = 2 * L_box
            rows = []
            for p in p_list:
                for i, t in enumerate(T):
                    rows.append({"theta": P["theta"], "T": t, "p": p,
                                 "moment_avg": rep.moments[p]["avg"][i], "moment_raw": rep.moments[p]["raw"][i],
                                 "beta_plus_hat": rep.beta_plus_hat[p].value,
                                 "beta_minus_hat": rep.beta_minus_hat[p].value,
                                 "P_zeta": rep.P_values[zeta[0]][i], "xi_hat": rep.xi_hat[delta[0]][0].value,
                                 "tail_mass": trace.tail_mass, "unitarity_defect": trace.unitarity_defect})
            return rows, warnings
        if kind == "ids":
            thetas = cfg.grids.get("theta", tuple((np.arange(int(opt.get("ids_thetas", 4))) + 0.5) / int(opt.get("ids_thetas", 4))))
            sd = D.spectral_and_ids(f, omega, thetas, int(opt.get("L_box", 500)), weights=False)
            return [{"E": E, "N": float(sd.ids(E))} for E in cfg.grids["E"]], warnings
        if kind == "kkl":
            T = float(P["T"])
            L_box = int(opt.get("L_box", D.ballistic_half_width(D.abel_horizon(T, cfg.tolerances["tol"]))))
            L1 = float(opt.get("L1", 200.0))
            L2 = float(opt.get("L2", L1))
            rep = D.kkl_check(f, float(P["theta"]), omega, T, D.build_hamiltonian(f, float(P["theta"]), omega, L_box),
                              L1, L2, cfg.tolerances["tol"])
            return [{"T": T, "theta": P["theta"], "L1": L1, "L2": L2, "lhs": rep.lhs, "rhs_mass": rep.rhs_mass,
                     "ratio": "" if rep.ratio is None else rep.ratio}], warnings
        if kind == "dtcheck":
            K = float(opt.get("K", max(4.0, math.ceil(3.0 + f.sup_bound))))
            rng_opt = opt.get("E_range")
            rep = D.dt_integral_check(f, omega, float(P["theta"]), cfg.grids["T"], float(P["zeta"]), K,
                                      tuple(rng_opt) if rng_opt else None)
            return [{"theta": P["theta"], "zeta": P["zeta"], "T": t, "integral": v, "nodes": n, "slope": rep.slope}
                    for t, v, n in zip(rep.T_grid, rep.integrals, rep.nodes)], warnings
    raise ValueError(f"unhandled experiment {cfg.experiment}")


def _task_entry(args):
    cfg, task = args
    try:
        rows, warns = run_task(cfg, task)
        return task.index, "ok", rows, warns, ""
    except Exception as exc:  # noqa: BLE001 - every failure is recorded per task
        return task.index, "failed", [], [], f"{type(exc).__name__}: {exc}"


@dataclass
class RunManifest:
    config_hash: str
    experiment: str
    tasks: list[dict]
    warnings: list[str]
    wall_time: float
    versions: dict
    tolerances: dict

    @property
    def failed(self) -> int:
        return sum(1 for t in self.tasks if t["status"] != "ok")

    def to_dict(self) -> dict:
        return asdict(self)


def _versions() -> dict:
    import numba
    import scipy

    from . import __version__
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "qptl": __version__}


def resolve_workers(cfg: ExperimentConfig, workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("QPTL_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, cfg.workers)


def sweep_grid(cfg: ExperimentConfig, workers: int | None = None, shuffle_seed: int | None = None,
               progress=None) -> tuple[list[dict], RunManifest]:
    """Run every grid point and merge rows in grid order, whatever the execution order or worker count."""
    tasks = build_tasks(cfg)
    if len(tasks) > cfg.budget:
        raise BudgetExceeded(f"{len(tasks)} tasks exceed the budget of {cfg.budget}")
    order = list(tasks)
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(order)
    n_workers = resolve_workers(cfg, workers)
    start = time.perf_counter()
    results = {}
    jobs = [(cfg, t) for t in order]
    if n_workers == 1:
        stream = map(_task_entry, jobs)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=n_workers)
        stream = pool.map(_task_entry, jobs)
    try:
        for done, res in enumerate(stream, 1):
            results[res[0]] = res
            (progress or log.info)(f"[{done}/{len(tasks)}] task {res[0]} {res[1]}")
    finally:
        if pool is not None:
            pool.shutdown()
    h = cfg.hash()
    rows, statuses, warnings = [], [], []
    for t in tasks:
        idx, status, trows, warns, err = results[t.index]
        statuses.append({"index": idx, "key": dict(zip(t.params, t.key)), "status": status, "error": err})
        warnings.extend(warns)
        for r in trows:
            rows.append({"config_hash": h, **r})
    manifest = RunManifest(h, cfg.experiment, statuses, warnings, time.perf_counter() - start, _versions(),
                           dict(cfg.tolerances))
    return rows, manifest


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    cols = list(dict.fromkeys(k for r in rows for k in r)) or ["config_hash"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) if c in r else "" for c in cols])
    return buf.getvalue()


def atomic_write(path: Path, text: str):
    """Write to a temporary file in the same directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


PLOTS = {
    "lyapunov": [("E", "L_hat")],
    "phi": [("T", "phi")],
    "growth-site": [("theta", "x")],
    "vset": [("level", "measure")],
    "transport": [("T", "moment_raw"), ("T", "moment_avg"), ("T", "P_zeta")],
    "ids": [("E", "N")],
    "kkl": [("T", "ratio")],
    "dtcheck": [("T", "integral")],
    "fejer": [("N", "sup_error")],
    "cf": [("n", "q_n")],
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int | None = None) -> tuple[RunManifest, dict]:
    """Sweep, then write CSV, manifest and plot manifest atomically. Returns (manifest, paths)."""
    rows, manifest = sweep_grid(cfg, workers)
    out = Path(out_dir or cfg.output["dir"])
    prefix = cfg.output["prefix"]
    csv_name = f"{prefix}.csv"
    plots = {"data": csv_name, "log_axes": cfg.experiment in ("phi", "transport", "dtcheck", "fejer", "cf"),
             "series": [{"x": x, "y": y} for x, y in PLOTS[cfg.experiment]]}
    paths = {"csv": out / csv_name, "manifest": out / f"{prefix}.manifest.json", "plots": out / f"{prefix}.plots.json"}
    atomic_write(paths["csv"], rows_to_csv(rows))
    atomic_write(paths["plots"], json.dumps(plots, indent=2, sort_keys=True) + "\n")
    atomic_write(paths["manifest"], json.dumps(manifest.to_dict(), indent=2, sort_keys=True, default=str) + "\n")
    return manifest, paths
