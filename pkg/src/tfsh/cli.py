"""Command-line entry point: ``tfsh converge | simulate | kernels | mesh``.

Settings come from four layers, later ones winning: built-in defaults for the
subcommand, ``--preset``, ``--config FILE`` (flat ``key = value`` lines, ``#``
comments) and explicit flags.  Exit codes: 0 success, 1 solver failure,
2 monitor or step-restriction violation in strict mode, 3 bad configuration.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Grid2D, write_csv_matrix, write_pgm
from .kernels import dcc_matrix, l1_matrix
from .mesh import StepRestrictionError, TimeMesh, graded_mesh, max_step_bound, two_part_mesh
from .mms import ERRORS_CSV_COLUMNS, MmsConfig, run_convergence
from .nonlinear import NonConvergenceError, NonFiniteError, NonlinearParams
from .presets import INITIAL_DATA, PRESETS
from .soe import SoeToleranceError
from .stepper import AdaptiveSchedule, EnergyRecord, MemoryBudgetError, MonitorViolation, SimulationSetup, run

log = logging.getLogger("tfsh")

EXIT_OK, EXIT_SOLVER, EXIT_MONITOR, EXIT_CONFIG = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# -- value parsers -----------------------------------------------------------


def _float(key, text):
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"{key}: malformed number {text!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"{key}: value must be finite, got {text!r}")
    return v


def _int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: malformed integer {text!r}") from None


def _list(parse):
    def inner(key, text):
        items = [s.strip() for s in text.split(",") if s.strip()]
        if not items:
            raise ConfigError(f"{key}: empty list {text!r}")
        return [parse(key, s) for s in items]

    return inner


def _bool(key, text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: malformed boolean {text!r}")


def _choice(*options):
    def inner(key, text):
        if text not in options:
            raise ConfigError(f"{key}: {text!r} is not one of {', '.join(options)}")
        return text

    return inner


def _str(key, text):
    return text


def _pairs(key, text):
    out = {}
    for item in (s.strip() for s in text.split(",")):
        if not item:
            continue
        left, sep, right = item.partition(":")
        if not sep:
            raise ConfigError(f"{key}: expected N:M pairs, got {item!r}")
        out[_int(key, left)] = _int(key, right)
    return out


def _formats(key, text):
    items = _list(_choice("csv", "pgm"))(key, text)
    return list(dict.fromkeys(items))


KEYS = {
    "alpha": _float,
    "sigma": _float,
    "gamma": _list(_float),
    "N": _list(_int),
    "T": _float,
    "seed": _int,
    "mesh": _choice("graded", "two-part", "adaptive"),
    "eta": _float,
    "tau_max": _float,
    "tau_min": _float,
    "rate_norm": _choice("rms", "l2"),
    "strict_tau": _bool,
    "g": _float,
    "epsilon": _float,
    "L": _float,
    "M": _int,
    "M_by_N": _pairs,
    "fp_tol": _float,
    "fp_max_iter": _int,
    "out": _str,
    "snapshot_times": _list(_float),
    "formats": _formats,
    "strict": _bool,
    "history": _choice("direct", "soe"),
    "jobs": _int,
    "init": _choice(*INITIAL_DATA),
    "error_norm": _choice("max", "final"),
    "spatial": _choice("continuous", "discrete"),
}

_COMMON = {
    "seed": "0",
    "fp_tol": "1e-12",
    "fp_max_iter": "500",
    "formats": "csv,pgm",
    "strict": "false",
    "strict_tau": "false",
    "jobs": "1",
    "snapshot_times": "",
}

DEFAULTS = {
    "converge": {
        "alpha": "0.5",
        "sigma": "0.3",
        "gamma": "4",
        "N": "20,40,80,160",
        "T": "1",
        "M": "128",
        "M_by_N": "",
        "g": "0.1",
        "epsilon": "0.5",
        "L": repr(2 * math.pi),
        "mesh": "two-part",
        "history": "direct",
        "error_norm": "max",
        "spatial": "continuous",
    },
    "simulate": dict(PRESETS["example2"], history="soe", rate_norm="rms", eta="10", N="", gamma="3", sigma=""),
    "kernels": {"alpha": "0.5", "mesh": "graded", "gamma": "1", "N": "8", "T": "1"},
    "mesh": {"mesh": "graded", "gamma": "1", "N": "8", "T": "1", "alpha": "0.5"},
}


# -- configuration -------------------------------------------------------------


def read_config_file(path):
    """``{key: raw text}`` from a flat ``key = value`` file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {str(path)!r}: {exc.strerror}") from None
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
        if key == "preset":
            values[key] = value.strip()
            continue
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values, text


@dataclass
class RunConfig:
    command: str
    values: dict
    sources: dict = field(default_factory=dict)  # key -> "default" | "preset" | "file" | "flag"
    file_text: str = ""

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def single(self, key):
        v = self.values[key]
        if v is None:
            return None
        if len(v) != 1:
            raise ConfigError(f"{key}: {self.command} takes a single value, got {v}")
        return v[0]

    def require(self, key, why):
        if self.values.get(key) is None:
            raise ConfigError(f"missing required key {key!r} ({why})")
        return self.values[key]

    def echo(self):
        """Resolved settings as config-file lines; the file replays the run."""
        lines = []
        for key in KEYS:
            if key not in self.values:
                continue
            lines.append(f"{key} = {_render(self.values[key])}")
        return lines


def _render(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip form
    if isinstance(v, dict):
        return ",".join(f"{a}:{b}" for a, b in v.items())
    if isinstance(v, (list, tuple)):
        return ",".join(_render(x) for x in v)
    return str(v)


def _check(cfg: RunConfig):
    v = cfg.values

    def need(key, ok, msg):
        if key in v and v[key] is not None and not ok(v[key]):
            raise ConfigError(f"{key} {msg}, got {_render(v[key])}")

    need("alpha", lambda a: 0 < a < 1, "must lie in (0,1)")
    need("sigma", lambda s: s > 0, "must be positive")
    need("gamma", lambda gs: all(x >= 1 for x in gs), "must be >= 1")
    need("N", lambda ns: all(n >= 1 for n in ns), "must be positive")
    need("T", lambda t: t > 0, "must be positive")
    need("seed", lambda s: 0 <= s < 2**64, "must be a 64-bit unsigned integer")
    need("eta", lambda e: e >= 0, "must be non-negative")
    need("tau_max", lambda t: t > 0, "must be positive")
    need("tau_min", lambda t: t > 0, "must be positive")
    need("g", lambda g: g >= 0, "must be non-negative")
    need("epsilon", lambda e: e > 0, "must be positive")
    need("L", lambda L: L > 0, "must be positive")
    need("M", lambda M: M >= 4, "must be at least 4")
    need("M_by_N", lambda d: all(m >= 4 for m in d.values()), "resolutions must be at least 4")
    need("fp_tol", lambda t: t > 0, "must be positive")
    need("fp_max_iter", lambda n: n >= 1, "must be at least 1")
    need("jobs", lambda j: j >= 1, "must be at least 1")
    need("snapshot_times", lambda ts: all(t >= 0 for t in ts), "must be non-negative")
    if v.get("tau_min") is not None and v.get("tau_max") is not None and v["tau_min"] > v["tau_max"]:
        raise ConfigError(f"tau_min ({v['tau_min']:g}) must not exceed tau_max ({v['tau_max']:g})")
    if "N" in v and v["N"] is not None and any(b <= a for a, b in zip(v["N"], v["N"][1:])):
        raise ConfigError(f"N must be strictly increasing, got {_render(v['N'])}")


def resolve(command, flags: dict, preset=None, config_path=None) -> RunConfig:
    raw, sources = {}, {}
    for k, text in DEFAULTS[command].items():
        raw[k], sources[k] = text, "default"
    for k, text in _COMMON.items():
        raw.setdefault(k, text)
        sources.setdefault(k, "default")
    file_values, file_text = ({}, "")
    if config_path:
        file_values, file_text = read_config_file(config_path)
    preset = preset or file_values.pop("preset", None)
    file_values.pop("preset", None)
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        for k, text in PRESETS[preset].items():
            raw[k], sources[k] = text, "preset"
    for k, text in file_values.items():
        raw[k], sources[k] = text, "file"
    for k, text in flags.items():
        if text is not None:
            raw[k], sources[k] = text, "flag"
    raw.setdefault("out", os.environ.get("TFSH_OUT_DIR", "tfsh_out"))
    sources.setdefault("out", "default")

    values = {}
    for k, text in raw.items():
        if k not in KEYS:
            raise ConfigError(f"unknown key {k!r}")
        text = str(text).strip()
        if text == "" and k not in ("snapshot_times", "M_by_N"):
            values[k] = None
        elif text == "":
            values[k] = [] if k == "snapshot_times" else {}
        else:
            values[k] = KEYS[k](k, text)
    cfg = RunConfig(command, values, sources, file_text)
    _check(cfg)
    return cfg


# -- outputs -------------------------------------------------------------------


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_sidecar(path, cfg: RunConfig, extra: dict):
    lines = [f"# tfsh {cfg.command}: resolved settings (usable as --config)"]
    lines += cfg.echo()
    lines.append("")
    lines.append("# run metadata")
    for k, v in extra.items():
        lines.append(f"# {k} = {_render(v)}")
    if cfg.file_text:
        lines.append("")
        lines.append("# config file as given")
        lines += ["# | " + line for line in cfg.file_text.splitlines()]
    Path(path).write_text("\n".join(lines) + "\n")


def _outdir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_mesh(cfg: RunConfig) -> TimeMesh:
    kind = cfg.mesh
    if kind == "adaptive":
        raise ConfigError("mesh = adaptive has no fixed nodes; adaptive meshes only exist after a simulate run")
    N = cfg.single("N")
    if N is None:
        raise ConfigError(f"missing required key 'N' (needed by mesh = {kind})")
    gamma = cfg.single("gamma")
    try:
        if kind == "graded":
            return graded_mesh(cfg.T, N, gamma)
        return two_part_mesh(cfg.T, N, gamma, cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- subcommands ---------------------------------------------------------------


def cmd_mesh(cfg: RunConfig) -> int:
    mesh = build_mesh(cfg)
    out = _outdir(cfg)
    write_rows(out / "mesh.csv", ["k", "t_k", "tau_k", "r_k"], mesh.to_csv_rows())
    write_sidecar(out / "run.txt", cfg, {"levels": mesh.N, "tau_max_observed": mesh.tau_max, "r_star": mesh.r_star})
    print(f"wrote {out / 'mesh.csv'} ({mesh.N} intervals, max step {mesh.tau_max:.6g})")
    return EXIT_OK


def cmd_kernels(cfg: RunConfig) -> int:
    mesh = build_mesh(cfg)
    A = l1_matrix(mesh, cfg.alpha)
    P = dcc_matrix(A)
    out = _outdir(cfg)

    def rows():
        for n in range(1, mesh.N + 1):
            for k in range(1, n + 1):
                # a_{n-k}^{(n)} and p_{n-k}^{(n)}
                yield n, k, A[n - 1, k - 1], P[n - 1, k - 1]

    write_rows(out / "kernels.csv", ["n", "k", "a", "p"], rows())
    write_sidecar(out / "run.txt", cfg, {"levels": mesh.N})
    print(f"wrote {out / 'kernels.csv'} ({mesh.N} levels)")
    return EXIT_OK


def cmd_converge(cfg: RunConfig) -> int:
    if cfg.mesh == "adaptive":
        raise ConfigError("converge needs a fixed mesh: mesh = graded or two-part")
    out = _outdir(cfg)
    start = time.perf_counter()
    rows = []
    for gamma in cfg.gamma:
        try:
            mms = MmsConfig(
                alpha=cfg.alpha,
                sigma=cfg.sigma,
                gamma=gamma,
                N_list=tuple(cfg.N),
                M=cfg.M,
                g=cfg.g,
                epsilon=cfg.epsilon,
                T=cfg.T,
                L=cfg.L,
                seed=cfg.seed,
                fp_tol=cfg.fp_tol,
                fp_max_iter=cfg.fp_max_iter,
                M_by_N=dict(cfg.M_by_N),
                spatial=cfg.spatial,
                error_norm=cfg.error_norm,
                mesh_kind=cfg.mesh,
            )
            for N in mms.N_list:
                mms.time_mesh(N)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        table = run_convergence(mms, jobs=cfg.jobs)
        rows.extend(table)
        print(f"alpha={cfg.alpha:g} sigma={cfg.sigma:g} gamma={gamma:g}")
        print(f"  {'N':>5} {'M':>4} {'tau_max':>11} {'e_N':>11} {'order':>7} {'order_g':>7}")
        for r in table:
            print(
                f"  {r['N']:5d} {r['M']:4d} {r['tau_max']:11.4e} {r['e_N']:11.4e} "
                f"{r['order_pairwise']:7.3f} {r['order_graded']:7.3f}"
            )
    write_rows(out / "errors.csv", ERRORS_CSV_COLUMNS, ([r[c] for c in ERRORS_CSV_COLUMNS] for r in rows))
    tau_star = max_step_bound(cfg.alpha, cfg.g, cfg.epsilon)
    write_sidecar(
        out / "run.txt",
        cfg,
        {"seed": cfg.seed, "tau_star": tau_star, "wall_time_s": time.perf_counter() - start, "rows": len(rows)},
    )
    return EXIT_OK


def _schedule(cfg: RunConfig):
    if cfg.mesh == "adaptive":
        for key in ("eta", "tau_max", "tau_min"):
            cfg.require(key, "needed by mesh = adaptive")
        return AdaptiveSchedule(cfg.T, cfg.eta, cfg.tau_max, cfg.tau_min)
    return build_mesh(cfg)


def _tag(t):
    return f"{t:.17g}".replace(".", "p")


def cmd_simulate(cfg: RunConfig) -> int:
    grid = Grid2D(cfg.L, cfg.M)
    params = NonlinearParams(cfg.g, cfg.epsilon, cfg.fp_tol, cfg.fp_max_iter)
    schedule = _schedule(cfg)
    u0 = INITIAL_DATA[cfg.init](grid)
    setup = SimulationSetup(
        grid=grid,
        params=params,
        alpha=cfg.alpha,
        u0=u0,
        schedule=schedule,
        snapshot_times=cfg.snapshot_times,
        history=cfg.history,
        rate_norm=cfg.rate_norm,
        strict=cfg.strict,
        strict_tau=cfg.strict_tau,
    )
    out = _outdir(cfg)
    tau_star = max_step_bound(cfg.alpha, cfg.g, cfg.epsilon)
    try:
        res = run(setup)
    except Exception as exc:
        write_sidecar(out / "run.txt", cfg, {"seed": cfg.seed, "tau_star": tau_star, "status": f"failed: {exc}"})
        raise
    write_rows(out / "energy.csv", EnergyRecord.FIELDS, (r.as_row() for r in res.energy_log))
    write_rows(out / "mesh.csv", ["k", "t_k", "tau_k", "r_k"], res.mesh.to_csv_rows())
    snaps = dict(res.snapshots)
    snaps["final"] = (res.mesh.T, res.u)
    written = []
    for target, (t, u) in snaps.items():
        stem = "u_final" if target == "final" else f"u_t{_tag(target)}"
        if "csv" in cfg.formats:
            write_csv_matrix(out / f"{stem}.csv", u)
        if "pgm" in cfg.formats:
            write_pgm(out / f"{stem}.pgm", u)
        written.append(f"{stem}@{t:.17g}")
    extra = {
        "seed": cfg.seed,
        "tau_star": tau_star,
        "levels": res.levels,
        "tau_max_observed": res.mesh.tau_max,
        "monitor_violations": len(res.violations),
        "history_error_bound": res.soe_max_bound,
        "snapshots": written,
        "wall_time_s": res.wall_time,
        "status": "ok",
    }
    write_sidecar(out / "run.txt", cfg, extra)
    last = res.energy_log[-1]
    print(f"{res.levels} levels to t={last.t:.6g}: E={last.E:.10g} E_mod={last.E_mod:.10g} ({res.wall_time:.1f}s)")
    if res.violations:
        print(f"{len(res.violations)} monitor warnings; first: {res.violations[0]}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"converge": cmd_converge, "simulate": cmd_simulate, "kernels": cmd_kernels, "mesh": cmd_mesh}


# -- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


FLAG_HELP = {
    "alpha": "fractional order in (0,1)",
    "sigma": "regularity exponent of the manufactured solution",
    "gamma": "grading parameter (converge: comma list)",
    "N": "interval count (converge: comma list, e.g. 20,40,80,160)",
    "T": "final time",
    "seed": "64-bit seed for the random mesh segment",
    "mesh": "graded | two-part | adaptive",
    "eta": "adaptive controller regularization",
    "tau_max": "largest adaptive step",
    "tau_min": "smallest adaptive step",
    "rate_norm": "controller norm of the solution rate: rms (divided by sqrt(area)) or l2",
    "g": "coefficient of the cubic term",
    "epsilon": "quadratic well depth",
    "L": "domain edge length",
    "M": "grid intervals per direction",
    "M_by_N": "per-N resolution overrides for converge, e.g. 160:256",
    "fp_tol": "fixed-point increment tolerance",
    "fp_max_iter": "fixed-point iteration cap",
    "out": "output directory (default $TFSH_OUT_DIR or ./tfsh_out)",
    "snapshot_times": "comma list of snapshot times",
    "formats": "snapshot formats: csv, pgm or both",
    "history": "history convolution: direct or soe (exponential sum)",
    "jobs": "parallel N-cells for converge",
    "init": "initial data for simulate",
    "error_norm": "converge error: max over levels or final level",
    "spatial": "converge forcing: continuous or discrete operators",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tfsh", description="Variable-step L1 solver for the time-fractional Swift-Hohenberg equation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "converge": "manufactured-solution order study, writes errors.csv",
        "simulate": "pattern-formation run, writes energy.csv, mesh.csv and snapshots",
        "kernels": "dump L1 and complementary kernels as n,k,a,p",
        "mesh": "dump a time mesh as k,t_k,tau_k,r_k",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="flat key = value file")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("-v", "--verbose", action="store_true")
        for key, text in FLAG_HELP.items():
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, default=None, help=text)
        p.add_argument("--strict", dest="strict", action="store_const", const="true", default=None,
                       help="monitor violations abort the run (exit 2)")
        p.add_argument("--strict-tau", dest="strict_tau", action="store_const", const="true", default=None,
                       help="steps above tau* are errors; adaptive steps are clamped to tau*")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    flags = {k: getattr(args, k) for k in list(FLAG_HELP) + ["strict", "strict_tau"]}
    try:
        cfg = resolve(args.command, flags, preset=args.preset, config_path=args.config)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"tfsh {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MonitorViolation, StepRestrictionError) as exc:
        print(f"tfsh {args.command}: strict check failed: {exc}", file=sys.stderr)
        return EXIT_MONITOR
    except (NonConvergenceError, NonFiniteError, SoeToleranceError, MemoryBudgetError) as exc:
        print(f"tfsh {args.command}: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
