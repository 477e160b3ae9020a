"""Config-driven command line runner.

Usage::

    rabibath recipe fig5-desk -o fig5.yaml
    rabibath quench fig5.yaml --set quench.g_values=[0.55]
    rabibath check

Every run writes its CSV files plus ``manifest.json`` into the output
directory.  The manifest is written first with ``status: running`` and
rewritten at the end, so an interrupted run is never mistaken for a finished
one.

Exit codes: 0 success, 1 failed checks or runtime error, 2 invalid
configuration, 3 flagged non-convergence (suppressed by
``--allow-unconverged``).
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import datetime as _dt
import json
import logging
import os
import platform
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy
import yaml

from . import __version__
from .dmrg import DmrgConfig
from .experiments import (
    PROFILES,
    ConvergenceError,
    QuenchConfig,
    equilibrium_scan,
    first_peak,
    quench_run,
    relaxation_run,
    write_scan,
)
from .io import atomic_write_text, write_csv, write_json
from .model import ModelParams
from .tdvp import TdvpConfig

log = logging.getLogger("rabibath")

PROTOCOLS = ("scan", "quench", "wlmc", "relax", "check")
WORKERS_ENV = "RABIBATH_WORKERS"

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_UNCONVERGED = 0, 1, 2, 3


class ConfigError(ValueError):
    """The configuration does not satisfy the schema."""


# -- configuration ------------------------------------------------------------------

def load_schema() -> dict:
    return json.loads(resources.files("rabibath").joinpath("schema/config.schema.json").read_text())


def validate(cfg) -> None:
    """Raise :class:`ConfigError` listing every violation with its field path."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>: configuration must be a mapping")
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = ".".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{where}: {_describe(e)}")
        raise ConfigError("\n".join(lines))


def _describe(err) -> str:
    if err.validator == "not" and err.validator_value.get("anyOf"):
        return "exactly one protocol section may be present"
    return err.message


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads YAML 1.2 floats such as ``1e-3`` as numbers."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)?(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)


def _load_yaml(text: str):
    return yaml.load(text, Loader=_Loader)


def _parse_value(text: str):
    return _load_yaml(text)


def apply_override(cfg: dict, assignment: str) -> None:
    """``a.b=value`` sets ``cfg['a']['b']``; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key.path=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {assignment!r}: {p} is not a section")
    node[parts[-1]] = _parse_value(text)


def read_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc.strerror}") from exc
    try:
        cfg = _load_yaml(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<file>: not valid YAML: {exc}") from exc
    return {} if cfg is None else cfg


def grid(spec) -> list:
    if isinstance(spec, dict):
        return [float(x) for x in np.linspace(spec["start"], spec["stop"], spec["num"])]
    return [float(x) for x in spec]


def resolve(cfg: dict) -> dict:
    """Fill defaults: profile sizes for model/dmrg/tdvp, then the user's sections on top."""
    out = copy.deepcopy(cfg)
    out.setdefault("profile", "desk")
    out.setdefault("seed", 0)
    out.setdefault("output", "rabibath-out")
    out.setdefault("workers", 1)
    out.setdefault("allow_unconverged", False)
    out.setdefault("gnuplot", False)
    prof = PROFILES[out["profile"]]
    model = {f.name: f.default for f in dataclasses.fields(ModelParams)}
    model.update(prof["model"])
    model.update(out.get("model", {}))
    out["model"] = model
    dmrg = dataclasses.asdict(DmrgConfig(max_bond=prof["max_bond"]))
    dmrg.update(out.get("dmrg", {}))
    dmrg["noise_schedule"] = list(dmrg["noise_schedule"])
    out["dmrg"] = dmrg
    tdvp = dataclasses.asdict(TdvpConfig(max_bond=prof["max_bond"], t_final=prof["t_final"], dt=prof["dt"],
                                         observe_every=prof["observe_every"]))
    tdvp.update(out.get("tdvp", {}))
    out["tdvp"] = tdvp
    if out["protocol"] == "check":
        out.setdefault("check", {})
    return out


def _model(cfg, g=None) -> ModelParams:
    m = dict(cfg["model"])
    if g is not None:
        m["g"] = g
    return ModelParams(**m)


def _dmrg(cfg) -> DmrgConfig:
    d = dict(cfg["dmrg"])
    d["noise_schedule"] = tuple(d["noise_schedule"])
    return DmrgConfig(**d)


def _tdvp(cfg) -> TdvpConfig:
    return TdvpConfig(**cfg["tdvp"])


# -- work units (module level so they pickle into worker processes) -------------------

def _quench_unit(cfg: dict, g: float) -> dict:
    sec = cfg["quench"]
    qc = QuenchConfig(model=_model(cfg, g), tdvp=_tdvp(cfg), dmrg=_dmrg(cfg), rate_n=sec.get("rate_n"),
                      g_initial=sec.get("g_initial", 0.0), bare_vacuum=sec.get("bare_vacuum", False),
                      allow_unconverged=cfg["allow_unconverged"])
    try:
        ts = quench_run(qc)
    except ConvergenceError as exc:
        return {"g": g, "error": str(exc), "unconverged": True}
    t_peak, lam_peak = first_peak(ts)
    return {"g": g, "series": ts, "summary": {"g": g, "first_peak_t": t_peak, "first_peak_lambda": lam_peak,
                                              "min_L": float(np.min(ts["L"])), "min_F_qub": float(np.min(ts["F_qub"])),
                                              "max_discarded": float(np.max(ts["discarded"])),
                                              "wall_time": ts.meta["wall_time"]}}


def _relax_unit(cfg: dict, g: float) -> dict:
    sec = cfg["relax"]
    try:
        ts = relaxation_run(_model(cfg, g), sec.get("epsilon", 1e-3), _tdvp(cfg), _dmrg(cfg),
                            perturbation=sec.get("perturbation", "linear"),
                            allow_unconverged=cfg["allow_unconverged"])
    except ConvergenceError as exc:
        return {"g": g, "error": str(exc), "unconverged": True}
    return {"g": g, "series": ts}


def _point_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _wlmc_unit(cfg: dict, g: float, beta: float, index: int):
    from .wlmc import WlmcConfig, run

    m = cfg["model"]
    sec = {k: v for k, v in cfg["wlmc"].items() if k not in ("g_values", "beta")}
    wc = WlmcConfig(beta=beta, g=g, j_coupling=m["j_coupling"], delta=m["delta"], omega0=m["omega0"],
                    alpha=m["alpha"], omega_c=m["omega_c"], seed=_point_seed(cfg["seed"], index), **sec)
    return run(wc)


def _map(func, args: list, workers: int) -> list:
    if workers <= 1 or len(args) <= 1:
        return [func(*a) for a in args]
    with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
        futures = [pool.submit(func, *a) for a in args]
        return [f.result() for f in futures]


# -- protocols ----------------------------------------------------------------------

def _g_tag(g: float) -> str:
    return f"{g:.4f}".rstrip("0").rstrip(".")


def run_scan(cfg, out: Path, manifest: dict) -> int:
    sec = cfg["scan"]
    points = equilibrium_scan(grid(sec["g_grid"]), _model(cfg), _dmrg(cfg), sec.get("warm_start", True),
                              progress=lambda p: log.info("scan g=%g E=%.10g S_q=%.4f", p.g, p.energy, p.S_q))
    manifest["artifacts"].append(str(write_scan(points, out / "scan.csv")))
    bad = [p.g for p in points if not p.converged]
    manifest["flags"]["unconverged_g"] = bad
    if cfg["gnuplot"]:
        _gnuplot(out / "scan.gp", "scan.csv", "g", ["S_q", "C_q", "H_J"])
    return EXIT_UNCONVERGED if bad and not cfg["allow_unconverged"] else EXIT_OK


def _series_protocol(cfg, out: Path, manifest: dict, unit, stem: str, columns) -> int:
    gs = grid(cfg[cfg["protocol"]]["g_values"])
    results = _map(unit, [(cfg, g) for g in gs], cfg["workers"])
    bad, summaries = [], []
    for r in results:
        if "error" in r:
            bad.append(r["g"])
            log.error("g=%g: %s", r["g"], r["error"])
            continue
        name = f"{stem}_g{_g_tag(r['g'])}.csv"
        manifest["artifacts"].append(str(r["series"].to_csv(out / name)))
        if "summary" in r:
            summaries.append(r["summary"])
            manifest["wall_times"][name] = r["summary"]["wall_time"]
    if summaries:
        keys = [k for k in summaries[0] if k != "wall_time"]
        manifest["artifacts"].append(str(write_csv(out / f"{stem}_summary.csv", keys,
                                                   ([s[k] for k in keys] for s in summaries))))
    manifest["flags"]["unconverged_g"] = bad
    if cfg["gnuplot"]:
        for g in gs:
            if g not in bad:
                _gnuplot(out / f"{stem}_g{_g_tag(g)}.gp", f"{stem}_g{_g_tag(g)}.csv", "t", columns)
    return EXIT_UNCONVERGED if bad and not cfg["allow_unconverged"] else EXIT_OK


def run_quench(cfg, out: Path, manifest: dict) -> int:
    return _series_protocol(cfg, out, manifest, _quench_unit, "quench", ["L", "lambda", "S_q", "C_q", "F_qub"])


def run_relax(cfg, out: Path, manifest: dict) -> int:
    return _series_protocol(cfg, out, manifest, _relax_unit, "relax", ["Sigma_x"])


def run_wlmc(cfg, out: Path, manifest: dict) -> int:
    sec = cfg["wlmc"]
    betas = sec["beta"] if isinstance(sec["beta"], list) else [sec["beta"]]
    jobs = [(cfg, g, float(b), i) for i, (b, g) in enumerate((b, g) for b in betas for g in grid(sec["g_values"]))]
    results = _map(_wlmc_unit, jobs, cfg["workers"])
    rows, low = [], []
    names = ["M2", "M2_corr", "abs_m_half", "sz1sz2", "H_J", "H_Delta", "sx_sum"]
    for est in results:
        for path in est.write(out).values():
            manifest["artifacts"].append(str(path))
        manifest["wall_times"][f"wlmc_g{est.g:g}_beta{est.beta:g}"] = est.wall_time
        rows.append([est.g, est.beta] + [x for n in names for x in est.scalars[n][:2]] + [est.low_confidence])
        if est.low_confidence:
            low.append([est.g, est.beta])
    header = ["g", "beta"] + [x for n in names for x in (n, f"{n}_err")] + ["low_confidence"]
    manifest["artifacts"].append(str(write_csv(out / "wlmc_summary.csv", header, rows)))
    manifest["flags"]["low_confidence"] = low
    return EXIT_UNCONVERGED if low and not cfg["allow_unconverged"] else EXIT_OK


def run_check(cfg, out: Path, manifest: dict) -> int:
    from .checks import run_checks

    results = run_checks(cfg["check"].get("suites"), seed=cfg["seed"])
    rows = [(r.name, r.passed, r.wall_time, json.dumps(r.detail, sort_keys=True, default=float)) for r in results]
    manifest["artifacts"].append(str(write_csv(out / "checks.csv", ["suite", "passed", "wall_time", "detail"], rows)))
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} {json.dumps(r.detail, default=float)}")
    manifest["flags"]["failed_checks"] = [r.name for r in results if not r.passed]
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


RUNNERS = {"scan": run_scan, "quench": run_quench, "wlmc": run_wlmc, "relax": run_relax, "check": run_check}


def _gnuplot(path: Path, data: str, x: str, columns) -> None:
    lines = [f"# plots {data}", "set datafile separator ','", "set key autotitle columnhead",
             f"set xlabel '{x}'"]
    plots = ", ".join(f"'{data}' using '{x}':'{c}' with lines" for c in columns)
    lines.append(f"plot {plots}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _versions() -> dict:
    return {"rabibath": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def execute(cfg: dict) -> int:
    """Run a validated, resolved configuration and write its manifest."""
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"status": "running", "protocol": cfg["protocol"], "seed": cfg["seed"], "config": cfg,
                "versions": _versions(), "started": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                "artifacts": [], "wall_times": {}, "flags": {}}
    write_json(out / "manifest.json", manifest)
    start = time.perf_counter()
    try:
        code = RUNNERS[cfg["protocol"]](cfg, out, manifest)
    except Exception as exc:
        manifest.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        manifest["wall_times"]["total"] = time.perf_counter() - start
        write_json(out / "manifest.json", manifest)
        raise
    manifest["status"] = {EXIT_OK: "complete", EXIT_UNCONVERGED: "unconverged"}.get(code, "failed")
    manifest["finished"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    manifest["wall_times"]["total"] = time.perf_counter() - start
    write_json(out / "manifest.json", manifest)
    return code


# -- recipes ------------------------------------------------------------------------

_J0 = {"j_coupling": 0.0}
_ECHO_G = [0.35, 0.40, 0.45, 0.50, 0.55]
_ECHO_G_J0 = [0.40, 0.45, 0.50, 0.55]

_RECIPES = {
    "fig2": ("scan", {"scan": {"g_grid": {"start": 0.0, "stop": 0.9, "num": 19}}}),
    "fig2-wlmc": ("wlmc", {"wlmc": {"g_values": {"start": 0.0, "stop": 0.9, "num": 19}, "beta": [100.0],
                                    "n_sweeps": 4000, "n_therm": 500}}),
    "fig3": ("wlmc", {"wlmc": {"g_values": [0.21, 0.66], "beta": 100.0, "n_sweeps": 4000, "n_therm": 500}}),
    "fig4": ("quench", {"quench": {"g_values": _ECHO_G}}),
    "fig5": ("quench", {"quench": {"g_values": _ECHO_G}}),
    "figS1": ("scan", {"model": _J0, "scan": {"g_grid": {"start": 0.0, "stop": 0.9, "num": 19}}}),
    "figS2": ("quench", {"model": _J0, "quench": {"g_values": _ECHO_G_J0}}),
    "figS3": ("quench", {"model": _J0, "quench": {"g_values": _ECHO_G_J0 + [0.60]}}),
    "figS4": ("relax", {"model": _J0, "relax": {"g_values": [0.06, 0.2, 0.35, 0.45, 0.55], "epsilon": 1e-3,
                                                "perturbation": "linear"}}),
    "figS5": ("quench", {"quench": {"g_values": _ECHO_G}}),
}

_PAPER_WLMC = {"beta": [100.0, 1000.0], "n_sweeps": 20000, "n_chains": 4}


def recipe_names() -> list:
    return sorted(f"{base}-{prof}" for base in _RECIPES for prof in PROFILES)


def figure_recipe(name: str) -> dict:
    """Configuration reproducing the data of one figure at a profile, e.g. ``fig5-desk``."""
    base, _, prof = name.rpartition("-")
    if base not in _RECIPES or prof not in PROFILES:
        raise KeyError(f"unknown recipe {name!r}; choose from {recipe_names()}")
    protocol, body = _RECIPES[base]
    cfg = {"protocol": protocol, "profile": prof, "seed": 0, "output": f"out/{name}",
           "description": f"data for {base} at the {prof} profile"}
    cfg.update(copy.deepcopy(body))
    if protocol == "wlmc" and prof == "paper":
        cfg["wlmc"].update(_PAPER_WLMC)
    validate(cfg)
    return cfg


# -- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rabibath", description="Dissipative two-qubit Rabi model experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in PROTOCOLS + ("run",):
        p = sub.add_parser(name, help=f"run a {name} configuration" if name != "run" else
                           "run a configuration, protocol taken from the file")
        p.add_argument("config", nargs="?" if name == "check" else None, help="YAML configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. --set model.g=0.5")
        p.add_argument("-o", "--output", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--profile", choices=sorted(PROFILES))
        p.add_argument("--workers", type=int, help=f"worker processes (env {WORKERS_ENV} takes precedence)")
        p.add_argument("--allow-unconverged", action="store_true", default=None,
                       help="exit 0 even if some points are flagged as not converged")
        p.add_argument("--rate-n", type=float, help="divisor N of the rate function (quench)")
        p.add_argument("--gnuplot", action="store_true", default=None, help="also write gnuplot scripts")
    r = sub.add_parser("recipe", help="emit the configuration for a figure")
    r.add_argument("name", nargs="?", help="recipe name; omit to list them")
    r.add_argument("-o", "--output", help="write to this file instead of stdout")
    return parser


def _config_from_args(args) -> dict:
    if args.config is None:
        cfg = {"protocol": "check"}
    else:
        cfg = read_config(args.config)
        if not isinstance(cfg, dict):
            raise ConfigError("<root>: configuration must be a mapping")
    for assignment in args.overrides:
        apply_override(cfg, assignment)
    flags = {"output": args.output, "seed": args.seed, "profile": args.profile, "workers": args.workers,
             "allow_unconverged": args.allow_unconverged, "gnuplot": args.gnuplot}
    cfg.update({k: v for k, v in flags.items() if v is not None})
    if args.rate_n is not None:
        cfg.setdefault("quench", {})["rate_n"] = args.rate_n
    env_workers = os.environ.get(WORKERS_ENV)
    if env_workers:
        try:
            cfg["workers"] = int(env_workers)
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV}: expected an integer, got {env_workers!r}") from exc
    validate(cfg)
    if args.command != "run" and cfg["protocol"] != args.command:
        raise ConfigError(f"protocol: file declares {cfg['protocol']!r} but the {args.command!r} command was used")
    return resolve(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "recipe":
        if not args.name:
            print("\n".join(recipe_names()))
            return EXIT_OK
        try:
            text = yaml.safe_dump(figure_recipe(args.name), sort_keys=False)
        except KeyError as exc:
            print(f"error: {exc.args[0]}", file=sys.stderr)
            return EXIT_CONFIG
        if args.output:
            atomic_write_text(args.output, text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    try:
        cfg = _config_from_args(args)
    except ConfigError as exc:
        print(f"invalid configuration:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return execute(cfg)
    except Exception as exc:  # noqa: BLE001 - reported, manifest already marked failed
        log.error("run failed: %s: %s", type(exc).__name__, exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
