"""Command-line front end.

Config files are INI key-value text::

    [parameters]
    F = 100
    M = 20
    k_f = 5
    k_m = 10
    rho_T = 40        ; integer or "inf"
    lambda = 0.5
    zeta = 8          ; optional, default 64 e^4
    seed = 1

    [run]
    mode = community  ; or dilution
    trials = 200
    stage2 = on
    c_in = 3
    t1_cap = 10000000

    [dilution]
    n = 512
    k = 4
    alpha = 0.5

    [sweep]
    variable = rho_T
    values = 1, 2, 4, 8

Keys are unique across sections, so ``--set key=value`` overrides any of
them. ``verify`` reads a grid file instead (see ``grids.ini``).

Exit codes: 0 success, 1 a check failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, replace

from . import __version__, bounds, oracles
from .core_model import ParameterError, Parameters
from .stage1_design import T1_CAP_DEFAULT, choose_dilution_params, choose_stage1_params
from .stage2 import C_IN_DEFAULT

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2

SECTIONS = {
    "parameters": {"F", "M", "k_f", "k_m", "rho_T", "lambda", "zeta", "seed"},
    "run": {"mode", "trials", "stage2", "c_in", "t1_cap", "threads", "output", "format"},
    "dilution": {"n", "k", "alpha"},
    "sweep": {"variable", "values"},
}
KEY_SECTION = {k: s for s, keys in SECTIONS.items() for k in keys}
SWEEPABLE = {
    "community": ("F", "M", "k_f", "k_m", "rho_T", "lambda", "zeta"),
    "dilution": ("n", "k", "alpha", "rho_T", "lambda", "zeta"),
}
INT_KEYS = {"F", "M", "k_f", "k_m", "seed", "trials", "t1_cap", "threads", "n", "k"}
FLOAT_KEYS = {"lambda", "zeta", "c_in", "alpha"}
TRIAL_FIELDS = ("trial", "T1", "T2", "T", "stage1_exact", "end_to_end_exact",
                "false_positives", "misses", "max_pool_size", "strategy")


class ConfigError(ValueError):
    pass


def _convert(key: str, raw: str):
    raw = raw.strip()
    try:
        if key == "rho_T":
            return math.inf if raw.lower() in ("inf", "infinity", "none") else int(raw)
        if key in INT_KEYS:
            return int(raw)
        if key in FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ConfigError(f"field '{KEY_SECTION.get(key, '?')}.{key}': cannot parse {raw!r}") from None
    if key == "stage2":
        if raw.lower() not in ("on", "off", "true", "false", "yes", "no", "1", "0"):
            raise ConfigError(f"field 'run.stage2': expected on/off, got {raw!r}")
        return raw.lower() in ("on", "true", "yes", "1")
    if key == "values":
        vals = [v.strip() for v in raw.split(",") if v.strip()]
        if not vals:
            raise ConfigError("field 'sweep.values': empty value list")
        return vals
    return raw


def read_config(path: str | None) -> dict:
    """Flat {key: typed value} from an INI file."""
    if path is None:
        return {}
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: key outside any [section]") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{path}: line {lineno}: cannot parse {line.strip()!r}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in cp[section].items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"{path}: unknown field '{section}.{key}'")
            out[key] = _convert(key, raw)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict
    mode: str = "community"
    trials: int = 100
    stage2: bool = True
    sweep: tuple[str, tuple] | None = None
    output: str | None = None
    fmt: str = "json"
    threads: int = 1

    @property
    def seed(self) -> int:
        return self.values.get("seed", 0)

    @property
    def c_in(self) -> float:
        return self.values.get("c_in", C_IN_DEFAULT)

    @property
    def t1_cap(self) -> int:
        return self.values.get("t1_cap", T1_CAP_DEFAULT)

    def parameters(self) -> Parameters:
        v = self.values
        missing = [k for k in ("F", "M", "k_f", "k_m", "rho_T") if k not in v]
        if missing:
            raise ConfigError(f"missing parameters: {', '.join(missing)}")
        try:
            return Parameters(F=v["F"], M=v["M"], k_f=v["k_f"], k_m=v["k_m"], rho_T=v["rho_T"],
                              lam=v.get("lambda", 0.5), zeta_override=v.get("zeta"), seed=self.seed)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None

    def with_value(self, key: str, value) -> "ExperimentConfig":
        return replace(self, values={**self.values, key: value})


def build_config(args, mode: str | None = None) -> ExperimentConfig:
    values = read_config(args.config)
    for item in args.set or ():
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or key not in KEY_SECTION:
            raise ConfigError(f"--set expects KEY=VALUE with a known key (got {item!r})")
        values[key] = _convert(key, raw)
    for key, flag in (("seed", args.seed), ("trials", args.trials), ("zeta", args.zeta),
                      ("threads", args.threads), ("output", args.output), ("format", args.format)):
        if flag is not None:
            values[key] = flag
    if args.no_stage2:
        values["stage2"] = False
    mode = mode or values.get("mode", "community")
    if mode not in SWEEPABLE:
        raise ConfigError(f"field 'run.mode': expected community or dilution, got {mode!r}")
    fmt = values.get("format", "json")
    if fmt not in ("json", "csv"):
        raise ConfigError(f"field 'run.format': expected json or csv, got {fmt!r}")
    sweep = None
    if "variable" in values or "values" in values:
        var = values.get("variable")
        if var not in SWEEPABLE[mode]:
            raise ConfigError(f"field 'sweep.variable': {var!r} is not sweepable in {mode} mode")
        raw = values.get("values")
        if not raw:
            raise ConfigError("field 'sweep.values': empty value list")
        sweep = (var, tuple(_convert(var, r) for r in raw))
    trials = values.get("trials", 100)
    threads = values.get("threads", 1)
    if trials < 0 or threads < 1:
        raise ConfigError("trials must be >= 0 and threads >= 1")
    return ExperimentConfig(values=values, mode=mode, trials=trials,
                            stage2=values.get("stage2", True), sweep=sweep,
                            output=values.get("output"), fmt=fmt, threads=threads)


# ---------------------------------------------------------------- running


def _metadata(cfg: ExperimentConfig, zeta: float) -> dict:
    return {"version": __version__, "seed": cfg.seed, "log_base": "e", "zeta": zeta,
            "c_in": cfg.c_in, "mode": cfg.mode, "trials": cfg.trials}


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _aggregate(results, stage2: bool, rho_T) -> dict:
    if not results:
        return {"trials": 0}
    agg = {
        "T1": results[0].T1,
        "T2_mean": sum(r.T2 for r in results) / len(results),
        "T_mean": sum(r.T for r in results) / len(results),
        "max_pool_size": max(r.max_pool_size for r in results),
        "pool_violations": sum(r.max_pool_size > rho_T for r in results),
        "stage1_error": oracles.summarize(results).as_dict(),
    }
    if stage2:
        agg["end_to_end_error"] = oracles.summarize(results, end_to_end=True).as_dict()
    return agg


def simulate(cfg: ExperimentConfig) -> dict:
    """Run all trials of one configuration; returns the JSON-ready record."""
    v = cfg.values
    if cfg.mode == "dilution":
        missing = [k for k in ("n", "k", "alpha") if k not in v]
        if missing:
            raise ConfigError(f"dilution mode needs {', '.join(missing)}")
        rho_T = v.get("rho_T", math.inf)
        try:
            s1 = choose_dilution_params(v["n"], v["k"], v["alpha"], lam=v.get("lambda", 0.5),
                                        zeta=v.get("zeta"), rho_T=rho_T, t1_cap=cfg.t1_cap)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        params = {"n": v["n"], "k": v["k"], "alpha": v["alpha"], "rho_T": _num(rho_T),
                  "lambda": v.get("lambda", 0.5)}
        bnd = bounds.dilution_order_terms(v["n"], v["k"], v["alpha"])
        bnd["t1_formula"] = s1.t1_formula
        fn = lambda t: oracles.run_dilution_trial(v["n"], v["k"], s1, t, seed=cfg.seed)
        stage2 = False
    else:
        p = cfg.parameters()
        try:
            s1 = choose_stage1_params(p, t1_cap=cfg.t1_cap)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        rho_T = p.rho_T
        params = {"F": p.F, "M": p.M, "k_f": p.k_f, "k_m": p.k_m, "rho_T": _num(p.rho_T),
                  "lambda": p.lam, "n": p.n}
        bnd = bounds.bound_report(p).as_dict()
        stage2 = cfg.stage2
        fn = lambda t: oracles.run_trial(p, s1, t, seed=cfg.seed, stage2=stage2, c_in=cfg.c_in)
    if cfg.trials and not s1.feasible:
        raise ConfigError(f"infeasible: T1 formula {s1.t1_formula:.4g} exceeds t1_cap={cfg.t1_cap}")
    results = oracles.run_trials(fn, cfg.trials, cfg.threads)
    return {
        "metadata": _metadata(cfg, s1.zeta),
        "parameters": params,
        "stage1": s1.as_dict(),
        "bounds": bnd,
        "aggregate": _aggregate(results, stage2, rho_T),
        "trials": [r.as_dict() for r in results],
    }


def _num(x):
    return "inf" if x == math.inf else x


def sweep(cfg: ExperimentConfig) -> dict:
    var, vals = cfg.sweep
    rows, zeta = [], None
    for val in vals:
        _progress(f"sweep {var}={val}")
        rec = simulate(cfg.with_value(var, val))
        zeta = rec["stage1"]["zeta"]
        agg = rec["aggregate"]
        row = {var: _num(val), "T1": rec["stage1"]["T1"], "t1_formula": rec["stage1"]["t1_formula"],
               "rho": rec["stage1"]["rho"], "alpha": rec["stage1"]["alpha"]}
        if cfg.trials:
            err = agg["end_to_end_error" if "end_to_end_error" in agg else "stage1_error"]
            row.update(errors=err["errors"], trials=err["trials"], error_rate=err["rate"],
                       wilson_lo=err["wilson_lo"], wilson_hi=err["wilson_hi"],
                       T_mean=agg["T_mean"])
        b = rec["bounds"]
        if cfg.mode == "community":
            row.update(t1_theorem=b["t1_theorem"], t1_corollary=b["t1_corollary"],
                       T_nC_S=b["baselines"]["T_nC_S"], T_C_S_I=b["baselines"]["T_C_S_I"],
                       first_stage_branch=b["ratios"]["first_stage_branch"])
        else:
            row.update(order_term=b["order_term"], nli_prior_order_term=b["nli_prior_order_term"])
        rows.append(row)
    return {"metadata": {**_metadata(cfg, zeta), "variable": var}, "rows": rows}


# ---------------------------------------------------------------- output


def _csv(rows: list[dict], fields=None) -> str:
    buf = io.StringIO()
    if fields is None:
        fields = list(rows[0]) if rows else []
    w = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def emit(text: str, output: str | None) -> None:
    if output is None or output == "-":
        sys.stdout.write(text)
    else:
        with open(output, "w", newline="") as fh:
            fh.write(text)


def cmd_simulate(cfg: ExperimentConfig) -> int:
    rec = simulate(cfg)
    agg = rec["aggregate"]
    if cfg.fmt == "csv":
        emit(_csv(rec["trials"], list(TRIAL_FIELDS)), cfg.output)
    else:
        emit(_json(rec), cfg.output)
    if cfg.trials:
        err = agg["stage1_error"]
        _progress(f"T1={agg['T1']} stage-1 errors {err['errors']}/{err['trials']}"
                  f" pool violations {agg['pool_violations']}")
    return EXIT_CHECK if agg.get("pool_violations") else EXIT_OK


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if cfg.sweep is None:
        raise ConfigError("sweep needs [sweep] variable and values")
    rec = sweep(cfg)
    if cfg.fmt == "json":
        emit(_json(rec), cfg.output)
    else:
        fields = []
        for row in rec["rows"]:
            fields.extend(k for k in row if k not in fields)
        emit(_csv(rec["rows"], fields), cfg.output)
    return EXIT_OK


def cmd_bounds(cfg: ExperimentConfig) -> int:
    if cfg.mode == "dilution":
        v = cfg.values
        rep = bounds.dilution_order_terms(v["n"], v["k"], v["alpha"])
        flat = rep
    else:
        report = bounds.bound_report(cfg.parameters())
        rep, flat = report.as_dict(), report.flat()
        _progress(f"first-stage ratio branch: Theta({report.ratios['first_stage_branch']})")
    emit(_csv([flat]) if cfg.fmt == "csv" else _json(rep), cfg.output)
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        g = oracles.load_grids(args.config)
    except (OSError, KeyError, ValueError, configparser.Error) as exc:
        raise ConfigError(f"grid file: {exc}") from None
    seed = args.seed if args.seed is not None else g["outcome_equivalence"]["seed"]
    trials = args.trials if args.trials is not None else g["outcome_equivalence"]["trials"]
    reports = []
    for name, run in (
        ("moment_bounds", lambda: oracles.verify_moment_bounds(**g["moment_bounds"])),
        ("exhaustive", lambda: oracles.verify_exhaustive(**g["exhaustive"])),
        ("g_monotone", lambda: oracles.verify_g_monotone(**g["g_monotone"])),
        ("regime_bounds", lambda: oracles.verify_regime_bounds(**g["regime_bounds"])),
        ("outcome_equivalence", lambda: oracles.verify_outcome_equivalence(
            None, trials, seed, g["outcome_equivalence"]["max_tests"])),
        ("score_moments", lambda: oracles.verify_score_moments_mc(**g["score_moments"])),
    ):
        rep = run()
        _progress(rep.summary())
        reports.append(rep)
    emit(oracles.reports_json(reports, include_checks=False) + "\n", args.output)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


# ---------------------------------------------------------------- parser


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--seed", type=int, metavar="U64")
    common.add_argument("--trials", type=int, metavar="N")
    common.add_argument("--threads", type=int, metavar="N")
    common.add_argument("--output", metavar="PATH")
    common.add_argument("--format", choices=("json", "csv"))
    common.add_argument("--zeta", type=float, metavar="REAL")
    common.add_argument("--no-stage2", action="store_true")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key")
    parser = argparse.ArgumentParser(prog="commgt", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("simulate", "simulate the two-stage scheme"),
        ("dilution", "simulate the classical dilution model"),
        ("sweep", "simulate over a list of values of one variable"),
        ("bounds", "evaluate closed-form test counts"),
        ("verify", "run the analytic verification grids"),
    ):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args)
        cfg = build_config(args, "dilution" if args.command == "dilution" else None)
        return {"simulate": cmd_simulate, "dilution": cmd_simulate, "sweep": cmd_sweep,
                "bounds": cmd_bounds}[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
