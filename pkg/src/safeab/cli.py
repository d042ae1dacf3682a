"""Command-line interface: ``safeab design|analyze|srm|simulate``.

Settings resolve as flags > config file > ``SAFEAB_*`` environment
variables > built-in defaults. A config file is TOML; top-level keys apply
to every subcommand and a table named after a subcommand overrides them.

Exit codes: 0 success, 1 data or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
from typing import Dict, List, Optional, Sequence

from . import __version__, classical, experiment_io, safe_prop, safe_t, simlab
from .errors import NotReachableError, SafeABError, SchemaError, ValidationError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

ENV_PREFIX = "SAFEAB_"
OUTPUT_SCHEMA_VERSION = 1
STUDIES = ("peeking", "stopping", "delta-grid", "error-rates")
TEST_NAMES = {"safe-t": "safe_t", "msprt": "msprt", "classical-t": "classical_t"}

DEFAULTS: Dict[str, Dict[str, object]] = {
    "design": {"test": "safe-t", "alpha": 0.05, "beta": 0.2, "delta": None, "sims": 200,
               "seed": 0},
    "analyze": {"tests": "safe-t,msprt,classical-t", "alpha": 0.05, "delta": 0.1,
                "state_dir": None, "bernoulli": False, "epsilon": 0.1},
    "srm": {"theta0": 0.5, "epsilon": 0.01, "alpha": 0.01, "state_dir": None,
            "cumulative": False},
    "simulate": {"study": None, "seed": 0, "sims": None, "alpha": 0.05, "beta": 0.2,
                 "delta": 0.1, "effect": None, "deltas": "0.01,0.02,0.03",
                 "tests": "safe-t,msprt", "peeks": "1,5,20,100", "horizon": 1000,
                 "workers": 1, "test": "classical-t", "gamma2_mode": "frozen"},
}
COMMON_DEFAULTS = {"format": "csv", "output_dir": None, "gnuplot_hints": False}

GNUPLOT_HINTS = {
    "peeking": "plot 'peeking.csv' using 1:4 with linespoints  # peeks vs fp_rate",
    "stopping": "plot 'histogram.csv' using 2:4 with boxes  # bin_lo vs count",
    "delta-grid": "plot 'delta_grid.csv' using 1:5 with points  # delta vs ratio",
    "error-rates": "plot 'error_rates.csv' using 0:2:xtic(1) with boxes  # type_i per test",
    "analyze": "# verdicts.csv: categorical; see agreement.csv for n11 n10 n01 n00 phi",
    "srm": "# srm.csv: categorical; day_difference column in days",
    "design": "# design output has a single row",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("--output-dir", default=None, help="write files here instead of stdout")
    p.add_argument("--gnuplot-hints", action="store_true", default=None,
                   help="print column descriptions for gnuplot to stderr")
    p.add_argument("--config", default=None, help="TOML config file")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="safeab", description="Anytime-valid A/B testing tools.")
    p.add_argument("--version", action="store_true", help="print versions as JSON and exit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    d = sub.add_parser("design", help="sample sizes for a planned experiment")
    d.add_argument("--test", choices=("safe-t", "classical-t"))
    d.add_argument("--alpha", type=float)
    d.add_argument("--beta", type=float)
    d.add_argument("--delta", type=float)
    d.add_argument("--sims", type=int, help="simulations for the safe power horizon (0 skips)")
    d.add_argument("--seed", type=int)
    _add_common(d)

    a = sub.add_parser("analyze", help="replay daily snapshot files")
    a.add_argument("--input", required=True)
    a.add_argument("--tests")
    a.add_argument("--alpha", type=float)
    a.add_argument("--delta", type=float)
    a.add_argument("--state-dir")
    a.add_argument("--bernoulli", action="store_true", default=None,
                   help="also run the strict proportion test on Bernoulli metrics")
    a.add_argument("--epsilon", type=float, help="prior scale for --bernoulli")
    _add_common(a)

    s = sub.add_parser("srm", help="sample ratio mismatch monitoring")
    s.add_argument("--input", required=True)
    s.add_argument("--theta0", type=float, help="intended share of control")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--state-dir")
    s.add_argument("--cumulative", action="store_true", default=None,
                   help="input holds running totals rather than daily counts")
    _add_common(s)

    m = sub.add_parser("simulate", help="Monte Carlo studies")
    m.add_argument("--study", choices=STUDIES)
    m.add_argument("--seed", type=int)
    m.add_argument("--sims", type=int)
    m.add_argument("--alpha", type=float)
    m.add_argument("--beta", type=float)
    m.add_argument("--delta", type=float)
    m.add_argument("--effect", type=float)
    m.add_argument("--deltas", help="comma-separated grid for delta-grid")
    m.add_argument("--tests", help="comma-separated sequential tests")
    m.add_argument("--test", choices=("classical-t", "safe-t"), help="test for peeking")
    m.add_argument("--peeks", help="comma-separated peek counts")
    m.add_argument("--horizon", type=int, help="final n per group for peeking")
    m.add_argument("--workers", "--threads", dest="workers", type=int)
    m.add_argument("--gamma2-mode", choices=("frozen", "running"),
                   help="mSPRT mixing variance: frozen after warmup (default) or recomputed")
    _add_common(m)
    return p


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"invalid config file {path}: {exc}")


def _coerce(value, like):
    if like is None or isinstance(value, type(like)):
        return value
    if isinstance(like, bool):
        return str(value).lower() in ("1", "true", "yes", "on")
    return type(like)(value)


def resolve(args: argparse.Namespace, environ=None) -> dict:
    """Merge flags, config file, environment and defaults for ``args.command``."""
    environ = os.environ if environ is None else environ
    cmd = args.command
    config = _load_config(getattr(args, "config", None) or environ.get(ENV_PREFIX + "CONFIG"))
    section = config.get(cmd, {}) if isinstance(config.get(cmd, {}), dict) else {}
    out = {}
    for key, default in {**COMMON_DEFAULTS, **DEFAULTS[cmd]}.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
            continue
        for source in (section, config):
            if key in source and not isinstance(source[key], dict):
                out[key] = source[key]
                break
        else:
            env = environ.get(ENV_PREFIX + key.upper())
            out[key] = env if env is not None else default
        try:
            out[key] = _coerce(out[key], default)
        except (TypeError, ValueError):
            raise UsageError(f"invalid value for {key}: {out[key]!r}")
    if hasattr(args, "input"):
        out["input"] = args.input
    if out["format"] not in ("csv", "json"):
        raise UsageError("--format must be csv or json")
    return out


def _level(name, v, lo=0.0, hi=1.0):
    if v is None or not (lo < float(v) < hi):
        raise UsageError(f"--{name} must lie in ({lo}, {hi}), got {v}")
    return float(v)


def _positive(name, v):
    if v is None or not float(v) > 0 or not math.isfinite(float(v)):
        raise UsageError(f"--{name} must be a positive number, got {v}")
    return float(v)


def _csv_list(text, cast=str):
    try:
        return [cast(t.strip()) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}")


class Output:
    """Collects named documents and writes them to stdout or an output directory."""

    def __init__(self, cfg: dict, stdout):
        self.cfg = cfg
        self.stdout = stdout
        self.docs: List[tuple] = []

    def csv(self, name: str, rows, columns, header_lines: Sequence[str] = ()):
        buf = io.StringIO()
        buf.write(f"# schema_version={OUTPUT_SCHEMA_VERSION}\n")
        for line in header_lines:
            buf.write(f"# {line}\n")
        simlab.write_csv(rows, columns, buf)
        self.docs.append((name + ".csv", buf.getvalue()))

    def json(self, name: str, obj):
        self.docs.append((name + ".json", simlab.to_json(
            {"schema_version": OUTPUT_SCHEMA_VERSION, **obj}) + "\n"))

    def flush(self):
        out_dir = self.cfg.get("output_dir")
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            for name, text in self.docs:
                with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
        else:
            for i, (_, text) in enumerate(self.docs):
                if i:
                    self.stdout.write("\n")
                self.stdout.write(text)


# -- subcommands --------------------------------------------------------------------

def cmd_design(cfg: dict, out: Output) -> int:
    alpha = _level("alpha", cfg["alpha"])
    beta = _level("beta", cfg["beta"])
    delta = _positive("delta", cfg["delta"])
    nc = classical.fixed_horizon_sample_size(alpha, beta, delta)
    row = {"test": cfg["test"], "alpha": alpha, "beta": beta, "delta": delta, "classical_n": nc,
           "safe_batch_n": "", "power_horizon": "", "sims": 0}
    if cfg["test"] == "safe-t":
        try:
            row["safe_batch_n"] = safe_t.design_batch_n(safe_t.SafeTConfig(delta, alpha))
        except NotReachableError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        if cfg["sims"] > 0:
            study = simlab.stopping_study(delta, delta, alpha, beta, int(cfg["sims"]),
                                          int(cfg["seed"]), tests=("safe_t",))
            row["power_horizon"] = study.summaries["safe_t"].power_quantile_stop
            row["sims"] = int(cfg["sims"])
    columns = ("test", "alpha", "beta", "delta", "classical_n", "safe_batch_n",
               "power_horizon", "sims")
    if cfg["format"] == "json":
        out.json("design", {"design": row})
    else:
        out.csv("design", [row], columns)
    return 0


AGREEMENT_COLUMNS = ("test_a", "test_b", "n11", "n10", "n01", "n00", "phi")


def cmd_analyze(cfg: dict, out: Output) -> int:
    alpha = _level("alpha", cfg["alpha"])
    delta = _positive("delta", cfg["delta"])
    tests = []
    for name in _csv_list(cfg["tests"]):
        if name not in TEST_NAMES:
            raise UsageError(f"unknown test {name!r}; choose from {', '.join(TEST_NAMES)}")
        tests.append(TEST_NAMES[name])
    if not tests:
        raise UsageError("--tests is empty")
    with open(cfg["input"], encoding="utf-8", newline="") as fh:
        records = experiment_io.parse_snapshots(fh)
    groups = experiment_io.group_snapshots(records)
    store = experiment_io.StateStore(cfg["state_dir"]) if cfg["state_dir"] else None
    rows = []
    decisions: Dict[str, List[bool]] = {t: [] for t in tests}
    for (exp, metric, variant), pairs in groups.items():
        verdicts = experiment_io.group_sequential_replay(pairs, tests, alpha, delta)
        if cfg["bernoulli"]:
            prior = safe_prop.BetaPrior.from_epsilon(_positive("epsilon", cfg["epsilon"]))
            try:
                verdicts["safe_prop"] = experiment_io.strict_bernoulli_replay(pairs, prior, alpha)
            except SafeABError as exc:
                print(f"warning: {exp}/{metric}/{variant}: safe_prop skipped: {exc}",
                      file=sys.stderr)
        for t, v in verdicts.items():
            rows.append(experiment_io.verdict_row(exp, metric, variant, v))
        for t in tests:
            decisions[t].append(verdicts[t].rejected)
        if store is not None:
            store.save(f"{exp}/{metric}/{variant}", "analyze",
                       {"verdicts": [experiment_io.verdict_row(exp, metric, variant, v)
                                     for v in verdicts.values()]})
    agreement = []
    for i, ta in enumerate(tests):
        for tb in tests[i + 1:]:
            m = simlab.agreement_study(decisions[ta], decisions[tb])
            (n11, n10), (n01, n00) = m.counts
            agreement.append({"test_a": ta, "test_b": tb, "n11": n11, "n10": n10,
                              "n01": n01, "n00": n00, "phi": m.phi})
    mode = ["mode=semi-sequential (daily recomputation, running max; not a strict e-process)"]
    if cfg["format"] == "json":
        out.json("verdicts", {"mode": mode[0], "verdicts": rows, "agreement": agreement})
    else:
        out.csv("verdicts", rows, experiment_io.VERDICT_COLUMNS, mode)
        out.csv("agreement", agreement, AGREEMENT_COLUMNS)
    return 0


SRM_COLUMNS = ("experiment_id", "safe_decision", "safe_detection_day", "safe_e_value",
               "chi2_decision", "chi2_p_value", "final_day", "day_difference")


def cmd_srm(cfg: dict, out: Output) -> int:
    alpha = _level("alpha", cfg["alpha"])
    theta0 = _level("theta0", cfg["theta0"])
    epsilon = _positive("epsilon", cfg["epsilon"])
    try:
        config = safe_prop.SrmConfig(theta0=theta0, epsilon=epsilon, alpha=alpha)
    except SafeABError as exc:
        raise UsageError(str(exc))
    prior = config.base_prior()
    with open(cfg["input"], encoding="utf-8", newline="") as fh:
        records = experiment_io.parse_assignments(fh, cumulative=cfg["cumulative"])
    store = experiment_io.StateStore(cfg["state_dir"]) if cfg["state_dir"] else None
    rows = []
    for exp, recs in experiment_io.group_assignments(records).items():
        state = experiment_io.load_srm_state(store, exp) if store else None
        safe_v, chi_v, state = experiment_io.srm_replay(recs, config, state)
        if store is not None:
            experiment_io.save_srm_state(store, exp, state)
        final_day = recs[-1].day
        day = safe_v.first_rejection_day
        rows.append({
            "experiment_id": exp, "safe_decision": safe_v.decision,
            "safe_detection_day": day.isoformat() if day else "",
            "safe_e_value": safe_v.final_statistic, "chi2_decision": chi_v.decision,
            "chi2_p_value": chi_v.final_statistic, "final_day": final_day.isoformat(),
            "day_difference": (final_day - day).days if day else "",
        })
    header = [f"prior alpha1={prior.alpha1:g} beta1={prior.beta1:g} theta0={theta0:g} "
              f"epsilon={epsilon:g} alpha={alpha:g}"]
    if cfg["format"] == "json":
        out.json("srm", {"prior": prior.to_dict(), "theta0": theta0, "epsilon": epsilon,
                         "alpha": alpha, "experiments": rows})
    else:
        out.csv("srm", rows, SRM_COLUMNS, header)
    return 0


def cmd_simulate(cfg: dict, out: Output) -> int:
    study = cfg["study"]
    if study not in STUDIES:
        raise UsageError(f"--study is required; choose from {', '.join(STUDIES)}")
    alpha = _level("alpha", cfg["alpha"])
    beta = _level("beta", cfg["beta"])
    seed = int(cfg["seed"])
    workers = int(cfg["workers"])
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    sims_default = {"peeking": 2000, "stopping": 500, "delta-grid": 100, "error-rates": 2000}
    sims = int(cfg["sims"]) if cfg["sims"] is not None else sims_default[study]
    if sims < 1:
        raise UsageError("--sims must be >= 1")
    gamma2_mode = cfg["gamma2_mode"]
    if gamma2_mode not in ("frozen", "running"):
        raise UsageError("--gamma2-mode must be frozen or running")
    params = {"study": study, "seed": seed, "sims": sims, "alpha": alpha, "beta": beta}
    if study == "peeking":
        test = TEST_NAMES.get(cfg["test"])
        if test not in ("classical_t", "safe_t"):
            raise UsageError("--test must be classical-t or safe-t")
        peeks = _csv_list(cfg["peeks"], int)
        if not peeks or min(peeks) < 1:
            raise UsageError("--peeks must be positive integers")
        horizon = int(cfg["horizon"])
        if horizon < 2:
            raise UsageError("--horizon must be >= 2")
        effect = float(cfg["effect"]) if cfg["effect"] is not None else 0.0
        delta = _positive("delta", cfg["delta"])
        spec = simlab.SimulationSpec(test, alpha=alpha, beta=beta, effect=effect, n_sims=sims,
                                     seed=seed, horizon_policy="fixed", fixed_n=horizon,
                                     peek_schedule=tuple(peeks), delta=delta)
        rows = simlab.peeking_fp_curve(spec, workers=workers)
        params.update(test=test, peeks=peeks, horizon=horizon, effect=effect, delta=delta)
        _emit(out, cfg, "peeking", rows, simlab.PEEKING_COLUMNS, params)
    elif study == "stopping":
        delta = _positive("delta", cfg["delta"])
        effect = float(cfg["effect"]) if cfg["effect"] is not None else delta
        tests = _seq_tests(cfg["tests"])
        st = simlab.stopping_study(delta, effect, alpha, beta, sims, seed, tests=tests,
                                   workers=workers, msprt_gamma2_mode=gamma2_mode)
        rows = []
        for t in tests:
            s = st.summaries[t]
            for k, v in s.ratios.items():
                rows.append({"test": t, "decision": k, "ratio": v, "horizon": s.horizon,
                             "reject_fraction": s.reject_fraction})
        params.update(delta=delta, effect=effect, tests=list(tests), classical_n=st.classical_n,
                      gamma2_mode=gamma2_mode)
        summary = {t: s.to_dict() for t, s in st.summaries.items()}
        _emit(out, cfg, "stopping", rows,
              ("test", "decision", "ratio", "horizon", "reject_fraction"), params, summary)
        if cfg["format"] == "csv":
            out.csv("histogram", simlab.histogram_rows(st.summaries), simlab.HIST_COLUMNS)
    elif study == "delta-grid":
        grid = _csv_list(cfg["deltas"], float)
        if not grid or min(grid) <= 0:
            raise UsageError("--deltas must be positive numbers")
        tests = _seq_tests(cfg["tests"])
        rows = simlab.delta_grid_study(grid, tests, alpha, beta, sims, seed, workers=workers,
                                       msprt_gamma2_mode=gamma2_mode)
        params.update(deltas=grid, tests=list(tests), gamma2_mode=gamma2_mode)
        _emit(out, cfg, "delta_grid", rows, simlab.GRID_COLUMNS, params,
              {"aggregate": simlab.aggregate_grid(rows)})
    else:
        delta = _positive("delta", cfg["delta"])
        rows = simlab.error_rate_study(delta, alpha, beta, sims, seed, workers=workers)
        params.update(delta=delta)
        _emit(out, cfg, "error_rates", rows, simlab.ERROR_COLUMNS, params)
    return 0


def _seq_tests(text) -> tuple:
    tests = []
    for name in _csv_list(text):
        t = TEST_NAMES.get(name)
        if t not in simlab.NORMAL_TESTS:
            raise UsageError(f"sequential tests are safe-t and msprt, got {name!r}")
        tests.append(t)
    if not tests:
        raise UsageError("--tests is empty")
    return tuple(tests)


def _emit(out: Output, cfg, name, rows, columns, params, summary=None):
    if cfg["format"] == "json":
        out.json(name, {"params": params, "rows": rows, "summary": summary})
    else:
        out.csv(name, rows, columns)
        out.json(name + "_summary", {"params": params, "summary": summary})


COMMANDS = {"design": cmd_design, "analyze": cmd_analyze, "srm": cmd_srm,
            "simulate": cmd_simulate}


def version_info() -> dict:
    return {"safeab": __version__, "output_schema": OUTPUT_SCHEMA_VERSION,
            "state_schema": experiment_io.SCHEMA_VERSION}


def main(argv: Optional[Sequence[str]] = None, stdout=None, environ=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.version:
            stdout.write(json.dumps(version_info(), sort_keys=True) + "\n")
            return 0
        if not args.command:
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        cfg = resolve(args, environ)
        out = Output(cfg, stdout)
        code = COMMANDS[args.command](cfg, out)
        if code == 0:
            out.flush()
            if cfg["gnuplot_hints"]:
                key = cfg.get("study") or args.command
                print(GNUPLOT_HINTS.get(key, ""), file=sys.stderr)
        return code
    except UsageError as exc:
        print(f"safeab: error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"safeab: {exc}", file=sys.stderr)
        for row, msg in exc.problems:
            print(f"  row {row}: {msg}", file=sys.stderr)
        return 1
    except (SchemaError, OSError, SafeABError) as exc:
        print(f"safeab: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
