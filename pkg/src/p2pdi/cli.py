"""Command-line pipeline: simulate, fit, diagnose, estimate-di, decompose, sensitivity, threshold-test.

Every subcommand reads flags and an optional ``--config`` file (JSON or
YAML, keys named like the flags); flags win over the file.  The whole
configuration is validated before any data is read.  Reports are JSON with
a fixed schema and sorted keys; plot data are plain CSV.  Neither contains
paths or thread counts, so identical inputs and seed give identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, cox, decision, di, diagnostics, synthetic
from . import rng as rngmod
from .data_model import DataError, LoanTable, preprocess
from .design import DesignConfig

REPORT_SCHEMA = "p2pdi.report"
REPORT_VERSION = 1
LOANS_CSV_VERSION = 1
STOCHASTIC = {"simulate", "estimate-di", "decompose", "sensitivity", "threshold-test"}


class ConfigError(ValueError):
    """Invalid command-line or config-file settings."""


# output helpers --------------------------------------------------------------------


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(float(v)) else repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_rows(path: Path, rows: list[dict], header: list[str] | None = None) -> None:
    header = header or (list(rows[0]) if rows else [])
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(r.get(k)) for k in header])


def _report(command: str, settings: dict, result: dict) -> dict:
    hidden = {"threads", "out_dir", "loans", "model", "config", "spec"}
    return {"schema": REPORT_SCHEMA, "version": REPORT_VERSION, "package_version": __version__,
            "command": command, "settings": {k: v for k, v in sorted(settings.items()) if k not in hidden},
            "result": result}


# argument parsing --------------------------------------------------------------------


DEFAULTS = {
    "threads": None, "winsor": 0.005, "rate_floor": 0.16, "default_df": 4, "spline_df": [], "time_df": 3,
    "time_interactions": "male", "bins": "0:1.4:0.02", "bootstrap": 500, "multiplier": 1.0, "subset": [],
    "second_stage": "nonparametric", "aic": False, "y_df": 4, "multipliers": "1,1.5,2,2.5,3",
    "chains": 4, "warmup": 5000, "draws": 5000, "max_draws": 20000, "preset": None, "n": None,
    "robust": True, "grid_points": 45, "bandwidth_frac": 0.2,
}
# replicated MCMC and OLS refits are costly, so these run once unless asked
COMMAND_DEFAULTS = {"threshold-test": {"bootstrap": 0}, "decompose": {"bootstrap": 0}}


def _common(p, seed=False, loans=True, model=False, design=False):
    p.add_argument("--config", help="JSON or YAML file with settings (flags override)")
    p.add_argument("--out-dir", dest="out_dir", help="directory for reports and plot data")
    p.add_argument("--threads", type=int, help="worker threads (default: available cores)")
    if seed:
        p.add_argument("--seed", type=int, help="master seed (required)")
    if loans:
        p.add_argument("--loans", help="loans CSV")
        p.add_argument("--winsor", type=float, help="winsorization quantile per tail (default 0.005)")
        p.add_argument("--rate-floor", dest="rate_floor", type=float, help="drop loans below this rate")
    if model:
        p.add_argument("--model", help="fitted hazard model file (default: fit on the funded loans)")
    if design:
        p.add_argument("--default-df", dest="default_df", type=int, help="spline df for continuous covariates")
        p.add_argument("--spline-df", dest="spline_df", action="append", metavar="NAME=DF",
                       help="per-covariate spline df (repeatable; 1 = linear)")
        p.add_argument("--time-df", dest="time_df", type=int, help="df of the month spline")
        p.add_argument("--time-interactions", dest="time_interactions",
                       help="comma-separated covariates interacted with the month spline ('' for none)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="p2pdi", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="store_true", help="print package and schema versions")
    sub = ap.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="generate a synthetic market with ground truth")
    _common(p, seed=True, loans=False)
    p.add_argument("--spec", help="market spec file (JSON or YAML)")
    p.add_argument("--preset", choices=["calibrated", "null", "recovery"], help="built-in market")
    p.add_argument("--n", type=int, help="number of loans (overrides the market spec)")

    p = sub.add_parser("fit", help="fit the discrete-time hazard model")
    _common(p, design=True)
    p.add_argument("--no-robust", dest="robust", action="store_false", default=None,
                   help="skip the sandwich covariance")

    p = sub.add_parser("diagnose", help="residual diagnostics of a fitted model")
    _common(p, model=True, design=True)
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--bandwidth-frac", dest="bandwidth_frac", type=float)

    p = sub.add_parser("estimate-di", help="2SPS disparate impact with bootstrap CIs")
    _common(p, seed=True, model=True, design=True)
    p.add_argument("--bins", help="start:stop:width or comma-separated edges")
    p.add_argument("--bootstrap", type=int, help="bootstrap replicates (0 for a point estimate)")
    p.add_argument("--multiplier", type=float, help="hazard multiplier for unfunded loans")
    p.add_argument("--subset", action="append", metavar="NAME=EXPR", help="subset filter (repeatable)")
    p.add_argument("--second-stage", dest="second_stage",
                   choices=["nonparametric", "ols-di", "ols-di-controls", "ols-dt"])
    p.add_argument("--aic", action="store_true", default=None, help="AIC backward selection of covariates")
    p.add_argument("--y-df", dest="y_df", type=int, help="spline df of the return rate")

    p = sub.add_parser("decompose", help="OLS DI, DI with controls and DT coefficients")
    _common(p, seed=True, model=True, design=True)
    p.add_argument("--bootstrap", type=int, help="bootstrap replicates (0 for point estimates)")
    p.add_argument("--aic", action="store_true", default=None)
    p.add_argument("--y-df", dest="y_df", type=int)

    p = sub.add_parser("sensitivity", help="DI under scaled hazards for unfunded loans")
    _common(p, seed=True, model=True, design=True)
    p.add_argument("--multipliers", help="comma-separated hazard multipliers")
    p.add_argument("--bins")

    p = sub.add_parser("threshold-test", help="Bayesian threshold test of the funding decision")
    _common(p, seed=True, model=True, design=True)
    p.add_argument("--chains", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--draws", type=int)
    p.add_argument("--max-draws", dest="max_draws", type=int)
    p.add_argument("--bootstrap", type=int, help="bootstrap replicates to pool (0 for one imputation)")
    return ap


def _load_structured(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"file not found: {path}")
    text = p.read_text(encoding="utf-8")
    try:
        if p.suffix.lower() in (".yaml", ".yml"):
            import yaml
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except Exception as e:  # noqa: BLE001 - report any parse failure uniformly
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping")
    return data


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win)."""
    given = {k: v for k, v in vars(args).items() if k != "command"}
    cfg = {}
    if given.get("config"):
        cfg = {k.replace("-", "_"): v for k, v in _load_structured(given["config"]).items()}
        unknown = set(cfg) - set(given)
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    out = {}
    for k, v in given.items():
        if v is not None:
            out[k] = v
        elif k in cfg:
            out[k] = cfg[k]
        else:
            out[k] = COMMAND_DEFAULTS.get(args.command, {}).get(k, DEFAULTS.get(k))
    if out.get("threads") is None:
        out["threads"] = os.cpu_count() or 1
    return out


def _parse_kv_ints(items, what) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"{what} must look like NAME=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = int(v)
        except ValueError as e:
            raise ConfigError(f"{what} value for {k} must be an integer") from e
    return out


def validate(cmd: str, s: dict) -> dict:
    """Check every setting; returns parsed helpers (bins, design, subsets, ...)."""
    out = {}
    if s["threads"] < 1:
        raise ConfigError("--threads must be positive")
    if not s.get("out_dir"):
        raise ConfigError("--out-dir is required")
    if cmd in STOCHASTIC and s.get("seed") is None:
        raise ConfigError(f"{cmd} is stochastic: --seed is required")
    if s.get("seed") is not None and int(s["seed"]) < 0:
        raise ConfigError("--seed must be non-negative")
    if cmd != "simulate":
        if not s.get("loans"):
            raise ConfigError("--loans is required")
        if not Path(s["loans"]).is_file():
            raise ConfigError(f"loans file not found: {s['loans']}")
        if not 0 <= s["winsor"] < 0.5:
            raise ConfigError("--winsor must be in [0, 0.5)")
    if s.get("model") and not Path(s["model"]).is_file():
        raise ConfigError(f"model file not found: {s['model']}")
    if "default_df" in s:
        spline_df = _parse_kv_ints(s["spline_df"], "--spline-df")
        ti = s["time_interactions"]
        ti = tuple(x.strip() for x in ti.split(",") if x.strip()) if isinstance(ti, str) else tuple(ti)
        if s["default_df"] < 1 or s["time_df"] < 1 or any(v < 1 for v in spline_df.values()):
            raise ConfigError("spline df must be at least 1")
        out["design"] = DesignConfig(default_df=s["default_df"], spline_df=spline_df, time_df=s["time_df"],
                                     time_interactions=ti)
    if "bins" in s:
        try:
            out["bins"] = di.parse_bins(s["bins"])
        except ValueError as e:
            raise ConfigError(str(e)) from e
    if "bootstrap" in s:
        b = s["bootstrap"]
        if b < 0 or b == 1:
            raise ConfigError("--bootstrap must be 0 or at least 2")
    if "multiplier" in s and s["multiplier"] < 1:
        raise ConfigError("--multiplier must be at least 1")
    if "subset" in s:
        try:
            out["subsets"] = dict(di.parse_subset(x) for x in (s["subset"] or []))
        except ValueError as e:
            raise ConfigError(str(e)) from e
    if "multipliers" in s:
        m = s["multipliers"]
        try:
            mults = [float(x) for x in m.split(",")] if isinstance(m, str) else [float(x) for x in m]
        except ValueError as e:
            raise ConfigError("--multipliers must be comma-separated numbers") from e
        if not mults or min(mults) < 1:
            raise ConfigError("--multipliers must all be at least 1")
        out["multipliers"] = mults
    if cmd == "threshold-test":
        try:
            out["mcmc"] = decision.McmcConfig(chains=s["chains"], warmup=s["warmup"], draws=s["draws"],
                                              max_draws=max(s["max_draws"], s["draws"]), seed=s["seed"],
                                              threads=s["threads"])
        except ValueError as e:
            raise ConfigError(str(e)) from e
    if cmd == "simulate":
        if bool(s.get("spec")) == bool(s.get("preset")):
            raise ConfigError("simulate needs exactly one of --spec or --preset")
        if s.get("n") is not None and s["n"] <= 0:
            raise ConfigError("--n must be positive")
        out["market"] = _market_spec(s)
    if cmd == "diagnose" and (s["grid_points"] < 2 or not 0 < s["bandwidth_frac"] <= 1):
        raise ConfigError("--grid-points must be >= 2 and --bandwidth-frac in (0, 1]")
    return out


def _market_spec(s) -> synthetic.MarketSpec:
    seed = int(s["seed"])
    if s.get("preset"):
        n = s.get("n") or 10_000
        make = {"calibrated": synthetic.calibrated_market, "null": synthetic.null_market,
                "recovery": synthetic.recovery_market}[s["preset"]]
        return make(n, seed)
    d = _load_structured(s["spec"])
    preset = d.pop("preset", None)
    d["seed"] = seed
    if s.get("n") is not None:
        d["n"] = s["n"]
    try:
        if preset:
            base = _market_spec({"preset": preset, "n": d.get("n"), "seed": seed}).to_dict()
            base.update(d)
            d = base
        return synthetic.MarketSpec.from_dict(d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid market spec: {e}") from e


# data loading ----------------------------------------------------------------------------


def _load_loans(s):
    raw = LoanTable.read_csv(s["loans"])
    table, rep = preprocess(raw, winsor_quantile=s["winsor"], rate_floor=s["rate_floor"])
    if len(table) == 0:
        raise DataError("no loans left after preprocessing")
    return table, rep


def _funded(table):
    return table.take(np.flatnonzero(table.funded))


def _model(s, parsed, table):
    if s.get("model"):
        return cox.FittedHazardModel.load(s["model"])
    return cox.fit(_funded(table), parsed["design"], compute_concordance=False)


def _drop_report(rep) -> dict:
    return {"input": rep.input_count, "output": rep.output_count, "partial_payment": rep.partial_payment,
            "pay_after_default": rep.pay_after_default, "below_rate_floor": rep.below_rate_floor,
            "winsor_dropped": rep.winsor_dropped, "winsor_clamped": dict(sorted(rep.winsor_clamped.items()))}


# subcommands ---------------------------------------------------------------------------------


def cmd_simulate(s, parsed, out: Path):
    spec = parsed["market"]
    table, truth = synthetic.generate(spec)
    table.write_csv(out / "loans.csv")
    truth.write_csv(out / "truth.csv", table.ids)
    try:
        spec_dict = spec.to_dict()
    except ValueError:
        spec_dict = {"preset": s.get("preset"), "n": spec.n, "seed": spec.seed}
    tdi = synthetic.true_di(truth)
    result = {"spec": spec_dict, "n": len(table),
              "funding_rate": {g: float(truth.funded[truth.male == gi].mean()) if (truth.male == gi).any()
                               else None for gi, g in enumerate(synthetic.GENDERS)},
              "decision_moments": {"mu": truth.mu, "sigma0": truth.sigma0, "gamma": truth.gamma},
              "true_average_di": tdi.average_di if not (truth.male.all() or (~truth.male.astype(bool)).all())
              else None}
    write_json(out / "simulate_report.json", _report("simulate", s, result))


def cmd_fit(s, parsed, out: Path):
    table, rep = _load_loans(s)
    model = cox.fit(_funded(table), parsed["design"], robust=s["robust"])
    model.save(out / "model.json")
    result = {"preprocess": _drop_report(rep), "n_loans": model.n_loans, "n_events": model.n_events,
              "loglik": model.loglik, "iterations": model.iterations, "concordance": model.concordance,
              "coefficients": model.summary(), "baseline_hazard": model.baseline}
    write_json(out / "fit_report.json", _report("fit", s, result))


def cmd_diagnose(s, parsed, out: Path):
    table, _ = _load_loans(s)
    model = _model(s, parsed, table)
    funded = _funded(table)
    result = {"concordance": cox.concordance(model, funded)}
    try:
        sch = diagnostics.schoenfeld(model, funded, grid_points=s["grid_points"],
                                     bandwidth_frac=s["bandwidth_frac"])
        result["schoenfeld"] = sch.table()
        write_rows(out / "schoenfeld_panels.csv", sch.panel_rows())
    except diagnostics.DiagnosticsError as e:
        result["schoenfeld"] = {"error": str(e)}
    cs = diagnostics.cox_snell(model, funded)
    result["cox_snell"] = {"max_deviation": cs.max_deviation, "range": list(cs.range)}
    write_rows(out / "cox_snell.csv", cs.plot_rows())
    rk = diagnostics.default_rank(model, funded)
    write_rows(out / "default_rank.csv", rk.plot_rows())
    write_rows(out / "hazard_curve.csv", diagnostics.hazard_curve(model))
    write_json(out / "diagnose_report.json", _report("diagnose", s, result))


_OLS_KIND = {"ols-di": "DI", "ols-di-controls": "DI_controls", "ols-dt": "DT"}


def _bootstrap(s, parsed, table, model, extra, bins=None):
    """Point estimate (and replicates when --bootstrap >= 2) with per-replicate extras."""
    n_boot = s["bootstrap"]
    if n_boot >= 2:
        cfg = di.BootstrapConfig(n_bootstrap=n_boot, seed=s["seed"], bins=None if bins is None else tuple(bins),
                                 multiplier=s.get("multiplier", 1.0), threads=s["threads"])
        return di.bootstrap_di(table, cfg, model=model, extra=extra)
    imp = di.impute_returns(model, table, rngmod.stream(s["seed"], rngmod.IMPUTE, 0), s.get("multiplier", 1.0))
    est = di.nonparametric_di(imp.y, table.funded, table.male, bins)
    return di.BootstrapResult(est, model, imp, [], extra(table, imp) if extra else None)


def _ci(values):
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], float)
    if len(v) < 2:
        return None
    lo, hi = di.percentile_ci(v)
    return [float(lo), float(hi)]


def cmd_estimate_di(s, parsed, out: Path):
    table, rep = _load_loans(s)
    model = _model(s, parsed, table)
    bins = parsed["bins"]
    subsets = parsed["subsets"]
    kind = _OLS_KIND.get(s["second_stage"])
    masks = {name: di.subset_mask(table, expr) for name, expr in subsets.items()}

    def extra(tb, imp):
        res = {}
        if kind:
            res["ols"] = di.ols_second_stage(tb, imp.y, kind, s["aic"], s["y_df"]).gender_coefficient
        if masks:
            part = {name: di.subset_mask(tb, subsets[name]) for name in masks}
            res["subsets"] = {k: (None if v is None else v.average_di)
                              for k, v in di.disaggregate_di(tb, imp.y, part, bins).items()}
        return res

    res = _bootstrap(s, parsed, table, model, extra if (kind or masks) else None, bins)
    est = res.estimate
    result = {"preprocess": _drop_report(rep), "second_stage": s["second_stage"], "di": est.to_dict()}
    write_rows(out / "di_plot.csv", est.plot_rows())
    if kind:
        ols = di.ols_second_stage(table, res.imputed.y, kind, s["aic"], s["y_df"]).to_dict()
        ols["bootstrap_ci"] = _ci([e["ols"] for e in res.extras])
        result["ols"] = ols
    if masks:
        per = di.disaggregate_di(table, res.imputed.y, masks, bins)
        result["subsets"] = {
            name: None if e is None else {
                "expr": subsets[name], "n": int(masks[name].sum()), "average_di": e.average_di,
                "ci": _ci([x["subsets"][name] for x in res.extras])}
            for name, e in per.items()}
    write_json(out / "di_report.json", _report("estimate-di", s, result))


def cmd_decompose(s, parsed, out: Path):
    table, rep = _load_loans(s)
    model = _model(s, parsed, table)

    def extra(tb, imp):
        d = di.decompose(tb, imp.y, s["aic"], s["y_df"])
        return [d.di.gender_coefficient, d.di_controls.gender_coefficient, d.dt.gender_coefficient]

    res = _bootstrap(s, parsed, table, model, extra)
    d = di.decompose(table, res.imputed.y, s["aic"], s["y_df"])
    result = {"preprocess": _drop_report(rep), "decomposition": d.to_dict()}
    if res.extras:
        ex = np.array(res.extras)
        for j, k in enumerate(di.KINDS):
            result["decomposition"][k]["bootstrap_ci"] = _ci(ex[:, j])
        result["decomposition"]["indirect_share_ci"] = _ci(1 - ex[:, 1] / ex[:, 0])
    write_json(out / "decompose_report.json", _report("decompose", s, result))


def cmd_sensitivity(s, parsed, out: Path):
    table, rep = _load_loans(s)
    model = _model(s, parsed, table)
    res = di.sensitivity_sweep(model, table, parsed["multipliers"], seed=s["seed"], bins=parsed["bins"])
    write_rows(out / "sensitivity.csv", [{"multiplier": m, "average_di": v}
                                         for m, v in zip(res.multipliers, res.average_di)])
    write_json(out / "sensitivity_report.json",
               _report("sensitivity", s, {"preprocess": _drop_report(rep), "sweep": res.to_dict()}))


def _threshold_once(table, model, g, mcmc):
    imp = di.impute_returns(model, table, g)
    lam = decision.twelfths(imp.lam)
    mom = decision.moments(lam, table.male)
    tab = decision.collapse_binomial(lam, table.rate, table.funded, table.male)
    return decision.infer(tab, mom, mcmc)


def cmd_threshold_test(s, parsed, out: Path):
    table, rep = _load_loans(s)
    model = _model(s, parsed, table)
    mcmc = parsed["mcmc"]
    seed = s["seed"]
    if s["bootstrap"] >= 2:
        n = len(table)
        posts = []
        for i in range(s["bootstrap"]):
            g = rngmod.stream(seed, rngmod.BOOTSTRAP, i)
            tb = table.take(g.integers(0, n, n))
            m = cox.fit(_funded(tb), model.design, init=model.beta, compute_concordance=False, robust=False)
            cfg = dataclasses.replace(mcmc, seed=rngmod.derive_seed(seed, rngmod.MCMC, 1000, i))
            posts.append(_threshold_once(tb, m, g, cfg))
        post = decision.pool_posteriors(posts)
    else:
        post = _threshold_once(table, model, rngmod.stream(seed, rngmod.IMPUTE, 0), mcmc)
    summary = post.summary()
    result = {"preprocess": _drop_report(rep), "summary": summary, "rhat": post.rhat, "ess": post.ess,
              "max_rhat": post.max_rhat, "min_ess": post.min_ess, "acceptance": post.acceptance,
              "replicates": max(s["bootstrap"], 1)}
    write_rows(out / "trace.csv", post.trace_rows())
    write_json(out / "threshold_report.json", _report("threshold-test", s, result))


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "diagnose": cmd_diagnose, "estimate-di": cmd_estimate_di,
            "decompose": cmd_decompose, "sensitivity": cmd_sensitivity, "threshold-test": cmd_threshold_test}


def versions() -> dict:
    return {"p2pdi": __version__, "schemas": {REPORT_SCHEMA: REPORT_VERSION, cox.MODEL_SCHEMA: cox.MODEL_VERSION,
                                              "p2pdi.loans-csv": LOANS_CSV_VERSION}}


def _fail(kind: str, err: Exception, code: int, details=None) -> int:
    payload = {"error": {"type": kind, "message": str(err)}}
    if details is not None:
        payload["error"]["details"] = _clean(details)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.version:
        print(json.dumps(versions(), sort_keys=True))
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        s = resolve(args)
        parsed = validate(args.command, s)
    except ConfigError as e:
        return _fail("config", e, 2)
    out = Path(s["out_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](s, parsed, out)
    except DataError as e:
        return _fail("data", e, 3)
    except decision.McmcConvergenceError as e:
        return _fail("convergence", e, 4, e.diagnostics)
    except (cox.FitError, di.BootstrapError, diagnostics.DiagnosticsError) as e:
        return _fail(type(e).__name__, e, 4)
    except (ValueError, OSError, np.linalg.LinAlgError) as e:
        return _fail(type(e).__name__, e, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
