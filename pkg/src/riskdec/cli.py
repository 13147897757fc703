"""``riskdec`` command-line interface.

Every command resolves its parameters as flags > ``--config`` file > defaults,
echoes the resolved configuration (with input file digests) into its result
document, and, when a store is configured, skips work whose document already
exists unless ``--force`` is given.

Exit codes: 0 success, 2 usage, 3 data or format problems, 4 numeric failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import ModelTable, controlled_fit, global_fit
from .decomposition import (DEFAULT_SETTINGS, LambdaPolicy, RiskComponents, RiskEstimates,
                            alternative_components, decompose, estimate_components, fewshot_suite,
                            parse_setting)
from .errors import ConfigurationError, ParseError, RiskdecError, UsageError
from .fvec_io import load_fvec, make_split_plan, save_fvec
from .probe import DEFAULT_GRID, TrainConfig
from .report import (ResultStore, accuracy_row, atomic_write, build_report, component_table,
                     components_rows, file_digest, fewshot_rows, make_document, pretty_json, to_csv,
                     FEWSHOT_COLUMNS, FRONTIER_COLUMNS, ACCURACY_SETTINGS)
from .repstats import ATOL, RTOL, rep_stats
from .scaling import DEFAULT_HOLDOUT_SETTINGS, ScalingObservation, evaluate_holdout, fit_decomposition_law, fit_standard_law

STORE_ENV = "RISKDEC_STORE"

TASK_DEFAULTS = {"n_classes": 10, "d_raw": 16, "delta": None, "sigma": 1.0,
                 "n_pre": 1000, "n_tr": 1000, "n_te": 1000}

DEFAULTS = {
    "decompose": {"train": None, "test": None, "ref_risk": None, "raw_train": None, "sub_size": None,
                  "lam": None, "grid": None, "val_fraction": 0.1, "bayes_risk": 0.0, "encoder": None,
                  "alt": False, "metadata": None},
    "fewshot": {"train": None, "test": None, "settings": list(DEFAULT_SETTINGS), "seeds": 5,
                "lam": None, "grid": None, "val_fraction": 0.1, "encoder": None},
    "stats": {"input": None, "pairs": None, "atol": ATOL, "rtol": RTOL},
    "scaling": {"action": "fit", "obs": None, "holdout": None, "law": "both",
                "n_holdout": DEFAULT_HOLDOUT_SETTINGS},
    "synth": {"action": None, "out_dir": None, "encoders": None, "encoder": None, "d_out": None,
              "seeds": 10, "lam": 1e-4, "fewshot": False, "pretrain_on": "pretrain", **TASK_DEFAULTS},
    "analyze": {"table": None, "method": None, "hparam": None, "metric": None, "controls": [],
                "ignore": [], "metrics": [], "log_hparam": False, "log_metric": False},
    "report": {"out_dir": None},
}
GLOBAL_KEYS = ("seed", "out", "store", "force")


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text):
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    # SUPPRESS keeps a flag given before the subcommand from being reset by
    # the subcommand parser's own default.
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base random seed (default 0)")
    g.add_argument("--out", default=argparse.SUPPRESS, help="result document path (default: stdout)")
    g.add_argument("--store", default=argparse.SUPPRESS, help=f"result store directory (default ${STORE_ENV})")
    g.add_argument("--force", action="store_true", default=argparse.SUPPRESS, help="recompute even on a store hit")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")

    parser = argparse.ArgumentParser(prog="riskdec", parents=[common],
                                     description="Risk decomposition of frozen representations.")
    parser.add_argument("--version", action="version", version=f"riskdec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def probe_opts(p):
        p.add_argument("--lambda", dest="lam", type=float, default=None, help="fixed L2 strength (skips tuning)")
        p.add_argument("--grid", type=_float_list, default=None, help="comma-separated lambda grid")
        p.add_argument("--val-fraction", type=float, default=None)

    p = sub.add_parser("decompose", parents=[common], help="estimate the four risk components")
    p.add_argument("--train", default=None, help="featurized training set (FVEC)")
    p.add_argument("--test", default=None, help="featurized test set (FVEC)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--ref-risk", type=float, default=None, help="known supervised training risk (fraction)")
    src.add_argument("--raw-train", default=None, help="raw-input training set for the reference probe")
    p.add_argument("--sub-size", type=int, default=None)
    p.add_argument("--bayes-risk", type=float, default=None)
    p.add_argument("--encoder", default=None, help="encoder id (default: training file stem)")
    p.add_argument("--alt", action="store_true", default=None, help="also report the alternative ordering")
    probe_opts(p)

    p = sub.add_parser("fewshot", parents=[common], help="test risk across label budgets")
    p.add_argument("--train", default=None)
    p.add_argument("--test", default=None)
    p.add_argument("--settings", type=_csv_list, default=None, help="e.g. 100%%,30-shot,1%%,5-shot,3-shot")
    p.add_argument("--seeds", type=int, default=None, help="number of subsampling seeds")
    p.add_argument("--encoder", default=None)
    probe_opts(p)

    p = sub.add_parser("stats", parents=[common], help="representation statistics")
    p.add_argument("--in", dest="input", default=None, help="representations (FVEC)")
    p.add_argument("--pairs", default=None, help="paired representations for alignment (FVEC)")
    p.add_argument("--atol", type=float, default=None)
    p.add_argument("--rtol", type=float, default=None)

    p = sub.add_parser("scaling", parents=[common], help="scaling-law fits")
    p.add_argument("action", choices=["fit"])
    p.add_argument("--obs", default=None, help="observations JSON")
    p.add_argument("--holdout", default=None, help="iid | group:<value>")
    p.add_argument("--law", choices=["decomposition", "standard", "both"], default=None)
    p.add_argument("--n-holdout", type=int, default=None, help="settings held out per encoder for iid")

    p = sub.add_parser("synth", parents=[common], help="synthetic tasks and encoder sweeps")
    p.add_argument("action", choices=["gen", "sweep"])
    p.add_argument("--out-dir", default=None)
    p.add_argument("--encoders", default=None, help="JSON list of encoder specs (sweep)")
    p.add_argument("--encoder", default=None, help="encoder kind to featurize with (gen)")
    p.add_argument("--d-out", type=int, default=None)
    p.add_argument("--seeds", type=int, default=None, help="number of task seeds (sweep)")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--fewshot", action="store_true", default=None, help="also run the label-budget suite")
    p.add_argument("--pretrain-on", choices=["pretrain", "train"], default=None)
    for k, typ in (("n_classes", int), ("d_raw", int), ("delta", float), ("sigma", float),
                   ("n_pre", int), ("n_tr", int), ("n_te", int)):
        p.add_argument("--" + k.replace("_", "-"), dest=k, type=typ, default=None)

    p = sub.add_parser("analyze", parents=[common], help="controlled or global linear analysis")
    p.add_argument("--table", default=None, help="model table CSV")
    p.add_argument("--method", choices=["ca", "gla"], default=None)
    p.add_argument("--hparam", default=None)
    p.add_argument("--metric", default=None)
    p.add_argument("--controls", type=_csv_list, default=None)
    p.add_argument("--ignore", type=_csv_list, default=None, help="columns that are not design choices")
    p.add_argument("--metrics", type=_csv_list, default=None, help="other metric columns")
    p.add_argument("--log-hparam", action="store_true", default=None)
    p.add_argument("--log-metric", action="store_true", default=None)

    p = sub.add_parser("report", parents=[common], help="emit the report bundle from a store")
    p.add_argument("--out-dir", default=None)
    return parser


def resolve_config(args) -> dict:
    """Merge defaults, the config file (global keys plus a per-command section) and flags."""
    command = args.command
    defaults = DEFAULTS[command]
    config = {"seed": 0, "out": None, "store": os.environ.get(STORE_ENV), "force": False, **defaults}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {config_path}: {exc}")
        if not isinstance(doc, dict):
            raise ConfigurationError("config file must hold a JSON object")
        for key, value in doc.items():
            if key in GLOBAL_KEYS:
                config[key] = value
            elif key == command:
                if not isinstance(value, dict):
                    raise ConfigurationError(f"config section {key!r} must be an object")
                unknown = set(value) - set(defaults)
                if unknown:
                    raise ConfigurationError(f"unknown {command} option(s) in config: {sorted(unknown)}")
                config.update(value)
            elif key not in DEFAULTS:
                raise ConfigurationError(f"unknown config key {key!r}")
    for key in list(config):
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _require(config, *keys):
    missing = [k for k in keys if config.get(k) in (None, "")]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


def _policy(config) -> LambdaPolicy:
    grid = tuple(config["grid"]) if config.get("grid") else DEFAULT_GRID
    return LambdaPolicy(grid, config.get("lam"), config.get("val_fraction", 0.1), config["seed"])


def _run_cached(config, command, encoder, inputs, compute):
    """Return ``(document, computed)``; consults and fills the store when configured."""
    key_config = {k: v for k, v in config.items() if k not in ("out", "store", "force")}
    key_config["inputs"] = inputs
    doc = make_document(command, encoder, key_config, None)
    store = ResultStore(config["store"]) if config.get("store") else None
    if store is not None and not config.get("force"):
        hit = store.get(command, encoder, doc["key"])
        if hit is not None:
            return hit, False
    doc["result"] = compute()
    if store is not None:
        store.put(doc, force=bool(config.get("force")))
    return doc, True


def _emit(config, doc, text_out=None):
    if config.get("out"):
        atomic_write(config["out"], pretty_json(doc))
        if text_out:
            print(text_out)
    else:
        if text_out:
            print(text_out, file=sys.stderr)
        sys.stdout.write(pretty_json(doc))


def cmd_decompose(config) -> int:
    _require(config, "train", "test")
    if config["ref_risk"] is None and config["raw_train"] is None:
        raise UsageError("hr_FF needs a source: pass --ref-risk or --raw-train")
    if config["ref_risk"] is not None and config["raw_train"] is not None:
        raise UsageError("--ref-risk and --raw-train are mutually exclusive")
    encoder = config["encoder"] or Path(config["train"]).stem
    inputs = {k: file_digest(config[k]) for k in ("train", "test", "raw_train") if config.get(k)}

    def compute():
        train, test = load_fvec(config["train"]), load_fvec(config["test"])
        source = load_fvec(config["raw_train"]) if config["raw_train"] else float(config["ref_risk"])
        plan = make_split_plan(train, test, config["sub_size"], config["seed"])
        policy = _policy(config)
        cfg = TrainConfig(seed=config["seed"])
        est, comps = estimate_components(train, test, plan, source, policy, cfg, config["bayes_risk"])
        result = {"components": comps.to_dict(), "provenance": est.provenance, "lambdas": est.lambdas,
                  "n_train": train.n, "n_test": test.n, "sub_size": plan.sub_size,
                  "n_probe_params": (train.d + 1) * train.n_classes}
        if config["alt"]:
            result["alternative"] = alternative_components(train, test, policy, cfg, estimates=est).to_dict()
        return result

    doc, _ = _run_cached(config, "decompose", encoder, inputs, compute)
    comps = RiskComponents.from_dict(doc["result"]["components"])
    _emit(config, doc, component_table(components_rows(comps)))
    return 0


def cmd_fewshot(config) -> int:
    _require(config, "train", "test")
    try:
        settings = [parse_setting(s).label for s in config["settings"]]
    except ParseError as exc:
        raise UsageError(f"--settings: {exc}")
    if int(config["seeds"]) < 1:
        raise UsageError("--seeds must be >= 1")
    config["settings"] = settings
    encoder = config["encoder"] or Path(config["train"]).stem
    inputs = {k: file_digest(config[k]) for k in ("train", "test")}
    seeds = list(range(config["seed"], config["seed"] + int(config["seeds"])))

    def compute():
        train, test = load_fvec(config["train"]), load_fvec(config["test"])
        results = fewshot_suite(train, test, settings, seeds, _policy(config), TrainConfig(seed=config["seed"]))
        docs = [r.to_dict() for r in results]
        means = {d["setting"]: d["mean"] for d in docs}
        return {"settings": docs, "seeds": seeds,
                "accuracy": dict(zip(ACCURACY_SETTINGS, accuracy_row(means)))}

    doc, _ = _run_cached(config, "fewshot", encoder, inputs, compute)
    table = to_csv(fewshot_rows(doc["result"]["settings"]), FEWSHOT_COLUMNS)
    if config.get("out"):
        atomic_write(Path(config["out"]).with_suffix(".csv"), table)
    _emit(config, doc, table.rstrip("\n"))
    return 0


def cmd_stats(config) -> int:
    _require(config, "input")
    inputs = {k: file_digest(config[k]) for k in ("input", "pairs") if config.get(k)}

    def compute():
        Z = load_fvec(config["input"]).features
        Z2 = load_fvec(config["pairs"]).features if config["pairs"] else None
        return rep_stats(Z, Z2, config["atol"], config["rtol"]).to_dict()

    doc, _ = _run_cached(config, "stats", Path(config["input"]).stem, inputs, compute)
    _emit(config, doc)
    return 0


def load_observations(path) -> list:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})")
    if isinstance(doc, dict):
        doc = doc.get("observations", [])
    try:
        return [ScalingObservation.from_dict(o) for o in doc]
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"{path}: malformed observation ({exc})")


def cmd_scaling(config) -> int:
    _require(config, "obs")
    inputs = {"obs": file_digest(config["obs"])}

    def compute():
        obs = load_observations(config["obs"])
        laws = ["decomposition", "standard"] if config["law"] == "both" else [config["law"]]
        out = {"n_obs": len(obs), "holdout": config["holdout"]}
        for law in laws:
            if config["holdout"]:
                fit = evaluate_holdout(obs, config["holdout"], law, config["seed"], int(config["n_holdout"]))
            else:
                fit = fit_decomposition_law(obs) if law == "decomposition" else fit_standard_law(obs)
            out[law] = fit.to_dict()
        return out

    doc, _ = _run_cached(config, "scaling", "scaling", inputs, compute)
    _emit(config, doc)
    return 0


def _task(config, seed):
    from .synth import gaussian_task

    kwargs = {k: config[k] for k in TASK_DEFAULTS if config.get(k) is not None}
    return gaussian_task(seed=seed, **kwargs)


def cmd_synth(config) -> int:
    from .synth import (EncoderSpec, encode_splits, gen_gaussian_task, load_encoder_specs,
                        tradeoff_sweep)

    if config["action"] == "gen":
        _require(config, "out_dir")
        out_dir = Path(config["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        task = _task(config, config["seed"])
        raw_pre, raw_tr, raw_te = gen_gaussian_task(task)
        written = {}
        for name, ds in (("pretrain", raw_pre), ("train", raw_tr), ("test", raw_te)):
            save_fvec(ds, out_dir / f"{name}.fvec")
            written[name] = str(out_dir / f"{name}.fvec")
        if config["encoder"]:
            spec = EncoderSpec(config["encoder"], d_out=config["d_out"], seed=config["seed"])
            tr, te = encode_splits(spec, raw_pre, raw_tr, raw_te, config["pretrain_on"])
            for name, ds in (("feat_train", tr), ("feat_test", te)):
                save_fvec(ds, out_dir / f"{name}.fvec")
                written[name] = str(out_dir / f"{name}.fvec")
        doc = {"command": "synth gen", "task": task.to_dict(), "files": written}
        atomic_write(out_dir / "task.json", pretty_json(doc))
        _emit(config, doc)
        return 0

    if config["encoders"]:
        specs = load_encoder_specs(config["encoders"])
    else:
        specs = [EncoderSpec("constant"), EncoderSpec("random_projection", d_out=8),
                 EncoderSpec("identity"), EncoderSpec("one_hot_train")]
    seeds = list(range(config["seed"], config["seed"] + int(config["seeds"])))
    task = _task(config, config["seed"])
    policy = LambdaPolicy(fixed=config["lam"]) if config["lam"] is not None else LambdaPolicy()
    table = tradeoff_sweep(task, specs, seeds=seeds, policy=policy, pretrain_on=config["pretrain_on"])
    config = {**config, "encoder_specs": [s.to_dict() for s in specs], "seed_list": seeds}
    store = ResultStore(config["store"]) if config.get("store") else None
    per_encoder = []
    for spec, label in zip(specs, table.labels()):
        rows = [r for r in table.rows if r.encoder == label]
        est = RiskEstimates(*(float(np.mean([getattr(r.components.estimates, k) for r in rows]))
                              for k in ("hr_FF", "hr_AF", "hr_AS", "hr_US")))
        comps = decompose(est)
        entry = {"encoder": label, "components": comps.to_dict(),
                 "seeds": [r.seed for r in rows]}
        if store is not None:
            key_cfg = {k: v for k, v in config.items() if k not in ("out", "store", "force")}
            key_cfg["encoder_spec"] = spec.to_dict()
            d_probe = _probe_dim(spec, task)
            result = {"components": comps.to_dict(), "n_train": task.n_tr, "n_test": task.n_te,
                      "n_probe_params": (d_probe + 1) * task.n_classes}
            store.put(make_document("decompose", label, key_cfg, result), force=bool(config["force"]))
            if config["fewshot"]:
                store.put(make_document("fewshot", label, key_cfg,
                                        _synth_fewshot(spec, task, seeds, policy)),
                          force=bool(config["force"]))
        per_encoder.append(entry)
    doc = {"command": "synth sweep", "config": {k: v for k, v in config.items() if k != "force"},
           "encoders": per_encoder,
           "rows": [{"encoder": r.encoder, "seed": r.seed, **r.components.to_dict()} for r in table.rows],
           "frontier": [{"encoder": e, "usability": u, "probe_gen": p} for e, u, p in table.frontier()]}
    if config.get("out"):
        atomic_write(Path(config["out"]).with_suffix(".frontier.csv"), to_csv(doc["frontier"], FRONTIER_COLUMNS))
    _emit(config, doc, to_csv(doc["frontier"], FRONTIER_COLUMNS).rstrip("\n"))
    return 0


def _probe_dim(spec, task) -> int:
    if spec.kind in ("identity", "noisy_identity"):
        return task.d_raw
    if spec.kind == "one_hot_train":
        return task.n_tr
    return spec.d_out or 1


def _synth_fewshot(spec, task, seeds, policy) -> dict:
    from .synth import encode_splits, gen_gaussian_task

    raw_pre, raw_tr, raw_te = gen_gaussian_task(task.with_seed(seeds[0]))
    if spec.kind in ("random_projection", "noisy_identity"):
        spec = replace(spec, seed=spec.seed + seeds[0])
    tr, te = encode_splits(spec, raw_pre, raw_tr, raw_te)
    results = fewshot_suite(tr, te, DEFAULT_SETTINGS, seeds, policy)
    return {"settings": [r.to_dict() for r in results], "seeds": list(seeds)}


def cmd_analyze(config) -> int:
    _require(config, "table", "method", "hparam", "metric")
    inputs = {"table": file_digest(config["table"])}

    def compute():
        metrics = [config["metric"], *[m for m in config["metrics"] if m != config["metric"]]]
        table = ModelTable.from_csv(config["table"], metrics)
        if config["ignore"]:
            table = ModelTable(table.frame.drop(columns=config["ignore"]), metrics)
        if config["method"] == "ca":
            fit = controlled_fit(table, config["hparam"], config["metric"], config["log_hparam"],
                                 config["log_metric"])
        else:
            fit = global_fit(table, config["hparam"], config["controls"], config["metric"],
                             config["log_hparam"], config["log_metric"])
        return fit.to_dict()

    doc, _ = _run_cached(config, "analyze", config["hparam"], inputs, compute)
    _emit(config, doc)
    return 0


def cmd_report(config) -> int:
    _require(config, "out_dir")
    if not config.get("store"):
        raise UsageError(f"report needs --store or ${STORE_ENV}")
    bundle = build_report(ResultStore(config["store"]))
    out_dir = Path(config["out_dir"])
    for name, text in bundle.items():
        atomic_write(out_dir / name, text)
    print("\n".join(str(out_dir / n) for n in bundle))
    return 0


COMMANDS = {"decompose": cmd_decompose, "fewshot": cmd_fewshot, "stats": cmd_stats,
            "scaling": cmd_scaling, "synth": cmd_synth, "analyze": cmd_analyze, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](config)
    except RiskdecError as exc:
        print(f"riskdec: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"riskdec: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
