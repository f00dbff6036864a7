"""Command-line surface: reproducible runs with JSON manifests.

Every command writes its declared outputs plus a manifest recording the
inputs, all effective parameter values (defaults included), the seed, the
package version, and wall time, so a run can be reproduced from the
manifest alone. Usage errors exit 1 with an `error[usage]:` line; data
errors exit 2 with `error[data]:`.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
import time
from importlib import metadata

import numpy as np

from . import analysis, dataset, experiment, regime, simgen, varmodel
from ._parallel import default_threads
from .errors import RegvarError
from .solver import PenaltySpec, SolverConfig
from .sparse import SparseMatrix


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _version() -> str:
    try:
        return metadata.version("regvar")
    except metadata.PackageNotFoundError:
        return "unknown"


def _write_manifest(path, command: str, params: dict, outputs: list, t0: float):
    manifest = {
        "command": command,
        "parameters": params,
        "outputs": [str(o) for o in outputs],
        "versions": {"regvar": _version(), "numpy": np.__version__},
        "wall_time_s": time.perf_counter() - t0,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest_path(out_path: str) -> str:
    return str(out_path) + ".manifest.json"


def _parse_clock(text: str) -> dt.time:
    hh, mm = text.split(":")
    return dt.time(int(hh), int(mm))


def _solver_config(args) -> SolverConfig:
    return SolverConfig(
        tolerance=args.tolerance,
        lambda_grid_size=args.lambda_grid_size,
        lambda_min_ratio=args.lambda_min_ratio,
        folds=args.folds,
        seed=args.seed,
        cv_tolerance=args.cv_tolerance,
    )


def _add_solver_flags(sub):
    sub.add_argument("--tolerance", type=float, default=1e-8)
    sub.add_argument("--cv-tolerance", dest="cv_tolerance", type=float, default=1e-4)
    sub.add_argument("--lambda-grid-size", dest="lambda_grid_size", type=int, default=50)
    sub.add_argument("--lambda-min-ratio", dest="lambda_min_ratio", type=float, default=1e-3)
    sub.add_argument("--folds", type=int, default=5)
    sub.add_argument("--seed", type=int, default=0)


def model_to_json(model, path) -> None:
    """Serialize a predictor; floats keep full round-trip precision."""

    def linear(m):
        return {
            "window": list(m.window),
            "lags": m.lags,
            "lambda": (
                m.lambdas.tolist() if isinstance(m.lambdas, np.ndarray) else m.lambdas
            ),
            "b": [[float(v) for v in row] for row in m.b],
            "A": m.A.to_triplets(),
            "A_shape": list(m.A.shape),
        }

    if isinstance(model, regime.SwitchPredictor):
        doc = {
            "method": "rs_lasso",
            "sections": model.sections,
            "t_switch": model.t_switch,
            "left": linear(model.left),
        }
        if model.right is not None:
            doc["right"] = linear(model.right)
    elif isinstance(model, varmodel.TimeSlicedPredictor):
        doc = {
            "method": "ts_lasso",
            "sections": model.sections,
            "window": list(model.window),
            "models": [linear(m) for m in model.models],
        }
    elif isinstance(model, varmodel.LinearPredictor):
        doc = {"method": model.method, "sections": model.sections, **linear(model)}
    else:
        raise ValueError(f"cannot serialize predictor of type {type(model).__name__}")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def model_from_json(path):
    with open(path) as fh:
        doc = json.load(fh)
    sections = doc["sections"]

    def linear(d, method):
        return varmodel.LinearPredictor(
            sections=sections,
            window=tuple(d["window"]),
            b=np.asarray(d["b"], dtype=np.float64),
            A=SparseMatrix.from_triplets(tuple(d["A_shape"]), d["A"]),
            method=method,
            lambdas=d.get("lambda"),
            lags=d.get("lags", 1),
        )

    if "t_switch" in doc:
        left = linear(doc["left"], "lasso")
        right = linear(doc["right"], "lasso") if "right" in doc else None
        return regime.SwitchPredictor(
            t_switch=doc["t_switch"], left=left, right=right
        )
    if doc.get("method") == "ts_lasso":
        return varmodel.TimeSlicedPredictor(
            sections=sections,
            window=tuple(doc["window"]),
            models=[linear(m, "lasso") for m in doc["models"]],
        )
    return linear(doc, doc.get("method", "lasso"))


def _cmd_ingest(args) -> list:
    spec = dataset.SlotSpec(
        day_start=_parse_clock(args.day_start),
        day_end=_parse_clock(args.day_end),
        slot_minutes=args.slot_minutes,
    )
    with open(args.sections) as fh:
        sections = [line.strip() for line in fh if line.strip()]
    with open(args.raw) as fh:
        logs = dataset.parse_raw_logs(fh)
    tensor = dataset.aggregate(logs, spec, sections)
    dataset.save_days(tensor, args.out)
    return [args.out]


def _cmd_split(args) -> list:
    tensor = dataset.load_days(args.data)
    spec = dataset.SplitSpec(args.train, args.val, args.test)
    train, val, test = dataset.split_days(tensor, spec)
    if args.impute:
        reference = dataset.impute_historical(train)
        train = reference
        val = dataset.impute_historical(val, reference)
        test = dataset.impute_historical(test, reference)
    outs = []
    for part, name in ((train, "train"), (val, "val"), (test, "test")):
        path = f"{args.out_prefix}.{name}.csv"
        dataset.save_days(part, path)
        outs.append(path)
    return outs


def _cmd_fit(args) -> list:
    train = dataset.load_days(args.data)
    if not train.mask.all():
        train = dataset.impute_historical(train)
    config = _solver_config(args)
    window = None
    if args.window is not None:
        lo, hi = args.window.split(":")
        window = (int(lo), int(hi))
    if args.method == "rs_lasso":
        curve = regime.cv_risk_curve(
            train, folds=args.folds, config=config,
            lambda_policy=args.lambda_policy, threads=args.threads,
        )
        t_hat = regime.detect_switch(curve)
        model = regime.fit_switch(
            train, t_hat, config=config, lambda_mode="cv_per_line",
            cv_rule=args.cv_rule,
        )
    elif args.method == "ts_lasso":
        model, _ = varmodel.fit_ts(
            train, window=window, config=config, lambda_mode="cv_per_line",
            cv_rule=args.cv_rule,
        )
    elif args.method == "ha":
        model = varmodel.baseline_ha(train, window=window)
    else:
        family = {"ols": "none"}.get(args.method, args.method)
        penalty = PenaltySpec(family=family, lam=args.lam, alpha=args.alpha)
        lambda_mode = "fixed"
        if args.cv and family != "none":
            lambda_mode = "cv_per_line" if family != "group_lasso" else "cv_shared"
        model, _ = varmodel.fit(
            train, window=window, penalty=penalty, config=config,
            lambda_mode=lambda_mode, cv_rule=args.cv_rule, lags=args.lags,
            diagonal=args.diagonal,
        )
    model_to_json(model, args.out)
    return [args.out]


def _cmd_predict(args) -> list:
    model = model_from_json(args.model)
    data = dataset.load_days(args.data)
    if not data.mask.all():
        raise RegvarError("prediction input must be fully imputed")
    preds = np.stack([model.predict(day) for day in data.values])
    if isinstance(model, regime.SwitchPredictor):
        lo, hi = model.left.window[0], (
            model.right.window[1] if model.right else model.left.window[1]
        )
    else:
        lo, hi = model.window
    out = dataset.DayTensor(
        days=list(data.days),
        sections=list(data.sections),
        values=np.concatenate(
            [np.full((data.n_days, data.n_sections, lo + 1), np.nan), preds], axis=2
        ),
        mask=np.concatenate(
            [
                np.zeros((data.n_days, data.n_sections, lo + 1), dtype=bool),
                np.ones_like(preds, dtype=bool),
            ],
            axis=2,
        ),
    )
    dataset.save_days(out, args.out)
    return [args.out]


def _cmd_evaluate(args) -> list:
    pred = dataset.load_days(args.pred)
    truth = dataset.load_days(args.truth)
    w = pred.slot_count - 1
    preds = pred.values[:, :, 1:]
    if not pred.mask[:, :, 1:].all():
        raise RegvarError("prediction tensor has missing predicted cells")
    subset = None
    if args.sections is not None:
        with open(args.sections) as fh:
            subset = [line.strip() for line in fh if line.strip()]
    report = analysis.evaluate(
        preds, truth, window=(0, w), section_subset=subset
    )
    report.to_json(args.out)
    return [args.out]


def _cmd_detect_switch(args) -> list:
    train = dataset.load_days(args.data)
    if not train.mask.all():
        train = dataset.impute_historical(train)
    config = _solver_config(args)
    curve = regime.cv_risk_curve(
        train,
        folds=args.folds,
        config=config,
        lambda_policy=args.lambda_policy,
        threads=args.threads,
    )
    curve.to_csv(args.out)
    t_hat = regime.detect_switch(curve)
    print(f"t_hat={t_hat}")
    return [args.out]


def _cmd_simulate(args) -> list:
    spec = simgen.GeneratorSpec(
        p=args.p,
        n=args.days,
        slots=args.slots,
        switch_t=args.switch,
        avg_degree=args.avg_degree,
        seed=args.seed,
        slot_hours=tuple(range(args.slots)) if args.raw_t else None,
    )
    tensor, truth = simgen.gen_dataset(spec)
    dataset.save_days(tensor, args.out)
    doc = {
        "seed": truth.seed,
        "switch_t": truth.switch_t,
        "slot_hours": list(truth.slot_hours),
        "b": [[float(v) for v in row] for row in truth.b],
        "A": truth.A.to_triplets(),
        "A_prime": truth.A_prime.to_triplets(),
        "p": spec.p,
        "slots": spec.slots,
    }
    with open(args.truth, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return [args.out, args.truth]


def _cmd_export_graph(args) -> list:
    model = model_from_json(args.model)
    if isinstance(model, regime.SwitchPredictor):
        model = model.left
    edges = analysis.export_edges(model, min_abs_weight=args.min_weight)
    edges.to_csv(args.out)
    return [args.out]


def _cmd_influence(args) -> list:
    model = model_from_json(args.model)
    if isinstance(model, regime.SwitchPredictor):
        model = model.left
    analysis.influence_to_csv(model, args.out)
    return [args.out]


def _cmd_variable_sections(args) -> list:
    tensor = dataset.load_days(args.data)
    if not tensor.mask.all():
        tensor = dataset.impute_historical(tensor)
    chosen = analysis.variable_sections(tensor, restarts=50, seed=args.seed)
    with open(args.out, "w") as fh:
        for section in chosen:
            fh.write(section + "\n")
    return [args.out]


def _cmd_reproduce_sim(args) -> list:
    results = experiment.reproduce_sim(
        base_seed=args.seed,
        num_seeds=args.num_seeds,
        p=args.p,
        n=args.days,
        slots=args.slots,
        switch_t=args.switch,
        avg_degree=args.avg_degree,
        folds=args.folds,
        threads=args.threads,
    )
    results_path = f"{args.out_prefix}.results.json"
    table_path = f"{args.out_prefix}.table.csv"
    experiment.write_results(results, results_path)
    experiment.write_table(results, table_path)
    return [results_path, table_path]


def build_parser() -> _Parser:
    parser = _Parser(prog="regvar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_threads(p):
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $REGVAR_THREADS or 1)")

    s = sub.add_parser("ingest", help="aggregate raw logs into a day tensor")
    s.add_argument("--raw", required=True)
    s.add_argument("--sections", required=True)
    s.add_argument("--slot-minutes", dest="slot_minutes", type=int, default=15)
    s.add_argument("--day-start", dest="day_start", default="15:00")
    s.add_argument("--day-end", dest="day_end", default="20:00")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_ingest, seed=0)

    s = sub.add_parser("split", help="chronological train/val/test split")
    s.add_argument("--data", required=True)
    s.add_argument("--train", type=float, default=0.63)
    s.add_argument("--val", type=float, default=0.27)
    s.add_argument("--test", type=float, default=0.10)
    s.add_argument("--impute", action="store_true",
                   help="impute all splits from training-history averages")
    s.add_argument("--out-prefix", dest="out_prefix", required=True)
    s.set_defaults(fn=_cmd_split, seed=0)

    s = sub.add_parser("fit", help="fit a predictor on a day tensor")
    s.add_argument("--data", required=True)
    s.add_argument("--method", default="lasso",
                   choices=["ols", "lasso", "ridge", "elastic_net", "group_lasso",
                            "ha", "rs_lasso", "ts_lasso"])
    s.add_argument("--lam", type=float, default=0.0)
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--cv", action="store_true", help="select lambda by CV")
    s.add_argument("--cv-rule", dest="cv_rule", choices=["min", "1se"], default="min")
    s.add_argument("--window", default=None, help="slot window lo:hi")
    s.add_argument("--lags", type=int, default=1)
    s.add_argument("--diagonal", action="store_true")
    s.add_argument("--lambda-policy", dest="lambda_policy",
                   choices=["prepass", "nested", "fixed"], default="prepass")
    s.add_argument("--out", required=True)
    _add_solver_flags(s)
    add_threads(s)
    s.set_defaults(fn=_cmd_fit)

    s = sub.add_parser("predict", help="predict each day with a saved model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_predict, seed=0)

    s = sub.add_parser("evaluate", help="score predictions against truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--sections", default=None,
                   help="optional file of section ids for a subset breakdown")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_evaluate, seed=0)

    s = sub.add_parser("detect-switch", help="cross-validated switch detection")
    s.add_argument("--data", required=True)
    s.add_argument("--lambda-policy", dest="lambda_policy",
                   choices=["prepass", "nested", "fixed"], default="prepass")
    s.add_argument("--out", default="curve.csv")
    _add_solver_flags(s)
    add_threads(s)
    s.set_defaults(fn=_cmd_detect_switch)

    s = sub.add_parser("simulate", help="generate a synthetic benchmark dataset")
    s.add_argument("--p", type=int, required=True)
    s.add_argument("--days", type=int, required=True)
    s.add_argument("--slots", type=int, default=20)
    s.add_argument("--switch", type=int, default=11)
    s.add_argument("--avg-degree", dest="avg_degree", type=float, default=8.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--raw-t", dest="raw_t", action="store_true",
                   help="literal integer-slot intercept profile")
    s.add_argument("--out", required=True)
    s.add_argument("--truth", required=True)
    s.set_defaults(fn=_cmd_simulate)

    s = sub.add_parser("export-graph", help="dependency arcs of a fitted model")
    s.add_argument("--model", required=True)
    s.add_argument("--min-weight", dest="min_weight", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_export_graph, seed=0)

    s = sub.add_parser("influence", help="per-section influence criterion")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_influence, seed=0)

    s = sub.add_parser("variable-sections", help="high-variability section cluster")
    s.add_argument("--data", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_variable_sections)

    s = sub.add_parser("reproduce-sim", help="full synthetic benchmark pipeline")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--num-seeds", dest="num_seeds", type=int, default=20)
    s.add_argument("--p", type=int, default=100)
    s.add_argument("--days", type=int, default=150)
    s.add_argument("--slots", type=int, default=20)
    s.add_argument("--switch", type=int, default=11)
    s.add_argument("--avg-degree", dest="avg_degree", type=float, default=8.0)
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--out-prefix", dest="out_prefix", default="reproduce_sim")
    add_threads(s)
    s.set_defaults(fn=_cmd_reproduce_sim)

    return parser


def run(argv) -> int:
    parser = build_parser()
    t0 = time.perf_counter()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", None) is None:
            args.threads = default_threads()
        outputs = args.fn(args)
    except UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return 1
    except (RegvarError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 2
    params = {
        k: v for k, v in vars(args).items() if k not in ("fn",) and not callable(v)
    }
    if outputs:
        _write_manifest(_manifest_path(outputs[0]), args.command, params, outputs, t0)
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
