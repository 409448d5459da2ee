"""Command line surface: convert, train-fm, train-not, eval, synth.

Every run resolves its settings from defaults, then an optional config file,
then explicit flags, and writes the fully resolved config next to its
outputs; re-running from that file reproduces the outputs byte for byte.

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 training divergence.
"""

from __future__ import annotations

import os


def _configure_threads():
    # must happen before numpy first loads its BLAS
    value = os.environ.get("OT_CONVERT_THREADS")
    if value:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = value


_configure_threads()

import argparse
import json
import sys
from dataclasses import asdict

import numpy as np

from .convert import knn_convert, sinkvc_convert
from .discrete import SinkhornConfig, cost_matrix, sinkhorn
from .errors import (CapacityError, DivergenceError, NumericalError,
                     ValidationError)
from .fileio import (REQUIRED, _format_value, atomic_write_text,
                     format_kv_text, parse_kv_text, read_feature_file,
                     resolve_config, write_feature_file, write_not_pair,
                     write_velocity_field)
from .flow import FlowConfig, fm_train, plan_pair_sampler
from .metrics import frechet_distance, theorem1_check, w2_squared_empirical
from .neural import NotConfig, dataset_from_arrays, not_train
from .rng import make_rng
from . import synth as synth_tasks

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_DIVERGENCE = 4

_SINKHORN_KEYS = {
    "epsilon": ("float", 0.1),
    "sinkhorn_max_iterations": ("int", 10_000),
    "sinkhorn_tolerance": ("float", 1e-6),
}
_FLOW_KEYS = {
    "fm_hidden_dims": ("int_tuple", (512, 512, 512)),
    "fm_batch_size": ("int", 1000),
    "fm_iterations": ("int", 1000),
    "fm_learning_rate": ("float", 0.001),
    "fm_ode_steps": ("int", 100),
    "fm_ode_method": ("str", "euler"),
    "cost": ("str", "cosine_distance"),
}

SCHEMAS = {
    "convert": {
        "command": ("str", "convert"),
        "seed": ("int", 0),
        "source": ("str", REQUIRED),
        "reference": ("str", REQUIRED),
        "method": ("str", "sinkvc"),
        "k": ("int", 4),
        "model": ("str", ""),
        "out": ("str", REQUIRED),
        "report": ("str", ""),
        **_SINKHORN_KEYS,
        **_FLOW_KEYS,
    },
    "train-fm": {
        "command": ("str", "train-fm"),
        "seed": ("int", 0),
        "source": ("str", REQUIRED),
        "reference": ("str", REQUIRED),
        "out_model": ("str", REQUIRED),
        "loss_trace": ("str", ""),
        **_SINKHORN_KEYS,
        **_FLOW_KEYS,
    },
    "train-not": {
        "command": ("str", "train-not"),
        "seed": ("int", 0),
        "dataset_spec": ("str", REQUIRED),
        "out_model": ("str", REQUIRED),
        "loss_trace": ("str", ""),
        "extremal": ("bool", False),
        "w": ("optional_float", None),
        "inner_steps": ("int", 10),
        "batch_size": ("int", 128),
        "map_lr": ("float", 1e-3),
        "potential_lr": ("float", 1e-3),
        "lr_decay": ("str", "none"),
        "total_outer_iterations": ("int", 3000),
        "hidden_dims": ("int_tuple", (128, 128, 128)),
        "weight_decay": ("float", 1e-10),
        "divergence_guard": ("float", 1e8),
        "checkpoint_every": ("int", 250),
        "eval_samples": ("int", 64),
    },
    "eval": {
        "command": ("str", "eval"),
        "a": ("str", REQUIRED),
        "b": ("str", REQUIRED),
        "metrics": ("str", "w2,fd"),
        "w2_mode": ("str", "auto"),
        "epsilon": ("float", 0.01),
        "report": ("str", ""),
    },
    "synth": {
        "command": ("str", "synth"),
        "task": ("str", REQUIRED),
        "n": ("int", 500),
        "dim": ("int", 2),
        "seed": ("int", 0),
        "out_dir": ("str", REQUIRED),
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otconvert",
        description="Optimal-transport feature conversion toolkit",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    convert = sub.add_parser("convert", help="convert source frames toward a reference")
    convert.add_argument("--config")
    convert.add_argument("--source")
    convert.add_argument("--reference")
    convert.add_argument("--method", choices=("sinkvc", "knn", "fmvc"))
    convert.add_argument("--epsilon", type=float)
    convert.add_argument("--k", type=int)
    convert.add_argument("--model")
    convert.add_argument("--out")
    convert.add_argument("--report")
    convert.add_argument("--seed", type=int)
    convert.add_argument("--cost", choices=("squared_euclidean", "cosine_distance"))

    train_fm = sub.add_parser("train-fm", help="train a velocity field on plan pairs")
    train_fm.add_argument("--config")
    train_fm.add_argument("--source")
    train_fm.add_argument("--reference")
    train_fm.add_argument("--out-model", dest="out_model")
    train_fm.add_argument("--seed", type=int)
    train_fm.add_argument("--epsilon", type=float)
    train_fm.add_argument("--cost", choices=("squared_euclidean", "cosine_distance"))

    train_not = sub.add_parser("train-not", help="train a conditional transport pair")
    train_not.add_argument("--config")
    train_not.add_argument("--dataset-spec", dest="dataset_spec")
    train_not.add_argument("--out-model", dest="out_model")
    train_not.add_argument("--extremal", action=argparse.BooleanOptionalAction,
                           default=None)
    train_not.add_argument("--w", type=float)
    train_not.add_argument("--lr-decay", dest="lr_decay", choices=("none", "cosine"))
    train_not.add_argument("--seed", type=int)

    evalp = sub.add_parser("eval", help="compare two feature files")
    evalp.add_argument("--config")
    evalp.add_argument("--a")
    evalp.add_argument("--b")
    evalp.add_argument("--metrics")
    evalp.add_argument("--w2-mode", dest="w2_mode",
                       choices=("auto", "exact_small", "sinkhorn"))
    evalp.add_argument("--epsilon", type=float)
    evalp.add_argument("--report")

    synthp = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    synthp.add_argument("--config")
    synthp.add_argument("--task", choices=synth_tasks.TASK_NAMES)
    synthp.add_argument("--n", type=int)
    synthp.add_argument("--dim", type=int)
    synthp.add_argument("--seed", type=int)
    synthp.add_argument("--out-dir", dest="out_dir")

    return parser


def _resolve(args, command: str) -> dict:
    schema = SCHEMAS[command]
    raw: dict[str, str] = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as handle:
            raw.update(parse_kv_text(handle.read()))
    if raw.get("command", command) != command:
        raise ValidationError(
            f"config is for {raw['command']!r}, but the"
            f" {command!r} subcommand was invoked"
        )
    for key in schema:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = _format_value(value)
    return resolve_config(raw, schema)


def _emit_config(path: str, resolved: dict):
    atomic_write_text(path, _config_text(resolved))


def _config_text(resolved: dict) -> str:
    return format_kv_text(resolved,
                          header=f"otconvert {resolved['command']}: resolved run settings")


def _write_json(path: str, payload: dict):
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _print_json(payload: dict):
    print(json.dumps(payload, indent=2, sort_keys=True))


def _sinkhorn_config(resolved) -> SinkhornConfig:
    return SinkhornConfig(
        epsilon=resolved["epsilon"],
        max_iterations=resolved["sinkhorn_max_iterations"],
        tolerance=resolved["sinkhorn_tolerance"],
    )


def _flow_config(resolved) -> FlowConfig:
    return FlowConfig(
        hidden_dims=resolved["fm_hidden_dims"],
        batch_size=resolved["fm_batch_size"],
        iterations=resolved["fm_iterations"],
        learning_rate=resolved["fm_learning_rate"],
        ode_steps=resolved["fm_ode_steps"],
        ode_method=resolved["fm_ode_method"],
    )


def cmd_convert(resolved: dict) -> int:
    source = read_feature_file(resolved["source"])
    reference = read_feature_file(resolved["reference"])
    src = source.values.astype(np.float64)
    ref = reference.values.astype(np.float64)
    method = resolved["method"]
    if method not in ("sinkvc", "knn", "fmvc"):
        raise ValidationError(f"unknown method {resolved['method']!r}")

    report_extra = {}
    if method == "sinkvc":
        converted, report = sinkvc_convert(src, ref, cfg=_sinkhorn_config(resolved),
                                           k=resolved["k"])
        report_payload = asdict(report)
    elif method == "knn":
        converted, report = knn_convert(src, ref, k=resolved["k"])
        report_payload = asdict(report)
    else:
        from .flow import fm_pipeline

        field, converted, report = fm_pipeline(
            src, ref, _sinkhorn_config(resolved), _flow_config(resolved),
            make_rng(resolved["seed"], "train"), cost_kind=resolved["cost"])
        report_payload = asdict(report)
        if resolved["model"]:
            write_velocity_field(resolved["model"], field,
                                 config_text=_config_text(resolved))
            report_extra["model"] = resolved["model"]

    write_feature_file(resolved["out"], converted, tag=source.tag)
    report_payload.update(report_extra)
    report_payload.update({
        "source": resolved["source"],
        "reference": resolved["reference"],
        "out": resolved["out"],
        "frames": int(converted.shape[0]),
    })
    report_path = resolved["report"] or resolved["out"] + ".report.json"
    _write_json(report_path, report_payload)
    _emit_config(resolved["out"] + ".run.cfg", resolved)
    _print_json(report_payload)
    return EXIT_OK


def _loss_csv(path: str, header: str, rows):
    lines = [header]
    lines.extend(",".join(repr(v) if isinstance(v, float) else str(v) for v in row)
                 for row in rows)
    atomic_write_text(path, "\n".join(lines) + "\n")


def cmd_train_fm(resolved: dict) -> int:
    source = read_feature_file(resolved["source"]).values.astype(np.float64)
    reference = read_feature_file(resolved["reference"]).values.astype(np.float64)
    cost = cost_matrix(source, reference, resolved["cost"])
    plan = sinkhorn(cost, cfg=_sinkhorn_config(resolved))
    trace_path = resolved["loss_trace"] or resolved["out_model"] + ".loss.csv"
    try:
        field = fm_train(plan_pair_sampler(plan, source, reference),
                         _flow_config(resolved),
                         make_rng(resolved["seed"], "train"))
    except DivergenceError as err:
        if err.trace:
            _loss_csv(trace_path, "iteration,loss",
                      list(enumerate(err.trace)))
            err.args = (f"{err.args[0]} (trace written to {trace_path})",)
        raise
    write_velocity_field(resolved["out_model"], field,
                         config_text=_config_text(resolved))
    _loss_csv(trace_path, "iteration,loss",
              list(enumerate(field.training_loss_trace)))
    _emit_config(resolved["out_model"] + ".run.cfg", resolved)
    _print_json({
        "out_model": resolved["out_model"],
        "loss_trace": trace_path,
        "iterations": len(field.training_loss_trace),
        "final_loss": field.training_loss_trace[-1],
        "plan_iterations": plan.iterations_used,
        "plan_marginal_error": plan.marginal_error,
    })
    return EXIT_OK


def parse_dataset_spec(path: str):
    """Read a condition listing: labels plus per-label vector/source/target.

    Format (flat key-value text):

        conditions = plus,minus
        plus.vector = 1,0
        plus.source = plus_source.otf
        plus.target = plus_target.otf
        ...

    Paths are resolved relative to the spec file's directory.
    """
    with open(path, "r", encoding="utf-8") as handle:
        raw = parse_kv_text(handle.read())
    if "conditions" not in raw:
        raise ValidationError(f"{path}: missing required config key 'conditions'")
    labels = [part.strip() for part in raw.pop("conditions").split(",") if part.strip()]
    if not labels:
        raise ValidationError(f"{path}: 'conditions' names no labels")
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    expected = set()
    for label in labels:
        expected.update({f"{label}.vector", f"{label}.source", f"{label}.target"})
    unknown = set(raw) - expected
    if unknown:
        raise ValidationError(
            f"{path}: unknown config key(s): {', '.join(sorted(unknown))}"
        )
    for label in labels:
        for field in ("vector", "source", "target"):
            if f"{label}.{field}" not in raw:
                raise ValidationError(
                    f"{path}: missing required config key '{label}.{field}'"
                )
        vector = np.array([float(part) for part in raw[f"{label}.vector"].split(",")])
        source = read_feature_file(os.path.join(base, raw[f"{label}.source"]))
        target = read_feature_file(os.path.join(base, raw[f"{label}.target"]))
        entries.append((label, vector,
                        source.values.astype(np.float64),
                        target.values.astype(np.float64)))
    return entries


def cmd_train_not(resolved: dict) -> int:
    entries = parse_dataset_spec(resolved["dataset_spec"])
    dataset = dataset_from_arrays(entries)
    cfg = NotConfig(
        inner_steps=resolved["inner_steps"],
        batch_size=resolved["batch_size"],
        map_lr=resolved["map_lr"],
        potential_lr=resolved["potential_lr"],
        lr_decay=resolved["lr_decay"],
        total_outer_iterations=resolved["total_outer_iterations"],
        extremal=resolved["extremal"],
        w=resolved["w"],
        hidden_dims=resolved["hidden_dims"],
        weight_decay=resolved["weight_decay"],
        divergence_guard=resolved["divergence_guard"],
        checkpoint_every=resolved["checkpoint_every"],
        eval_samples=resolved["eval_samples"],
    )
    trace_path = resolved["loss_trace"] or resolved["out_model"] + ".loss.csv"

    def trace_rows(trace):
        return [(i, f, t) for i, (f, t) in
                enumerate(zip(trace.potential_losses, trace.map_losses), start=1)]

    try:
        pair, trace = not_train(dataset, cfg, make_rng(resolved["seed"], "train"))
    except DivergenceError as err:
        if err.trace is not None:
            _loss_csv(trace_path, "iteration,potential_loss,map_loss",
                      trace_rows(err.trace))
            err.args = (f"{err.args[0]} (trace written to {trace_path})",)
        raise
    write_not_pair(resolved["out_model"], pair, config_text=_config_text(resolved))
    _loss_csv(trace_path, "iteration,potential_loss,map_loss", trace_rows(trace))
    _emit_config(resolved["out_model"] + ".run.cfg", resolved)
    last = trace.checkpoints[-1]
    _print_json({
        "out_model": resolved["out_model"],
        "loss_trace": trace_path,
        "outer_iterations": len(trace.map_losses),
        "final_potential_loss": trace.potential_losses[-1],
        "final_map_loss": trace.map_losses[-1],
        "checkpoint": {
            "iteration": last.iteration,
            "conditions": [asdict(ev) for ev in last.conditions],
        },
    })
    return EXIT_OK


def cmd_eval(resolved: dict) -> int:
    a = read_feature_file(resolved["a"]).values.astype(np.float64)
    b = read_feature_file(resolved["b"]).values.astype(np.float64)
    wanted = [part.strip() for part in resolved["metrics"].split(",") if part.strip()]
    allowed = ("w2", "fd", "theorem1")
    for name in wanted:
        if name not in allowed:
            raise ValidationError(
                f"unknown metric {name!r}; choose from {', '.join(allowed)}"
            )
    if not wanted:
        raise ValidationError("no metrics requested")
    mode = None if resolved["w2_mode"] == "auto" else resolved["w2_mode"]
    cfg = SinkhornConfig(epsilon=resolved["epsilon"])
    payload: dict = {"a": resolved["a"], "b": resolved["b"],
                     "n_a": int(a.shape[0]), "n_b": int(b.shape[0])}
    try:
        if "w2" in wanted:
            # unit convention (2x the half-squared-cost optimum), so the
            # value is directly comparable to fd and theorem1.two_w2sq
            payload["w2_squared"] = 2.0 * w2_squared_empirical(a, b, mode=mode,
                                                               cfg=cfg)
        if "fd" in wanted:
            payload["frechet"] = frechet_distance(a, b)
        if "theorem1" in wanted:
            fd, two_w2sq, holds = theorem1_check(a, b, mode=mode, cfg=cfg)
            payload["theorem1"] = {"fd": fd, "two_w2sq": two_w2sq,
                                   "holds": bool(holds)}
    except CapacityError as err:
        raise ValidationError(
            f"{err}; rerun with --w2-mode sinkhorn"
        ) from err
    _print_json(payload)
    if resolved["report"]:
        _write_json(resolved["report"], payload)
        _emit_config(resolved["report"] + ".run.cfg", resolved)
    return EXIT_OK


def _spec_lines(conditions) -> str:
    lines = [f"conditions = {','.join(label for label, *_ in conditions)}"]
    for label, vector, source_name, target_name in conditions:
        lines.append(f"{label}.vector = {','.join(repr(float(v)) for v in vector)}")
        lines.append(f"{label}.source = {source_name}")
        lines.append(f"{label}.target = {target_name}")
    return "\n".join(lines) + "\n"


def cmd_synth(resolved: dict) -> int:
    task_name = resolved["task"]
    if task_name not in synth_tasks.TASK_NAMES:
        raise ValidationError(
            f"unknown task {task_name!r}; choose from {', '.join(synth_tasks.TASK_NAMES)}"
        )
    out_dir = resolved["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    rng = make_rng(resolved["seed"], "synth")
    n, dim = resolved["n"], resolved["dim"]
    files = []

    def put_features(name, values, tag):
        path = os.path.join(out_dir, name)
        write_feature_file(path, values, tag=tag)
        files.append(name)

    if task_name == "two_conditions":
        task = synth_tasks.two_conditions(n, dim, rng)
        spec_conditions = []
        for label, vector, source, target in task.entries:
            put_features(f"{label}_source.otf", source, f"{label}-source")
            put_features(f"{label}_target.otf", target, f"{label}-target")
            spec_conditions.append((label, vector,
                                    f"{label}_source.otf", f"{label}_target.otf"))
        truth = task.truth
    else:
        task = getattr(synth_tasks, task_name)(n, dim, rng)
        put_features("source.otf", task.source, "source")
        put_features("target.otf", task.target, "target")
        truth = dict(task.truth)
        if task.target_labels is not None:
            truth["target_labels"] = task.target_labels.tolist()
        if task.source_labels is not None:
            truth["source_labels"] = task.source_labels.tolist()
        spec_conditions = [("only", np.array([1.0]), "source.otf", "target.otf")]

    _write_json(os.path.join(out_dir, "truth.json"), truth)
    files.append("truth.json")
    atomic_write_text(os.path.join(out_dir, "dataset.spec"),
                      _spec_lines(spec_conditions))
    files.append("dataset.spec")
    _emit_config(os.path.join(out_dir, "run.cfg"), resolved)
    files.append("run.cfg")
    _print_json({"out_dir": out_dir, "task": task_name, "files": sorted(files)})
    return EXIT_OK


_COMMANDS = {
    "convert": cmd_convert,
    "train-fm": cmd_train_fm,
    "train-not": cmd_train_not,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def entry(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        resolved = _resolve(args, args.subcommand)
        return _COMMANDS[args.subcommand](resolved)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DivergenceError as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


def main():  # console-script shim
    raise SystemExit(entry())
