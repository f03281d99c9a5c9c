"""Command-line entry point binding the library into reproducible workflows.

Subcommands:

  generate    write a seeded synthetic dataset (JSON lines, optionally .gz)
  preprocess  estimate per-transition homographies from stored flow grids
  train       fit a forecaster; writes checkpoints, a step log, a loss curve
  eval        score a method on a dataset; prints "ADE: x.xx  FDE: y.yy"
  matrix      run the cross-domain grid; writes report, table, drop summary

Every command writes a run manifest holding the resolved configuration,
input and output digests, the seed, the package version, and timestamps.
Timestamps live only in manifests, so the data artifacts themselves are
byte-identical across reruns with the same inputs.

Option precedence is flag > config file > environment > built-in default;
the only environment override is EMAG_SEED, which replaces the built-in
default seed.  Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DOMAIN_CONFIGS,
    DatasetStats,
    ScenarioConfig,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .ego_motion import (
    EgoMotionError,
    FlowField,
    flow_to_correspondences,
    normalize_homography,
    ransac_homography,
)
from .model import (
    EmagNet,
    ModelConfig,
    Seq2SeqConfig,
    Seq2SeqNet,
    load_checkpoint,
    model_type_name,
    save_checkpoint,
)
from .training import (
    DEFAULT_VARIANTS,
    TrainConfig,
    baseline_predictions,
    evaluate_predictions,
    fit,
    format_matrix_table,
    normalize_variant,
    run_matrix,
    variant_setup,
)


class UsageError(Exception):
    """Bad flags, bad config, or missing inputs; exits with code 2."""


# ---------------------------------------------------------------------------
# shared plumbing


def default_seed():
    raw = os.environ.get("EMAG_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"EMAG_SEED must be an integer, got {raw!r}") from None


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            config = json.load(f)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise UsageError(f"config file {path} must contain a JSON object")
    return config


def check_keys(d, allowed, context):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise UsageError(
            f"unknown {context} key(s): {', '.join(unknown)} "
            f"(valid: {', '.join(sorted(allowed))})"
        )


def _field_names(cls):
    return {f.name for f in dataclasses.fields(cls)}


def resolve(flag_value, config, key, fallback):
    """flag > config > fallback."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return fallback


def resolve_int(flag_value, config, key, fallback, minimum=None):
    value = resolve(flag_value, config, key, fallback)
    try:
        value = int(value)
    except (TypeError, ValueError):
        raise UsageError(f"--{key.replace('_', '-')} must be an integer") from None
    if minimum is not None and value < minimum:
        raise UsageError(f"--{key.replace('_', '-')} must be >= {minimum}")
    return value


def _utc_now():
    return datetime.now(timezone.utc).isoformat()


def write_manifest(path, args, seed, config, inputs, outputs, started):
    """One manifest per command run; the only artifact holding timestamps."""
    manifest = {
        "command": args.command,
        "argv": list(args._argv),
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {str(p): file_digest(p) for p in outputs},
        "started": started,
        "finished": _utc_now(),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def manifest_path_for(out_file):
    return Path(str(out_file) + ".manifest.json")


def load_samples(path):
    if not Path(path).exists():
        raise UsageError(f"dataset file not found: {path}")
    samples = load_dataset(path)
    if not samples:
        raise UsageError(f"dataset {path} contains no sequences")
    return samples


# ---------------------------------------------------------------------------
# plotting (lazy matplotlib so non-plot commands never import it)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_svg(fig, path):
    import matplotlib

    # Fixed hashsalt plus a null Date make the SVG byte-stable across runs.
    with matplotlib.rc_context({"svg.hashsalt": "emag"}):
        fig.savefig(str(path), format="svg", metadata={"Date": None})


def plot_loss_curve(history, path):
    plt = _pyplot()
    steps = [r["step"] for r in history["steps"]]
    losses = [r["train_loss"] for r in history["steps"]]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(steps, losses, lw=1.0, color="tab:blue", label="train loss")
    ax.set_xlabel("step")
    ax.set_ylabel("train loss")
    val = [(r["step"], r["val_ade"]) for r in history["steps"] if r["val_ade"] is not None]
    if val:
        twin = ax.twinx()
        twin.plot(
            [s for s, _ in val],
            [a for _, a in val],
            "o-",
            ms=3,
            color="tab:orange",
            label="val ADE",
        )
        twin.set_ylabel("val ADE (px)")
    fig.tight_layout()
    save_svg(fig, path)
    plt.close(fig)


def plot_drop_summary(report, path):
    plt = _pyplot()
    names = [n for n in report["variants"] if report["summary"][n]["relative_drop"] is not None]
    drops = [report["summary"][n]["relative_drop"] * 100.0 for n in names]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.bar(range(len(names)), drops, color="tab:blue")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("intra to cross ADE drop (%)")
    ax.axhline(0.0, color="black", lw=0.8)
    fig.tight_layout()
    save_svg(fig, path)
    plt.close(fig)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args):
    started = _utc_now()
    config = load_config_file(args.config)
    check_keys(
        config, {"domain", "n", "seed", "start_index", "flow_grids", "scenario"}, "config"
    )
    domain = resolve(args.domain, config, "domain", None)
    if domain is None:
        raise UsageError("--domain is required (or set \"domain\" in the config)")
    if domain not in DOMAIN_CONFIGS:
        raise UsageError(
            f"unknown domain {domain!r}; built-in domains: "
            + ", ".join(sorted(DOMAIN_CONFIGS))
        )
    n = resolve_int(args.n, config, "n", None, minimum=1) if (
        args.n is not None or "n" in config
    ) else None
    if n is None:
        raise UsageError("--n is required (or set \"n\" in the config)")
    seed = resolve_int(args.seed, config, "seed", default_seed())
    start_index = resolve_int(args.start_index, config, "start_index", 0, minimum=0)
    flow_grids = bool(resolve(args.flow_grids, config, "flow_grids", False))

    overrides = dict(config.get("scenario", {}))
    check_keys(overrides, _field_names(ScenarioConfig) - {"name"}, "scenario")
    scenario = DOMAIN_CONFIGS[domain](**overrides)

    samples = generate_dataset(scenario, n, seed, start_index, include_flow_grids=flow_grids)
    save_dataset(samples, args.out)

    resolved = {
        "domain": domain,
        "n": n,
        "seed": seed,
        "start_index": start_index,
        "flow_grids": flow_grids,
        "scenario": scenario.to_dict(),
    }
    inputs = [args.config] if args.config else []
    write_manifest(
        manifest_path_for(args.out), args, seed, resolved, inputs, [args.out], started
    )
    print(f"wrote {n} sequences to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# preprocess


def estimate_sample_ego(sample, iterations, threshold, stride, seed):
    """Re-estimate observed per-transition homographies from flow grids.

    Frame 0 keeps the identity.  A transition whose RANSAC fit fails falls
    back to the identity and is listed in failed_frames.  Future-step
    homographies are supervision targets and stay untouched.
    """
    ego = np.array(sample.ego)
    failed = []
    grid = sample.flow_grids
    g = grid.shape[1]
    for t in range(1, sample.observed_steps):
        try:
            flow = FlowField(
                g, g, grid[t], image_width=sample.image_size, image_height=sample.image_size
            )
            corrs = flow_to_correspondences(flow, stride)
            h, _ = ransac_homography(
                corrs,
                iterations=iterations,
                inlier_threshold_px=threshold,
                rng_seed=[seed, sample.index, t],
            )
            ego[t] = normalize_homography(h).reshape(9)
        except EgoMotionError:
            ego[t] = np.eye(3).reshape(9)
            failed.append(t)
    return dataclasses.replace(sample, ego=ego, failed_frames=failed)


def cmd_preprocess(args):
    started = _utc_now()
    config = load_config_file(args.config)
    check_keys(
        config,
        {"ransac_iters", "threshold", "stride", "seed", "from_homography", "drop_grids"},
        "config",
    )
    iterations = resolve_int(args.ransac_iters, config, "ransac_iters", 500, minimum=1)
    stride = resolve_int(args.stride, config, "stride", 4, minimum=1)
    seed = resolve_int(args.seed, config, "seed", default_seed())
    threshold = float(resolve(args.threshold, config, "threshold", 1.0))
    if threshold <= 0:
        raise UsageError("--threshold must be positive")
    passthrough = bool(resolve(args.from_homography, config, "from_homography", False))
    drop_grids = bool(resolve(args.drop_grids, config, "drop_grids", False))

    samples = load_samples(args.in_path)
    if not passthrough and any(s.flow_grids is None for s in samples):
        raise UsageError(
            f"{args.in_path} has sequences without stored flow grids; regenerate "
            "with --flow-grids or pass --from-homography to keep the existing "
            "homography fields"
        )

    out_samples = []
    failed_total = 0
    for sample in samples:
        if passthrough:
            processed = dataclasses.replace(sample, failed_frames=[])
        else:
            processed = estimate_sample_ego(sample, iterations, threshold, stride, seed)
            failed_total += len(processed.failed_frames)
        if drop_grids:
            processed = dataclasses.replace(processed, flow_grids=None)
        out_samples.append(processed)
    save_dataset(out_samples, args.out)

    resolved = {
        "ransac_iters": iterations,
        "threshold": threshold,
        "stride": stride,
        "seed": seed,
        "from_homography": passthrough,
        "drop_grids": drop_grids,
    }
    inputs = [args.in_path] + ([args.config] if args.config else [])
    write_manifest(
        manifest_path_for(args.out), args, seed, resolved, inputs, [args.out], started
    )
    mode = "kept existing homographies" if passthrough else (
        f"estimated homographies ({failed_total} failed transitions)"
    )
    print(f"{mode} for {len(out_samples)} sequences -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


_DATA_SHAPE_KEYS = ("observed_steps", "future_steps", "num_objects", "rgb_dim", "flow_dim")


def data_shape(samples):
    s = samples[0]
    return {
        "observed_steps": s.observed_steps,
        "future_steps": s.future_steps,
        "num_objects": int(s.object_boxes.shape[1]),
        "rgb_dim": int(s.rgb.shape[1]),
        "flow_dim": int(s.flow.shape[1]),
    }


def _apply_data_shape(overrides, shape, keys):
    """Fill data-shaped config fields from the dataset; explicit values that
    contradict the data are a usage error, caught before training starts."""
    for key in keys:
        if key in overrides:
            if int(overrides[key]) != shape[key]:
                raise UsageError(
                    f"config sets {key}={overrides[key]} but the training data "
                    f"has {key}={shape[key]}"
                )
        else:
            overrides[key] = shape[key]


def build_train_configs(model_kind, config, flag_seed, train_samples):
    """Resolved (ModelConfig-or-Seq2SeqConfig, TrainConfig) for cmd_train."""
    check_keys(config, {"model", "train"}, "config")
    model_over = dict(config.get("model", {}))
    train_over = dict(config.get("train", {}))
    cfg_cls = ModelConfig if model_kind == "emag" else Seq2SeqConfig
    check_keys(model_over, _field_names(cfg_cls), "model config")
    check_keys(train_over, _field_names(TrainConfig), "train config")

    env = default_seed()
    if flag_seed is not None:
        model_over["seed"] = train_over["seed"] = flag_seed
    else:
        model_over.setdefault("seed", env)
        train_over.setdefault("seed", env)

    shape = data_shape(train_samples)
    shape_keys = _DATA_SHAPE_KEYS if model_kind == "emag" else (
        "observed_steps",
        "future_steps",
    )
    _apply_data_shape(model_over, shape, shape_keys)

    try:
        model_config = cfg_cls(**model_over)
        train_config = TrainConfig(**train_over)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    return model_config, train_config


def cmd_train(args):
    started = _utc_now()
    config = load_config_file(args.config)
    train_samples = load_samples(args.train)
    val_samples = load_samples(args.val) if args.val else None
    if val_samples is not None:
        t_shape, v_shape = data_shape(train_samples), data_shape(val_samples)
        if (t_shape["observed_steps"], t_shape["future_steps"]) != (
            v_shape["observed_steps"],
            v_shape["future_steps"],
        ):
            raise UsageError(
                "train and val datasets disagree on horizon: "
                f"{t_shape['observed_steps']}+{t_shape['future_steps']} vs "
                f"{v_shape['observed_steps']}+{v_shape['future_steps']}"
            )

    model_config, train_config = build_train_configs(
        args.model, config, args.seed, train_samples
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    net_cls = EmagNet if args.model == "emag" else Seq2SeqNet
    model = net_cls(model_config)
    stats = DatasetStats.fit(train_samples)
    history = fit(
        model,
        train_samples,
        val_samples,
        stats,
        train_config,
        log_path=out_dir / "train_log.jsonl",
        checkpoint_dir=out_dir / "checkpoints",
    )

    (out_dir / "history.json").write_text(
        json.dumps(history, indent=2, sort_keys=True) + "\n"
    )
    plot_loss_curve(history, out_dir / "loss_curve.svg")

    resolved = {
        "model_kind": args.model,
        "model": model_config.to_dict(),
        "train": train_config.to_dict(),
    }
    inputs = [p for p in (args.train, args.val, args.config) if p]
    outputs = [
        out_dir / "checkpoints" / "final.json",
        out_dir / "train_log.jsonl",
        out_dir / "history.json",
        out_dir / "loss_curve.svg",
    ]
    best = out_dir / "checkpoints" / "best.json"
    if best.exists():
        outputs.insert(1, best)
    write_manifest(
        out_dir / "manifest.json", args, train_config.seed, resolved, inputs, outputs, started
    )

    last_loss = history["steps"][-1]["train_loss"] if history["steps"] else None
    print(f"trained {args.model} for {len(history['steps'])} steps")
    if last_loss is not None:
        print(f"final train loss: {last_loss:.4f}")
    if history["best_val_ade"] is not None:
        print(
            f"best val ADE: {history['best_val_ade']:.2f} "
            f"(epoch {history['best_epoch']})"
        )
    print(f"checkpoints in {out_dir / 'checkpoints'}")
    return 0


# ---------------------------------------------------------------------------
# eval


_BASELINE_METHODS = {"cvm": "cvm", "kf": "kalman", "kalman": "kalman"}
_LEARNED_METHODS = {"emag": "transformer", "seq2seq": "seq2seq"}


def cmd_eval(args):
    started = _utc_now()
    samples = load_samples(args.data)
    method = args.method
    checkpoint_used = None

    if method in _BASELINE_METHODS:
        if args.checkpoint:
            raise UsageError(f"--method {method} takes no --checkpoint")
        preds = baseline_predictions(samples, _BASELINE_METHODS[method])
    elif method in _LEARNED_METHODS:
        if not args.checkpoint:
            raise UsageError(f"--method {method} requires --checkpoint")
        if not Path(args.checkpoint).exists():
            raise UsageError(f"checkpoint not found: {args.checkpoint}")
        model, stats, _ = load_checkpoint(args.checkpoint)
        if model_type_name(model) != _LEARNED_METHODS[method]:
            raise UsageError(
                f"checkpoint {args.checkpoint} holds a {model_type_name(model)} "
                f"model, which does not match --method {method}"
            )
        preds = model.predict(samples, stats, args.batch_size)
        checkpoint_used = args.checkpoint
    else:
        raise UsageError(
            f"unknown method {method!r}; choose from "
            + ", ".join(sorted(set(_BASELINE_METHODS) | set(_LEARNED_METHODS)))
        )

    scores = evaluate_predictions(preds, samples)
    metrics = {
        "method": method,
        "checkpoint": checkpoint_used,
        "data": str(args.data),
        "count": scores["count"],
        "ade": scores["ade"],
        "fde": scores["fde"],
    }

    def show(v):
        return "n/a" if v is None else f"{v:.2f}"

    print(f"ADE: {show(scores['ade'])}  FDE: {show(scores['fde'])}")
    if args.out:
        Path(args.out).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
        inputs = [args.data] + ([checkpoint_used] if checkpoint_used else [])
        write_manifest(
            manifest_path_for(args.out),
            args,
            default_seed(),
            {"method": method, "batch_size": args.batch_size},
            inputs,
            [args.out],
            started,
        )
        print(f"metrics -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# matrix


def _parse_list(raw, kind=str):
    items = [x.strip() for x in raw.split(",") if x.strip()]
    if not items:
        raise UsageError("expected a non-empty comma-separated list")
    try:
        return [kind(x) for x in items]
    except ValueError:
        raise UsageError(f"could not parse {raw!r} as a list of {kind.__name__}s") from None


def _matrix_dataset(data_dir, domain, split):
    for suffix in (".jsonl.gz", ".jsonl"):
        path = Path(data_dir) / f"{domain}_{split}{suffix}"
        if path.exists():
            return path
    raise UsageError(
        f"missing dataset for domain {domain!r}: expected "
        f"{Path(data_dir) / (domain + '_' + split + '.jsonl.gz')} "
        "(matrix looks for {domain}_train and {domain}_val files in --data-dir)"
    )


def cmd_matrix(args):
    started = _utc_now()
    config = load_config_file(args.config)
    check_keys(config, {"model", "train", "methods", "domains", "seeds"}, "config")

    methods = _parse_list(args.methods) if args.methods else list(
        config.get("methods", DEFAULT_VARIANTS)
    )
    domains = _parse_list(args.domains) if args.domains else list(
        config.get("domains", sorted(DOMAIN_CONFIGS))
    )
    seeds = _parse_list(args.seeds, int) if args.seeds else [
        int(s) for s in config.get("seeds", (0, 1, 2, 3, 4))
    ]

    methods = [normalize_variant(m) for m in methods]
    probe_mc, probe_tc = ModelConfig(), TrainConfig()
    for m in methods:
        try:
            variant_setup(m, probe_mc, probe_tc)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    dataset_paths = {
        d: {split: _matrix_dataset(args.data_dir, d, split) for split in ("train", "val")}
        for d in domains
    }
    train_sets = {d: load_samples(p["train"]) for d, p in dataset_paths.items()}
    val_sets = {d: load_samples(p["val"]) for d, p in dataset_paths.items()}

    model_over = dict(config.get("model", {}))
    train_over = dict(config.get("train", {}))
    check_keys(model_over, _field_names(ModelConfig), "model config")
    check_keys(train_over, _field_names(TrainConfig), "train config")
    first_domain = domains[0]
    _apply_data_shape(model_over, data_shape(train_sets[first_domain]), _DATA_SHAPE_KEYS)
    try:
        model_config = ModelConfig(**model_over)
        train_config = TrainConfig(**train_over)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run_matrix(
        train_sets,
        val_sets,
        variants=methods,
        seeds=seeds,
        model_config=model_config,
        train_config=train_config,
        out_dir=out_dir / "checkpoints",
    )

    table = format_matrix_table(report)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out_dir / "table.txt").write_text(table + "\n")
    plot_drop_summary(report, out_dir / "drop_summary.svg")

    resolved = {
        "methods": methods,
        "domains": domains,
        "seeds": seeds,
        "model": model_config.to_dict(),
        "train": train_config.to_dict(),
    }
    inputs = [p for d in domains for p in dataset_paths[d].values()]
    if args.config:
        inputs.append(args.config)
    outputs = [out_dir / "report.json", out_dir / "table.txt", out_dir / "drop_summary.svg"]
    outputs += sorted((out_dir / "checkpoints").glob("*.json"))
    write_manifest(
        out_dir / "manifest.json", args, train_config.seed, resolved, inputs, outputs, started
    )

    print(table)
    print(f"report -> {out_dir / 'report.json'}")
    failures = [r for r in report["results"] if r["error"] is not None]
    if failures:
        print(f"{len(failures)} cell(s) failed; see report.json", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="emag",
        description="Ego-motion-aware 2D hand forecasting on synthetic egocentric sequences.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--domain", help="built-in domain name (kitchen, outdoor)")
    g.add_argument("--n", type=int, help="number of sequences")
    g.add_argument("--seed", type=int, help="dataset seed")
    g.add_argument("--start-index", type=int, dest="start_index", help="first sequence index")
    g.add_argument(
        "--flow-grids",
        action="store_true",
        default=None,
        dest="flow_grids",
        help="store dense flow grids (needed by preprocess)",
    )
    g.add_argument("--config", help="JSON config file")
    g.add_argument("--out", required=True, help="output dataset path (.jsonl or .jsonl.gz)")
    g.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="estimate homographies from stored flow grids")
    p.add_argument("--in", dest="in_path", required=True, help="input dataset path")
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--ransac-iters", type=int, dest="ransac_iters", help="RANSAC iterations")
    p.add_argument(
        "--threshold", type=float, help="RANSAC inlier threshold in pixels"
    )
    p.add_argument("--stride", type=int, help="flow grid sampling stride")
    p.add_argument("--seed", type=int, help="RANSAC seed")
    p.add_argument(
        "--from-homography",
        action="store_true",
        default=None,
        dest="from_homography",
        help="keep the homography fields already in the file",
    )
    p.add_argument(
        "--drop-grids",
        action="store_true",
        default=None,
        dest="drop_grids",
        help="omit flow grids from the output",
    )
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", help="fit a forecaster")
    t.add_argument("--model", choices=("emag", "seq2seq"), default="emag")
    t.add_argument("--train", required=True, help="training dataset path")
    t.add_argument("--val", help="validation dataset path")
    t.add_argument("--config", help="JSON config file with model/train sections")
    t.add_argument("--seed", type=int, help="seed for both model init and training")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a method on a dataset")
    e.add_argument(
        "--method", required=True, help="cvm, kf, kalman, emag, or seq2seq"
    )
    e.add_argument("--checkpoint", help="model checkpoint (emag/seq2seq only)")
    e.add_argument("--data", required=True, help="evaluation dataset path")
    e.add_argument("--batch-size", type=int, dest="batch_size", default=64)
    e.add_argument("--out", help="metrics JSON path")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("matrix", help="run the cross-domain experiment grid")
    m.add_argument("--data-dir", dest="data_dir", required=True, help="directory of datasets")
    m.add_argument("--methods", help="comma-separated variants")
    m.add_argument("--domains", help="comma-separated domains")
    m.add_argument("--seeds", help="comma-separated seeds")
    m.add_argument("--config", help="JSON config file")
    m.add_argument("--out", required=True, help="output directory")
    m.set_defaults(func=cmd_matrix)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    args._argv = list(argv) if argv is not None else sys.argv[1:]
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: diagnose and exit nonzero
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
