"""Optimization and experiment harness: schedule, AdamW, the fit loop,
evaluation, and the cross-domain experiment matrix.

Runs are deterministic for a fixed seed: model initialization, dropout,
batch shuffling, and teacher forcing all draw from seeded generators, and
reports contain no timestamps (the run manifest written by the CLI does).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .baselines import HandTrack, cvm_forecast, kalman_forecast
from .losses import ego_loss, hand_loss, total_loss
from .metrics import aggregate, sample_ade, sample_fde
from .model import (
    EmagNet,
    ModelConfig,
    Seq2SeqConfig,
    Seq2SeqNet,
    prepare_batch,
    save_checkpoint,
)
from .data import DatasetStats


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    peak_lr: float = 2e-4
    warmup_epochs: int = 5
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha: float = 1.0
    loss_beta: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.peak_lr <= 0:
            raise ValueError("epochs, batch_size, and peak_lr must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(
                f"warmup_epochs must satisfy 0 <= warmup < epochs, got "
                f"{self.warmup_epochs} with {self.epochs} epochs"
            )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def lr_at(step, total_steps, warmup_steps, peak_lr):
    """Linear warmup then cosine decay.

    Exactly 0 at step 0, exactly `peak_lr` at the end of warmup, exactly 0
    at the last step.
    """
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if warmup_steps > 0 and step < warmup_steps:
        return peak_lr * step / warmup_steps
    span = total_steps - 1 - warmup_steps
    if span <= 0:
        return peak_lr
    progress = min((step - warmup_steps) / span, 1.0)
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Decoupled weight decay: parameters are shrunk by lr*wd before the
    bias-corrected Adam update.

    Parameters whose grad is None are skipped entirely, including the
    decay, so branches excluded from the loss stay at initialization.
    Parameters flagged decay=False (biases, norms, learnable tokens) are
    never shrunk.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.moments = {p: (np.zeros_like(p.data), np.zeros_like(p.data)) for p in self.params}

    def step(self, lr):
        # Validate every gradient before mutating anything so an abort
        # leaves all parameters at their last good values.
        for p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient in {p.name or 'parameter'}")
        self.t += 1
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and p.decay:
                p.data *= 1.0 - lr * self.weight_decay
            m, v = self.moments[p]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def iterate_batches(count, batch_size, rng):
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start : start + batch_size]


def evaluate(model, samples, stats=None, batch_size=64):
    """ADE/FDE over samples, skipping those with no observed future."""
    preds = model.predict(samples, stats, batch_size)
    return evaluate_predictions(preds, samples)


def evaluate_predictions(preds, samples):
    ades, fdes = [], []
    for pred, sample in zip(preds, samples):
        F = sample.future_steps
        target, mask = sample.future_targets()
        ades.append(sample_ade(pred.reshape(F, 4), target.reshape(F, 4), mask.reshape(F, 4)))
        fdes.append(sample_fde(pred.reshape(F, 4), target.reshape(F, 4), mask.reshape(F, 4)))
    return {
        "ade": aggregate(ades),
        "fde": aggregate(fdes),
        "count": sum(a is not None for a in ades),
    }


def fit(
    model,
    train_samples,
    val_samples=None,
    stats=None,
    config=None,
    log_path=None,
    checkpoint_dir=None,
):
    """Train `model` in place; returns a history dict.

    Writes one JSON line per step to `log_path` with keys epoch, step, lr,
    train_loss, val_ade, val_fde (the val fields are null except at epoch
    boundaries).  With `checkpoint_dir`, saves best.json at the lowest val
    ADE and final.json at the end; a non-finite loss or gradient raises
    TrainingError after those files are already on disk.
    """
    config = config or TrainConfig()
    if stats is None:
        stats = DatasetStats.fit(train_samples)
    n = len(train_samples)
    steps_per_epoch = max(1, math.ceil(n / config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    warmup_steps = config.warmup_epochs * steps_per_epoch

    optimizer = AdamW(
        model.parameters(),
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )
    shuffle_rng = np.random.default_rng([config.seed, 11])
    model.rng = np.random.default_rng([config.seed, 7])
    is_seq2seq = isinstance(model, Seq2SeqNet)
    use_ego = (
        not is_seq2seq
        and getattr(model.config, "use_ego", False)
        and config.alpha > 0.0
    )

    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    history = {"steps": [], "epochs": [], "best_val_ade": None, "best_epoch": None}
    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)
    step = 0
    try:
        for epoch in range(config.epochs):
            model.train()
            for batch_idx in iterate_batches(n, config.batch_size, shuffle_rng):
                batch = prepare_batch([train_samples[i] for i in batch_idx], stats)
                if is_seq2seq:
                    hands, ego = model(batch, targets=batch)
                else:
                    hands, ego = model(batch, predict_ego=use_ego)
                loss = hand_loss(hands, batch["target"], batch["target_mask"], beta=config.loss_beta)
                if ego is not None:
                    loss = total_loss(loss, ego_loss(ego, batch["future_ego"]), config.alpha)
                if not np.isfinite(loss.data):
                    raise TrainingError(f"non-finite loss at step {step}")
                model.zero_grad()
                loss.backward()
                lr = lr_at(step, total_steps, warmup_steps, config.peak_lr)
                optimizer.step(lr)

                record = {
                    "epoch": epoch,
                    "step": step,
                    "lr": lr,
                    "train_loss": float(loss.data),
                    "val_ade": None,
                    "val_fde": None,
                }
                step += 1
                last_in_epoch = step % steps_per_epoch == 0 or step == total_steps
                if last_in_epoch and val_samples:
                    scores = evaluate(model, val_samples, stats, config.batch_size)
                    record["val_ade"] = scores["ade"]
                    record["val_fde"] = scores["fde"]
                    history["epochs"].append(
                        {"epoch": epoch, "val_ade": scores["ade"], "val_fde": scores["fde"]}
                    )
                    better = scores["ade"] is not None and (
                        history["best_val_ade"] is None
                        or scores["ade"] < history["best_val_ade"]
                    )
                    if better:
                        history["best_val_ade"] = scores["ade"]
                        history["best_epoch"] = epoch
                        if checkpoint_dir:
                            save_checkpoint(
                                os.path.join(checkpoint_dir, "best.json"),
                                model,
                                stats,
                                extra={"epoch": epoch, "val_ade": scores["ade"]},
                            )
                    model.train()
                history["steps"].append(record)
                if log_file:
                    log_file.write(json.dumps(record) + "\n")
    finally:
        if log_file:
            log_file.close()
        if checkpoint_dir:
            save_checkpoint(
                os.path.join(checkpoint_dir, "final.json"),
                model,
                stats,
                extra={"epochs": config.epochs},
            )
    model.eval()
    return history


def _track(points, boxes, side):
    return HandTrack(positions=list(points), boxes=list(boxes), side=side)


def baseline_predictions(samples, method):
    """(N, 4F) forecasts from a training-free track extrapolator."""
    if method not in ("cvm", "kalman"):
        raise ValueError(f"unknown baseline {method!r}")
    F = samples[0].future_steps
    out = np.full((len(samples), 4 * F), 0.5)
    for i, s in enumerate(samples):
        for side, (points, boxes) in enumerate(
            ((s.left, s.left_boxes), (s.right, s.right_boxes))
        ):
            track = _track(points, boxes, "left" if side == 0 else "right")
            if method == "cvm":
                forecast = cvm_forecast(track, F)
            else:
                forecast = kalman_forecast(track, F)
            if forecast is None:
                continue
            for f in range(F):
                out[i, 4 * f + 2 * side : 4 * f + 2 * side + 2] = forecast[f]
    return out


DEFAULT_VARIANTS = ("full", "rgb_only", "no_ego", "alpha_zero", "cvm", "kalman")

_VARIANT_ALIASES = {"emag": "full", "kf": "kalman"}


def normalize_variant(name):
    return _VARIANT_ALIASES.get(name, name)


def config_digest(*parts):
    """Short stable digest of resolved configs (dataclasses or dicts)."""
    blob = json.dumps(
        [p.to_dict() if hasattr(p, "to_dict") else p for p in parts],
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def variant_setup(name, model_config, train_config):
    """Model/optimizer configuration for a named experiment variant."""
    mc, tc = model_config, train_config
    name = normalize_variant(name)
    if name == "full":
        return mc, tc
    if name == "rgb_only":
        return (
            replace(mc, use_flow=False, use_ego=False, use_objects=False),
            replace(tc, alpha=0.0),
        )
    if name == "no_ego":
        return replace(mc, use_ego=False), replace(tc, alpha=0.0)
    if name == "alpha_zero":
        return mc, replace(tc, alpha=0.0)
    if name == "no_rgb":
        return replace(mc, use_rgb=False), tc
    if name == "no_flow":
        return replace(mc, use_flow=False), tc
    if name == "seq2seq":
        sc = Seq2SeqConfig(
            embed=2 * mc.channels,
            hidden=2 * mc.channels,
            observed_steps=mc.observed_steps,
            future_steps=mc.future_steps,
        )
        return sc, tc
    if name in ("cvm", "kalman"):
        return None, tc
    raise ValueError(f"unknown variant {name!r}")


def run_matrix(
    train_sets,
    val_sets,
    variants=DEFAULT_VARIANTS,
    seeds=(0, 1, 2, 3, 4),
    model_config=None,
    train_config=None,
    out_dir=None,
):
    """Train each variant per seed per domain and evaluate intra and cross.

    `train_sets` and `val_sets` map domain name to sample lists.  A failed
    cell records its error in the row and the run continues.  When
    `out_dir` is given, each trained model is checkpointed there and rows
    carry the file name relative to `out_dir` (keeping the report
    location-independent).  Reports contain no timestamps, so identical
    inputs produce identical reports.
    """
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    domains = sorted(train_sets)
    variants = [normalize_variant(v) for v in variants]
    results = []
    for name in variants:
        mc, tc = variant_setup(name, model_config, train_config)
        for seed in seeds:
            for train_domain in domains:
                model, stats, checkpoint, failure = None, None, None, None
                run_tc = replace(tc, seed=seed)
                if mc is None:
                    digest = config_digest({"method": name}, run_tc)
                else:
                    run_mc = replace(mc, seed=seed)
                    digest = config_digest(run_mc, run_tc)
                    net_cls = Seq2SeqNet if isinstance(run_mc, Seq2SeqConfig) else EmagNet
                    try:
                        stats = DatasetStats.fit(train_sets[train_domain])
                        model = net_cls(run_mc)
                        fit(model, train_sets[train_domain], None, stats, run_tc)
                        if out_dir is not None:
                            fname = f"{name}_seed{seed}_{train_domain}.json"
                            save_checkpoint(out_dir / fname, model, stats)
                            checkpoint = fname
                    except Exception as exc:  # cell failures must not stop the run
                        failure = f"{type(exc).__name__}: {exc}"
                        model = None
                for eval_domain in domains:
                    row = {
                        "variant": name,
                        "seed": seed,
                        "train_domain": train_domain,
                        "eval_domain": eval_domain,
                        "split": "intra" if eval_domain == train_domain else "cross",
                        "ade": None,
                        "fde": None,
                        "count": 0,
                        "checkpoint": checkpoint,
                        "config_digest": digest,
                        "error": failure,
                    }
                    if failure is None:
                        val = val_sets[eval_domain]
                        try:
                            if model is None:
                                scores = evaluate_predictions(
                                    baseline_predictions(val, name), val
                                )
                            else:
                                scores = evaluate(
                                    model, val, stats, train_config.batch_size
                                )
                            row["ade"] = scores["ade"]
                            row["fde"] = scores["fde"]
                            row["count"] = scores["count"]
                        except Exception as exc:  # record and continue
                            row["error"] = f"{type(exc).__name__}: {exc}"
                    results.append(row)
    summary = summarize_matrix(results, variants, seeds)
    return {
        "domains": domains,
        "seeds": list(seeds),
        "variants": list(variants),
        "checkpoint_policy": "final",
        "model_config": model_config.to_dict(),
        "train_config": train_config.to_dict(),
        "results": results,
        "summary": summary,
    }


def summarize_matrix(results, variants, seeds):
    """Per-variant median (over seeds) of per-seed mean intra and cross ADE,
    plus the relative intra-to-cross drop."""
    summary = {}
    for name in variants:
        per_seed_intra, per_seed_cross = [], []
        for seed in seeds:
            rows = [r for r in results if r["variant"] == name and r["seed"] == seed]
            intra = [r["ade"] for r in rows if r["split"] == "intra" and r["ade"] is not None]
            cross = [r["ade"] for r in rows if r["split"] == "cross" and r["ade"] is not None]
            if intra:
                per_seed_intra.append(float(np.mean(intra)))
            if cross:
                per_seed_cross.append(float(np.mean(cross)))
        med_intra = float(np.median(per_seed_intra)) if per_seed_intra else None
        med_cross = float(np.median(per_seed_cross)) if per_seed_cross else None
        drop = None
        if med_intra and med_cross is not None:
            drop = (med_cross - med_intra) / med_intra
        summary[name] = {
            "median_intra_ade": med_intra,
            "median_cross_ade": med_cross,
            "relative_drop": drop,
        }
    return summary


def format_matrix_table(report):
    """Fixed-width text table of the summary block; the best (lowest) entry
    of each ADE column is marked with '*'."""
    header = f"{'variant':<12} {'intra ADE':>10} {'cross ADE':>10} {'drop %':>8}"
    lines = [header, "-" * len(header)]

    def best(key):
        vals = [report["summary"][n][key] for n in report["variants"]]
        vals = [v for v in vals if v is not None]
        return min(vals) if vals else None

    best_intra = best("median_intra_ade")
    best_cross = best("median_cross_ade")

    def fmt(v, best_v=None, scale=1.0):
        if v is None:
            return "-"
        return f"{v * scale:.2f}" + ("*" if v == best_v else "")

    for name in report["variants"]:
        row = report["summary"][name]
        lines.append(
            f"{name:<12} {fmt(row['median_intra_ade'], best_intra):>10} "
            f"{fmt(row['median_cross_ade'], best_cross):>10} "
            f"{fmt(row['relative_drop'], None, 100.0):>8}"
        )
    return "\n".join(lines)
