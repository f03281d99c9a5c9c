"""Estimator-style wrappers: every forecasting method behind the same
fit/predict/score surface.

All estimators consume lists of `SequenceSample` and predict flattened
future hand centers, shape (N, 4 * F) ordered (left x, left y, right x,
right y) per future step in normalized image coordinates.  Constructor
arguments are stored untouched so `get_params`/`set_params` round-trip
and an estimator can be re-created from its parameters alone; learned
state lives only in trailing-underscore attributes set by `fit`.
"""

from __future__ import annotations

import inspect

from .data import DatasetStats
from .model import (
    EmagNet,
    ModelConfig,
    Seq2SeqConfig,
    Seq2SeqNet,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    TrainConfig,
    baseline_predictions,
    evaluate_predictions,
    fit as train_fit,
)


class NotFittedError(RuntimeError):
    """Raised when predict/score is called before fit."""


class BaseForecaster:
    """Shared parameter plumbing and the fitted-state check."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [n for n in sig.parameters if n != "self"]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = self._param_names()
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}; "
                    f"valid: {sorted(valid)}"
                )
            setattr(self, name, value)
        return self

    def _check_fitted(self):
        if not getattr(self, "fitted_", False):
            raise NotFittedError(
                f"{type(self).__name__} instance is not fitted yet; call fit first"
            )

    @staticmethod
    def _check_samples(X):
        if not X:
            raise ValueError("fit/predict requires a non-empty list of samples")
        return list(X)

    def score(self, X):
        """Negative mean ADE in pixels (higher is better)."""
        scores = evaluate_predictions(self.predict(X), X)
        if scores["ade"] is None:
            raise ValueError("no sample had an observed future to score against")
        return -scores["ade"]

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in sorted(self.get_params().items()))
        return f"{type(self).__name__}({args})"


class ConstantVelocityForecaster(BaseForecaster):
    """Extrapolates each hand at its last observed velocity."""

    def __init__(self):
        pass

    def fit(self, X, y=None):
        self._check_samples(X)
        self.fitted_ = True
        return self

    def predict(self, X):
        self._check_fitted()
        return baseline_predictions(self._check_samples(X), "cvm")


class KalmanForecaster(BaseForecaster):
    """Constant-velocity Kalman filter per hand track."""

    def __init__(self):
        pass

    def fit(self, X, y=None):
        self._check_samples(X)
        self.fitted_ = True
        return self

    def predict(self, X):
        self._check_fitted()
        return baseline_predictions(self._check_samples(X), "kalman")


class _TrainedForecaster(BaseForecaster):
    """Common fit/predict for the learned models."""

    def _build(self):
        raise NotImplementedError

    def _train_config(self):
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            peak_lr=self.peak_lr,
            warmup_epochs=self.warmup_epochs,
            weight_decay=self.weight_decay,
            alpha=getattr(self, "alpha", 0.0),
            seed=self.seed,
        )

    def fit(self, X, y=None, val=None):
        """Trains on X; y is ignored (targets live inside the samples)."""
        X = self._check_samples(X)
        self.model_ = self._build()
        self.stats_ = DatasetStats.fit(X)
        self.history_ = train_fit(
            self.model_, X, val_samples=val, stats=self.stats_, config=self._train_config()
        )
        self.fitted_ = True
        return self

    def predict(self, X):
        self._check_fitted()
        return self.model_.predict(self._check_samples(X), self.stats_, self.batch_size)

    def save(self, path):
        self._check_fitted()
        save_checkpoint(path, self.model_, self.stats_)

    def _adopt(self, model, stats):
        self.model_ = model
        self.stats_ = stats
        self.history_ = None
        self.fitted_ = True
        return self


class EmagForecaster(_TrainedForecaster):
    """Ego-aware transformer forecaster over the multimodal token grid."""

    def __init__(
        self,
        channels=512,
        blocks=2,
        heads=8,
        dropout=0.1,
        observed_steps=8,
        future_steps=4,
        num_objects=2,
        rgb_dim=32,
        flow_dim=32,
        use_objects=True,
        use_rgb=True,
        use_flow=True,
        use_ego=True,
        alpha=1.0,
        epochs=30,
        batch_size=64,
        peak_lr=2e-4,
        warmup_epochs=5,
        weight_decay=1e-3,
        seed=0,
    ):
        self.channels = channels
        self.blocks = blocks
        self.heads = heads
        self.dropout = dropout
        self.observed_steps = observed_steps
        self.future_steps = future_steps
        self.num_objects = num_objects
        self.rgb_dim = rgb_dim
        self.flow_dim = flow_dim
        self.use_objects = use_objects
        self.use_rgb = use_rgb
        self.use_flow = use_flow
        self.use_ego = use_ego
        self.alpha = alpha
        self.epochs = epochs
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.warmup_epochs = warmup_epochs
        self.weight_decay = weight_decay
        self.seed = seed

    def _build(self):
        return EmagNet(
            ModelConfig(
                channels=self.channels,
                blocks=self.blocks,
                heads=self.heads,
                dropout=self.dropout,
                observed_steps=self.observed_steps,
                future_steps=self.future_steps,
                num_objects=self.num_objects,
                rgb_dim=self.rgb_dim,
                flow_dim=self.flow_dim,
                use_objects=self.use_objects,
                use_rgb=self.use_rgb,
                use_flow=self.use_flow,
                use_ego=self.use_ego,
                seed=self.seed,
            )
        )

    @classmethod
    def load(cls, path):
        """Estimator around a saved checkpoint; training params keep defaults."""
        model, stats, _ = load_checkpoint(path)
        if not isinstance(model, EmagNet):
            raise TypeError(f"checkpoint holds {type(model).__name__}, not EmagNet")
        cfg = model.config
        est = cls(
            channels=cfg.channels,
            blocks=cfg.blocks,
            heads=cfg.heads,
            dropout=cfg.dropout,
            observed_steps=cfg.observed_steps,
            future_steps=cfg.future_steps,
            num_objects=cfg.num_objects,
            rgb_dim=cfg.rgb_dim,
            flow_dim=cfg.flow_dim,
            use_objects=cfg.use_objects,
            use_rgb=cfg.use_rgb,
            use_flow=cfg.use_flow,
            use_ego=cfg.use_ego,
            seed=cfg.seed,
        )
        return est._adopt(model, stats)


class Seq2SeqForecaster(_TrainedForecaster):
    """LSTM encoder-decoder over hand tracks only."""

    def __init__(
        self,
        embed=512,
        hidden=256,
        observed_steps=8,
        future_steps=4,
        teacher_forcing=0.5,
        epochs=30,
        batch_size=64,
        peak_lr=2e-4,
        warmup_epochs=5,
        weight_decay=1e-3,
        seed=0,
    ):
        self.embed = embed
        self.hidden = hidden
        self.observed_steps = observed_steps
        self.future_steps = future_steps
        self.teacher_forcing = teacher_forcing
        self.epochs = epochs
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.warmup_epochs = warmup_epochs
        self.weight_decay = weight_decay
        self.seed = seed

    def _build(self):
        return Seq2SeqNet(
            Seq2SeqConfig(
                embed=self.embed,
                hidden=self.hidden,
                observed_steps=self.observed_steps,
                future_steps=self.future_steps,
                teacher_forcing=self.teacher_forcing,
                seed=self.seed,
            )
        )

    @classmethod
    def load(cls, path):
        model, stats, _ = load_checkpoint(path)
        if not isinstance(model, Seq2SeqNet):
            raise TypeError(f"checkpoint holds {type(model).__name__}, not Seq2SeqNet")
        cfg = model.config
        est = cls(
            embed=cfg.embed,
            hidden=cfg.hidden,
            observed_steps=cfg.observed_steps,
            future_steps=cfg.future_steps,
            teacher_forcing=cfg.teacher_forcing,
            seed=cfg.seed,
        )
        return est._adopt(model, stats)
