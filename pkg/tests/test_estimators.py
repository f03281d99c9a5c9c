"""Estimator surface: parameter plumbing, fitted-state checks, and
round trips through checkpoints."""

import numpy as np
import pytest

from emag.data import generate_dataset, kitchen_config
from emag.estimators import (
    ConstantVelocityForecaster,
    EmagForecaster,
    KalmanForecaster,
    NotFittedError,
    Seq2SeqForecaster,
)


def tiny_emag(**overrides):
    base = dict(channels=16, blocks=1, heads=2, dropout=0.0, epochs=2, warmup_epochs=1, batch_size=8)
    base.update(overrides)
    return EmagForecaster(**base)


@pytest.fixture(scope="module")
def samples():
    return generate_dataset(kitchen_config(), 16, seed=0)


class TestParams:
    def test_get_params_reflects_constructor(self):
        est = tiny_emag(peak_lr=5e-4)
        params = est.get_params()
        assert params["channels"] == 16 and params["peak_lr"] == 5e-4
        rebuilt = EmagForecaster(**params)
        assert rebuilt.get_params() == params

    def test_set_params_returns_self_and_validates(self):
        est = ConstantVelocityForecaster()
        assert est.set_params() is est
        est = tiny_emag()
        est.set_params(epochs=7, use_flow=False)
        assert est.epochs == 7 and est.use_flow is False
        with pytest.raises(ValueError, match="typo"):
            est.set_params(typo=1)

    def test_repr_lists_params(self):
        text = repr(Seq2SeqForecaster(hidden=32))
        assert "Seq2SeqForecaster" in text and "hidden=32" in text


class TestFittedState:
    def test_predict_before_fit_raises(self, samples):
        for est in (
            ConstantVelocityForecaster(),
            KalmanForecaster(),
            tiny_emag(),
            Seq2SeqForecaster(embed=16, hidden=16, epochs=1, warmup_epochs=0, batch_size=8),
        ):
            with pytest.raises(NotFittedError):
                est.predict(samples)

    def test_empty_sample_list_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            ConstantVelocityForecaster().fit([])


class TestBaselines:
    def test_cvm_fit_predict_score(self, samples):
        est = ConstantVelocityForecaster().fit(samples)
        preds = est.predict(samples)
        assert preds.shape == (16, 16)
        assert est.score(samples) < 0

    def test_kalman_predict(self, samples):
        preds = KalmanForecaster().fit(samples).predict(samples[:4])
        assert preds.shape == (4, 16)
        assert np.all(np.isfinite(preds))


class TestLearned:
    def test_emag_fit_predict_deterministic(self, samples):
        a = tiny_emag().fit(samples).predict(samples)
        b = tiny_emag().fit(samples).predict(samples)
        assert a.shape == (16, 16)
        np.testing.assert_array_equal(a, b)

    def test_seed_changes_predictions(self, samples):
        a = tiny_emag(seed=0).fit(samples).predict(samples)
        b = tiny_emag(seed=1).fit(samples).predict(samples)
        assert not np.array_equal(a, b)

    def test_seq2seq_fit_predict(self, samples):
        est = Seq2SeqForecaster(embed=16, hidden=16, epochs=2, warmup_epochs=1, batch_size=8)
        preds = est.fit(samples).predict(samples)
        assert preds.shape == (16, 16)
        assert np.all(np.isfinite(preds))

    def test_save_load_round_trip(self, samples, tmp_path):
        est = tiny_emag().fit(samples)
        path = tmp_path / "est.json"
        est.save(path)
        loaded = EmagForecaster.load(path)
        np.testing.assert_array_equal(loaded.predict(samples), est.predict(samples))
        assert loaded.get_params()["channels"] == 16

    def test_load_rejects_wrong_model_type(self, samples, tmp_path):
        est = Seq2SeqForecaster(embed=16, hidden=16, epochs=1, warmup_epochs=0, batch_size=8).fit(samples)
        path = tmp_path / "s2s.json"
        est.save(path)
        with pytest.raises(TypeError, match="Seq2SeqNet"):
            EmagForecaster.load(path)
        np.testing.assert_array_equal(
            Seq2SeqForecaster.load(path).predict(samples), est.predict(samples)
        )

    def test_ablation_flags_reach_model(self, samples):
        est = tiny_emag(use_ego=False, use_flow=False, alpha=0.0).fit(samples)
        assert est.model_.config.use_ego is False
        assert est.model_.ego_head is None
        assert est.predict(samples).shape == (16, 16)
