from dataclasses import replace

import numpy as np
import pytest

from adubf import autodiff as ad
from adubf import train as train_mod
from adubf.channel import LayoutConfig, generate_dataset
from adubf.config import ExperimentConfig, TrainingConfig
from adubf.errors import ConfigError, TrainingDiverged
from adubf.model import ADUModel, ModelConfig
from adubf.train import bernoulli_kl, evaluate_model, train_model

LAYOUT = LayoutConfig(M=2, K=2, Nt=4, Nr=2)


def small_cfg(**training):
    t = dict(epochs=2, batch_size=32, train_samples=64, test_samples=16)
    t.update(training)
    return ExperimentConfig(layout=LAYOUT,
                            model=ModelConfig(B=4, encoder_widths=(16,), preproc_widths=(16,)),
                            training=TrainingConfig(**t))


@pytest.fixture(scope="module")
def data():
    return generate_dataset(LAYOUT, 64, 1)


def test_smoke_run_writes_one_row_per_epoch(data):
    res = train_model(small_cfg(), data)
    assert [r.epoch for r in res.rows] == [0, 1]
    assert len(res.batch_losses) == 4
    assert all(np.isfinite(r.loss) for r in res.rows)
    assert res.rows[1].alpha == pytest.approx(1.1)
    assert all(r.vib_penalty >= 0 for r in res.rows)


def test_runs_are_reproducible(data):
    a = train_model(small_cfg(), data).batch_losses
    b = train_model(small_cfg(), data).batch_losses
    assert a == b


def test_seed_changes_trajectory(data):
    a = train_model(small_cfg(), data).batch_losses
    b = train_model(small_cfg(seed=5), data).batch_losses
    assert a != b


def test_resume_matches_uninterrupted_run(data, tmp_path):
    full = train_model(small_cfg(epochs=3), data)
    first = train_model(small_cfg(epochs=1), data)
    p = tmp_path / "m.ckpt"
    first.model.save(p)
    model, _ = ADUModel.load(p)
    rest = train_model(small_cfg(epochs=3), data, model=model, start_epoch=1)
    assert first.batch_losses + rest.batch_losses == pytest.approx(full.batch_losses, rel=1e-12)
    assert all(t == 6 for t in model.store.t.values())


def test_layout_mismatch_rejected(data):
    cfg = replace(small_cfg(), layout=replace(LAYOUT, Nt=6))
    with pytest.raises(ConfigError):
        train_model(cfg, data)


def test_nan_loss_aborts_with_batch_index(data, monkeypatch):
    calls = {"n": 0}
    real = train_mod.total_loss

    def poisoned(rates, penalty, gamma):
        calls["n"] += 1
        loss = real(rates, penalty, gamma)
        return loss * np.nan if calls["n"] == 3 else loss

    monkeypatch.setattr(train_mod, "total_loss", poisoned)
    with pytest.raises(TrainingDiverged) as exc:
        train_model(small_cfg(), data)
    assert exc.value.batch_index == 2


def test_evaluation_is_deterministic(data):
    model = train_model(small_cfg(epochs=1), data).model
    test = generate_dataset(LAYOUT, 16, 2)
    a = evaluate_model(model, test, 1.0)
    b = evaluate_model(model, test, 1.0)
    np.testing.assert_array_equal(a.sum_rate, b.sum_rate)
    assert a.kl_per_bit >= 0 and len(a.sum_rate) == 16
    assert a.beamformers().feasible(LAYOUT.power)


def test_bernoulli_kl():
    z = np.array([-30.0, -1.0, 0.0, 2.0, 40.0])
    p = 1 / (1 + np.exp(-z))
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = np.nan_to_num(p * np.log(2 * p)) + np.nan_to_num((1 - p) * np.log(2 * (1 - p)))
    np.testing.assert_allclose(bernoulli_kl(z), direct, atol=1e-12)
    assert bernoulli_kl(0.0) == 0.0
    assert np.isclose(bernoulli_kl(60.0), np.log(2))
