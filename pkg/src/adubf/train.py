"""
Training loop and evaluation for the ADU model.

One training example is one full network realization (all users of all
cells); the loss averages over the batch.  Epoch shuffling uses a
permutation drawn from ``(seed, epoch)`` so runs are reproducible and a
resumed run sees the same batches it would have seen uninterrupted.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .baselines import SchemeResult
from .errors import ConfigError, TrainingDiverged
from .model import ADUModel, Normalizer, total_loss, vib_penalty
from .nn import adam_step

__all__ = ["LogRow", "TrainResult", "EvalResult", "train_model", "evaluate_model",
           "check_layout", "bernoulli_kl", "LOG_COLUMNS"]

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "loss", "mean_rate", "vib_penalty", "alpha")


@dataclass
class LogRow:
    epoch: int
    loss: float
    mean_rate: float
    vib_penalty: float
    alpha: float

    def as_tuple(self):
        return (self.epoch, self.loss, self.mean_rate, self.vib_penalty, self.alpha)


@dataclass
class TrainResult:
    model: ADUModel
    rows: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)


@dataclass
class EvalResult(SchemeResult):
    """Scheme result plus the mean per-bit KL of the feedback distribution."""

    kl_per_bit: float = 0.0
    bits: np.ndarray = None


def bernoulli_kl(logits):
    """Elementwise ``KL(Bern(sigm(z)) || Bern(1/2))`` in nats."""
    z = np.asarray(logits, dtype=float)
    p = 0.5 * (1 + np.tanh(0.5 * z))
    lp = -np.logaddexp(0.0, -z)
    lq = -np.logaddexp(0.0, z)
    return p * (lp + np.log(2)) + (1 - p) * (lq + np.log(2))


def check_layout(dataset, layout):
    if dataset.layout.as_dict() != layout.as_dict():
        raise ConfigError("dataset layout does not match the configured layout")


def train_model(cfg, dataset, model=None, start_epoch=0, on_epoch=None):
    """Train ``model`` (or a fresh one) on ``dataset`` for the configured epochs.

    Parameters
    ----------
    cfg : ExperimentConfig
    dataset : Dataset
        Must share ``cfg.layout``.
    model : ADUModel, optional
        Resume from this model; ``start_epoch`` is the first epoch to run.
    on_epoch : callable, optional
        Called as ``on_epoch(model, row)`` after each epoch.
    """
    check_layout(dataset, cfg.layout)
    tc = cfg.training
    links = dataset.links()
    if model is None:
        model = ADUModel(cfg.layout, cfg.model, seed=tc.seed,
                         normalizer=Normalizer.fit(links))
    gamma = cfg.gamma
    S = links.shape[0]
    if tc.batch_size > S:
        raise ConfigError("batch_size exceeds the dataset size")
    n_batches = S // tc.batch_size
    result = TrainResult(model)
    store = model.store
    for epoch in range(start_epoch, tc.epochs):
        alpha = tc.schedule(epoch)
        perm = np.random.default_rng([tc.seed, epoch, 11]).permutation(S)
        sums = np.zeros(3)
        for b in range(n_batches):
            idx = perm[b * tc.batch_size:(b + 1) * tc.batch_size]
            out = model.forward(links[idx], alpha, train=True)
            pen = vib_penalty(out.feedback)
            loss = total_loss(out.rates, pen, gamma)
            value = float(loss.value.real)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch * n_batches + b, value)
            grads = ad.backward(loss)
            grads = {name: np.real(grads.get(store[name], np.zeros(store[name].shape)))
                     for name in store.trainable}
            adam_step(store, grads, tc.lr, tc.beta1, tc.beta2, tc.eps)
            rate = float(np.mean(np.sum(out.rates.value, axis=-1)))
            sums += (value, rate, float(pen.value.real))
            result.batch_losses.append(value)
        row = LogRow(epoch, *(sums / n_batches), alpha)
        result.rows.append(row)
        log.info("epoch %d loss %.4f rate %.3f vib %.4f alpha %.2f", *row.as_tuple())
        if on_epoch is not None:
            on_epoch(model, row)
    return result


def evaluate_model(model, dataset, alpha, chunk=250):
    """Eval-mode rates on the true channels plus the mean per-bit KL at ``alpha``."""
    check_layout(dataset, model.layout)
    links = dataset.links()
    Vs, rates, kls, bits = [], [], [], []
    for lo in range(0, links.shape[0], chunk):
        out = model.forward(links[lo:lo + chunk], alpha, train=False)
        Vs.append(out.V.value)
        rates.append(np.maximum(out.rates.value, 0.0))
        kls.append(bernoulli_kl(alpha * out.feedback.u))
        bits.append(out.feedback.bits.value)
    per_user = np.concatenate(rates)
    return EvalResult(per_user.sum(axis=1), per_user, np.concatenate(Vs),
                      model.layout.cell_of, float(np.mean(np.concatenate(kls))),
                      np.concatenate(bits))
