"""
Augmented deep unfolding: a user-side encoder shared by all users maps each
user's channels to B feedback bits; a BS-side pre-processor, also shared
across users, maps the bits of one cell to a calibrated channel estimate for
one user; the truncated WMMSE map turns the calibrated channels into
beamformers, which are scored on the true channels.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import wmmse
from .autodiff import Tensor
from .channel import LayoutConfig
from .errors import ConfigError, ContractError, DimensionError, FormatError
from .nn import BatchNorm, Dense, ParamStore, load_checkpoint, save_checkpoint

__all__ = [
    "ModelConfig", "Normalizer", "FeedbackBits", "ForwardResult", "ADUModel",
    "flatten_channels", "preprocessor_inputs", "vib_penalty", "total_loss",
    "POLICIES",
]

POLICIES = ("full", "direct-only")
LN2 = np.log(2.0)


@dataclass
class ModelConfig:
    B: int = 8
    T: int = 4
    encoder_widths: tuple = (1024, 512, 256)
    preproc_widths: tuple = (512, 2048, 2048)
    policy: str = "full"
    gamma: float = 0.01

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.preproc_widths = tuple(int(w) for w in self.preproc_widths)
        if self.B < 1 or self.T < 1:
            raise ConfigError("B and T must be positive")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown cross-link policy {self.policy!r}; choose from {POLICIES}")
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")


@dataclass
class Normalizer:
    """Channel scaling statistics.

    Encoder inputs are standardized with the global ``mean``/``std`` of the
    real components.  Pre-processor outputs are scaled by ``out_scale``, a
    robust (median-based) std: the plain std is dominated by the few users
    close to their BS and would put every calibrated link at near-user SNR.
    """

    mean: float = 0.0
    std: float = 1.0
    out_scale: float = 1.0

    @classmethod
    def fit(cls, links):
        x = np.concatenate([np.real(links).ravel(), np.imag(links).ravel()])
        robust = float(np.median(np.abs(x - np.median(x)))) / 0.6744897501960817
        return cls(float(x.mean()), float(x.std()) or 1.0, robust or 1.0)


@dataclass
class FeedbackBits:
    """Bits ``[S, N, B]`` in {-1, +1}; ``logits = alpha * u`` kept in training."""

    bits: Tensor
    u: np.ndarray
    logits: Tensor = None

    @property
    def probs(self):
        return None if self.logits is None else 0.5 * (1 + np.tanh(0.5 * self.logits.value))


@dataclass
class ForwardResult:
    V: Tensor            # [S, N, Nt, Nr]
    rates: Tensor        # [S, N] bits, scored on the true channels
    feedback: FeedbackBits
    H_tilde: Tensor      # [S, N, M, Nr, Nt]


def flatten_channels(links):
    """Per-user real input ``[Re(H_{n,1..M}), Im(H_{n,1..M})]`` -> ``[S, N, 2 M Nr Nt]``."""
    links = np.asarray(links)
    S, N = links.shape[:2]
    flat = links.reshape(S, N, -1)
    return np.concatenate([flat.real, flat.imag], axis=-1)


def preprocessor_inputs(bits, cell_of):
    """Gather index ``[S, N, K]``: own slot first, then cell-mates in lexicographic bit order.

    Ordering the other users by their bit patterns makes the pre-processor
    input invariant to how cell-mates are labelled.
    """
    bits = np.asarray(bits)
    S, N, B = bits.shape
    M = int(np.max(cell_of)) + 1
    K = N // M
    cells = bits.reshape(S, M, K, B)
    if B <= 62:
        weights = 2 ** np.arange(B - 1, -1, -1, dtype=np.int64)
        codes = ((cells > 0).astype(np.int64) * weights).sum(axis=-1)
        order = np.argsort(codes, axis=-1, kind="stable")
    else:
        keys = [cells[..., b] for b in range(B - 1, -1, -1)]
        order = np.empty((S, M, K), dtype=int)
        for s in range(S):
            for c in range(M):
                order[s, c] = np.lexsort([k[s, c] for k in keys])
    idx = np.empty((S, M, K, K), dtype=int)
    for k in range(K):
        idx[:, :, k, 0] = k
        if K > 1:
            idx[:, :, k, 1:] = order[order != k].reshape(S, M, K - 1)
    base = (np.arange(M) * K)[None, :, None, None]
    return (idx + base).reshape(S, N, K)


class ADUModel:
    """Encoder + pre-processor with shared weights, around the unfolded WMMSE."""

    def __init__(self, layout: LayoutConfig, cfg: ModelConfig, seed=0, normalizer=None):
        self.layout, self.cfg = layout, cfg
        self.normalizer = normalizer or Normalizer()
        self.store = ParamStore()
        rng = np.random.default_rng([int(seed), 7])
        L = layout
        self.in_dim = 2 * L.M * L.Nt * L.Nr
        self.link_dim = 2 * L.Nt * L.Nr
        self.out_dim = self.link_dim * (L.M if cfg.policy == "full" else 1)
        self.enc_layers, self.enc_bns = self._stack("enc", self.in_dim,
                                                    cfg.encoder_widths + (cfg.B,), rng)
        self.pre_layers, self.pre_bns = self._stack("pre", L.K * cfg.B,
                                                    cfg.preproc_widths + (self.out_dim,), rng)

    def _stack(self, prefix, n_in, widths, rng):
        layers, bns = [], []
        for i, w in enumerate(widths):
            layers.append(Dense(self.store, f"{prefix}.{i}", n_in, w, rng))
            if i < len(widths) - 1:
                bns.append(BatchNorm(self.store, f"{prefix}.bn{i}", w))
            n_in = w
        return layers, bns

    @staticmethod
    def _mlp(layers, bns, x, train):
        for i, layer in enumerate(layers):
            x = layer(x)
            if i < len(bns):
                x = ad.relu(bns[i](x, train))
        return x

    # ------------------------------------------------------------------
    def encode(self, links, alpha, train=False):
        """Feedback bits for every user of every sample; ``links`` is [S, N, M, Nr, Nt]."""
        links = np.asarray(links)
        if links.ndim == 4:
            links = links[None]
        L = self.layout
        if links.shape[1:] != (L.N, L.M, L.Nr, L.Nt):
            raise DimensionError(f"channel shape {links.shape[1:]} does not match layout")
        S, N = links.shape[:2]
        x = (flatten_channels(links) - self.normalizer.mean) / self.normalizer.std
        u = self._mlp(self.enc_layers, self.enc_bns, ad.constant(x.reshape(S * N, -1)), train)
        logits = u * alpha
        bits = ad.sign_st(u, alpha)
        fb = FeedbackBits(bits=ad.reshape(bits, (S, N, self.cfg.B)),
                          u=u.value.reshape(S, N, -1),
                          logits=ad.reshape(logits, (S, N, self.cfg.B)) if train else None)
        return fb

    def encode_user(self, sample, user, alpha=1.0):
        """Bits of one user of one ``ChannelSample`` (eval mode)."""
        fb = self.encode(sample.links[None], alpha, train=False)
        return fb.bits.value[0, user]

    def preprocess(self, bits, train=False):
        """Calibrated channels ``[S, N, M, Nr, Nt]`` from bits ``[S, N, B]``."""
        L = self.layout
        bits = bits if isinstance(bits, Tensor) else ad.constant(np.asarray(bits, dtype=float))
        S, N, B = bits.shape
        if B != self.cfg.B or N != L.N:
            raise DimensionError(f"bits shape {bits.shape} does not match model")
        idx = preprocessor_inputs(bits.value, L.cell_of)
        q = bits[np.arange(S)[:, None, None], idx]                    # [S, N, K, B]
        out = self._mlp(self.pre_layers, self.pre_bns,
                        ad.reshape(q, (S * N, L.K * B)), train)
        return self._to_channels(out, S)

    def _to_channels(self, out, S):
        L = self.layout
        nl = L.M if self.cfg.policy == "full" else 1
        out = ad.reshape(out, (S, L.N, 2, nl, L.Nr, L.Nt))
        out = out * self.normalizer.out_scale
        H = ad.make_complex(out[:, :, 0], out[:, :, 1])
        if self.cfg.policy == "full":
            return H
        n = np.arange(L.N)
        return ad.scatter(H[:, :, 0], (slice(None), n, L.cell_of),
                          (S, L.N, L.M, L.Nr, L.Nt))

    def forward(self, links, alpha, train=False, bypass=False):
        """End-to-end pass; rates are always scored on the true ``links``."""
        L = self.layout
        links = np.asarray(links)
        if links.ndim == 4:
            links = links[None]
        fb = self.encode(links, alpha, train)
        H_tilde = ad.constant(links) if bypass else self.preprocess(fb.bits, train)
        V, _ = wmmse.f_wmmse(H_tilde, L.cell_of, L.sigma2, L.power, self.cfg.T)
        rates = wmmse.sum_rate(ad.constant(links), V, L.cell_of, L.sigma2)
        return ForwardResult(V=V, rates=rates, feedback=fb, H_tilde=H_tilde)

    # ------------------------------------------------------------------
    def save(self, path, extra=None):
        save_checkpoint(self.store, path)
        meta = {
            "format": "adubf-model/1",
            "layout": self.layout.as_dict(),
            "model": asdict(self.cfg),
            "normalizer": asdict(self.normalizer),
        }
        meta.update(extra or {})
        with open(_sidecar(path), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        try:
            with open(_sidecar(path)) as fh:
                meta = json.load(fh)
        except FileNotFoundError as exc:
            raise FormatError(f"missing model sidecar {_sidecar(path)}") from exc
        if meta.get("format") != "adubf-model/1":
            raise FormatError("unrecognized model sidecar")
        stored = load_checkpoint(path)
        model = cls(LayoutConfig(**meta["layout"]), ModelConfig(**meta["model"]),
                    normalizer=Normalizer(**meta["normalizer"]))
        model.adopt(stored)
        return model, meta

    def adopt(self, stored):
        """Take parameter values and optimizer state from a loaded store."""
        mine = self.store
        if set(stored.names()) != set(mine.names()):
            raise FormatError("checkpoint parameters do not match the model architecture")
        for name in mine.names():
            if stored[name].shape != mine[name].shape:
                raise FormatError(f"{name}: checkpoint shape {stored[name].shape} "
                                  f"!= model {mine[name].shape}")
            mine[name].value = stored[name].value.copy()
        for name in mine.trainable:
            mine.m[name] = stored.m[name].copy()
            mine.v[name] = stored.v[name].copy()
            mine.t[name] = stored.t[name]


def _sidecar(path):
    return str(path) + ".json"


def vib_penalty(feedback):
    """Closed-form variational bound on I(q; H) for factorized Bernoulli bits.

    ``sum_b KL(Bern(p_b) || Bern(1/2))`` summed over users (matching the
    summed rate in the loss) and averaged over samples, with ``p = sigm(alpha u)``.
    """
    if feedback.logits is None:
        raise ContractError("vib_penalty needs training-mode feedback (probabilities)")
    z = feedback.logits
    p = ad.sigmoid(z)
    kl = p * (ad.log_sigmoid(z) + LN2) + (1.0 - p) * (ad.log_sigmoid(-z) + LN2)
    S, N, B = z.shape
    return ad.sum(kl) * (1.0 / S)


def total_loss(rates, penalty, gamma):
    """``-(batch-mean sum rate) + gamma * penalty``; ``rates`` is [S, N] or [S]."""
    if gamma < 0:
        raise ConfigError("gamma must be non-negative")
    r = rates if isinstance(rates, Tensor) else ad.constant(np.asarray(rates, dtype=float))
    if r.ndim == 2:
        r = ad.sum(r, axis=-1)
    loss = -ad.mean(r)
    if gamma:
        loss = loss + penalty * gamma
    return loss
