"""
Reference schemes: random-vector-quantization (RVQ) feedback with WMMSE on
the reconstructed channels, and WMMSE with perfect CSI.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import wmmse
from .errors import ConfigError, DomainError

__all__ = [
    "RvqCodebook", "rvq_build", "rvq_quantize", "chordal_distance", "split_bits",
    "rvq_reconstruct", "SchemeResult", "eval_rvq_baseline", "eval_perfect_csi",
    "run_scheme_on_estimates", "MAX_RVQ_BITS",
]

MAX_RVQ_BITS = 24


@dataclass(frozen=True)
class RvqCodebook:
    seed: int
    B: int
    entries: np.ndarray    # [2^B, dim] unit-norm complex

    @property
    def dim(self):
        return self.entries.shape[1]


def _codebook(seed, B, dim):
    rng = np.random.default_rng([int(seed), int(B), int(dim)])
    c = rng.standard_normal((2 ** B, dim)) + 1j * rng.standard_normal((2 ** B, dim))
    return c / np.linalg.norm(c, axis=1, keepdims=True)


def rvq_build(seed, B, dim):
    """``2^B`` i.i.d. isotropic unit vectors in C^dim, deterministic per seed."""
    if not 1 <= B <= MAX_RVQ_BITS:
        raise ConfigError(f"RVQ bits must lie in [1, {MAX_RVQ_BITS}], got {B}")
    if dim < 1:
        raise ConfigError("codebook dimension must be positive")
    return RvqCodebook(int(seed), int(B), _codebook(seed, B, dim))


def _best(entries, h, chunk=4096):
    """Index and inner product of the codeword closest (chordally) to each row of ``h``."""
    best_i = np.zeros(h.shape[0], dtype=np.int64)
    best_v = np.full(h.shape[0], -1.0)
    best_ip = np.zeros(h.shape[0], dtype=complex)
    for lo in range(0, entries.shape[0], chunk):
        ip = np.conj(entries[lo:lo + chunk]) @ h.T          # [chunk, R]
        mag = np.abs(ip)
        i = np.argmax(mag, axis=0)
        v = mag[i, np.arange(h.shape[0])]
        upd = v > best_v
        best_i[upd] = lo + i[upd]
        best_v[upd] = v[upd]
        best_ip[upd] = ip[i[upd], np.flatnonzero(upd)]
    return best_i, best_ip


def rvq_quantize(codebook, H):
    """Quantize the direction of ``vec(H)``.

    Returns ``(index, gain, H_hat)`` where ``H_hat`` is the phase-aligned
    codeword scaled by the (assumed known) gain ``|vec(H)|``.  ``H`` may carry
    leading batch axes; the trailing axes are vectorized.
    """
    entries = codebook.entries if isinstance(codebook, RvqCodebook) else codebook
    H = np.asarray(H)
    dim = entries.shape[1]
    lead = H.shape[:-2] if H.ndim >= 2 else ()
    h = H.reshape(-1, dim)
    gain = np.linalg.norm(h, axis=1)
    if np.any(gain == 0):
        raise DomainError("cannot quantize a zero channel")
    idx, ip = _best(entries, h / gain[:, None])
    phase = np.exp(1j * np.angle(ip))
    h_hat = gain[:, None] * entries[idx] * phase[:, None]
    return idx.reshape(lead), gain.reshape(lead), h_hat.reshape(H.shape)


def chordal_distance(a, b):
    """``sqrt(1 - |<a, b>|^2 / (|a|^2 |b|^2))`` over the trailing axis (or the whole matrix)."""
    a = np.asarray(a).reshape(np.shape(a)[0], -1) if np.ndim(a) > 1 else np.asarray(a)[None]
    b = np.asarray(b).reshape(a.shape)
    ip = np.abs(np.sum(np.conj(a) * b, axis=-1)) ** 2
    den = np.sum(np.abs(a) ** 2, axis=-1) * np.sum(np.abs(b) ** 2, axis=-1)
    return np.sqrt(np.clip(1.0 - ip / den, 0.0, None))


def split_bits(B, M):
    """Bits per link: ``B // M`` each, remainder to the direct link (index 0)."""
    base, rem = divmod(int(B), int(M))
    return [base + rem] + [base] * (M - 1)


def rvq_reconstruct(links, cell_of, B, seed):
    """BS-side channel estimates ``[S, N, M, Nr, Nt]`` from B-bit RVQ feedback."""
    links = np.asarray(links)
    S, N, M, Nr, Nt = links.shape
    bits = split_bits(B, M)
    out = np.empty_like(links)
    n = np.arange(N)
    for j in range(M):
        # link j of a user is its direct link when j == 0, else the j-th other BS
        bs = (cell_of + j) % M
        H = links[:, n, bs]                                   # [S, N, Nr, Nt]
        book = _codebook(seed, bits[j], Nr * Nt)
        _, _, H_hat = rvq_quantize(book, H)
        out[:, n, bs] = H_hat
    return out


@dataclass
class SchemeResult:
    """Per-sample outcome of one scheme on one dataset."""

    sum_rate: np.ndarray        # [S] bits
    per_user: np.ndarray        # [S, N] bits
    V: np.ndarray               # [S, N, Nt, Nr]
    cell_of: np.ndarray

    @property
    def mean(self):
        return float(np.mean(self.sum_rate))

    @property
    def std(self):
        return float(np.std(self.sum_rate))

    def beamformers(self):
        return wmmse.BeamformerSet(self.V, self.cell_of)


def run_scheme_on_estimates(links, estimates, layout, T, chunk=250):
    """WMMSE on ``estimates``, scored on the true ``links`` (shared scoring path)."""
    links, estimates = np.asarray(links), np.asarray(estimates)
    cell_of = layout.cell_of
    Vs, rates = [], []
    for lo in range(0, links.shape[0], chunk):
        V, _ = wmmse.f_wmmse(ad.constant(estimates[lo:lo + chunk]), cell_of,
                             layout.sigma2, layout.power, T)
        r = wmmse.sum_rate(ad.constant(links[lo:lo + chunk]), V, cell_of, layout.sigma2)
        Vs.append(V.value)
        rates.append(np.maximum(r.value, 0.0))
    per_user = np.concatenate(rates)
    return SchemeResult(per_user.sum(axis=1), per_user, np.concatenate(Vs), cell_of)


def eval_rvq_baseline(dataset, B, T, seed=0, chunk=250):
    """Quantize every link each user reports, reconstruct, run WMMSE, score on truth."""
    links = dataset.links()
    est = rvq_reconstruct(links, dataset.layout.cell_of, B, seed)
    return run_scheme_on_estimates(links, est, dataset.layout, T, chunk)


def eval_perfect_csi(dataset, T, chunk=250):
    links = dataset.links()
    return run_scheme_on_estimates(links, links, dataset.layout, T, chunk)
