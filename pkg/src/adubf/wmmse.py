"""
Power-constrained WMMSE beamforming on batched multi-cell channels.

Shapes (leading batch axis ``S`` optional on public entry points):

    H   [S, N, M, Nr, Nt]   H[s, n, j] = channel from BS j to user n
    V   [S, N, Nt, Nr]      beamformer of user n at its serving BS
    U   [S, N, Nr, Nr]      receive filters
    W   [S, N, Nr, Nr]      MSE weights

Users are cell-major (user ``n`` belongs to cell ``n // K``).

The per-BS power constraint is handled through scaled noise: user ``n`` sees
an effective noise ``sigma2 / P_T * P_c(V) * I`` where ``P_c`` is the power of
its serving cell.  Under that model the three block updates are exact
minimizers of the weighted-MSE surrogate, so the surrogate is monotone; the
final beamformers are rescaled per cell to the budget.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, DomainError, SingularityError

# relative diagonal loading used only when a V-update matrix is singular
LOAD_RTOL = 1e-9

__all__ = [
    "BeamformerSet", "RateReport", "WmmseState", "cell_power", "sum_rate",
    "rate_report", "init_mrt", "wmmse_update_U", "wmmse_update_W",
    "wmmse_update_V", "wmmse_surrogate", "project_power", "f_wmmse",
    "run_wmmse",
]

LN2 = np.log(2.0)


@dataclass
class BeamformerSet:
    V: np.ndarray          # [..., N, Nt, Nr]
    cell_of: np.ndarray

    def cell_power(self):
        return _cell_power_np(self.V, self.cell_of)

    def feasible(self, power, rtol=1e-6):
        return bool(np.all(self.cell_power() <= power * (1 + rtol)))


@dataclass
class RateReport:
    per_user: np.ndarray   # [..., N] bits per channel use
    cell_power: np.ndarray # [..., M]

    @property
    def sum_rate(self):
        return self.per_user.sum(axis=-1)


@dataclass
class WmmseState:
    U: Tensor
    W: Tensor
    V: Tensor


def _cells(cell_of):
    cell_of = np.asarray(cell_of)
    M = int(cell_of.max()) + 1
    K = len(cell_of) // M
    if len(cell_of) != M * K or not np.array_equal(cell_of, np.repeat(np.arange(M), K)):
        raise DimensionError("users must be ordered cell-major with equal cell sizes")
    return M, K


def _cell_power_np(V, cell_of):
    M, K = _cells(cell_of)
    p = np.sum(np.abs(V) ** 2, axis=(-2, -1))
    return p.reshape(p.shape[:-1] + (M, K)).sum(axis=-1)


def _batched(H):
    H = H if isinstance(H, Tensor) else ad.constant(np.asarray(H))
    if H.ndim == 4:
        return ad.reshape(H, (1,) + H.shape), True
    if H.ndim != 5:
        raise DimensionError(f"channel tensor must be [S,N,M,Nr,Nt], got {H.shape}")
    return H, False


def _as_batched(x, squeeze):
    x = x if isinstance(x, Tensor) else ad.constant(np.asarray(x))
    return ad.reshape(x, (1,) + x.shape) if squeeze else x


def _direct(H, cell_of):
    n = np.arange(len(cell_of))
    return H[:, n, cell_of]


def _cross(H, V, cell_of):
    """HV[s, n, m] = H[s, n, cell(m)] @ V[s, m]  ->  [S, N, N, Nr, Nr]."""
    Hc = H[:, :, cell_of]
    return Hc @ ad.reshape(V, (V.shape[0], 1) + V.shape[1:])


def cell_power(V, cell_of):
    """Differentiable per-cell power ``[S, M]``."""
    M, K = _cells(cell_of)
    pu = ad.real_part(ad.trace(V @ V.H))
    return ad.sum(ad.reshape(pu, pu.shape[:-1] + (M, K)), axis=-1)


def _noise_scale(V, cell_of, sigma2, power):
    """``sigma2 / P_T * P_c(n)`` for every user, shape [S, N, 1, 1]."""
    pc = cell_power(V, cell_of)[:, np.asarray(cell_of)]
    return ad.reshape(pc * (sigma2 / power), pc.shape + (1, 1))


def sum_rate(H, V, cell_of, sigma2):
    """Per-user achievable rates in bits, ``[S, N]`` (differentiable).

    ``R_n = log2 det(C_n) - log2 det(Q_n)`` with ``C_n`` the total received
    covariance and ``Q_n`` the interference-plus-noise covariance; this is
    log2 det(I + S_n Q_n^{-1}).
    """
    if sigma2 <= 0:
        raise DomainError("noise power must be positive")
    H, squeeze = _batched(H)
    V = _as_batched(V, squeeze)
    N = len(cell_of)
    Nr = H.shape[-2]
    HV = _cross(H, V, cell_of)
    outer = HV @ HV.H
    noise = sigma2 * np.eye(Nr)
    total = ad.sum(outer, axis=2) + noise
    mask = (1.0 - np.eye(N))[None, :, :, None, None]
    interf = ad.sum(outer * mask, axis=2) + noise
    rates = (ad.logdet(total) - ad.logdet(interf)) * (1.0 / LN2)
    return rates[0] if squeeze else rates


def rate_report(H, V, cell_of, sigma2):
    Vv = V.value if isinstance(V, Tensor) else np.asarray(V)
    r = sum_rate(ad.constant(np.asarray(H.value if isinstance(H, Tensor) else H)),
                 ad.constant(Vv), cell_of, sigma2).value
    return RateReport(per_user=np.maximum(r, 0.0), cell_power=_cell_power_np(Vv, cell_of))


def init_mrt(H, cell_of, power):
    """Matched-filter start: ``V_n ~ H_{n,c(n)}^H``, each cell splitting P_T equally."""
    _, K = _cells(cell_of)
    Hd = _direct(H, cell_of)
    norm2 = ad.real_part(ad.sum(ad.sum(Hd * ad.conj(Hd), axis=-1), axis=-1))
    safe = np.where(norm2.value > 0, 0.0, 1.0)
    scale = np.sqrt(power / K) * (1.0 / ad.sqrt(norm2 + safe)) * (1.0 - safe)
    return Hd.H * ad.reshape(scale, scale.shape + (1, 1))


def wmmse_update_U(H, state, cell_of, sigma2, power):
    HV = _cross(H, state.V, cell_of)
    n = np.arange(len(cell_of))
    Nr = H.shape[-2]
    A = ad.sum(HV @ HV.H, axis=2) + _noise_scale(state.V, cell_of, sigma2, power) * np.eye(Nr)
    return ad.inverse(A, hermitian_pd=True) @ HV[:, n, n]


def wmmse_update_W(H, state, cell_of):
    Hd = _direct(H, cell_of)
    Nr = H.shape[-2]
    E = np.eye(Nr) - state.U.H @ Hd @ state.V
    return ad.inverse(E, hermitian_pd=True)


def project_power(V, cell_of, power):
    """Scale each cell's beamformers so its power equals ``power`` exactly.

    Cells with zero power are left at zero.
    """
    pc = cell_power(V, cell_of)[:, np.asarray(cell_of)]
    dead = pc.value <= 0
    fac = ad.sqrt(power / (pc + dead)) * (1.0 - dead)
    return V * ad.reshape(fac, fac.shape + (1, 1))


def wmmse_update_V(H, state, cell_of, sigma2, power, project=False):
    """Beamformer update ``V_n = B_c^{-1} H_{n,c}^H U_n W_n`` per cell ``c``.

    With ``project=True`` the result is rescaled per cell to the budget.
    """
    M, K = _cells(cell_of)
    S, N, _, _, Nt = H.shape
    U, W = state.U, state.W
    X = U @ W @ U.H                                          # [S, N, Nr, Nr]
    Xe = ad.reshape(X, (S, N, 1) + X.shape[-2:])
    HXH = ad.sum(H.H @ Xe @ H, axis=1)                       # [S, M, Nt, Nt]
    tr = ad.real_part(ad.trace(X)) * (sigma2 / power)        # [S, N]
    c = ad.sum(ad.reshape(tr, (S, M, K)), axis=-1)           # [S, M]
    B = HXH + ad.reshape(c, (S, M, 1, 1)) * np.eye(Nt)
    try:
        Binv = ad.inverse(B, hermitian_pd=True)
    except SingularityError:
        # learned channel estimates can collapse B; load the diagonal slightly
        big = np.max(np.abs(B.value), axis=(-2, -1), keepdims=True)
        Binv = ad.inverse(B + (LOAD_RTOL * big) * np.eye(Nt), hermitian_pd=True)
    Binv = Binv[:, np.asarray(cell_of)]
    V = Binv @ _direct(H, cell_of).H @ U @ W
    return project_power(V, cell_of, power) if project else V


def wmmse_surrogate(H, state, cell_of, sigma2, power):
    """Weighted-MSE objective ``sum_n Tr(W_n E_n) - ln det W_n`` per sample ``[S]``.

    ``E_n`` is the full MSE matrix under the scaled-noise model.
    """
    H, squeeze = _batched(H)
    U, W, V = (_as_batched(x, squeeze) for x in (state.U, state.W, state.V))
    HV = _cross(H, V, cell_of)
    n = np.arange(len(cell_of))
    Nr = H.shape[-2]
    A = ad.sum(HV @ HV.H, axis=2) + _noise_scale(V, cell_of, sigma2, power) * np.eye(Nr)
    UhD = U.H @ HV[:, n, n]
    E = U.H @ A @ U - UhD - UhD.H + np.eye(Nr)
    val = ad.real_part(ad.trace(W @ E)) - ad.logdet(W)
    out = ad.sum(val, axis=-1)
    return out[0] if squeeze else out


def _alive(H, cell_of):
    Hd = _direct(H.value if isinstance(H, Tensor) else H, cell_of)
    return np.any(Hd != 0, axis=tuple(range(1, Hd.ndim)))


def f_wmmse(H, cell_of, sigma2, power, T, record=False):
    """Truncated WMMSE as a differentiable map ``H -> V`` (batched).

    Runs the MRT start and then ``T`` cycles of U, W, V updates; the output
    is rescaled per cell to the budget.  Samples whose direct channels are all
    zero map to ``V = 0``.  With ``record=True`` also returns the surrogate
    value after initialization and after every cycle, shape ``[T+1, S]``
    (the initial value is taken at the first U/W update with the start V).

    Returns
    -------
    V : Tensor [S, N, Nt, Nr]
    trace : np.ndarray or None
    """
    if T < 1:
        raise DomainError("need at least one WMMSE iteration")
    H, squeeze = _batched(H)
    alive = _alive(H, cell_of)
    if not alive.all():
        S = H.shape[0]
        idx = np.flatnonzero(alive)
        shape = (S, H.shape[1], H.shape[-1], H.shape[-2])
        if idx.size == 0:
            V = ad.constant(np.zeros(shape, dtype=complex))
            trace = np.zeros((T + 1, S)) if record else None
        else:
            Vl, tl = f_wmmse(H[idx], cell_of, sigma2, power, T, record)
            V = ad.scatter(Vl, idx, shape)
            trace = None
            if record:
                trace = np.zeros((T + 1, S))
                trace[:, idx] = tl
        return (V[0] if squeeze else V), trace

    V = init_mrt(H, cell_of, power)
    trace = []
    for _ in range(T):
        st = WmmseState(None, None, V)
        st.U = wmmse_update_U(H, st, cell_of, sigma2, power)
        st.W = wmmse_update_W(H, st, cell_of)
        if record and not trace:
            trace.append(wmmse_surrogate(ad.constant(H.value), _frozen(st), cell_of,
                                         sigma2, power).value)
        V = wmmse_update_V(H, st, cell_of, sigma2, power)
        if record:
            st.V = V
            trace.append(wmmse_surrogate(ad.constant(H.value), _frozen(st), cell_of,
                                         sigma2, power).value)
    V = project_power(V, cell_of, power)
    trace = np.array(trace) if record else None
    return (V[0] if squeeze else V), trace


def _frozen(st):
    return WmmseState(*(ad.constant(x.value) for x in (st.U, st.W, st.V)))


def run_wmmse(links, cell_of, sigma2, power, T, record=True):
    """Classic (non-differentiable) WMMSE on channel arrays.

    Returns ``(BeamformerSet, RateReport, surrogate_trace)`` scored on the
    same channels that were optimized.
    """
    links = np.asarray(links)
    V, trace = f_wmmse(ad.constant(links), cell_of, sigma2, power, T, record=record)
    bf = BeamformerSet(V.value, np.asarray(cell_of))
    return bf, rate_report(links, V.value, cell_of, sigma2), trace
