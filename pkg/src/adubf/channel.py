"""
Multi-cell network realizations: BS grid, user drops, large-scale gain with
log-normal shadowing, i.i.d. Rayleigh small-scale fading, and a fixed-record
binary dataset format.

Users are ordered cell-major: user ``n`` lives in cell ``n // K``.
"""

import math
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, DomainError, FormatError

__all__ = [
    "LayoutConfig", "Geometry", "ChannelSample", "Dataset",
    "dbm_to_watts", "path_loss_db", "draw_shadowing", "generate_layout",
    "sample_channels", "generate_sample", "generate_dataset",
    "write_dataset", "read_dataset", "record_size", "HEADER_SIZE",
]


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class LayoutConfig:
    """Network layout and link budget.

    ``cell_spacing_km`` is half the BS-to-BS distance; BSs sit on a square
    grid (``ceil(sqrt(M))`` columns) with pitch ``2 * cell_spacing_km``.
    """

    M: int = 3
    K: int = 2
    Nt: int = 8
    Nr: int = 2
    r_min_km: float = 0.01
    r_max_km: float = 1.0
    cell_spacing_km: float = 1.0
    shadow_sigma_db: float = 8.0
    noise_dbm: float = -114.0
    power_dbm: float = 35.0

    def __post_init__(self):
        for name in ("M", "K", "Nt", "Nr"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.Nt < self.Nr:
            raise ConfigError(f"need Nt >= Nr, got Nt={self.Nt}, Nr={self.Nr}")
        if not 0 < self.r_min_km < self.r_max_km:
            raise ConfigError("need 0 < r_min_km < r_max_km")
        if self.cell_spacing_km <= 0:
            raise ConfigError("cell_spacing_km must be positive")
        if self.shadow_sigma_db < 0:
            raise ConfigError("shadow_sigma_db must be non-negative")

    @property
    def N(self):
        return self.M * self.K

    @property
    def sigma2(self):
        """Noise power in watts."""
        return float(dbm_to_watts(self.noise_dbm))

    @property
    def power(self):
        """Per-BS power budget in watts."""
        return float(dbm_to_watts(self.power_dbm))

    @property
    def cell_of(self):
        return np.repeat(np.arange(self.M), self.K)

    def as_dict(self):
        return asdict(self)


@dataclass
class Geometry:
    bs_xy: np.ndarray      # [M, 2] km
    user_xy: np.ndarray    # [N, 2] km
    cell_of: np.ndarray    # [N]

    def distances(self):
        """[N, M] user-to-BS distances in km."""
        d = self.user_xy[:, None, :] - self.bs_xy[None, :, :]
        return np.hypot(d[..., 0], d[..., 1])


@dataclass
class ChannelSample:
    """One network realization.

    ``links[n, j]`` is the Nr x Nt channel from BS ``j`` to user ``n``.  The
    node tensor ``Z`` and adjacency tensor ``A`` are views derived from it.
    """

    links: np.ndarray                 # [N, M, Nr, Nt] complex
    cell_of: np.ndarray               # [N]
    user_xy: np.ndarray = None        # [N, 2] km, optional metadata
    seed: int = 0

    @property
    def Z(self):
        n = np.arange(self.links.shape[0])
        return self.links[n, self.cell_of]

    @property
    def A(self):
        return self.links[:, self.cell_of]

    def __eq__(self, other):
        if not isinstance(other, ChannelSample):
            return NotImplemented
        same_xy = (self.user_xy is None and other.user_xy is None) or (
            self.user_xy is not None and other.user_xy is not None
            and np.array_equal(self.user_xy, other.user_xy))
        return (np.array_equal(self.links, other.links)
                and np.array_equal(self.cell_of, other.cell_of)
                and same_xy and self.seed == other.seed)


@dataclass
class Dataset:
    layout: LayoutConfig
    seed: int
    samples: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def links(self):
        """Stacked channels ``[S, N, M, Nr, Nt]``."""
        return np.stack([s.links for s in self.samples])

    def subset(self, idx):
        return Dataset(self.layout, self.seed, [self.samples[i] for i in idx])


def path_loss_db(d_km, z=1.0):
    """Large-scale loss ``120.9 + 37.6 log10(d) + 10 log10(z)`` in dB."""
    d = np.asarray(d_km, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(d <= 0):
        raise DomainError("distance must be positive")
    if np.any(z <= 0):
        raise DomainError("shadowing draw must be positive")
    out = 120.9 + 37.6 * np.log10(d) + 10.0 * np.log10(z)
    return float(out) if out.ndim == 0 else out


def draw_shadowing(rng, size, sigma_db):
    """Log-normal shadowing: ``10 log10(z) ~ N(0, sigma_db^2)``."""
    return 10.0 ** (rng.normal(0.0, sigma_db, size) / 10.0)


def _rng(seed, *stream):
    return np.random.default_rng([int(seed), *stream])


def generate_layout(cfg: LayoutConfig, seed: int) -> Geometry:
    """BS grid plus users dropped uniformly (by area) in each cell's annulus."""
    if not isinstance(cfg, LayoutConfig):
        raise ConfigError("generate_layout needs a LayoutConfig")
    rng = _rng(seed, 0)
    cols = math.ceil(math.sqrt(cfg.M))
    pitch = 2.0 * cfg.cell_spacing_km
    c = np.arange(cfg.M)
    bs = np.stack([(c % cols) * pitch, (c // cols) * pitch], axis=1).astype(float)
    r = np.sqrt(rng.uniform(cfg.r_min_km ** 2, cfg.r_max_km ** 2, cfg.N))
    r = np.clip(r, cfg.r_min_km, cfg.r_max_km)
    theta = rng.uniform(0.0, 2 * np.pi, cfg.N)
    cell_of = cfg.cell_of
    users = bs[cell_of] + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return Geometry(bs_xy=bs, user_xy=users, cell_of=cell_of)


def large_scale_gain(geom, cfg, rng):
    """[N, M] linear gains ``10^(-beta/10)``."""
    z = draw_shadowing(rng, (geom.user_xy.shape[0], geom.bs_xy.shape[0]), cfg.shadow_sigma_db)
    return 10.0 ** (-path_loss_db(geom.distances(), z) / 10.0)


def sample_channels(geom: Geometry, cfg: LayoutConfig, seed: int) -> ChannelSample:
    if geom.user_xy.shape[0] != cfg.N or geom.bs_xy.shape[0] != cfg.M:
        raise ConfigError("geometry does not match layout")
    rng = _rng(seed, 1)
    gain = large_scale_gain(geom, cfg, rng)
    shape = (cfg.N, cfg.M, cfg.Nr, cfg.Nt)
    g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    links = np.sqrt(gain)[:, :, None, None] * g
    return ChannelSample(links=links, cell_of=geom.cell_of.copy(),
                         user_xy=geom.user_xy.copy(), seed=int(seed))


def generate_sample(cfg, seed, index):
    """Sample ``index`` of the stream ``seed``; independent of other indices."""
    sub = int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])
    return sample_channels(generate_layout(cfg, sub), cfg, sub)


def generate_dataset(cfg: LayoutConfig, count: int, seed: int) -> Dataset:
    if count <= 0:
        raise ConfigError("sample count must be positive")
    return Dataset(cfg, int(seed), [generate_sample(cfg, seed, i) for i in range(count)])


# --------------------------------------------------------------------------
# file format
#
# header: magic[8] | version u32 | M K Nt Nr u32 | 6 x f64 layout floats |
#         seed u64 | count u64
# record: seed u64 | user_xy f64[N*2] | links f64[N*M*Nr*Nt*2] (re, im interleaved)
# all little-endian
# --------------------------------------------------------------------------

MAGIC = b"ADUBFDS\x00"
VERSION = 1
_HEADER = struct.Struct("<8sI4I6dQQ")
HEADER_SIZE = _HEADER.size
_FLOAT_FIELDS = ("r_min_km", "r_max_km", "cell_spacing_km", "shadow_sigma_db",
                 "noise_dbm", "power_dbm")


def record_size(cfg: LayoutConfig) -> int:
    return 8 + 8 * (2 * cfg.N) + 8 * (2 * cfg.N * cfg.M * cfg.Nr * cfg.Nt)


def write_dataset(ds: Dataset, path) -> None:
    cfg = ds.layout
    if len(ds) == 0:
        raise FormatError("refusing to write an empty dataset")
    floats = [getattr(cfg, f) for f in _FLOAT_FIELDS]
    shape = (cfg.N, cfg.M, cfg.Nr, cfg.Nt)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, cfg.M, cfg.K, cfg.Nt, cfg.Nr,
                              *floats, ds.seed, len(ds)))
        for s in ds.samples:
            if s.links.shape != shape:
                raise FormatError(f"sample shape {s.links.shape} != layout {shape}")
            xy = s.user_xy if s.user_xy is not None else np.full((cfg.N, 2), np.nan)
            fh.write(struct.pack("<Q", s.seed))
            fh.write(np.ascontiguousarray(xy, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.links, dtype="<c16").view("<f8").tobytes())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise FormatError("truncated header")
    magic, version, M, K, Nt, Nr, *rest = _HEADER.unpack_from(raw, 0)
    floats, seed, count = rest[:6], rest[6], rest[7]
    if magic != MAGIC:
        raise FormatError("bad magic; not a dataset file")
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    try:
        cfg = LayoutConfig(M, K, Nt, Nr, **dict(zip(_FLOAT_FIELDS, floats)))
    except ConfigError as exc:
        raise FormatError(f"invalid layout in header: {exc}") from exc
    rec = record_size(cfg)
    if count == 0 or len(raw) != HEADER_SIZE + count * rec:
        raise FormatError(f"file size {len(raw)} does not match {count} records of {rec} bytes")
    n_xy, shape = 2 * cfg.N, (cfg.N, cfg.M, cfg.Nr, cfg.Nt)
    n_links = 2 * int(np.prod(shape))
    samples, off, cell_of = [], HEADER_SIZE, cfg.cell_of
    for _ in range(count):
        (s_seed,) = struct.unpack_from("<Q", raw, off)
        xy = np.frombuffer(raw, "<f8", n_xy, off + 8).reshape(cfg.N, 2).copy()
        links = np.frombuffer(raw, "<f8", n_links, off + 8 + 8 * n_xy).copy()
        links = links.view("<c16").reshape(shape).astype(np.complex128)
        samples.append(ChannelSample(links, cell_of.copy(),
                                     None if np.all(np.isnan(xy)) else xy, s_seed))
        off += rec
    return Dataset(cfg, seed, samples)


def layout_fields():
    return [f.name for f in fields(LayoutConfig)]
