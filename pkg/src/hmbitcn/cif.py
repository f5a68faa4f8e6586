"""Channel-Imposed Fusion (CIF) and its pairwise symmetric variant (PSF).

Inputs are laid out B x T x C. Both transforms work on plain numpy arrays and
on :class:`~hmbitcn.tensor.Tensor` graphs; the graph path is what lets the
fusion coefficients be learned.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, Tensor, as_tensor, concat, mul, add, take

COEF_EPS = 1e-6


class ConfigError(ValueError):
    pass


class CoefficientMode(str, enum.Enum):
    FIXED = "fixed"
    LEARNABLE_COUPLING = "learnable_coupling"
    LEARNABLE_SUPPRESSION = "learnable_suppression"


@dataclass
class CifConfig:
    """Fusion hyperparameters.

    Only the sign of ``t`` matters: ``t > 0`` overwrites the front group,
    otherwise the back group. ``pair_map`` switches to PSF, a list of
    ``(source, partner, destination)`` channel triples.
    """

    t: int = 1
    n: int = 1
    a: float = 1.0
    b: float = -1.0
    coefficient_mode: CoefficientMode = CoefficientMode.FIXED
    pair_map: list[tuple[int, int, int]] | None = field(default=None)

    def __post_init__(self):
        self.coefficient_mode = CoefficientMode(self.coefficient_mode)
        if self.pair_map is not None:
            self.pair_map = [tuple(int(v) for v in p) for p in self.pair_map]
        if self.coefficient_mode is CoefficientMode.LEARNABLE_COUPLING and not (self.a > 0 and self.b > 0):
            raise ConfigError("learnable coupling requires a > 0 and b > 0")
        if self.coefficient_mode is CoefficientMode.LEARNABLE_SUPPRESSION and not (self.a > 0 and self.b < 0):
            raise ConfigError("learnable suppression requires a > 0 and b < 0")

    @property
    def learnable(self) -> bool:
        return self.coefficient_mode is not CoefficientMode.FIXED

    def validate(self, channels: int) -> None:
        if self.pair_map is not None:
            _check_pairs(self.pair_map, channels)
            return
        if not 1 <= self.n <= channels // 2:
            raise ConfigError(f"n={self.n} outside [1, {channels // 2}] for {channels} channels")

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "n": self.n,
            "a": self.a,
            "b": self.b,
            "coefficient_mode": self.coefficient_mode.value,
            "pair_map": None if self.pair_map is None else [list(p) for p in self.pair_map],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CifConfig":
        return cls(**d)


def _check_pairs(pairs, channels: int) -> None:
    dests = set()
    for triple in pairs:
        if len(triple) != 3:
            raise ConfigError(f"pair entry {triple!r} is not a (source, partner, destination) triple")
        for idx in triple:
            if not 0 <= idx < channels:
                raise ConfigError(f"channel index {idx} outside [0, {channels})")
        if triple[2] in dests:
            raise ConfigError(f"duplicate destination channel {triple[2]}")
        dests.add(triple[2])


def _check_rank3(x) -> int:
    if x.ndim != 3:
        raise DimensionError(f"expected B x T x C input, got shape {x.shape}")
    return x.shape[2]


def apply_cif(x, cfg: CifConfig, a=None, b=None):
    """Overwrite one group of ``n`` channels with a*front + b*back.

    ``a`` and ``b`` default to the config values; pass scalar Tensors to
    differentiate through the coefficients. Returns the same kind of object
    it was given (ndarray or Tensor).
    """
    channels = _check_rank3(x)
    if cfg.pair_map is not None:
        return apply_psf(x, cfg.pair_map, cfg.a if a is None else a, cfg.b if b is None else b)
    cfg.validate(channels)
    a = cfg.a if a is None else a
    b = cfg.b if b is None else b
    n = cfg.n

    if not any(isinstance(v, Tensor) for v in (x, a, b)):
        x = np.asarray(x, dtype=np.float64)
        out = x.copy()
        added = x[:, :, :n] * a + x[:, :, channels - n:] * b
        if cfg.t > 0:
            out[:, :, :n] = added
        else:
            out[:, :, channels - n:] = added
        return out

    xt = as_tensor(x)
    front = take(xt, np.s_[:, :, :n])
    back = take(xt, np.s_[:, :, channels - n:])
    added = add(mul(front, a), mul(back, b))
    if cfg.t > 0:
        return concat([added, take(xt, np.s_[:, :, n:])], axis=2)
    return concat([take(xt, np.s_[:, :, :channels - n]), added], axis=2)


def apply_psf(x, pairs, a, b):
    """Pairwise fusion: ``out[..., dst] = a*x[..., src] + b*x[..., partner]``.

    All sources are read from the unmodified input.
    """
    channels = _check_rank3(x)
    pairs = [tuple(p) for p in pairs]
    _check_pairs(pairs, channels)

    if not any(isinstance(v, Tensor) for v in (x, a, b)):
        x = np.asarray(x, dtype=np.float64)
        out = x.copy()
        for src, partner, dst in pairs:
            out[:, :, dst] = x[:, :, src] * a + x[:, :, partner] * b
        return out

    xt = as_tensor(x)
    fused = {}
    for src, partner, dst in pairs:
        fused[dst] = add(mul(take(xt, np.s_[:, :, src:src + 1]), a),
                         mul(take(xt, np.s_[:, :, partner:partner + 1]), b))
    if not fused:
        return xt
    pieces = []
    run_start = None
    for c in range(channels + 1):
        if c < channels and c not in fused:
            if run_start is None:
                run_start = c
            continue
        if run_start is not None:
            pieces.append(take(xt, np.s_[:, :, run_start:c]))
            run_start = None
        if c < channels:
            pieces.append(fused[c])
    return concat(pieces, axis=2)


def cif_as_pairs(cfg: CifConfig, channels: int) -> list[tuple[int, int, int]]:
    """The PSF pair map equivalent to front/back CIF with ``cfg.n`` and ``cfg.t``."""
    cfg.validate(channels)
    n = cfg.n
    if cfg.t > 0:
        return [(i, channels - n + i, i) for i in range(n)]
    return [(i, channels - n + i, channels - n + i) for i in range(n)]


def cif_coefficient_gradients(upstream, x, cfg: CifConfig) -> tuple[float, float]:
    """dL/da and dL/db from the gradient flowing into the fused block.

    ``upstream`` has shape B x T x n (the overwritten channels only).
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    channels = _check_rank3(x)
    cfg.validate(channels)
    n = cfg.n
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape[:2] + (n,):
        raise DimensionError(f"upstream shape {upstream.shape} != fused block {x.shape[:2] + (n,)}")
    front = x[:, :, :n]
    back = x[:, :, channels - n:]
    return float(np.sum(upstream * front)), float(np.sum(upstream * back))


def constrain_coefficients(a: float, b: float, mode: CoefficientMode, eps: float = COEF_EPS) -> tuple[float, float]:
    """Project (a, b) onto the open sign orthant required by ``mode``."""
    mode = CoefficientMode(mode)
    if mode is CoefficientMode.FIXED:
        return a, b
    a = a if a > eps else eps
    if mode is CoefficientMode.LEARNABLE_COUPLING:
        b = b if b > eps else eps
    else:
        b = b if b < -eps else -eps
    return a, b
