"""HM-BiTCN: stacked bidirectional dilated causal convolution blocks.

Public inputs are B x T x C. After the optional CIF front end the tensor is
moved to B x C x T, passed through the residual blocks, averaged over time and
projected to class logits by one linear layer.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .cif import CifConfig, apply_cif, constrain_coefficients
from .snr import make_rng
from .tensor import DimensionError, Tensor

MODEL_MAGIC = b"HMBT"
MODEL_VERSION = 1


class Direction(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    BOTH = "both"


@dataclass
class HmBiTcnConfig:
    input_channels: int = 4
    kernel_size: int = 3
    channel_widths: list[int] = field(default_factory=lambda: [16, 16, 16])
    dilation_schedule: list[int] = field(default_factory=lambda: [4, 2, 1])
    direction_mode: Direction = Direction.BOTH
    num_classes: int = 2
    cif: CifConfig | None = None

    def __post_init__(self):
        self.direction_mode = Direction(self.direction_mode)
        if isinstance(self.cif, dict):
            self.cif = CifConfig.from_dict(self.cif)
        self.channel_widths = [int(w) for w in self.channel_widths]
        self.dilation_schedule = [int(d) for d in self.dilation_schedule]
        if not self.channel_widths or len(self.channel_widths) != len(self.dilation_schedule):
            raise ValueError("need at least one layer and one dilation per layer")
        if any(d < 1 for d in self.dilation_schedule):
            raise ValueError("dilations must be >= 1")
        if any(d2 > d1 for d1, d2 in zip(self.dilation_schedule, self.dilation_schedule[1:])):
            raise ValueError(f"dilation schedule {self.dilation_schedule} must be nonincreasing")
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.cif is not None:
            self.cif.validate(self.input_channels)

    def to_dict(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "kernel_size": self.kernel_size,
            "channel_widths": list(self.channel_widths),
            "dilation_schedule": list(self.dilation_schedule),
            "direction_mode": self.direction_mode.value,
            "num_classes": self.num_classes,
            "cif": None if self.cif is None else self.cif.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmBiTcnConfig":
        return cls(**d)

    def digest(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()


@dataclass
class BiCausalConv:
    kernel_size: int
    dilation_forward: int
    dilation_backward: int
    weight_f: Tensor | None = None
    bias_f: Tensor | None = None
    weight_b: Tensor | None = None
    bias_b: Tensor | None = None

    def parameters(self) -> list[Tensor]:
        return [p for p in (self.weight_f, self.bias_f, self.weight_b, self.bias_b) if p is not None]


@dataclass
class BiDilatedBlock:
    conv1: BiCausalConv
    conv2: BiCausalConv
    proj_weight: Tensor | None = None  # C_out x C_in x 1
    proj_bias: Tensor | None = None
    is_final: bool = False

    def parameters(self) -> list[Tensor]:
        ps = self.conv1.parameters() + self.conv2.parameters()
        if self.proj_weight is not None:
            ps += [self.proj_weight, self.proj_bias]
        return ps


def bidirectional_causal_conv(x: Tensor, layer: BiCausalConv, mode: Direction = Direction.BOTH) -> Tensor:
    """Forward causal branch plus a causal branch run on the time-reversed input."""
    mode = Direction(mode)
    out = None
    if mode in (Direction.FORWARD, Direction.BOTH):
        if layer.weight_f is None:
            raise ValueError("layer has no forward weights")
        out = tn.conv1d_causal(x, layer.weight_f, layer.bias_f, layer.dilation_forward)
    if mode in (Direction.BACKWARD, Direction.BOTH):
        if layer.weight_b is None:
            raise ValueError("layer has no backward weights")
        yb = tn.flip_time(tn.conv1d_causal(tn.flip_time(x), layer.weight_b, layer.bias_b, layer.dilation_backward))
        out = yb if out is None else tn.add(out, yb)
    return out


def block_forward(x: Tensor, block: BiDilatedBlock, mode: Direction = Direction.BOTH, taps: list | None = None) -> Tensor:
    if block.proj_weight is not None:
        res = tn.conv1d_causal(x, block.proj_weight, block.proj_bias, 1)
    else:
        res = x
    h = bidirectional_causal_conv(tn.gelu(x), block.conv1, mode)
    if taps is not None:
        taps.append(h)
    h = bidirectional_causal_conv(tn.gelu(h), block.conv2, mode)
    if taps is not None:
        taps.append(h)
    return tn.add(h, res)


def _uniform(rng: np.random.Generator, bound: float, shape) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class HmBiTcn:
    """Model parameters plus the forward pass."""

    def __init__(self, cfg: HmBiTcnConfig, seed: int = 0):
        self.cfg = cfg
        rng = make_rng(seed)
        k = cfg.kernel_size
        want_f = cfg.direction_mode in (Direction.FORWARD, Direction.BOTH)
        want_b = cfg.direction_mode in (Direction.BACKWARD, Direction.BOTH)

        def make_conv(c_in, c_out, d):
            bound = math.sqrt(1.0 / (c_in * k))
            conv = BiCausalConv(k, d, d)
            if want_f:
                conv.weight_f = _uniform(rng, bound, (c_out, c_in, k))
                conv.bias_f = _uniform(rng, bound, (c_out,))
            if want_b:
                conv.weight_b = _uniform(rng, bound, (c_out, c_in, k))
                conv.bias_b = _uniform(rng, bound, (c_out,))
            return conv

        self.blocks: list[BiDilatedBlock] = []
        c_in = cfg.input_channels
        last = len(cfg.channel_widths) - 1
        for i, (c_out, d) in enumerate(zip(cfg.channel_widths, cfg.dilation_schedule)):
            block = BiDilatedBlock(make_conv(c_in, c_out, d), make_conv(c_out, c_out, d), is_final=i == last)
            if c_in != c_out or block.is_final:
                if block.is_final:
                    w = np.zeros((c_out, c_in, 1))
                    for j in range(min(c_in, c_out)):
                        w[j, j, 0] = 1.0
                    block.proj_weight = Tensor(w, requires_grad=True)
                    block.proj_bias = Tensor(np.zeros(c_out), requires_grad=True)
                else:
                    bound = math.sqrt(1.0 / c_in)
                    block.proj_weight = _uniform(rng, bound, (c_out, c_in, 1))
                    block.proj_bias = _uniform(rng, bound, (c_out,))
            self.blocks.append(block)
            c_in = c_out

        bound = math.sqrt(1.0 / c_in)
        self.head_weight = _uniform(rng, bound, (cfg.num_classes, c_in))
        self.head_bias = _uniform(rng, bound, (cfg.num_classes,))

        self.cif_a: Tensor | None = None
        self.cif_b: Tensor | None = None
        if cfg.cif is not None and cfg.cif.learnable:
            self.cif_a = Tensor(np.array(cfg.cif.a), requires_grad=True)
            self.cif_b = Tensor(np.array(cfg.cif.b), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        """Deterministic order: CIF coefficients, blocks in order, head."""
        ps = []
        if self.cif_a is not None:
            ps += [self.cif_a, self.cif_b]
        for block in self.blocks:
            ps += block.parameters()
        return ps + [self.head_weight, self.head_bias]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def fuse(self, x):
        cif = self.cfg.cif
        if cif is None:
            return x
        if self.cif_a is not None:
            return apply_cif(x, cif, self.cif_a, self.cif_b)
        return apply_cif(x, cif)

    def features(self, x, mode: Direction | None = None, taps: list | None = None) -> Tensor:
        """Block-stack output, B x C_last x T."""
        if x.ndim != 3 or x.shape[2] != self.cfg.input_channels:
            raise DimensionError(f"expected B x T x {self.cfg.input_channels} input, got {x.shape}")
        mode = self.cfg.direction_mode if mode is None else Direction(mode)
        h = tn.transpose(tn.as_tensor(self.fuse(x)), (0, 2, 1))
        for block in self.blocks:
            h = block_forward(h, block, mode, taps)
        return h

    def __call__(self, x) -> Tensor:
        pooled = tn.global_avg_pool_time(self.features(x))
        return tn.linear(pooled, self.head_weight, self.head_bias)

    def project_coefficients(self) -> None:
        if self.cif_a is None:
            return
        a, b = constrain_coefficients(self.cif_a.item(), self.cif_b.item(), self.cfg.cif.coefficient_mode)
        self.cif_a.data[...] = a
        self.cif_b.data[...] = b

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.data.reshape(-1) for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_parameters():
            raise ValueError(f"expected {self.num_parameters()} values, got {flat.size}")
        offset = 0
        for p in self.parameters():
            size = p.data.size
            p.data[...] = flat[offset:offset + size].reshape(p.shape)
            offset += size

    def save(self, path) -> None:
        header = MODEL_MAGIC + struct.pack("<I", MODEL_VERSION) + self.cfg.digest()
        payload = self.get_flat().astype("<f8").tobytes()
        _atomic_write_bytes(Path(path), header + payload)

    @classmethod
    def load(cls, path, cfg: HmBiTcnConfig) -> "HmBiTcn":
        raw = Path(path).read_bytes()
        if raw[:4] != MODEL_MAGIC:
            raise ValueError(f"{path}: not an HM-BiTCN parameter file")
        (version,) = struct.unpack("<I", raw[4:8])
        if version != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        if raw[8:40] != cfg.digest():
            raise ValueError(f"{path}: parameters were saved for a different model config")
        model = cls(cfg)
        model.set_flat(np.frombuffer(raw[40:], dtype="<f8"))
        return model


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def conv_dilations(cfg: HmBiTcnConfig) -> list[int]:
    """Dilation of every convolution in forward order (two per block)."""
    return [d for d in cfg.dilation_schedule for _ in range(2)]


def receptive_field_quoted(kernel_size: int, dilations, layer: int) -> int:
    """k + (k - 1) * sum of the first ``layer - 1`` dilations; the published closed form, kept for comparison."""
    return kernel_size + (kernel_size - 1) * sum(dilations[: layer - 1])


def receptive_field_stacked(kernel_size: int, dilations, layer: int) -> int:
    """1 + (k - 1) * sum of the first ``layer`` dilations."""
    return 1 + (kernel_size - 1) * sum(dilations[:layer])


def _influence(model: HmBiTcn, layer: int, steps: int | None, seed: int) -> tuple[int, list[int]]:
    dil = conv_dilations(model.cfg)
    span = 1 + (model.cfg.kernel_size - 1) * sum(dil)
    steps = steps or 2 * span + 4
    rng = make_rng(seed)
    x = rng.standard_normal((1, steps, model.cfg.input_channels))
    t = steps - 1

    def layer_out(inp):
        taps = []
        with tn.no_grad():
            model.features(inp, Direction.FORWARD, taps)
        return taps[layer - 1].data[0, :, t]

    base = layer_out(x)
    hits = []
    for t0 in range(t + 1):
        bumped = x.copy()
        bumped[0, t0, :] += 1.0
        if np.any(layer_out(bumped) != base):
            hits.append(t0)
    return t, hits


def receptive_field_empirical(model: HmBiTcn, layer: int, steps: int | None = None, seed: int = 0) -> int:
    """Span of inputs that move the forward-branch output of conv ``layer`` (1-based) at t.

    Measured as t - (earliest influencing t0) + 1 by perturbing one input step
    at a time; ``t`` is the last step of an input long enough that the left
    edge truncates nothing.
    """
    t, hits = _influence(model, layer, steps, seed)
    return t - min(hits) + 1 if hits else 0


def influence_support(model: HmBiTcn, layer: int, steps: int | None = None, seed: int = 0) -> int:
    """Number of individual input steps that move conv ``layer``'s output at t.

    Smaller than the span while dilated taps leave gaps.
    """
    return len(_influence(model, layer, steps, seed)[1])


def receptive_field_rows(cfg: HmBiTcnConfig, seed: int = 0) -> list[dict]:
    """Per-convolution comparison of the probe against both closed forms."""
    probe_cfg = HmBiTcnConfig(**{**cfg.to_dict(), "direction_mode": Direction.FORWARD, "cif": None})
    model = HmBiTcn(probe_cfg, seed)
    dil = conv_dilations(cfg)
    k = cfg.kernel_size
    rows = []
    for layer in range(1, len(dil) + 1):
        rows.append({
            "conv_layer": layer,
            "block": (layer + 1) // 2,
            "dilation": dil[layer - 1],
            "empirical_span": receptive_field_empirical(model, layer, seed=seed),
            "empirical_support": influence_support(model, layer, seed=seed),
            "stacked_formula": receptive_field_stacked(k, dil, layer),
            "quoted_formula": receptive_field_quoted(k, dil, layer),
        })
    return rows


def count_parameters(cfg: HmBiTcnConfig) -> int:
    return HmBiTcn(cfg).num_parameters()


def timing_report(cfg: HmBiTcnConfig, batch: int = 32, steps: int = 128, repeats: int = 5, seed: int = 0) -> dict:
    """Parameter count and mean wall-clock seconds per forward and forward+backward pass."""
    model = HmBiTcn(cfg, seed)
    rng = make_rng(seed)
    x = rng.standard_normal((batch, steps, cfg.input_channels))
    labels = rng.integers(0, cfg.num_classes, size=batch)
    start = time.perf_counter()
    for _ in range(repeats):
        with tn.no_grad():
            model(x)
    fwd = (time.perf_counter() - start) / repeats
    start = time.perf_counter()
    for _ in range(repeats):
        tn.zero_grad(model.parameters())
        tn.backward(tn.softmax_cross_entropy(model(x), labels))
    both = (time.perf_counter() - start) / repeats
    return {"parameters": model.num_parameters(), "forward_s": fwd, "forward_backward_s": both,
            "batch": batch, "steps": steps}
