"""Convolutional autoencoder with optional additive skip connections.

Encoder: `levels` strided 5x5 convolutions halving the spatial size each step
(256 -> 128/64/32/16/8/4 at the defaults, bottleneck 4x4x512). Decoder: per
level, nearest-neighbor upsampling by 2 followed by a 5x5 convolution; with
skip connections on, the encoder activation at the matching resolution is
ADDED to the upsampled map before that convolution (the bottleneck itself has
no skip). Hidden activations are LeakyReLU(0.2); a final 1x1 projection with a
sigmoid keeps outputs in [0, 1]. Skips introduce no parameters, so the plain
autoencoder and the skip variant have identical parameter counts.

Spatial (channel-wise) dropout sits after each level's activation, encoder and
decoder symmetric by resolution, with per-level rates ordered from the highest
resolution to the lowest. Dropout only fires when a torch.Generator is handed
to the forward pass -- plain inference is deterministic by construction.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import rng as rngmod
from .image import GrayImage

DEFAULT_CHANNELS = (32, 64, 128, 256, 512, 512)
DEFAULT_DROPOUT = (0.0, 0.0, 0.10, 0.20, 0.30, 0.40)
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; the defaults give the full-size network."""

    input_size: tuple = (256, 256)
    levels: int = 6
    channel_plan: tuple = DEFAULT_CHANNELS
    kernel: int = 5
    skip_connections: bool = True
    dropout_schedule: tuple = DEFAULT_DROPOUT

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least 2 levels")
        if len(self.channel_plan) != self.levels:
            raise ValueError(
                f"channel_plan has {len(self.channel_plan)} entries for {self.levels} levels"
            )
        if len(self.dropout_schedule) != self.levels:
            raise ValueError(
                f"dropout_schedule has {len(self.dropout_schedule)} entries for "
                f"{self.levels} levels"
            )
        if any(not (0.0 <= p < 1.0) for p in self.dropout_schedule):
            raise ValueError("dropout rates must lie in [0, 1)")
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        if self.channel_plan[-1] != self.channel_plan[-2]:
            raise ValueError(
                "the two deepest channel counts must match so the deepest skip "
                "addition is shape-compatible"
            )
        h, w = self.input_size
        f = 2**self.levels
        if h % f or w % f or h < f or w < f:
            raise ValueError(
                f"input size {h}x{w} must be divisible by 2^levels = {f}"
            )

    @property
    def bottleneck_shape(self):
        h, w = self.input_size
        f = 2**self.levels
        return (h // f, w // f, self.channel_plan[-1])


class Autoencoder(nn.Module):
    """The network itself; use build()/forward()/mc_forward() from this module."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        k, pad = spec.kernel, spec.kernel // 2
        plan = spec.channel_plan
        enc = []
        in_ch = 1
        for out_ch in plan:
            enc.append(nn.Conv2d(in_ch, out_ch, k, stride=2, padding=pad))
            in_ch = out_ch
        self.encoder = nn.ModuleList(enc)
        # decoder conv at stage i runs at resolution input/2^(levels-1-i); its
        # output width must match the next stage's skip tap
        dec = []
        in_ch = plan[-1]
        for i in range(spec.levels):
            out_ch = plan[spec.levels - 3 - i] if i <= spec.levels - 3 else plan[0]
            dec.append(nn.Conv2d(in_ch, out_ch, k, stride=1, padding=pad))
            in_ch = out_ch
        self.decoder = nn.ModuleList(dec)
        self.project = nn.Conv2d(plan[0], 1, 1)

    def forward(self, x, dropout_gen=None):
        spec = self.spec
        skips = []
        h = x
        for lvl, conv in enumerate(self.encoder):
            h = F.leaky_relu(conv(h), LEAKY_SLOPE)
            h = _spatial_dropout(h, spec.dropout_schedule[lvl], dropout_gen)
            skips.append(h)
        for i, conv in enumerate(self.decoder):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            tap = spec.levels - 2 - i  # encoder level at this resolution
            if tap >= 0 and spec.skip_connections:
                h = h + skips[tap]
            h = F.leaky_relu(conv(h), LEAKY_SLOPE)
            rate = spec.dropout_schedule[tap] if tap >= 0 else 0.0
            h = _spatial_dropout(h, rate, dropout_gen)
        return torch.sigmoid(self.project(h))


def _spatial_dropout(h, p, gen):
    """Channel-wise dropout driven by an explicit generator; identity when off."""
    if gen is None or p <= 0.0:
        return h
    keep = 1.0 - p
    mask = (
        torch.rand(h.shape[0], h.shape[1], 1, 1, generator=gen, dtype=h.dtype) < keep
    ).to(h.dtype)
    return h * mask / keep


# ---- construction ----


def build(spec: ModelSpec, seed, dtype=torch.float32) -> Autoencoder:
    """Instantiate the network with fan-in-scaled uniform init under `seed`."""
    net = Autoencoder(spec).to(dtype)
    gen = torch.Generator().manual_seed(rngmod.torch_seed(seed, rngmod.INIT))
    with torch.no_grad():
        for conv in list(net.encoder) + list(net.decoder) + [net.project]:
            fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
            bound = 1.0 / math.sqrt(fan_in)
            conv.weight.uniform_(-bound, bound, generator=gen)
            conv.bias.uniform_(-bound, bound, generator=gen)
    net.init_seed = int(seed)
    return net


def param_count(net) -> int:
    return sum(p.numel() for p in net.parameters())


# ---- inference ----


def _to_tensor(net, image: GrayImage):
    spec = net.spec
    if image.shape != tuple(spec.input_size):
        raise ValueError(
            f"input is {image.shape[0]}x{image.shape[1]} but the network expects "
            f"{spec.input_size[0]}x{spec.input_size[1]}"
        )
    dtype = next(net.parameters()).dtype
    return torch.from_numpy(image.pixels).to(dtype)[None, None]


def forward(net, image: GrayImage) -> GrayImage:
    """Deterministic reconstruction of one image (dropout disabled)."""
    with torch.no_grad():
        out = net(_to_tensor(net, image))
    return GrayImage(out[0, 0].numpy().astype(np.float32))


def mc_forward(net, image: GrayImage, passes=30, rng=None) -> np.ndarray:
    """Stack of `passes` reconstructions with the dropout schedule active.

    `rng` (a numpy Generator or an int seed) drives the dropout masks; the same
    stream state always reproduces the same stack, byte for byte.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    if rng is None:
        raise ValueError("mc_forward needs an explicit rng (Generator or int seed)")
    if isinstance(rng, (int, np.integer)):
        torch_seed = int(rng)
    else:
        torch_seed = int(rng.integers(0, 2**63 - 1))
    gen = torch.Generator().manual_seed(torch_seed)
    x = _to_tensor(net, image)
    outs = []
    with torch.no_grad():
        for _ in range(passes):
            outs.append(net(x, dropout_gen=gen)[0, 0].numpy().astype(np.float32))
    return np.stack(outs)


# ---- checkpoints ----

CHECKPOINT_FORMAT = "stainad-checkpoint-v1"


def save_checkpoint(net, path, extra=None):
    """Write a self-describing checkpoint (spec + init seed + weights)."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_spec": _spec_dict(net.spec),
        "init_seed": getattr(net, "init_seed", 0),
        "state_dict": net.state_dict(),
    }
    if extra:
        overlap = set(extra) & set(payload)
        if overlap:
            raise ValueError(f"extra keys collide with checkpoint fields: {sorted(overlap)}")
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path):
    """Read a checkpoint; returns (network, metadata dict)."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    spec = spec_from_dict(payload["model_spec"])
    net = build(spec, payload.get("init_seed", 0))
    net.load_state_dict(payload["state_dict"])
    return net, payload


def _spec_dict(spec: ModelSpec) -> dict:
    return {
        "input_size": list(spec.input_size),
        "levels": spec.levels,
        "channel_plan": list(spec.channel_plan),
        "kernel": spec.kernel,
        "skip_connections": spec.skip_connections,
        "dropout_schedule": list(spec.dropout_schedule),
    }


def spec_from_dict(d) -> ModelSpec:
    return ModelSpec(
        input_size=tuple(d["input_size"]),
        levels=int(d["levels"]),
        channel_plan=tuple(d["channel_plan"]),
        kernel=int(d["kernel"]),
        skip_connections=bool(d["skip_connections"]),
        dropout_schedule=tuple(d["dropout_schedule"]),
    )
