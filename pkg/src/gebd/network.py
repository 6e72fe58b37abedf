"""Boundary transformer trunk and the two boundary heads.

Per video: the frame features are split into context windows
(one per SPoS group), projected to the model width, refined by pre-norm
transformer encoder blocks, and summarised by a decoder whose single
learnable query cross-attends over each refined window. Per-group cosine
similarity matrices between channel groups of the refined window give each
frame a similarity row, which a small convolution stack turns into ``h``.
The binary head reads ``[h | f]`` and the category head reads ``f``.

All batch work is laid out as (groups, L, C) so one call encodes every
window of a video.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import spos
from .fileutil import atomic_write_bytes
from . import tensor as tc
from .tensor import Parameter, Tensor

SIM_EPS = 1e-12


@dataclass
class TrunkConfig:
    in_channels: int = 16
    C: int = 32
    L: int = 16
    s: int = 8
    num_encoder_blocks: int = 2
    num_decoder_blocks: int = 1
    num_heads: int = 4
    feedforward_width: int = 64
    G: int = 4
    K: int = 8
    sim_channels: int = 4
    category_head: bool = True
    positional: bool = True
    boundary_prior: float = 0.05

    def validate(self) -> None:
        for name in ("in_channels", "C", "L", "s", "num_heads", "feedforward_width",
                     "G", "K", "sim_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_encoder_blocks < 0 or self.num_decoder_blocks < 0:
            raise ValueError("block counts must be >= 0")
        if self.C % self.num_heads:
            raise ValueError(f"C={self.C} not divisible by num_heads={self.num_heads}")
        if self.C % self.G:
            raise ValueError(f"C={self.C} not divisible by G={self.G}")
        if self.s > self.L:
            raise ValueError(f"stride s={self.s} exceeds window L={self.L}")
        if not 0 < self.boundary_prior < 1:
            raise ValueError("boundary_prior must lie in (0, 1)")

    @property
    def head_width(self) -> int:
        return max(1, self.C // 2)

    @property
    def D_h(self) -> int:
        return self.sim_channels * self.L


# building blocks ------------------------------------------------------------

class Module:
    """Tiny container: named parameters are discovered from attributes."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix + key + ".")
            elif isinstance(val, list) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    yield from m.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, C: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(C))
        self.bias = Parameter(np.zeros(C))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return tc.layer_norm(x, self.gain, self.bias, self.eps)


class Conv1d(Module):
    """Channels-last 1-D convolution, 'same' length, edge-replication padding.

    Input (..., length, c_in) -> output (..., length, c_out).
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel: int = 3):
        self.kernel = kernel
        fan_in = c_in * kernel
        self.weight = Parameter(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, c_out)))
        self.bias = Parameter(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        n = x.shape[-2]
        half = self.kernel // 2
        idx = np.clip(np.arange(n)[:, None] + np.arange(-half, self.kernel - half)[None, :], 0, n - 1)
        cols = x[(Ellipsis, idx, slice(None))]            # (..., n, k, c_in)
        cols = cols.reshape(*x.shape[:-2], n, self.kernel * x.shape[-1])
        return cols @ self.weight + self.bias


class MultiHeadAttention(Module):
    def __init__(self, C: int, num_heads: int, rng: np.random.Generator):
        self.num_heads = num_heads
        self.q = Linear(C, C, rng)
        self.k = Linear(C, C, rng)
        self.v = Linear(C, C, rng)
        self.o = Linear(C, C, rng)
        self.record = False
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        *lead, n, C = x.shape
        d = C // self.num_heads
        return x.reshape(*lead, n, self.num_heads, d).swapaxes(-2, -3)

    def __call__(self, query: Tensor, memory: Tensor) -> Tensor:
        q, k, v = self._split(self.q(query)), self._split(self.k(memory)), self._split(self.v(memory))
        d = q.shape[-1]
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
        weights = tc.softmax(scores, axis=-1)             # (..., heads, n_q, n_k)
        if self.record:
            self.last_weights = weights.data.copy()
        out = (weights @ v).swapaxes(-2, -3)
        *lead, n, h, d = out.shape
        return self.o(out.reshape(*lead, n, h * d))


class FeedForward(Module):
    def __init__(self, C: int, width: int, rng: np.random.Generator):
        self.fc1 = Linear(C, width, rng)
        self.fc2 = Linear(width, C, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(tc.gelu(self.fc1(x)))


class EncoderBlock(Module):
    def __init__(self, cfg: TrunkConfig, rng: np.random.Generator):
        self.norm1 = LayerNorm(cfg.C)
        self.attn = MultiHeadAttention(cfg.C, cfg.num_heads, rng)
        self.norm2 = LayerNorm(cfg.C)
        self.ff = FeedForward(cfg.C, cfg.feedforward_width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        y = self.norm1(x)
        x = x + self.attn(y, y)
        return x + self.ff(self.norm2(x))


class DecoderBlock(Module):
    # a single query makes self-attention a no-op mixing, so only cross-attention is kept
    def __init__(self, cfg: TrunkConfig, rng: np.random.Generator):
        self.norm_q = LayerNorm(cfg.C)
        self.norm_mem = LayerNorm(cfg.C)
        self.attn = MultiHeadAttention(cfg.C, cfg.num_heads, rng)
        self.norm_ff = LayerNorm(cfg.C)
        self.ff = FeedForward(cfg.C, cfg.feedforward_width, rng)

    def __call__(self, y: Tensor, memory: Tensor) -> Tensor:
        y = y + self.attn(self.norm_q(y), self.norm_mem(memory))
        return y + self.ff(self.norm_ff(y))


class Head(Module):
    """Two-layer fully convolutional head over time: conv, GELU, conv."""

    def __init__(self, c_in: int, hidden: int, c_out: int, rng: np.random.Generator):
        self.conv1 = Conv1d(c_in, hidden, rng)
        self.conv2 = Conv1d(hidden, c_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(tc.gelu(self.conv1(x)))


# functional pieces -----------------------------------------------------------

def group_similarity(refined, G: int) -> Tensor:
    """Cosine similarity between channel groups of every frame pair.

    ``refined`` is (..., L, C); the result is (..., G, L, L). Sub-vectors with
    norm below 1e-12 get similarity 0 with everything.
    """
    refined = refined if isinstance(refined, Tensor) else Tensor(refined)
    *lead, L, C = refined.shape
    if C % G:
        raise ValueError(f"G={G} does not divide C={C}")
    x = refined.reshape(*lead, L, G, C // G).swapaxes(-2, -3)     # (..., G, L, C/G)
    norm = tc.sqrt((x * x).sum(axis=-1, keepdims=True) + 1e-300)
    live = norm.data >= SIM_EPS
    # division is guarded: dead rows divide by 1 and are then zeroed
    safe = norm * Tensor(live.astype(float)) + Tensor((~live).astype(float))
    unit = x / safe * Tensor(live.astype(float))
    return unit @ unit.swapaxes(-1, -2)


class SimilarityEncoder(Module):
    """Turns a frame's per-group similarity row (G x L) into the vector ``h``."""

    def __init__(self, cfg: TrunkConfig, rng: np.random.Generator):
        self.L = cfg.L
        self.conv1 = Conv1d(cfg.G, cfg.sim_channels, rng)
        self.conv2 = Conv1d(cfg.sim_channels, cfg.sim_channels, rng)

    def __call__(self, rows: Tensor) -> Tensor:
        # rows: (n, G, L) -> channels-last (n, L, G)
        x = rows.swapaxes(-1, -2)
        x = self.conv2(tc.gelu(self.conv1(x)))
        return x.reshape(x.shape[0], -1)


def similarity_to_h(sim: Tensor, offset, encoder: SimilarityEncoder) -> Tensor:
    """h for a frame at ``offset`` inside a window with similarity ``sim`` (G, L, L)."""
    L = sim.shape[-1]
    if not 0 <= offset < L:
        raise ValueError(f"frame offset {offset} outside window of length {L}")
    rows = sim[:, offset, :].reshape(1, sim.shape[0], L)
    return encoder(rows).reshape(-1)


# the model --------------------------------------------------------------------

@dataclass
class Forward:
    """Intermediate and final outputs of one video's forward pass."""

    plan: spos.ContextPlan
    refined: Tensor           # (groups, L, C)
    f: Tensor                 # (T, C)
    h: Tensor                 # (T, D_h)
    b: Tensor                 # (T,)
    m: Tensor | None          # (K+1, T)


class BoundaryTransformer(Module):
    def __init__(self, cfg: TrunkConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.input_proj = Linear(cfg.in_channels, cfg.C, rng)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(cfg.L, cfg.C)))
        self.encoder = [EncoderBlock(cfg, rng) for _ in range(cfg.num_encoder_blocks)]
        self.query = Parameter(rng.normal(0.0, 0.02, size=(1, cfg.C)))
        self.decoder = [DecoderBlock(cfg, rng) for _ in range(cfg.num_decoder_blocks)]
        self.sim_encoder = SimilarityEncoder(cfg, rng)
        self.binary_head = Head(cfg.D_h + cfg.C, cfg.head_width, 1, rng)
        prior = math.log(cfg.boundary_prior / (1 - cfg.boundary_prior))
        self.binary_head.conv2.bias.data[:] = prior
        if cfg.category_head:
            self.category_head = Head(cfg.C, cfg.head_width, cfg.K + 1, rng)
            # background class starts at probability 1 - boundary_prior
            self.category_head.conv2.bias.data[0] = math.log((1 - cfg.boundary_prior) * cfg.K
                                                             / cfg.boundary_prior)
        else:
            self.category_head = None
        for name, p in self.named_parameters():
            p.name = name
        self.encoder_calls = 0

    # pieces, usable on their own ------------------------------------------------
    def embed(self, windows) -> Tensor:
        """(n, L, in_channels) raw contexts -> (n, L, C) projected (+ positions)."""
        x = self.input_proj(windows if isinstance(windows, Tensor) else Tensor(windows))
        return x + self.pos if self.cfg.positional else x

    def encode(self, context: Tensor) -> Tensor:
        """Run the encoder stack on (..., L, C) contexts; shape preserving."""
        if context.shape[-2:] != (self.cfg.L, self.cfg.C):
            raise ValueError(f"context shape {context.shape} != (..., {self.cfg.L}, {self.cfg.C})")
        self.encoder_calls += int(np.prod(context.shape[:-2], dtype=int))
        for block in self.encoder:
            context = block(context)
        return context

    def decode(self, refined: Tensor) -> Tensor:
        """Summarise (..., L, C) refined windows into (..., C) via the learned query."""
        if refined.shape[-1] != self.cfg.C:
            raise ValueError(f"refined width {refined.shape[-1]} != C={self.cfg.C}")
        lead = refined.shape[:-2]
        y = self.query.reshape(*([1] * len(lead)), 1, self.cfg.C)
        y = y + Tensor(np.zeros((*lead, 1, self.cfg.C)))
        for block in self.decoder:
            y = block(y, refined)
        return y.reshape(*lead, self.cfg.C)

    def binary_scores(self, h: Tensor, f: Tensor) -> Tensor:
        if h.shape[0] != f.shape[0]:
            raise ValueError(f"h has {h.shape[0]} frames, f has {f.shape[0]}")
        logits = self.binary_head(tc.concat([h, f], axis=-1))
        return tc.sigmoid(logits.reshape(-1))

    def category_scores(self, f: Tensor) -> Tensor:
        if self.category_head is None:
            raise ValueError("model was built without a category head")
        logits = self.category_head(f)                    # (T, K+1)
        return tc.softmax(logits, axis=-1).swapaxes(0, 1)

    def __call__(self, features) -> Forward:
        x = features.data if isinstance(features, Tensor) else np.asarray(features)
        if x.ndim != 2 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"features shape {x.shape} incompatible with "
                             f"in_channels={self.cfg.in_channels}")
        T = x.shape[0]
        ctx = spos.plan(T, self.cfg.L, self.cfg.s)
        windows = Tensor(x)[ctx.window_indices()]         # (groups, L, in)
        refined = self.encode(self.embed(windows))
        summary = self.decode(refined)                    # (groups, C)
        sim = group_similarity(refined, self.cfg.G)       # (groups, G, L, L)
        group, offset = ctx.frame_group(), ctx.frame_offset()
        rows = sim[group, :, offset, :]                   # (T, G, L)
        h = self.sim_encoder(rows)
        f = summary[group]
        b = self.binary_scores(h, f)
        m = self.category_scores(f) if self.category_head is not None else None
        return Forward(ctx, refined, f, h, b, m)


# checkpoints --------------------------------------------------------------------

CKPT_MAGIC = b"GEBDCKPT"
CKPT_VERSION = 1


def save_checkpoint(model: BoundaryTransformer, path, extra: dict | None = None) -> None:
    """Binary: magic, <u4 version, u4 header_len>, JSON header, raw float64 values."""
    params = model.named_parameters()
    entries, blobs = [], []
    for name, p in params:
        entries.append({"name": name, "shape": list(p.shape)})
        blobs.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    header = json.dumps({"config": asdict(model.cfg), "params": entries, "extra": extra or {}},
                        sort_keys=True).encode()
    payload = CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(header)) + header + b"".join(blobs)
    atomic_write_bytes(Path(path), payload)


def read_checkpoint(path) -> tuple[TrunkConfig, dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, len(CKPT_MAGIC))
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = len(CKPT_MAGIC) + 8
    header = json.loads(raw[off:off + hlen])
    off += hlen
    values = {}
    for e in header["params"]:
        n = int(np.prod(e["shape"], dtype=int))
        if off + 8 * n > len(raw):
            raise ValueError(f"{path}: truncated at parameter {e['name']}")
        values[e["name"]] = np.frombuffer(raw, "<f8", n, off).reshape(e["shape"]).copy()
        off += 8 * n
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return TrunkConfig(**header["config"]), values, header.get("extra", {})


def load_state(model: BoundaryTransformer, values: dict[str, np.ndarray]) -> None:
    """Copy parameter values in, checking names and shapes match exactly."""
    own = dict(model.named_parameters())
    missing, unexpected = set(own) - set(values), set(values) - set(own)
    if missing or unexpected:
        raise ValueError(f"parameter names differ: missing {sorted(missing)}, "
                         f"unexpected {sorted(unexpected)}")
    for name, p in own.items():
        if tuple(values[name].shape) != p.shape:
            raise ValueError(f"{name}: shape {values[name].shape} != expected {p.shape}")
        p.data = values[name].astype(tc.get_dtype())


def load_checkpoint(path, cfg: TrunkConfig | None = None) -> BoundaryTransformer:
    saved_cfg, values, _ = read_checkpoint(path)
    if cfg is not None and asdict(cfg) != asdict(saved_cfg):
        diff = {k: (v, getattr(saved_cfg, k)) for k, v in asdict(cfg).items()
                if getattr(saved_cfg, k) != v}
        raise ValueError(f"{path}: checkpoint config disagrees: {diff}")
    model = BoundaryTransformer(saved_cfg)
    load_state(model, values)
    return model
