"""Hierarchical windowed graph attention network over skeleton sequences.

Input is a windowed coordinate tensor (batch, frames, nodes, 2).  Fourier
features lift each 2-d coordinate to embed_dim channels, a fixed sinusoidal
frame encoding is added, and num_layers part-attention layers follow: each
runs blocks_per_layer masked multi-head graph-attention blocks (alternating
unshifted / frame-shifted) over spatio-temporal blocks of block_len frames
per window, then merges every block of frames by channel concatenation.
Mean pooling over the remaining frame and node positions feeds a linear
classifier.

All gradients are computed manually; modules cache their forward
activations and accumulate into Param.grad.  The attention core is
delegated to hwgat._kernels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels as kernels
from .errors import ConfigError, NumericError
from .nn import FeedForward, LayerNorm, Linear, Param
from .rng import INIT_STREAM, stream_rng
from .skeleton import SkeletonSchema, build_default_schema
from .windows import (
    WINDOW_MODES,
    WindowLayout,
    build_block_adjacency,
    build_window_layout,
)

EDGE_BIAS_MODES = ("hard", "none", "learnable")
DTYPES = {"float32": np.float32, "float64": np.float64}

# learnable-bias start value for non-edges: strongly suppressed but with a
# live gradient (exp(-8) ~ 3e-4; a -1e4 start would underflow to a dead 0)
OFF_EDGE_INIT = -8.0


@dataclass
class ModelConfig:
    """Architecture knobs; defaults give the 64-frame, 64-node layout."""

    num_classes: int
    frames: int = 64
    block_len: int = 2
    num_layers: int = 2
    blocks_per_layer: int = 2
    num_heads: int = 4
    embed_dim: int = 64
    fourier_sigma: float = 1.0
    window_mode: str = "four"
    edge_bias: str = "hard"
    use_shift: bool = True
    use_regularizer: bool = False
    mask_compat: bool = False
    ff_expansion: int = 4
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.embed_dim < 2 or self.embed_dim % 2 != 0:
            raise ConfigError(f"embed_dim must be even and >= 2, got {self.embed_dim}")
        if self.num_heads < 1 or self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"num_heads must divide embed_dim, got {self.num_heads} "
                f"for embed_dim {self.embed_dim}"
            )
        if self.num_layers < 1 or self.blocks_per_layer < 1:
            raise ConfigError("num_layers and blocks_per_layer must be >= 1")
        if self.block_len < 1:
            raise ConfigError(f"block_len must be >= 1, got {self.block_len}")
        span = self.block_len ** self.num_layers
        if self.frames < 1 or self.frames % span != 0:
            raise ConfigError(
                f"frames must be a positive multiple of block_len^num_layers "
                f"= {span}, got {self.frames}"
            )
        if self.window_mode not in WINDOW_MODES:
            raise ConfigError(
                f"window_mode must be one of {WINDOW_MODES}, got {self.window_mode!r}"
            )
        if self.edge_bias not in EDGE_BIAS_MODES:
            raise ConfigError(
                f"edge_bias must be one of {EDGE_BIAS_MODES}, got {self.edge_bias!r}"
            )
        if self.mask_compat and self.edge_bias != "hard":
            raise ConfigError("mask_compat applies only to edge_bias='hard'")
        if self.ff_expansion < 1:
            raise ConfigError(f"ff_expansion must be >= 1, got {self.ff_expansion}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")
        if self.fourier_sigma <= 0:
            raise ConfigError(f"fourier_sigma must be > 0, got {self.fourier_sigma}")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(DTYPES[self.dtype])

    def layer_width(self, layer: int) -> int:
        """Channel width entering layer ``layer`` (0-based)."""
        return self.embed_dim * self.block_len ** layer

    @property
    def final_width(self) -> int:
        return self.layer_width(self.num_layers)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


class FourierEmbedding:
    """Fixed random-frequency coordinate lift: [cos(2πBv); sin(2πBv)]."""

    def __init__(self, rng: np.random.Generator, embed_dim: int, sigma: float,
                 dtype: np.dtype):
        self.freqs = (rng.standard_normal((embed_dim // 2, 2)) * sigma).astype(dtype)

    def forward(self, coords: np.ndarray) -> np.ndarray:
        phase = 2.0 * np.pi * (coords @ self.freqs.T)
        return np.concatenate([np.cos(phase), np.sin(phase)], axis=-1)


def positional_encoding(num_frames: int, dim: int, dtype: np.dtype) -> np.ndarray:
    """Sinusoidal frame-index code: sin on even channels, cos on odd."""
    pos = np.arange(num_frames, dtype=np.float64)[:, None]
    div = np.power(10000.0, 2.0 * np.arange(dim // 2, dtype=np.float64) / dim)
    table = np.zeros((num_frames, dim))
    table[:, 0::2] = np.sin(pos / div)
    table[:, 1::2] = np.cos(pos / div)
    return table.astype(dtype)


def temporal_merge(x: np.ndarray, block_len: int) -> np.ndarray:
    """(B, F, K, c) -> (B, F/T, K, c*T): concat channels of T-frame blocks."""
    batch, frames, nodes, ch = x.shape
    if frames % block_len != 0:
        raise ConfigError(
            f"frame count {frames} is not divisible by block length {block_len}"
        )
    y = x.reshape(batch, frames // block_len, block_len, nodes, ch)
    y = y.transpose(0, 1, 3, 2, 4)
    return y.reshape(batch, frames // block_len, nodes, block_len * ch)


def temporal_split(x: np.ndarray, block_len: int) -> np.ndarray:
    """Inverse of temporal_merge."""
    batch, frames, nodes, ch = x.shape
    y = x.reshape(batch, frames, nodes, block_len, ch // block_len)
    y = y.transpose(0, 1, 3, 2, 4)
    return y.reshape(batch, frames * block_len, nodes, ch // block_len)


def to_blocks(x: np.ndarray, block_len: int, window_size: int) -> np.ndarray:
    """(B, F, K, c) -> (B·(F/T)·S, T·w, c) with frame-major nodes per block."""
    batch, frames, nodes, ch = x.shape
    nt, nw = frames // block_len, nodes // window_size
    y = x.reshape(batch, nt, block_len, nw, window_size, ch)
    y = y.transpose(0, 1, 3, 2, 4, 5)
    return y.reshape(batch * nt * nw, block_len * window_size, ch)


def from_blocks(blocks: np.ndarray, batch: int, frames: int, nodes: int,
                block_len: int, window_size: int) -> np.ndarray:
    """Inverse of to_blocks."""
    nt, nw = frames // block_len, nodes // window_size
    ch = blocks.shape[-1]
    y = blocks.reshape(batch, nt, nw, block_len, window_size, ch)
    y = y.transpose(0, 1, 3, 2, 4, 5)
    return y.reshape(batch, frames, nodes, ch)


def _heads_split(x: np.ndarray, heads: int) -> np.ndarray:
    nb, n, ch = x.shape
    y = x.reshape(nb, n, heads, ch // heads).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(y)


def _heads_merge(x: np.ndarray) -> np.ndarray:
    nb, heads, n, hd = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(nb, n, heads * hd)


def _severed_allowed(block_len: int, window_size: int, shift: int) -> np.ndarray:
    """0/1 matrix allowing only pairs on the same side of the rolled seam."""
    rolled = np.zeros(block_len, dtype=bool)
    rolled[block_len - shift:] = True
    per_node = np.repeat(rolled, window_size)
    return (per_node[:, None] == per_node[None, :]).astype(np.float64)


class GraphAttentionBlock:
    """Pre-norm masked multi-head attention plus feed-forward, residuals.

    Shifted blocks roll the frame axis by block_len // 2 before blocking
    and roll back after, and use a second bias table for the last temporal
    block, where rolled and unrolled frames must not attend to each other.
    """

    def __init__(self, rng: np.random.Generator, dim: int, cfg: ModelConfig,
                 layout: WindowLayout, shifted: bool, label: str):
        self.dim = dim
        self.heads = cfg.num_heads
        self.head_dim = dim // cfg.num_heads
        self.scale = 1.0 / math.sqrt(self.head_dim)
        self.block_len = cfg.block_len
        self.window_size = layout.window_size
        self.num_windows = layout.num_windows
        self.shift = cfg.block_len // 2 if shifted else 0
        self.label = label
        dtype = cfg.np_dtype

        self.ln1 = LayerNorm(dim, dtype)
        self.query = Linear(rng, dim, dim, dtype, bias=False)
        self.key = Linear(rng, dim, dim, dtype, bias=False)
        self.value = Linear(rng, dim, dim, dtype, bias=False)
        self.out = Linear(rng, dim, dim, dtype)
        self.ln2 = LayerNorm(dim, dtype)
        self.ff = FeedForward(rng, dim, cfg.ff_expansion, dtype)

        plain = build_block_adjacency(layout, cfg.block_len).mask
        n = plain.shape[0]
        tables = [plain]
        if self.shift > 0:
            flags = np.arange(cfg.block_len) >= cfg.block_len - self.shift
            tables.append(build_block_adjacency(layout, cfg.block_len, flags).mask)
        self.nbias = len(tables)

        self.edge_bias_param: Param | None = None
        self.mult_mask: np.ndarray | None = None
        if cfg.edge_bias == "hard" and cfg.mask_compat:
            # literal multiplicative masking: logits scaled by the 0/1 mask
            self.fixed_bias = np.zeros((self.nbias, n, n), dtype=dtype)
            self.mult_mask = np.stack(tables).astype(dtype)
        elif cfg.edge_bias == "hard":
            self.fixed_bias = np.stack(
                [np.where(t == 1.0, 0.0, -np.inf) for t in tables]
            ).astype(dtype)
        elif cfg.edge_bias == "none":
            # no anatomical mask, but the rolled-frame seam stays severed
            self.fixed_bias = np.zeros((self.nbias, n, n), dtype=dtype)
            if self.shift > 0:
                allowed = _severed_allowed(cfg.block_len, self.window_size, self.shift)
                self.fixed_bias[1] = np.where(allowed == 1.0, 0.0, -np.inf)
        else:  # learnable: trainable additive bias, seam severing kept fixed
            self.edge_bias_param = Param(
                np.where(plain == 1.0, 0.0, OFF_EDGE_INIT).astype(dtype)
            )
            self.fixed_bias = np.zeros((self.nbias, n, n), dtype=dtype)
            if self.shift > 0:
                allowed = _severed_allowed(cfg.block_len, self.window_size, self.shift)
                self.fixed_bias[1] = np.where(allowed == 1.0, 0.0, -np.inf)

        self._cache: dict | None = None
        self.last_probs: np.ndarray | None = None
        self.last_keep: np.ndarray | None = None

    def named_params(self):
        for sub in ("ln1", "query", "key", "value", "out", "ln2", "ff"):
            for name, p in getattr(self, sub).named_params():
                yield f"{sub}.{name}", p
        if self.edge_bias_param is not None:
            yield "edge_bias", self.edge_bias_param

    def bias_tables(self) -> np.ndarray:
        if self.edge_bias_param is None:
            return self.fixed_bias
        return np.ascontiguousarray(self.edge_bias_param.value[None] + self.fixed_bias)

    def _bias_index(self, batch: int, num_tblocks: int) -> np.ndarray:
        idx = np.zeros((batch, num_tblocks, self.num_windows), dtype=np.int64)
        if self.nbias == 2:
            idx[:, -1, :] = 1
        return idx.reshape(-1)

    def forward(self, x: np.ndarray, gamma: float | None = None,
                keep_mask: np.ndarray | None = None) -> np.ndarray:
        batch, frames, nodes, _ = x.shape
        residual = x
        y = self.ln1.forward(x)
        if self.shift > 0:
            y = np.roll(y, -self.shift, axis=1)
        blocks = to_blocks(y, self.block_len, self.window_size)
        q = _heads_split(self.query.forward(blocks), self.heads)
        k = _heads_split(self.key.forward(blocks), self.heads)
        v = _heads_split(self.value.forward(blocks), self.heads)
        bias = self.bias_tables()
        bias_idx = self._bias_index(batch, frames // self.block_len)
        attn, probs = kernels.attention_forward(
            q, k, v, bias, bias_idx, self.scale,
            mult_mask=self.mult_mask, gamma=gamma, keep_mask=keep_mask)
        self.last_probs = probs
        if keep_mask is not None:
            self.last_keep = keep_mask
        elif gamma is not None:
            self.last_keep = (probs <= gamma).astype(np.uint8)
        else:
            self.last_keep = None
        proj = self.out.forward(_heads_merge(attn))
        y2 = from_blocks(proj, batch, frames, nodes, self.block_len, self.window_size)
        if self.shift > 0:
            y2 = np.roll(y2, self.shift, axis=1)
        z = residual + y2
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite activation after attention in {self.label}")
        out = z + self.ff.forward(self.ln2.forward(z))
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite activation after feed-forward in {self.label}")
        self._cache = {
            "q": q, "k": k, "v": v, "probs": probs, "bias": bias,
            "bias_idx": bias_idx, "gamma": gamma, "keep": keep_mask,
            "shape": x.shape,
        }
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        c = self._cache
        batch, frames, nodes, _ = c["shape"]
        dz = dout + self.ln2.backward(self.ff.backward(dout))
        dy2 = np.roll(dz, -self.shift, axis=1) if self.shift > 0 else dz
        dproj = to_blocks(dy2, self.block_len, self.window_size)
        dattn = _heads_split(self.out.backward(dproj), self.heads)
        keep = c["keep"] if c["keep"] is not None else self.last_keep
        dq, dk, dv, dbias = kernels.attention_backward(
            np.ascontiguousarray(dattn), c["q"], c["k"], c["v"], c["probs"],
            c["bias"], c["bias_idx"], self.scale,
            mult_mask=self.mult_mask, gamma=None, keep_mask=keep)
        if self.edge_bias_param is not None:
            self.edge_bias_param.grad += dbias.sum(axis=0)
        dblocks = self.query.backward(_heads_merge(dq))
        dblocks += self.key.backward(_heads_merge(dk))
        dblocks += self.value.backward(_heads_merge(dv))
        dy = from_blocks(dblocks, batch, frames, nodes,
                         self.block_len, self.window_size)
        if self.shift > 0:
            dy = np.roll(dy, self.shift, axis=1)
        return dz + self.ln1.backward(dy)


class PartAttentionLayer:
    """blocks_per_layer attention blocks followed by one temporal merge."""

    def __init__(self, rng: np.random.Generator, index: int, dim: int,
                 cfg: ModelConfig, layout: WindowLayout):
        self.block_len = cfg.block_len
        self.blocks = [
            GraphAttentionBlock(
                rng, dim, cfg, layout,
                shifted=cfg.use_shift and m % 2 == 1,
                label=f"layer {index} block {m}",
            )
            for m in range(cfg.blocks_per_layer)
        ]

    def named_params(self):
        for m, block in enumerate(self.blocks):
            for name, p in block.named_params():
                yield f"blocks.{m}.{name}", p

    def forward(self, x: np.ndarray, reg) -> np.ndarray:
        for block in self.blocks:
            gamma, keep = reg(block.label) if reg is not None else (None, None)
            x = block.forward(x, gamma=gamma, keep_mask=keep)
        return temporal_merge(x, self.block_len)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx = temporal_split(dout, self.block_len)
        for block in reversed(self.blocks):
            dx = block.backward(dx)
        return dx


class HWGAT:
    """The full network: embedding, layers, pooling, classification."""

    def __init__(self, cfg: ModelConfig, schema: SkeletonSchema | None = None):
        self.cfg = cfg
        self.schema = schema if schema is not None else build_default_schema()
        self.layout = build_window_layout(self.schema, cfg.window_mode)
        dtype = cfg.np_dtype
        rng = stream_rng(cfg.seed, INIT_STREAM)
        self.embed = FourierEmbedding(rng, cfg.embed_dim, cfg.fourier_sigma, dtype)
        self.pos = positional_encoding(cfg.frames, cfg.embed_dim, dtype)
        self.layers = [
            PartAttentionLayer(rng, i, cfg.layer_width(i), cfg, self.layout)
            for i in range(cfg.num_layers)
        ]
        self.classifier = Linear(rng, cfg.final_width, cfg.num_classes, dtype)
        self.layer_shapes: list[tuple[int, int, int]] = []
        self._pool_shape: tuple | None = None

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.named_params():
                yield f"layers.{i}.{name}", p
        for name, p in self.classifier.named_params():
            yield f"classifier.{name}", p

    def zero_grad(self) -> None:
        for _, p in self.named_params():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.value.size for _, p in self.named_params())

    def _check_input(self, coords: np.ndarray) -> np.ndarray:
        expect = (self.cfg.frames, self.layout.total_nodes, 2)
        if coords.ndim != 4 or coords.shape[1:] != expect:
            raise ConfigError(
                f"input must have shape (batch, {expect[0]}, {expect[1]}, 2), "
                f"got {coords.shape}"
            )
        coords = np.asarray(coords, dtype=self.cfg.np_dtype)
        if not np.all(np.isfinite(coords)):
            raise NumericError("non-finite coordinates in model input")
        return coords

    def forward(self, coords: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None,
                frozen_masks: dict | None = None) -> np.ndarray:
        coords = self._check_input(coords)
        reg = None
        if training and self.cfg.use_regularizer:
            if frozen_masks is not None:
                reg = lambda label: (None, frozen_masks[label])
            else:
                if rng is None:
                    raise ConfigError("training with the regularizer needs an rng")
                reg = lambda label: (float(rng.random()), None)
        x = self.embed.forward(coords)
        x = x + self.pos[None, :, None, :]
        self.layer_shapes = []
        for layer in self.layers:
            x = layer.forward(x, reg)
            self.layer_shapes.append(x.shape[1:])
        self._pool_shape = x.shape
        pooled = x.mean(axis=(1, 2))
        logits = self.classifier.forward(pooled)
        if not np.all(np.isfinite(logits)):
            raise NumericError("non-finite classifier logits")
        return logits

    def backward(self, dlogits: np.ndarray) -> None:
        dlogits = np.asarray(dlogits, dtype=self.cfg.np_dtype)
        dpooled = self.classifier.backward(dlogits)
        batch, frames, nodes, ch = self._pool_shape
        dx = np.broadcast_to(
            dpooled[:, None, None, :] / (frames * nodes), self._pool_shape
        ).copy()
        for layer in reversed(self.layers):
            dx = layer.backward(dx)

    def keep_masks(self) -> dict:
        """Dropout keep masks recorded on the last regularized forward."""
        masks = {}
        for layer in self.layers:
            for block in layer.blocks:
                if block.last_keep is not None:
                    masks[block.label] = block.last_keep
        return masks
