"""Transformer and recurrent building blocks on the autodiff core.

All blocks are pre-norm: the residual stream is never normalized in place,
so a stack of zero blocks is the identity.  Attention masking is additive:
masked key logits receive -1e9, which underflows to exactly zero weight
after the max-subtracted softmax.
"""

from __future__ import annotations

import numpy as np

from .tensor import Module, Parameter, Tensor, concat, dropout, layer_norm

MASK_BIAS = -1e9


class Linear(Module):
    """Affine map with fan-in-scaled weight init (std 1/sqrt(in_features)).

    The scaling matters for the low-dimensional tokenizers: a 4-d box input
    must reach the residual stream at a magnitude comparable to the fixed
    sinusoidal encodings, or attention cannot route on content.
    """

    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(
            rng.normal(0.0, in_features**-0.5, size=(in_features, out_features))
        )
        self.bias = Parameter(np.zeros(out_features), decay=False) if bias else None

    def forward(self, x):
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out

    __call__ = forward


class LayerNorm(Module):
    def __init__(self, channels):
        super().__init__()
        self.gain = Parameter(np.ones(channels), decay=False)
        self.bias = Parameter(np.zeros(channels), decay=False)

    def forward(self, x):
        return layer_norm(x, self.gain, self.bias)

    __call__ = forward


def sinusoidal_encoding(positions, channels):
    """Fixed time encoding, shape (len(positions), channels): even channels
    sin(t / 10000^(2i/C)), odd channels the matching cos."""
    positions = np.asarray(positions, dtype=np.float64)
    table = np.zeros((positions.shape[0], channels))
    half = np.arange(0, channels, 2)
    rates = 1.0 / np.power(10000.0, half / channels)
    angles = positions[:, None] * rates[None, :]
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : table[:, 1::2].shape[1]])
    return table


_CAUSAL_CACHE = {}


def causal_bias(n):
    """(1, 1, n, n) additive bias hiding future positions."""
    if n not in _CAUSAL_CACHE:
        _CAUSAL_CACHE[n] = np.triu(np.full((n, n), MASK_BIAS), k=1)[None, None]
    return _CAUSAL_CACHE[n]


def key_padding_bias(present):
    """(B, 1, 1, S) additive bias from a {0, 1} presence mask."""
    present = np.asarray(present, dtype=np.float64)
    return ((present - 1.0) * -MASK_BIAS)[:, None, None, :]


class MultiHeadAttention(Module):
    """Attention with fused projections: one qkv linear for self-attention,
    query plus fused kv for cross-attention. Same parameter count as separate
    q/k/v linears (4C^2 + 4C including the output projection)."""

    def __init__(self, channels, heads, rng, p_drop=0.0, cross=False):
        super().__init__()
        if channels % heads:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.channels = channels
        self.heads = heads
        self.head_dim = channels // heads
        self.p_drop = p_drop
        self.cross = cross
        if cross:
            self.query = Linear(channels, channels, rng)
            self.kv = Linear(channels, 2 * channels, rng)
        else:
            self.qkv = Linear(channels, 3 * channels, rng)
        self.out = Linear(channels, channels, rng)

    def _split(self, x, length):
        # (B, S, C) -> (B, heads, S, head_dim)
        return x.reshape(-1, length, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def forward(self, x, memory=None, attn_bias=None, rng=None):
        q_len = x.shape[-2]
        if self.cross:
            source = x if memory is None else memory
            k_len = source.shape[-2]
            q = self._split(self.query(x), q_len)
            kv = self.kv(source)
            k = self._split(kv[..., : self.channels], k_len)
            v = self._split(kv[..., self.channels :], k_len)
        else:
            if memory is not None:
                raise ValueError("memory requires cross=True")
            k_len = q_len
            fused = self.qkv(x)
            q = self._split(fused[..., : self.channels], q_len)
            k = self._split(fused[..., self.channels : 2 * self.channels], q_len)
            v = self._split(fused[..., 2 * self.channels :], q_len)

        # Scaling q (small) instead of the logits (S x S) saves a full pass
        # over the score matrix; the bias folds into the softmax the same way.
        q = q * (1.0 / np.sqrt(self.head_dim))
        logits = q @ k.transpose(0, 1, 3, 2)
        weights = logits.softmax(bias=attn_bias)
        weights = dropout(weights, self.p_drop, rng, self.training)
        mixed = weights @ v
        merged = mixed.transpose(0, 2, 1, 3).reshape(-1, q_len, self.channels)
        return self.out(merged)

    __call__ = forward


class FeedForward(Module):
    def __init__(self, channels, rng, p_drop=0.0, expansion=4):
        super().__init__()
        self.p_drop = p_drop
        self.up = Linear(channels, expansion * channels, rng)
        self.down = Linear(expansion * channels, channels, rng)

    def forward(self, x, rng=None):
        hidden = dropout(self.up(x).relu(), self.p_drop, rng, self.training)
        return self.down(hidden)

    __call__ = forward


class EncoderBlock(Module):
    def __init__(self, channels, heads, rng, p_drop=0.0):
        super().__init__()
        self.p_drop = p_drop
        self.norm_attn = LayerNorm(channels)
        self.attn = MultiHeadAttention(channels, heads, rng, p_drop)
        self.norm_ffn = LayerNorm(channels)
        self.ffn = FeedForward(channels, rng, p_drop)

    def forward(self, x, attn_bias=None, rng=None):
        attended = self.attn(self.norm_attn(x), attn_bias=attn_bias, rng=rng)
        x = x + dropout(attended, self.p_drop, rng, self.training)
        fed = self.ffn(self.norm_ffn(x), rng=rng)
        return x + dropout(fed, self.p_drop, rng, self.training)

    __call__ = forward


class DecoderBlock(Module):
    def __init__(self, channels, heads, rng, p_drop=0.0):
        super().__init__()
        self.p_drop = p_drop
        self.norm_self = LayerNorm(channels)
        self.self_attn = MultiHeadAttention(channels, heads, rng, p_drop)
        self.norm_cross = LayerNorm(channels)
        self.cross_attn = MultiHeadAttention(channels, heads, rng, p_drop, cross=True)
        self.norm_ffn = LayerNorm(channels)
        self.ffn = FeedForward(channels, rng, p_drop)

    def forward(self, x, memory, self_bias=None, cross_bias=None, rng=None):
        attended = self.self_attn(self.norm_self(x), attn_bias=self_bias, rng=rng)
        x = x + dropout(attended, self.p_drop, rng, self.training)
        crossed = self.cross_attn(
            self.norm_cross(x), memory=memory, attn_bias=cross_bias, rng=rng
        )
        x = x + dropout(crossed, self.p_drop, rng, self.training)
        fed = self.ffn(self.norm_ffn(x), rng=rng)
        return x + dropout(fed, self.p_drop, rng, self.training)

    __call__ = forward


class MlpHead(Module):
    """linear -> relu -> dropout -> linear, applied per decoder step."""

    def __init__(self, channels, out_features, rng, p_drop=0.0):
        super().__init__()
        self.p_drop = p_drop
        self.hidden = Linear(channels, channels, rng)
        self.out = Linear(channels, out_features, rng)

    def forward(self, x, rng=None):
        return self.out(dropout(self.hidden(x).relu(), self.p_drop, rng, self.training))

    __call__ = forward


class LSTMCell(Module):
    """Single-step LSTM with gates ordered (input, forget, cell, output)."""

    def __init__(self, in_features, hidden, rng):
        super().__init__()
        self.hidden_size = hidden
        self.wx = Parameter(rng.normal(0.0, in_features**-0.5, size=(in_features, 4 * hidden)))
        self.wh = Parameter(rng.normal(0.0, hidden**-0.5, size=(hidden, 4 * hidden)))
        self.bias = Parameter(np.zeros(4 * hidden), decay=False)

    def initial_state(self, batch):
        zeros = Tensor(np.zeros((batch, self.hidden_size)))
        return zeros, zeros

    def forward(self, x, state):
        h_prev, c_prev = state
        gates = x @ self.wx + h_prev @ self.wh + self.bias
        n = self.hidden_size
        i = gates[:, 0 * n : 1 * n].sigmoid()
        f = gates[:, 1 * n : 2 * n].sigmoid()
        g = gates[:, 2 * n : 3 * n].tanh()
        o = gates[:, 3 * n : 4 * n].sigmoid()
        c = f * c_prev + i * g
        h = o * c.tanh()
        return h, c

    __call__ = forward
