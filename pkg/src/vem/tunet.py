"""Transformer-UNet denoiser over (channels, latent frames) tensors.

Per level the encoder runs: optional modulation adapter -> residual block
(with diffusion-step embedding injected) -> plain self-attention transformer
block -> storyboard-guided cross-attention block; levels are bridged by
stride-2 convolutions down and repeat+conv up, with channel-concat skips.
The storyboard mask is OR-pooled by 2^level to follow the latent clock.

The output convolution is zero-initialized, so an untrained net predicts
zero noise and the initial training loss sits near E||eps||^2 = 1.

Latent length is padded to a multiple of 2^(levels-1) internally (zeros for
the latent, all-zero mask rows for the padding) and cropped on the way out;
callers never see the padding.
"""

import numpy as np

from . import autograd as ag
from .errors import DataError
from .numcore import linear_interp
from .sgcatt import downsample_mask, pad_mask_rows, sg_cross_attention
from .tbalign import AdapterParams, apply_adapter

DEFAULT_WIDTHS = (64, 128, 256)


def sinusoidal_step_embedding(t, dim):
    """Classic fixed sin/cos embedding of an integer diffusion step."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = float(t) * freqs
    return np.concatenate([np.sin(args), np.cos(args)]).astype(np.float32)


class ChannelNorm(ag.Module):
    """Per-position layer norm over channels with a learned affine part."""

    def __init__(self, channels, dtype=np.float32):
        self.g = ag.param(np.ones(channels, dtype=dtype))
        self.b = ag.param(np.zeros(channels, dtype=dtype))

    def __call__(self, x):
        # x: (1, C, L) -> normalize each time position over C
        _, c, l = x.shape
        t = x.reshape(c, l).transpose()          # (L, C)
        t = t.layer_norm() * self.g + self.b
        return t.transpose().reshape(1, c, l)


class ResBlock(ag.Module):
    def __init__(self, c_in, c_out, temb_dim, rng, dtype=np.float32):
        self.norm1 = ChannelNorm(c_in, dtype)
        self.conv1 = ag.Conv1d(c_in, c_out, 3, rng, padding=1, dtype=dtype)
        self.temb_proj = ag.Linear(temb_dim, c_out, rng, dtype=dtype)
        self.norm2 = ChannelNorm(c_out, dtype)
        self.conv2 = ag.Conv1d(c_out, c_out, 3, rng, padding=1, dtype=dtype)
        self.skip = None if c_in == c_out else ag.Conv1d(c_in, c_out, 1, rng, dtype=dtype)

    def __call__(self, x, temb):
        h = self.conv1(self.norm1(x).silu())
        h = h + self.temb_proj(temb.silu()).reshape(1, -1, 1)
        h = self.conv2(self.norm2(h).silu())
        s = x if self.skip is None else self.skip(x)
        return s + h


class FeedForward(ag.Module):
    def __init__(self, c, rng, dtype=np.float32):
        self.norm = ChannelNorm(c, dtype)
        self.lin1 = ag.Linear(c, 2 * c, rng, dtype=dtype)
        self.lin2 = ag.Linear(2 * c, c, rng, dtype=dtype)

    def __call__(self, x):
        _, c, l = x.shape
        t = self.norm(x).reshape(c, l).transpose()
        t = self.lin2(self.lin1(t).silu())
        return x + t.transpose().reshape(1, c, l)


class SelfAttnBlock(ag.Module):
    """Pre-norm single-head self-attention over time, plus a feed-forward."""

    def __init__(self, c, rng, dtype=np.float32):
        self.norm = ChannelNorm(c, dtype)
        self.wq = ag.Linear(c, c, rng, dtype=dtype)
        self.wk = ag.Linear(c, c, rng, dtype=dtype)
        self.wv = ag.Linear(c, c, rng, dtype=dtype)
        self.wo = ag.Linear(c, c, rng, dtype=dtype)
        self.ffn = FeedForward(c, rng, dtype)

    def __call__(self, x):
        _, c, l = x.shape
        t = self.norm(x).reshape(c, l).transpose()   # (L, C)
        q, k, v = self.wq(t), self.wk(t), self.wv(t)
        attn = ((q @ k.transpose()) * float(1.0 / np.sqrt(c))).softmax(axis=-1) @ v
        x = x + self.wo(attn).transpose().reshape(1, c, l)
        return self.ffn(x)


class SGCAttBlock(ag.Module):
    """Cross-attention from latent positions to condition tokens, restricted
    by the storyboard mask; the final transformer block of each level.
    """

    def __init__(self, c, cond_dim, rng, dtype=np.float32):
        self.norm = ChannelNorm(c, dtype)
        self.wq = ag.Linear(c, c, rng, dtype=dtype)
        self.wk = ag.Linear(cond_dim, c, rng, dtype=dtype)
        self.wv = ag.Linear(cond_dim, c, rng, dtype=dtype)
        self.wo = ag.Linear(c, c, rng, dtype=dtype)
        self.ffn = FeedForward(c, rng, dtype)

    def __call__(self, x, tokens, mask, mode):
        _, c, l = x.shape
        t = self.norm(x).reshape(c, l).transpose()
        q = self.wq(t)
        k = self.wk(tokens)
        v = self.wv(tokens)
        out = sg_cross_attention(q, k, v, mask, mode=mode)
        x = x + self.wo(out).transpose().reshape(1, c, l)
        return self.ffn(x)


class EncoderLevel(ag.Module):
    def __init__(self, c, cond_dim, temb_dim, rng, dtype=np.float32):
        self.res = ResBlock(c, c, temb_dim, rng, dtype)
        self.selfattn = SelfAttnBlock(c, rng, dtype)
        self.sgc = SGCAttBlock(c, cond_dim, rng, dtype)

    def __call__(self, x, temb, tokens, mask, mode):
        x = self.res(x, temb)
        x = self.selfattn(x)
        return self.sgc(x, tokens, mask, mode)


class DecoderLevel(ag.Module):
    def __init__(self, c_in, c_out, cond_dim, temb_dim, rng, dtype=np.float32):
        self.res = ResBlock(c_in, c_out, temb_dim, rng, dtype)
        self.selfattn = SelfAttnBlock(c_out, rng, dtype)
        self.sgc = SGCAttBlock(c_out, cond_dim, rng, dtype)

    def __call__(self, x, temb, tokens, mask, mode):
        x = self.res(x, temb)
        x = self.selfattn(x)
        return self.sgc(x, tokens, mask, mode)


class TUNet(ag.Module):
    """Denoiser: eps prediction from (z_t, step, conditions, mask)."""

    def __init__(self, in_channels, cond_dim, widths=DEFAULT_WIDTHS, temb_dim=128,
                 rng=None, dtype=np.float32):
        from .rng import Rng
        rng = rng if rng is not None else Rng(0)
        self.in_channels = in_channels
        self.cond_dim = cond_dim
        self.widths = tuple(widths)
        self.temb_dim = temb_dim
        self.levels = len(self.widths)

        r = iter(rng.fork(i) for i in range(1000))
        self.temb_lin1 = ag.Linear(temb_dim, temb_dim, next(r), dtype=dtype)
        self.temb_lin2 = ag.Linear(temb_dim, temb_dim, next(r), dtype=dtype)
        self.in_conv = ag.Conv1d(in_channels, self.widths[0], 3, next(r), padding=1, dtype=dtype)
        self.enc = [EncoderLevel(w, cond_dim, temb_dim, next(r), dtype) for w in self.widths]
        self.down = [ag.Conv1d(self.widths[i], self.widths[i + 1], 3, next(r),
                               stride=2, padding=1, dtype=dtype)
                     for i in range(self.levels - 1)]
        self.up = [ag.Conv1d(self.widths[i + 1], self.widths[i], 3, next(r), padding=1, dtype=dtype)
                   for i in reversed(range(self.levels - 1))]
        self.dec = [DecoderLevel(2 * self.widths[i], self.widths[i], cond_dim, temb_dim,
                                 next(r), dtype)
                    for i in reversed(range(self.levels - 1))]
        self.out_norm = ChannelNorm(self.widths[0], dtype)
        self.out_conv = ag.Conv1d(self.widths[0], in_channels, 3, next(r), padding=1,
                                  zero_init=True, dtype=dtype)
        # global 1x1 residual from the raw input latent, gated per channel by
        # the step embedding: without it the denoiser cannot express the
        # near-identity maps high-noise steps need once trunk width drops
        # below the latent channel count, and training stalls near loss 1
        self.res_proj = ag.Conv1d(in_channels, in_channels, 1, next(r),
                                  zero_init=True, dtype=dtype)
        self.res_gate = ag.Linear(temb_dim, in_channels, next(r),
                                  zero_init=True, dtype=dtype)
        self.adapters = None  # set by attach_adapters for the fine-tune stage

    def attach_adapters(self, aligner_hidden, dtype=np.float32):
        self.adapters = [AdapterParams(aligner_hidden, w, dtype) for w in self.widths]

    def level_masks(self, base_mask, padded_len):
        padded = pad_mask_rows(base_mask, padded_len)
        return [downsample_mask(padded, 2 ** lvl) for lvl in range(self.levels)]

    def __call__(self, z, step, cond, base_mask, aligner_feats=None, attn_mode="additive"):
        z = ag.as_var(z)
        if z.ndim != 2 or z.shape[0] != self.in_channels:
            raise DataError(f"latent shape {z.shape} != ({self.in_channels}, L)")
        length = z.shape[1]
        if base_mask.grid.shape[0] != length:
            raise DataError(f"mask rows {base_mask.grid.shape[0]} != latent length {length}")
        if cond.tokens.shape[1] != self.cond_dim:
            raise DataError(f"condition dim {cond.tokens.shape[1]} != {self.cond_dim}")

        mult = 2 ** (self.levels - 1)
        padded = ((length + mult - 1) // mult) * mult
        x = z.reshape(1, self.in_channels, length)
        if padded != length:
            pad = ag.Var(np.zeros((1, self.in_channels, padded - length), dtype=z.data.dtype))
            x = ag.concat([x, pad], axis=2)
        z_in = x
        masks = self.level_masks(base_mask, padded)

        temb = ag.Var(sinusoidal_step_embedding(step, self.temb_dim).astype(z.data.dtype))
        temb = self.temb_lin2(self.temb_lin1(temb).silu())

        x = self.in_conv(x)
        skips = []
        for lvl in range(self.levels):
            if self.adapters is not None and aligner_feats is not None:
                feats = linear_interp(np.asarray(aligner_feats, dtype=np.float64),
                                      x.shape[2]).astype(z.data.dtype)
                flat = apply_adapter(x.reshape(x.shape[1], x.shape[2]), feats, self.adapters[lvl])
                x = flat.reshape(1, x.shape[1], x.shape[2])
            x = self.enc[lvl](x, temb, cond.tokens, masks[lvl], attn_mode)
            if lvl < self.levels - 1:
                skips.append(x)
                x = self.down[lvl](x)

        for i, lvl in enumerate(reversed(range(self.levels - 1))):
            x = self.up[i](x.repeat2())
            x = ag.concat([x, skips[lvl]], axis=1)
            x = self.dec[i](x, temb, cond.tokens, masks[lvl], attn_mode)

        gate = (self.res_gate(temb) + 1.0).reshape(1, self.in_channels, 1)
        x = self.out_conv(self.out_norm(x).silu()) + self.res_proj(z_in) * gate
        out = x.reshape(self.in_channels, padded)
        if padded != length:
            out = out[:, :length]
        return out
