"""Toy trainable backbone: non-overlapping patch embedding over each frame."""
from __future__ import annotations

from dataclasses import dataclass

from .autodiff import Tensor, gelu


@dataclass
class TokenGrid:
    """Feature volume ``(..., T, H, W, C)``; token ``n = t*P + h*W + w``."""

    features: Tensor

    @property
    def t_frames(self):
        return self.features.shape[-4]

    @property
    def h_cells(self):
        return self.features.shape[-3]

    @property
    def w_cells(self):
        return self.features.shape[-2]

    @property
    def channels(self):
        return self.features.shape[-1]

    @property
    def p_sites(self):
        return self.h_cells * self.w_cells

    @property
    def n_tokens(self):
        return self.t_frames * self.p_sites

    def tokens(self):
        """Flatten to ``(..., N, C)`` in the fixed token order."""
        lead = self.features.shape[:-4]
        return self.features.reshape(lead + (self.n_tokens, self.channels))

    @classmethod
    def from_tokens(cls, tokens, t_frames, h_cells, w_cells):
        lead = tokens.shape[:-2]
        return cls(tokens.reshape(lead + (t_frames, h_cells, w_cells, tokens.shape[-1])))


def patch_embed(clip, patch, weight, bias):
    """Project each ``ph x pw x ch`` patch of every frame to ``C`` channels.

    ``clip`` is ``(..., T, H_px, W_px, ch)``; ``weight`` is ``(ph*pw*ch, C)``.
    """
    if not isinstance(clip, Tensor):
        clip = Tensor(clip)
    ph, pw = patch
    *lead, T, hpx, wpx, ch = clip.shape
    if hpx % ph or wpx % pw:
        raise ValueError(f"frame {hpx}x{wpx} not divisible by patch {ph}x{pw}")
    hc, wc = hpx // ph, wpx // pw
    lead = tuple(lead)
    k = len(lead)
    x = clip.reshape(lead + (T, hc, ph, wc, pw, ch))
    axes = tuple(range(k)) + tuple(k + a for a in (0, 1, 3, 2, 4, 5))
    x = x.transpose(axes).reshape(lead + (T, hc, wc, ph * pw * ch))
    return TokenGrid(x @ weight + bias)


def token_mlp(grid, layers):
    """Optional per-token GELU layers stacked on the patch projection."""
    x = grid.features
    for w, b in layers:
        x = gelu(x @ w + b)
    return TokenGrid(x)
