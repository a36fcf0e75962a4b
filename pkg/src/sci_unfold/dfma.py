"""Adaptive gating of the dense feature map with measurement-driven, spatially variant filters."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .prior import DFM_LAYOUT, DenseFeatureMap


def pool_to_scale(ybar, scale: int):
    """Average-pool ``ybar`` (N, H, W) by ``2**(scale-1)``."""
    if scale == 1:
        return ybar
    k = 2 ** (scale - 1)
    return F.avg_pool2d(ybar.unsqueeze(1), k).squeeze(1)


class FilterGenerator(nn.Module):
    """One 3x3 convolution mapping the pooled measurement to ``C * n_f**2`` kernel taps per pixel."""

    def __init__(self, channels: int, n_f: int = 3):
        super().__init__()
        if n_f % 2 != 1:
            raise ValueError(f"filter size must be odd, got {n_f}")
        self.channels = channels
        self.n_f = n_f
        self.conv = nn.Conv2d(1, channels * n_f * n_f, 3, padding=1)

    def forward(self, ybar_j):
        return generate_filters(ybar_j, self)


def generate_filters(ybar_j, gen: FilterGenerator):
    """Filter field of shape (N, H_j, W_j, C, n_f, n_f) for ``ybar_j`` of shape (N, H_j, W_j)."""
    n, h, w = ybar_j.shape
    taps = gen.conv(ybar_j.unsqueeze(1))
    return taps.reshape(n, gen.channels, gen.n_f, gen.n_f, h, w).permute(0, 4, 5, 1, 2, 3)


def similarity_map(f_m, theta):
    """``S(p,q,c) = sum_{u,v} theta(p,q,c,u,v) * fbar(p+u, q+v, c)`` with zero padding.

    ``f_m`` is (N, C, T, H, W) and is averaged over T first; ``theta`` is
    (N, H, W, C, n_f, n_f).  Returns S as (N, H, W, C).
    """
    n, c, _, h, w = f_m.shape
    n_f = theta.shape[-1]
    if tuple(theta.shape) != (n, h, w, c, n_f, n_f):
        raise ValueError(f"filter field {tuple(theta.shape)} does not match features {tuple(f_m.shape)}")
    fbar = f_m.mean(dim=2)
    patches = F.unfold(fbar, n_f, padding=n_f // 2)  # (N, C*n_f*n_f, H*W)
    patches = patches.reshape(n, c, n_f, n_f, h, w).permute(0, 4, 5, 1, 2, 3)
    return (theta * patches).sum(dim=(-2, -1))


def gate(f_m, s):
    """``sigmoid(S) * F`` with the (N, H, W, C) gate broadcast over time."""
    g = torch.sigmoid(s).permute(0, 3, 1, 2).unsqueeze(2)
    return g * f_m


class DFMA(nn.Module):
    """Gate each enabled dense entry; entries whose branch is disabled pass through untouched."""

    def __init__(self, widths, branches=(1, 2, 3), n_f: int = 3):
        super().__init__()
        self.branches = tuple(sorted(branches))
        self.generators = nn.ModuleDict(
            {str(m): FilterGenerator(widths[DFM_LAYOUT[m][0]], n_f) for m in self.branches}
        )

    def forward(self, f: DenseFeatureMap, ybar) -> DenseFeatureMap:
        return adapt(f, ybar, self)


def adapt(f: DenseFeatureMap, ybar, dfma: DFMA) -> DenseFeatureMap:
    out = list(f)
    for m in dfma.branches:
        entry = f[m - 1]
        scale = DFM_LAYOUT[m][1]
        ybar_j = pool_to_scale(ybar, scale)
        if tuple(ybar_j.shape[-2:]) != tuple(entry.shape[-2:]):
            raise ValueError(f"pooled measurement {tuple(ybar_j.shape)} does not match entry {m} {tuple(entry.shape)}")
        theta = generate_filters(ybar_j, dfma.generators[str(m)])
        out[m - 1] = gate(entry, similarity_map(entry, theta))
    return DenseFeatureMap(*out)
