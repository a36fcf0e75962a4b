"""Learned proximal mapping: a three-scale residual encoder/decoder of 3D convolutions.

Feature tensors are laid out ``(N, C, T, H, W)``.  Scale ``j`` (1, 2, 3) has
spatial size ``(H, W) / 2**(j-1)``; the temporal axis is never downsampled.
"""
from __future__ import annotations

from typing import NamedTuple, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

NEG_SLOPE = 0.2


class Conv3d(nn.Conv3d):
    """Same-size spatio-temporal convolution with optional spatial stride 2.

    Parameters keep the ``nn.Conv3d`` layout, but the forward pass stacks the
    temporal taps into channels and runs a single 2D convolution.  This is the
    same arithmetic as ``F.conv3d`` with zero padding and is several times
    faster on CPU builds of torch.
    """

    def __init__(self, in_channels, out_channels, kernel_t=3, kernel_s=3, stride=1, bias=True):
        super().__init__(
            in_channels,
            out_channels,
            kernel_size=(kernel_t, kernel_s, kernel_s),
            stride=(1, stride, stride),
            padding=(kernel_t // 2, kernel_s // 2, kernel_s // 2),
            bias=bias,
        )

    def forward(self, x):
        n, c, t, h, w = x.shape
        kt = self.kernel_size[0]
        pt = self.padding[0]
        if kt == 1:
            taps = x.transpose(1, 2).reshape(n * t, c, h, w)
        else:
            xp = F.pad(x, (0, 0, 0, 0, pt, pt))
            taps = torch.stack([xp[:, :, i:i + t] for i in range(kt)], dim=2)
            taps = taps.permute(0, 3, 1, 2, 4, 5).reshape(n * t, c * kt, h, w)
        weight = self.weight.reshape(self.out_channels, c * kt, *self.kernel_size[1:])
        out = F.conv2d(taps, weight, self.bias, stride=self.stride[1:], padding=self.padding[1:])
        return out.reshape(n, t, self.out_channels, *out.shape[-2:]).transpose(1, 2)


def upsample(x):
    """Nearest-neighbour 2x spatial up-sampling of ``(..., H, W)``."""
    return x.repeat_interleave(2, dim=-2).repeat_interleave(2, dim=-1)


def act(x):
    return F.leaky_relu(x, NEG_SLOPE)


class ResBlock(nn.Module):
    def __init__(self, channels, kernel_t=3):
        super().__init__()
        self.conv1 = Conv3d(channels, channels, kernel_t)
        self.conv2 = Conv3d(channels, channels, kernel_t)

    def forward(self, x):
        return x + self.conv2(act(self.conv1(x)))


class EncoderBlock(nn.Module):
    """Entry convolution (strided for ``j > 1``) followed by a residual block."""

    def __init__(self, c_in, c_out, kernel_t=3, downsample=False):
        super().__init__()
        self.entry = Conv3d(c_in, c_out, kernel_t, stride=2 if downsample else 1)
        self.body = ResBlock(c_out, kernel_t)

    def forward(self, x):
        return self.body(act(self.entry(x)))


class DecoderBlock(nn.Module):
    """Fuse (own features | dense slot), residual block, then optionally narrow for the next scale."""

    def __init__(self, c_own, c_slot, c_mid, c_out=None, kernel_t=3):
        super().__init__()
        self.c_own = c_own
        self.c_slot = c_slot
        self.fuse = Conv3d(c_own + c_slot, c_mid, kernel_t)
        self.body = ResBlock(c_mid, kernel_t)
        self.tail = Conv3d(c_mid, c_out, kernel_t) if c_out is not None else None

    def forward(self, own, slot=None):
        if self.c_slot:
            if slot is None:
                slot = own.new_zeros(own.shape[0], self.c_slot, *own.shape[2:])
            elif slot.shape[1] != self.c_slot or slot.shape[2:] != own.shape[2:]:
                raise ValueError(
                    f"dense slot shape {tuple(slot.shape)} incompatible with "
                    f"{self.c_slot} channels at {tuple(own.shape[2:])}"
                )
            own = torch.cat([own, slot], dim=1)
        out = self.body(act(self.fuse(own)))
        return self.tail(out) if self.tail is not None else out


class DenseFeatureMap(NamedTuple):
    """Features handed to the next phase; entry ``m`` is delivered at scale ``4 - m``."""

    e3: torch.Tensor
    d3_up: torch.Tensor
    d2_up: torch.Tensor


# channel width index and spatial scale of each dense entry
DFM_LAYOUT = {1: (2, 3), 2: (1, 2), 3: (0, 1)}


def assemble_input(v, ybar):
    """Stack ``v`` (N, B, H, W) and ``ybar`` (N, H, W) replicated over time as (N, 2, B, H, W)."""
    if tuple(v.shape[-2:]) != tuple(ybar.shape[-2:]):
        raise ValueError(f"v {tuple(v.shape)} and ybar {tuple(ybar.shape)} differ spatially")
    ybar_t = ybar.unsqueeze(-3).expand_as(v)
    return torch.stack([v, ybar_t], dim=-4)


class PriorNet(nn.Module):
    def __init__(self, widths: Sequence[int] = (32, 64, 128), branches=(1, 2, 3), conv_mode: str = "3d"):
        super().__init__()
        if conv_mode not in ("3d", "2d"):
            raise ValueError(f"conv_mode must be '3d' or '2d', got {conv_mode!r}")
        c1, c2, c3 = widths
        kt = 3 if conv_mode == "3d" else 1
        self.widths = tuple(widths)
        self.branches = frozenset(branches)
        self.enc1 = EncoderBlock(2, c1, kt)
        self.enc2 = EncoderBlock(c1, c2, kt, downsample=True)
        self.enc3 = EncoderBlock(c2, c3, kt, downsample=True)
        self.dec3 = DecoderBlock(c3, c3 if 1 in self.branches else 0, c3, c2, kt)
        self.dec2 = DecoderBlock(c2, c2 if 2 in self.branches else 0, c2, c1, kt)
        self.dec1 = DecoderBlock(c1, c1 if 3 in self.branches else 0, c1, None, kt)
        self.out = Conv3d(c1, 1, kernel_t=1, kernel_s=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def encode(self, inp):
        if inp.shape[-4] != 2:
            raise ValueError(f"prior input must have 2 channels, got {inp.shape[-4]}")
        if inp.shape[-1] % 4 or inp.shape[-2] % 4:
            raise ValueError(f"spatial size {tuple(inp.shape[-2:])} must be divisible by 4")
        e1 = self.enc1(inp)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        return e1, e2, e3

    def decode(self, e1, e2, e3, f_hat: Optional[DenseFeatureMap] = None):
        def slot(i):
            return None if f_hat is None or i not in self.branches else f_hat[i - 1]

        d3 = self.dec3(e3, slot(1))
        d3_up = upsample(d3)
        d2 = self.dec2(d3_up + e2, slot(2))
        d2_up = upsample(d2)
        d1 = self.dec1(d2_up + e1, slot(3))
        return d1, d2, d3, d3_up, d2_up

    def forward(self, v, ybar, f_hat: Optional[DenseFeatureMap] = None):
        """Return the refined block ``x = out(D1) + v`` and this phase's dense feature map."""
        e1, e2, e3 = self.encode(assemble_input(v, ybar))
        d1, _, _, d3_up, d2_up = self.decode(e1, e2, e3, f_hat)
        x = self.out(d1).squeeze(-4) + v
        return x, DenseFeatureMap(e3, d3_up, d2_up)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
