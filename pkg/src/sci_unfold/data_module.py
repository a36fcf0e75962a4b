"""Data-fidelity step of each unrolled phase.

Because the masks are binary, ``Phi Phi^T`` is diagonal with entries equal to
the mask sum, so ``(Phi Phi^T + eta I)^-1`` is an elementwise division.
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .forward import _check, _check_meas, _masks, compress, mask_sum

ETA_INIT = 0.01


def _check_eta(eta):
    if isinstance(eta, torch.Tensor):
        bad = bool((eta.detach() <= 0).any())
    else:
        bad = bool(np.any(np.asarray(eta) <= 0))
    if bad:
        raise ValueError(f"eta must be positive, got {eta}")


def residual_update(r_prev, y, x_prev, m):
    """Accumulate the measurement residual: ``r = r_prev + (y - Phi x_prev)``."""
    _check_meas(r_prev, _masks(m), "residual")
    _check_meas(y, _masks(m))
    return r_prev + (y - compress(x_prev, m))


def projection_update(x_prev, r, eta, m, msum=None):
    """``v = x + Phi^T (Phi Phi^T + eta)^-1 (r - Phi x)`` evaluated pixelwise.

    ``msum`` may be passed to skip recomputing the mask sum.
    """
    _check_eta(eta)
    masks = _masks(m)
    _check(x_prev, masks)
    _check_meas(r, masks, "residual")
    if msum is None:
        msum = mask_sum(m)
    correction = (r - compress(x_prev, masks)) / (msum + eta)
    return x_prev + masks * correction[..., None, :, :]


def euclidean_projection(x_prev, y, eta, m, msum=None):
    """Plain projection onto ``{v : Phi v = y}`` relaxed by ``eta`` (no residual accumulation)."""
    return projection_update(x_prev, y, eta, m, msum)


def eta_to_raw(eta: float) -> float:
    """Inverse softplus, so that ``softplus(eta_to_raw(eta)) == eta``."""
    return eta + math.log(-math.expm1(-eta))


class PhaseParams(nn.Module):
    """Per-phase step weight ``eta = softplus(raw)``, strictly positive by construction."""

    def __init__(self, eta: float = ETA_INIT):
        super().__init__()
        if eta <= 0:
            raise ValueError(f"eta must be positive, got {eta}")
        self.eta_raw = nn.Parameter(torch.tensor(eta_to_raw(eta)))

    @property
    def eta(self) -> torch.Tensor:
        return F.softplus(self.eta_raw)

    def forward(self, x_prev, r, m, msum=None):
        return projection_update(x_prev, r, self.eta, m, msum)
