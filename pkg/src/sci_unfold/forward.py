"""Video SCI sensing model.

A block of ``B`` frames ``x`` of shape ``(B, H, W)`` is modulated by ``B``
binary masks and summed into a single ``(H, W)`` measurement.  All helpers
accept numpy arrays or torch tensors and broadcast over leading batch
dimensions, so ``x`` may be ``(..., B, H, W)`` with measurements
``(..., H, W)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import torch

MAX_ORACLE_SIZE = 1 << 20


@dataclass(frozen=True)
class MaskSet:
    """Immutable stack of ``B`` binary masks with their cached per-pixel sum."""

    masks: np.ndarray
    mask_sum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        masks = np.asarray(self.masks)
        if masks.ndim != 3 or min(masks.shape) < 1:
            raise ValueError(f"masks must be a non-empty (B, H, W) array, got shape {masks.shape}")
        if not np.all((masks == 0) | (masks == 1)):
            raise ValueError("masks must be binary")
        masks = masks.astype(np.uint8)
        masks.setflags(write=False)
        total = masks.sum(axis=0, dtype=np.int64)
        total.setflags(write=False)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "mask_sum", total)

    @property
    def B(self) -> int:
        return self.masks.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.masks.shape

    def as_array(self, dtype=np.float64) -> np.ndarray:
        return self.masks.astype(dtype)

    def as_tensor(self, dtype=torch.float32, device=None) -> torch.Tensor:
        return torch.from_numpy(self.masks.copy()).to(device=device, dtype=dtype)


def generate_masks(B: int, H: int, W: int, density: float = 0.5, seed: int = 0) -> MaskSet:
    if min(B, H, W) < 1:
        raise ValueError(f"mask dimensions must be positive, got B={B}, H={H}, W={W}")
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {density}")
    rng = np.random.default_rng(seed)
    return MaskSet((rng.random((B, H, W)) < density).astype(np.uint8))


def _masks(m):
    return m.as_array() if isinstance(m, MaskSet) else m


def _check(x, m, what="x"):
    if tuple(x.shape[-3:]) != tuple(m.shape[-3:]):
        raise ValueError(f"{what} shape {tuple(x.shape)} does not match masks {tuple(m.shape)}")


def _check_meas(y, m, what="measurement"):
    if tuple(y.shape[-2:]) != tuple(m.shape[-2:]):
        raise ValueError(f"{what} shape {tuple(y.shape)} does not match mask frames {tuple(m.shape[-2:])}")


def mask_sum(m):
    if isinstance(m, MaskSet):
        return m.mask_sum.astype(np.float64)
    return m.sum(-3)


def compress(x, m, noise=None):
    """Measurement ``Y = sum_i m_i * x_i (+ noise)``."""
    m = _masks(m)
    _check(x, m)
    y = (m * x).sum(-3)
    if noise is not None:
        _check_meas(noise, m, "noise")
        y = y + noise
    return y


def adjoint(r, m):
    """Transpose of :func:`compress`: every frame is ``m_i * r``."""
    m = _masks(m)
    _check_meas(r, m)
    return m * r[..., None, :, :]


def normalize_measurement(y, m):
    """Divide the measurement by the mask sum; pixels never sampled are set to 0."""
    msum = mask_sum(m)
    _check_meas(y, _masks(m))
    if isinstance(y, torch.Tensor):
        msum = torch.as_tensor(msum, dtype=y.dtype, device=y.device)
        covered = msum > 0
        return torch.where(covered, y / torch.where(covered, msum, torch.ones_like(msum)), torch.zeros_like(y))
    covered = msum > 0
    safe = np.where(covered, msum, 1.0)
    return np.where(covered, y / safe, 0.0)


def build_block_diagonal(m, max_size: int = MAX_ORACLE_SIZE) -> sp.csr_matrix:
    """Explicit ``(HW, HWB)`` sensing matrix ``[diag(vec m_1), ..., diag(vec m_B)]``.

    Vectorisation is row-major, so ``vec(x)`` is ``x.reshape(-1)`` for a
    ``(B, H, W)`` block.  Only meant for small test problems.
    """
    masks = np.asarray(_masks(m), dtype=np.float64)
    B, H, W = masks.shape
    if H * W * B > max_size:
        raise ValueError(f"H*W*B = {H * W * B} exceeds the oracle size guard {max_size}")
    mat = sp.hstack([sp.diags(masks[i].reshape(-1)) for i in range(B)], format="csr")
    mat.eliminate_zeros()
    return mat
