"""Clip sampling, augmentation, loss, learning-rate schedule and the training loop."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .forward import MaskSet, compress, generate_masks
from .metrics import psnr
from .network import DenseUnfoldingNet, NetworkConfig, build_network, save_checkpoint
from .tensor_io import list_frames, read_gray_frame

log = logging.getLogger(__name__)

CACHE_ENV = "SCI_UNFOLD_CACHE"


@dataclass
class TrainingConfig:
    n_clips: int = 25600
    block: tuple = (8, 128, 128)
    batch: int = 4
    epochs: int = 200
    base_lr: float = 1.28e-4
    warmup_epochs: int = 5
    decay_factor: float = 0.9
    decay_every: int = 10
    seed: int = 0
    source_dir: str = ""
    val_fraction: float = 0.01
    noise_sigma: float = 0.0
    resample_masks: bool = False
    augment: bool = True
    ckpt_every: int = 10
    max_steps: Optional[int] = None
    log_every: int = 1

    def __post_init__(self):
        self.block = tuple(int(b) for b in self.block)
        if min(self.n_clips, self.batch, self.epochs, self.decay_every, *self.block) < 1:
            raise ValueError("clip count, batch, epochs, decay interval and block dims must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(f"warmup_epochs must lie in [0, epochs), got {self.warmup_epochs}")
        if self.base_lr <= 0 or not 0 < self.decay_factor <= 1:
            raise ValueError("base_lr must be positive and decay_factor in (0, 1]")
        if not 0 <= self.val_fraction < 1:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block"] = list(self.block)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path) -> tuple[TrainingConfig, NetworkConfig]:
    """Read ``{"training": {...}, "network": {...}}``; either section may be omitted."""
    doc = json.loads(Path(path).read_text())
    unknown = set(doc) - {"training", "network"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return TrainingConfig.from_dict(doc.get("training", {})), NetworkConfig.from_dict(doc.get("network", {}))


def save_config(path, cfg: TrainingConfig, net_cfg: NetworkConfig) -> None:
    Path(path).write_text(json.dumps({"training": cfg.to_dict(), "network": net_cfg.to_dict()}, indent=2) + "\n")


# --- data ------------------------------------------------------------------

@dataclass(frozen=True)
class ClipRecord:
    ground_truth: np.ndarray = field(repr=False)
    source: str
    t0: int
    top: int
    left: int
    clip_id: int = 0
    rotation: int = 0


def find_sequences(corpus) -> list[Path]:
    """Every directory under ``corpus`` (itself included) that directly holds image frames."""
    corpus = Path(corpus)
    if not corpus.is_dir():
        raise FileNotFoundError(f"corpus directory {corpus} does not exist")
    found = [p for p in sorted([corpus, *corpus.rglob("*")]) if p.is_dir() and list_frames(p)]
    return found


class _FrameCache:
    def __init__(self, cache_dir=None):
        self.mem: dict[str, np.ndarray] = {}
        self.cache_dir = Path(cache_dir) if cache_dir else None

    def frames(self, seq: Path) -> np.ndarray:
        key = str(seq.resolve())
        if key in self.mem:
            return self.mem[key]
        arr = None
        npy = None
        if self.cache_dir is not None:
            frames = list_frames(seq)
            stamp = "|".join(f"{p.name}:{p.stat().st_mtime_ns}" for p in frames)
            digest = hashlib.sha1((key + stamp).encode()).hexdigest()[:16]
            npy = self.cache_dir / f"{digest}.npy"
            if npy.is_file():
                arr = np.load(npy)
        if arr is None:
            stack = [read_gray_frame(p) for p in list_frames(seq)]
            if len({f.shape for f in stack}) != 1:
                raise ValueError(f"frames in {seq} have differing shapes")
            arr = np.stack(stack)
            if npy is not None:
                self.cache_dir.mkdir(parents=True, exist_ok=True)
                np.save(npy, arr)
        self.mem[key] = arr
        return arr

    def shape(self, seq: Path) -> tuple[int, int, int]:
        frames = list_frames(seq)
        h, w = read_gray_frame(frames[0]).shape
        return len(frames), h, w


class ClipSet(Sequence):
    """Lazily materialised clips; only crop coordinates are held until indexed."""

    def __init__(self, sequences, index, block, cache):
        self.sequences = sequences
        self.index = index
        self.block = block
        self._cache = cache

    def __len__(self):
        return len(self.index)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        s, t0, top, left = self.index[i]
        T, H, W = self.block
        frames = self._cache.frames(self.sequences[s])
        gt = frames[t0:t0 + T, top:top + H, left:left + W].astype(np.float32) / np.float32(255.0)
        return ClipRecord(gt, str(self.sequences[s]), t0, top, left, clip_id=i)


def sample_clips(corpus, cfg: TrainingConfig) -> ClipSet:
    """Draw ``cfg.n_clips`` crops (source, temporal offset, position) deterministically from ``cfg.seed``."""
    T, H, W = cfg.block
    cache = _FrameCache(os.environ.get(CACHE_ENV))
    sequences, shapes = [], []
    for seq in find_sequences(corpus):
        shape = cache.shape(seq)
        if shape[0] >= T and shape[1] >= H and shape[2] >= W:
            sequences.append(seq)
            shapes.append(shape)
    if not sequences:
        raise ValueError(f"corpus {corpus} has no frame sequence covering a {T}x{H}x{W} block")
    rng = np.random.default_rng(cfg.seed)
    index = []
    for _ in range(cfg.n_clips):
        s = int(rng.integers(len(sequences)))
        nt, nh, nw = shapes[s]
        index.append((s,
                      int(rng.integers(nt - T + 1)),
                      int(rng.integers(nh - H + 1)),
                      int(rng.integers(nw - W + 1))))
    return ClipSet(sequences, index, cfg.block, cache)


def rotate(clip: ClipRecord, quarter_turns: int) -> ClipRecord:
    k = quarter_turns % 4
    gt = np.ascontiguousarray(np.rot90(clip.ground_truth, k, axes=(1, 2)))
    return replace(clip, ground_truth=gt, rotation=(clip.rotation + k) % 4)


def augment(clip: ClipRecord, seed) -> ClipRecord:
    """Rotate every frame by the same uniformly drawn multiple of 90 degrees."""
    k = int(np.random.default_rng(seed).integers(4))
    return rotate(clip, k)


def mse_loss(x_hat, x):
    if tuple(x_hat.shape) != tuple(x.shape):
        raise ValueError(f"shape mismatch {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    return ((x_hat - x) ** 2).mean()


def lr_schedule(epoch: int, cfg: TrainingConfig) -> float:
    """Linear warmup from ``base_lr / 5`` to ``base_lr``, then step decay counted from the end of warmup."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    w = cfg.warmup_epochs
    if epoch < w:
        if w == 1:
            return cfg.base_lr
        start = cfg.base_lr / 5.0
        return start + (cfg.base_lr - start) * epoch / (w - 1)
    return cfg.base_lr * cfg.decay_factor ** ((epoch - w) // cfg.decay_every)


# --- loop ------------------------------------------------------------------

def _augment_seed(seed: int, epoch: int, clip_id: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, clip_id]).generate_state(1)[0])


def _batch(clips, ids, cfg, epoch, augmenting):
    records = [clips[i] for i in ids]
    if augmenting:
        records = [augment(c, _augment_seed(cfg.seed, epoch, c.clip_id)) for c in records]
    return records, np.stack([c.ground_truth for c in records])


def evaluate_clips(net: DenseUnfoldingNet, clips, masks: torch.Tensor, batch: int = 4) -> float:
    """Mean per-frame PSNR of clamped reconstructions over ``clips``."""
    p = next(net.parameters())
    scores = []
    was_training = net.training
    net.eval()
    with torch.no_grad():
        for start in range(0, len(clips), batch):
            gt = torch.as_tensor(np.stack([clips[i].ground_truth for i in range(start, min(start + batch, len(clips)))]),
                                 dtype=p.dtype, device=p.device)
            x = net(compress(gt, masks), masks).clamp(0, 1)
            for xb, gb in zip(x.cpu().numpy(), gt.cpu().numpy()):
                scores.extend(psnr(a, b) for a, b in zip(xb, gb))
    net.train(was_training)
    return float(np.mean(scores))


def train(cfg: TrainingConfig, net_cfg: NetworkConfig, masks: MaskSet, corpus=None, out_dir=None,
          log_path=None, device="cpu", clips=None, mask_source: str = "", net: Optional[DenseUnfoldingNet] = None):
    """Train a network end to end; returns ``(net, log_records)``.

    ``clips`` may be supplied directly (a sequence of :class:`ClipRecord`);
    otherwise they are sampled from ``corpus`` (or ``cfg.source_dir``).
    """
    if clips is None:
        clips = sample_clips(corpus or cfg.source_dir, cfg)
    if len(clips) == 0:
        raise ValueError("no training clips")
    T, H, W = cfg.block
    if masks.shape != (T, H, W):
        raise ValueError(f"masks {masks.shape} do not match the training block {cfg.block}")
    torch.manual_seed(cfg.seed)
    if net is None:
        net = build_network(net_cfg)
    net = net.to(device)
    dtype = next(net.parameters()).dtype
    mask_t = masks.as_tensor(dtype, device)

    n_val = int(len(clips) * cfg.val_fraction)
    n_train = len(clips) - n_val
    train_ids = np.arange(n_train)
    val_ids = list(range(n_train, len(clips)))
    opt = torch.optim.Adam(net.parameters(), lr=lr_schedule(0, cfg))
    order_rng = np.random.default_rng(cfg.seed)
    out_dir = Path(out_dir) if out_dir else None
    log_file = open(log_path, "a") if log_path else None
    records: list[dict] = []

    def emit(rec):
        rec["timestamp"] = time.time()
        records.append(rec)
        if log_file:
            log_file.write(json.dumps(rec) + "\n")
            log_file.flush()

    emit({"kind": "header", "mask_source": mask_source, "mask_sha1": hashlib.sha1(masks.masks.tobytes()).hexdigest(),
          "training": cfg.to_dict(), "network": net_cfg.to_dict(), "n_train": int(n_train), "n_val": n_val})

    step = 0
    net.train()
    try:
        for epoch in range(cfg.epochs):
            lr = lr_schedule(epoch, cfg)
            for group in opt.param_groups:
                group["lr"] = lr
            perm = order_rng.permutation(train_ids)
            losses = []
            for start in range(0, n_train, cfg.batch):
                ids = [int(i) for i in perm[start:start + cfg.batch]]
                records_b, gt_np = _batch(clips, ids, cfg, epoch, cfg.augment)
                gt = torch.as_tensor(gt_np, dtype=dtype, device=device)
                batch_masks = mask_t
                mask_seed = None
                if cfg.resample_masks:
                    mask_seed = int(np.random.SeedSequence([cfg.seed, 1, step]).generate_state(1)[0])
                    batch_masks = generate_masks(T, H, W, 0.5, mask_seed).as_tensor(dtype, device)
                y = compress(gt, batch_masks)
                noise_seed = None
                if cfg.noise_sigma > 0:
                    noise_seed = int(np.random.SeedSequence([cfg.seed, 2, step]).generate_state(1)[0])
                    g = torch.Generator().manual_seed(noise_seed)
                    y = y + cfg.noise_sigma * torch.randn(y.shape, generator=g, dtype=dtype).to(device)
                x_hat = net(y, batch_masks)
                loss = mse_loss(x_hat, gt)
                if not torch.isfinite(loss):
                    dump = (out_dir or Path(".")) / "nonfinite_dump.pt"
                    dump.parent.mkdir(parents=True, exist_ok=True)
                    torch.save({"state_dict": net.state_dict(), "epoch": epoch, "step": step, "clips": ids,
                                "lr": lr}, dump)
                    raise FloatingPointError(f"non-finite loss at epoch {epoch} step {step}; state dumped to {dump}")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                losses.append(loss.item())
                if step % cfg.log_every == 0:
                    emit({"kind": "step", "epoch": epoch, "step": step, "lr": lr, "loss": losses[-1],
                          "clips": ids, "rotations": [c.rotation for c in records_b],
                          "mask_seed": mask_seed, "noise_seed": noise_seed})
                step += 1
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
            rec = {"kind": "epoch", "epoch": epoch, "step": step, "lr": lr, "loss": float(np.mean(losses))}
            if val_ids:
                rec["val_psnr"] = evaluate_clips(net, [clips[i] for i in val_ids], mask_t)
            emit(rec)
            log.info("epoch %d step %d lr %.3g loss %.6f", epoch, step, lr, rec["loss"])
            if out_dir and cfg.ckpt_every and (epoch + 1) % cfg.ckpt_every == 0:
                save_checkpoint(net, out_dir / f"epoch_{epoch + 1:04d}", extra={"epoch": epoch + 1, "step": step})
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        if out_dir:
            save_checkpoint(net, out_dir / "final", extra={"step": step})
    finally:
        if log_file:
            log_file.close()
    net.eval()
    return net, records
