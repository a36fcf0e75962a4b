"""Overfit a K=3 network on 8 synthetic clips and report training PSNR against the Phi^T y baseline.

Same protocol as acceptance criterion 7, with the step count and learning
rate exposed for quicker sanity runs.
"""
import argparse
import logging
import tempfile
import time
from pathlib import Path

import numpy as np

from sci_unfold.forward import adjoint, compress, generate_masks
from sci_unfold.metrics import psnr
from sci_unfold.network import NetworkConfig, save_checkpoint
from sci_unfold.synthetic import write_corpus
from sci_unfold.tensor_io import load_frame_dir
from sci_unfold.training import ClipRecord, TrainingConfig, evaluate_clips, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=2e-4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="save the final checkpoint here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    with tempfile.TemporaryDirectory() as tmp:
        seqs = write_corpus(Path(tmp), 8, 8, 64, 64, seed=args.seed)
        clips = [ClipRecord(load_frame_dir(p).astype(np.float32), p.name, 0, 0, 0, clip_id=i)
                 for i, p in enumerate(seqs)]
    masks = generate_masks(8, 64, 64, 0.5, seed=args.seed + 1)
    epochs = max(6, -(-args.steps // len(clips)))
    cfg = TrainingConfig(n_clips=len(clips), block=(8, 64, 64), batch=1, epochs=epochs, base_lr=args.lr,
                         warmup_epochs=5, decay_every=epochs, val_fraction=0.0, augment=False,
                         max_steps=args.steps, seed=args.seed)
    t0 = time.perf_counter()
    net, _ = train(cfg, NetworkConfig(K=3, widths=(16, 32, 64)), masks, clips=clips)
    m = masks.as_array()
    base = np.mean([psnr(np.clip(adjoint(compress(c.ground_truth.astype(np.float64), m), m), 0, 1), c.ground_truth)
                    for c in clips])
    trained = evaluate_clips(net, clips, masks.as_tensor())
    print(f"steps {args.steps}  time {time.perf_counter() - t0:.0f}s")
    print(f"train PSNR {trained:.2f} dB  baseline {base:.2f} dB  gain {trained - base:.2f} dB")
    if args.out:
        save_checkpoint(net, args.out)


if __name__ == "__main__":
    main()
