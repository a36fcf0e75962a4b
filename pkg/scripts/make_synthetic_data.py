"""Build a synthetic training corpus and a 6-scene 256x256x8 benchmark from scikit-image sample images."""
import argparse
from pathlib import Path

from sci_unfold.forward import generate_masks
from sci_unfold.synthetic import write_benchmark, write_corpus
from sci_unfold.tensor_io import save_tensor


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/synthetic")
    ap.add_argument("--sequences", type=int, default=40)
    ap.add_argument("--frames", type=int, default=24)
    ap.add_argument("--size", type=int, default=160, help="height and width of corpus frames")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    write_corpus(out / "corpus", args.sequences, args.frames, args.size, args.size, seed=args.seed)
    masks = generate_masks(8, 256, 256, 0.5, args.seed)
    save_tensor(out / "masks_256.ten", masks.masks)
    write_benchmark(out / "bench", masks=masks, seed=args.seed)
    print(f"corpus: {out / 'corpus'}  benchmark: {out / 'bench'}")


if __name__ == "__main__":
    main()
