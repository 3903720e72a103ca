"""LAS-only vs. grid-searched LM + phone-CTC rescoring, several seeds."""
import argparse

from lasr.experiments import fusion_ab


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--beam", type=int, default=4)
    ap.add_argument("--grid-step", type=float, default=0.05)
    args = ap.parse_args()
    res = fusion_ab(tuple(args.seeds), beam=args.beam, grid_step=args.grid_step)
    print(f"{'seed':>4} {'alpha':>6} {'beta':>5} {'val':>6} {'val a=1':>8} {'test':>6} {'test a=1':>9}")
    for r in res:
        print(f"{r.seed:>4} {r.weights.alpha:>6.2f} {r.weights.beta:>5.2f} {r.tuned_wer:>6.1f} "
              f"{r.baseline_wer:>8.1f} {r.test_tuned_wer:>6.1f} {r.test_baseline_wer:>9.1f}")


if __name__ == "__main__":
    main()
