"""Clean-then-target fine-tuning vs. target-only training, several seeds."""
import argparse

from lasr.experiments import two_pass_ab


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--clean-epochs", type=int, default=30)
    ap.add_argument("--target-epochs", type=int, default=20)
    args = ap.parse_args()
    res = two_pass_ab(tuple(args.seeds), clean_epochs=args.clean_epochs,
                      target_epochs=args.target_epochs)
    print(f"{'seed':>4} {'two-pass':>9} {'target-only':>12}")
    for r in res:
        print(f"{r.seed:>4} {r.two_pass_wer:>9.1f} {r.target_only_wer:>12.1f}"
              f"{'  *' if r.two_pass_wins else ''}")
    print(f"two-pass wins on {sum(r.two_pass_wins for r in res)}/{len(res)} seeds")


if __name__ == "__main__":
    main()
