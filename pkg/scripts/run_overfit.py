"""Overfit a tiny LAS on 20 synthetic utterances (CE and joint CE+CTC)."""
import argparse
import json

from lasr.experiments import overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--utts", type=int, default=20)
    ap.add_argument("--max-epochs", type=int, default=80)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--objectives", nargs="+", default=["ce", "ce+ctc"])
    args = ap.parse_args()
    for obj in args.objectives:
        r = overfit(obj, n_utts=args.utts, max_epochs=args.max_epochs, seed=args.seed)
        print(json.dumps({"objective": obj, "wer": r.wer, "epochs": r.epochs,
                          "seconds": round(r.seconds, 1), "first_loss": r.losses[0],
                          "last_loss": r.losses[-1]}))


if __name__ == "__main__":
    main()
