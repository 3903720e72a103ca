"""``lasr`` command line: one entry point, one subcommand per pipeline stage.

Every artifact is written through a temp file and renamed into place, and
every subcommand is deterministic for a fixed ``--seed``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path


from . import checkpoint as ckpt
from .config import FrontendConfig, PassSpec, load_config
from .frontend import FeatureSequence, read_manifest
from .tokenizer import Lexicon, SubwordModel, train_unigram

log = logging.getLogger("lasr")

MODEL_FILE = "model.ckpt"
TOKENIZER_FILE = "tokenizer.tsv"
PHONE_FILE = "phone.ckpt"
LOG_FILE = "train_log.jsonl"


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers

def _texts(path) -> list[str]:
    """Transcripts from a JSONL manifest or a plain one-sentence-per-line file."""
    path = Path(path)
    if path.suffix == ".jsonl":
        return [r["text"] for r in read_manifest(path)]
    return [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]


def _is_checkpoint(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(8) == ckpt.MAGIC


def save_features(path, rows, feats, fe: FrontendConfig):
    arrays = {r["id"]: f for r, f in zip(rows, feats)}
    meta = {"ids": [r["id"] for r in rows],
            "text": {r["id"]: r.get("text", "") for r in rows},
            "split": {r["id"]: r.get("split") for r in rows}}
    ckpt.save(path, arrays, dataclasses.asdict(fe), "features", meta)


def load_examples(path, fe: FrontendConfig, tokenizer=None, lexicon=None):
    """Examples from a manifest (featurised on the fly) or a features file."""
    from .pipeline import examples_from_manifest
    from .tokenizer import OOVError, to_phonemes
    from .training import Example
    if not _is_checkpoint(path):
        return examples_from_manifest(path, fe, tokenizer, lexicon)
    arrays, config, kind, meta = ckpt.load(path)
    if kind != "features":
        raise ckpt.CheckpointError(f"{path}: expected a features file, found {kind!r}")
    for key in ("n_mels", "window_ms", "hop_ms"):
        if config[key] != getattr(fe, key):
            raise ckpt.CheckpointError(f"{path}: features computed with {key}={config[key]}, "
                                       f"model expects {getattr(fe, key)}")
    out = []
    for uid in meta["ids"]:
        text = meta["text"][uid]
        phones = None
        if lexicon is not None:
            try:
                phones = to_phonemes(lexicon, text)
            except OOVError:
                phones = None
        toks = tokenizer.encode(text, targets=True) if tokenizer is not None else []
        out.append(Example(uid, arrays[uid], toks, text, phones, meta["split"][uid]))
    return out


def _resolve(name: str, base: Path) -> str:
    p = Path(name)
    if p.is_absolute() or p.exists():
        return str(p)
    return str(base / p)


def load_model_dir(model_dir):
    """Returns ``(model, tokenizer, frontend, phone_scorer_or_None)``."""
    from .training import load_model, load_phone_scorer
    d = Path(model_dir)
    if not (d / MODEL_FILE).exists():
        raise FileNotFoundError(f"{d}: no {MODEL_FILE} (is this a model directory?)")
    model = load_model(d / MODEL_FILE)
    _, _, _, meta = ckpt.load(d / MODEL_FILE)
    fe = FrontendConfig(**meta["frontend"])
    tok = SubwordModel.load(d / TOKENIZER_FILE)
    if tok.vocab_size != model.cfg.vocab_size:
        raise ckpt.CheckpointError(f"tokenizer vocab {tok.vocab_size} != model vocab "
                                   f"{model.cfg.vocab_size}")
    scorer = load_phone_scorer(d / PHONE_FILE) if (d / PHONE_FILE).exists() else None
    return model, tok, fe, scorer


def _hyps_jsonl(pairs) -> str:
    return "".join(json.dumps({"utt_id": u, "text": t}, sort_keys=True) + "\n" for u, t in pairs)


def _read_hyps(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            row = json.loads(line)
            out[row["utt_id"]] = row["text"]
    return out


def _need(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required {', '.join(missing)}")


# ------------------------------------------------------------- subcommands

def cmd_synth(args):
    from .synth import lexicon, make_corpus, write_corpus
    _need(args, "out")
    utts = make_corpus(args.n, args.seed, prefix=args.prefix, noisy_fraction=args.noisy_fraction)
    path = write_corpus(utts, args.out)
    lexicon().save(Path(args.out) / "lexicon.tsv")
    print(f"wrote {len(utts)} utterances to {path}")


def cmd_featurize(args):
    from .frontend import load_utterance
    from .pipeline import featurize
    _need(args, "manifest", "out")
    cfg = load_config(args.config, args.set)
    rows = read_manifest(args.manifest)
    feats = [featurize(load_utterance(r), cfg.frontend) for r in rows]
    save_features(args.out, rows, feats, cfg.frontend)
    print(f"featurized {len(rows)} utterances -> {args.out}")


def cmd_tokenizer_train(args):
    _need(args, "manifest", "out")
    tok = train_unigram(_texts(args.manifest), args.vocab_size)
    tok.save(args.out)
    print(f"tokenizer: {tok.vocab_size} ids ({tok.vocab_size - 3} pieces) -> {args.out}")


def cmd_lm_train(args):
    from .ngram import ngram_train
    _need(args, "manifest", "out")
    lm = ngram_train(_texts(args.manifest), order=args.order)
    lm.save(args.out)
    print(f"{args.order}-gram LM -> {args.out}")


def cmd_train(args):
    from .phone_ctc import PhoneCTCScorer, PhoneScorerConfig
    from .training import (TrainingPlan, run_plan, save_model, save_phone_scorer,
                           train_phone_scorer)
    _need(args, "tokenizer", "out")
    overrides = list(args.set)
    tok = SubwordModel.load(args.tokenizer)
    cfg = load_config(args.config, overrides)
    if args.seed_given or args.config is None:
        cfg.seed = args.seed
    fe = cfg.frontend
    cfg.model.vocab_size = tok.vocab_size
    cfg.model.input_dim = fe.n_mels * fe.stack
    cfg.model.__post_init__()
    base = Path(args.config).parent if args.config else Path(".")
    passes = cfg.passes
    if not passes:
        if args.manifest is None:
            raise UsageError("train: the config has no [pass.N] sections; give --manifest")
        passes = [PassSpec([args.manifest], args.epochs, "ce")]
    lex = Lexicon.load(args.lexicon) if args.lexicon else None
    datasets = {}
    for p in passes:
        for name in p.datasets:
            if name not in datasets:
                datasets[name] = load_examples(_resolve(name, base), fe, tok, lex)
    valid = load_examples(args.valid, fe, tok) if args.valid else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    partial = out / f".{LOG_FILE}.partial"
    partial.write_text("", encoding="utf-8")
    plan = TrainingPlan(passes, cfg.seed, cfg.optim, fe)
    state, metrics = run_plan(plan, cfg.model, datasets, valid, tok, partial)
    save_model(state.model, out / MODEL_FILE, {"frontend": dataclasses.asdict(fe)})
    tok.save(out / TOKENIZER_FILE)
    if lex is not None and args.phone_epochs > 0:
        data = [ex for name in datasets for ex in datasets[name] if ex.phones]
        pcfg = PhoneScorerConfig(input_dim=fe.n_mels * fe.stack, n_phonemes=lex.n_phonemes,
                                 layers=args.phone_layers, hidden=args.phone_hidden)
        scorer = PhoneCTCScorer(pcfg, seed=cfg.seed)
        hist = train_phone_scorer(scorer, data, args.phone_epochs, cfg.optim, fe, cfg.seed)
        save_phone_scorer(scorer, out / PHONE_FILE)
        metrics.append({"phone_ctc_loss": hist[-1]})
    ckpt.atomic_write_text(out / "metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    os.replace(partial, out / LOG_FILE)
    for m in metrics:
        print(json.dumps(m, sort_keys=True))


def cmd_decode(args):
    from .decode import beam_search, nbest_to_jsonl
    from .training import prepare_features
    _need(args, "manifest", "out")
    model, tok, fe, _ = load_model_dir(args.model)
    data = load_examples(args.manifest, fe)
    beam = args.beam or model.cfg.beam

    def one(ex):
        feat = FeatureSequence(prepare_features(ex, fe, None), fe.hop_ms)
        nb = beam_search(model, feat, beam=beam, tokenizer=tok)
        nb.utt_id = ex.id
        return nb

    # map() yields in submission order, so the output order is fixed
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        nbests = list(pool.map(one, data))
    ckpt.atomic_write_text(args.out, nbest_to_jsonl(nbests))
    print(f"decoded {len(nbests)} utterances (beam {beam}) -> {args.out}")


def cmd_rescore(args):
    from .decode import FusionWeights, grid_search_fusion, nbest_from_jsonl, nbest_to_jsonl, rerank, rescore
    from .ngram import NGramLM
    from .training import prepare_features
    _need(args, "nbest", "out")
    refs = {}
    feats = {}
    scorer = fe = None
    if args.model:
        _, _, fe, scorer = load_model_dir(args.model)
    lex = Lexicon.load(args.lexicon) if args.lexicon else None
    if args.manifest:
        fe = fe or load_config(args.config, args.set).frontend
        for ex in load_examples(args.manifest, fe):
            refs[ex.id] = ex.text
            feats[ex.id] = FeatureSequence(prepare_features(ex, fe, None), fe.hop_ms)
    lm = NGramLM.load(args.lm) if args.lm else None
    nbests = nbest_from_jsonl(Path(args.nbest).read_text(encoding="utf-8"), refs)
    for nb in nbests:
        rescore(nb, lm, scorer if lex is not None else None, feats.get(nb.utt_id), lex)
    if args.alpha is not None or args.beta is not None or not args.tune:
        w = FusionWeights(1.0 if args.alpha is None else args.alpha,
                          1.0 if args.beta is None else args.beta)
    else:
        if not refs:
            raise UsageError("rescore --tune needs --manifest with reference transcripts")
        res = grid_search_fusion(nbests, args.grid_step)
        w = res.weights
        print(f"grid search: alpha={w.alpha:g} beta={w.beta:g} wer={res.wer:.2f} "
              f"(alpha=1: {res.baseline_wer:.2f}, {res.evaluated} points)")
    ranked = [rerank(nb, w) for nb in nbests]
    ckpt.atomic_write_text(args.out, _hyps_jsonl((nb.utt_id, nb.best.text) for nb in ranked))
    if args.nbest_out:
        ckpt.atomic_write_text(args.nbest_out, nbest_to_jsonl(ranked))
    print(f"rescored {len(ranked)} utterances with alpha={w.alpha:g} beta={w.beta:g} -> {args.out}")


def cmd_evaluate(args):
    from .evaluation import split_report
    _need(args, "hyp", "ref")
    rows = read_manifest(args.ref)
    hyps = _read_hyps(args.hyp)
    baselines = {}
    for b in args.baseline:
        name, _, val = b.partition("=")
        baselines[name] = float(val)
    rep = split_report(rows, hyps, args.system, baselines)
    print(rep.table())
    if args.out:
        ckpt.atomic_write_text(args.out, rep.to_json())


def cmd_gradcheck(args):
    from .gradsuite import run_suite
    reports = run_suite(args.seed)
    ok = True
    summary = {}
    for name, r in reports.items():
        worst = max(r.errors.values()) if r.errors else 0.0
        summary[name] = {"passed": r.passed, "max_rel_error": worst}
        ok &= r.passed
        print(f"{'PASS' if r.passed else 'FAIL'}  {name:28s} max rel err {worst:.2e}")
    if args.out:
        ckpt.atomic_write_text(args.out, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0 if ok else 1


COMMANDS = {
    "synth": cmd_synth, "featurize": cmd_featurize, "tokenizer-train": cmd_tokenizer_train,
    "lm-train": cmd_lm_train, "train": cmd_train, "decode": cmd_decode, "rescore": cmd_rescore,
    "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck,
}


class _SeedAction(argparse.Action):
    def __call__(self, parser, ns, values, option_string=None):
        setattr(ns, self.dest, values)
        ns.seed_given = True


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run config")
    common.add_argument("--seed", type=int, default=42, action=_SeedAction)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, e.g. model.enc_hidden=32")
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="lasr", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write the synthetic corpus")
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--prefix", default="utt")
    p.add_argument("--noisy-fraction", type=float, default=0.5)

    p = sub.add_parser("featurize", parents=[common], help="manifest -> features file")
    p.add_argument("--manifest")

    p = sub.add_parser("tokenizer-train", parents=[common], help="train the subword model")
    p.add_argument("--manifest", help="JSONL manifest or plain text, one sentence per line")
    p.add_argument("--vocab-size", type=int, default=200)

    p = sub.add_parser("lm-train", parents=[common], help="train an ARPA n-gram LM")
    p.add_argument("--manifest", help="JSONL manifest or plain text, one sentence per line")
    p.add_argument("--order", type=int, default=4)

    p = sub.add_parser("train", parents=[common], help="train LAS (and optionally the phone scorer)")
    p.add_argument("--tokenizer")
    p.add_argument("--manifest", help="single training set when the config has no passes")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--valid")
    p.add_argument("--lexicon")
    p.add_argument("--phone-epochs", type=int, default=0)
    p.add_argument("--phone-layers", type=int, default=2)
    p.add_argument("--phone-hidden", type=int, default=32)

    p = sub.add_parser("decode", parents=[common], help="beam search -> N-best JSONL")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest")
    p.add_argument("--beam", type=int)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("rescore", parents=[common], help="LM / phone-CTC rescoring of N-best lists")
    p.add_argument("--nbest")
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--lm")
    p.add_argument("--lexicon")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--tune", action="store_true", help="grid-search alpha/beta on --manifest")
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--nbest-out")

    p = sub.add_parser("evaluate", parents=[common], help="WER report for a hypothesis file")
    p.add_argument("--hyp")
    p.add_argument("--ref")
    p.add_argument("--system", default="system")
    p.add_argument("--baseline", action="append", default=[], metavar="NAME=WER")

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args.seed_given = getattr(args, "seed_given", False)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = COMMANDS[args.command](args)
    except UsageError as e:
        ap.print_usage(sys.stderr)
        print(f"lasr: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - report and exit 1
        log.debug("failure", exc_info=True)
        print(f"lasr {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return int(rc or 0)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
