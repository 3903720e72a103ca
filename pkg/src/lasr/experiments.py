"""Desk-scale experiments on the synthetic corpus.

These are mechanism checks, not reproductions: the corpus is a toy
stand-in, models are tiny, and only directions of effects are meaningful.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import synth
from .config import FrontendConfig, ModelConfig, OptimConfig, PassSpec
from .decode import FusionWeights, beam_search, corpus_wer_of, grid_search_fusion, rescore
from .frontend import FeatureSequence
from .ngram import ngram_train
from .phone_ctc import PhoneCTCScorer, PhoneScorerConfig
from .pipeline import examples_from_synth
from .tokenizer import train_unigram
from .training import (TrainingPlan, TrainState, dataset_wer, prepare_features, run_plan,
                       train_epoch, train_phone_scorer)

DESK_FRONTEND = FrontendConfig(n_mels=40, stack=3, freq_mask=8, time_mask=10)


def desk_tokenizer(vocab_size: int = 40):
    return train_unigram(synth.text_corpus(500, 0), vocab_size)


def desk_model(vocab_size: int, kind: str = "content") -> ModelConfig:
    # encoder 2x32 (one pyramid stage), decoder 1x32
    return ModelConfig(input_dim=DESK_FRONTEND.n_mels * DESK_FRONTEND.stack, vocab_size=vocab_size,
                       enc_layers=2, compress_after=(1,), enc_hidden=32, dec_layers=1, dec_hidden=32,
                       attn_kind=kind, attn_heads=1, head_size=32, dropout=0.1,
                       ss_start_epoch=1000, max_decode_len=12, beam=4)


@dataclass
class OverfitResult:
    objective: str
    wer: float
    losses: list
    seconds: float
    epochs: int


def overfit(objective: str = "ce", n_utts: int = 20, max_epochs: int = 80, target_wer: float = 5.0,
            seed: int = 0, check_every: int = 10) -> OverfitResult:
    """Train on ``n_utts`` clean utterances until train WER <= target."""
    fe = DESK_FRONTEND
    tok = desk_tokenizer()
    data = examples_from_synth(synth.make_corpus(n_utts, seed=1), fe, tok)
    state = TrainState.create(desk_model(tok.vocab_size), OptimConfig(lr=3e-3, batch_size=5), seed)
    t0 = time.time()
    wer = float("inf")
    for ep in range(1, max_epochs + 1):
        train_epoch(state, data, objective, fe, tok)
        if ep % check_every == 0:
            wer = dataset_wer(state.model, data, tok, fe)
            if wer <= target_wer:
                break
    return OverfitResult(objective, wer, [h["loss"] for h in state.history], time.time() - t0, ep)


@dataclass
class ABResult:
    seed: int
    two_pass_wer: float
    target_only_wer: float

    @property
    def two_pass_wins(self) -> bool:
        return self.two_pass_wer < self.target_only_wer


def _ab_data(n_clean, n_target, n_test, tok):
    fe = DESK_FRONTEND
    return {
        "clean": examples_from_synth(synth.make_corpus(n_clean, 11, noisy=False, prefix="c"), fe, tok),
        "target": examples_from_synth(synth.make_corpus(n_target, 12, noisy=True, prefix="t"), fe, tok),
    }, examples_from_synth(synth.make_corpus(n_test, 13, noisy=True, prefix="x"), fe, tok)


def two_pass_ab(seeds=(0, 1, 2, 3), n_clean: int = 80, n_target: int = 24, n_test: int = 30,
                clean_epochs: int = 30, target_epochs: int = 20) -> list[ABResult]:
    """Clean -> noisy-target fine-tuning vs. training on the target alone.

    Both arms get the same total number of epochs; the target-only arm
    simply sees the small noisy set for all of them.
    """
    fe = DESK_FRONTEND
    tok = desk_tokenizer()
    datasets, test = _ab_data(n_clean, n_target, n_test, tok)
    cfg = desk_model(tok.vocab_size)
    opt = OptimConfig(lr=3e-3, batch_size=8)
    out = []
    for seed in seeds:
        two = TrainingPlan([PassSpec(["clean"], clean_epochs), PassSpec(["target"], target_epochs)],
                           seed=seed, optim=opt, frontend=fe)
        one = TrainingPlan([PassSpec(["target"], clean_epochs + target_epochs)], seed=seed,
                           optim=opt, frontend=fe)
        s2, _ = run_plan(two, cfg, datasets)
        s1, _ = run_plan(one, cfg, datasets)
        out.append(ABResult(seed, dataset_wer(s2.model, test, tok, fe),
                            dataset_wer(s1.model, test, tok, fe)))
    return out


@dataclass
class FusionResult:
    seed: int
    weights: FusionWeights
    tuned_wer: float
    baseline_wer: float
    test_tuned_wer: float = float("nan")
    test_baseline_wer: float = float("nan")
    extra: dict = field(default_factory=dict)


def _nbests(model, data, tok, beam):
    fe = DESK_FRONTEND
    out = []
    for ex in data:
        feat = FeatureSequence(prepare_features(ex, fe, None), fe.hop_ms)
        nb = beam_search(model, feat, beam=beam, tokenizer=tok)
        nb.utt_id, nb.reference = ex.id, ex.text
        out.append((nb, feat))
    return out


def fusion_ab(seeds=(0, 1, 2, 3), n_train: int = 40, n_valid: int = 20, n_test: int = 20,
              epochs: int = 25, phone_epochs: int = 15, beam: int = 4,
              grid_step: float = 0.05) -> list[FusionResult]:
    """Grid-searched LM + phone-CTC rescoring vs. the LAS score alone.

    Tuned on a validation split, then applied unchanged to a test split.
    """
    fe = DESK_FRONTEND
    tok = desk_tokenizer()
    lex = synth.lexicon()
    lm = ngram_train(synth.text_corpus(2000, 5), order=3)
    train = examples_from_synth(synth.make_corpus(n_train, 21, noisy_fraction=0.5, prefix="f"), fe,
                                tok, lex)
    valid = examples_from_synth(synth.make_corpus(n_valid, 22, noisy_fraction=0.5, prefix="v"), fe,
                                tok, lex)
    test = examples_from_synth(synth.make_corpus(n_test, 23, noisy_fraction=0.5, prefix="y"), fe,
                               tok, lex)
    cfg = desk_model(tok.vocab_size)
    out = []
    for seed in seeds:
        plan = TrainingPlan([PassSpec(["train"], epochs)], seed=seed,
                            optim=OptimConfig(lr=3e-3, batch_size=8), frontend=fe)
        state, _ = run_plan(plan, cfg, {"train": train})
        scorer = PhoneCTCScorer(PhoneScorerConfig(cfg.input_dim, lex.n_phonemes, 2, 32), seed=seed)
        train_phone_scorer(scorer, train, phone_epochs, OptimConfig(lr=3e-3, batch_size=8), fe, seed)
        scored = {}
        for name, data in (("valid", valid), ("test", test)):
            lists = []
            for nb, feat in _nbests(state.model, data, tok, beam):
                lists.append(rescore(nb, lm, scorer, feat, lex))
            scored[name] = lists
        g = grid_search_fusion(scored["valid"], grid_step)
        out.append(FusionResult(seed, g.weights, g.wer, g.baseline_wer,
                                corpus_wer_of(scored["test"], g.weights),
                                corpus_wer_of(scored["test"], FusionWeights(1.0, 1.0))))
    return out
