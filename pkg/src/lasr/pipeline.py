"""Glue from audio (synthetic or manifest) to training examples."""
from __future__ import annotations

from typing import Optional, Sequence

from .config import FrontendConfig
from .frontend import AudioUtterance, compute_log_mel, load_utterance, normalize, read_manifest
from .tokenizer import Lexicon, OOVError, SubwordModel, to_phonemes
from .training import Example


def featurize(utt: AudioUtterance, fe: FrontendConfig):
    feat = compute_log_mel(utt, fe.n_mels, fe.window_ms, fe.hop_ms)
    return normalize(feat).frames


def make_example(utt: AudioUtterance, fe: FrontendConfig, tokenizer: Optional[SubwordModel],
                 lexicon: Optional[Lexicon] = None, split: Optional[str] = None) -> Example:
    text = utt.transcript or ""
    tokens = tokenizer.encode(text, targets=True) if tokenizer is not None else []
    phones = None
    if lexicon is not None:
        try:
            phones = to_phonemes(lexicon, text)
        except OOVError:
            phones = None
    return Example(utt.id, featurize(utt, fe), tokens, text, phones, split)


def examples_from_synth(utts: Sequence, fe: FrontendConfig, tokenizer, lexicon=None) -> list[Example]:
    from .synth import SAMPLE_RATE
    return [make_example(AudioUtterance(u.id, u.samples, SAMPLE_RATE, u.text), fe, tokenizer,
                         lexicon, u.split) for u in utts]


def examples_from_manifest(path, fe: FrontendConfig, tokenizer, lexicon=None) -> list[Example]:
    out = []
    for row in read_manifest(path):
        utt = load_utterance(row)
        out.append(make_example(utt, fe, tokenizer, lexicon, row.get("split")))
    return out
