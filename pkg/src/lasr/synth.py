"""Synthetic voice-search corpus.

A small template grammar over a fixed word list.  Every word has a phoneme
sequence; every phoneme is rendered as a two-tone burst (fixed "formant"
pair plus per-speaker jitter).  The noisy condition adds white noise and an
unintelligible secondary speaker (random phoneme bursts at lower level).
This is a stand-in for real clean / voice-search data, nothing more.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .frontend import write_wav
from .tokenizer import Lexicon

SAMPLE_RATE = 16000

# (f1, f2) in Hz per phoneme
PHONES = {
    "aa": (700, 1200), "iy": (300, 2300), "uw": (320, 900), "eh": (550, 1800),
    "ow": (500, 950), "ae": (650, 1700), "k": (1500, 3200), "t": (2200, 3600),
    "s": (3000, 4200), "m": (250, 1400), "n": (280, 1700), "r": (450, 1350),
    "l": (380, 1050), "b": (900, 2600), "sh": (2500, 3900), "f": (1800, 4600),
}

LEXICON = {
    "buy": ["b", "aa", "iy"], "show": ["sh", "ow"], "find": ["f", "aa", "n"],
    "red": ["r", "eh", "t"], "blue": ["b", "l", "uw"], "black": ["b", "l", "ae", "k"],
    "cheap": ["sh", "iy", "b"], "new": ["n", "uw"], "small": ["s", "m", "aa", "l"],
    "shoes": ["sh", "uw", "s"], "phone": ["f", "ow", "n"], "watch": ["aa", "t", "sh"],
    "bag": ["b", "ae", "k"], "shirt": ["sh", "eh", "r", "t"], "lamp": ["l", "ae", "m", "b"],
    "tea": ["t", "iy"],
}

VERBS = ["buy", "show", "find"]
ADJS = ["red", "blue", "black", "cheap", "new", "small"]
NOUNS = ["shoes", "phone", "watch", "bag", "shirt", "lamp", "tea"]


def lexicon() -> Lexicon:
    return Lexicon(LEXICON)


def sample_sentence(rng: np.random.Generator) -> str:
    pattern = rng.integers(0, 4)
    noun = NOUNS[rng.integers(len(NOUNS))]
    adj = ADJS[rng.integers(len(ADJS))]
    verb = VERBS[rng.integers(len(VERBS))]
    if pattern == 0:
        return f"{adj} {noun}"
    if pattern == 1:
        return f"{verb} {adj} {noun}"
    if pattern == 2:
        return f"{verb} {noun}"
    return noun


def _burst(phone: str, dur_s: float, pitch: float, rng) -> np.ndarray:
    n = int(dur_s * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    f1, f2 = PHONES[phone]
    ph = rng.uniform(0, 2 * np.pi, 2)
    x = 0.6 * np.sin(2 * np.pi * f1 * pitch * t + ph[0]) + 0.4 * np.sin(2 * np.pi * f2 * pitch * t + ph[1])
    return x * np.hanning(n)


def synthesize(text: str, rng: np.random.Generator, noisy: bool = False) -> np.ndarray:
    pitch = rng.uniform(0.95, 1.05)
    rate = rng.uniform(0.85, 1.15)
    parts = [np.zeros(int(rng.uniform(0.03, 0.08) * SAMPLE_RATE))]
    for w in text.split():
        for p in LEXICON[w]:
            parts.append(_burst(p, 0.08 * rate * rng.uniform(0.9, 1.1), pitch, rng))
        parts.append(np.zeros(int(rng.uniform(0.02, 0.06) * SAMPLE_RATE)))
    parts.append(np.zeros(int(rng.uniform(0.03, 0.08) * SAMPLE_RATE)))
    x = 0.4 * np.concatenate(parts)
    if noisy:
        babble = np.zeros_like(x)
        pos = 0
        names = list(PHONES)
        while pos < x.size:
            seg = _burst(names[rng.integers(len(names))], rng.uniform(0.05, 0.12), rng.uniform(0.8, 1.2), rng)
            end = min(x.size, pos + seg.size)
            babble[pos:end] += seg[:end - pos]
            pos = end + int(rng.uniform(0.0, 0.05) * SAMPLE_RATE)
        x = x + 0.4 * rng.uniform(0.5, 1.0) * 0.4 * babble + rng.normal(0, 0.03, x.size)
    return np.clip(x, -1.0, 1.0)


@dataclass
class SynthUtterance:
    id: str
    text: str
    samples: np.ndarray
    split: str


def make_corpus(n: int, seed: int, noisy: bool = False, prefix: str = "utt",
                noisy_fraction: float | None = None) -> list[SynthUtterance]:
    """``noisy_fraction`` mixes conditions (tags follow the condition)."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        text = sample_sentence(rng)
        is_noisy = noisy if noisy_fraction is None else bool(rng.random() < noisy_fraction)
        out.append(SynthUtterance(f"{prefix}{i:04d}", text, synthesize(text, rng, is_noisy),
                                  "noisy" if is_noisy else "clean"))
    return out


def write_corpus(utts: list[SynthUtterance], out_dir, manifest_name: str = "manifest.jsonl") -> Path:
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    lines = []
    for u in utts:
        rel = f"wav/{u.id}.wav"
        write_wav(out_dir / rel, u.samples, SAMPLE_RATE)
        lines.append(json.dumps({"id": u.id, "audio_path": rel, "text": u.text, "split": u.split},
                                sort_keys=True))
    path = out_dir / manifest_name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def text_corpus(n: int, seed: int) -> list[str]:
    rng = np.random.default_rng(seed)
    return [sample_sentence(rng) for _ in range(n)]
