"""Unigram subword model (EM-trained) and pronunciation lexicon."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy.special import logsumexp

from .checkpoint import atomic_write_text

BOUNDARY = "▁"
SOS, EOS, UNK = "<sos>", "<eos>", "<unk>"
SPECIALS = (SOS, EOS, UNK)
SOS_ID, EOS_ID, UNK_ID = 0, 1, 2
MAX_PIECE_LEN = 6


class SubwordModel:
    """Unigram segmentation model.

    Ids 0..2 are ``<sos>``, ``<eos>``, ``<unk>``; piece ``k`` has id ``k + 3``.
    With ``boundary=True`` every word is prefixed by a boundary mark before
    segmentation so that decoding can restore spaces.
    """

    def __init__(self, pieces: list[tuple[str, float]], boundary: bool = True):
        strs = [p for p, _ in pieces]
        if len(set(strs)) != len(strs):
            raise ValueError("piece strings must be unique")
        if any(p in SPECIALS for p in strs):
            raise ValueError("piece collides with a special symbol")
        self.pieces = [(p, float(lp)) for p, lp in pieces]
        self.boundary = boundary
        self._index = {p: i + len(SPECIALS) for i, p in enumerate(strs)}
        self._logp = {p: lp for p, lp in self.pieces}
        self.max_len = max((len(p) for p in strs), default=1)

    @property
    def vocab_size(self) -> int:
        return len(SPECIALS) + len(self.pieces)

    sos_id, eos_id, unk_id = SOS_ID, EOS_ID, UNK_ID

    def id_to_piece(self, i: int) -> str:
        if not 0 <= i < self.vocab_size:
            raise ValueError(f"invalid token id {i}")
        return SPECIALS[i] if i < len(SPECIALS) else self.pieces[i - len(SPECIALS)][0]

    def piece_to_id(self, p: str) -> int:
        return self._index.get(p, UNK_ID)

    def alphabet(self) -> set[str]:
        return {p for p, _ in self.pieces if len(p) == 1}

    # ---- segmentation

    def segment(self, s: str) -> list[str]:
        """Viterbi segmentation of one string; unknown characters become
        single-character segments mapped to ``<unk>``."""
        n = len(s)
        best = [-math.inf] * (n + 1)
        back = [0] * (n + 1)
        best[0] = 0.0
        unk_score = min(self._logp.values(), default=0.0) - 10.0
        for end in range(1, n + 1):
            for start in range(max(0, end - self.max_len), end):
                if best[start] == -math.inf:
                    continue
                piece = s[start:end]
                lp = self._logp.get(piece)
                if lp is None:
                    if end - start != 1:
                        continue
                    lp = unk_score
                score = best[start] + lp
                if score > best[end]:
                    best[end], back[end] = score, start
        out = []
        end = n
        while end > 0:
            out.append(s[back[end]:end])
            end = back[end]
        return out[::-1]

    def _units(self, text: str) -> list[str]:
        if self.boundary:
            return [BOUNDARY + w for w in text.split()]
        return [text]

    def encode_pieces(self, text: str) -> list[str]:
        out = []
        for unit in self._units(text):
            out.extend(self.segment(unit))
        return out

    def encode(self, text: str, targets: bool = False) -> list[int]:
        """Token ids for ``text``; ``targets=True`` adds ``<sos>``/``<eos>``."""
        ids = [self.piece_to_id(p) for p in self.encode_pieces(text)]
        if targets:
            ids = [SOS_ID] + ids + [EOS_ID]
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        parts = []
        for i in ids:
            i = int(i)
            p = self.id_to_piece(i)
            if i < len(SPECIALS):
                if i == UNK_ID:
                    parts.append("?")
                continue
            parts.append(p)
        s = "".join(parts)
        if self.boundary:
            s = s.replace(BOUNDARY, " ").strip()
        return s

    # ---- persistence

    def save(self, path):
        lines = [f"#boundary\t{int(self.boundary)}"]
        lines += [f"{p}\t{lp!r}" for p, lp in self.pieces]
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "SubwordModel":
        boundary = True
        pieces = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            p, lp = line.split("\t")
            if p == "#boundary":
                boundary = bool(int(lp))
                continue
            pieces.append((p, float(lp)))
        return cls(pieces, boundary)


# ---------------------------------------------------------------- training

def _lattice_logz(word: str, logp: dict, max_len: int) -> tuple[float, dict]:
    """Forward-backward over the segmentation lattice of ``word``.
    Returns log marginal likelihood and expected piece counts."""
    n = len(word)
    fwd = np.full(n + 1, -np.inf)
    fwd[0] = 0.0
    for end in range(1, n + 1):
        terms = [fwd[s] + logp[word[s:end]] for s in range(max(0, end - max_len), end)
                 if word[s:end] in logp]
        if terms:
            fwd[end] = logsumexp(terms)
    bwd = np.full(n + 1, -np.inf)
    bwd[n] = 0.0
    for start in range(n - 1, -1, -1):
        terms = [logp[word[start:e]] + bwd[e] for e in range(start + 1, min(n, start + max_len) + 1)
                 if word[start:e] in logp]
        if terms:
            bwd[start] = logsumexp(terms)
    logz = fwd[n]
    counts: dict[str, float] = {}
    for s in range(n):
        for e in range(s + 1, min(n, s + max_len) + 1):
            piece = word[s:e]
            if piece in logp:
                c = math.exp(fwd[s] + logp[piece] + bwd[e] - logz)
                if c > 0:
                    counts[piece] = counts.get(piece, 0.0) + c
    return logz, counts


@dataclass
class EMTrace:
    """Corpus negative log-likelihood after each EM iteration, grouped by
    vocabulary stage (pruning starts a new stage)."""
    stages: list[list[float]] = field(default_factory=list)


def _em(words: Counter, logp: dict, iters: int, trace: Optional[list]) -> tuple[dict, dict]:
    max_len = max(len(p) for p in logp)
    counts: dict[str, float] = {}
    for _ in range(iters):
        counts = {p: 0.0 for p in logp}
        nll = 0.0
        for w, c in words.items():
            logz, wc = _lattice_logz(w, logp, max_len)
            nll -= c * logz
            for p, v in wc.items():
                counts[p] += c * v
        total = sum(counts.values())
        floor = 1e-12 * total
        logp = {p: math.log(max(v, floor) / total) for p, v in counts.items()}
        norm = logsumexp(list(logp.values()))
        logp = {p: v - norm for p, v in logp.items()}
        if trace is not None:
            trace.append(nll)
    return logp, counts


def train_unigram(corpus: Iterable[str], vocab_size: int, em_iters: int = 4,
                  min_freq: int = 2, prune_frac: float = 0.2, boundary: bool = True,
                  trace: Optional[EMTrace] = None) -> SubwordModel:
    """Fit a unigram piece inventory of at most ``vocab_size`` pieces.

    Seeds with every substring (up to length 6) seen at least ``min_freq``
    times plus all single characters, then alternates EM with pruning the
    lowest expected-count multi-character pieces.
    """
    lines = [line.strip() for line in corpus if line.strip()]
    if not lines:
        raise ValueError("empty training corpus")
    words: Counter = Counter()
    for line in lines:
        if boundary:
            words.update(BOUNDARY + w for w in line.split())
        else:
            words[line] += 1
    chars = sorted({ch for w in words for ch in w})
    if vocab_size < len(chars):
        raise ValueError(f"vocab_size {vocab_size} cannot hold the {len(chars)} distinct characters")

    freq: Counter = Counter()
    for w, c in words.items():
        for i in range(len(w)):
            for j in range(i + 2, min(len(w), i + MAX_PIECE_LEN) + 1):
                freq[w[i:j]] += c
    char_freq: Counter = Counter()
    for w, c in words.items():
        for ch in w:
            char_freq[ch] += c
    seeds = {p: f * len(p) for p, f in freq.items() if f >= min_freq}
    seeds.update({ch: char_freq[ch] for ch in chars})
    total = sum(seeds.values())
    logp = {p: math.log(v / total) for p, v in seeds.items()}

    while True:
        stage: list[float] = []
        logp, counts = _em(words, logp, em_iters, stage)
        if trace is not None:
            trace.stages.append(stage)
        multi = [p for p in logp if len(p) > 1]
        if len(logp) <= vocab_size:
            break
        excess = len(logp) - vocab_size
        n_drop = min(excess, max(1, int(len(multi) * prune_frac)))
        multi.sort(key=lambda p: (counts.get(p, 0.0), p))
        for p in multi[:n_drop]:
            del logp[p]
        norm = logsumexp(list(logp.values()))
        logp = {p: v - norm for p, v in logp.items()}

    ordered = sorted(logp.items(), key=lambda kv: (-kv[1], kv[0]))
    return SubwordModel(ordered, boundary=boundary)


# ------------------------------------------------------------------ lexicon

BLANK = "<blank>"


class OOVError(KeyError):
    def __init__(self, word: str):
        self.word = word
        super().__init__(f"word not in lexicon: {word!r}")

    def __str__(self):
        return self.args[0]


class Lexicon:
    """Word -> phoneme id sequence.  Phoneme id 0 is the CTC blank."""

    def __init__(self, entries: dict[str, list[str]]):
        phones = sorted({p for seq in entries.values() for p in seq})
        if BLANK in phones:
            raise ValueError("lexicon entries may not use the blank symbol")
        self.phonemes = [BLANK] + phones
        self._pid = {p: i for i, p in enumerate(self.phonemes)}
        self.entries = {w: [self._pid[p] for p in seq] for w, seq in entries.items()}
        self._raw = {w: list(seq) for w, seq in entries.items()}

    blank_id = 0

    @property
    def n_phonemes(self) -> int:
        """Inventory size including blank."""
        return len(self.phonemes)

    def __contains__(self, word):
        return word in self.entries

    def save(self, path):
        lines = [f"{w}\t{' '.join(seq)}" for w, seq in sorted(self._raw.items())]
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Lexicon":
        entries = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                w, phones = line.split("\t")
                entries[w] = phones.split()
        return cls(entries)


def to_phonemes(lexicon: Lexicon, text: str) -> list[int]:
    out: list[int] = []
    for w in text.split():
        if w not in lexicon.entries:
            raise OOVError(w)
        out.extend(lexicon.entries[w])
    return out
