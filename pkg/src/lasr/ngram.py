"""Word n-gram language model with interpolated absolute discounting,
stored and scored with ARPA backoff semantics."""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Sequence

from .checkpoint import atomic_write_text

BOS, EOS, UNK = "<s>", "</s>", "<unk>"
LOG10_ZERO = -99.0
LN10 = math.log(10.0)


def _log10(p: float) -> float:
    return math.log10(p) if p > 0 else LOG10_ZERO


class NGramLM:
    """Backoff n-gram model; ``probs`` and ``backoffs`` hold log10 values
    keyed by word tuples, exactly as an ARPA file would."""

    def __init__(self, order: int, probs: dict, backoffs: dict):
        if order < 1:
            raise ValueError("n-gram order must be >= 1")
        self.order = order
        self.probs = probs
        self.backoffs = backoffs
        self.vocab = {k[0] for k in probs if len(k) == 1}

    @property
    def open_vocab(self) -> bool:
        return UNK in self.vocab

    def _map(self, w: str) -> str:
        return w if w in self.vocab else UNK

    def log10_prob(self, word: str, context: Sequence[str]) -> float:
        w = self._map(word)
        ctx = tuple(self._map(c) for c in context)[-(self.order - 1):] if self.order > 1 else ()
        acc = 0.0
        while True:
            lp = self.probs.get(ctx + (w,))
            if lp is not None:
                return acc + lp
            if not ctx:
                return acc + LOG10_ZERO
            acc += self.backoffs.get(ctx, 0.0)
            ctx = ctx[1:]

    def prob(self, word: str, context: Sequence[str]) -> float:
        return 10.0 ** self.log10_prob(word, context)

    def predictable(self) -> list[str]:
        """Words a context can be followed by (everything but ``<s>``)."""
        return sorted(w for w in self.vocab if w != BOS)

    # ---- scoring

    def initial_state(self) -> tuple:
        return (BOS,)

    def step(self, state: tuple, word: str) -> tuple[tuple, float]:
        """Advance by one word; returns the new state and the natural-log prob."""
        lp = self.log10_prob(word, state) * LN10
        keep = max(self.order - 1, 0)
        new = (state + (self._map(word),))[-keep:] if keep else ()
        return new, lp

    def score(self, words: Sequence[str]) -> float:
        """Natural-log probability of a full sentence, including ``</s>``."""
        if isinstance(words, str):
            words = words.split()
        state = self.initial_state()
        total = 0.0
        for w in list(words) + [EOS]:
            state, lp = self.step(state, w)
            total += lp
        return total

    # ---- ARPA I/O

    def to_arpa(self) -> str:
        by_order = defaultdict(list)
        for k in self.probs:
            by_order[len(k)].append(k)
        lines = ["", "\\data\\"]
        for n in range(1, self.order + 1):
            lines.append(f"ngram {n}={len(by_order[n])}")
        for n in range(1, self.order + 1):
            lines += ["", f"\\{n}-grams:"]
            for k in sorted(by_order[n]):
                row = f"{self.probs[k]!r}\t{' '.join(k)}"
                if k in self.backoffs:
                    row += f"\t{self.backoffs[k]!r}"
                lines.append(row)
        lines += ["", "\\end\\", ""]
        return "\n".join(lines)

    def save(self, path):
        atomic_write_text(path, self.to_arpa())

    @classmethod
    def from_arpa(cls, text: str) -> "NGramLM":
        probs, backoffs = {}, {}
        order = 0
        section = None
        declared = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line == "\\data\\":
                section = "data"
            elif line == "\\end\\":
                break
            elif line.startswith("\\") and line.endswith("-grams:"):
                section = int(line[1:line.index("-")])
                order = max(order, section)
            elif section == "data" and line.startswith("ngram"):
                n, cnt = line[5:].split("=")
                declared[int(n)] = int(cnt)
            elif isinstance(section, int):
                parts = line.split("\t") if "\t" in line else line.split()
                if "\t" in line:
                    lp, words = parts[0], parts[1].split()
                    bo = parts[2] if len(parts) > 2 else None
                else:
                    lp, words = parts[0], parts[1:1 + section]
                    bo = parts[1 + section] if len(parts) > 1 + section else None
                if len(words) != section:
                    raise ValueError(f"malformed {section}-gram line: {raw!r}")
                key = tuple(words)
                probs[key] = float(lp)
                if bo is not None:
                    backoffs[key] = float(bo)
        for n, cnt in declared.items():
            got = sum(1 for k in probs if len(k) == n)
            if got != cnt:
                raise ValueError(f"ARPA header declares {cnt} {n}-grams, found {got}")
        return cls(order, probs, backoffs)

    @classmethod
    def load(cls, path) -> "NGramLM":
        return cls.from_arpa(Path(path).read_text(encoding="utf-8"))


def ngram_train(corpus: Iterable, order: int = 4, discount: float = 0.7,
                open_vocab: bool = True) -> NGramLM:
    """Interpolated absolute discounting.

    ``P(w|h) = max(c(hw) - D, 0) / c(h) + D * N1+(h.) / c(h) * P(w|h')``
    bottoming out in a uniform distribution over the predictable vocabulary.
    """
    if order < 1:
        raise ValueError("n-gram order must be >= 1")
    if not 0.0 <= discount <= 1.0:
        raise ValueError("discount must lie in [0, 1]")
    sents = [s.split() if isinstance(s, str) else list(s) for s in corpus]
    if not sents:
        raise ValueError("empty LM training corpus")
    counts = [Counter() for _ in range(order + 1)]
    for s in sents:
        toks = [BOS] + s + [EOS]
        for n in range(1, order + 1):
            for i in range(len(toks) - n + 1):
                counts[n][tuple(toks[i:i + n])] += 1
    del counts[1][(BOS,)]
    vocab = {k[0] for k in counts[1]}
    if open_vocab:
        vocab.add(UNK)
    D = discount

    probs: dict = {}
    backoffs: dict = {}
    total1 = sum(counts[1].values())
    uniform = 1.0 / len(vocab)
    gamma1 = D * len(counts[1]) / total1
    p1 = {w: max(counts[1].get((w,), 0) - D, 0.0) / total1 + gamma1 * uniform for w in vocab}
    for w in vocab:
        probs[(w,)] = _log10(p1[w])
    probs[(BOS,)] = LOG10_ZERO

    lm = NGramLM(1, probs, backoffs)
    for n in range(2, order + 1):
        ctx_total: Counter = Counter()
        ctx_types: Counter = Counter()
        for k, c in counts[n].items():
            ctx_total[k[:-1]] += c
            ctx_types[k[:-1]] += 1
        new_probs = {}
        for k, c in counts[n].items():
            h = k[:-1]
            gamma = D * ctx_types[h] / ctx_total[h]
            lower = lm.prob(k[-1], h[1:])
            new_probs[k] = _log10(max(c - D, 0.0) / ctx_total[h] + gamma * lower)
        for h in ctx_total:
            backoffs[h] = _log10(D * ctx_types[h] / ctx_total[h])
        probs.update(new_probs)
        lm = NGramLM(n, probs, backoffs)
    return lm


def ngram_score(lm: NGramLM, words) -> float:
    return lm.score(words)
