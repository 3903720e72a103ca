"""Word error rate, per-split reports and relative-improvement accounting."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SPLITS = ("clean", "noisy")


@dataclass(frozen=True)
class EditStats:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_words: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def __add__(self, other: "EditStats") -> "EditStats":
        return EditStats(self.substitutions + other.substitutions, self.deletions + other.deletions,
                         self.insertions + other.insertions, self.ref_words + other.ref_words)


def words(text: str) -> list[str]:
    return text.strip().split()


def levenshtein_words(hyp: Sequence[str], ref: Sequence[str]) -> EditStats:
    """Minimum-cost word alignment; among equal-cost paths, substitutions are
    preferred over an insertion/deletion pair."""
    if isinstance(hyp, str):
        hyp = words(hyp)
    if isinstance(ref, str):
        ref = words(ref)
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i, j] = min(sub, cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    S = D = I = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            S += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            D += 1
            i -= 1
        else:
            I += 1
            j -= 1
    return EditStats(int(S), D, I, n)


def word_errors(hyp: str, ref: str) -> int:
    return levenshtein_words(words(hyp), words(ref)).errors


def corpus_stats(hyps: Sequence[str], refs: Sequence[str]) -> EditStats:
    if len(hyps) != len(refs):
        raise ValueError(f"hypothesis/reference count mismatch: {len(hyps)} vs {len(refs)}")
    total = EditStats()
    for h, r in zip(hyps, refs):
        total = total + levenshtein_words(words(h), words(r))
    return total


def corpus_wer(hyps: Sequence[str], refs: Sequence[str]) -> float:
    """Pooled WER in percent: 100 * sum(S+D+I) / sum(N)."""
    st = corpus_stats(hyps, refs)
    if st.ref_words == 0:
        raise ValueError("corpus has no reference words")
    return 100.0 * st.errors / st.ref_words


def relative_improvement(baseline_wer: float, system_wer: float) -> float:
    if baseline_wer <= 0:
        raise ValueError("baseline WER must be positive")
    return 100.0 * (baseline_wer - system_wer) / baseline_wer


@dataclass
class Report:
    system: str
    wer: dict = field(default_factory=dict)          # split -> percent, plus "all"
    stats: dict = field(default_factory=dict)        # split -> EditStats
    improvements: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "system": self.system,
            "wer": self.wer,
            "stats": {k: {"S": v.substitutions, "D": v.deletions, "I": v.insertions,
                          "N": v.ref_words} for k, v in self.stats.items()},
            "relative_improvement": self.improvements,
        }, indent=2, sort_keys=True)

    def table(self) -> str:
        head = f"{'split':<8}{'WER%':>8}{'S':>6}{'D':>6}{'I':>6}{'N':>7}"
        rows = [f"system: {self.system}", head, "-" * len(head)]
        for k, v in self.wer.items():
            st = self.stats[k]
            rows.append(f"{k:<8}{v:>8.2f}{st.substitutions:>6}{st.deletions:>6}"
                        f"{st.insertions:>6}{st.ref_words:>7}")
        for name, val in self.improvements.items():
            rows.append(f"rel. improvement vs {name}: {val:.2f}%")
        return "\n".join(rows)


def split_report(manifest: Sequence[dict], hyps: dict, system: str = "system",
                 baselines: Optional[dict] = None) -> Report:
    """WER per clean/noisy tag plus the pooled WER over their union.

    ``manifest`` rows carry ``id``, ``text`` and ``split``; ``hyps`` maps
    utterance id to hypothesis text.  ``baselines`` maps a label to a pooled
    baseline WER for relative-improvement lines.
    """
    by_split: dict[str, EditStats] = {}
    for row in manifest:
        tag = row.get("split")
        if tag not in SPLITS:
            raise ValueError(f"utterance {row.get('id')}: unknown split tag {tag!r}")
        st = levenshtein_words(words(hyps.get(row["id"], "")), words(row["text"]))
        by_split[tag] = by_split.get(tag, EditStats()) + st
    report = Report(system)
    pooled = EditStats()
    for tag in SPLITS:
        if tag in by_split:
            st = by_split[tag]
            report.stats[tag] = st
            report.wer[tag] = 100.0 * st.errors / st.ref_words if st.ref_words else float("nan")
            pooled = pooled + st
    if pooled.ref_words == 0:
        raise ValueError("no reference words in manifest")
    report.stats["all"] = pooled
    report.wer["all"] = 100.0 * pooled.errors / pooled.ref_words
    for name, base in (baselines or {}).items():
        report.improvements[name] = relative_improvement(base, report.wer["all"])
    return report
