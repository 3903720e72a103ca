"""Beam search and second-pass rescoring (n-gram LM + phoneme CTC)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .evaluation import corpus_wer, word_errors
from .frontend import FeatureSequence
from .model import AttentionMemory, DecoderState, LASModel, attention_memory, initial_state, \
    listen, spell_step
from .ngram import NGramLM
from .tokenizer import EOS_ID, SOS_ID, Lexicon, OOVError, SubwordModel, to_phonemes


@dataclass
class Hypothesis:
    tokens: list                      # <sos> ... [<eos>]
    las_score: float
    lm_score: float = 0.0
    phoneme_ctc_score: Optional[float] = None   # None: not scored / unscorable
    complete: bool = True
    text: str = ""

    def __post_init__(self):
        if self.complete and (not self.tokens or self.tokens[-1] != EOS_ID):
            raise ValueError("complete hypothesis must end with <eos>")


@dataclass
class NBest:
    hyps: list
    reference: Optional[str] = None
    utt_id: str = ""

    def __len__(self):
        return len(self.hyps)

    def __iter__(self):
        return iter(self.hyps)

    def __getitem__(self, i):
        return self.hyps[i]

    @property
    def best(self) -> Hypothesis:
        return self.hyps[0]


@dataclass(frozen=True)
class FusionWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("fusion weights must lie in [0, 1]")


# ------------------------------------------------------------ beam search

def _gather_state(state: DecoderState, idx: np.ndarray) -> DecoderState:
    return DecoderState([h[idx] for h in state.hcs], state.context[idx], state.align[idx])


def _tile_memory(mem: AttentionMemory, n: int) -> AttentionMemory:
    idx = np.zeros(n, dtype=np.int64)
    return AttentionMemory(mem.keys[idx], mem.values[idx], mem.mask_bias[idx])


def beam_search(model: LASModel, feat: FeatureSequence, beam: Optional[int] = None,
                max_len: Optional[int] = None, tokenizer: Optional[SubwordModel] = None,
                length_norm: Optional[bool] = None) -> NBest:
    """Length-synchronous beam search.

    Each step expands every live hypothesis by every token (``<sos>`` is
    never emitted), keeps the ``beam`` best candidates by accumulated
    log-prob, and moves those ending in ``<eos>`` to the completed pool.
    Stops once ``beam`` hypotheses are complete or after ``max_len`` steps.
    """
    cfg = model.cfg
    beam = cfg.beam if beam is None else beam
    max_len = cfg.max_decode_len if max_len is None else max_len
    length_norm = cfg.length_norm if length_norm is None else length_norm
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be >= 1")
    if len(feat) == 0:
        raise ValueError("beam_search: empty features")
    g = ad.Graph(record=False)
    P = {k: g.constant(v) for k, v in model.params.items()}
    enc = listen(P, cfg, feat.frames[None])
    mem1 = attention_memory(P, cfg, enc)
    state = initial_state(P, cfg, mem1)
    V = cfg.vocab_size

    live_tokens = [[SOS_ID]]
    live_scores = np.zeros(1)
    completed: list[Hypothesis] = []
    mem = mem1
    for _ in range(max_len):
        n = len(live_tokens)
        if mem.keys.shape[0] != n:
            mem = _tile_memory(mem1, n)
        y_prev = np.array([t[-1] for t in live_tokens])
        state, logp = spell_step(P, cfg, state, y_prev, mem)
        cand = live_scores[:, None] + logp.value
        cand[:, SOS_ID] = -np.inf
        flat = cand.ravel()
        order = np.argsort(-flat, kind="stable")[:beam]
        order = order[np.isfinite(flat[order])]
        new_tokens, new_scores, keep = [], [], []
        for j in order:
            src, tok = divmod(int(j), V)
            toks = live_tokens[src] + [tok]
            if tok == EOS_ID:
                completed.append(Hypothesis(toks, float(flat[j]), complete=True))
            else:
                new_tokens.append(toks)
                new_scores.append(flat[j])
                keep.append(src)
        if len(completed) >= beam or not new_tokens:
            live_tokens = new_tokens
            live_scores = np.array(new_scores)
            break
        state = _gather_state(state, np.array(keep))
        live_tokens = new_tokens
        live_scores = np.array(new_scores)

    def rank_key(h: Hypothesis):
        n = len(h.tokens) - 1
        return h.las_score / n if length_norm else h.las_score

    if completed:
        hyps = sorted(completed, key=rank_key, reverse=True)
    else:
        best = int(np.argmax(live_scores))
        hyps = [Hypothesis(live_tokens[best], float(live_scores[best]), complete=False)]
    if tokenizer is not None:
        for h in hyps:
            h.text = tokenizer.decode(h.tokens)
    return NBest(hyps)


def greedy_decode(model: LASModel, feat: FeatureSequence, max_len: Optional[int] = None) -> list:
    g = ad.Graph(record=False)
    P = {k: g.constant(v) for k, v in model.params.items()}
    cfg = model.cfg
    enc = listen(P, cfg, feat.frames[None])
    mem = attention_memory(P, cfg, enc)
    state = initial_state(P, cfg, mem)
    toks = [SOS_ID]
    for _ in range(max_len or cfg.max_decode_len):
        state, logp = spell_step(P, cfg, state, [toks[-1]], mem)
        lp = logp.value[0].copy()
        lp[SOS_ID] = -np.inf
        toks.append(int(lp.argmax()))
        if toks[-1] == EOS_ID:
            break
    return toks


# -------------------------------------------------------------- rescoring

PHONE_FLOOR = -1e4  # log-prob assigned when the phone sequence cannot fit the frames


def phoneme_ctc_score(scorer, feat: FeatureSequence, hyp_text: str, lexicon: Lexicon) -> float:
    """CTC log-likelihood of the hypothesis' phoneme sequence under the
    scorer's frame posteriors.  Raises :class:`OOVError` for unknown words."""
    from .losses import CTCAlignmentError, ctc_lattice
    phones = to_phonemes(lexicon, hyp_text)
    logp = scorer.frame_log_probs(feat)
    try:
        return ctc_lattice(logp, phones, lexicon.blank_id).log_prob
    except CTCAlignmentError:
        return PHONE_FLOOR


def rescore(nbest: NBest, lm: Optional[NGramLM] = None, scorer=None,
            feat: Optional[FeatureSequence] = None, lexicon: Optional[Lexicon] = None) -> NBest:
    """Fill in ``lm_score`` and ``phoneme_ctc_score`` for every hypothesis.
    Hypotheses with out-of-lexicon words keep ``phoneme_ctc_score=None``."""
    phone_cache: dict = {}
    for h in nbest:
        if lm is not None:
            h.lm_score = lm.score(h.text.split())
        if scorer is not None and lexicon is not None and feat is not None:
            if h.text not in phone_cache:
                try:
                    phone_cache[h.text] = phoneme_ctc_score(scorer, feat, h.text, lexicon)
                except OOVError:
                    phone_cache[h.text] = None
            h.phoneme_ctc_score = phone_cache[h.text]
    return nbest


def fuse(hyp: Hypothesis, w: FusionWeights) -> float:
    """``a*las + (1-a)*(b*lm + (1-b)*phone)``; without a phone score the
    second term falls back to the LM alone."""
    if hyp.phoneme_ctc_score is None:
        ext = hyp.lm_score
    else:
        ext = w.beta * hyp.lm_score + (1.0 - w.beta) * hyp.phoneme_ctc_score
    return w.alpha * hyp.las_score + (1.0 - w.alpha) * ext


def rerank(nbest: NBest, w: FusionWeights) -> NBest:
    order = sorted(range(len(nbest)), key=lambda i: (-fuse(nbest[i], w), i))
    return NBest([nbest[i] for i in order], nbest.reference, nbest.utt_id)


def _fused_matrix(nbest: NBest):
    las = np.array([h.las_score for h in nbest])
    lm = np.array([h.lm_score for h in nbest])
    has_ph = np.array([h.phoneme_ctc_score is not None for h in nbest])
    ph = np.array([h.phoneme_ctc_score if h.phoneme_ctc_score is not None else 0.0 for h in nbest])
    return las, lm, ph, has_ph


@dataclass
class GridResult:
    weights: FusionWeights
    wer: float
    evaluated: int
    baseline_wer: float                  # alpha = 1 (LAS score only)
    table: dict = field(default_factory=dict)


def grid_points(step: float) -> np.ndarray:
    n = int(round(1.0 / step))
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"grid step must divide 1 evenly, got {step}")
    return np.round(np.arange(n + 1) / n, 12)


def grid_search_fusion(validation: Sequence[NBest], grid_step: float = 0.05) -> GridResult:
    """Exhaustive (alpha, beta) scan minimising corpus WER of the top
    hypothesis.  Ties prefer larger alpha, then larger beta."""
    if not validation:
        raise ValueError("empty validation set")
    refs = [nb.reference for nb in validation]
    if any(r is None for r in refs):
        raise ValueError("every validation N-best needs a reference")
    errs = [np.array([word_errors(h.text, nb.reference) for h in nb]) for nb in validation]
    n_ref = sum(len(r.split()) for r in refs)
    if n_ref == 0:
        raise ValueError("validation references have no words")
    mats = [_fused_matrix(nb) for nb in validation]
    pts = grid_points(grid_step)
    table = {}
    best = None
    for a in pts:
        for b in pts:
            total = 0
            for (las, lm, ph, has), e in zip(mats, errs):
                ext = np.where(has, b * lm + (1 - b) * ph, lm)
                score = a * las + (1 - a) * ext
                total += e[int(np.argmax(score))]
            wer = float(100.0 * total / n_ref)
            table[(float(a), float(b))] = wer
            key = (wer, -a, -b)
            if best is None or key < best[0]:
                best = (key, float(a), float(b))
    base = table[(1.0, 1.0)]
    return GridResult(FusionWeights(best[1], best[2]), best[0][0], len(table), base, table)


def nbest_to_jsonl(nbests: Sequence[NBest]) -> str:
    lines = []
    for nb in nbests:
        for rank, h in enumerate(nb):
            lines.append(json.dumps({
                "utt_id": nb.utt_id, "rank": rank, "text": h.text, "las": h.las_score,
                "lm": h.lm_score, "phone": h.phoneme_ctc_score,
            }, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def nbest_from_jsonl(text: str, references: Optional[dict] = None) -> list[NBest]:
    groups: dict[str, list] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        groups.setdefault(row["utt_id"], []).append(row)
    out = []
    for utt, rows in groups.items():
        rows.sort(key=lambda r: r["rank"])
        hyps = [Hypothesis([], r["las"], r["lm"], r["phone"], complete=False, text=r["text"])
                for r in rows]
        out.append(NBest(hyps, (references or {}).get(utt), utt))
    return out


def corpus_wer_of(nbests: Sequence[NBest], w: Optional[FusionWeights] = None) -> float:
    tops = [(rerank(nb, w) if w else nb).best.text for nb in nbests]
    return corpus_wer(tops, [nb.reference for nb in nbests])
