"""Training objectives: label-smoothed CE, CTC, N-best MWER, joint CE+CTC."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad
from .autodiff import Tensor

NEG_INF = -np.inf


# --------------------------------------------------------------------- CE

def smoothed_targets(targets, n_classes: int, eps: float) -> np.ndarray:
    """``(1 - eps) * onehot + eps / K`` for integer targets of any shape."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"label smoothing eps must be in [0, 1), got {eps}")
    targets = np.asarray(targets, dtype=np.int64)
    q = np.full(targets.shape + (n_classes,), eps / n_classes)
    np.put_along_axis(q, targets[..., None], 1.0 - eps + eps / n_classes, axis=-1)
    return q


def ce_smoothed(logits: Tensor, targets, eps: float = 0.1, mask=None) -> Tensor:
    """Mean over (unmasked) steps of ``-sum_k q'(k) log p(k)``.

    ``logits`` is (..., K); log-probabilities are fine too since
    log-softmax is idempotent on them.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ad.ShapeError("ce_smoothed", logits.shape, targets.shape)
    K = logits.shape[-1]
    q = smoothed_targets(targets, K, eps)
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        q = q * mask[..., None]
        n = mask.sum()
    else:
        n = targets.size
    if n == 0:
        raise ValueError("ce_smoothed: no target steps")
    logp = ad.log_softmax(logits)
    return ad.scale(ad.sum(logp * q), -1.0 / n)


# -------------------------------------------------------------------- CTC

class CTCAlignmentError(ValueError):
    """Target cannot be emitted in the available frames (probability 0)."""


def ctc_min_frames(target: Sequence[int]) -> int:
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


@dataclass
class CTCLattice:
    ext: np.ndarray        # blank-interleaved target, length 2L+1
    alpha: np.ndarray      # (U, S) log forward, includes emission at t
    beta: np.ndarray       # (U, S) log backward, excludes emission at t
    log_prob: float        # forward total
    log_prob_backward: float

    def occupancy(self, n_classes: int) -> np.ndarray:
        """Posterior class occupancy per frame, (U, C); rows sum to 1."""
        gamma = np.exp(self.alpha + self.beta - self.log_prob)
        occ = np.zeros((gamma.shape[0], n_classes))
        for s, k in enumerate(self.ext):
            occ[:, k] += gamma[:, s]
        return occ


def _shift(x: np.ndarray, k: int) -> np.ndarray:
    """``x`` moved k places right (k > 0) or left (k < 0), padded with -inf."""
    out = np.full_like(x, NEG_INF)
    if k > 0:
        out[k:] = x[:-k]
    else:
        out[:k] = x[-k:]
    return out


def ctc_lattice(log_probs: np.ndarray, target: Sequence[int], blank: int) -> CTCLattice:
    """Log-domain forward-backward over the blank-expanded target."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    U, C = log_probs.shape
    target = [int(t) for t in target]
    if any(t == blank or not 0 <= t < C for t in target):
        raise ValueError("ctc target ids must be valid non-blank classes")
    need = ctc_min_frames(target)
    if need > U:
        raise CTCAlignmentError(f"target needs at least {need} frames, only {U} available")
    S = 2 * len(target) + 1
    ext = np.full(S, blank, dtype=np.int64)
    ext[1::2] = target
    # s-2 transition allowed into non-blank labels that differ from the label two back
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    emit = log_probs[:, ext]                      # (U, S)
    alpha = np.full((U, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, U):
        prev = alpha[t - 1]
        a1 = _shift(prev, 1)
        a2 = np.where(skip, _shift(prev, 2), NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(prev, a1), a2) + emit[t]
    beta = np.full((U, S), NEG_INF)
    beta[U - 1, S - 1] = 0.0
    if S > 1:
        beta[U - 1, S - 2] = 0.0
    skip_next = np.zeros(S, dtype=bool)                      # may s jump to s+2
    skip_next[:-2] = skip[2:]
    for t in range(U - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        b1 = _shift(nxt, -1)
        b2 = np.where(skip_next, _shift(nxt, -2), NEG_INF)
        beta[t] = np.logaddexp(np.logaddexp(nxt, b1), b2)
    fwd = float(np.logaddexp(alpha[U - 1, S - 1], alpha[U - 1, S - 2]) if S > 1 else alpha[U - 1, 0])
    starts = [beta[0, 0] + emit[0, 0]] + ([beta[0, 1] + emit[0, 1]] if S > 1 else [])
    bwd = float(logsumexp(starts))
    return CTCLattice(ext, alpha, beta, fwd, bwd)


def ctc_nll(log_probs: Tensor, target: Sequence[int], blank: int) -> Tensor:
    """``-log p(target | x)`` for one utterance; log_probs is (U, C)."""
    lat = ctc_lattice(log_probs.value, target, blank)
    occ = lat.occupancy(log_probs.shape[1])
    return ad.apply("ctc", np.asarray(-lat.log_prob), (log_probs,), lambda go: (-go * occ,))


def ctc_loss(frame_logits: Tensor, targets, input_lengths=None, blank: int = -1) -> Tensor:
    """Mean CTC negative log-likelihood over a batch.

    ``frame_logits`` is (U, C) for one utterance (``targets`` a single id
    sequence) or (B, U, C) with ``targets`` a list of sequences.  Logits are
    log-softmaxed here; ``blank=-1`` means the last class.
    """
    single = frame_logits.ndim == 2
    logp = ad.log_softmax(frame_logits)
    C = frame_logits.shape[-1]
    blank = blank % C
    if single:
        return ctc_nll(logp, targets, blank)
    B, U, _ = logp.shape
    if len(targets) != B:
        raise ValueError("ctc_loss: one target per batch row required")
    lengths = np.full(B, U) if input_lengths is None else np.asarray(input_lengths)
    total = None
    for b in range(B):
        nll = ctc_nll(logp[b, :int(lengths[b])], targets[b], blank)
        total = nll if total is None else total + nll
    return ad.scale(total, 1.0 / B)


# ------------------------------------------------------------------- MWER

def mwer_loss(seq_log_probs: Tensor, word_errors) -> Tensor:
    """Expected word errors over the N-best, baseline-subtracted.

    Hypothesis probabilities are renormalised over the list (softmax of the
    sequence log-probs); the baseline is the mean word-error count.
    """
    w = np.asarray(word_errors, dtype=np.float64)
    if seq_log_probs.ndim != 1 or seq_log_probs.shape[0] != w.size:
        raise ad.ShapeError("mwer_loss", seq_log_probs.shape, w.shape)
    if w.size == 0:
        raise ValueError("mwer_loss: empty N-best list")
    p = ad.softmax(seq_log_probs)
    return ad.sum(p * (w - w.mean()))


def expected_word_errors(seq_log_probs, word_errors) -> float:
    lp = np.asarray(seq_log_probs, dtype=np.float64)
    p = np.exp(lp - logsumexp(lp))
    return float(p @ np.asarray(word_errors, dtype=np.float64))


def mwer_objective(ce, mwer, mwer_lambda: float):
    return mwer_lambda * ce + mwer


def joint_loss(ce, ctc, joint_lambda: float = 0.8):
    """``lambda * CE + (1 - lambda) * CTC`` for floats or tensors."""
    if not 0.0 <= joint_lambda <= 1.0:
        raise ValueError("joint_lambda must lie in [0, 1]")
    if isinstance(ce, Tensor) or isinstance(ctc, Tensor):
        if joint_lambda == 1.0:
            return ad.scale(ce, 1.0) if isinstance(ce, Tensor) else ce
        if joint_lambda == 0.0:
            return ad.scale(ctc, 1.0) if isinstance(ctc, Tensor) else ctc
        return ad.scale(ce, joint_lambda) + ad.scale(ctc, 1.0 - joint_lambda)
    return joint_lambda * ce + (1.0 - joint_lambda) * ctc
