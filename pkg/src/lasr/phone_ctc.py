"""Phoneme CTC scorer used for second-pass rescoring: a stack of
unidirectional LSTMs and a dense layer over phonemes + blank."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Graph
from .frontend import FeatureSequence
from .losses import ctc_loss
from .model import _glorot, _lstm_params


@dataclass
class PhoneScorerConfig:
    input_dim: int = 240
    n_phonemes: int = 40     # including blank (id 0)
    layers: int = 5
    hidden: int = 700

    def to_dict(self):
        return dict(vars(self))


def init_phone_params(cfg: PhoneScorerConfig, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    p: dict = {}
    din = cfg.input_dim
    for layer in range(1, cfg.layers + 1):
        _lstm_params(rng, p, f"ph{layer}", din, cfg.hidden)
        din = cfg.hidden
    p["ph.W"] = _glorot(rng, cfg.hidden, cfg.n_phonemes)
    p["ph.b"] = np.zeros(cfg.n_phonemes)
    return p


def phone_log_probs(P, cfg: PhoneScorerConfig, feats, lengths=None):
    """(B, T, D) features -> (B, T, n_phonemes) log posteriors."""
    g = next(iter(P.values())).graph
    x = feats if isinstance(feats, ad.Tensor) else g.constant(np.asarray(feats, dtype=np.float64))
    B, T, _ = x.shape
    for layer in range(1, cfg.layers + 1):
        Wh = P[f"ph{layer}.Wh"]
        H = Wh.shape[0]
        xw = x @ P[f"ph{layer}.Wx"] + P[f"ph{layer}.b"]
        hc = g.constant(np.zeros((B, 2 * H)))
        steps = []
        for t in range(T):
            hc = ad.lstm_cell(xw[:, t], hc, Wh)
            steps.append(hc)
        x = ad.stack(steps, axis=1)[:, :, :H]
    return ad.log_softmax(x @ P["ph.W"] + P["ph.b"])


class PhoneCTCScorer:
    def __init__(self, cfg: PhoneScorerConfig, params=None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_phone_params(cfg, seed)

    def frame_log_probs(self, feat: FeatureSequence) -> np.ndarray:
        g = Graph(record=False)
        P = {k: g.constant(v) for k, v in self.params.items()}
        return phone_log_probs(P, self.cfg, feat.frames[None]).value[0]

    def loss(self, P, feats, lengths, phone_targets):
        logp = phone_log_probs(P, self.cfg, feats, lengths)
        return ctc_loss(logp, phone_targets, lengths, blank=0)
