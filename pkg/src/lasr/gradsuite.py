"""Finite-difference checks for every trainable component on tiny shapes."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .config import ModelConfig
from .losses import ce_smoothed, ctc_loss, joint_loss, mwer_loss
from .model import (attend, attention_memory, forward_teacher, init_params, listen,
                    EncoderStates)

STEP = 1e-5
TOL = 1e-4


def tiny_config(kind: str = "content", heads: int = 1) -> ModelConfig:
    # T=8 frames -> U=2 after two pyramid stages
    return ModelConfig(input_dim=3, vocab_size=6, enc_layers=3, compress_after=(1, 2), enc_hidden=2,
                       dec_layers=2, dec_hidden=4, attn_kind=kind, attn_heads=heads, head_size=3,
                       loc_conv_channels=2, loc_conv_width=3, dropout=0.3)


def _proj(y):
    # fixed non-uniform readout so every output coordinate matters
    w = np.sin(np.arange(y.value.size) + 1.0).reshape(y.shape)
    return ad.sum(y * w)


def _sub(params, prefixes):
    return {k: v for k, v in params.items() if k.startswith(prefixes)}


def run_suite(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    out = {}
    X = rng.normal(size=(2, 8, 3))
    lengths = np.array([8, 7])

    # listener with pyramid, both padded and dropout-active
    cfg = tiny_config()
    p = init_params(cfg, seed)
    enc_p = _sub(p, ("enc",))
    enc_p["X"] = X

    def f_listen(g, t):
        P = dict(t)
        enc = listen(P, cfg, t["X"], lengths, train=True, rng=np.random.default_rng(1))
        return _proj(enc.states)
    out["listener"] = ad.grad_check(f_listen, enc_p, STEP, TOL)

    H = rng.normal(size=(2, 2, cfg.enc_dim))
    for kind, heads in (("content", 1), ("multihead", 2), ("location", 2)):
        c = tiny_config(kind, heads)
        pa = _sub(init_params(c, seed), ("att.",))
        pa["h"] = H
        pa["s"] = rng.normal(size=(2, c.dec_hidden))
        prev = rng.dirichlet(np.ones(2), size=(2, heads))

        def f_att(g, t, c=c, prev=prev):
            enc = EncoderStates(t["h"], np.array([2, 1]))
            mem = attention_memory(t, c, enc)
            a = attend(t, c, t["s"], mem, g.constant(prev))
            return _proj(a.context) + _proj(a.align)
        out[f"attention.{kind}"] = ad.grad_check(f_att, pa, STEP, TOL)

    tgt = np.array([[0, 3, 4, 5, 1], [0, 4, 1, 1, 1]])
    tlens = np.array([5, 3])
    mask = (np.arange(4)[None] < (tlens[:, None] - 1)).astype(float)

    for kind, heads in (("content", 1), ("location", 2)):
        c = tiny_config(kind, heads)
        ps = init_params(c, seed)

        def f_full(g, P, c=c):
            enc = listen(P, c, X, lengths)
            lp, _ = forward_teacher(P, c, enc, tgt, tlens)
            return ce_smoothed(lp, tgt[:, 1:], 0.1, mask)
        out[f"speller+listener.{kind}"] = ad.grad_check(f_full, ps, STEP, TOL)

    logits = {"z": rng.normal(size=(3, 4, 5))}
    tg = rng.integers(0, 5, size=(3, 4))
    out["ce_smoothed"] = ad.grad_check(lambda g, t: ce_smoothed(t["z"], tg, 0.1), logits, STEP, TOL)

    ctc_in = {"z": rng.normal(size=(2, 6, 4))}
    ctc_t = [[0, 1, 1], [2]]
    out["ctc"] = ad.grad_check(lambda g, t: ctc_loss(t["z"], ctc_t, np.array([6, 4])), ctc_in,
                               STEP, TOL)

    mw = {"lp": rng.normal(size=5) * 2}
    errs = [0, 2, 1, 3, 1]
    out["mwer"] = ad.grad_check(lambda g, t: mwer_loss(t["lp"], errs), mw, STEP, TOL)

    cj = tiny_config()
    pj = init_params(cj, seed)

    def f_joint(g, P):
        enc = listen(P, cj, X, lengths)
        lp, _ = forward_teacher(P, cj, enc, tgt, tlens)
        ce = ce_smoothed(lp, tgt[:, 1:], 0.1, mask)
        ctc = ctc_loss(enc.states @ P["ctc.W"] + P["ctc.b"], [[3], [4]], enc.lengths)
        return joint_loss(ce, ctc, 0.8)
    out["joint"] = ad.grad_check(f_joint, pj, STEP, TOL)
    return out
