"""Listen-Attend-Spell network on top of :mod:`lasr.autodiff`.

Parameters live in a flat ``{name: ndarray}`` dict.  Every forward pass
binds them into a fresh :class:`~lasr.autodiff.Graph` (as leaves when
training, as constants for inference) and threads tensors through the
functions below.  Batches are batch-major: features (B, T, D), encoder
states (B, U, E).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .config import ModelConfig
from .frontend import FeatureSequence
from .tokenizer import EOS_ID, SOS_ID

MASK_NEG = -1e9


# ---------------------------------------------------------------- parameters

def _glorot(rng, fan_in, fan_out, shape=None):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))


def _lstm_params(rng, p, prefix, din, h):
    p[f"{prefix}.Wx"] = _glorot(rng, din, 4 * h)
    p[f"{prefix}.Wh"] = _glorot(rng, h, 4 * h)
    b = np.zeros(4 * h)
    b[h:2 * h] = 1.0  # forget gate
    p[f"{prefix}.b"] = b


def encoder_input_dims(cfg: ModelConfig) -> list[int]:
    dims = [cfg.input_dim]
    for layer in range(1, cfg.enc_layers):
        dims.append(cfg.enc_dim * (2 if layer in cfg.compress_after else 1))
    return dims


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    H, E = cfg.enc_hidden, cfg.enc_dim
    for layer, din in enumerate(encoder_input_dims(cfg), start=1):
        for d in ("f", "b"):
            _lstm_params(rng, p, f"enc{layer}.{d}", din, H)
        p[f"enc{layer}.ln.g"] = np.ones(E)
        p[f"enc{layer}.ln.b"] = np.zeros(E)

    V, S = cfg.vocab_size, cfg.dec_hidden
    p["ctc.W"] = _glorot(rng, E, V + 1)
    p["ctc.b"] = np.zeros(V + 1)

    p["emb"] = rng.normal(0.0, 1.0 / np.sqrt(S), size=(V, S))
    for layer in range(1, cfg.dec_layers + 1):
        din = S + cfg.context_dim if layer == 1 else S
        _lstm_params(rng, p, f"dec{layer}", din, S)
    p["dec.ln.g"] = np.ones(S)
    p["dec.ln.b"] = np.zeros(S)
    p["out.W"] = _glorot(rng, S + cfg.context_dim, V)
    p["out.b"] = np.zeros(V)

    K, A = cfg.attn_heads, cfg.head_size
    p["att.W1"] = _glorot(rng, S, K * A)
    p["att.W2"] = _glorot(rng, E, K * A)
    p["att.b"] = np.zeros(K * A)
    p["att.v"] = _glorot(rng, A, 1, shape=(K, A))
    if cfg.uses_projection:
        p["att.Z"] = _glorot(rng, E, A, shape=(K, E, A))
        p["att.Zb"] = np.zeros((K, A))
    if cfg.attn_kind == "location":
        C, W = cfg.loc_conv_channels, cfg.loc_conv_width
        p["att.F"] = _glorot(rng, W, C, shape=(C, W))
        p["att.W3"] = _glorot(rng, C, A, shape=(K, C, A))
    return p


def bind(params: dict, graph: Graph, trainable: bool = True) -> dict[str, Tensor]:
    if trainable:
        return {k: graph.leaf(v, k) for k, v in params.items()}
    return {k: graph.constant(v) for k, v in params.items()}


# ------------------------------------------------------------------ listener

@dataclass
class EncoderStates:
    states: Tensor          # (B, U, E)
    lengths: np.ndarray     # (B,)

    @property
    def mask(self) -> np.ndarray:
        U = self.states.shape[1]
        return (np.arange(U)[None, :] < self.lengths[:, None]).astype(np.float64)


def _bilstm(P, prefix, x: Tensor, mask: np.ndarray, padded: bool) -> Tensor:
    B, T, _ = x.shape
    outs = []
    for d in ("f", "b"):
        Wh = P[f"{prefix}.{d}.Wh"]
        H = Wh.shape[0]
        xw = x @ P[f"{prefix}.{d}.Wx"] + P[f"{prefix}.{d}.b"]
        hc = x.graph.constant(np.zeros((B, 2 * H)))
        steps: list = [None] * T
        order = range(T) if d == "f" else range(T - 1, -1, -1)
        for t in order:
            # forward direction never needs the mask: padding only trails
            m = mask[:, t] if (d == "b" and padded) else None
            hc = ad.lstm_cell(xw[:, t], hc, Wh, m)
            steps[t] = hc
        outs.append(ad.stack(steps, axis=1)[:, :, :H])
    return ad.concat(outs, axis=-1)


def listen(P, cfg: ModelConfig, feats, lengths=None, train: bool = False,
           rng: Optional[np.random.Generator] = None) -> EncoderStates:
    """Pyramidal BiLSTM encoder.

    ``feats`` is (B, T, D) (ndarray or Tensor).  After every layer listed in
    ``cfg.compress_after`` adjacent frames are concatenated, zero-padding an
    odd final frame, so U = ceil(T / 2) per compression.
    """
    g = next(iter(P.values())).graph
    x = feats if isinstance(feats, Tensor) else g.constant(np.asarray(feats, dtype=np.float64))
    if x.ndim != 3 or x.shape[1] == 0:
        raise ValueError(f"listen: expected non-empty (B, T, D) features, got shape {x.shape}")
    B, T, D = x.shape
    if D != cfg.input_dim:
        raise ad.ShapeError("listen", (B, T, D), (cfg.input_dim,))
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths, dtype=np.int64)
    if lengths.min() < 1:
        raise ValueError("listen: every utterance needs at least one frame")
    keep = 1.0 - cfg.dropout
    for layer in range(1, cfg.enc_layers + 1):
        T = x.shape[1]
        mask = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)
        padded = bool((lengths < T).any())
        y = _bilstm(P, f"enc{layer}", x, mask, padded)
        y = ad.layer_norm(y, P[f"enc{layer}.ln.g"], P[f"enc{layer}.ln.b"])
        if train:
            y = ad.dropout(y, keep, rng)
        if padded:
            y = y * mask[:, :, None]
        if layer in cfg.compress_after:
            if T % 2:
                y = ad.concat([y, np.zeros((B, 1, y.shape[2]))], axis=1)
                T += 1
            y = ad.reshape(y, (B, T // 2, 2 * y.shape[2]))
            lengths = (lengths + 1) // 2
        x = y
    return EncoderStates(x, lengths)


def encoded_length(T: int, cfg: ModelConfig) -> int:
    for _ in cfg.compress_after:
        T = (T + 1) // 2
    return T


# ----------------------------------------------------------------- attention

@dataclass
class AttentionMemory:
    keys: Tensor            # (B, U, K*A): W2 h_u + b
    values: Tensor          # (B, U, E) or (B, U, K, A) when projected
    mask_bias: np.ndarray   # (B, 1, U)


@dataclass
class AttentionOutput:
    context: Tensor         # (B, K*A) or (B, E)
    align: Tensor           # (B, K, U)
    energies: Tensor        # (B, K, U)


def attention_memory(P, cfg: ModelConfig, enc: EncoderStates) -> AttentionMemory:
    h = enc.states
    keys = h @ P["att.W2"] + P["att.b"]
    if cfg.uses_projection:
        values = ad.einsum("buh,kha->buka", h, P["att.Z"]) + P["att.Zb"]
    else:
        values = h
    bias = ((1.0 - enc.mask) * MASK_NEG)[:, None, :]
    return AttentionMemory(keys, values, bias)


def attend(P, cfg: ModelConfig, s: Tensor, mem: AttentionMemory,
           prev_align: Optional[Tensor] = None) -> AttentionOutput:
    """Bahdanau energies per head, softmax over encoder steps, context.

    Location attention adds ``W3 (F * prev_align)`` inside the tanh.
    """
    B, U, KA = mem.keys.shape
    K = cfg.attn_heads
    A = KA // K
    if s.shape != (B, P["att.W1"].shape[0]):
        raise ad.ShapeError("attend", s.shape, P["att.W1"].shape)
    pre = mem.keys + ad.reshape(s @ P["att.W1"], (B, 1, KA))
    if cfg.attn_kind == "location":
        if prev_align is None:
            raise ValueError("location attention needs the previous alignment")
        if prev_align.shape != (B, K, U):
            raise ad.ShapeError("attend", prev_align.shape, (B, K, U))
        f = ad.conv1d(prev_align, P["att.F"])                       # (B, K, U, C)
        loc = ad.einsum("bkuc,kca->buka", f, P["att.W3"])
        pre = pre + ad.reshape(loc, (B, U, KA))
    e = ad.reshape(ad.tanh(pre), (B, U, K, A))
    energies = ad.einsum("buka,ka->bku", e, P["att.v"])
    align = ad.softmax(energies + mem.mask_bias, axis=-1)
    if cfg.uses_projection:
        ctx = ad.reshape(ad.einsum("bku,buka->bka", align, mem.values), (B, K * A))
    else:
        ctx = ad.reshape(ad.einsum("bku,buh->bkh", align, mem.values), (B, mem.values.shape[2]))
    return AttentionOutput(ctx, align, energies)


# ------------------------------------------------------------------- speller

@dataclass
class DecoderState:
    hcs: list               # per layer (B, 2*dec_hidden) = [h, c]
    context: Tensor         # c_{i-1}
    align: Tensor           # alpha_{i-1}, (B, K, U)


def initial_state(P, cfg: ModelConfig, mem: AttentionMemory) -> DecoderState:
    g = mem.keys.graph
    B, U, _ = mem.keys.shape
    S = cfg.dec_hidden
    hcs = [g.constant(np.zeros((B, 2 * S))) for _ in range(cfg.dec_layers)]
    ctx = g.constant(np.zeros((B, cfg.context_dim)))
    align = np.zeros((B, cfg.attn_heads, U))
    align[:, :, 0] = 1.0
    return DecoderState(hcs, ctx, g.constant(align))


def spell_step(P, cfg: ModelConfig, state: DecoderState, y_prev, mem: AttentionMemory,
               train: bool = False, rng: Optional[np.random.Generator] = None):
    """One decoder step.  Returns ``(new_state, log_probs)`` with log_probs
    of shape (B, V)."""
    y_prev = np.asarray(y_prev, dtype=np.int64)
    V = cfg.vocab_size
    if y_prev.size and (y_prev.min() < 0 or y_prev.max() >= V):
        raise ValueError(f"spell_step: token id out of range [0, {V})")
    x = ad.concat([ad.embed(P["emb"], y_prev), state.context], axis=-1)
    hcs = []
    for layer in range(1, cfg.dec_layers + 1):
        Wh = P[f"dec{layer}.Wh"]
        H = Wh.shape[0]
        hc = ad.lstm_cell(x @ P[f"dec{layer}.Wx"] + P[f"dec{layer}.b"], state.hcs[layer - 1], Wh)
        hcs.append(hc)
        x = hc[:, :H]
    att = attend(P, cfg, x, mem, state.align)
    o = ad.layer_norm(x, P["dec.ln.g"], P["dec.ln.b"])
    if train:
        o = ad.dropout(o, 1.0 - cfg.dropout, rng)
    logits = ad.concat([o, att.context], axis=-1) @ P["out.W"] + P["out.b"]
    return DecoderState(hcs, att.context, att.align), ad.log_softmax(logits)


def check_targets(targets: np.ndarray, lengths: np.ndarray):
    for b, (row, n) in enumerate(zip(targets, lengths)):
        row = row[:n]
        if n < 2 or row[0] != SOS_ID or row[-1] != EOS_ID or (row[1:-1] == EOS_ID).any() \
                or (row[1:] == SOS_ID).any():
            raise ValueError(f"target {b} must be <sos> ... <eos> with a single <eos>")


def forward_teacher(P, cfg: ModelConfig, enc: EncoderStates, targets, target_lengths=None,
                    ss_prob: float = 0.0, rng: Optional[np.random.Generator] = None,
                    train: bool = False, dropout_rng: Optional[np.random.Generator] = None):
    """Teacher-forced decoder pass with scheduled sampling.

    ``targets`` is (B, L) ``<sos> y_1 .. y_n <eos>`` padded after ``<eos>``.
    At each step after the first, every row independently feeds the argmax
    of its previous prediction with probability ``ss_prob``.

    Returns ``(log_probs, sampled)``: log_probs (B, L-1, V) predicting
    ``targets[:, 1:]`` and a (B, L-1) boolean record of sampled inputs.
    """
    targets = np.asarray(targets, dtype=np.int64)
    B, L = targets.shape
    target_lengths = np.full(B, L) if target_lengths is None else np.asarray(target_lengths)
    check_targets(targets, target_lengths)
    if not 0.0 <= ss_prob <= 1.0:
        raise ValueError("ss_prob must lie in [0, 1]")
    if ss_prob > 0 and rng is None:
        raise ValueError("scheduled sampling needs an rng")
    mem = attention_memory(P, cfg, enc)
    state = initial_state(P, cfg, mem)
    sampled = np.zeros((B, L - 1), dtype=bool)
    outs = []
    y_in = targets[:, 0]
    for i in range(L - 1):
        state, logp = spell_step(P, cfg, state, y_in, mem, train=train, rng=dropout_rng)
        outs.append(logp)
        if i + 1 < L - 1:
            y_in = targets[:, i + 1].copy()
            if ss_prob > 0:
                pick = rng.random(B) < ss_prob
                sampled[:, i + 1] = pick
                y_in[pick] = logp.value[pick].argmax(axis=-1)
    return ad.stack(outs, axis=1), sampled


def ctc_log_probs(P, enc: EncoderStates) -> Tensor:
    """Frame-level log posteriors of the auxiliary CTC head, (B, U, V+1);
    the last class is the blank."""
    return ad.log_softmax(enc.states @ P["ctc.W"] + P["ctc.b"])


# ------------------------------------------------------------ model wrapper

class LASModel:
    """Config plus parameter arrays."""

    def __init__(self, cfg: ModelConfig, params: Optional[dict] = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    def graph(self, trainable: bool = False):
        g = Graph(record=trainable)
        return g, bind(self.params, g, trainable)

    def listen(self, feat: FeatureSequence, mode: str = "infer",
               rng: Optional[np.random.Generator] = None) -> EncoderStates:
        if mode not in ("train", "infer"):
            raise ValueError("mode must be 'train' or 'infer'")
        if len(feat) == 0:
            raise ValueError("listen: empty features")
        _, P = self.graph(trainable=False)
        return listen(P, self.cfg, feat.frames[None], train=mode == "train", rng=rng)

    def sequence_log_prob(self, feat: FeatureSequence, token_ids) -> float:
        """log P(y | X) summed over the teacher-forced per-step log-probs."""
        _, P = self.graph(trainable=False)
        enc = listen(P, self.cfg, feat.frames[None])
        tgt = np.asarray(token_ids)[None]
        logp, _ = forward_teacher(P, self.cfg, enc, tgt)
        lp = logp.value[0]
        return float(lp[np.arange(lp.shape[0]), tgt[0, 1:]].sum())
