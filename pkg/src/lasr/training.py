"""Optimisation loop, scheduled sampling, multi-pass plans, checkpoints."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .config import FrontendConfig, ModelConfig, OptimConfig, PassSpec
from .decode import beam_search, greedy_decode
from .evaluation import corpus_wer, word_errors
from .frontend import AugmentPolicy, FeatureSequence, spec_augment, stack_frames
from .losses import ce_smoothed, ctc_loss, joint_loss, mwer_loss, mwer_objective
from .model import EncoderStates, LASModel, bind, ctc_log_probs, forward_teacher, listen
from .tokenizer import EOS_ID, SubwordModel

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class Example:
    id: str
    feats: np.ndarray           # (T, n_mels), before stacking
    tokens: list                # <sos> ... <eos>
    text: str = ""
    phones: Optional[list] = None
    split: Optional[str] = None


def ss_prob(epoch: int, cfg: ModelConfig) -> float:
    """Scheduled-sampling probability: linear ramp from ``ss_start_epoch``
    at ``ss_rate`` per epoch, capped at ``ss_max``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return float(min(max(cfg.ss_rate * (epoch - cfg.ss_start_epoch), 0.0), cfg.ss_max))


# --------------------------------------------------------------- optimiser

class Adam:
    def __init__(self, cfg: OptimConfig):
        self.cfg = cfg
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> float:
        """In-place update with global-norm clipping; returns the pre-clip norm."""
        c = self.cfg
        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        factor = c.clip_norm / norm if c.clip_norm and norm > c.clip_norm else 1.0
        self.t += 1
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        for k in sorted(params):
            g = grads[k] * factor
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            params[k] = params[k] - c.lr * (m / b1t) / (np.sqrt(v / b2t) + c.eps)
        return norm


# ------------------------------------------------------------------- state

@dataclass
class TrainState:
    model: LASModel
    optim: Adam
    rng: np.random.Generator
    epoch: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, cfg: ModelConfig, optim: OptimConfig, seed: int) -> "TrainState":
        return cls(LASModel(cfg, seed=seed), Adam(optim), np.random.default_rng(seed))


def save_train_state(state: TrainState, path):
    arrays = dict(state.model.params)
    for k, v in state.optim.m.items():
        arrays[f"adam.m/{k}"] = v
    for k, v in state.optim.v.items():
        arrays[f"adam.v/{k}"] = v
    meta = {
        "epoch": state.epoch,
        "adam_t": state.optim.t,
        "optim": vars(state.optim.cfg),
        "rng": state.rng.bit_generator.state,
    }
    ckpt.save(path, arrays, state.model.cfg.to_dict(), "train_state", meta)


def load_train_state(path, expect: Optional[ModelConfig] = None) -> TrainState:
    arrays, config, kind, meta = ckpt.load(path)
    if kind != "train_state":
        raise ckpt.CheckpointError(f"expected a train_state checkpoint, got {kind!r}")
    if expect is not None:
        ckpt.check_config(config, expect.to_dict())
    cfg = ModelConfig.from_dict(config)
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    opt = Adam(OptimConfig(**meta["optim"]))
    opt.t = meta["adam_t"]
    opt.m = {k[len("adam.m/"):]: v for k, v in arrays.items() if k.startswith("adam.m/")}
    opt.v = {k[len("adam.v/"):]: v for k, v in arrays.items() if k.startswith("adam.v/")}
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    return TrainState(LASModel(cfg, params), opt, rng, meta["epoch"])


def save_model(model: LASModel, path, meta: Optional[dict] = None):
    ckpt.save(path, model.params, model.cfg.to_dict(), "las", meta)


def load_model(path, expect: Optional[ModelConfig] = None) -> LASModel:
    arrays, config, kind, _ = ckpt.load(path)
    if kind not in ("las", "train_state"):
        raise ckpt.CheckpointError(f"not a model checkpoint: {kind!r}")
    if expect is not None:
        ckpt.check_config(config, expect.to_dict())
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    return LASModel(ModelConfig.from_dict(config), params)


# ----------------------------------------------------------------- batching

def make_batches(n_items: int, lengths: Sequence[int], batch_size: int,
                 rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle, bucket by length (ties stay shuffled), shuffle batch order."""
    perm = rng.permutation(n_items)
    perm = perm[np.argsort(np.asarray(lengths)[perm], kind="stable")]
    batches = [perm[i:i + batch_size] for i in range(0, n_items, batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def prepare_features(ex: Example, fe: FrontendConfig, rng: Optional[np.random.Generator]) -> np.ndarray:
    feat = FeatureSequence(ex.feats, fe.hop_ms)
    if rng is not None and fe.augment:
        pol = AugmentPolicy(fe.freq_mask, fe.time_mask, fe.masks_per_axis)
        feat = spec_augment(feat, pol, rng)
    return stack_frames(feat, fe.stack).frames


def collate(examples: Sequence[Example], fe: FrontendConfig, rng=None):
    feats = [prepare_features(ex, fe, rng) for ex in examples]
    T = max(f.shape[0] for f in feats)
    D = feats[0].shape[1]
    x = np.zeros((len(feats), T, D))
    for i, f in enumerate(feats):
        x[i, :f.shape[0]] = f
    lengths = np.array([f.shape[0] for f in feats])
    L = max(len(ex.tokens) for ex in examples)
    tgt = np.full((len(examples), L), EOS_ID, dtype=np.int64)
    for i, ex in enumerate(examples):
        tgt[i, :len(ex.tokens)] = ex.tokens
    tlens = np.array([len(ex.tokens) for ex in examples])
    return x, lengths, tgt, tlens


def step_mask(tlens: np.ndarray, L: int) -> np.ndarray:
    """(B, L-1) mask over predicted positions."""
    return (np.arange(L - 1)[None, :] < (tlens[:, None] - 1)).astype(np.float64)


# ---------------------------------------------------------------- objective

def _nbest_term(P, cfg: ModelConfig, model: LASModel, enc: EncoderStates, b: int,
                ex: Example, fe: FrontendConfig, tokenizer: SubwordModel, feats_b):
    nb = beam_search(model, FeatureSequence(feats_b, fe.hop_ms), beam=cfg.mwer_nbest,
                     max_len=max(len(ex.tokens) + 4, 4), tokenizer=tokenizer)
    hyps = []
    seen = set()
    for h in nb:
        if h.complete and tuple(h.tokens) not in seen:
            seen.add(tuple(h.tokens))
            hyps.append(h)
    if len(hyps) < 2:
        return None
    N = len(hyps)
    L = max(len(h.tokens) for h in hyps)
    tgt = np.full((N, L), EOS_ID, dtype=np.int64)
    for i, h in enumerate(hyps):
        tgt[i, :len(h.tokens)] = h.tokens
    tlens = np.array([len(h.tokens) for h in hyps])
    idx = np.full(N, b)
    sub = EncoderStates(enc.states[idx], enc.lengths[idx])
    logp, _ = forward_teacher(P, cfg, sub, tgt, tlens)
    onehot = np.zeros(logp.shape)
    np.put_along_axis(onehot, tgt[:, 1:, None], 1.0, axis=-1)
    onehot *= step_mask(tlens, L)[:, :, None]
    seq = ad.sum(ad.sum(logp * onehot, axis=-1), axis=-1)
    errs = [word_errors(h.text, ex.text) for h in hyps]
    return mwer_loss(seq, errs)


def batch_loss(P, model: LASModel, batch: Sequence[Example], objective: str, fe: FrontendConfig,
               rng: np.random.Generator, ss: float, tokenizer: Optional[SubwordModel] = None,
               train: bool = True):
    cfg = model.cfg
    x, lengths, tgt, tlens = collate(batch, fe, rng if train else None)
    enc = listen(P, cfg, x, lengths, train=train, rng=rng)
    logp, _ = forward_teacher(P, cfg, enc, tgt, tlens, ss_prob=ss, rng=rng, train=train,
                              dropout_rng=rng)
    ce = ce_smoothed(logp, tgt[:, 1:], cfg.label_smooth, step_mask(tlens, tgt.shape[1]))
    if objective == "ce":
        return ce
    if objective == "ce+ctc":
        ctc = ctc_loss(enc.states @ P["ctc.W"] + P["ctc.b"],
                       [list(ex.tokens[1:-1]) for ex in batch], enc.lengths, blank=-1)
        return joint_loss(ce, ctc, cfg.joint_lambda)
    if objective == "ce+mwer":
        if tokenizer is None:
            raise ValueError("MWER training needs the tokenizer to score word errors")
        terms = []
        for b, ex in enumerate(batch):
            t = _nbest_term(P, cfg, model, enc, b, ex, fe, tokenizer, x[b, :lengths[b]])
            if t is not None:
                terms.append(t)
        if not terms:
            return ce
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return mwer_objective(ce, ad.scale(total, 1.0 / len(batch)), cfg.mwer_lambda)
    raise ValueError(f"unknown objective {objective!r}")


def train_epoch(state: TrainState, dataset: Sequence[Example], objective: str = "ce",
                fe: Optional[FrontendConfig] = None, tokenizer: Optional[SubwordModel] = None,
                batch_size: Optional[int] = None) -> TrainState:
    """One shuffled pass over ``dataset``; updates ``state`` in place."""
    if not dataset:
        raise TrainingError("empty dataset")
    fe = fe or FrontendConfig()
    bs = batch_size or state.optim.cfg.batch_size
    model = state.model
    ss = ss_prob(state.epoch, model.cfg)
    batches = make_batches(len(dataset), [ex.feats.shape[0] for ex in dataset], bs, state.rng)
    losses = []
    for bi, idx in enumerate(batches):
        g = ad.Graph()
        P = bind(model.params, g)
        try:
            loss = batch_loss(P, model, [dataset[i] for i in idx], objective, fe, state.rng, ss,
                              tokenizer)
        except ad.NonFiniteError as e:
            raise TrainingError(f"non-finite value in batch {bi} (epoch {state.epoch}): {e}") from e
        val = float(loss.value)
        if not np.isfinite(val):
            raise TrainingError(f"non-finite loss in batch {bi} (epoch {state.epoch})")
        grads = ad.backward(g, loss)
        state.optim.step(model.params, grads)
        losses.append(val)
    state.epoch += 1
    rec = {"epoch": state.epoch, "loss": float(np.mean(losses)), "ss_prob": ss,
           "objective": objective}
    state.history.append(rec)
    return state


# --------------------------------------------------------------- evaluation

def decode_texts(model: LASModel, dataset: Sequence[Example], tokenizer: SubwordModel,
                 fe: Optional[FrontendConfig] = None, beam: int = 1) -> list[str]:
    fe = fe or FrontendConfig()
    out = []
    for ex in dataset:
        feat = FeatureSequence(prepare_features(ex, fe, None), fe.hop_ms)
        max_len = model.cfg.max_decode_len
        if beam == 1:
            toks = greedy_decode(model, feat, max_len)
        else:
            toks = beam_search(model, feat, beam=beam, max_len=max_len).best.tokens
        out.append(tokenizer.decode(toks))
    return out


def dataset_wer(model, dataset, tokenizer, fe=None, beam: int = 1) -> float:
    hyps = decode_texts(model, dataset, tokenizer, fe, beam)
    return corpus_wer(hyps, [ex.text for ex in dataset])


def token_accuracy(model: LASModel, dataset: Sequence[Example], fe: Optional[FrontendConfig] = None,
                   batch_size: int = 16) -> float:
    """Teacher-forced argmax accuracy over all predicted positions."""
    fe = fe or FrontendConfig()
    hit = tot = 0
    for i in range(0, len(dataset), batch_size):
        batch = dataset[i:i + batch_size]
        g, P = model.graph(trainable=False)
        x, lengths, tgt, tlens = collate(batch, fe)
        enc = listen(P, model.cfg, x, lengths)
        logp, _ = forward_teacher(P, model.cfg, enc, tgt, tlens)
        mask = step_mask(tlens, tgt.shape[1]).astype(bool)
        pred = logp.value.argmax(-1)
        hit += int((pred == tgt[:, 1:])[mask].sum())
        tot += int(mask.sum())
    return hit / tot


# -------------------------------------------------------------------- plans

@dataclass
class TrainingPlan:
    passes: list                                  # PassSpec
    seed: int = 42
    optim: OptimConfig = field(default_factory=OptimConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)

    def validate(self, datasets: dict):
        if not self.passes:
            raise ValueError("training plan has no passes")
        for i, p in enumerate(self.passes):
            for name in p.datasets:
                if name not in datasets:
                    raise KeyError(f"pass {i + 1}: dataset {name!r} not found")


def run_plan(plan: TrainingPlan, cfg: ModelConfig, datasets: dict, validation=None,
             tokenizer: Optional[SubwordModel] = None, log_path=None,
             state: Optional[TrainState] = None):
    """Execute passes in order, carrying parameters over.

    Returns ``(state, metrics)`` where metrics has one entry per pass with
    its mean final-epoch loss and (when ``validation`` is given) WER.
    """
    plan.validate(datasets)
    state = state or TrainState.create(cfg, plan.optim, plan.seed)
    metrics = []
    for pi, p in enumerate(plan.passes, start=1):
        data = [ex for name in p.datasets for ex in datasets[name]]
        for _ in range(p.epochs):
            train_epoch(state, data, p.objective, plan.frontend, tokenizer)
            rec = dict(state.history[-1], **{"pass": pi})
            log.info("pass %d epoch %d loss %.4f", pi, rec["epoch"], rec["loss"])
            if log_path is not None:
                with open(log_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        m = {"pass": pi, "epochs": p.epochs, "objective": p.objective,
             "loss": state.history[-1]["loss"] if p.epochs and state.history else None}
        if validation is not None and tokenizer is not None:
            m["wer"] = dataset_wer(state.model, validation, tokenizer, plan.frontend)
        metrics.append(m)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"pass_summary": m}, sort_keys=True) + "\n")
    return state, metrics


# ------------------------------------------------------- phone CTC scorer

def train_phone_scorer(scorer, dataset: Sequence[Example], epochs: int, optim: OptimConfig,
                       fe: Optional[FrontendConfig] = None, seed: int = 0):
    fe = fe or FrontendConfig()
    rng = np.random.default_rng(seed)
    opt = Adam(optim)
    history = []
    for _ in range(epochs):
        batches = make_batches(len(dataset), [ex.feats.shape[0] for ex in dataset],
                               optim.batch_size, rng)
        losses = []
        for idx in batches:
            batch = [dataset[i] for i in idx]
            x, lengths, _, _ = collate(batch, fe, rng)
            g = ad.Graph()
            P = bind(scorer.params, g)
            loss = scorer.loss(P, x, lengths, [ex.phones for ex in batch])
            ad.backward(g, loss)
            opt.step(scorer.params, {k: t.grad for k, t in P.items()})
            losses.append(float(loss.value))
        history.append(float(np.mean(losses)))
    return history


def save_phone_scorer(scorer, path):
    ckpt.save(path, scorer.params, scorer.cfg.to_dict(), "phone_ctc")


def load_phone_scorer(path):
    from .phone_ctc import PhoneCTCScorer, PhoneScorerConfig
    arrays, config, kind, _ = ckpt.load(path)
    if kind != "phone_ctc":
        raise ckpt.CheckpointError(f"not a phone scorer checkpoint: {kind!r}")
    return PhoneCTCScorer(PhoneScorerConfig(**config), arrays)
