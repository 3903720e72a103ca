"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``python3 tests/test_acceptance.py`` or ``pytest tests/test_acceptance.py -s``.
"""
import itertools
import math
import time
from functools import lru_cache

import numpy as np
import pytest
from scipy.special import logsumexp

from lasr import autodiff as ad
from lasr.config import ModelConfig
from lasr.decode import beam_search
from lasr.evaluation import levenshtein_words, relative_improvement
from lasr.frontend import FeatureSequence
from lasr.losses import CTCAlignmentError, ctc_lattice, ctc_min_frames, smoothed_targets
from lasr.model import EncoderStates, LASModel, attend, attention_memory, bind, encoded_length, init_params
from lasr.training import ss_prob


@pytest.fixture
def verdict(capsys):
    def report(name, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return report


# ------------------------------------------------------------ 1. oracles

def _collapse(path, blank):
    out, prev = [], None
    for k in path:
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return tuple(out)


@lru_cache(maxsize=None)
def _paths(U, C, blank):
    paths = np.array(list(itertools.product(range(C), repeat=U)))
    groups = {}
    for i, p in enumerate(paths):
        groups.setdefault(_collapse(p, blank), []).append(i)
    return paths, groups


def _ctc_worst_gap(n_cases=300, seed=0):
    rng = np.random.default_rng(seed)
    worst, checked = 0.0, 0
    for _ in range(n_cases):
        V = int(rng.integers(1, 5))
        C = V + 1
        U = int(rng.integers(1, 9))
        while C ** U > 400_000:
            U -= 1
        L = int(rng.integers(0, 4))
        z = rng.normal(scale=2.0, size=(U, C))
        logp = z - logsumexp(z, axis=1, keepdims=True)
        tgt = tuple(int(t) for t in rng.integers(0, V, size=L))
        paths, groups = _paths(U, C, V)
        idx = groups.get(tgt)
        if ctc_min_frames(tgt) > U:
            try:
                ctc_lattice(logp, list(tgt), V)
                return math.inf, checked
            except CTCAlignmentError:
                assert idx is None
                continue
        ref = logsumexp(logp[np.arange(U)[None], paths[idx]].sum(1))
        worst = max(worst, abs(ctc_lattice(logp, list(tgt), V).log_prob - ref))
        checked += 1
    return worst, checked


def test_c1_ctc_equals_path_enumeration(verdict):
    worst, n = _ctc_worst_gap()
    verdict("C1a ctc oracle", worst <= 1e-8, f"{n} cases with U<=8 V<=4 |y|<=3, max |dlogp|={worst:.2e}")


def _tiny_las(seed):
    cfg = ModelConfig(input_dim=3, vocab_size=5, enc_layers=1, compress_after=(), enc_hidden=3,
                      dec_layers=1, dec_hidden=4, attn_kind="content", attn_heads=1, head_size=3,
                      init_scale=1.0)
    return LASModel(cfg, seed=seed)


def test_c1_exhaustive_beam_is_global_argmax(verdict):
    max_len, agree, n = 4, 0, 12
    for seed in range(n):
        model = _tiny_las(seed)
        feat = FeatureSequence(np.random.default_rng(seed).normal(size=(6, 3)), 30.0)
        nb = beam_search(model, feat, beam=5 ** max_len, max_len=max_len)
        best = max((model.sequence_log_prob(feat, [0, *mid, 1]), [0, *mid, 1])
                   for k in range(max_len) for mid in itertools.product([2, 3, 4], repeat=k))
        agree += nb.best.tokens == best[1] and abs(nb.best.las_score - best[0]) <= 1e-9
    verdict("C1b exhaustive beam", agree == n, f"{agree}/{n} models match the brute-force argmax")


def _brute_edit(h, r):
    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(h):
            return len(r) - j
        if j == len(r):
            return len(h) - i
        return min(go(i + 1, j + 1) + (h[i] != r[j]), go(i + 1, j) + 1, go(i, j + 1) + 1)
    return go(0, 0)


def test_c1_edit_distance_brute_force(verdict):
    # every pair over a 2-word alphabet up to length 4, plus random pairs up to length 6
    seqs = [list(s) for n in range(5) for s in itertools.product("ab", repeat=n)]
    pairs = [(h, r) for h in seqs for r in seqs]
    rng = np.random.default_rng(0)
    for _ in range(2000):
        pairs.append((list(rng.choice(list("abc"), size=rng.integers(0, 7))),
                      list(rng.choice(list("abc"), size=rng.integers(0, 7)))))
    bad = sum(levenshtein_words(h, r).errors != _brute_edit(tuple(h), tuple(r)) for h, r in pairs)
    verdict("C1c edit distance", bad == 0, f"{len(pairs)} pairs, {bad} mismatches")


# ------------------------------------------------------- 2. gradient suite

def test_c2_gradient_suite(verdict):
    from lasr.gradsuite import run_suite
    t0 = time.time()
    reports = run_suite(0)
    dt = time.time() - t0
    worst = max(max(r.errors.values()) for r in reports.values())
    ok = all(r.passed for r in reports.values()) and worst < 1e-4 and dt < 120
    failed = [k for k, r in reports.items() if not r.passed]
    verdict("C2 finite differences", ok,
            f"{len(reports)} checks, max rel err {worst:.2e}, {dt:.0f}s, failed={failed}")


# ---------------------------------------------------- 3. analytic invariants

def test_c3_attention_rows_sum_to_one(verdict):
    worst = 0.0
    for kind, K in [("content", 1), ("multihead", 2), ("multihead", 4), ("location", 1), ("location", 2)]:
        cfg = ModelConfig(input_dim=3, vocab_size=6, enc_layers=1, compress_after=(), enc_hidden=4,
                          dec_layers=1, dec_hidden=5, attn_kind=kind, attn_heads=K, head_size=4,
                          loc_conv_channels=2, loc_conv_width=3)
        for seed in range(20):
            rng = np.random.default_rng(seed)
            g = ad.Graph(record=False)
            P = bind(init_params(cfg, seed), g, False)
            U = int(rng.integers(1, 30))
            lengths = rng.integers(1, U + 1, size=3)
            h = g.constant(rng.normal(scale=5.0, size=(3, U, cfg.enc_dim)))
            mem = attention_memory(P, cfg, EncoderStates(h, lengths))
            prev = g.constant(rng.dirichlet(np.ones(U), size=(3, K)))
            a = attend(P, cfg, g.constant(rng.normal(scale=5.0, size=(3, 5))), mem, prev).align.value
            worst = max(worst, float(np.abs(a.sum(-1) - 1).max()))
    verdict("C3a attention rows", worst <= 1e-9, f"max |sum-1| = {worst:.1e}")


def test_c3_smoothed_targets(verdict):
    worst_sum, floor_ok = 0.0, True
    for K in (2, 5, 40, 200):
        for eps in (0.0, 0.1, 0.3):
            q = smoothed_targets(np.arange(K) % K, K, eps)
            worst_sum = max(worst_sum, float(np.abs(q.sum(-1) - 1).max()))
            floor_ok &= bool(np.isclose(q.min(), eps / K, rtol=0, atol=1e-15))
    verdict("C3b smoothed targets", worst_sum <= 1e-12 and floor_ok,
            f"max |sum-1| = {worst_sum:.1e}, floor eps/K {'held' if floor_ok else 'violated'}")


def test_c3_ss_schedule(verdict):
    cfg = ModelConfig()
    got = {e: ss_prob(e, cfg) for e in (5, 25, 35, 50, 500)}
    ok = (got[5] == 0.0 and abs(got[25] - 0.10) < 1e-12
          and all(abs(got[e] - 0.30) < 1e-12 for e in (35, 50, 500)))
    verdict("C3c ss schedule", ok, ", ".join(f"{e}->{p:.2f}" for e, p in got.items()))


def test_c3_encoded_length(verdict):
    cfg = ModelConfig()
    bad = [T for T in range(1, 2001) if encoded_length(T, cfg) != math.ceil(math.ceil(T / 2) / 2)]
    verdict("C3d pyramid length", not bad, f"T=1..2000, mismatches={bad[:5]}")


# ---------------------------------------------------- 4. reported numbers

def test_c4_relative_improvement(verdict):
    a, b = relative_improvement(14.87, 9.37), relative_improvement(14.87, 11.12)
    verdict("C4 relative improvement", abs(a - 36.9) <= 0.1 and abs(b - 25.2) <= 0.1,
            f"{a:.2f}% and {b:.2f}%")


# ---------------------------------------------------------- 5. overfitting

def test_c5_tiny_las_overfits(verdict):
    from lasr.experiments import overfit
    r = overfit("ce", n_utts=20)
    verdict("C5a overfit CE", r.wer <= 5.0 and r.seconds < 600,
            f"WER {r.wer:.1f}% after {r.epochs} epochs, {r.seconds:.1f}s")


def test_c5_joint_ctc_converges(verdict):
    from lasr.experiments import overfit
    r = overfit("ce+ctc", n_utts=20)
    finite = bool(np.isfinite(r.losses).all())
    ok = finite and r.wer <= 5.0 and r.losses[-1] < 0.5 * r.losses[0] and r.seconds < 600
    verdict("C5b joint CTC (lambda 0.8)", ok,
            f"loss {r.losses[0]:.2f} -> {r.losses[-1]:.2f}, WER {r.wer:.1f}%, {r.seconds:.1f}s")


# ------------------------------------------------------------ 6. desk A/B

def test_c6_two_pass_beats_target_only(verdict):
    from lasr.experiments import two_pass_ab
    res = two_pass_ab()
    wins = sum(r.two_pass_wins for r in res)
    detail = "; ".join(f"seed {r.seed}: {r.two_pass_wer:.1f} vs {r.target_only_wer:.1f}" for r in res)
    verdict("C6a two-pass vs target-only", wins >= 3, f"{wins}/4 wins ({detail})")


def test_c6_grid_fusion_never_hurts_validation(verdict):
    from lasr.experiments import fusion_ab
    res = fusion_ab()
    ok = all(r.tuned_wer <= r.baseline_wer for r in res)
    detail = "; ".join(f"seed {r.seed}: a={r.weights.alpha:g} b={r.weights.beta:g} "
                       f"val {r.tuned_wer:.1f}<={r.baseline_wer:.1f} "
                       f"(test {r.test_tuned_wer:.1f} vs {r.test_baseline_wer:.1f})" for r in res)
    verdict("C6b grid fusion", ok, detail)


# --------------------------------------------------- 7. bit-exact artifacts

def test_c7_roundtrips_and_reproducible_decode(verdict, tmp_path):
    from lasr import synth
    from lasr.experiments import DESK_FRONTEND, desk_model
    from lasr.ngram import NGramLM, ngram_train
    from lasr.pipeline import examples_from_synth
    from lasr.training import OptimConfig, TrainState, load_model, prepare_features, save_model, train_epoch
    lm = ngram_train(synth.text_corpus(500, 1), order=4)
    arpa = lm.to_arpa()
    arpa_ok = NGramLM.from_arpa(arpa).to_arpa() == arpa

    fe = DESK_FRONTEND
    from lasr.experiments import desk_tokenizer
    tok = desk_tokenizer()
    data = examples_from_synth(synth.make_corpus(8, 2), fe, tok)
    state = TrainState.create(desk_model(tok.vocab_size), OptimConfig(lr=3e-3, batch_size=4), 0)
    train_epoch(state, data, "ce", fe)
    save_model(state.model, tmp_path / "a")
    again = load_model(tmp_path / "a")
    save_model(again, tmp_path / "b")
    ckpt_ok = (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def dec(m):
        out = []
        for ex in data:
            nb = beam_search(m, FeatureSequence(prepare_features(ex, fe, None), fe.hop_ms), beam=4,
                             tokenizer=tok)
            out.append([(h.tokens, h.las_score.hex()) for h in nb])
        return out
    dec_ok = dec(state.model) == dec(state.model) == dec(again)
    verdict("C7 bit-exact artifacts", arpa_ok and ckpt_ok and dec_ok,
            f"arpa={arpa_ok} checkpoint={ckpt_ok} decode={dec_ok}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:warnings"]))
