import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lasr import checkpoint as ckpt
from lasr.config import FrontendConfig, ModelConfig, OptimConfig, PassSpec, load_config
from lasr.training import (Adam, Example, TrainingError, TrainingPlan, TrainState, load_model,
                           load_train_state, make_batches, run_plan, save_model, save_train_state,
                           ss_prob, step_mask, train_epoch)

FE = FrontendConfig(n_mels=4, stack=1, freq_mask=1, time_mask=2)


def tiny_cfg(**kw):
    base = dict(input_dim=4, vocab_size=6, enc_layers=2, compress_after=(1,), enc_hidden=3,
                dec_layers=1, dec_hidden=4, attn_kind="content", attn_heads=1, head_size=3,
                dropout=0.1)
    base.update(kw)
    return ModelConfig(**base)


def toy_data(n=6, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        L = int(rng.integers(1, 3))
        toks = [0, *rng.integers(2, 6, size=L).tolist(), 1]
        out.append(Example(f"u{i}", rng.normal(size=(int(rng.integers(6, 10)), 4)), toks))
    return out


# -------------------------------------------------------------- schedules

@pytest.mark.parametrize("epoch,p", [(0, 0.0), (5, 0.0), (20, 0.0), (25, 0.10), (30, 0.2),
                                     (35, 0.30), (36, 0.30), (100, 0.30)])
def test_ss_prob_schedule(epoch, p):
    assert ss_prob(epoch, ModelConfig()) == pytest.approx(p, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 200), st.integers(0, 200))
def test_ss_prob_monotone_and_bounded(a, b):
    cfg = ModelConfig()
    lo, hi = sorted((a, b))
    assert 0.0 <= ss_prob(lo, cfg) <= ss_prob(hi, cfg) <= cfg.ss_max


def test_ss_prob_rejects_negative_epoch():
    with pytest.raises(ValueError):
        ss_prob(-1, ModelConfig())


# -------------------------------------------------------------- optimiser

def test_adam_first_step_moves_by_lr_sign():
    opt = Adam(OptimConfig(lr=0.1, clip_norm=0.0))
    p = {"w": np.array([1.0, -2.0, 3.0])}
    opt.step(p, {"w": np.array([0.5, -4.0, 0.0])})
    assert np.allclose(p["w"], [0.9, -1.9, 3.0], atol=1e-6)


def test_adam_clips_global_norm():
    clipped = Adam(OptimConfig(lr=0.1, clip_norm=5.0))
    manual = Adam(OptimConfig(lr=0.1, clip_norm=0.0))
    g = {"a": np.array([30.0, 40.0]), "b": np.array([0.0])}        # norm 50
    pa, pb = {"a": np.zeros(2), "b": np.zeros(1)}, {"a": np.zeros(2), "b": np.zeros(1)}
    assert clipped.step(pa, g) == pytest.approx(50.0)
    manual.step(pb, {k: v / 10 for k, v in g.items()})
    for _ in range(3):
        clipped.step(pa, g)
        manual.step(pb, {k: v / 10 for k, v in g.items()})
    assert all(np.allclose(pa[k], pb[k], atol=1e-12) for k in pa)


def test_default_clip_is_five():
    assert OptimConfig().clip_norm == 5.0


# --------------------------------------------------------------- batching

def test_make_batches_is_a_partition():
    rng = np.random.default_rng(0)
    lens = rng.integers(1, 50, size=23)
    batches = make_batches(23, lens, 4, rng)
    flat = np.concatenate(batches)
    assert sorted(flat.tolist()) == list(range(23))
    assert all(len(b) <= 4 for b in batches)


def test_step_mask():
    m = step_mask(np.array([3, 5]), 5)
    assert np.array_equal(m, [[1, 1, 0, 0], [1, 1, 1, 1]])


# ------------------------------------------------------------ checkpoints

def test_model_checkpoint_bytes_roundtrip(tmp_path):
    st_ = TrainState.create(tiny_cfg(), OptimConfig(lr=1e-2, batch_size=2), 0)
    train_epoch(st_, toy_data(), "ce", FE)
    save_model(st_.model, tmp_path / "a.ckpt", {"note": "x"})
    m = load_model(tmp_path / "a.ckpt")
    save_model(m, tmp_path / "b.ckpt", {"note": "x"})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    for k, v in st_.model.params.items():
        assert np.array_equal(v, m.params[k])


def test_train_state_roundtrip_bytes(tmp_path):
    st_ = TrainState.create(tiny_cfg(), OptimConfig(lr=1e-2, batch_size=2), 1)
    train_epoch(st_, toy_data(), "ce", FE)
    save_train_state(st_, tmp_path / "s1")
    save_train_state(load_train_state(tmp_path / "s1"), tmp_path / "s2")
    assert (tmp_path / "s1").read_bytes() == (tmp_path / "s2").read_bytes()


@pytest.mark.parametrize("objective", ["ce", "ce+ctc"])
def test_resume_equals_continuous(tmp_path, objective):
    data = toy_data(8, 2)
    optim = OptimConfig(lr=1e-2, batch_size=3)
    cont = TrainState.create(tiny_cfg(), optim, 7)
    for _ in range(4):
        train_epoch(cont, data, objective, FE)
    part = TrainState.create(tiny_cfg(), optim, 7)
    for _ in range(2):
        train_epoch(part, data, objective, FE)
    save_train_state(part, tmp_path / "mid")
    resumed = load_train_state(tmp_path / "mid", expect=tiny_cfg())
    assert resumed.epoch == 2
    for _ in range(2):
        train_epoch(resumed, data, objective, FE)
    for k in cont.model.params:
        assert np.array_equal(cont.model.params[k], resumed.model.params[k]), k


def test_config_mismatch_names_field(tmp_path):
    save_model(TrainState.create(tiny_cfg(), OptimConfig(), 0).model, tmp_path / "m")
    with pytest.raises(ckpt.CheckpointError, match="vocab_size"):
        load_model(tmp_path / "m", expect=tiny_cfg(vocab_size=9))


def test_corrupt_checkpoint_detected(tmp_path):
    save_model(TrainState.create(tiny_cfg(), OptimConfig(), 0).model, tmp_path / "m")
    data = bytearray((tmp_path / "m").read_bytes())
    data[-3] ^= 0xFF
    (tmp_path / "m").write_bytes(bytes(data))
    with pytest.raises(ckpt.CheckpointError, match="checksum"):
        load_model(tmp_path / "m")
    (tmp_path / "n").write_bytes(b"garbage")
    with pytest.raises(ckpt.CheckpointError):
        load_model(tmp_path / "n")


def test_atomic_write_leaves_no_temp(tmp_path):
    ckpt.atomic_write_text(tmp_path / "x.txt", "hello")
    ckpt.atomic_write_text(tmp_path / "x.txt", "world")
    assert (tmp_path / "x.txt").read_text() == "world"
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


# ---------------------------------------------------------------- training

def test_nonfinite_loss_raises():
    st_ = TrainState.create(tiny_cfg(), OptimConfig(), 0)
    k = sorted(st_.model.params)[0]
    st_.model.params[k] = np.full_like(st_.model.params[k], np.nan)
    with pytest.raises(TrainingError):
        train_epoch(st_, toy_data(), "ce", FE)


def test_empty_dataset_raises():
    with pytest.raises(TrainingError):
        train_epoch(TrainState.create(tiny_cfg(), OptimConfig(), 0), [], "ce", FE)


def test_training_reduces_loss():
    st_ = TrainState.create(tiny_cfg(dropout=0.0), OptimConfig(lr=2e-2, batch_size=6), 0)
    data = toy_data(6, 5)
    fe = FrontendConfig(n_mels=4, stack=1, augment=False)
    for _ in range(30):
        train_epoch(st_, data, "ce", fe)
    assert st_.history[-1]["loss"] < 0.6 * st_.history[0]["loss"]


def test_plan_checks_datasets_before_training():
    plan = TrainingPlan([PassSpec(["clean"], 1), PassSpec(["missing"], 1)], optim=OptimConfig())
    called = []
    with pytest.raises(KeyError, match="missing"):
        run_plan(plan, tiny_cfg(), {"clean": toy_data()}, state=_Spy(called))
    assert not called
    with pytest.raises(ValueError):
        run_plan(TrainingPlan([]), tiny_cfg(), {})


class _Spy:
    def __init__(self, calls):
        self.calls = calls

    def __getattr__(self, name):
        self.calls.append(name)
        raise AttributeError(name)


def test_plan_runs_passes_in_order(tmp_path):
    plan = TrainingPlan([PassSpec(["a"], 2), PassSpec(["a", "b"], 1, "ce+ctc")], seed=3,
                        optim=OptimConfig(lr=1e-2, batch_size=4), frontend=FE)
    data = {"a": toy_data(4, 0), "b": toy_data(3, 1)}
    state, metrics = run_plan(plan, tiny_cfg(), data, log_path=tmp_path / "log.jsonl")
    assert [m["pass"] for m in metrics] == [1, 2]
    assert state.epoch == 3
    assert [h["objective"] for h in state.history] == ["ce", "ce", "ce+ctc"]
    assert len((tmp_path / "log.jsonl").read_text().splitlines()) == 5


# ------------------------------------------------------------------ config

def test_load_config_ini_and_overrides(tmp_path):
    (tmp_path / "c.ini").write_text(
        "[DEFAULT]\nseed = 11\n\n[model]\nvocab_size = 64\ncompress_after = 1 3\n"
        "attn_kind = location\nattn_heads = 2\n\n[train]\nlr = 0.003\n\n"
        "[frontend]\naugment = false\n\n"
        "[pass1]\ndatasets = clean\nepochs = 3\n\n[pass2]\ndatasets = clean target\nepochs = 2\n"
        "objective = ce+ctc\n")
    cfg = load_config(tmp_path / "c.ini", ["model.beam=4", "train.batch_size=2", "seed=5"])
    assert cfg.seed == 5
    assert cfg.model.vocab_size == 64 and cfg.model.compress_after == (1, 3)
    assert cfg.model.attn_kind == "location" and cfg.model.beam == 4
    assert cfg.optim.lr == 0.003 and cfg.optim.batch_size == 2
    assert cfg.frontend.augment is False
    assert [(p.datasets, p.epochs, p.objective) for p in cfg.passes] == [
        (["clean"], 3, "ce"), (["clean", "target"], 2, "ce+ctc")]


@pytest.mark.parametrize("bad", ["model.nope=1", "foo.bar=1", "model.beam", "model.dropout=2"])
def test_bad_overrides_rejected(bad):
    with pytest.raises(ValueError):
        load_config(None, [bad])


def test_unknown_section_rejected(tmp_path):
    (tmp_path / "c.ini").write_text("[decoder]\nbeam = 3\n")
    with pytest.raises(ValueError):
        load_config(tmp_path / "c.ini")


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(epochs=2, objective="ctc")])
def test_pass_spec_validation(kw):
    with pytest.raises(ValueError):
        PassSpec(["a"], **kw)
