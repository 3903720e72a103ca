import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lasr.frontend import (LOG_FLOOR, AudioUtterance, AugmentPolicy, FeatureSequence, compute_log_mel,
                           mel_filterbank, read_manifest, read_wav, spec_augment, stack_frames,
                           unstack_frames, write_wav)

SR = 16000


def _utt(x, sr=SR):
    return AudioUtterance("u", x, sr)


def test_frame_count_one_second():
    feat = compute_log_mel(_utt(np.random.default_rng(0).uniform(-0.5, 0.5, SR)), 80, 20, 10)
    assert feat.frames.shape == (99, 80)
    assert feat.dim == 80


def test_silence_is_log_floor():
    feat = compute_log_mel(_utt(np.zeros(4000)), 40)
    assert np.all(feat.frames == np.log(LOG_FLOOR))


def test_pure_tone_peaks_at_nearest_center():
    # reference: a direct DFT of one frame through the same filterbank
    t = np.arange(SR) / SR
    x = 0.5 * np.sin(2 * np.pi * 440.0 * t)
    feat = compute_log_mel(_utt(x), 80)
    win = 320
    n_fft = 512
    W, centers = mel_filterbank(80, n_fft, SR)
    frame = x[1600:1600 + win] * np.hanning(win)
    k = np.arange(n_fft // 2 + 1)
    dft = np.array([np.sum(frame * np.exp(-2j * np.pi * kk * np.arange(win) / n_fft)) for kk in k])
    ref = np.log(W @ np.abs(dft) ** 2 + LOG_FLOOR)
    assert np.allclose(ref, feat.frames[10], atol=1e-8)
    peaks = feat.frames.argmax(axis=1)
    assert np.all(peaks == np.argmin(np.abs(centers - 440.0)))


def test_errors():
    with pytest.raises(ValueError):
        compute_log_mel(_utt(np.zeros(100)))
    with pytest.raises(ValueError):
        compute_log_mel(_utt(np.zeros(4000), sr=12345))
    with pytest.raises(ValueError):
        AudioUtterance("x", np.zeros(0), SR)
    with pytest.raises(ValueError):
        AugmentPolicy(freq_mask_param=-1)


@settings(max_examples=20, deadline=None)
@given(st.integers(320, 3000), st.integers(0, 1000))
def test_log_mel_finite_and_deterministic(n, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    a = compute_log_mel(_utt(x), 20).frames
    b = compute_log_mel(_utt(x), 20).frames
    assert np.array_equal(a, b) and np.isfinite(a).all()
    assert a.shape[0] == 1 + (n - 320) // 160


def test_spec_augment_zero_params_is_identity():
    feat = FeatureSequence(np.random.default_rng(0).normal(size=(30, 10)), 10.0)
    out = spec_augment(feat, AugmentPolicy(0, 0))
    assert np.array_equal(out.frames, feat.frames)


def test_spec_augment_deterministic_large_params():
    feat = FeatureSequence(np.random.default_rng(0).normal(size=(300, 80)), 10.0)
    pol = AugmentPolicy(27, 100, seed=9)
    assert np.array_equal(spec_augment(feat, pol).frames, spec_augment(feat, pol).frames)


def test_time_mask_clipped_on_short_input():
    feat = FeatureSequence(np.ones((5, 4)), 10.0)
    for seed in range(50):
        out = spec_augment(feat, AugmentPolicy(0, 100, seed=seed)).frames
        masked_rows = np.where((out == 0).all(axis=1))[0]
        assert len(masked_rows) <= 5
        if len(masked_rows):
            assert np.array_equal(masked_rows, np.arange(masked_rows[0], masked_rows[-1] + 1))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 12), st.integers(0, 30), st.integers(0, 50),
       st.integers(1, 3), st.integers(0, 10_000))
def test_spec_augment_only_touches_rectangles(T, D, f, t, m, seed):
    x = np.random.default_rng(seed).uniform(1, 2, size=(T, D))
    out = spec_augment(FeatureSequence(x, 10.0), AugmentPolicy(f, t, m, seed)).frames
    changed = out != x
    assert np.all(out[changed] == 0)
    # every changed cell lies in a fully zeroed row or a fully zeroed column
    zero_rows = (out == 0).all(axis=1)
    zero_cols = (out == 0).all(axis=0)
    assert np.all(changed <= (zero_rows[:, None] | zero_cols[None, :]))
    if f == 0 and t == 0:
        assert not changed.any()


def test_stack_shapes():
    feat = FeatureSequence(np.ones((6, 80)), 10.0)
    assert stack_frames(feat, 3).frames.shape == (2, 240)
    assert stack_frames(feat, 1) is feat
    x = np.arange(7 * 2, dtype=float).reshape(7, 2) + 1
    s = stack_frames(FeatureSequence(x, 10.0), 3).frames
    assert s.shape == (3, 6)
    assert np.array_equal(s[2], [13, 14, 0, 0, 0, 0])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(1, 6), st.integers(1, 5))
def test_stack_unstack_roundtrip(T, D, k):
    x = np.random.default_rng(T * 31 + D).normal(size=(T, D))
    back = unstack_frames(stack_frames(FeatureSequence(x, 10.0), k), k)
    assert np.array_equal(back[:T], x)
    assert np.all(back[T:] == 0)


def test_wav_and_manifest_roundtrip(tmp_path):
    x = np.sin(np.linspace(0, 50, 1600)) * 0.5
    write_wav(tmp_path / "a.wav", x, SR)
    y, sr = read_wav(tmp_path / "a.wav")
    assert sr == SR and np.max(np.abs(x - y)) < 1e-4
    (tmp_path / "m.jsonl").write_text('{"id": "a", "audio_path": "a.wav", "text": "hi"}\n')
    rows = read_manifest(tmp_path / "m.jsonl")
    assert rows[0]["audio_path"] == str(tmp_path / "a.wav")
