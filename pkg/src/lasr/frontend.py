"""Audio front end: log-mel features, time/frequency masking, frame stacking."""
from __future__ import annotations

import json
import math
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

LOG_FLOOR = 1e-10
SUPPORTED_RATES = (8000, 16000, 22050, 24000, 32000, 44100, 48000)


@dataclass
class AudioUtterance:
    id: str
    samples: np.ndarray
    sample_rate_hz: int
    transcript: Optional[str] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate_hz <= 0:
            raise ValueError(f"{self.id}: sample rate must be positive")
        if self.samples.size == 0:
            raise ValueError(f"{self.id}: empty audio")


@dataclass
class FeatureSequence:
    frames: np.ndarray  # (T, D)
    frame_shift_ms: float

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class AugmentPolicy:
    freq_mask_param: int = 27
    time_mask_param: int = 100
    masks_per_axis: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.freq_mask_param < 0 or self.time_mask_param < 0:
            raise ValueError("mask parameters must be non-negative")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int):
    """HTK-style triangular filters spanning 0 Hz to Nyquist.

    Returns ``(weights, centers_hz)`` with weights of shape (n_mels, n_fft//2+1).
    """
    if sample_rate not in SUPPORTED_RATES:
        raise ValueError(f"no filterbank configured for sample rate {sample_rate}")
    n_bins = n_fft // 2 + 1
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.linspace(0.0, sample_rate / 2, n_bins)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(up, down))
    return weights, edges[1:-1]


def compute_log_mel(utt: AudioUtterance, n_mels: int = 80, window_ms: float = 20.0,
                    hop_ms: float = 10.0) -> FeatureSequence:
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    sr = utt.sample_rate_hz
    win = int(round(sr * window_ms / 1000.0))
    hop = int(round(sr * hop_ms / 1000.0))
    x = utt.samples
    if x.size < win:
        raise ValueError(f"{utt.id}: audio ({x.size} samples) shorter than one window ({win})")
    n_fft = 1 << (win - 1).bit_length()
    weights, _ = mel_filterbank(n_mels, n_fft, sr)
    n_frames = 1 + (x.size - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(win)
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    feats = np.log(power @ weights.T + LOG_FLOOR)
    return FeatureSequence(feats, hop_ms)


def spec_augment(feat: FeatureSequence, policy: AugmentPolicy,
                 rng: Optional[np.random.Generator] = None) -> FeatureSequence:
    """Zero out random frequency bands and time spans.

    Widths are uniform on [0, param); a band wider than the axis is clipped.
    ``rng`` overrides the policy seed (training threads its own stream).
    """
    rng = rng if rng is not None else np.random.default_rng(policy.seed)
    out = feat.frames.copy()
    T, D = out.shape
    for _ in range(policy.masks_per_axis):
        for axis, param, size in ((1, policy.freq_mask_param, D), (0, policy.time_mask_param, T)):
            if param <= 0:
                continue
            width = min(int(rng.integers(0, param)), size)
            start = int(rng.integers(0, size - width + 1))
            if axis == 1:
                out[:, start:start + width] = 0.0
            else:
                out[start:start + width, :] = 0.0
    return FeatureSequence(out, feat.frame_shift_ms)


def stack_frames(feat: FeatureSequence, k: int) -> FeatureSequence:
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return feat
    T, D = feat.frames.shape
    Tp = math.ceil(T / k)
    padded = np.zeros((Tp * k, D))
    padded[:T] = feat.frames
    return FeatureSequence(padded.reshape(Tp, k * D), feat.frame_shift_ms * k)


def unstack_frames(feat: FeatureSequence, k: int) -> np.ndarray:
    T, kD = feat.frames.shape
    return feat.frames.reshape(T * k, kD // k)


# ----------------------------------------------------------------------- I/O

def read_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2 or w.getnchannels() != 1:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        sr = w.getframerate()
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return data.astype(np.float64) / 32768.0, sr


def write_wav(path, samples: np.ndarray, sample_rate: int):
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def read_manifest(path) -> list[dict]:
    """JSONL manifest: one ``{id, audio_path, text, ...}`` object per line.
    Relative audio paths resolve against the manifest's directory."""
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            ap = Path(row["audio_path"])
            if not ap.is_absolute():
                row["audio_path"] = str(path.parent / ap)
            rows.append(row)
    return rows


def load_utterance(row: dict) -> AudioUtterance:
    samples, sr = read_wav(row["audio_path"])
    return AudioUtterance(row["id"], samples, sr, row.get("text"))


def normalize(feat: FeatureSequence) -> FeatureSequence:
    """Per-utterance mean/variance normalisation of each channel."""
    x = feat.frames
    mu = x.mean(axis=0, keepdims=True)
    sd = x.std(axis=0, keepdims=True)
    return FeatureSequence((x - mu) / np.maximum(sd, 1e-5), feat.frame_shift_ms)
