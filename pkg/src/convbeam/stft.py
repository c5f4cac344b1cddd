"""Sqrt-Hann STFT analysis / weighted overlap-add synthesis at 50% overlap.

Spectral tensors are complex arrays shaped ``(n_frames, n_bins, n_mics)``;
multichannel audio is ``(n_samples, n_channels)``.
"""

from dataclasses import dataclass

import numpy as np


class ConfigInvalid(ValueError):
    pass


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 512
    frame_shift: int = 256
    window: str = "sqrt-hann"
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window != "sqrt-hann":
            raise ConfigInvalid(f"unsupported window {self.window!r}")
        if self.frame_len <= 0 or self.frame_shift <= 0:
            raise ConfigInvalid("frame length and shift must be positive")
        if self.frame_len != 2 * self.frame_shift:
            raise ConfigInvalid("50% overlap required: frame_len = 2 * frame_shift")
        if self.frame_len % 2:
            raise ConfigInvalid("frame_len must be even")

    @classmethod
    def from_ms(cls, frame_ms=32.0, sample_rate=16000):
        frame_len = int(round(frame_ms * 1e-3 * sample_rate))
        return cls(frame_len=frame_len, frame_shift=frame_len // 2, sample_rate=sample_rate)

    @property
    def n_bins(self):
        return self.frame_len // 2 + 1

    @property
    def lead(self):
        """Zero samples prepended before framing."""
        return self.frame_len - self.frame_shift

    @property
    def shift_seconds(self):
        return self.frame_shift / self.sample_rate

    def n_frames(self, n_samples):
        return -(-n_samples // self.frame_shift)

    def frame_bounds(self, t):
        """Sample interval ``[start, stop)`` of frame ``t`` on the signal timeline."""
        start = t * self.frame_shift - self.lead
        return start, start + self.frame_len

    def frequencies(self):
        return np.fft.rfftfreq(self.frame_len, 1.0 / self.sample_rate)


def window(cfg):
    n = np.arange(cfg.frame_len)
    return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * n / cfg.frame_len))


def _as_2d(audio):
    audio = np.asarray(audio, dtype=float)
    if audio.ndim == 1:
        audio = audio[:, None]
    if audio.ndim != 2:
        raise ValueError("audio must be (n_samples,) or (n_samples, n_channels)")
    return audio


def analyze(audio, cfg):
    audio = _as_2d(audio)
    n, ch = audio.shape
    if ch < 1 or n < cfg.frame_len:
        raise ValueError(f"need >= 1 channel and >= {cfg.frame_len} samples, got {audio.shape}")
    n_frames = cfg.n_frames(n)
    padded_len = (n_frames - 1) * cfg.frame_shift + cfg.frame_len
    padded = np.zeros((padded_len, ch))
    padded[cfg.lead:cfg.lead + n] = audio
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.frame_len, axis=0)
    frames = frames[::cfg.frame_shift][:n_frames]  # (frames, ch, frame_len)
    spec = np.fft.rfft(frames * window(cfg), axis=-1)
    return np.ascontiguousarray(spec.transpose(0, 2, 1))


def synthesize(spec, cfg, n_samples=None):
    spec = np.asarray(spec)
    if spec.ndim == 2:
        spec = spec[..., None]
    n_frames, n_bins, ch = spec.shape
    if n_bins != cfg.n_bins:
        raise ConfigInvalid(f"tensor has {n_bins} bins, config expects {cfg.n_bins}")
    win = window(cfg)
    frames = np.fft.irfft(spec.transpose(0, 2, 1), n=cfg.frame_len, axis=-1) * win
    padded_len = (n_frames - 1) * cfg.frame_shift + cfg.frame_len
    out = np.zeros((padded_len, ch))
    norm = np.zeros(padded_len)
    for t in range(n_frames):
        s = t * cfg.frame_shift
        out[s:s + cfg.frame_len] += frames[t].T
        norm[s:s + cfg.frame_len] += win ** 2
    out /= np.where(norm > 1e-8, norm, 1.0)[:, None]
    if n_samples is None:
        n_samples = n_frames * cfg.frame_shift
    out = out[cfg.lead:cfg.lead + n_samples]
    if out.shape[0] < n_samples:
        out = np.pad(out, ((0, n_samples - out.shape[0]), (0, 0)))
    return out
