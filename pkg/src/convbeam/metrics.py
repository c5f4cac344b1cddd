"""Objective measures: frequency-weighted segmental SNR and segmental SRR.

Both compare a processed signal against the direct-plus-early target
component at the same reference microphone.
"""

from dataclasses import asdict, dataclass

import numpy as np

FRAME_SECONDS = 0.032
N_BANDS = 25
BAND_WEIGHT_EXP = 0.2
FWSSNR_CLAMP = (-10.0, 35.0)
SRR_CLAMP = (-20.0, 40.0)
ACTIVITY_GATE_DB = -40.0
EPS = 1e-20


class LengthMismatch(ValueError):
    pass


class AlignmentError(ValueError):
    pass


def _check(reference, test):
    reference = np.asarray(reference, dtype=float)
    test = np.asarray(test, dtype=float)
    if reference.shape != test.shape:
        raise LengthMismatch(f"reference {reference.shape} vs test {test.shape}")
    return reference, test


def _frames(x, frame_len):
    hop = frame_len // 2
    n = 1 + max(len(x) - frame_len, 0) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def _active(frame_energy):
    peak = frame_energy.max()
    if peak <= 0:
        return np.zeros_like(frame_energy, bool)
    return frame_energy > peak * 10 ** (ACTIVITY_GATE_DB / 10)


def mel_filterbank(n_fft, sample_rate, n_bands=N_BANDS):
    """Triangular mel-spaced band weights ``(n_bands, n_fft // 2 + 1)``."""
    def mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def inv(m):
        return 700.0 * (10 ** (m / 2595.0) - 1.0)

    edges = inv(np.linspace(mel(0.0), mel(sample_rate / 2), n_bands + 2))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    fb = np.zeros((n_bands, freqs.size))
    for b in range(n_bands):
        lo, mid, hi = edges[b:b + 3]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        fb[b] = np.clip(np.minimum(rise, fall), 0.0, None)
    return fb


def fwssnr(reference, test, sample_rate):
    """Frequency-weighted segmental SNR in dB.

    Per frame and mel band: ``SNR_b = 10 log10(E_ref,b / E_err,b)`` with the
    error taken on the complex spectra, clamped to [-10, 35] dB, weighted by
    the reference band magnitude to the power 0.2. Frames more than 40 dB
    below the loudest reference frame are skipped.
    """
    reference, test = _check(reference, test)
    frame_len = int(round(FRAME_SECONDS * sample_rate))
    win = np.hanning(frame_len)
    ref_f = _frames(reference, frame_len)
    test_f = _frames(test, frame_len)
    active = _active(np.sum(ref_f ** 2, axis=1))
    if not np.any(active):
        return float("nan")
    ref_spec = np.fft.rfft(ref_f[active] * win, axis=1)
    err_spec = np.fft.rfft((ref_f[active] - test_f[active]) * win, axis=1)
    fb = mel_filterbank(frame_len, sample_rate)
    ref_band = np.abs(ref_spec) ** 2 @ fb.T
    err_band = np.abs(err_spec) ** 2 @ fb.T
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(np.maximum(ref_band, EPS) / err_band)
    snr = np.clip(snr, *FWSSNR_CLAMP)
    w = np.sqrt(ref_band) ** BAND_WEIGHT_EXP
    per_frame = np.sum(w * snr, axis=1) / np.maximum(np.sum(w, axis=1), EPS)
    return float(np.mean(per_frame))


def srr(reference_direct, test, sample_rate):
    """Segmental signal-to-reverberation ratio in dB.

    Per 32 ms segment (50% overlap) the reference is scaled by the least-squares
    projection ``alpha`` of ``test`` onto it; ``10 log10(|alpha ref|^2 /
    |test - alpha ref|^2)`` is clamped to [-20, 40] dB and averaged over
    reference-active segments.
    """
    reference, test = _check(reference_direct, test)
    frame_len = int(round(FRAME_SECONDS * sample_rate))
    ref_f = _frames(reference, frame_len)
    test_f = _frames(test, frame_len)
    ref_e = np.sum(ref_f ** 2, axis=1)
    active = _active(ref_e)
    if not np.any(active):
        return float("nan")
    ref_f, test_f, ref_e = ref_f[active], test_f[active], ref_e[active]
    alpha = np.sum(test_f * ref_f, axis=1) / ref_e
    proj = alpha[:, None] * ref_f
    sig = np.sum(proj ** 2, axis=1)
    res = np.sum((test_f - proj) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        seg = 10 * np.log10(np.maximum(sig, EPS) / res)
    return float(np.mean(np.clip(seg, *SRR_CLAMP)))


@dataclass
class MetricReport:
    fwssnr_in: float
    fwssnr_out: float
    delta_fwssnr: float
    srr_in: float
    srr_out: float
    delta_srr: float
    fwssnr_in_lr: tuple
    fwssnr_out_lr: tuple
    srr_in_lr: tuple
    srr_out_lr: tuple
    interval: tuple

    CSV_FIELDS = ("fwssnr_in", "fwssnr_out", "delta_fwssnr", "srr_in", "srr_out", "delta_srr",
                  "interval_start", "interval_end")

    def row(self):
        d = asdict(self)
        d["interval_start"], d["interval_end"] = self.interval
        return {k: d[k] for k in self.CSV_FIELDS}


def evaluate(reference_direct, mixture, enhanced, ref_mics, sample_rate, interval=None, offset=0):
    """Input/output/improvement scores averaged over the left and right outputs.

    ``reference_direct`` and ``enhanced`` are ``(n_samples, 2)``; ``mixture`` is
    the unprocessed multichannel signal whose ``ref_mics`` columns form the
    input scores. ``offset`` is the number of samples by which ``enhanced``
    lags the mixture (0 when it comes from :func:`convbeam.stft.synthesize`).
    """
    reference_direct = np.asarray(reference_direct, dtype=float)
    mixture = np.asarray(mixture, dtype=float)
    enhanced = np.asarray(enhanced, dtype=float)
    if offset is None:
        raise AlignmentError("unknown latency compensation offset")
    n = mixture.shape[0]
    enhanced = enhanced[offset:]
    if abs(enhanced.shape[0] - n) > int(FRAME_SECONDS * sample_rate):
        raise AlignmentError(f"enhanced length {enhanced.shape[0]} does not match mixture length {n}")
    if enhanced.shape[0] < n:
        enhanced = np.pad(enhanced, ((0, n - enhanced.shape[0]), (0, 0)))
    enhanced = enhanced[:n]
    if reference_direct.shape[0] != n:
        raise LengthMismatch("reference and mixture lengths differ")
    if interval is None:
        interval = (0.0, n / sample_rate)
    a = int(round(interval[0] * sample_rate))
    b = min(int(round(interval[1] * sample_rate)), n)

    fi, fo, si, so = [], [], [], []
    for nu, ref in enumerate(ref_mics):
        r = reference_direct[a:b, nu]
        fi.append(fwssnr(r, mixture[a:b, ref], sample_rate))
        fo.append(fwssnr(r, enhanced[a:b, nu], sample_rate))
        si.append(srr(r, mixture[a:b, ref], sample_rate))
        so.append(srr(r, enhanced[a:b, nu], sample_rate))
    f_in, f_out, s_in, s_out = (float(np.mean(x)) for x in (fi, fo, si, so))
    return MetricReport(
        fwssnr_in=f_in,
        fwssnr_out=f_out,
        delta_fwssnr=f_out - f_in,
        srr_in=s_in,
        srr_out=s_out,
        delta_srr=s_out - s_in,
        fwssnr_in_lr=tuple(fi),
        fwssnr_out_lr=tuple(fo),
        srr_in_lr=tuple(si),
        srr_out_lr=tuple(so),
        interval=(float(interval[0]), float(interval[1])),
    )
