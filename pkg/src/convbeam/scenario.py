"""Synthetic acoustic scenarios: stochastic RIRs, speech-like sources, diffuse noise.

The room model is a seeded Polack-style impulse response: a fractional-delay
direct path, a handful of geometric early reflections (virtual image sources,
so inter-microphone delays stay consistent) and an exponentially decaying
Gaussian tail whose level follows Sabine's diffuse-field energy.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.signal import fftconvolve

from .linalg import principal_eigvec
from .rtf import Label
from .stft import StftConfig, analyze

SPEED_OF_SOUND = 343.0
EARLY_SECONDS = 0.050
ROOM_DIMS = (7.0, 6.0, 2.7)
SINC_HALF = 32


class SpecInvalid(ValueError):
    pass


class DegenerateCovariance(ValueError):
    pass


@dataclass
class SourceSpec:
    name: str
    role: str  # "target" or "interferer"
    position: tuple
    activity: tuple  # seconds, [start, end)
    signal: str | None = None  # WAV path; synthetic speech when None
    voice: str = "male"


@dataclass
class ScenarioSpec:
    mic_positions: np.ndarray
    sources: list
    t60: float
    duration: float
    sample_rate: int = 16000
    snr_db: float = 0.0
    sir_db: float = 0.0
    noise_only: tuple = (0.0, 1.0)
    noise_plus_interferer: tuple = (1.0, 2.0)
    seed: int = 0
    ref_mics: tuple = (0, 2)
    room_dims: tuple = ROOM_DIMS
    n_noise_sources: int = 16
    noise_radius: float = 2.5

    def __post_init__(self):
        self.mic_positions = np.asarray(self.mic_positions, dtype=float)

    @property
    def n_mics(self):
        return self.mic_positions.shape[0]

    @property
    def n_samples(self):
        return int(round(self.duration * self.sample_rate))

    @property
    def targets(self):
        return sorted((s for s in self.sources if s.role == "target"), key=lambda s: s.activity[0])

    @property
    def interferers(self):
        return [s for s in self.sources if s.role == "interferer"]

    def validate(self):
        if not self.duration > 0:
            raise SpecInvalid("duration must be positive")
        if not self.t60 > 0:
            raise SpecInvalid("t60 must be positive")
        if self.mic_positions.ndim != 2 or self.mic_positions.shape[1] != 3 or self.n_mics < 2:
            raise SpecInvalid("need >= 2 microphones with 3-D positions")
        if len(self.ref_mics) != 2 or not all(0 <= r < self.n_mics for r in self.ref_mics):
            raise SpecInvalid(f"invalid reference microphones {self.ref_mics}")
        names = [s.name for s in self.sources]
        if len(set(names)) != len(names):
            raise SpecInvalid("source names must be unique")
        targets = self.targets
        if not 1 <= len(targets) <= 2:
            raise SpecInvalid("one or two target positions supported")
        if len(self.interferers) > 1:
            raise SpecInvalid("at most one interferer supported")
        for s in self.sources:
            if s.role not in ("target", "interferer"):
                raise SpecInvalid(f"unknown role {s.role!r}")
            a, b = s.activity
            if not 0 <= a < b <= self.duration + 1e-9:
                raise SpecInvalid(f"activity of {s.name} outside [0, duration]")
            if np.linalg.norm(np.asarray(s.position) - self.mic_positions, axis=1).min() <= 0:
                raise SpecInvalid(f"source {s.name} coincides with a microphone")
        for a, b in zip(targets, targets[1:]):
            if b.activity[0] < a.activity[1] - 1e-9:
                raise SpecInvalid("target activity intervals overlap")
        n0, n1 = self.noise_only
        i0, i1 = self.noise_plus_interferer
        if not (0 <= n0 <= n1 <= i0 <= i1 <= targets[0].activity[0] + 1e-9):
            raise SpecInvalid("oracle periods must be ordered and precede target activity")
        return self


@dataclass
class ScenarioBundle:
    spec: ScenarioSpec
    stft: StftConfig
    mixture: np.ndarray  # (n_samples, n_mics)
    reference_direct: np.ndarray  # (n_samples, 2) at ref_mics
    oracle_rtfs: dict  # source name -> (n_bins, n_mics), ref_mics[0] entry = 1
    oracle_labels: np.ndarray  # (n_frames,) Label values
    rirs: dict  # source name -> (n_mics, rir_len)
    components: dict = field(default_factory=dict)  # target / interferer / noise images
    gains: dict = field(default_factory=dict)

    def oracle_rtf_for_label(self):
        """Map target labels to the oracle RTF of the active target position."""
        return {Label.TARGET_1 + k: self.oracle_rtfs[s.name] for k, s in enumerate(self.spec.targets)}

    def interferer_rtf(self):
        intf = self.spec.interferers
        return self.oracle_rtfs[intf[0].name] if intf else None


# --- room impulse responses -------------------------------------------------

def _room_acoustics(room_dims, t60):
    lx, ly, lz = room_dims
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    alpha = min(0.161 * volume / (surface * t60), 1.0)
    # diffuse reverberant energy relative to the direct field at 1 m
    e_rev = 16 * np.pi * (1 - alpha) / (surface * alpha)
    return alpha, e_rev


def _add_fractional_impulse(h, delay, amp):
    """Add a Hann-windowed sinc impulse at a fractional sample delay."""
    center = int(math.floor(delay))
    n = np.arange(center - SINC_HALF + 1, center + SINC_HALF + 1)
    frac = n - delay
    taps = np.sinc(frac) * (0.5 + 0.5 * np.cos(np.pi * frac / SINC_HALF))
    keep = (n >= 0) & (n < h.shape[-1])
    h[n[keep]] += amp * taps[keep]


def generate_rir(src_pos, mic_pos, t60, sample_rate, seed, room_dims=ROOM_DIMS,
                 n_early=8, length=None):
    """Seeded stochastic RIR(s) from one source to one or several microphones.

    Returns ``(rir_len,)`` for a single 3-vector ``mic_pos`` and
    ``(n_mics, rir_len)`` for an array of positions.
    """
    if not t60 > 0:
        raise ValueError("t60 must be positive")
    src = np.asarray(src_pos, dtype=float)
    mics = np.asarray(mic_pos, dtype=float)
    single = mics.ndim == 1
    mics = np.atleast_2d(mics)
    dist = np.linalg.norm(mics - src, axis=1)
    if np.any(dist <= 0):
        raise ValueError("source coincides with a microphone")
    fs = sample_rate
    delays = dist / SPEED_OF_SOUND * fs
    if length is None:
        length = int(math.ceil(delays.max() + fs * max(1.2 * t60, 1.2 * EARLY_SECONDS))) + SINC_HALF
    rng = np.random.default_rng(seed)
    alpha, e_rev = _room_acoustics(room_dims, t60)
    rho = math.sqrt(1 - alpha)
    h = np.zeros((mics.shape[0], length))
    for m in range(mics.shape[0]):
        _add_fractional_impulse(h[m], delays[m], 1.0 / dist[m])

    # early reflections from virtual sources around the array centroid
    centroid = mics.mean(axis=0)
    d0 = np.linalg.norm(src - centroid)
    max_r = SPEED_OF_SOUND * (EARLY_SECONDS - 2e-3)
    dirs = rng.standard_normal((n_early, 3))
    dirs[:, 2] *= 0.5
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = rng.uniform(min(d0 + 0.5, max_r), max(max_r, d0 + 0.6), n_early)
    orders = rng.integers(1, 3, n_early)
    signs = rng.choice([-1.0, 1.0], n_early)
    if rho > 0:
        for d, r, o, sgn in zip(dirs, radii, orders, signs):
            img = centroid + r * d
            for m in range(mics.shape[0]):
                dm = np.linalg.norm(img - mics[m])
                _add_fractional_impulse(h[m], dm / SPEED_OF_SOUND * fs, sgn * rho ** o / dm)

    # exponential Gaussian tail with spherically isotropic inter-mic coherence
    t0 = int(math.floor(delays.min()))
    tail_t = np.arange(length - t0) / fs
    envelope = np.exp(-3 * math.log(10) * tail_t / t60)
    tail = rng.standard_normal((mics.shape[0], length - t0))
    if mics.shape[0] > 1:
        # mix while stationary: the per-frequency mixing is circular in time
        tail = _impose_diffuse_coherence(tail, mics, fs)
    tail *= envelope
    energy = np.mean(np.sum(tail ** 2, axis=1))
    if e_rev > 0 and energy > 0:
        h[:, t0:] += tail * math.sqrt(e_rev / energy)
    return h[0] if single else h


def diffuse_coherence(mics, freqs):
    """Spherically isotropic field coherence ``sinc(2 pi f d / c)``, ``(n_freqs, M, M)``."""
    dist = np.linalg.norm(mics[:, None, :] - mics[None, :, :], axis=-1)
    return np.sinc(2 * freqs[:, None, None] * dist[None] / SPEED_OF_SOUND)


def _impose_diffuse_coherence(x, mics, fs):
    """Mix independent channels per frequency so they share diffuse-field coherence."""
    spec = np.fft.rfft(x, axis=1)
    gamma = diffuse_coherence(mics, np.fft.rfftfreq(x.shape[1], 1 / fs))
    vals, vecs = np.linalg.eigh(gamma)
    mix = vecs * np.sqrt(np.maximum(vals, 0.0))[:, None, :]
    spec = np.einsum("fij,jf->if", mix, spec)
    return np.fft.irfft(spec, n=x.shape[1], axis=1)


def schroeder_t60(rir, sample_rate, lo_db=-5.0, hi_db=-25.0):
    """Reverberation time from a line fit to the backward-integrated energy decay."""
    edc = np.cumsum(np.asarray(rir, dtype=float)[::-1] ** 2)[::-1]
    edc_db = 10 * np.log10(edc / edc[0] + 1e-300)
    idx = np.nonzero((edc_db <= lo_db) & (edc_db >= hi_db))[0]
    if idx.size < 2:
        raise ValueError("decay range not covered by the impulse response")
    slope, _ = np.polyfit(idx / sample_rate, edc_db[idx], 1)
    return -60.0 / slope


# --- source signals -----------------------------------------------------------

def _formant_gain(freqs, formants, bandwidths):
    g = np.zeros_like(freqs)
    for f, b in zip(formants, bandwidths):
        g += 1.0 / (1.0 + ((freqs - f) / b) ** 2)
    return (g + 0.05) / np.sqrt(1.0 + (freqs / 1000.0) ** 2)


def synthetic_speech(duration, sample_rate, rng, formant_scale=1.0):
    """Speech-shaped modulated noise: syllables of formant-filtered noise.

    Each syllable gets a raised-sine envelope and its own spectral shape
    (three formant peaks, or a high-frequency band for fricatives), separated
    by short pauses. This gives the on/off structure and sparse
    time-frequency support of speech without periodic excitation, which a
    linear predictor could cancel. Unit RMS.
    """
    fs = sample_rate
    n = int(round(duration * fs))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        syl = int(rng.uniform(0.08, 0.30) * fs)
        length = min(syl, n - pos)
        env = np.sin(np.pi * (np.arange(syl) + 0.5) / syl)[:length]
        spec = np.fft.rfft(rng.standard_normal(length))
        freqs = np.fft.rfftfreq(length, 1 / fs)
        if rng.random() < 0.8:
            formants = formant_scale * np.array(
                [rng.uniform(300, 900), rng.uniform(900, 2500), rng.uniform(2400, 3600)])
            bws = (rng.uniform(60, 120), rng.uniform(80, 160), rng.uniform(120, 220))
            spec *= _formant_gain(freqs, formants, bws)
        else:
            centre = rng.uniform(2500, 6000)
            spec *= np.exp(-0.5 * ((freqs - centre) / 1500.0) ** 2) + 0.05
        seg = np.fft.irfft(spec, n=length)
        seg = seg / (np.std(seg) + 1e-12) * rng.uniform(0.5, 1.5)
        out[pos:pos + length] += seg * env
        pos += length
        pause = rng.uniform(0.03, 0.15) if rng.random() > 0.1 else rng.uniform(0.25, 0.5)
        pos += int(pause * fs)
    return out / (np.sqrt(np.mean(out ** 2)) + 1e-12)


def speech_shaped_noise(n_samples, sample_rate, rng):
    """Stationary Gaussian noise with a speech-like long-term spectrum, unit RMS."""
    spec = np.fft.rfft(rng.standard_normal(n_samples))
    freqs = np.fft.rfftfreq(n_samples, 1 / sample_rate)
    spec *= 1.0 / np.sqrt(1.0 + (freqs / 600.0) ** 2) * (0.3 + 0.7 * np.exp(-0.5 * ((freqs - 500) / 400) ** 2))
    x = np.fft.irfft(spec, n=n_samples)
    return x / np.sqrt(np.mean(x ** 2))


def _load_source(path, sample_rate):
    from .io import read_wav
    audio, fs = read_wav(path)
    if fs != sample_rate:
        raise SpecInvalid(f"{path}: sample rate {fs} != {sample_rate}")
    x = audio.mean(axis=1)
    return x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


VOICE_FORMANTS = {"male": 1.0, "female": 1.17}  # formant frequency scaling


def _source_signal(spec, src, index):
    fs = spec.sample_rate
    a, b = (int(round(t * fs)) for t in src.activity)
    b = min(b, spec.n_samples)
    sig = np.zeros(spec.n_samples)
    if src.signal:
        x = _load_source(src.signal, fs)
        reps = int(np.ceil((b - a) / len(x)))
        sig[a:b] = np.tile(x, reps)[:b - a]
    else:
        rng = np.random.default_rng([spec.seed, 1, index])
        sig[a:b] = synthetic_speech((b - a) / fs, fs, rng, VOICE_FORMANTS.get(src.voice, 1.0))[:b - a]
    return sig


# --- oracle quantities ------------------------------------------------------------

def oracle_rtf(rir_early, cfg, ref_mic, seed=0, duration=8.0, floor=1e-12):
    """Per-bin RTF: principal eigenvector of the STFT covariance of white noise
    filtered by the early RIRs, normalized so the ``ref_mic`` entry equals 1."""
    rir_early = np.atleast_2d(rir_early)
    rng = np.random.default_rng([seed, 7])
    n = int(duration * cfg.sample_rate)
    s = rng.standard_normal(n)
    x = np.stack([fftconvolve(s, h)[:n] for h in rir_early], axis=1)
    spec = analyze(x, cfg)
    skip = int(np.ceil(rir_early.shape[1] / cfg.frame_shift)) + 2
    spec = spec[skip:]
    cov = np.einsum("tki,tkj->kij", spec, np.conj(spec)) / spec.shape[0]
    vals = np.linalg.eigvalsh(cov)[:, -1]
    if np.any(vals <= floor * max(vals.max(), 1e-300)) or vals.max() <= 0:
        raise DegenerateCovariance("principal eigenvalue below floor")
    v = principal_eigvec(cov)
    ref = v[:, ref_mic:ref_mic + 1]
    if np.any(np.abs(ref) < 1e-12):
        raise DegenerateCovariance("reference entry vanishes")
    out = v / ref
    out[:, ref_mic] = 1.0
    return out


def frame_labels(spec, cfg):
    """Oracle per-frame labels on the STFT grid of ``cfg``."""
    n_frames = cfg.n_frames(spec.n_samples)
    fs = spec.sample_rate
    labels = np.empty(n_frames, dtype=np.int8)
    noise_end = int(round(spec.noise_only[1] * fs))
    targets = [(int(round(s.activity[0] * fs)), int(round(s.activity[1] * fs))) for s in spec.targets]
    for t in range(n_frames):
        start, stop = cfg.frame_bounds(t)
        centre = start + cfg.frame_len // 2
        label = None
        for k, (a, b) in enumerate(targets):
            if a <= centre < b or (k == len(targets) - 1 and centre >= b):
                label = Label.TARGET_1 + k
                break
        if label is None:
            label = Label.NOISE_ONLY if stop <= noise_end else Label.NOISE_PLUS_INTERFERER
        labels[t] = label
    return labels


def _energy(x, a, b):
    return float(np.sum(x[a:b] ** 2))


def build_scenario(spec, cfg=None):
    spec.validate()
    cfg = cfg or StftConfig(sample_rate=spec.sample_rate)
    fs = spec.sample_rate
    n = spec.n_samples
    n_mics = spec.n_mics
    ref = spec.ref_mics[0]
    early_len = int(round(EARLY_SECONDS * fs))

    rirs, images, early_images = {}, {}, {}
    for i, src in enumerate(spec.sources):
        rir = generate_rir(src.position, spec.mic_positions, spec.t60, fs,
                           seed=[spec.seed, 2, i], room_dims=spec.room_dims)
        rirs[src.name] = rir
        sig = _source_signal(spec, src, i)
        images[src.name] = np.stack([fftconvolve(sig, h)[:n] for h in rir], axis=1)
        early_images[src.name] = np.stack(
            [fftconvolve(sig, rir[r, :early_len])[:n] for r in spec.ref_mics], axis=1)
        # causal responses: clear FFT round-off ahead of the source onset
        onset = int(round(src.activity[0] * fs))
        images[src.name][:onset] = 0.0
        early_images[src.name][:onset] = 0.0

    noise = np.zeros((n, n_mics))
    if np.isfinite(spec.snr_db):
        angles = 2 * np.pi * (np.arange(spec.n_noise_sources) + 0.5) / spec.n_noise_sources
        heights = np.random.default_rng([spec.seed, 3]).uniform(-0.5, 1.0, spec.n_noise_sources)
        centre = spec.mic_positions.mean(axis=0)
        for k, (ang, z) in enumerate(zip(angles, heights)):
            pos = centre + np.array([spec.noise_radius * np.cos(ang), spec.noise_radius * np.sin(ang), z])
            sig = speech_shaped_noise(n, fs, np.random.default_rng([spec.seed, 4, k]))
            rir = generate_rir(pos, spec.mic_positions, spec.t60, fs,
                               seed=[spec.seed, 5, k], room_dims=spec.room_dims)
            noise += np.stack([fftconvolve(sig, h)[:n] for h in rir], axis=1)

    gains = {}
    target = np.zeros((n, n_mics))
    reference_direct = np.zeros((n, 2))
    t_spans = []
    for src in spec.targets:
        a, b = (int(round(t * fs)) for t in src.activity)
        b = min(b, n)
        t_spans.append((a, b))
        g = 1.0
        if np.isfinite(spec.snr_db):
            e_s = _energy(images[src.name][:, ref], a, b)
            e_n = _energy(noise[:, ref], a, b)
            g = math.sqrt(10 ** (spec.snr_db / 10) * e_n / e_s)
        gains[src.name] = g
        target += g * images[src.name]
        reference_direct += g * early_images[src.name]

    interferer = np.zeros((n, n_mics))
    for src in spec.interferers:
        g = 0.0
        if np.isfinite(spec.sir_db):
            e_t = sum(_energy(target[:, ref], a, b) for a, b in t_spans)
            e_i = sum(_energy(images[src.name][:, ref], a, b) for a, b in t_spans)
            g = math.sqrt(e_t / (e_i * 10 ** (spec.sir_db / 10)))
        gains[src.name] = g
        interferer += g * images[src.name]

    mixture = target + interferer + noise
    rtfs = {name: oracle_rtf(h[:, :early_len], cfg, ref, seed=spec.seed) for name, h in rirs.items()}
    return ScenarioBundle(
        spec=spec,
        stft=cfg,
        mixture=mixture,
        reference_direct=reference_direct,
        oracle_rtfs=rtfs,
        oracle_labels=frame_labels(spec, cfg),
        rirs=rirs,
        components={"target": target, "interferer": interferer, "noise": noise},
        gains=gains,
    )


# --- presets ----------------------------------------------------------------------------

def binaural_mic_positions(head_radius=0.08, mic_spacing=0.015):
    """Two behind-the-ear devices with two microphones each.

    Order: left-front, left-rear, right-front, right-rear. x points to the
    front, y to the left.
    """
    h = mic_spacing / 2
    return np.array([
        [h, head_radius, 0.0],
        [-h, head_radius, 0.0],
        [h, -head_radius, 0.0],
        [-h, -head_radius, 0.0],
    ])


def azimuth_position(azimuth_deg, distance=2.0, height=0.0):
    """Source position for an azimuth measured clockwise from the front (90 = right)."""
    a = np.deg2rad(azimuth_deg)
    return (distance * np.cos(a), -distance * np.sin(a), height)


PRESETS = ("paper-switching-target",)


def paper_switching_target(seed=0, t60=0.5, snr_db=0.0, sir_db=0.0, sample_rate=16000,
                           duration=39.0, switch_time=20.4):
    """Target switching from 0 deg to 90 deg, interferer at -120 deg, diffuse noise."""
    return ScenarioSpec(
        mic_positions=binaural_mic_positions(),
        sources=[
            SourceSpec("target1", "target", azimuth_position(0.0), (2.0, switch_time), voice="male"),
            SourceSpec("target2", "target", azimuth_position(90.0), (switch_time, duration), voice="female"),
            SourceSpec("interferer", "interferer", azimuth_position(-120.0), (1.0, duration), voice="male"),
        ],
        t60=t60,
        duration=duration,
        sample_rate=sample_rate,
        snr_db=snr_db,
        sir_db=sir_db,
        noise_only=(0.0, 1.0),
        noise_plus_interferer=(1.0, 2.0),
        seed=seed,
        ref_mics=(0, 2),
    )


def preset(name, **kwargs):
    if name == "paper-switching-target":
        return paper_switching_target(**kwargs)
    raise SpecInvalid(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
