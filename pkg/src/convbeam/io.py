"""File formats: float32 WAV, JSON scenario specs and scenario bundle directories."""

import csv
import json
import math
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .scenario import ScenarioBundle, ScenarioSpec, SourceSpec, SpecInvalid
from .stft import StftConfig

MIXTURE_WAV = "mixture.wav"
REFERENCE_WAV = "reference_direct.wav"
SIDECAR = "scenario.json"
FORMAT_VERSION = 1


class IoError(OSError):
    pass


def read_wav(path):
    """Audio as float64 ``(n_samples, n_channels)`` and the sample rate.

    Integer PCM is scaled to [-1, 1).
    """
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such WAV file: {path}")
    try:
        fs, data = wavfile.read(path)
    except ValueError as exc:
        raise IoError(f"{path}: unreadable WAV ({exc})") from None
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        if info.min == 0:  # 8-bit unsigned
            data = (data.astype(np.float64) - 128.0) / 128.0
        else:
            data = data.astype(np.float64) / -float(info.min)
    else:
        data = data.astype(np.float64)
    if data.ndim == 1:
        data = data[:, None]
    return data, int(fs)


def write_wav(path, audio, sample_rate):
    """Write 32-bit float PCM; ``audio`` is ``(n_samples,)`` or ``(n_samples, n_channels)``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, int(sample_rate), np.asarray(audio, dtype=np.float32))


# --- scenario specs ----------------------------------------------------------

def _finite_or_str(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def spec_to_dict(spec):
    return {
        "mic_positions": spec.mic_positions.tolist(),
        "sources": [
            {
                "name": s.name,
                "role": s.role,
                "position": list(map(float, s.position)),
                "activity": list(map(float, s.activity)),
                "signal": s.signal,
                "voice": s.voice,
            }
            for s in spec.sources
        ],
        "t60": spec.t60,
        "duration": spec.duration,
        "sample_rate": spec.sample_rate,
        "snr_db": _finite_or_str(spec.snr_db),
        "sir_db": _finite_or_str(spec.sir_db),
        "noise_only": list(spec.noise_only),
        "noise_plus_interferer": list(spec.noise_plus_interferer),
        "seed": spec.seed,
        "ref_mics": list(spec.ref_mics),
        "room_dims": list(spec.room_dims),
        "n_noise_sources": spec.n_noise_sources,
        "noise_radius": spec.noise_radius,
    }


def spec_from_dict(d):
    d = dict(d)
    try:
        sources = [
            SourceSpec(
                name=s["name"],
                role=s["role"],
                position=tuple(s["position"]),
                activity=tuple(s["activity"]),
                signal=s.get("signal"),
                voice=s.get("voice", "male"),
            )
            for s in d.pop("sources")
        ]
        mics = d.pop("mic_positions")
    except (KeyError, TypeError) as exc:
        raise SpecInvalid(f"malformed scenario spec: {exc}") from None
    for key in ("snr_db", "sir_db"):
        if key in d:
            d[key] = float(d[key])
    for key in ("noise_only", "noise_plus_interferer", "ref_mics", "room_dims"):
        if key in d:
            d[key] = tuple(d[key])
    try:
        spec = ScenarioSpec(mic_positions=mics, sources=sources, **d)
    except TypeError as exc:
        raise SpecInvalid(f"malformed scenario spec: {exc}") from None
    spec.validate()
    return spec


def load_spec(path):
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such scenario spec: {path}")
    try:
        return spec_from_dict(json.loads(path.read_text()))
    except json.JSONDecodeError as exc:
        raise SpecInvalid(f"{path}: invalid JSON ({exc})") from None


def save_spec(spec, path):
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n")


# --- bundles -----------------------------------------------------------------

def _complex_to_json(a):
    a = np.asarray(a)
    return {"re": a.real.tolist(), "im": a.imag.tolist()}


def _complex_from_json(d):
    return np.asarray(d["re"]) + 1j * np.asarray(d["im"])


def write_bundle(bundle, out_dir):
    """Write mixture, direct-plus-early references and the JSON sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fs = bundle.spec.sample_rate
    write_wav(out / MIXTURE_WAV, bundle.mixture, fs)
    write_wav(out / REFERENCE_WAV, bundle.reference_direct, fs)
    cfg = bundle.stft
    sidecar = {
        "format_version": FORMAT_VERSION,
        "spec": spec_to_dict(bundle.spec),
        "stft": {"frame_len": cfg.frame_len, "frame_shift": cfg.frame_shift,
                 "window": cfg.window, "sample_rate": cfg.sample_rate},
        "oracle_labels": np.asarray(bundle.oracle_labels).astype(int).tolist(),
        "oracle_rtfs": {name: _complex_to_json(v) for name, v in bundle.oracle_rtfs.items()},
        "gains": {k: float(v) for k, v in bundle.gains.items()},
    }
    (out / SIDECAR).write_text(json.dumps(sidecar) + "\n")
    return out


def read_bundle(bundle_dir):
    """Load a bundle written by :func:`write_bundle` (RIRs and components are not stored)."""
    root = Path(bundle_dir)
    side = root / SIDECAR
    if not side.is_file():
        raise IoError(f"{root}: missing {SIDECAR}; generate the bundle with 'convbeam simulate'")
    try:
        d = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise IoError(f"{side}: invalid JSON ({exc})") from None
    if d.get("format_version") != FORMAT_VERSION:
        raise IoError(f"{side}: unsupported format version {d.get('format_version')}")
    spec = spec_from_dict(d["spec"])
    mixture, fs = read_wav(root / MIXTURE_WAV)
    reference, fs_ref = read_wav(root / REFERENCE_WAV)
    if fs != spec.sample_rate or fs_ref != fs:
        raise IoError(f"{root}: sample rate mismatch between WAVs and sidecar")
    return ScenarioBundle(
        spec=spec,
        stft=StftConfig(**d["stft"]),
        mixture=mixture,
        reference_direct=reference,
        oracle_rtfs={k: _complex_from_json(v) for k, v in d["oracle_rtfs"].items()},
        oracle_labels=np.asarray(d["oracle_labels"], dtype=int),
        rirs={},
        gains=d.get("gains", {}),
    )


def write_csv(path, fields, rows, comments=()):
    """CSV with optional leading ``# comment`` lines; floats use ``repr`` precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in fields})
    return path


def read_csv(path):
    """Rows of a CSV written by :func:`write_csv`, skipping comment lines."""
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v
