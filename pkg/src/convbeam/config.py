"""Run configuration: INI file <-> nested dataclasses.

Every key has a default, so an empty file (or none) gives the standard
binaural setup: 4 microphones, 32 ms frames with 16 ms shift, L_h = 16,
delay 3, p = 0.5, t_gamma = 400 ms, constraint scalings 0 dB / -20 dB.
"""

import configparser
from dataclasses import dataclass, field, fields, replace
import math
from pathlib import Path

from .beamformer import BeamformerConfig
from .pipeline import MODES, EnhanceConfig, RtfConfig, WpeConfig
from .scenario import PRESETS
from .stft import ConfigInvalid, StftConfig

SWEEP_T_GAMMA_MS = (100.0, 150.0, 200.0, 300.0, 400.0, 500.0, 750.0, 1000.0, 1500.0)
SWEEP_P = (0.0, 0.5)
DEFAULT_INTERVAL = (2.0, None)  # seconds; None = end of signal


def _floats(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _ints(text):
    return tuple(int(x) for x in _floats(text))


def _opt_float(text):
    text = text.strip()
    return None if text in ("", "none", "auto") else float(text)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return repr(v)
    return str(v)


@dataclass
class RunConfig:
    enhance: EnhanceConfig = field(default_factory=EnhanceConfig)
    preset: str = "paper-switching-target"
    scenario: str | None = None  # JSON spec or bundle directory; overrides preset
    seed: int = 0
    out: str = "out"
    interval: tuple = DEFAULT_INTERVAL
    sweep_t_gamma: tuple = tuple(t / 1000.0 for t in SWEEP_T_GAMMA_MS)  # seconds
    sweep_p: tuple = SWEEP_P

    def validate(self):
        if self.enhance.mode not in MODES:
            raise ConfigInvalid(f"mode must be one of {MODES}")
        if self.scenario is None and self.preset not in PRESETS:
            raise ConfigInvalid(f"unknown preset {self.preset!r}")
        start, end = self.interval
        if start < 0 or (end is not None and end <= start):
            raise ConfigInvalid(f"invalid evaluation interval {self.interval}")
        return self

    def validate_sweep(self):
        if not self.sweep_t_gamma or not self.sweep_p:
            raise ConfigInvalid("sweep needs non-empty t_gamma and p lists")
        for t in self.sweep_t_gamma:
            if not t > 0:
                raise ConfigInvalid(f"sweep time constant must be positive, got {t}")
        for p in self.sweep_p:
            if not 0 <= p <= 2:
                raise ConfigInvalid(f"sweep shape parameter must lie in [0, 2], got {p}")
        return self

    def with_overrides(self, mode=None, p=None, t_gamma_ms=None, seed=None, out=None, preset=None):
        enh = self.enhance
        bf = enh.beamformer
        if p is not None:
            bf = replace(bf, p=p)
        if t_gamma_ms is not None:
            bf = replace(bf, t_gamma=t_gamma_ms / 1000.0)
        enh = replace(enh, beamformer=bf, mode=mode or enh.mode)
        return replace(
            self,
            enhance=enh,
            seed=self.seed if seed is None else seed,
            out=self.out if out is None else out,
            preset=self.preset if preset is None else preset,
        ).validate()


def load_config(path=None):
    """Parse an INI file; missing sections and keys take the defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigInvalid(f"no such config file: {path}")
        parser.read(path)
    known = {"run", "stft", "beamformer", "wpe", "rtf", "sweep"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigInvalid(f"unknown config sections: {sorted(unknown)}")
    get = parser.get
    try:
        stft = StftConfig(
            frame_len=parser.getint("stft", "frame_len", fallback=512),
            frame_shift=parser.getint("stft", "frame_shift", fallback=256),
            window=get("stft", "window", fallback="sqrt-hann"),
            sample_rate=parser.getint("stft", "sample_rate", fallback=16000),
        )
        d = BeamformerConfig()
        t_gamma_ms = _opt_float(get("beamformer", "t_gamma_ms", fallback=str(d.t_gamma * 1000)))
        bf = BeamformerConfig(
            n_mics=parser.getint("beamformer", "n_mics", fallback=d.n_mics),
            filter_len=parser.getint("beamformer", "filter_len", fallback=d.filter_len),
            delay=parser.getint("beamformer", "delay", fallback=d.delay),
            p=parser.getfloat("beamformer", "p", fallback=d.p),
            t_gamma=math.inf if t_gamma_ms is None else t_gamma_ms / 1000.0,
            frame_shift_s=stft.shift_seconds,
            betas_db=_floats(get("beamformer", "betas_db", fallback=_fmt(d.betas_db))),
            ref_mics=_ints(get("beamformer", "ref_mics", fallback=_fmt(d.ref_mics))),
            init_reg_rel=parser.getfloat("beamformer", "init_reg_rel", fallback=d.init_reg_rel),
            init_reg_frames=parser.getint("beamformer", "init_reg_frames", fallback=d.init_reg_frames),
            init_reg_fallback=parser.getfloat("beamformer", "init_reg_fallback",
                                              fallback=d.init_reg_fallback),
            weight_floor_rel=parser.getfloat("beamformer", "weight_floor_rel", fallback=d.weight_floor_rel),
            n_irls_iters=parser.getint("beamformer", "n_irls_iters", fallback=d.n_irls_iters),
        )
        wpe = WpeConfig(
            filter_len=parser.getint("wpe", "filter_len", fallback=WpeConfig.filter_len),
            delay=parser.getint("wpe", "delay", fallback=WpeConfig.delay),
            gamma=_opt_float(get("wpe", "gamma", fallback="")),
            p=_opt_float(get("wpe", "p", fallback="")),
        )
        rtf = RtfConfig(
            gamma_cov=_opt_float(get("rtf", "gamma_cov", fallback="")),
            eps=parser.getfloat("rtf", "eps", fallback=RtfConfig.eps),
        )
        enhance = EnhanceConfig(stft=stft, beamformer=bf, wpe=wpe, rtf=rtf,
                                mode=get("run", "mode", fallback="adaptive"))
        start = parser.getfloat("run", "eval_start", fallback=DEFAULT_INTERVAL[0])
        end = _opt_float(get("run", "eval_end", fallback=""))
        cfg = RunConfig(
            enhance=enhance,
            preset=get("run", "preset", fallback=RunConfig.preset),
            scenario=get("run", "scenario", fallback="").strip() or None,
            seed=parser.getint("run", "seed", fallback=0),
            out=get("run", "out", fallback=RunConfig.out),
            interval=(start, end),
            sweep_t_gamma=tuple(t / 1000.0 for t in _floats(get("sweep", "t_gamma_ms",
                                                                fallback=_fmt(SWEEP_T_GAMMA_MS)))),
            sweep_p=_floats(get("sweep", "p", fallback=_fmt(SWEEP_P))),
        )
    except ValueError as exc:
        raise ConfigInvalid(f"bad config value: {exc}") from None
    return cfg.validate()


def dump_config(cfg):
    """Fully resolved INI text; loading it back gives an equal configuration."""
    enh = cfg.enhance
    bf = enh.beamformer
    sections = {
        "run": {
            "mode": enh.mode,
            "preset": cfg.preset,
            "scenario": cfg.scenario,
            "seed": cfg.seed,
            "out": cfg.out,
            "eval_start": float(cfg.interval[0]),
            "eval_end": None if cfg.interval[1] is None else float(cfg.interval[1]),
        },
        "stft": {f.name: getattr(enh.stft, f.name) for f in fields(enh.stft)},
        "beamformer": {
            "n_mics": bf.n_mics,
            "filter_len": bf.filter_len,
            "delay": bf.delay,
            "p": float(bf.p),
            "t_gamma_ms": bf.t_gamma * 1000.0,
            "betas_db": tuple(float(b) for b in bf.betas_db),
            "ref_mics": tuple(bf.ref_mics),
            "init_reg_rel": bf.init_reg_rel,
            "init_reg_frames": bf.init_reg_frames,
            "init_reg_fallback": bf.init_reg_fallback,
            "weight_floor_rel": bf.weight_floor_rel,
            "n_irls_iters": bf.n_irls_iters,
        },
        "wpe": {f.name: getattr(enh.wpe, f.name) for f in fields(enh.wpe)},
        "rtf": {f.name: getattr(enh.rtf, f.name) for f in fields(enh.rtf)},
        "sweep": {
            "t_gamma_ms": tuple(t * 1000.0 for t in cfg.sweep_t_gamma),
            "p": tuple(float(p) for p in cfg.sweep_p),
        },
    }
    lines = ["# convbeam run configuration (empty value = inherit from the beamformer)"]
    for name, items in sections.items():
        lines.append(f"\n[{name}]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in items.items())
    return "\n".join(lines) + "\n"


def write_config_echo(cfg, out_dir, name="config.ini"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(dump_config(cfg))
    return path
