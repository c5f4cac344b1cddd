"""Online convolutional beamforming for joint dereverberation and noise reduction.

Modules: ``linalg`` (batched Hermitian helpers), ``stft``, ``scenario``
(synthetic binaural scenes), ``wpe``, ``rtf``, ``beamformer``, ``metrics``,
``pipeline`` (end-to-end enhancement), ``config``, ``io`` and ``cli``.
"""

from .beamformer import BeamformerConfig
from .pipeline import EnhanceConfig, enhance
from .scenario import build_scenario, preset
from .stft import StftConfig, analyze, synthesize

__version__ = "0.1.0"

__all__ = [
    "BeamformerConfig",
    "EnhanceConfig",
    "StftConfig",
    "analyze",
    "build_scenario",
    "enhance",
    "preset",
    "synthesize",
]
