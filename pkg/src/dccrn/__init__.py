"""DCCRN: deep complex convolution recurrent network for speech enhancement,
on a small NumPy autodiff engine."""

from .checkpoint import CheckpointError
from .complex import ComplexTensor
from .data import AudioClip, DataError, mix_at_snr, read_wav, write_wav
from .model import DCCRN, VARIANTS, ModelConfig, apply_mask, build, lookahead_ms, parameter_count
from .stft import Stft, StftConfig
from .streaming import StreamingEngine, enhance_stream
from .targets import ComplexMask, crm, si_snr

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "CheckpointError", "ComplexMask", "ComplexTensor", "DCCRN", "DataError", "ModelConfig",
    "Stft", "StftConfig", "StreamingEngine", "VARIANTS", "apply_mask", "build", "crm", "enhance_stream",
    "lookahead_ms", "mix_at_snr", "parameter_count", "read_wav", "si_snr", "write_wav",
]
