"""Channel-imposed fusion (CIF) and the HM-BiTCN classifier on a small numpy autograd."""

from .cif import CifConfig, apply_cif, apply_psf
from .model import HmBiTcn, HmBiTcnConfig
from .snr import SignalModel, classify_mode, theoretical_gain

__all__ = [
    "CifConfig",
    "HmBiTcn",
    "HmBiTcnConfig",
    "SignalModel",
    "apply_cif",
    "apply_psf",
    "classify_mode",
    "theoretical_gain",
]
__version__ = "0.1.0"
