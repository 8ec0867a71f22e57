"""Audio-visual speech enhancement with selective off-screen speech extraction."""

from .errors import ContractError, DataError, NumericalError
from .metrics import (improvement, loss_on_plus_off, sdri, si_sdr_db, si_sdri, snr_db,
                      total_loss, vad_cross_entropy)
from .model import (AVSelectNet, DESK_CONFIG, ModelConfig, PAPER_CONFIG, TINY_CONFIG,
                    build_model, count_parameters, fuse_clues)

__version__ = "0.1.0"
