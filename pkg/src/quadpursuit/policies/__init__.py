from .gaussian import (
    HEURISTIC,
    RATE,
    VELOCITY,
    ActResult,
    GaussianPolicy,
    act,
    action_bounds,
    entropy,
    log_prob,
    log_prob_per_dim,
)
from .heuristics import Heuristic, circular_velocity, hover_velocity, repel_velocity
from .mlp import MlpParams, backward, forward, forward_cached
from .records import (
    ChecksumError,
    FormatVersionError,
    ModalityMismatchError,
    PolicyFileError,
    PolicyRecord,
    TruncatedFileError,
    decode_record,
    encode_record,
    load_policy,
    save_policy,
)

__all__ = [
    "HEURISTIC", "RATE", "VELOCITY", "ActResult", "GaussianPolicy", "act", "action_bounds", "entropy",
    "log_prob", "log_prob_per_dim", "Heuristic", "circular_velocity", "hover_velocity", "repel_velocity",
    "MlpParams", "backward", "forward", "forward_cached", "ChecksumError", "FormatVersionError",
    "ModalityMismatchError", "PolicyFileError", "PolicyRecord", "TruncatedFileError", "decode_record",
    "encode_record", "load_policy", "save_policy",
]
