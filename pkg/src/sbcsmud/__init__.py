"""Sequence-block compressed-sensing multiuser detection for grant-free MC-CDMA."""

from ._version import __version__

from .errors import ConfigurationError, DomainError, OverSaturationError
from .seqdesign import (
    BlockAssignment,
    CoherenceReport,
    SensingMatrix,
    assign_blocks,
    coherence_report,
    correlation_contribution,
    generate_sensing_matrix,
    pairwise_block_correlation,
)
from .modem import (
    CodecConfig,
    SymbolFrame,
    dqpsk_demodulate,
    dqpsk_modulate,
    encode_frame,
    viterbi_decode,
)
from .phy import (
    ActivityVector,
    ChannelRealization,
    Observation,
    assemble_observation,
    draw_activity,
    draw_channel,
    spread_frame,
)
from .detector import (
    DetectionResult,
    StopRule,
    block_residual_correlation,
    brute_force_support_oracle,
    decode_detected,
    ls_estimate,
    sb_gomp,
)
from .simkit import (
    SimConfig,
    SweepResult,
    TrialResult,
    estimate_ber,
    estimate_der,
    run_sweep,
    run_trial,
)
