"""Distortion-free multi-bit token watermarking on the circle.

A k-bit message is spread over n tokens by a random linear code mod p;
each codeword symbol plus a shared secret key picks an angle on the unit
circle, and an optimal-transport coupling biases token choice toward that
angle while keeping the average token distribution exactly unchanged.
The detector strips the shared randomness and recovers the message by
exhaustive minimum-distance decoding.
"""

from .capacity import (
    EncoderTable,
    TwoPointClass,
    brute_force_capacity,
    capacity_closed_form,
    capacity_limit,
    optimal_construction,
    table_mutual_information,
)
from .circle import CircleParams, angular_distance, channel_input, token_angle
from .decoder import (
    DecodeResult,
    DistanceFn,
    bit_accuracy,
    decode,
    identity_distance,
    log_ml_distance,
    recover_symbol_angle,
    score_message,
)
from .embedder import (
    EmbedConfig,
    WatermarkTrace,
    embed_sequence,
    embed_step,
    theorem2_config,
)
from .errors import (
    CapabilityError,
    DecodeFailureError,
    ParameterError,
    ProtocolError,
    SolverError,
    StreamError,
    TieError,
)
from .harness import (
    ExperimentResult,
    ExperimentSpec,
    ResultRow,
    run_accuracy_experiment,
    run_capacity_sweep,
    run_distortion_test,
    run_r_ablation,
)
from .modcode import CodeParams, Codeword, GeneratorMatrix, Message, encode, make_generator
from .sideinfo import MasterKey, StepSecret, derive_step
from .sources import SourceSpec, make_source
from .transport import (
    CostMatrix,
    SolverConfig,
    TokenDistribution,
    TransportPlan,
    build_cost,
    conditional,
    solve_plan,
    solve_plan_twopoint,
)

__version__ = "0.1.0"
