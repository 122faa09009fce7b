"""Phase-noise-impaired massive MIMO uplink simulation lab."""

__version__ = "0.1.0"

from .bcrb import (  # noqa: F401
    assemble_and_bound,
    bcrb_bound,
    build_blocks,
    build_m0y,
    incidence_matrix,
    jacobian,
)
from .channel import (  # noqa: F401
    EstimatedChannel,
    SystemConfig,
    apply_channel,
    average_tx_energy,
    block_pair,
    block_rx,
    block_tx,
    estimate_channel,
    gen_rician,
    snr_db_to_sigma2,
)
from .em_receiver import (  # noqa: F401
    FrameResult,
    OperationCounts,
    ReceiverConfig,
    count_ops,
    demodulate_slot,
    demodulate_slots,
    lmmse_filter,
    receive_frame,
    sum_phase_mse,
)
from .framing import FrameCodec, FrameLayout, FrameTruth, build_layout, draw_pilot_symbols  # noqa: F401
from .modem_fec import LdpcCode, Qam64, default_code, ldpc_decode, ldpc_encode, qam_demap_llr, qam_map  # noqa: F401
from .phase_estimator import (  # noqa: F401
    DetectResult,
    SdConfig,
    armijo_first_step,
    bb_step,
    detect_phases,
    gradient,
    interpolate_init,
    objective,
    pilot_coarse_estimate,
    sum_to_atomic_ls,
)
from .pn_process import PnConfig, atomic_to_sum, gen_mask, gen_wiener, wrap_phase  # noqa: F401
from .sim_harness import (  # noqa: F401
    DESK_PRESET,
    PAPER_PRESET,
    ConfigError,
    ExperimentConfig,
    MetricRow,
    parse_config,
    parse_config_dict,
    run_experiment,
    serialize_config,
    summarize,
)
