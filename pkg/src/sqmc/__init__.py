"""Sequential quasi-Monte Carlo filtering and smoothing for state-space models."""

from .filtering import (
    ParticleHistory,
    estimate_log_likelihood,
    filtered_means,
    inverse_cdf_resample,
    run_smc,
    run_sqmc,
    systematic_resample,
)
from .hilbert import HilbertMap, hilbert_sort, index_to_cell_center, point_to_index
from .models import (
    FeynmanKacModel,
    GaussianKernel,
    LGParams,
    StateRescaler,
    SVParams,
    build_model,
    kalman_filter,
    kalman_smoother,
    load_config,
    make_lg_model,
    make_sv_model,
    simulate_lg_data,
    simulate_sv_data,
)
from .pointsets import (
    PointSet,
    generate_iid,
    generate_sobol,
    measure_extreme_discrepancy,
    sort_by_first_coordinate,
)
from .smoothing import (
    SmoothingWeights,
    TrajectorySet,
    backward_sampling,
    forward_smoothing,
    marginal_backward_weights,
    marginal_smoothing_estimate,
    prepare_backward_input,
    smoothing_estimate,
)

__version__ = "0.1.0"
