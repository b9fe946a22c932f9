"""Frequency-response based structural model updating.

Identifies segment-wise stiffness/mass variation coefficients of a
linear structural model by minimizing frequency-response discrepancies,
steering the search with an adaptively retrained multi-response Gaussian
process surrogate.
"""

from .accel import backend_name
from .analysis import CorrelationMap, RobustnessSummary, correlation_map, pearson, robustness_study
from .errors import (Measurement, ResponseErrorRecord, error_vector, local_error,
                     make_record, overall_error, read_measurement_csv,
                     synthesize_measurement, write_measurement_csv)
from .fem import (FrequencyGrid, ParameterPoint, Segment, StructuralModel,
                  SystemMatrices, apply_parameters, frf_amplitudes, frf_response,
                  generate_chain_model, load_matrix_bundle, natural_frequencies,
                  save_matrix_bundle)
from .mrgp import (Hyperparameters, MrgpModel, Posterior, TrainingSet, covariance,
                   fit_at, fit_beta, fit_q, log_likelihood, predict, predict_epsilon,
                   train)
from .optim import Bounds, PsoConfig, SaoConfig, pso_minimize, sao_minimize
from .updating import (SamplingDistribution, Scenario, UpdateConfig, UpdateResult,
                       evaluate_batch, narrow_distribution, run_conventional,
                       run_update, sample_initial, sample_surface, select_candidates)

__version__ = "0.1.0"
