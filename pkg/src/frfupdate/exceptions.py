"""Exception types shared across the package."""


class BundleFormatError(ValueError):
    """Matrix-bundle file is malformed; the message names the offending entry."""


class SolverError(RuntimeError):
    """Harmonic response solve failed (singular or ill-conditioned system)."""

    def __init__(self, message, omega_rad=None):
        super().__init__(message)
        self.omega_rad = omega_rad


class ConditioningError(RuntimeError):
    """Covariance matrix could not be factorized even at maximum jitter."""


class RankDeficiencyError(RuntimeError):
    """Regression normal matrix is rank deficient; more samples are needed."""


class TrainingError(RuntimeError):
    """Meta-model training failed (e.g. objective non-finite everywhere)."""


class OptimizerDivergenceError(RuntimeError):
    """Stochastic optimizer saw non-finite objectives at almost all proposals."""


class DegenerateDistributionError(RuntimeError):
    """Sampling distribution rejects nearly every draw against the clip box."""
