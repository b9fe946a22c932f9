"""Multi-response Gaussian process meta-model over parameter space.

The prior couples a linear mean (constant plus linear basis), an
isotropic squared-exponential input kernel, and an inter-response
correlation matrix.  Both the regression matrix and the response
correlation have closed-form optima given the kernel hyperparameters, so
training reduces to a stochastic search over (signal std, lengthscale)
on the profiled log-likelihood.

Note the kernel uses ``exp(-d^2 / (2 l))`` with ``2 l`` (not ``2 l^2``)
in the denominator, so ``lengthscale`` here is a squared-lengthscale-like
quantity.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from threadpoolctl import threadpool_limits

from . import accel
from .errors import Measurement
from .exceptions import (ConditioningError, OptimizerDivergenceError,
                         RankDeficiencyError, TrainingError)

log = logging.getLogger(__name__)

BASE_JITTER_REL = 1e-10
MAX_JITTER_REL = 1e-4

__all__ = [
    "Hyperparameters",
    "TrainingSet",
    "MrgpModel",
    "Posterior",
    "covariance",
    "basis",
    "fit_beta",
    "fit_q",
    "log_likelihood",
    "train",
    "fit_at",
    "predict",
    "predict_epsilon",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class Hyperparameters:
    """Kernel hyperparameters: signal variance, lengthscale, noise variance."""

    sigma_f_sq: float
    lengthscale: float
    sigma_n_sq: float = 0.0

    def __post_init__(self):
        if self.sigma_f_sq <= 0 or self.lengthscale <= 0:
            raise ValueError("sigma_f_sq and lengthscale must be positive")
        if self.sigma_n_sq < 0:
            raise ValueError("sigma_n_sq must be >= 0")


@dataclass(frozen=True)
class TrainingSet:
    """Sampled parameter vectors with their response discrepancy vectors."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        r, d = x.shape
        if y.shape[0] != r:
            raise ValueError(f"inputs have {r} rows but outputs have {y.shape[0]}")
        if r < d + 2:
            raise ValueError(f"need at least d + 2 = {d + 2} samples, got {r}")
        d2 = _np_sq_dists(x)
        d2[np.diag_indices_from(d2)] = np.inf
        if d2.min() < 1e-24:
            raise ValueError("duplicate input rows (closer than 1e-12)")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)

    @property
    def n_samples(self):
        return self.inputs.shape[0]

    @property
    def n_inputs(self):
        return self.inputs.shape[1]

    @property
    def n_outputs(self):
        return self.outputs.shape[1]


def _np_sq_dists(x):
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    return np.maximum(d2, 0.0)


def _jitter_ladder():
    ladder = []
    jit = BASE_JITTER_REL
    while jit <= MAX_JITTER_REL * (1 + 1e-12):
        ladder.append(jit)
        jit *= 10.0
    return ladder


def covariance(xi, xj, h: Hyperparameters, same_sample: bool = False) -> float:
    """Squared-exponential kernel between two parameter vectors.

    The noise term applies only when the two arguments are the same
    sample (the Gram diagonal), which equal coordinates alone cannot
    establish, hence the explicit flag.
    """
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    if xi.shape != xj.shape:
        raise ValueError("inputs must have equal dimension")
    d2 = float(np.sum((xi - xj) ** 2))
    k = h.sigma_f_sq * np.exp(-d2 / (2.0 * h.lengthscale))
    if same_sample:
        k += h.sigma_n_sq
    return float(k)


def basis(x: np.ndarray) -> np.ndarray:
    """Linear regression basis: a column of ones then the coordinates."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _whiten(sigma, h_mat, y):
    try:
        lo = cholesky(sigma, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise ConditioningError("covariance matrix is not positive definite") from None
    a = solve_triangular(lo, h_mat, lower=True, check_finite=False)
    b = solve_triangular(lo, y, lower=True, check_finite=False)
    return lo, a, b


def fit_beta(h_mat: np.ndarray, sigma: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Generalized least squares regression matrix under covariance ``sigma``."""
    _, a, b = _whiten(sigma, h_mat, y)
    g = a.T @ a
    try:
        g_chol = cholesky(g, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError(
            "basis normal matrix is rank deficient; add more training samples"
        ) from None
    return cho_solve((g_chol, True), a.T @ b, check_finite=False)


def fit_q(y: np.ndarray, h_mat: np.ndarray, beta: np.ndarray,
          sigma: np.ndarray) -> np.ndarray:
    """Inter-response correlation matrix from the regression residual."""
    r = y.shape[0]
    resid = y - h_mat @ beta
    lo = cholesky(sigma, lower=True, check_finite=False)
    white = solve_triangular(lo, resid, lower=True, check_finite=False)
    q = white.T @ white / r
    return 0.5 * (q + q.T)


def _profiled_nll_with_jitter(d2, h_mat, y, sf2, ell, sigma_n_sq):
    for jit in _jitter_ladder():
        ok, nll = accel.profiled_nll(d2, h_mat, y, sf2, ell,
                                     sigma_n_sq + jit * sf2)
        if ok:
            return nll, jit * sf2
    raise ConditioningError(
        f"covariance not factorizable at maximum jitter {MAX_JITTER_REL:g}*sigma_f^2"
    )


def log_likelihood(ts: TrainingSet, h: Hyperparameters) -> float:
    """Profiled log-likelihood of the training set at fixed hyperparameters.

    The regression matrix and response correlation are profiled out.
    With fewer samples than response channels the profiled correlation
    matrix is singular; the density is then evaluated on its support
    (eigenvalues below 1e-12 x trace/q are dropped and the effective
    channel count replaces the nominal one), which keeps the value
    finite and free of spurious trends from the null space.
    """
    d2 = accel.pairwise_sq_dists(np.ascontiguousarray(ts.inputs))
    h_mat = basis(ts.inputs)
    nll, _ = _profiled_nll_with_jitter(d2, h_mat, ts.outputs,
                                       h.sigma_f_sq, h.lengthscale, h.sigma_n_sq)
    return -nll


@dataclass(frozen=True)
class MrgpModel:
    """Trained meta-model; immutable and safe for concurrent prediction."""

    hypers: Hyperparameters
    beta_hat: np.ndarray
    q_hat: np.ndarray
    train_inputs: np.ndarray
    train_outputs: np.ndarray
    norm_lo: np.ndarray
    norm_span: np.ndarray
    chol_sigma: np.ndarray
    sigma_inv_resid: np.ndarray
    jitter: float

    @property
    def n_inputs(self):
        return self.train_inputs.shape[1]

    def _normalize(self, x):
        return (np.atleast_2d(np.asarray(x, dtype=float)) - self.norm_lo) / self.norm_span


@dataclass(frozen=True)
class Posterior:
    """Posterior mean rows and the shared pointwise covariance scale.

    The full per-point covariance over responses is ``q_hat * scale_i``.
    """

    mean: np.ndarray
    pointwise_scale: np.ndarray
    q_hat: np.ndarray

    def covariance(self, i: int) -> np.ndarray:
        return self.q_hat * self.pointwise_scale[i]


def _norm_params(norm_box, x):
    if norm_box is None:
        return np.zeros(x.shape[1]), np.ones(x.shape[1])
    box = np.asarray(norm_box, dtype=float)
    if box.shape != (x.shape[1], 2):
        raise ValueError(f"norm_box must have shape ({x.shape[1]}, 2)")
    lo = box[:, 0]
    span = box[:, 1] - box[:, 0]
    if np.any(span <= 0):
        raise ValueError("norm_box must have positive extent in every coordinate")
    return lo, span


def train(ts: TrainingSet, optimizer, bounds, seed: int, *,
          sigma_n_sq: float = 0.0, norm_box=None) -> MrgpModel:
    """Fit hyperparameters by stochastic search on the profiled likelihood.

    ``optimizer`` is a callable ``(objective, bounds, seed) ->
    (point, value, n_evals)`` minimizing over ``[sigma_f, lengthscale]``
    within ``bounds``.  ``norm_box`` maps inputs to the unit cube before
    the kernel is applied (None keeps raw coordinates).  Deterministic
    for a given seed.
    """
    lo, span = _norm_params(norm_box, ts.inputs)
    xn = np.ascontiguousarray((ts.inputs - lo) / span)
    h_mat = basis(xn)
    y = np.ascontiguousarray(ts.outputs)
    d2 = accel.pairwise_sq_dists(xn)
    ladder = _jitter_ladder()

    def objective(v):
        sf, ell = v
        if sf <= 0.0 or ell <= 0.0:
            return np.inf
        sf2 = sf * sf
        for jit in ladder:
            ok, nll = accel.profiled_nll(d2, h_mat, y, sf2, ell,
                                         sigma_n_sq + jit * sf2)
            if ok:
                return nll
        return np.inf

    # Small dense factorizations dominate here; BLAS threading only hurts.
    try:
        with threadpool_limits(limits=1):
            best, best_val, n_evals = optimizer(objective, bounds, seed)
    except OptimizerDivergenceError as exc:
        raise TrainingError(f"hyperparameter search diverged: {exc}") from exc
    if not np.isfinite(best_val):
        raise TrainingError("objective non-finite everywhere the optimizer looked")
    log.debug("hyperparameter search: %d evaluations, best nll %.6g", n_evals, best_val)

    hypers = Hyperparameters(sigma_f_sq=float(best[0]) ** 2,
                             lengthscale=float(best[1]),
                             sigma_n_sq=sigma_n_sq)
    return _assemble(ts, hypers, lo, span, xn, h_mat, d2)


def fit_at(ts: TrainingSet, hypers: Hyperparameters, norm_box=None) -> MrgpModel:
    """Assemble a model at fixed hyperparameters (no search)."""
    lo, span = _norm_params(norm_box, ts.inputs)
    xn = np.ascontiguousarray((ts.inputs - lo) / span)
    h_mat = basis(xn)
    d2 = accel.pairwise_sq_dists(xn)
    return _assemble(ts, hypers, lo, span, xn, h_mat, d2)


def _assemble(ts, hypers, lo, span, xn, h_mat, d2):
    sf2 = hypers.sigma_f_sq
    sigma_base = accel.kernel_from_sq_dists(d2, sf2, hypers.lengthscale)
    last_exc = None
    for jit in _jitter_ladder():
        sigma = sigma_base.copy()
        sigma[np.diag_indices_from(sigma)] += hypers.sigma_n_sq + jit * sf2
        try:
            chol = cholesky(sigma, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            last_exc = exc
            continue
        a = solve_triangular(chol, h_mat, lower=True, check_finite=False)
        b = solve_triangular(chol, ts.outputs, lower=True, check_finite=False)
        g = a.T @ a
        try:
            g_chol = cholesky(g, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise RankDeficiencyError(
                "basis normal matrix is rank deficient; add more training samples"
            ) from None
        beta = cho_solve((g_chol, True), a.T @ b, check_finite=False)
        white = b - a @ beta
        q_hat = white.T @ white / ts.n_samples
        q_hat = 0.5 * (q_hat + q_hat.T)
        resid = ts.outputs - h_mat @ beta
        sigma_inv_resid = cho_solve((chol, True), resid, check_finite=False)
        return MrgpModel(
            hypers=hypers, beta_hat=beta, q_hat=q_hat,
            train_inputs=ts.inputs.copy(), train_outputs=ts.outputs.copy(),
            norm_lo=lo, norm_span=span, chol_sigma=chol,
            sigma_inv_resid=sigma_inv_resid, jitter=jit * sf2,
        )
    raise ConditioningError(
        f"covariance not factorizable at maximum jitter {MAX_JITTER_REL:g}*sigma_f^2"
    ) from last_exc


def _predict_mean(model: MrgpModel, queries):
    qn = model._normalize(queries)
    if qn.shape[1] != model.n_inputs:
        raise ValueError(f"query dimension {qn.shape[1]} != training dimension {model.n_inputs}")
    xn = (model.train_inputs - model.norm_lo) / model.norm_span
    d2c = accel.cross_sq_dists(np.ascontiguousarray(qn), np.ascontiguousarray(xn))
    sig_star = accel.kernel_from_sq_dists(d2c, model.hypers.sigma_f_sq,
                                          model.hypers.lengthscale)
    mean = basis(qn) @ model.beta_hat + sig_star @ model.sigma_inv_resid
    return mean, sig_star


def predict(model: MrgpModel, queries) -> Posterior:
    """Posterior mean and pointwise covariance scale at query points."""
    mean, sig_star = _predict_mean(model, queries)
    v = solve_triangular(model.chol_sigma, sig_star.T, lower=True, check_finite=False)
    prior_var = model.hypers.sigma_f_sq + model.hypers.sigma_n_sq
    scale = prior_var - np.einsum("ij,ij->j", v, v)
    np.maximum(scale, 0.0, out=scale)
    return Posterior(mean=mean, pointwise_scale=scale, q_hat=model.q_hat)


def predict_epsilon(model: MrgpModel, queries, meas: Measurement) -> np.ndarray:
    """Overall error of each predicted mean discrepancy row; the ranking surface."""
    mean, _ = _predict_mean(model, queries)
    ubar = meas.flat_amplitudes
    if mean.shape[1] != ubar.size:
        raise ValueError(f"model predicts {mean.shape[1]} responses, measurement has {ubar.size}")
    return np.abs(mean / ubar).mean(axis=1)


# ---------------------------------------------------------------------------
# model dump

_MAGIC = b"MRGP1\n"


def save_model(model: MrgpModel, path) -> None:
    """Serialize a trained model (magic header 'MRGP1' plus npy blocks)."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        scalars = np.array([model.hypers.sigma_f_sq, model.hypers.lengthscale,
                            model.hypers.sigma_n_sq, model.jitter])
        for arr in (scalars, model.train_inputs, model.train_outputs,
                    model.norm_lo, model.norm_span, model.beta_hat, model.q_hat):
            np.save(fh, arr)


def load_model(path) -> MrgpModel:
    """Load a model dump and rebuild the cached factorizations."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a model dump (bad magic {magic!r})")
        scalars = np.load(fh)
        x = np.load(fh)
        y = np.load(fh)
        lo = np.load(fh)
        span = np.load(fh)
        beta = np.load(fh)
        q_hat = np.load(fh)
    hypers = Hyperparameters(sigma_f_sq=float(scalars[0]),
                             lengthscale=float(scalars[1]),
                             sigma_n_sq=float(scalars[2]))
    ts = TrainingSet(inputs=x, outputs=y)
    xn = (x - lo) / span
    h_mat = basis(xn)
    d2 = accel.pairwise_sq_dists(np.ascontiguousarray(xn))
    rebuilt = _assemble(ts, hypers, lo, span, xn, h_mat, d2)
    if not np.allclose(rebuilt.beta_hat, beta, rtol=1e-8, atol=1e-10):
        log.warning("%s: stored regression matrix differs from rebuilt one", path)
    return rebuilt
