"""Adaptive model-updating loop: sample, evaluate, retrain, narrow, repeat.

One iteration trains the meta-model on the full archive of evaluated
points, predicts the error surface over a large cloud of parameter
samples drawn from the current sampling distribution, selects the most
promising well-separated candidates for exact evaluation, and refits the
sampling distribution around the elite archive points.  The loop exits
as soon as any evaluated point beats the error threshold (skipping the
final retraining) or when the iteration budget is exhausted.
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import mrgp
from .errors import Measurement, ResponseErrorRecord, frf_amplitudes, make_record
from .exceptions import DegenerateDistributionError, SolverError
from .fem import FrequencyGrid, ParameterPoint, StructuralModel
from .optim import Bounds, PsoConfig, SaoConfig, pso_minimize, sao_minimize

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8  # (1e-4)^2, keeps the narrowed space searchable

__all__ = [
    "UpdateConfig",
    "SamplingDistribution",
    "IterationRecord",
    "UpdateState",
    "UpdateResult",
    "Scenario",
    "sample_initial",
    "evaluate_batch",
    "select_candidates",
    "narrow_distribution",
    "sample_surface",
    "run_update",
    "run_conventional",
    "write_history_csv",
    "write_result_json",
]


@dataclass(frozen=True)
class UpdateConfig:
    """Operating parameters of the adaptive updating loop."""

    q_initial: int = 20
    s_per_iter: int = 20
    z_elite: int = 20
    w_surface: int = 10_000
    epsilon_threshold: float = 0.01
    max_iterations: int = 25
    initial_box: tuple = (-1.0, 1.0)
    min_candidate_separation: float = 0.1
    optimizer_choice: str = "sao"
    seed: int = 0
    update_mass: bool = False
    sao: SaoConfig = field(default_factory=lambda: SaoConfig(initial_point=(1.0, 1.0)))
    pso: PsoConfig = field(default_factory=PsoConfig)
    sigma_f_bounds: tuple = (0.0, 10.0)
    lengthscale_upper_initial: float = 10.0
    lengthscale_upper_factor: float = 10.0
    sigma_n_sq: float = 0.0
    threads: int = 1

    def __post_init__(self):
        for name in ("q_initial", "s_per_iter", "z_elite", "w_surface", "max_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epsilon_threshold <= 0:
            raise ValueError("epsilon_threshold must be positive")
        if self.min_candidate_separation < 0:
            raise ValueError("min_candidate_separation must be >= 0")
        if self.optimizer_choice.lower() not in ("sao", "pso"):
            raise ValueError("optimizer_choice must be 'sao' or 'pso'")

    def box_for(self, n_params: int) -> np.ndarray:
        """Initial search box expanded to (n_params, 2)."""
        box = np.asarray(self.initial_box, dtype=float)
        if box.shape == (2,):
            box = np.tile(box, (n_params, 1))
        if box.shape != (n_params, 2) or np.any(box[:, 0] >= box[:, 1]):
            raise ValueError("initial_box must be a (lo, hi) pair or a (d, 2) array")
        return box


@dataclass(frozen=True)
class SamplingDistribution:
    """Current parameter sampling distribution with a physical clip box.

    Uniform over a box initially; an independent per-coordinate normal
    after the first narrowing.  Clip lower edges are open (coefficients
    must stay above -1).
    """

    kind: str
    clip_box: np.ndarray
    box: np.ndarray = None
    mean: np.ndarray = None
    var: np.ndarray = None

    def __post_init__(self):
        clip = np.asarray(self.clip_box, dtype=float)
        object.__setattr__(self, "clip_box", clip)
        if self.kind == "uniform":
            box = np.asarray(self.box, dtype=float)
            if box.ndim != 2 or np.any(box[:, 0] >= box[:, 1]):
                raise ValueError("uniform distribution needs a nonempty box")
            object.__setattr__(self, "box", box)
        elif self.kind == "normal":
            mean = np.asarray(self.mean, dtype=float)
            var = np.asarray(self.var, dtype=float)
            if np.any(var <= 0):
                raise ValueError("normal distribution needs positive variances")
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "var", var)
        else:
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    def moments(self):
        """Per-coordinate mean and variance (uniform: center and width^2/12)."""
        if self.kind == "uniform":
            width = self.box[:, 1] - self.box[:, 0]
            return 0.5 * (self.box[:, 0] + self.box[:, 1]), width**2 / 12.0
        return self.mean.copy(), self.var.copy()

    def search_box(self) -> np.ndarray:
        """Box covering the active search region (normal: mean +/- 3 sigma, clipped)."""
        if self.kind == "uniform":
            return self.box.copy()
        sd = np.sqrt(self.var)
        lo = np.maximum(self.mean - 3.0 * sd, self.clip_box[:, 0])
        hi = np.minimum(self.mean + 3.0 * sd, self.clip_box[:, 1])
        bad = lo >= hi
        lo[bad] = self.clip_box[bad, 0]
        hi[bad] = self.clip_box[bad, 1]
        return np.stack([lo, hi], axis=1)


@dataclass(frozen=True)
class IterationRecord:
    """Per-iteration summary of the loop state."""

    iteration: int
    best_epsilon: float
    best_local_errors: np.ndarray
    dist_mean: np.ndarray
    dist_var: np.ndarray
    train_seconds: float
    jitter: float
    fe_evaluations: int


@dataclass
class UpdateState:
    """Mutable loop state: archive, sampling distribution, counters."""

    archive: list
    distribution: SamplingDistribution
    iteration: int
    best: ResponseErrorRecord
    history: list


@dataclass(frozen=True)
class UpdateResult:
    """Outcome of an updating run."""

    identified_theta: ParameterPoint
    final_epsilon: float
    converged: bool
    iterations: int
    fe_evaluations: int
    history: tuple


@dataclass(frozen=True)
class Scenario:
    """Bundle of everything one updating run needs."""

    model: StructuralModel
    measurement: Measurement
    grid: FrequencyGrid
    config: UpdateConfig


def _n_params(model: StructuralModel, update_mass: bool) -> int:
    return model.n_segments * (2 if update_mass else 1)


def _theta_vector(theta: ParameterPoint, update_mass: bool) -> np.ndarray:
    if update_mass:
        return np.concatenate([theta.alpha, theta.gamma])
    return theta.alpha.copy()


def _draw_uniform(rng, box, n):
    d = box.shape[0]
    draws = rng.uniform(box[:, 0], box[:, 1], size=(n, d))
    # lower edges are open; redraw the measure-zero exact hits
    for _ in range(100):
        bad = draws <= box[:, 0]
        if not bad.any():
            break
        draws[bad] = rng.uniform(np.broadcast_to(box[:, 0], draws.shape)[bad],
                                 np.broadcast_to(box[:, 1], draws.shape)[bad])
    return draws


def sample_initial(cfg: UpdateConfig, n_params: int) -> np.ndarray:
    """Uniform initial parameter samples over the full search box."""
    box = cfg.box_for(n_params)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    return _draw_uniform(rng, box, cfg.q_initial)


def evaluate_batch(model: StructuralModel, thetas: np.ndarray, meas: Measurement,
                   grid: FrequencyGrid, update_mass: bool = False,
                   threads: int = 1) -> list:
    """Exact FE evaluation of each parameter row; order preserved.

    Rows whose harmonic solve fails are logged and dropped (never expected
    on well-posed models within the clip box).
    """
    if not np.allclose(meas.grid.freqs_hz, grid.freqs_hz):
        raise ValueError("measurement grid does not match the evaluation grid")
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    m = model.n_segments

    def one(row):
        theta = ParameterPoint.from_vector(row, m, update_mass)
        try:
            sim = frf_amplitudes(model, theta, grid)
        except (SolverError, np.linalg.LinAlgError) as exc:
            log.warning("FE evaluation failed at %s: %s", np.array2string(row), exc)
            return None
        return make_record(theta, sim, meas)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, thetas))
    else:
        results = [one(row) for row in thetas]
    return [rec for rec in results if rec is not None]


def select_candidates(predicted_eps: np.ndarray, surface_points: np.ndarray,
                      s: int, min_sep: float, norm_box=None) -> np.ndarray:
    """Pick the s lowest-predicted-error points subject to mutual separation.

    Greedy sweep in ascending predicted error; a point is accepted only
    if its Euclidean distance (in box-normalized coordinates) to every
    accepted point is at least ``min_sep``.  If the sweep accepts fewer
    than ``s``, the threshold is halved and the sweep resumes over the
    rejected points, repeating until ``s`` are found.
    """
    predicted_eps = np.asarray(predicted_eps, dtype=float)
    pts = np.atleast_2d(np.asarray(surface_points, dtype=float))
    w = pts.shape[0]
    if predicted_eps.shape != (w,):
        raise ValueError("predicted_eps length must match surface_points rows")
    if s > w:
        raise ValueError(f"cannot select {s} candidates from {w} points")
    if norm_box is not None:
        box = np.asarray(norm_box, dtype=float)
        norm = (pts - box[:, 0]) / (box[:, 1] - box[:, 0])
    else:
        norm = pts
    order = list(np.argsort(predicted_eps, kind="stable"))
    accepted = []
    accepted_norm = []
    threshold = float(min_sep)
    pending = order
    while len(accepted) < s:
        rejected = []
        for idx in pending:
            if len(accepted) >= s:
                break
            if accepted_norm:
                dists = np.linalg.norm(np.asarray(accepted_norm) - norm[idx], axis=1)
                if dists.min() < threshold:
                    rejected.append(idx)
                    continue
            accepted.append(idx)
            accepted_norm.append(norm[idx])
        if len(accepted) >= s:
            break
        if not rejected:
            raise ValueError(f"fewer than {s} distinct surface points available")
        if threshold < 1e-300:
            raise ValueError(f"fewer than {s} distinct surface points available")
        threshold *= 0.5
        pending = rejected
    return pts[accepted]


def narrow_distribution(archive, z: int, clip_box, update_mass: bool = False) -> SamplingDistribution:
    """Independent-normal distribution fitted to the z lowest-error points."""
    if len(archive) < z:
        raise ValueError(f"archive has {len(archive)} records, need {z}")
    order = sorted(range(len(archive)), key=lambda i: (archive[i].epsilon, i))
    elite = np.stack([_theta_vector(archive[i].theta, update_mass) for i in order[:z]])
    mean = elite.mean(axis=0)
    var = elite.var(axis=0, ddof=1) if z > 1 else np.zeros(elite.shape[1])
    var = np.maximum(var, VARIANCE_FLOOR)
    return SamplingDistribution(kind="normal", clip_box=np.asarray(clip_box, dtype=float),
                                mean=mean, var=var)


def sample_surface(dist: SamplingDistribution, w: int, seed) -> np.ndarray:
    """Draw w parameter samples; normal draws are re-drawn per coordinate
    until inside the clip box."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if dist.kind == "uniform":
        return _draw_uniform(rng, dist.box, w)
    sd = np.sqrt(dist.var)
    lo = dist.clip_box[:, 0]
    hi = dist.clip_box[:, 1]
    draws = dist.mean + sd * rng.standard_normal((w, dist.mean.size))
    attempts = 0
    last_redrawn = draws.size
    while True:
        bad = (draws <= lo) | (draws > hi)
        n_bad = int(bad.sum())
        if n_bad == 0:
            return draws
        attempts += 1
        if attempts >= 20 and n_bad > 0.999 * last_redrawn:
            raise DegenerateDistributionError(
                "sampling distribution rejects more than 99.9% of draws"
            )
        if attempts > 10_000:
            raise DegenerateDistributionError("clip-box rejection did not terminate")
        last_redrawn = n_bad
        mean_b = np.broadcast_to(dist.mean, draws.shape)
        sd_b = np.broadcast_to(sd, draws.shape)
        draws[bad] = mean_b[bad] + sd_b[bad] * rng.standard_normal(n_bad)


def _make_optimizer(cfg: UpdateConfig):
    choice = cfg.optimizer_choice.lower()
    if choice == "sao":
        return lambda obj, bounds, seed: sao_minimize(obj, bounds, cfg.sao, seed)
    return lambda obj, bounds, seed: pso_minimize(obj, bounds, cfg.pso, seed)


def _hyper_bounds(cfg: UpdateConfig, lengthscale_upper: float) -> Bounds:
    return Bounds(
        lower=np.array([cfg.sigma_f_bounds[0], 0.0]),
        upper=np.array([cfg.sigma_f_bounds[1], lengthscale_upper]),
        lower_open=np.array([True, True]),
    )


def _child_seed(seed_seq) -> int:
    return int(seed_seq.spawn(1)[0].generate_state(1, np.uint32)[0])


def _record_history(state, train_seconds, jitter, fe_evals):
    mean, var = state.distribution.moments()
    state.history.append(IterationRecord(
        iteration=state.iteration,
        best_epsilon=state.best.epsilon,
        best_local_errors=state.best.local_errors.copy(),
        dist_mean=mean,
        dist_var=var,
        train_seconds=train_seconds,
        jitter=jitter,
        fe_evaluations=fe_evals,
    ))


def _result(state, cfg, fe_evals):
    return UpdateResult(
        identified_theta=state.best.theta,
        final_epsilon=state.best.epsilon,
        converged=state.best.epsilon < cfg.epsilon_threshold,
        iterations=state.iteration,
        fe_evaluations=fe_evals,
        history=tuple(state.history),
    )


def run_update(model: StructuralModel, meas: Measurement, grid: FrequencyGrid,
               cfg: UpdateConfig) -> UpdateResult:
    """Run the full adaptive updating loop; bit-reproducible per seed."""
    d = _n_params(model, cfg.update_mass)
    box = cfg.box_for(d)
    clip = box.copy()
    seed_seq = np.random.SeedSequence(cfg.seed)

    rng_init = np.random.default_rng(seed_seq.spawn(1)[0])
    x0 = _draw_uniform(rng_init, box, cfg.q_initial)
    archive = evaluate_batch(model, x0, meas, grid, cfg.update_mass, cfg.threads)
    fe_evals = x0.shape[0]
    if not archive:
        raise RuntimeError("every initial FE evaluation failed")
    state = UpdateState(
        archive=archive,
        distribution=SamplingDistribution(kind="uniform", clip_box=clip, box=box),
        iteration=0,
        best=min(archive, key=lambda rec: rec.epsilon),
        history=[],
    )
    _record_history(state, 0.0, 0.0, fe_evals)
    if state.best.epsilon < cfg.epsilon_threshold:
        return _result(state, cfg, fe_evals)

    optimizer = _make_optimizer(cfg)
    lengthscale_upper = cfg.lengthscale_upper_initial
    min_sep = cfg.min_candidate_separation * np.sqrt(d)

    while state.iteration < cfg.max_iterations:
        state.iteration += 1
        ts = mrgp.TrainingSet(
            inputs=np.stack([_theta_vector(r.theta, cfg.update_mass) for r in state.archive]),
            outputs=np.stack([r.delta_u for r in state.archive]),
        )
        search_box = state.distribution.search_box()
        t0 = time.perf_counter()
        meta = mrgp.train(ts, optimizer, _hyper_bounds(cfg, lengthscale_upper),
                          _child_seed(seed_seq), sigma_n_sq=cfg.sigma_n_sq,
                          norm_box=search_box)
        train_seconds = time.perf_counter() - t0
        # floored at the initial bound: an early near-zero optimum must not
        # shrink the search box below the useful lengthscale range for good
        lengthscale_upper = max(cfg.lengthscale_upper_factor * meta.hypers.lengthscale,
                                cfg.lengthscale_upper_initial)
        log.info("iteration %d: trained on %d points in %.2f s (jitter %.3g, l=%.4g)",
                 state.iteration, ts.n_samples, train_seconds, meta.jitter,
                 meta.hypers.lengthscale)

        surface = sample_surface(state.distribution, cfg.w_surface,
                                 _child_seed(seed_seq))
        eps_pred = mrgp.predict_epsilon(meta, surface, meas)
        candidates = select_candidates(eps_pred, surface, cfg.s_per_iter,
                                       min_sep, norm_box=search_box)
        new_records = evaluate_batch(model, candidates, meas, grid,
                                     cfg.update_mass, cfg.threads)
        fe_evals += candidates.shape[0]
        state.archive.extend(new_records)
        state.best = min(state.archive, key=lambda rec: rec.epsilon)
        _record_history(state, train_seconds, meta.jitter, fe_evals)
        log.info("iteration %d: best overall error %.4g (%d FE evaluations)",
                 state.iteration, state.best.epsilon, fe_evals)
        if state.best.epsilon < cfg.epsilon_threshold:
            break
        state.distribution = narrow_distribution(state.archive, cfg.z_elite,
                                                 clip, cfg.update_mass)
    return _result(state, cfg, fe_evals)


def run_conventional(model: StructuralModel, meas: Measurement, grid: FrequencyGrid,
                     n_train: int = 300, n_surface: int = 10_000,
                     cfg: UpdateConfig = UpdateConfig()) -> UpdateResult:
    """Single-shot baseline: one meta-model from one random training set.

    The training points are drawn without replacement from the surface
    cloud; the solution is the surface point with the lowest predicted
    error, verified by one exact FE evaluation.
    """
    if n_train > n_surface:
        raise ValueError("n_train cannot exceed n_surface")
    d = _n_params(model, cfg.update_mass)
    box = cfg.box_for(d)
    seed_seq = np.random.SeedSequence(cfg.seed)
    rng = np.random.default_rng(seed_seq.spawn(1)[0])
    surface = _draw_uniform(rng, box, n_surface)
    train_idx = rng.choice(n_surface, size=n_train, replace=False)
    archive = evaluate_batch(model, surface[train_idx], meas, grid,
                             cfg.update_mass, cfg.threads)
    fe_evals = n_train
    if not archive:
        raise RuntimeError("every FE evaluation failed")
    ts = mrgp.TrainingSet(
        inputs=np.stack([_theta_vector(r.theta, cfg.update_mass) for r in archive]),
        outputs=np.stack([r.delta_u for r in archive]),
    )
    t0 = time.perf_counter()
    meta = mrgp.train(ts, _make_optimizer(cfg),
                      _hyper_bounds(cfg, cfg.lengthscale_upper_initial),
                      _child_seed(seed_seq), sigma_n_sq=cfg.sigma_n_sq, norm_box=box)
    train_seconds = time.perf_counter() - t0
    eps_pred = mrgp.predict_epsilon(meta, surface, meas)
    best_idx = int(np.argmin(eps_pred))
    verify = evaluate_batch(model, surface[best_idx:best_idx + 1], meas, grid,
                            cfg.update_mass, cfg.threads)
    fe_evals += 1
    if not verify:
        raise RuntimeError("verification FE evaluation failed")
    best = verify[0]
    dist = SamplingDistribution(kind="uniform", clip_box=box.copy(), box=box)
    state = UpdateState(archive=archive, distribution=dist, iteration=0,
                        best=best, history=[])
    _record_history(state, train_seconds, meta.jitter, fe_evals)
    return _result(state, cfg, fe_evals)


# ---------------------------------------------------------------------------
# output files


def _g17(v):
    return f"{float(v):.17g}"


def write_history_csv(history, path, config_echo: dict = None) -> None:
    """One row per iteration; deterministic bytes for a given run."""
    if not history:
        raise ValueError("history is empty")
    n = history[0].best_local_errors.size
    d = history[0].dist_mean.size
    lines = []
    if config_echo is not None:
        lines.append("# config: " + json.dumps(config_echo, sort_keys=True))
    cols = (["iteration", "best_epsilon"]
            + [f"eps_local_{i + 1}" for i in range(n)]
            + [f"mean_{k + 1}" for k in range(d)]
            + [f"var_{k + 1}" for k in range(d)]
            + ["jitter", "fe_evals_cumulative"])
    lines.append(",".join(cols))
    for rec in history:
        vals = ([str(rec.iteration), _g17(rec.best_epsilon)]
                + [_g17(v) for v in rec.best_local_errors]
                + [_g17(v) for v in rec.dist_mean]
                + [_g17(v) for v in rec.dist_var]
                + [_g17(rec.jitter), str(rec.fe_evaluations)])
        lines.append(",".join(vals))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_result_json(result: UpdateResult, path, config_echo: dict = None,
                      extra: dict = None) -> None:
    """Structured run outcome with a config echo for exact replay."""
    payload = {
        "identified_alpha": result.identified_theta.alpha.tolist(),
        "identified_gamma": result.identified_theta.gamma.tolist(),
        "final_epsilon": result.final_epsilon,
        "converged": bool(result.converged),
        "iterations": result.iterations,
        "fe_evaluations": result.fe_evaluations,
        "history": [
            {
                "iteration": rec.iteration,
                "best_epsilon": rec.best_epsilon,
                "best_local_errors": rec.best_local_errors.tolist(),
                "dist_mean": rec.dist_mean.tolist(),
                "dist_var": rec.dist_var.tolist(),
                "jitter": rec.jitter,
                "fe_evaluations": rec.fe_evaluations,
            }
            for rec in result.history
        ],
    }
    if config_echo is not None:
        payload["config"] = config_echo
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
