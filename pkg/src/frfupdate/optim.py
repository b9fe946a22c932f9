"""Bound-constrained stochastic minimizers: simulated annealing and PSO.

Both optimizers are fully deterministic for a given (objective, bounds,
config, seed) and report the exact running minimum of every objective
value they evaluated.  An optional trace list collects one row per
evaluation for diagnostics or CSV export.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import OptimizerDivergenceError

__all__ = [
    "Bounds",
    "SaoConfig",
    "PsoConfig",
    "sao_minimize",
    "pso_minimize",
    "write_trace_csv",
]

# Open bounds are approximated by nudging the edge inward by this fraction
# of the box width, so degenerate boundary values are never evaluated.
OPEN_EDGE_NUDGE = 1e-12

# Fraction of non-finite objective values that triggers a divergence error.
DIVERGENCE_FRACTION = 0.95


@dataclass(frozen=True)
class Bounds:
    """Per-coordinate box bounds with open/closed edge flags."""

    lower: np.ndarray
    upper: np.ndarray
    lower_open: np.ndarray = None
    upper_open: np.ndarray = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D vectors of equal length")
        if np.any(lo >= hi):
            raise ValueError("need lower < upper componentwise")
        lo_open = (np.zeros(lo.size, dtype=bool) if self.lower_open is None
                   else np.atleast_1d(np.asarray(self.lower_open, dtype=bool)))
        hi_open = (np.zeros(hi.size, dtype=bool) if self.upper_open is None
                   else np.atleast_1d(np.asarray(self.upper_open, dtype=bool)))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "lower_open", lo_open)
        object.__setattr__(self, "upper_open", hi_open)

    @property
    def dim(self):
        return self.lower.size

    @property
    def width(self):
        return self.upper - self.lower

    def effective(self):
        """Closed box with open edges nudged inward."""
        w = self.width
        lo = np.where(self.lower_open, self.lower + OPEN_EDGE_NUDGE * w, self.lower)
        hi = np.where(self.upper_open, self.upper - OPEN_EDGE_NUDGE * w, self.upper)
        return lo, hi

    def clamp(self, x):
        lo, hi = self.effective()
        return np.clip(x, lo, hi)


@dataclass(frozen=True)
class SaoConfig:
    """Simulated annealing operating parameters.

    Defaults: geometric cooling from 100 down to 3 with slope 0.8 and 400
    proposals per temperature stage; Gaussian proposals with standard
    deviation ``proposal_scale`` of the box width, annealed with T/T0.
    """

    initial_temperature: float = 100.0
    target_temperature: float = 3.0
    descent_slope: float = 0.8
    iterations_per_temperature: int = 400
    initial_point: np.ndarray = None
    proposal_scale: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.descent_slope < 1.0:
            raise ValueError("descent_slope must be in (0, 1)")
        if self.initial_temperature <= 0 or self.target_temperature <= 0:
            raise ValueError("temperatures must be positive")
        if self.target_temperature >= self.initial_temperature:
            raise ValueError("target temperature must be below the initial one")
        if self.iterations_per_temperature < 1:
            raise ValueError("iterations_per_temperature must be >= 1")
        if self.proposal_scale <= 0:
            raise ValueError("proposal_scale must be positive")

    def temperatures(self):
        """The geometric cooling schedule, all stages >= target."""
        temps = []
        t = self.initial_temperature
        while t >= self.target_temperature:
            temps.append(t)
            t *= self.descent_slope
        return temps


@dataclass(frozen=True)
class PsoConfig:
    """Global-best particle swarm operating parameters.

    Defaults: swarm of 100 and a 10,000-evaluation budget; constriction
    style coefficients (inertia 0.7298, cognitive = social = 1.49618).
    """

    swarm_size: int = 100
    max_evaluations: int = 10_000
    inertia: float = 0.7298
    cognitive: float = 1.49618
    social: float = 1.49618

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ValueError("swarm_size must be >= 2")
        if self.max_evaluations < self.swarm_size:
            raise ValueError("max_evaluations must be >= swarm_size")
        if min(self.inertia, self.cognitive, self.social) <= 0:
            raise ValueError("PSO coefficients must be positive")


def _check_divergence(n_evals, n_bad):
    if n_evals >= 100 and n_bad > DIVERGENCE_FRACTION * n_evals:
        raise OptimizerDivergenceError(
            f"objective non-finite at {n_bad}/{n_evals} evaluations"
        )


def sao_minimize(objective, bounds: Bounds, cfg: SaoConfig = SaoConfig(),
                 seed: int = 0, trace: list = None):
    """Simulated annealing with Metropolis acceptance and geometric cooling.

    Returns ``(best_point, best_value, n_evaluations)``.  Trace rows are
    ``(eval_index, value, *x, accepted, temperature)``.
    """
    rng = np.random.default_rng(seed)
    lo, hi = bounds.effective()
    width = bounds.width
    if cfg.initial_point is not None:
        x = bounds.clamp(np.asarray(cfg.initial_point, dtype=float))
    else:
        x = 0.5 * (lo + hi)
    f = float(objective(x))
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the initial point")
    n_evals = 1
    n_bad = 0
    best_x, best_f = x.copy(), f
    if trace is not None:
        trace.append((0, f, *x, 1, cfg.initial_temperature))
    t0 = cfg.initial_temperature
    for t in cfg.temperatures():
        step = cfg.proposal_scale * width * (t / t0)
        for _ in range(cfg.iterations_per_temperature):
            prop = bounds.clamp(x + step * rng.standard_normal(bounds.dim))
            f_prop = float(objective(prop))
            n_evals += 1
            if np.isfinite(f_prop):
                delta = f_prop - f
                accept = delta <= 0.0 or rng.random() < np.exp(-delta / t)
                if f_prop < best_f:
                    best_x, best_f = prop.copy(), f_prop
            else:
                n_bad += 1
                accept = False
            if accept:
                x, f = prop, f_prop
            if trace is not None:
                trace.append((n_evals - 1, f_prop, *prop, int(accept), t))
        _check_divergence(n_evals, n_bad)
    return best_x, best_f, n_evals


def pso_minimize(objective, bounds: Bounds, cfg: PsoConfig = PsoConfig(),
                 seed: int = 0, trace: list = None):
    """Global-best PSO with position clamping (velocity zeroed on clamped axes).

    Returns ``(best_point, best_value, n_evaluations)``.  Trace rows are
    ``(eval_index, value, *x, generation)``.
    """
    rng = np.random.default_rng(seed)
    lo, hi = bounds.effective()
    d = bounds.dim
    ns = cfg.swarm_size
    pos = lo + (hi - lo) * rng.random((ns, d))
    vel = np.zeros((ns, d))
    pbest_x = pos.copy()
    pbest_f = np.full(ns, np.inf)
    gbest_x = pos[0].copy()
    gbest_f = np.inf
    n_evals = 0
    n_bad = 0
    generation = 0
    while n_evals < cfg.max_evaluations:
        for i in range(ns):
            if n_evals >= cfg.max_evaluations:
                break
            f = float(objective(pos[i]))
            n_evals += 1
            if trace is not None:
                trace.append((n_evals - 1, f, *pos[i], generation))
            if np.isfinite(f):
                if f < pbest_f[i]:
                    pbest_f[i] = f
                    pbest_x[i] = pos[i].copy()
                if f < gbest_f:
                    gbest_f = f
                    gbest_x = pos[i].copy()
            else:
                n_bad += 1
        _check_divergence(n_evals, n_bad)
        if n_evals >= cfg.max_evaluations:
            break
        r_cog = rng.random((ns, d))
        r_soc = rng.random((ns, d))
        vel = (cfg.inertia * vel
               + cfg.cognitive * r_cog * (pbest_x - pos)
               + cfg.social * r_soc * (gbest_x[None, :] - pos))
        pos = pos + vel
        clamped_lo = pos < lo
        clamped_hi = pos > hi
        vel[clamped_lo | clamped_hi] = 0.0
        pos = np.clip(pos, lo, hi)
        generation += 1
    if not np.isfinite(gbest_f):
        raise OptimizerDivergenceError("objective non-finite at every evaluated point")
    return gbest_x, float(gbest_f), n_evals


def write_trace_csv(rows, path, dim, kind):
    """Write an optimizer trace to CSV.

    ``kind`` is 'sao' (columns accepted, temperature) or 'pso' (column
    generation).
    """
    xs = ",".join(f"x_{i + 1}" for i in range(dim))
    if kind == "sao":
        header = f"evaluation_index,objective,{xs},accepted,temperature"
    elif kind == "pso":
        header = f"evaluation_index,objective,{xs},generation"
    else:
        raise ValueError(f"unknown trace kind {kind!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v)
                              for v in row) + "\n")
