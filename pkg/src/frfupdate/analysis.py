"""Sensitivity and robustness diagnostics.

Pearson correlation between each variation coefficient and each FRF
amplitude channel explains which parameters the chosen sensor/frequency
layout can actually identify; the robustness study repeats the updating
run over seeds and aggregates the outcomes.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import SolverError
from .fem import FrequencyGrid, ParameterPoint, StructuralModel, frf_amplitudes
from .updating import Scenario, _draw_uniform, run_update

log = logging.getLogger(__name__)

__all__ = [
    "CorrelationMap",
    "RobustnessSummary",
    "pearson",
    "correlation_map",
    "robustness_study",
    "write_correlation_csv",
]


@dataclass(frozen=True)
class CorrelationMap:
    """Pearson coefficients indexed (parameter, sensor, frequency)."""

    values: np.ndarray
    sample_count: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 3:
            raise ValueError("values must be a (params, sensors, frequencies) array")
        if np.any(np.abs(vals) > 1.0 + 1e-12):
            raise ValueError("correlation values must lie in [-1, 1]")
        object.__setattr__(self, "values", vals)

    def max_abs_by_param(self) -> np.ndarray:
        """Largest |rho| over sensors and frequencies, per parameter."""
        return np.abs(self.values).max(axis=(1, 2))


@dataclass(frozen=True)
class RobustnessSummary:
    """Aggregated outcomes of repeated updating runs."""

    seeds: tuple
    final_epsilons: np.ndarray
    identified: np.ndarray
    converged: tuple
    mean_epsilon: float
    mean_theta: np.ndarray
    std_theta: np.ndarray


def pearson(a, z) -> float:
    """Pearson linear correlation coefficient between two sample vectors."""
    a = np.asarray(a, dtype=float)
    z = np.asarray(z, dtype=float)
    if a.shape != z.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length 1-D vectors with at least 2 samples")
    da = a - a.mean()
    dz = z - z.mean()
    denom = np.sqrt((da @ da) * (dz @ dz))
    if denom == 0.0:
        raise ValueError("correlation undefined for a constant vector")
    return float((da @ dz) / denom)


def correlation_map(model: StructuralModel, grid: FrequencyGrid,
                    n_samples: int = 10_000, box=None, seed: int = 0,
                    update_mass: bool = False, threads: int = 1) -> CorrelationMap:
    """Monte Carlo correlation between parameters and FRF amplitudes.

    Draws parameters uniformly from ``box`` (default [-1, 1] per
    coefficient), evaluates the exact amplitudes for each draw, and
    correlates every (parameter, sensor, frequency) pair.
    """
    d = model.n_segments * (2 if update_mass else 1)
    if box is None:
        box = np.tile([-1.0, 1.0], (d, 1))
    box = np.asarray(box, dtype=float)
    if box.shape != (d, 2):
        raise ValueError(f"box must have shape ({d}, 2)")
    rng = np.random.default_rng(seed)
    draws = _draw_uniform(rng, box, n_samples)

    def amp_row(row):
        theta = ParameterPoint.from_vector(row, model.n_segments, update_mass)
        try:
            return frf_amplitudes(model, theta, grid)
        except (SolverError, np.linalg.LinAlgError):
            return None

    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            amps = list(pool.map(amp_row, draws))
    else:
        amps = [amp_row(row) for row in draws]
    keep = [i for i, a in enumerate(amps) if a is not None]
    dropped = n_samples - len(keep)
    if dropped:
        log.warning("correlation_map: dropped %d failed FE evaluations", dropped)
    if len(keep) < 2:
        raise RuntimeError("not enough successful FE evaluations for correlation")
    x = draws[keep]
    n, p = amps[keep[0]].shape
    resp = np.stack([amps[i].ravel() for i in keep])

    dx = x - x.mean(axis=0)
    dr = resp - resp.mean(axis=0)
    sx = np.sqrt(np.einsum("ij,ij->j", dx, dx))
    sr = np.sqrt(np.einsum("ij,ij->j", dr, dr))
    if np.any(sx == 0.0) or np.any(sr == 0.0):
        raise ValueError("correlation undefined: constant parameter or response column")
    rho = (dx.T @ dr) / np.outer(sx, sr)
    np.clip(rho, -1.0, 1.0, out=rho)
    return CorrelationMap(values=rho.reshape(d, n, p), sample_count=len(keep))


def robustness_study(scenario: Scenario, seeds) -> RobustnessSummary:
    """Repeat the updating run over seeds and summarize statistically.

    A failing run aborts the study; the completed runs are preserved on
    the raised exception as ``partial``.
    """
    seeds = tuple(int(s) for s in seeds)
    results = []
    for s in seeds:
        cfg = replace(scenario.config, seed=s)
        try:
            results.append(run_update(scenario.model, scenario.measurement,
                                      scenario.grid, cfg))
        except Exception as exc:
            partial = _summarize(seeds[: len(results)], results) if results else None
            exc.partial = partial
            raise
    return _summarize(seeds, results)


def _summarize(seeds, results):
    eps = np.array([r.final_epsilon for r in results])
    identified = np.stack([
        np.concatenate([r.identified_theta.alpha, r.identified_theta.gamma])
        for r in results
    ])
    return RobustnessSummary(
        seeds=tuple(seeds),
        final_epsilons=eps,
        identified=identified,
        converged=tuple(bool(r.converged) for r in results),
        mean_epsilon=float(eps.mean()),
        mean_theta=identified.mean(axis=0),
        std_theta=identified.std(axis=0, ddof=1) if len(results) > 1
        else np.zeros(identified.shape[1]),
    )


def write_correlation_csv(cmap: CorrelationMap, grid: FrequencyGrid,
                          sensor_dofs, path, config_echo=None) -> None:
    """Rows of (parameter, sensor, frequency_hz, rho)."""
    d, n, p = cmap.values.shape
    lines = []
    if config_echo is not None:
        import json
        lines.append("# config: " + json.dumps(config_echo, sort_keys=True))
    lines.append("parameter,sensor,frequency_hz,rho")
    for k in range(d):
        for i in range(n):
            for j in range(p):
                lines.append(f"{k},{sensor_dofs[i]},{grid.freqs_hz[j]:.17g},"
                             f"{cmap.values[k, i, j]:.17g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
