"""Discrepancy vectors and error metrics between simulated and measured FRFs.

The discrepancy vector stacks sensor-major within frequency:
``[du_11 .. du_n1, du_12 .. du_n2, ..., du_1p .. du_np]``, i.e. entry
``(i, j)`` lands at flat position ``j*n + i``.  The overall error is the
mean absolute entry-wise error relative to the measured amplitudes, kept
as a fraction (the CLI renders percentages).
"""

from dataclasses import dataclass

import numpy as np

from .fem import FrequencyGrid, ParameterPoint, StructuralModel, frf_amplitudes

__all__ = [
    "Measurement",
    "ResponseErrorRecord",
    "error_vector",
    "overall_error",
    "local_error",
    "local_errors",
    "make_record",
    "synthesize_measurement",
    "write_measurement_csv",
    "read_measurement_csv",
]


@dataclass(frozen=True)
class Measurement:
    """Measured FRF amplitudes, one row per sensor, one column per frequency."""

    amplitudes: np.ndarray
    grid: FrequencyGrid
    sensor_dofs: tuple

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float)
        sensors = tuple(int(s) for s in self.sensor_dofs)
        if amps.ndim != 2:
            raise ValueError("amplitudes must be a 2-D (sensors x frequencies) matrix")
        if amps.shape != (len(sensors), self.grid.n_points):
            raise ValueError(
                f"amplitudes shape {amps.shape} does not match "
                f"{len(sensors)} sensors x {self.grid.n_points} frequencies"
            )
        # amplitudes appear in error denominators
        if np.any(amps <= 0.0):
            raise ValueError("measured amplitudes must all be positive")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "sensor_dofs", sensors)

    @property
    def n_sensors(self):
        return len(self.sensor_dofs)

    @property
    def flat_amplitudes(self):
        """Amplitudes in discrepancy-vector order (sensor-major within frequency)."""
        return self.amplitudes.flatten(order="F")


def error_vector(sim: np.ndarray, meas: Measurement) -> np.ndarray:
    """Stacked discrepancy vector between simulated and measured amplitudes."""
    sim = np.asarray(sim, dtype=float)
    if sim.shape != meas.amplitudes.shape:
        raise ValueError(f"simulated shape {sim.shape} != measured {meas.amplitudes.shape}")
    return (sim - meas.amplitudes).flatten(order="F")


def overall_error(delta_u: np.ndarray, meas: Measurement) -> float:
    """Mean absolute relative error over all sensors and frequencies."""
    delta_u = np.asarray(delta_u, dtype=float)
    ubar = meas.flat_amplitudes
    if delta_u.shape != ubar.shape:
        raise ValueError(f"delta_u length {delta_u.size} != n*p = {ubar.size}")
    return float(np.abs(delta_u / ubar).mean())


def local_error(delta_u: np.ndarray, meas: Measurement, sensor_index: int) -> float:
    """Mean absolute relative error at one sensor over all frequencies."""
    n = meas.n_sensors
    if not 0 <= sensor_index < n:
        raise ValueError(f"sensor_index {sensor_index} out of range [0, {n})")
    rel = np.abs(np.asarray(delta_u, dtype=float) / meas.flat_amplitudes)
    return float(rel.reshape(meas.grid.n_points, n)[:, sensor_index].mean())


def local_errors(delta_u: np.ndarray, meas: Measurement) -> np.ndarray:
    """Per-sensor mean absolute relative errors, shape (n,)."""
    rel = np.abs(np.asarray(delta_u, dtype=float) / meas.flat_amplitudes)
    return rel.reshape(meas.grid.n_points, meas.n_sensors).mean(axis=0)


@dataclass(frozen=True)
class ResponseErrorRecord:
    """One parameter point with its discrepancy vector and error metrics."""

    theta: ParameterPoint
    delta_u: np.ndarray
    epsilon: float
    local_errors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta_u", np.asarray(self.delta_u, dtype=float))
        object.__setattr__(self, "local_errors", np.asarray(self.local_errors, dtype=float))
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


def make_record(theta: ParameterPoint, sim: np.ndarray, meas: Measurement) -> ResponseErrorRecord:
    """Assemble a consistent error record from a simulated amplitude matrix."""
    du = error_vector(sim, meas)
    return ResponseErrorRecord(
        theta=theta,
        delta_u=du,
        epsilon=overall_error(du, meas),
        local_errors=local_errors(du, meas),
    )


def synthesize_measurement(model: StructuralModel, theta_true: ParameterPoint,
                           grid: FrequencyGrid, noise_std: float = 0.0,
                           seed: int = 0) -> Measurement:
    """Generate a synthetic measurement from the model at the true parameters.

    ``noise_std`` applies multiplicative Gaussian noise ``amps * (1 + s*z)``;
    it is zero by default and in all acceptance runs.
    """
    amps = frf_amplitudes(model, theta_true, grid)
    if noise_std > 0.0:
        rng = np.random.default_rng(seed)
        factor = 1.0 + noise_std * rng.standard_normal(amps.shape)
        if np.any(factor <= 0.0):
            raise ValueError("noise level too large: a noisy amplitude would be <= 0")
        amps = amps * factor
    return Measurement(amplitudes=amps, grid=grid, sensor_dofs=model.sensor_dofs)


def write_measurement_csv(meas: Measurement, path, header_comment: str = "") -> None:
    """Measurement CSV: header row of frequencies, one row per sensor DOF."""
    lines = []
    if header_comment:
        lines.append(f"# {header_comment}")
    lines.append("dof_index," + ",".join(f"{f:.17g}" for f in meas.grid.freqs_hz))
    for dof, row in zip(meas.sensor_dofs, meas.amplitudes):
        lines.append(f"{dof}," + ",".join(f"{a:.17g}" for a in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_measurement_csv(path) -> Measurement:
    """Load a measurement CSV written by :func:`write_measurement_csv`."""
    with open(path, encoding="utf-8") as fh:
        rows = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty measurement file")
    header = rows[0].split(",")
    try:
        freqs = np.array([float(t) for t in header[1:]])
    except ValueError as exc:
        raise ValueError(f"{path}: bad frequency header: {exc}") from None
    sensors = []
    amps = []
    for ln in rows[1:]:
        parts = ln.split(",")
        if len(parts) != freqs.size + 1:
            raise ValueError(f"{path}: row has {len(parts) - 1} amplitudes, expected {freqs.size}")
        sensors.append(int(parts[0]))
        amps.append([float(t) for t in parts[1:]])
    return Measurement(
        amplitudes=np.array(amps),
        grid=FrequencyGrid(freqs_hz=freqs),
        sensor_dofs=tuple(sensors),
    )
