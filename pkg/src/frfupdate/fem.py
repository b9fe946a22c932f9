"""Parametrized structural models and harmonic frequency-response evaluation.

A model is a set of segment stiffness/mass matrices plus proportional
damping coefficients.  Segment-wise variation coefficients scale the
baseline matrices; the updated system is solved for its complex steady
state response under harmonic forcing.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, get_lapack_funcs, lu_factor, lu_solve

from . import accel
from .exceptions import BundleFormatError, SolverError

SYMMETRY_RTOL = 1e-10
COND_LIMIT = 1e14

__all__ = [
    "Segment",
    "StructuralModel",
    "ParameterPoint",
    "SystemMatrices",
    "FrequencyGrid",
    "generate_chain_model",
    "save_matrix_bundle",
    "load_matrix_bundle",
    "apply_parameters",
    "frf_response",
    "frf_amplitudes",
    "natural_frequencies",
]


def _check_symmetric(a, label):
    scale = np.abs(a).max()
    if scale == 0.0:
        return
    if np.abs(a - a.T).max() > SYMMETRY_RTOL * scale:
        raise ValueError(f"{label} is not symmetric within rtol {SYMMETRY_RTOL:g}")


@dataclass(frozen=True)
class Segment:
    """Stiffness and mass contribution of one model segment."""

    stiffness: np.ndarray
    mass: np.ndarray


@dataclass(frozen=True)
class StructuralModel:
    """Baseline segmented structural model with proportional damping.

    Instances are immutable after construction and safe to share across
    parallel workers.
    """

    n_dof: int
    segments: tuple
    damping_a: float
    damping_b: float
    sensor_dofs: tuple
    force_pattern: np.ndarray
    _k_stack: np.ndarray = field(init=False, repr=False, compare=False)
    _m_stack: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = self.n_dof
        if n < 1:
            raise ValueError("n_dof must be positive")
        if not self.segments:
            raise ValueError("model needs at least one segment")
        if self.damping_a < 0 or self.damping_b < 0:
            raise ValueError("damping coefficients must be >= 0")
        for i, seg in enumerate(self.segments):
            for mat, label in ((seg.stiffness, f"segment {i} stiffness"),
                               (seg.mass, f"segment {i} mass")):
                if mat.shape != (n, n):
                    raise ValueError(f"{label} has shape {mat.shape}, expected {(n, n)}")
                _check_symmetric(mat, label)
        sensors = tuple(int(s) for s in self.sensor_dofs)
        if len(set(sensors)) != len(sensors):
            raise ValueError("sensor_dofs contain duplicates")
        if any(s < 0 or s >= n for s in sensors):
            raise ValueError(f"sensor_dofs must lie in [0, {n})")
        force = np.asarray(self.force_pattern, dtype=float)
        if force.shape != (n,):
            raise ValueError(f"force_pattern must have length {n}")
        object.__setattr__(self, "sensor_dofs", sensors)
        object.__setattr__(self, "force_pattern", force)
        k_stack = np.stack([s.stiffness for s in self.segments]).astype(float)
        m_stack = np.stack([s.mass for s in self.segments]).astype(float)
        object.__setattr__(self, "_k_stack", k_stack)
        object.__setattr__(self, "_m_stack", m_stack)
        k_base = k_stack.sum(axis=0)
        m_base = m_stack.sum(axis=0)
        try:
            np.linalg.cholesky(m_base)
        except np.linalg.LinAlgError:
            raise ValueError("baseline mass matrix is not positive definite") from None
        eigs = np.linalg.eigvalsh(k_base)
        if eigs[0] < -1e-10 * max(1.0, eigs[-1]):
            raise ValueError("baseline stiffness matrix is not positive semi-definite")

    @property
    def n_segments(self):
        return len(self.segments)

    def baseline_stiffness(self):
        return self._k_stack.sum(axis=0)

    def baseline_mass(self):
        return self._m_stack.sum(axis=0)


@dataclass(frozen=True)
class ParameterPoint:
    """One sample of stiffness (alpha) and mass (gamma) variation coefficients."""

    alpha: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if alpha.shape != gamma.shape or alpha.ndim != 1:
            raise ValueError("alpha and gamma must be 1-D vectors of equal length")
        # components <= -1 would de-positivize the scaled matrices
        if np.any(alpha <= -1.0) or np.any(gamma <= -1.0):
            raise ValueError("variation coefficients must all exceed -1")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def from_vector(cls, x, m, update_mass=False):
        """Build a point from a flat sample vector (length m, or 2m with mass)."""
        x = np.asarray(x, dtype=float)
        if update_mass:
            if x.shape != (2 * m,):
                raise ValueError(f"expected vector of length {2 * m}")
            return cls(alpha=x[:m], gamma=x[m:])
        if x.shape != (m,):
            raise ValueError(f"expected vector of length {m}")
        return cls(alpha=x, gamma=np.zeros(m))


@dataclass(frozen=True)
class SystemMatrices:
    """Updated stiffness, mass, and proportional damping matrices."""

    k_hat: np.ndarray
    m_hat: np.ndarray
    c_hat: np.ndarray


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly increasing excitation frequencies in Hz."""

    freqs_hz: np.ndarray

    def __post_init__(self):
        f = np.atleast_1d(np.asarray(self.freqs_hz, dtype=float))
        if f.ndim != 1 or f.size == 0:
            raise ValueError("frequency grid must be a nonempty 1-D vector")
        if np.any(f <= 0.0):
            raise ValueError("frequencies must be positive")
        if np.any(np.diff(f) <= 0.0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "freqs_hz", f)

    @property
    def n_points(self):
        return self.freqs_hz.size

    @property
    def omegas_rad(self):
        return 2.0 * np.pi * self.freqs_hz


def generate_chain_model(n_masses, m_segments, mass_per_node=1.0,
                         stiffness_per_spring=1.0, damping_a=1e-2,
                         damping_b=1e-4, sensor_dofs=None):
    """Fixed-base lumped spring-mass chain split into contiguous segments.

    Spring ``j`` connects mass ``j-1`` to mass ``j`` (spring 0 to ground).
    Springs and masses are assigned to ``m_segments`` contiguous segments
    as evenly as possible, so the summed segment matrices reproduce the
    full chain.  Sensors default to every DOF; the force pattern is a
    unit force at each sensor DOF.
    """
    if m_segments < 1 or n_masses < m_segments:
        raise ValueError("need n_masses >= m_segments >= 1")
    if mass_per_node <= 0 or stiffness_per_spring <= 0:
        raise ValueError("mass and stiffness must be positive")
    n = int(n_masses)
    edges = np.linspace(0, n, int(m_segments) + 1).round().astype(int)
    segments = []
    for s in range(int(m_segments)):
        k_seg = np.zeros((n, n))
        m_seg = np.zeros((n, n))
        for j in range(edges[s], edges[s + 1]):
            k = stiffness_per_spring
            k_seg[j, j] += k
            if j > 0:
                k_seg[j - 1, j - 1] += k
                k_seg[j, j - 1] -= k
                k_seg[j - 1, j] -= k
            m_seg[j, j] += mass_per_node
        segments.append(Segment(stiffness=k_seg, mass=m_seg))
    if sensor_dofs is None:
        sensor_dofs = tuple(range(n))
    force = np.zeros(n)
    force[list(sensor_dofs)] = 1.0
    return StructuralModel(
        n_dof=n,
        segments=tuple(segments),
        damping_a=float(damping_a),
        damping_b=float(damping_b),
        sensor_dofs=tuple(sensor_dofs),
        force_pattern=force,
    )


def apply_parameters(model: StructuralModel, theta: ParameterPoint) -> SystemMatrices:
    """Assemble updated system matrices from variation coefficients."""
    m = model.n_segments
    if theta.alpha.shape != (m,):
        raise ValueError(f"parameter point has dimension {theta.alpha.size}, model has {m} segments")
    k_hat = np.tensordot(1.0 + theta.alpha, model._k_stack, axes=1)
    m_hat = np.tensordot(1.0 + theta.gamma, model._m_stack, axes=1)
    c_hat = model.damping_a * m_hat + model.damping_b * k_hat
    return SystemMatrices(k_hat=k_hat, m_hat=m_hat, c_hat=c_hat)


def frf_response(sys: SystemMatrices, force: np.ndarray, omega_rad: float) -> np.ndarray:
    """Complex steady-state response at one circular frequency.

    Solves ``(-omega^2 M + i omega C + K) z = F`` by LU decomposition with
    a reciprocal-condition estimate; never forms an explicit inverse.
    """
    if omega_rad < 0:
        raise ValueError("omega must be >= 0")
    dyn = sys.k_hat - omega_rad**2 * sys.m_hat + 1j * omega_rad * sys.c_hat
    anorm = np.linalg.norm(dyn, 1)
    try:
        lu, piv = lu_factor(dyn, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"dynamic stiffness singular at omega={omega_rad:g} rad/s",
                          omega_rad=omega_rad) from exc
    gecon = get_lapack_funcs("gecon", (lu,))
    rcond, info = gecon(lu, anorm)
    if info != 0 or rcond <= 0.0 or 1.0 / rcond > COND_LIMIT:
        raise SolverError(
            f"dynamic stiffness ill-conditioned at omega={omega_rad:g} rad/s "
            f"(condition estimate {0.0 if rcond <= 0 else 1.0 / rcond:.3g})",
            omega_rad=omega_rad,
        )
    return lu_solve((lu, piv), force.astype(np.complex128), check_finite=False)


def frf_amplitudes(model: StructuralModel, theta: ParameterPoint,
                   grid: FrequencyGrid) -> np.ndarray:
    """Response amplitudes |z| at the sensor DOFs over the grid, shape (n, p)."""
    sys = apply_parameters(model, theta)
    omegas = grid.omegas_rad
    try:
        z = accel.frf_batch(sys.k_hat, sys.m_hat, sys.c_hat,
                            model.force_pattern, omegas)
    except np.linalg.LinAlgError:
        _raise_for_bad_frequency(sys, model.force_pattern, omegas)
        raise
    if not np.isfinite(z).all():
        _raise_for_bad_frequency(sys, model.force_pattern, omegas)
    return np.abs(z[:, list(model.sensor_dofs)]).T


def _raise_for_bad_frequency(sys, force, omegas):
    # Slow path: pinpoint the offending frequency for the error message.
    for w in omegas:
        frf_response(sys, force, float(w))
    raise SolverError("harmonic solve produced non-finite values")


def natural_frequencies(sys: SystemMatrices, count: int) -> np.ndarray:
    """Smallest ``count`` undamped natural frequencies in Hz, ascending."""
    n = sys.k_hat.shape[0]
    if not 1 <= count <= n:
        raise ValueError(f"count must be in [1, {n}]")
    lam = eigh(sys.k_hat, sys.m_hat, eigvals_only=True,
               subset_by_index=(0, count - 1))
    return np.sqrt(np.maximum(lam, 0.0)) / (2.0 * np.pi)


# ---------------------------------------------------------------------------
# matrix-bundle file format

def _fmt(v):
    return f"{v:.17g}"


def save_matrix_bundle(model: StructuralModel, path) -> None:
    """Write a model to the text matrix-bundle format."""
    lines = [
        f"n_dof {model.n_dof} segments {model.n_segments} "
        f"damping_a {_fmt(model.damping_a)} damping_b {_fmt(model.damping_b)}"
    ]
    for i, seg in enumerate(model.segments):
        for tag, mat in (("K", seg.stiffness), ("M", seg.mass)):
            lines.append(f"{tag} {i}")
            rows, cols = np.nonzero(mat)
            for r, c in zip(rows, cols):
                lines.append(f"{r} {c} {_fmt(mat[r, c])}")
    lines.append("sensors " + " ".join(str(s) for s in model.sensor_dofs))
    lines.append("force " + " ".join(_fmt(v) for v in model.force_pattern))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_matrix_bundle(path) -> StructuralModel:
    """Load and validate a model from the text matrix-bundle format."""
    with open(path, encoding="utf-8") as fh:
        raw = [ln.strip() for ln in fh]
    lines = [(no + 1, ln) for no, ln in enumerate(raw) if ln]
    if not lines:
        raise BundleFormatError(f"{path}: empty bundle")

    header_no, header = lines[0]
    tokens = header.split()
    expected = ["n_dof", "segments", "damping_a", "damping_b"]
    if len(tokens) != 8 or tokens[0::2] != expected:
        raise BundleFormatError(
            f"{path}:{header_no}: header must be "
            "'n_dof <N> segments <m> damping_a <a> damping_b <b>'"
        )
    try:
        n = int(tokens[1])
        m = int(tokens[3])
        damping_a = float(tokens[5])
        damping_b = float(tokens[7])
    except ValueError as exc:
        raise BundleFormatError(f"{path}:{header_no}: bad header value: {exc}") from None
    if n < 1 or m < 1:
        raise BundleFormatError(f"{path}:{header_no}: n_dof and segments must be positive")

    mats = {}
    sensors = None
    force = None
    current = None
    for no, ln in lines[1:]:
        head = ln.split()[0]
        if head in ("K", "M"):
            parts = ln.split()
            if len(parts) != 2:
                raise BundleFormatError(f"{path}:{no}: block header must be '{head} <index>'")
            try:
                idx = int(parts[1])
            except ValueError:
                raise BundleFormatError(f"{path}:{no}: bad segment index {parts[1]!r}") from None
            if not 0 <= idx < m:
                raise BundleFormatError(f"{path}:{no}: segment index {idx} out of range [0, {m})")
            current = (head, idx)
            if current in mats:
                raise BundleFormatError(f"{path}:{no}: duplicate block {head} {idx}")
            mats[current] = np.zeros((n, n))
        elif head == "sensors":
            try:
                sensors = tuple(int(t) for t in ln.split()[1:])
            except ValueError as exc:
                raise BundleFormatError(f"{path}:{no}: bad sensor index: {exc}") from None
            current = None
        elif head == "force":
            try:
                force = np.array([float(t) for t in ln.split()[1:]])
            except ValueError as exc:
                raise BundleFormatError(f"{path}:{no}: bad force value: {exc}") from None
            current = None
        else:
            if current is None:
                raise BundleFormatError(f"{path}:{no}: entry {ln!r} outside any block")
            parts = ln.split()
            if len(parts) != 3:
                raise BundleFormatError(f"{path}:{no}: entry must be 'row col value', got {ln!r}")
            try:
                r, c, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise BundleFormatError(f"{path}:{no}: bad entry {ln!r}: {exc}") from None
            tag, idx = current
            if not (0 <= r < n and 0 <= c < n):
                raise BundleFormatError(
                    f"{path}:{no}: entry ({r}, {c}) of block {tag} {idx} "
                    f"out of range for n_dof {n}"
                )
            mats[current][r, c] = v

    for i in range(m):
        for tag, word in (("K", "stiffness"), ("M", "mass")):
            if (tag, i) not in mats:
                raise BundleFormatError(f"{path}: missing block {tag} {i} ({word} of segment {i})")
    if sensors is None:
        raise BundleFormatError(f"{path}: missing 'sensors' line")
    if force is None:
        raise BundleFormatError(f"{path}: missing 'force' line")
    if force.shape != (n,):
        raise BundleFormatError(f"{path}: force line has {force.size} values, expected {n}")

    segments = tuple(Segment(stiffness=mats[("K", i)], mass=mats[("M", i)]) for i in range(m))
    try:
        return StructuralModel(
            n_dof=n, segments=segments, damping_a=damping_a, damping_b=damping_b,
            sensor_dofs=sensors, force_pattern=force,
        )
    except ValueError as exc:
        raise BundleFormatError(f"{path}: {exc}") from None
