"""Plant description and validation.

The plant is a system of coupled parabolic equations on the unit
interval with Robin boundary conditions at both ends, where each
boundary condition is driven by a finite dimensional subsystem: a
sensing subsystem at the near end (whose output is the only
measurement) and an actuating subsystem at the far end (through which
the control enters).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AssumptionError, ConfigurationError, StructuralError
from .fields import MatrixField

__all__ = [
    "PlantModel",
    "AssumptionReport",
    "SpectrumEstimate",
    "validate_plant",
    "ensure_designable",
    "hopf_cole_normalize",
    "estimate_open_loop_spectrum",
]


def _as_matrix(value, rows, cols, what):
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.shape != (rows, cols):
        raise StructuralError(
            f"{what} must have shape ({rows}, {cols}), got {arr.shape}"
        )
    return arr


@dataclass
class PlantModel:
    """Coupled parabolic system with dynamics at both boundaries.

    Attributes
    ----------
    diffusion : MatrixField
        Diagonal field of diffusion coefficients, strictly decreasing
        along the diagonal and positive everywhere.
    reaction : MatrixField
        Reaction coupling field, same matrix size as ``diffusion``.
    robin_start, robin_end : numpy.ndarray
        Diagonal matrices of the Robin boundary conditions at 0 and 1.
    bc_sensor_gain : numpy.ndarray
        How the sensing subsystem state enters the boundary condition
        at 0 (``num_field`` x ``num_sensor``).
    bc_actuator_gain : numpy.ndarray
        How the actuating subsystem state enters the boundary condition
        at 1 (``num_field`` x ``num_actuator``).
    sensor_sys : numpy.ndarray
        System matrix of the sensing subsystem.
    sensor_field_gain : numpy.ndarray
        Boundary-trace input matrix of the sensing subsystem.
    output_map : numpy.ndarray
        Measurement matrix; only this many linear functionals of the
        sensing state are available (``num_field`` x ``num_sensor``).
    actuator_sys : numpy.ndarray
        System matrix of the actuating subsystem.
    actuator_field_gain : numpy.ndarray
        Boundary-trace input matrix of the actuating subsystem.
    control_gain : numpy.ndarray
        Control input matrix of the actuating subsystem.
    advection : MatrixField, optional
        Diagonal advection field of the raw model; remove it with
        :func:`hopf_cole_normalize` before any design step.
    """

    diffusion: MatrixField
    reaction: MatrixField
    robin_start: np.ndarray
    robin_end: np.ndarray
    bc_sensor_gain: np.ndarray
    bc_actuator_gain: np.ndarray
    sensor_sys: np.ndarray
    sensor_field_gain: np.ndarray
    output_map: np.ndarray
    actuator_sys: np.ndarray
    actuator_field_gain: np.ndarray
    control_gain: np.ndarray
    advection: MatrixField = None

    def __post_init__(self):
        n = self.diffusion.shape[0]
        if self.diffusion.shape != (n, n):
            raise StructuralError("diffusion field must be square")
        off = self.diffusion.samples.copy()
        for i in range(n):
            off[:, i, i] = 0.0
        if np.any(off != 0.0):
            raise StructuralError("diffusion field must be diagonal")
        if self.reaction.shape != (n, n):
            raise StructuralError("reaction field must match the diffusion size")
        if self.reaction.num_points != self.diffusion.num_points:
            raise StructuralError("diffusion and reaction must share one grid")
        n0 = np.atleast_2d(np.asarray(self.sensor_sys, dtype=float)).shape[0]
        n1 = np.atleast_2d(np.asarray(self.actuator_sys, dtype=float)).shape[0]
        self.robin_start = self._coerce_diagonal(self.robin_start, n, "robin_start")
        self.robin_end = self._coerce_diagonal(self.robin_end, n, "robin_end")
        self.bc_sensor_gain = _as_matrix(self.bc_sensor_gain, n, n0, "bc_sensor_gain")
        self.bc_actuator_gain = _as_matrix(
            self.bc_actuator_gain, n, n1, "bc_actuator_gain"
        )
        self.sensor_sys = _as_matrix(self.sensor_sys, n0, n0, "sensor_sys")
        self.sensor_field_gain = _as_matrix(
            self.sensor_field_gain, n0, n, "sensor_field_gain"
        )
        self.output_map = _as_matrix(self.output_map, n, n0, "output_map")
        self.actuator_sys = _as_matrix(self.actuator_sys, n1, n1, "actuator_sys")
        self.actuator_field_gain = _as_matrix(
            self.actuator_field_gain, n1, n, "actuator_field_gain"
        )
        self.control_gain = _as_matrix(self.control_gain, n1, n, "control_gain")
        if self.advection is not None:
            if self.advection.shape != (n, n):
                raise StructuralError("advection field must match the diffusion size")
            adv_off = self.advection.samples.copy()
            for i in range(n):
                adv_off[:, i, i] = 0.0
            if np.any(adv_off != 0.0):
                raise StructuralError("advection field must be diagonal")

    @staticmethod
    def _coerce_diagonal(value, n, what):
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 1:
            if arr.size != n:
                raise StructuralError(f"{what} diagonal must have length {n}")
            return np.diag(arr)
        arr = _as_matrix(arr, n, n, what)
        if np.any(arr != np.diag(np.diag(arr))):
            raise StructuralError(f"{what} must be diagonal")
        return arr

    @property
    def num_field(self):
        """Number of coupled parabolic equations."""
        return self.diffusion.shape[0]

    @property
    def num_sensor(self):
        """Dimension of the sensing subsystem."""
        return self.sensor_sys.shape[0]

    @property
    def num_actuator(self):
        """Dimension of the actuating subsystem."""
        return self.actuator_sys.shape[0]

    @property
    def grid(self):
        return self.diffusion.grid

    @property
    def num_points(self):
        return self.diffusion.num_points

    def diffusion_diagonal(self):
        """Diagonal diffusion samples as an array of shape ``(N, n)``."""
        return np.einsum("nii->ni", self.diffusion.samples).copy()

    def resample(self, num_points):
        """Plant with all coefficient fields re-sampled to ``num_points``."""
        return replace(
            self,
            diffusion=self.diffusion.resample(num_points),
            reaction=self.reaction.resample(num_points),
            advection=None if self.advection is None else self.advection.resample(num_points),
        )


@dataclass
class AssumptionReport:
    """Outcome of the standing-assumption checks for a plant.

    The four classical conditions are reported as flags with numerical
    margins; ``diffusion_valid`` covers positivity and strict ordering
    of the diffusion coefficients.
    """

    sensor_controllable: bool
    actuator_observable: bool
    control_coupling_determinant: float
    control_coupling_invertible: bool
    sensing_coupling_determinant: float
    sensing_coupling_invertible: bool
    diffusion_valid: bool
    margins: dict = field(default_factory=dict)
    messages: list = field(default_factory=list)

    @property
    def passed(self):
        return (
            self.sensor_controllable
            and self.actuator_observable
            and self.control_coupling_invertible
            and self.sensing_coupling_invertible
            and self.diffusion_valid
        )

    def summary(self):
        """Multi-line human-readable report."""
        def mark(ok):
            return "pass" if ok else "FAIL"

        lines = [
            f"[{mark(self.sensor_controllable)}] sensing subsystem controllable "
            f"(margin {self.margins.get('sensor_controllability', float('nan')):.3e})",
            f"[{mark(self.actuator_observable)}] actuating subsystem observable "
            f"(margin {self.margins.get('actuator_observability', float('nan')):.3e})",
            f"[{mark(self.control_coupling_invertible)}] control-to-boundary coupling invertible "
            f"(det {self.control_coupling_determinant:.6g})",
            f"[{mark(self.sensing_coupling_invertible)}] measurement-to-boundary coupling invertible "
            f"(det {self.sensing_coupling_determinant:.6g})",
            f"[{mark(self.diffusion_valid)}] diffusion coefficients positive and strictly ordered",
        ]
        lines.extend(self.messages)
        return "\n".join(lines)


@dataclass
class SpectrumEstimate:
    """Eigenvalues of a semi-discretized system operator."""

    eigenvalues: np.ndarray
    grid_points: int

    @property
    def max_real_part(self):
        return float(np.max(self.eigenvalues.real))


def _numerical_rank(matrix, tol):
    sv = np.linalg.svd(matrix, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0, 0.0
    margin = sv[-1] / sv[0] if sv.size == min(matrix.shape) else 0.0
    rank = int(np.sum(sv > tol * sv[0] * max(matrix.shape)))
    return rank, margin


def validate_plant(plant, tol=1e-10):
    """Check the standing assumptions and coefficient requirements.

    Parameters
    ----------
    plant : PlantModel
    tol : float, optional
        Relative singular-value threshold for the rank tests.

    Returns
    -------
    AssumptionReport
        Flags and margins; this function reports instead of raising, so
        callers can present all failures at once.
    """
    n = plant.num_field
    n0 = plant.num_sensor
    n1 = plant.num_actuator
    messages = []
    margins = {}

    blocks = [plant.sensor_field_gain]
    for _ in range(n0 - 1):
        blocks.append(plant.sensor_sys @ blocks[-1])
    ctrb = np.hstack(blocks)
    rank_c, margin_c = _numerical_rank(ctrb, tol)
    margins["sensor_controllability"] = margin_c
    sensor_controllable = rank_c == n0
    if not sensor_controllable:
        messages.append(
            f"controllability matrix of the sensing subsystem has rank {rank_c} < {n0}"
        )

    blocks = [plant.bc_actuator_gain]
    for _ in range(n1 - 1):
        blocks.append(blocks[-1] @ plant.actuator_sys)
    obsv = np.vstack(blocks)
    rank_o, margin_o = _numerical_rank(obsv, tol)
    margins["actuator_observability"] = margin_o
    actuator_observable = rank_o == n1
    if not actuator_observable:
        messages.append(
            f"observability matrix of the actuating subsystem has rank {rank_o} < {n1}"
        )

    control_coupling = plant.bc_actuator_gain @ plant.control_gain
    det_cb = float(np.linalg.det(control_coupling))
    sv = np.linalg.svd(control_coupling, compute_uv=False)
    control_ok = sv[-1] > tol * max(sv[0], 1.0) * n
    margins["control_coupling"] = float(sv[-1] / max(sv[0], np.finfo(float).tiny))
    if not control_ok:
        messages.append("control input does not reach the far boundary condition")

    sensing_coupling = plant.output_map @ plant.sensor_field_gain
    det_cb0 = float(np.linalg.det(sensing_coupling))
    sv = np.linalg.svd(sensing_coupling, compute_uv=False)
    sensing_ok = sv[-1] > tol * max(sv[0], 1.0) * n
    margins["sensing_coupling"] = float(sv[-1] / max(sv[0], np.finfo(float).tiny))
    if not sensing_ok:
        messages.append("measurement does not see the near boundary trace")

    diag = plant.diffusion_diagonal()
    positive = bool(np.all(diag > 0.0))
    ordered = bool(np.all(np.diff(diag, axis=1) < 0.0)) if n > 1 else True
    if not positive:
        messages.append("diffusion coefficients must be positive at every node")
    if not ordered:
        messages.append(
            "diffusion coefficients must be strictly decreasing at every node; "
            "equal or crossing coefficients are not supported by this design"
        )
    margins["diffusion_gap"] = (
        float(np.min(-np.diff(diag, axis=1))) if n > 1 else float(np.min(diag))
    )

    return AssumptionReport(
        sensor_controllable=sensor_controllable,
        actuator_observable=actuator_observable,
        control_coupling_determinant=det_cb,
        control_coupling_invertible=bool(control_ok),
        sensing_coupling_determinant=det_cb0,
        sensing_coupling_invertible=bool(sensing_ok),
        diffusion_valid=positive and ordered,
        margins=margins,
        messages=messages,
    )


def ensure_designable(plant, tol=1e-10):
    """Raise if the plant fails validation; return the report otherwise."""
    if plant.advection is not None:
        raise StructuralError(
            "plant still carries an advection field; apply hopf_cole_normalize first"
        )
    report = validate_plant(plant, tol)
    if not report.diffusion_valid:
        raise StructuralError(
            "invalid diffusion coefficients: " + "; ".join(report.messages)
        )
    if not report.passed:
        raise AssumptionError(
            "plant fails standing assumptions: " + "; ".join(report.messages)
        )
    return report


def hopf_cole_normalize(plant):
    """Remove a diagonal advection term by an exponential state scaling.

    The raw model is understood in divergence form with advection: the
    spatial operator is ``d/dz (diffusion dx/dz) + advection dx/dz +
    reaction x``.  The returned plant has the same boundary structure,
    no advection, and the spatial operator ``diffusion d2x/dz2 +
    reaction x``.

    Parameters
    ----------
    plant : PlantModel
        Model with a diagonal ``advection`` field (a missing field is
        treated as zero advection but still converts the divergence-form
        diffusion term).

    Returns
    -------
    PlantModel
        Normalized model with ``advection`` cleared.
    """
    lam = plant.diffusion
    n = plant.num_field
    num_points = plant.num_points
    if plant.advection is None:
        adv = MatrixField(lam.grid, np.zeros_like(lam.samples))
    else:
        adv = plant.advection

    lam_prime = lam.derivative()
    # D = (1/2) diffusion^{-1} (diffusion' + advection), diagonal
    d_samples = np.zeros_like(lam.samples)
    for i in range(n):
        d_samples[:, i, i] = 0.5 * (
            lam_prime.samples[:, i, i] + adv.samples[:, i, i]
        ) / lam.samples[:, i, i]
    d_field = MatrixField(lam.grid, d_samples)
    d_prime = d_field.derivative()
    exponent = d_field.cumulative_integral()
    s_samples = np.zeros_like(lam.samples)
    s_inv_samples = np.zeros_like(lam.samples)
    for i in range(n):
        e = exponent.samples[:, i, i]
        s_samples[:, i, i] = np.exp(e)
        s_inv_samples[:, i, i] = np.exp(-e)

    scale = MatrixField(lam.grid, s_samples)
    scale_inv = MatrixField(lam.grid, s_inv_samples)

    reaction_new = (
        scale @ plant.reaction @ scale_inv
        - lam @ d_field @ d_field
        - lam @ d_prime
    )
    d0 = d_samples[0]
    d1 = d_samples[-1]
    s1 = s_samples[-1]
    s1_inv = s_inv_samples[-1]
    return replace(
        plant,
        reaction=reaction_new,
        robin_start=plant.robin_start + d0,
        robin_end=plant.robin_end + d1,
        bc_sensor_gain=plant.bc_sensor_gain,
        bc_actuator_gain=s1 @ plant.bc_actuator_gain,
        actuator_field_gain=plant.actuator_field_gain @ s1_inv,
        advection=None,
    )


def estimate_open_loop_spectrum(plant, grid_points=151, coupling="full"):
    """Eigenvalues of the semi-discretized plant without control.

    Parameters
    ----------
    plant : PlantModel
    grid_points : int, optional
        Number of spatial nodes (at least 11).
    coupling : str, optional
        ``"full"`` (default) for the complete operator including both
        boundary subsystems; ``"pde-only"`` for the distributed part
        alone, with homogeneous Robin conditions.

    Returns
    -------
    SpectrumEstimate
    """
    if grid_points < 11:
        raise ConfigurationError("spectrum estimation needs at least 11 grid nodes")
    if coupling not in ("full", "pde-only"):
        raise ConfigurationError(f"unknown coupling mode {coupling!r}")
    from .mol import semidiscretize

    system = semidiscretize(plant, grid_points=grid_points)
    matrix = system.open_loop_matrix
    if coupling == "pde-only":
        start = system.field_offset
        matrix = matrix[start:, start:]
    eigs = np.linalg.eigvals(matrix)
    order = np.argsort(-eigs.real)
    return SpectrumEstimate(eigenvalues=eigs[order], grid_points=grid_points)
