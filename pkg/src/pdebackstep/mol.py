"""Method-of-lines semi-discretization.

The distributed state is sampled on a uniform grid and the second
derivative is replaced by central differences.  The Robin boundary
conditions are eliminated with ghost nodes, so the boundary rows stay
second-order accurate and the couplings to the boundary subsystems
appear explicitly in the system matrix.

State layout of a semi-discrete plant vector:
``[sensing state; actuating state; field node 0; ...; field node N-1]``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, StructuralError
from .fields import composite_weights, uniform_grid

__all__ = [
    "SemiDiscreteSystem",
    "semidiscretize",
    "feedback_row",
    "feedback_closed_loop",
    "observer_closed_loop",
    "error_system_matrix",
]


@dataclass
class SemiDiscreteSystem:
    """Semi-discrete plant: system matrix, input matrix and state layout.

    Attributes
    ----------
    plant : PlantModel
        The plant re-sampled on the simulation grid.
    grid : numpy.ndarray
        Spatial nodes.
    open_loop_matrix : numpy.ndarray
        Dynamics matrix with the control held at zero.
    input_matrix : numpy.ndarray
        Maps the control vector into the state derivative.
    """

    plant: object
    grid: np.ndarray
    open_loop_matrix: np.ndarray
    input_matrix: np.ndarray

    @property
    def num_points(self):
        return self.grid.size

    @property
    def dim(self):
        return self.open_loop_matrix.shape[0]

    @property
    def sensor_slice(self):
        return slice(0, self.plant.num_sensor)

    @property
    def actuator_slice(self):
        n0 = self.plant.num_sensor
        return slice(n0, n0 + self.plant.num_actuator)

    @property
    def field_offset(self):
        return self.plant.num_sensor + self.plant.num_actuator

    def node_slice(self, i):
        n = self.plant.num_field
        start = self.field_offset + i * n
        return slice(start, start + n)

    def extract_field(self, state):
        """Field part of a state vector as an array of shape ``(N, n)``."""
        n = self.plant.num_field
        return np.asarray(state)[..., self.field_offset:].reshape(
            state.shape[:-1] + (self.num_points, n)
        )

    def pack_state(self, sensor, actuator, field_nodes):
        """Assemble a state vector from its three parts."""
        field_nodes = np.asarray(field_nodes, dtype=float)
        return np.concatenate(
            [
                np.asarray(sensor, dtype=float).ravel(),
                np.asarray(actuator, dtype=float).ravel(),
                field_nodes.reshape(-1),
            ]
        )


def semidiscretize(plant, grid_points=151):
    """Semi-discretize a plant by central differences with ghost nodes.

    Parameters
    ----------
    plant : PlantModel
    grid_points : int, optional
        Number of spatial nodes (default 151).

    Returns
    -------
    SemiDiscreteSystem
    """
    if grid_points < 3:
        raise ConfigurationError("semi-discretization needs at least 3 nodes")
    if plant.advection is not None:
        raise StructuralError(
            "plant still carries an advection field; apply hopf_cole_normalize first"
        )
    local = plant if plant.num_points == grid_points else plant.resample(grid_points)
    grid = uniform_grid(grid_points)
    h = grid[1] - grid[0]
    n = local.num_field
    n0 = local.num_sensor
    n1 = local.num_actuator
    dim = n0 + n1 + n * grid_points
    a = np.zeros((dim, dim))
    b = np.zeros((dim, n))

    lam = local.diffusion.samples
    rea = local.reaction.samples

    sys = SemiDiscreteSystem(plant=local, grid=grid, open_loop_matrix=a, input_matrix=b)
    s0 = sys.sensor_slice
    s1 = sys.actuator_slice

    # boundary subsystems
    a[s0, s0] = local.sensor_sys
    a[s0, sys.node_slice(0)] = local.sensor_field_gain
    a[s1, s1] = local.actuator_sys
    a[s1, sys.node_slice(grid_points - 1)] = local.actuator_field_gain
    b[s1, :] = local.control_gain

    inv_h2 = 1.0 / (h * h)
    for i in range(1, grid_points - 1):
        li = lam[i] * inv_h2
        rows = sys.node_slice(i)
        a[rows, sys.node_slice(i - 1)] += li
        a[rows, rows] += -2.0 * li + rea[i]
        a[rows, sys.node_slice(i + 1)] += li

    # near end: ghost node from  x'(0) = Q0 x(0) + C0 w0
    l0 = lam[0] * inv_h2
    rows = sys.node_slice(0)
    a[rows, sys.node_slice(1)] += 2.0 * l0
    a[rows, rows] += -2.0 * l0 - (2.0 / h) * lam[0] @ local.robin_start + rea[0]
    a[rows, s0] += -(2.0 / h) * lam[0] @ local.bc_sensor_gain

    # far end: ghost node from  x'(1) = Q1 x(1) + C1 w1
    l1 = lam[-1] * inv_h2
    rows = sys.node_slice(grid_points - 1)
    a[rows, sys.node_slice(grid_points - 2)] += 2.0 * l1
    a[rows, rows] += -2.0 * l1 + (2.0 / h) * lam[-1] @ local.robin_end + rea[-1]
    a[rows, s1] += (2.0 / h) * lam[-1] @ local.bc_actuator_gain

    return sys


def feedback_row(system, feedback):
    """Control as an explicit linear map of the semi-discrete plant state.

    The feedback combines the boundary-subsystem states, the two field
    traces, a weighted integral of the field, and the time derivative of
    the far trace; the derivative is eliminated with the open-loop
    dynamics rows, which is exact because the control does not enter the
    far-trace equation directly.

    Parameters
    ----------
    system : SemiDiscreteSystem
    feedback : FeedbackRealization

    Returns
    -------
    numpy.ndarray
        Matrix ``G`` with ``u = G state``.
    """
    npts = system.num_points
    g = feedback_static_row(system, feedback)
    rate_rows = system.open_loop_matrix[system.node_slice(npts - 1), :]
    return g + feedback.field_end_rate_gain @ rate_rows


def feedback_closed_loop(system, feedback):
    """Closed-loop matrix with the feedback acting on the true state."""
    g = feedback_row(system, feedback)
    return system.open_loop_matrix + system.input_matrix @ g


def _observer_injection_rows(system, observer, delta_row, delta_rate_row, offset):
    """Dynamics rows of the observer copy, as maps of the joint state.

    ``delta_row`` and ``delta_rate_row`` map the joint state to the
    output mismatch and its derivative.  ``offset`` is the column offset
    of the observer block inside the joint state.
    """
    plant = system.plant
    n = plant.num_field
    npts = system.num_points
    dim = system.dim
    joint = delta_row.shape[1]
    h = system.grid[1] - system.grid[0]
    rows = np.zeros((dim, joint))

    # copy of the open-loop dynamics acting on the observer block
    rows[:, offset : offset + dim] = system.open_loop_matrix

    field_injection = observer.field_injection(system.grid)
    for i in range(npts):
        sl = system.node_slice(i)
        rows[sl, :] += field_injection[i] @ delta_row

    lam0 = plant.diffusion.samples[0]
    lam1 = plant.diffusion.samples[-1]
    sl0 = system.node_slice(0)
    rows[sl0, :] += (
        -(2.0 / h)
        * lam0
        @ (
            observer.bc_start_injection @ delta_row
            + observer.bc_start_rate_injection @ delta_rate_row
        )
    )
    sl1 = system.node_slice(npts - 1)
    rows[sl1, :] += (2.0 / h) * lam1 @ (observer.bc_end_injection @ delta_row)

    rows[system.sensor_slice, :] += observer.sensor_injection @ delta_row
    rows[system.actuator_slice, :] += observer.actuator_injection @ delta_row
    return rows


def observer_closed_loop(system, feedback, observer, derivative_filter_tau=None):
    """Joint plant-plus-compensator matrix.

    The compensator runs a copy of the plant driven by the output
    mismatch and applies the feedback to the estimated state.  The
    output-mismatch derivative used at the near boundary is eliminated
    exactly by default; with ``derivative_filter_tau`` set, it is
    produced by a first-order filter instead and the filter state is
    appended to the joint state.

    Returns
    -------
    (numpy.ndarray, dict)
        The joint system matrix and a layout description with the
        offsets of the plant block, the observer block, the control row
        map and, if present, the filter block.
    """
    plant = system.plant
    n = plant.num_field
    dim = system.dim
    use_filter = derivative_filter_tau is not None
    joint = 2 * dim + (n if use_filter else 0)

    delta_row = np.zeros((n, joint))
    delta_row[:, system.sensor_slice] = plant.output_map
    delta_row[:, dim + np.arange(plant.num_sensor)] = -plant.output_map

    # sensing-state derivative rows of plant and observer copies; neither
    # involves the mismatch derivative, so this is not circular
    w0_plant = np.zeros((plant.num_sensor, joint))
    w0_plant[:, :dim] = system.open_loop_matrix[system.sensor_slice, :]
    w0_obs = np.zeros((plant.num_sensor, joint))
    w0_obs[:, dim : 2 * dim] = system.open_loop_matrix[system.sensor_slice, :]
    w0_obs += observer.sensor_injection @ delta_row
    exact_rate = plant.output_map @ (w0_plant - w0_obs)

    if use_filter:
        tau = float(derivative_filter_tau)
        if tau <= 0.0:
            raise ConfigurationError("derivative filter time constant must be positive")
        filter_cols = slice(2 * dim, 2 * dim + n)
        delta_rate_row = (delta_row - np.eye(joint)[filter_cols, :]) / tau
    else:
        delta_rate_row = exact_rate

    obs_rows = _observer_injection_rows(system, observer, delta_row, delta_rate_row, dim)

    # feedback acting on the observer block; the far-trace derivative is
    # taken from the observer's own dynamics rows, which are known exactly
    g_static = np.zeros((n, joint))
    g_static[:, dim : 2 * dim] = feedback_static_row(system, feedback)
    npts = system.num_points
    rate_rows = obs_rows[system.node_slice(npts - 1), :]
    u_row = g_static + feedback.field_end_rate_gain @ rate_rows

    a = np.zeros((joint, joint))
    a[:dim, :dim] = system.open_loop_matrix
    a[:dim, :] += system.input_matrix @ u_row
    # control drives the actuating subsystem of plant and observer alike
    a[dim : 2 * dim, :] = obs_rows + system.input_matrix @ u_row
    if use_filter:
        a[filter_cols, :] = delta_rate_row

    layout = {
        "plant": slice(0, dim),
        "observer": slice(dim, 2 * dim),
        "control_row": u_row,
        "mismatch_row": delta_row,
    }
    if use_filter:
        layout["filter"] = filter_cols
    return a, layout


def feedback_static_row(system, feedback):
    """Feedback map without the far-trace derivative tap."""
    plant = system.plant
    n = plant.num_field
    npts = system.num_points
    g = np.zeros((n, system.dim))
    g[:, system.sensor_slice] = feedback.sensor_gain
    g[:, system.actuator_slice] = feedback.actuator_gain
    g[:, system.node_slice(0)] += feedback.field_start_gain
    g[:, system.node_slice(npts - 1)] += feedback.field_end_gain
    weights = composite_weights(npts, system.grid[1] - system.grid[0])
    kernel_samples = feedback.field_kernel(system.grid)
    for i in range(npts):
        g[:, system.node_slice(i)] += weights[i] * kernel_samples[i]
    return g


def error_system_matrix(system, observer):
    """Dynamics matrix of the estimation error.

    Built directly from the error equations: the plant template with the
    near boundary condition replaced by the auxiliary error condition
    and the output injections entering with opposite sign.
    """
    plant = system.plant
    n = plant.num_field
    npts = system.num_points
    dim = system.dim
    h = system.grid[1] - system.grid[0]
    a = np.array(system.open_loop_matrix, copy=True)

    c = plant.output_map
    field_injection = observer.field_injection(system.grid)
    for i in range(npts):
        a[system.node_slice(i), system.sensor_slice] += -field_injection[i] @ c

    lam0 = plant.diffusion.samples[0]
    lam1 = plant.diffusion.samples[-1]
    sl0 = system.node_slice(0)
    # near boundary condition of the error:  e' = Lt1 e(0) + Lt0 e_sensor
    a[sl0, sl0] += -(2.0 / h) * lam0 @ (observer.error_bc_state - plant.robin_start)
    a[sl0, system.sensor_slice] += -(2.0 / h) * lam0 @ (
        observer.error_bc_sensor - plant.bc_sensor_gain
    )

    sl1 = system.node_slice(npts - 1)
    a[sl1, system.sensor_slice] += -(2.0 / h) * lam1 @ (
        observer.bc_end_injection @ c
    )

    a[system.sensor_slice, system.sensor_slice] += -observer.sensor_injection @ c
    a[system.actuator_slice, system.sensor_slice] += -observer.actuator_injection @ c
    return a
