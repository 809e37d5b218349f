"""Plant and design configuration files.

A configuration is a single TOML document describing the plant
coefficients, the design parameters for the feedback and observer
syntheses, the grid resolution and the simulation scenario.  Matrix
entries are numbers; spatially varying coefficients are entered as
expression strings in the grammar of
:func:`pdebackstep.fields.parse_expression`.
"""

import io
from dataclasses import dataclass, field

import numpy as np
import tomli

from .errors import ConfigurationError
from .fields import MatrixField, parse_expression, uniform_grid
from .plant import PlantModel

__all__ = [
    "FeedbackDesignSpec",
    "ObserverDesignSpec",
    "SimulationSpec",
    "RunConfig",
    "load_config",
    "loads_config",
    "benchmark_document",
    "benchmark_config",
]


@dataclass
class FeedbackDesignSpec:
    """Parameters of the state-feedback synthesis.

    Attributes
    ----------
    shift : float
        Stability margin added to the diffusion part of the target
        dynamics.
    sensor_targets : list
        Desired eigenvalues for the sensing-subsystem placement.
    actuation_targets : list
        Desired eigenvalues for the composed input-dynamics placement.
    actuator_complement : numpy.ndarray or None
        Optional rows completing the control-to-boundary coupling to a
        square change of coordinates; a null-space basis is used when
        absent.
    """

    shift: float
    sensor_targets: list
    actuation_targets: list
    actuator_complement: np.ndarray = None


@dataclass
class ObserverDesignSpec:
    """Parameters of the observer synthesis (mirror of the feedback spec)."""

    shift: float
    actuation_targets: list
    sensor_targets: list
    sensor_complement: np.ndarray = None


@dataclass
class SimulationSpec:
    """Scenario of a closed-loop simulation run."""

    t_final: float = 6.0
    dt: float = 1e-4
    initial_field: list = None
    derivative_filter_tau: float = None


@dataclass
class RunConfig:
    """Everything a command needs: plant, design parameters, grid, scenario."""

    plant: PlantModel
    feedback: FeedbackDesignSpec
    observer: ObserverDesignSpec
    simulation: SimulationSpec
    grid_points: int = 151
    seed: int = 20260822
    name: str = "unnamed"

    def initial_field_samples(self, grid):
        """Evaluate the initial field expressions on ``grid``; zeros if unset."""
        n = self.plant.num_field
        out = np.zeros((len(grid), n))
        exprs = self.simulation.initial_field
        if exprs is None:
            return out
        if len(exprs) != n:
            raise ConfigurationError(
                f"initial_field needs {n} entries, got {len(exprs)}"
            )
        for i, expr in enumerate(exprs):
            if isinstance(expr, str):
                out[:, i] = parse_expression(expr)(np.asarray(grid))
            else:
                out[:, i] = float(expr)
        return out


def _need(table, key, where):
    if key not in table:
        raise ConfigurationError(f"missing key {where}.{key}")
    return table[key]


def _matrix(value, what):
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ConfigurationError(f"{what} must be a matrix (list of rows)")
    return arr


def _field_from_entries(entries, num_points, what, diagonal=False):
    if diagonal:
        if not isinstance(entries, list) or any(isinstance(r, list) for r in entries):
            raise ConfigurationError(f"{what} must be a flat list of diagonal entries")
        n = len(entries)
        table = [[entries[i] if i == j else 0.0 for j in range(n)] for i in range(n)]
    else:
        table = entries
        if not isinstance(table, list) or not all(isinstance(r, list) for r in table):
            raise ConfigurationError(f"{what} must be a list of rows")
    return MatrixField.from_expressions(table, num_points)


def _targets(value, what):
    out = []
    for item in value:
        if isinstance(item, str):
            out.append(complex(item.replace(" ", "").replace("i", "j")))
        else:
            out.append(complex(float(item)))
    return out


def loads_config(text):
    """Parse a configuration document from a string.

    Returns
    -------
    RunConfig
    """
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse configuration: {exc}") from None

    grid_tbl = doc.get("grid", {})
    num_points = int(grid_tbl.get("points", 151))
    if num_points < 11:
        raise ConfigurationError("grid.points must be at least 11")

    model = _need(doc, "model", "document root")
    pde = _need(model, "pde", "model")
    diffusion = _field_from_entries(
        _need(pde, "diffusion", "model.pde"), num_points, "model.pde.diffusion", diagonal=True
    )
    reaction = _field_from_entries(
        _need(pde, "reaction", "model.pde"), num_points, "model.pde.reaction"
    )
    advection = None
    if "advection" in pde:
        advection = _field_from_entries(
            pde["advection"], num_points, "model.pde.advection", diagonal=True
        )

    boundary = _need(model, "boundary", "model")
    sensor = _need(model, "sensor", "model")
    actuator = _need(model, "actuator", "model")

    plant = PlantModel(
        diffusion=diffusion,
        reaction=reaction,
        advection=advection,
        robin_start=np.asarray(_need(boundary, "robin_start", "model.boundary"), dtype=float),
        robin_end=np.asarray(_need(boundary, "robin_end", "model.boundary"), dtype=float),
        bc_sensor_gain=_matrix(_need(boundary, "sensor_coupling", "model.boundary"), "sensor_coupling"),
        bc_actuator_gain=_matrix(_need(boundary, "actuator_coupling", "model.boundary"), "actuator_coupling"),
        sensor_sys=_matrix(_need(sensor, "dynamics", "model.sensor"), "sensor dynamics"),
        sensor_field_gain=_matrix(_need(sensor, "field_gain", "model.sensor"), "sensor field_gain"),
        output_map=_matrix(_need(sensor, "output", "model.sensor"), "sensor output"),
        actuator_sys=_matrix(_need(actuator, "dynamics", "model.actuator"), "actuator dynamics"),
        actuator_field_gain=_matrix(_need(actuator, "field_gain", "model.actuator"), "actuator field_gain"),
        control_gain=_matrix(_need(actuator, "control", "model.actuator"), "actuator control"),
    )

    design = doc.get("design", {})
    fb_tbl = design.get("feedback", {})
    ob_tbl = design.get("observer", {})

    feedback = FeedbackDesignSpec(
        shift=float(fb_tbl.get("shift", 1.0)),
        sensor_targets=_targets(fb_tbl.get("sensor_targets", []), "feedback.sensor_targets"),
        actuation_targets=_targets(fb_tbl.get("actuation_targets", []), "feedback.actuation_targets"),
        actuator_complement=(
            _matrix(fb_tbl["actuator_complement"], "actuator_complement")
            if "actuator_complement" in fb_tbl
            else None
        ),
    )
    observer = ObserverDesignSpec(
        shift=float(ob_tbl.get("shift", 2.0)),
        actuation_targets=_targets(ob_tbl.get("actuation_targets", []), "observer.actuation_targets"),
        sensor_targets=_targets(ob_tbl.get("sensor_targets", []), "observer.sensor_targets"),
        sensor_complement=(
            _matrix(ob_tbl["sensor_complement"], "sensor_complement")
            if "sensor_complement" in ob_tbl
            else None
        ),
    )

    sim_tbl = doc.get("simulation", {})
    simulation = SimulationSpec(
        t_final=float(sim_tbl.get("t_final", 6.0)),
        dt=float(sim_tbl.get("dt", 1e-4)),
        initial_field=sim_tbl.get("initial_field"),
        derivative_filter_tau=(
            float(sim_tbl["derivative_filter_tau"])
            if "derivative_filter_tau" in sim_tbl
            else None
        ),
    )

    return RunConfig(
        plant=plant,
        feedback=feedback,
        observer=observer,
        simulation=simulation,
        grid_points=num_points,
        seed=int(design.get("seed", 20260822)),
        name=str(doc.get("name", "unnamed")),
    )


def load_config(path):
    """Parse a configuration document from a file path."""
    try:
        with open(path, "rb") as handle:
            text = handle.read().decode("utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration file: {exc}") from None
    return loads_config(text)


# Reference two-component plant with three-dimensional boundary subsystems,
# unstable in open loop; exercised throughout the test suite.
_BENCHMARK_TOML = """\
name = "coupled-parabolic-benchmark"

[grid]
points = 151

[model.pde]
diffusion = ["2 + 2*sin(pi*z)", "1.1 + sin(pi*z)"]
reaction = [["0.5 + z", "1"], ["0.5", "2 + z"]]

[model.boundary]
robin_start = [2.25, 1.0]
robin_end = [2.0, 3.0]
sensor_coupling = [[0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]
actuator_coupling = [[1.5, 0.0, 1.0], [0.0, 2.0, 0.5]]

[model.sensor]
dynamics = [[0.4, 0.0, 0.0], [0.0, 0.75, 0.0], [0.0, 0.0, 0.2]]
field_gain = [[1.5, 0.0], [0.0, 1.0], [1.0, 1.0]]
output = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]

[model.actuator]
dynamics = [[0.3, 0.0, 0.0], [0.0, 0.2, 0.0], [0.0, 0.0, 0.1]]
field_gain = [[1.0, 0.0], [0.0, 0.75], [1.0, 1.0]]
control = [[2.0, 0.0], [0.0, 1.0], [2.0, 3.0]]

[design]
seed = 20260822

[design.feedback]
shift = 2.3
sensor_targets = [-4.2, -4.0, -4.8]
actuation_targets = [-5.3, -5.0, -6.0]
actuator_complement = [[-1.0, -3.0, 1.0]]

[design.observer]
shift = 4.6
actuation_targets = [-10.6, -10.0, -12.0]
sensor_targets = [-8.2, -8.0, -9.6]
sensor_complement = [[0.0], [0.0], [1.0]]

[simulation]
t_final = 6.0
dt = 1e-4
initial_field = [
    "5*(0.75*sin(pi*z) - 0.25*sin(3*pi*z))",
    "5*(0.75*sin(pi*z) - 0.25*sin(3*pi*z))",
]
"""


def benchmark_document():
    """The bundled example configuration as TOML text."""
    return _BENCHMARK_TOML


def benchmark_config():
    """The bundled example parsed into a :class:`RunConfig`."""
    return loads_config(_BENCHMARK_TOML)
