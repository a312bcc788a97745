"""Scenario files: a flat key = value format describing a complete run.

The format is deliberately plain text, one assignment per line, so a
scenario is diffable and reproducible without any schema tooling:

    # comment (strippable anywhere on a line)
    key = value

Values are numbers, bare strings, vectors ``[1, 2.5, 3]`` or matrices
``[[0, 1], [1, 2]]``.  Recognized keys:

=========================  =====================================================
``name``                   optional label for reports
``n``                      number of control areas (buses)
``physical.edges``         transmission lines as [positive, negative] node pairs
``physical.inertia``       per-bus inertia (diagonal of M), > 0
``physical.damping``       per-bus damping (diagonal of A), > 0
``physical.line_strength`` per-line coupling gamma_k, > 0
``comm.edges``             communication graph edges (may differ from physical)
``welfare.kind``           ``quadratic`` (default) or ``quadratic-quartic``
``welfare.qg``             per-area generation cost curvature (diagonal), or
``welfare.qg_matrix``      a full SPD matrix (quadratic kind only)
``welfare.qd``             per-area demand curvature; ``welfare.qd_matrix`` full
``welfare.c``              linear generation cost coefficients
``welfare.b``              linear demand utility coefficients
``welfare.quartic``        quartic cost coefficient(s), quadratic-quartic only
``controller.kind``        ``internal-model`` or ``gradient``
``controller.tau_g``       gradient-controller timescales (default all 1)
``controller.tau_d``       (likewise; ``tau_v`` has one entry per comm edge)
``controller.tau_v``
``controller.tau_lambda``
``controller.initial_lambda``  optional price override applied to any init
``init``                   ``equilibrium`` (default) or ``explicit``
``init.eta`` ``init.p``    explicit initial physical state
``init.lambda``            explicit prices (default: pre-event common price)
``init.ug`` ``init.ud``    explicit dispatch (gradient controller)
``init.v``                 explicit flows (default: minimum-norm consistent flow)
``sim.t_end``              simulation horizon [s]
``sim.dt``                 fixed integrator step [s]
``sim.sample_every``       record every k-th step (default 1)
``sim.steady_tol``         steady-state max-norm tolerance (default 1e-6)
``event.<k>.time``         parameter-change instant of event k = 1, 2, ...
``event.<k>.b``            replacement values; also ``.c``, ``.qg``, ``.qd``,
                           ``.qg_matrix``, ``.qd_matrix``, ``.quartic``
``output.dir``             default output directory (default ``out``)
=========================  =====================================================

Events apply cumulatively: event k replaces the named fields in the
welfare active just before it.  All invariants are validated at load
time and validation errors name the offending key.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .closed_loop import ClosedLoopSystem, Event, FullState, solve_equilibrium
from .gradient import GradientController, GradientControllerState, TimeConstants
from .graph import GraphError, NetworkGraph, min_norm_flow
from .internal_model import InternalModelController, InternalModelState
from .physics import PhysicalParams, PhysicalState
from .welfare import QuadraticWelfare, WelfareError, lambda_star, quartic_welfare

__all__ = [
    "ScenarioError",
    "Scenario",
    "parse_scenario_text",
    "load_scenario",
    "build_system",
    "initial_state",
    "bundled_scenario_path",
]

CONTROLLER_KINDS = ("internal-model", "gradient")
WELFARE_KINDS = ("quadratic", "quadratic-quartic")


class ScenarioError(ValueError):
    """A scenario file failed to parse or validate; the message names the key."""


@dataclass
class Scenario:
    """Validated, ready-to-run scenario."""

    name: str
    physical: PhysicalParams
    comm: NetworkGraph
    welfare: object                  # pre-event welfare model
    controller_kind: str
    tau: TimeConstants
    initial_kind: str                # "equilibrium" | "explicit"
    initial_values: dict
    initial_lambda: object           # optional ndarray
    events: list
    t_end: float
    dt: float
    sample_every: int
    steady_tol: float
    out_dir: str
    source: str = "<memory>"


# -- low-level parsing ------------------------------------------------------


def _parse_lines(text: str, source: str) -> dict:
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ScenarioError(f"{source}:{lineno}: empty key or value")
        if key in entries:
            raise ScenarioError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            parsed = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            parsed = value  # bare string token such as internal-model
        entries[key] = (parsed, lineno)
    return entries


_REQUIRED = object()


class _Fields:
    """Typed, consumed-key-tracking access to the parsed assignments."""

    def __init__(self, entries: dict, source: str):
        self.entries = entries
        self.source = source
        self.used = set()

    def _fail(self, key: str, message: str):
        lineno = self.entries[key][1] if key in self.entries else "?"
        raise ScenarioError(f"{self.source}:{lineno}: {key}: {message}")

    def has(self, key: str) -> bool:
        return key in self.entries

    def raw(self, key: str, default=_REQUIRED):
        if key not in self.entries:
            if default is _REQUIRED:
                raise ScenarioError(f"{self.source}: missing required key {key!r}")
            return default
        self.used.add(key)
        return self.entries[key][0]

    def number(self, key: str, default=_REQUIRED) -> float:
        value = self.raw(key, default)
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            self._fail(key, f"expected a number, got {value!r}")
        return float(value)

    def integer(self, key: str, default=_REQUIRED) -> int:
        value = self.raw(key, default)
        if not isinstance(value, int) or isinstance(value, bool):
            self._fail(key, f"expected an integer, got {value!r}")
        return int(value)

    def string(self, key: str, default=_REQUIRED, choices=None) -> str:
        value = self.raw(key, default)
        if not isinstance(value, str):
            self._fail(key, f"expected a string, got {value!r}")
        if choices is not None and value not in choices:
            self._fail(key, f"must be one of {', '.join(choices)}; got {value!r}")
        return value

    def vector(self, key: str, length=None, default=_REQUIRED):
        value = self.raw(key, default)
        if value is None:
            return None
        if isinstance(value, np.ndarray):
            arr = value
        else:
            if not isinstance(value, (list, tuple)) or any(
                    isinstance(x, (list, tuple)) for x in value):
                self._fail(key, f"expected a vector like [1, 2, 3], got {value!r}")
            arr = np.array(value, dtype=float)
        if length is not None and arr.shape != (length,):
            self._fail(key, f"expected {length} entries, got {arr.shape[0]}")
        return arr

    def matrix(self, key: str):
        value = self.raw(key)
        if value is None:
            raise ScenarioError(f"{self.source}: missing required key {key!r}")
        if not isinstance(value, (list, tuple)) or not all(
                isinstance(row, (list, tuple)) for row in value):
            self._fail(key, f"expected a matrix like [[...], [...]], got {value!r}")
        try:
            return np.array(value, dtype=float)
        except ValueError:
            self._fail(key, "rows must have equal lengths")

    def edge_list(self, key: str):
        mat = self.matrix(key)
        if mat.ndim != 2 or mat.shape[1] != 2:
            self._fail(key, "expected a list of [i, j] node pairs")
        return tuple((int(i), int(j)) for i, j in mat)

    def unknown_keys(self):
        return sorted(set(self.entries) - self.used)


# -- welfare construction -----------------------------------------------------


def _q_diag_or_matrix(fields: _Fields, base: str, n: int):
    """Return ('diag', vector) or ('matrix', full) for a Q coefficient."""
    diag_key, mat_key = f"{base}", f"{base}_matrix"
    if fields.has(mat_key):
        if fields.has(diag_key):
            fields._fail(diag_key, f"give either {diag_key} or {mat_key}, not both")
        return "matrix", fields.matrix(mat_key)
    return "diag", fields.vector(diag_key, length=n)


def _build_welfare(params: dict):
    kind = params["kind"]
    try:
        if kind == "quadratic":
            qg = params["qg"] if params["qg_form"] == "matrix" else np.diag(params["qg"])
            qd = params["qd"] if params["qd_form"] == "matrix" else np.diag(params["qd"])
            return QuadraticWelfare(qg, qd, params["c"], params["b"])
        return quartic_welfare(params["qg"], params["qd"], params["c"], params["b"],
                               params["quartic"])
    except WelfareError as exc:
        raise ScenarioError(f"welfare: {exc}") from exc


def _fold_event(params: dict, overlay: dict) -> dict:
    merged = dict(params)
    merged.update(overlay)
    return merged


# -- scenario assembly --------------------------------------------------------


def parse_scenario_text(text: str, source: str = "<string>") -> Scenario:
    """Parse and fully validate a scenario from text.

    Every module-level invariant is checked here, before any run, and
    violations are reported with the offending key and line.
    """
    fields = _Fields(_parse_lines(text, source), source)

    name = fields.string("name", default="scenario")
    n = fields.integer("n")
    if n < 1:
        fields._fail("n", "must be at least 1")

    try:
        physical_graph = NetworkGraph(n, fields.edge_list("physical.edges"))
    except GraphError as exc:
        raise ScenarioError(f"{source}: physical.edges: {exc}") from exc
    try:
        comm = NetworkGraph(n, fields.edge_list("comm.edges"))
    except GraphError as exc:
        raise ScenarioError(f"{source}: comm.edges: communication graph invalid: {exc}") from exc

    try:
        physical = PhysicalParams(
            physical_graph,
            fields.vector("physical.inertia", length=n),
            fields.vector("physical.damping", length=n),
            fields.vector("physical.line_strength", length=physical_graph.m),
        )
    except ValueError as exc:
        raise ScenarioError(f"{source}: physical parameters: {exc}") from exc

    welfare_kind = fields.string("welfare.kind", default="quadratic", choices=WELFARE_KINDS)
    qg_form, qg = _q_diag_or_matrix(fields, "welfare.qg", n)
    qd_form, qd = _q_diag_or_matrix(fields, "welfare.qd", n)
    if welfare_kind == "quadratic-quartic" and (qg_form == "matrix" or qd_form == "matrix"):
        raise ScenarioError(f"{source}: welfare.kind: the quartic family is per-area; "
                            "use diagonal welfare.qg / welfare.qd")
    quartic = fields.raw("welfare.quartic", default=1.0)
    if welfare_kind == "quadratic" and fields.has("welfare.quartic"):
        raise ScenarioError(f"{source}: welfare.quartic: only valid with "
                            "welfare.kind = quadratic-quartic")
    welfare_params = {
        "kind": welfare_kind,
        "qg_form": qg_form, "qg": qg,
        "qd_form": qd_form, "qd": qd,
        "c": fields.vector("welfare.c", length=n),
        "b": fields.vector("welfare.b", length=n),
        "quartic": quartic,
    }
    welfare = _build_welfare(welfare_params)

    controller_kind = fields.string("controller.kind", choices=CONTROLLER_KINDS)
    if controller_kind == "internal-model" and welfare_kind != "quadratic":
        raise ScenarioError(
            f"{source}: controller.kind: the internal-model controller requires "
            "quadratic welfare; choose controller.kind = gradient"
        )
    try:
        tau = TimeConstants(
            fields.vector("controller.tau_g", length=n, default=np.ones(n)),
            fields.vector("controller.tau_d", length=n, default=np.ones(n)),
            fields.vector("controller.tau_v", length=comm.m, default=np.ones(comm.m)),
            fields.vector("controller.tau_lambda", length=n, default=np.ones(n)),
        )
    except ValueError as exc:
        raise ScenarioError(f"{source}: controller.tau: {exc}") from exc
    initial_lambda = fields.vector("controller.initial_lambda", length=n, default=None)

    initial_kind = fields.string("init", default="equilibrium",
                                 choices=("equilibrium", "explicit"))
    initial_values = {}
    if initial_kind == "explicit":
        initial_values["eta"] = fields.vector("init.eta", length=physical_graph.m)
        initial_values["p"] = fields.vector("init.p", length=n)
        for key, length in (("lambda", n), ("ug", n), ("ud", n), ("v", comm.m)):
            if fields.has(f"init.{key}"):
                initial_values[key] = fields.vector(f"init.{key}", length=length)
    else:
        for key in ("init.eta", "init.p", "init.lambda", "init.ug", "init.ud", "init.v"):
            if fields.has(key):
                raise ScenarioError(f"{source}: {key}: only valid with init = explicit")

    t_end = fields.number("sim.t_end")
    dt = fields.number("sim.dt")
    sample_every = fields.integer("sim.sample_every", default=1)
    steady_tol = fields.number("sim.steady_tol", default=1e-6)
    if t_end < 0:
        fields._fail("sim.t_end", "must be nonnegative")
    if dt <= 0:
        fields._fail("sim.dt", "must be positive")
    if sample_every < 1:
        fields._fail("sim.sample_every", "must be >= 1")
    if steady_tol <= 0:
        fields._fail("sim.steady_tol", "must be positive")

    out_dir = fields.string("output.dir", default="out")

    # events: event.<k>.time plus replacement fields, folded cumulatively
    event_indices = set()
    for key in fields.entries:
        parts = key.split(".")
        if parts[0] == "event":
            if len(parts) != 3 or not parts[1].isdigit():
                raise ScenarioError(f"{source}: {key}: expected event.<k>.<field>")
            event_indices.add(int(parts[1]))
    events = []
    params = welfare_params
    last_time = 0.0
    for idx in sorted(event_indices):
        prefix = f"event.{idx}"
        time = fields.number(f"{prefix}.time")
        if time < 0:
            fields._fail(f"{prefix}.time", "must be nonnegative")
        if time > t_end:
            fields._fail(f"{prefix}.time", f"beyond sim.t_end = {t_end:g}")
        if events and time <= last_time:
            fields._fail(f"{prefix}.time", "event times must be strictly increasing")
        overlay = {}
        for fname in ("b", "c"):
            if fields.has(f"{prefix}.{fname}"):
                overlay[fname] = fields.vector(f"{prefix}.{fname}", length=n)
        for fname in ("qg", "qd"):
            if fields.has(f"{prefix}.{fname}_matrix"):
                overlay[fname] = fields.matrix(f"{prefix}.{fname}_matrix")
                overlay[f"{fname}_form"] = "matrix"
            elif fields.has(f"{prefix}.{fname}"):
                overlay[fname] = fields.vector(f"{prefix}.{fname}", length=n)
                overlay[f"{fname}_form"] = "diag"
        if fields.has(f"{prefix}.quartic"):
            if params["kind"] != "quadratic-quartic":
                fields._fail(f"{prefix}.quartic", "only valid with the quartic family")
            overlay["quartic"] = fields.raw(f"{prefix}.quartic")
        if not overlay:
            fields._fail(f"{prefix}.time", "event changes no welfare field")
        params = _fold_event(params, overlay)
        events.append(Event(time, _build_welfare(params)))
        last_time = time

    leftover = fields.unknown_keys()
    if leftover:
        raise ScenarioError(f"{source}: unknown key(s): {', '.join(leftover)}")

    return Scenario(
        name=name,
        physical=physical,
        comm=comm,
        welfare=welfare,
        controller_kind=controller_kind,
        tau=tau,
        initial_kind=initial_kind,
        initial_values=initial_values,
        initial_lambda=initial_lambda,
        events=events,
        t_end=t_end,
        dt=dt,
        sample_every=sample_every,
        steady_tol=steady_tol,
        out_dir=out_dir,
        source=source,
    )


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario_text(text, source=str(path))


def build_system(scenario: Scenario, controller_override: str | None = None) -> ClosedLoopSystem:
    """Assemble the closed-loop system a scenario describes."""
    kind = controller_override or scenario.controller_kind
    if kind not in CONTROLLER_KINDS:
        raise ScenarioError(f"controller kind must be one of {CONTROLLER_KINDS}, got {kind!r}")
    try:
        if kind == "internal-model":
            controller = InternalModelController(scenario.welfare, scenario.comm)
        else:
            controller = GradientController(scenario.welfare, scenario.comm, scenario.tau)
    except TypeError as exc:
        raise ScenarioError(f"controller.kind: {exc}") from exc
    return ClosedLoopSystem(scenario.physical, controller)


def initial_state(scenario: Scenario, sys: ClosedLoopSystem) -> FullState:
    """Initial condition per the scenario: pre-event equilibrium or explicit.

    ``controller.initial_lambda`` (if given) replaces the prices in either
    case.  For the gradient controller an explicit state missing ``v``
    gets the minimum-norm flow consistent with its dispatch when the
    dispatch is balanced, zero otherwise.
    """
    if scenario.initial_kind == "equilibrium":
        state = solve_equilibrium(sys)
        if scenario.initial_lambda is not None:
            state.controller.lam = scenario.initial_lambda.copy()
        return state

    vals = scenario.initial_values
    physical = PhysicalState(vals["eta"].copy(), vals["p"].copy())
    lam = vals.get("lambda")
    if lam is None:
        lam = scenario.initial_lambda
    if lam is None:
        if not isinstance(scenario.welfare, QuadraticWelfare):
            raise ScenarioError("init.lambda is required for non-quadratic welfare")
        lam = lambda_star(scenario.welfare) * np.ones(sys.physics.n)
    lam = np.asarray(lam, dtype=float)

    if sys.kind == "internal-model":
        return FullState(physical, InternalModelState(lam.copy()))
    ctrl = sys.controller
    ug = vals.get("ug")
    ud = vals.get("ud")
    if ug is None or ud is None:
        raise ScenarioError("init.ug and init.ud are required for the gradient controller")
    v = vals.get("v")
    if v is None:
        imbalance = float(np.sum(ug - ud))
        if abs(imbalance) < 1e-9:
            v = min_norm_flow(ctrl.comm, ug - ud)
        else:
            v = np.zeros(ctrl.m_c)
    return FullState(physical, GradientControllerState(ug.copy(), ud.copy(),
                                                       np.asarray(v, dtype=float),
                                                       lam.copy()))


def bundled_scenario_path(name: str = "four_area") -> Path:
    """Path of a scenario shipped with the package."""
    path = Path(__file__).parent / "scenarios" / f"{name}.scenario"
    if not path.exists():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return path
