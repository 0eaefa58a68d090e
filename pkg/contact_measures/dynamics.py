"""Domain-limited ODE flows, flow Jacobians and trajectory probes.

Integration never raises on a failed orbit: leaving the escape box or
producing non-finite values ends the run early and the outcome carries the
status. A field that fails with one of DOMAIN_ERRORS counts as an escape;
any other exception propagates. Callers decide what an incomplete orbit
means for them.
"""
import csv
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from math import ceil
from typing import Callable, Optional

import numpy as np
from scipy.integrate import RK45

from contact_measures.contact import ContactError, hamiltonian_vector_field, reeb
from contact_measures.exterior import Chart, ChartBoundaryError, VectorField, numeric_jacobian
from contact_measures.zeroset import ZeroSetError

logger = logging.getLogger(__name__)

# field failures that mean the orbit has left the domain; anything else propagates
DOMAIN_ERRORS = (ContactError, ZeroSetError, ChartBoundaryError, np.linalg.LinAlgError, ArithmeticError)


class FlowStatus(str, Enum):
    COMPLETE = "complete"
    ESCAPED = "escaped"
    BLOWUP = "blowup"


class FlowError(Exception):
    """Custom exception for flows that did not reach the requested time."""

    def __init__(self, message, outcome=None):
        super().__init__(message)
        self.outcome = outcome


@dataclass(frozen=True)
class FlowOptions:
    method: str = "rk45"
    step: float = 1e-2
    rtol: float = 1e-10
    atol: float = 1e-10
    box: Optional[Chart] = None
    box_inflation: float = 0.1
    blowup_factor: float = 1e8
    jacobian: str = "variational"
    fd_step: float = 1e-5
    max_steps: int = 200000
    domain_errors: tuple = DOMAIN_ERRORS

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"Unknown integration method: {self.method}")
        if self.jacobian not in ("variational", "finite_difference"):
            raise ValueError(f"Unknown flow Jacobian route: {self.jacobian}")
        for name in ("step", "rtol", "atol", "blowup_factor", "fd_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"FlowOptions.{name} must be positive")
        if self.box_inflation < 0:
            raise ValueError("FlowOptions.box_inflation must be non-negative")

    def escape_box(self):
        if self.box is None:
            return None
        return self.box.inflated(self.box_inflation)

    def within(self, box):
        return replace(self, box=box)


@dataclass(frozen=True, eq=False)
class FlowOutcome:
    times: np.ndarray
    states: np.ndarray
    requested_t: float
    reached_t: float
    status: FlowStatus

    @property
    def complete(self):
        return self.status is FlowStatus.COMPLETE

    @property
    def final(self):
        return self.states[-1]

    @property
    def samples(self):
        return list(zip(self.times.tolist(), self.states))


@dataclass
class ConservationReport:
    rate_residual: float
    energy_drift: Optional[float]
    samples: int
    conservative: bool = False
    notes: list = field(default_factory=list)


def _rk4_step(fun, y, dt):
    k1 = fun(y)
    k2 = fun(y + 0.5 * dt * k1)
    k3 = fun(y + 0.5 * dt * k2)
    k4 = fun(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(field, x0, t, opts=None):
    """Approximate the flow of `field` from x0 for time t (negative t flows backwards)."""
    opts = opts or FlowOptions()
    x0 = np.asarray(x0, dtype=float)
    box = opts.escape_box()
    times, states = [0.0], [x0.copy()]

    def outcome(status, reached):
        return FlowOutcome(np.asarray(times), np.vstack(states), float(t), float(reached), status)

    if box is not None and not box.contains(x0[:box.dim]):
        logger.warning(f"Initial point {x0} lies outside the escape box of {box.name}")
        return outcome(FlowStatus.ESCAPED, 0.0)
    if t == 0:
        return outcome(FlowStatus.COMPLETE, 0.0)

    direction = 1.0 if t > 0 else -1.0
    rhs = field if t > 0 else field.negated()
    limit = opts.blowup_factor * max(float(np.linalg.norm(x0)), 1.0)
    duration = abs(float(t))

    def accept(s, y):
        """Returns a status when the new state ends the run."""
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > limit:
            return FlowStatus.BLOWUP
        if box is not None and not box.contains(y[:box.dim]):
            return FlowStatus.ESCAPED
        times.append(direction * s)
        states.append(np.array(y, dtype=float))
        return None

    status = FlowStatus.COMPLETE
    try:
        if opts.method == "rk4":
            count = max(1, int(ceil(duration / opts.step)))
            dt = duration / count
            y = x0.copy()
            for k in range(count):
                y = _rk4_step(rhs, y, dt)
                stop = accept(duration if k + 1 == count else (k + 1) * dt, y)
                if stop is not None:
                    status = stop
                    break
        else:
            solver = RK45(lambda _s, y: rhs(y), 0.0, x0, duration, rtol=opts.rtol, atol=opts.atol)
            steps = 0
            while solver.status == "running":
                message = solver.step()
                steps += 1
                if solver.status == "failed":
                    logger.warning(f"RK45 failed for {field.name}: {message}")
                    status = FlowStatus.BLOWUP
                    break
                stop = accept(solver.t, solver.y)
                if stop is not None:
                    status = stop
                    break
                if steps >= opts.max_steps:
                    logger.warning(f"Step limit of {opts.max_steps} exhausted for {field.name}")
                    status = FlowStatus.BLOWUP
                    break
    except opts.domain_errors as e:
        logger.warning(f"Field {field.name} failed during integration: {e}")
        status = FlowStatus.ESCAPED

    s = abs(times[-1])
    if status is not FlowStatus.COMPLETE:
        logger.debug(f"Flow of {field.name} from {x0} stopped at t={direction * s:.6g} ({status.value})")
    return outcome(status, direction * s)


def flow_map(field, x0, t, opts=None):
    result = integrate(field, x0, t, opts)
    if not result.complete:
        raise FlowError(
            f"flow of {field.name} reached t={result.reached_t:.6g} of {t:.6g} ({result.status.value})", result)
    return result.final


def flow_with_jacobian(field, x0, t, opts=None):
    """(Phi_t(x0), D Phi_t(x0)); raises FlowError on incomplete orbits."""
    opts = opts or FlowOptions()
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    if t == 0:
        return x0.copy(), np.eye(d)
    if opts.jacobian == "finite_difference":
        fixed = replace(opts, method="rk4")
        columns = []
        for i in range(d):
            shift = np.zeros(d)
            shift[i] = opts.fd_step
            plus = flow_map(field, x0 + shift, t, fixed)
            minus = flow_map(field, x0 - shift, t, fixed)
            columns.append((plus - minus) / (2.0 * opts.fd_step))
        return flow_map(field, x0, t, opts), np.column_stack(columns)

    def augmented(y):
        x = y[:d]
        M = y[d:].reshape(d, d)
        return np.concatenate([field(x), (field.jac(x, opts.fd_step) @ M).ravel()])

    variational = VectorField(d + d * d, augmented, name=f"D{field.name}")
    final = flow_map(variational, np.concatenate([x0, np.eye(d).ravel()]), t, opts)
    return final[:d], final[d:].reshape(d, d)


def flow_jacobian(field, x0, t, opts=None):
    return flow_with_jacobian(field, x0, t, opts)[1]


def pushforward_invariance_check(density, field, x0, t, opts=None, exact_flow: Optional[Callable] = None):
    """rho(Phi_t x0) |det D Phi_t(x0)| / rho(x0) - 1."""
    opts = opts or FlowOptions()
    x0 = np.asarray(x0, dtype=float)
    rho0 = density(x0)
    if rho0 == 0:
        logger.error(f"Density vanishes at {x0}")
        raise ValueError(f"density vanishes at {x0}")
    if t == 0:
        return 0.0
    if exact_flow is not None:
        x_t = np.asarray(exact_flow(t, x0), dtype=float)
        J = numeric_jacobian(lambda y: exact_flow(t, y), x0, opts.fd_step)
    else:
        x_t, J = flow_with_jacobian(field, x0, t, opts)
    return float(density(x_t) * abs(np.linalg.det(J)) / rho0 - 1.0)


def conservation_probe(sys, x0, t, opts=None, grid=200):
    """Along the orbit of X_H: max |d(H o Phi)/dt + H xi(H)|, and the energy drift when xi(H) = 0."""
    opts = opts or FlowOptions()
    H = sys.hamiltonian
    field = hamiltonian_vector_field(sys)
    x0 = np.asarray(x0, dtype=float)
    if t == 0:
        return ConservationReport(0.0, 0.0, 1, True)

    times = np.linspace(0.0, t, grid + 1)
    dt = times[1] - times[0]
    states = [x0]
    for k in range(grid):
        states.append(flow_map(field, states[-1], dt, opts))
    values = np.array([H(x) for x in states])
    xi_H = np.array([reeb(sys, x) @ H.grad(x, sys.step) for x in states])

    rates = (-values[4:] + 8.0 * values[3:-1] - 8.0 * values[1:-3] + values[:-4]) / (12.0 * dt)
    rate_residual = float(np.max(np.abs(rates + (values * xi_H)[2:-2]))) if rates.size else 0.0

    scale = max(1.0, float(np.max(np.abs(H.grad(x0, sys.step)))))
    conservative = bool(np.max(np.abs(xi_H)) <= 1e-12 * scale)
    drift = None
    notes = []
    if conservative:
        orbit = integrate(field, x0, t, opts)
        if not orbit.complete:
            raise FlowError(f"orbit stopped at t={orbit.reached_t:.6g} ({orbit.status.value})", orbit)
        energies = np.array([H(x) for x in orbit.states])
        drift = float(np.max(np.abs(energies - energies[0])))
    else:
        notes.append("H depends on z: energy drift not a conserved quantity")
    return ConservationReport(rate_residual, drift, grid + 1, conservative, notes)


def write_trajectory_csv(outcome, path, trailer=None):
    """Rows t,x0..x{d-1},status; the last data row carries the outcome status."""
    dim = outcome.states.shape[1]
    header = ["t"] + [f"x{i}" for i in range(dim)] + ["status"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        last = len(outcome.times) - 1
        for k, (s, x) in enumerate(zip(outcome.times, outcome.states)):
            status = outcome.status.value if k == last else "ok"
            writer.writerow([repr(float(s))] + [repr(float(v)) for v in x] + [status])
        if trailer is not None:
            row = [str(item) for item in trailer]
            writer.writerow(row + [""] * (len(header) - len(row)))
    logger.info(f"Trajectory with {len(outcome.times)} samples written to {path}")
