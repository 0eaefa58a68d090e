"""Flow-built rectifications and the two sandwich maps.

A rectification of Z with Z(sigma) = r sends y to (sigma(y)/r, Phi^Z(-sigma(y)/r, y)),
a time coordinate and a point of the slice D = {sigma = 0}. Flows are never
assumed complete: a rectification whose flow stops early raises DomainFailure,
which reports count against coverage instead of against an identity.

phi1 rectifies (C, xi) with sigma = H and lands on S = {H = 0}; phi2 rectifies
(S, X_H|S / xi(H)) with the measure exponent sigma and lands on B = {sigma = 0}.
"""
import logging
from dataclasses import dataclass, field
from math import exp
from typing import Optional

import numpy as np
from scipy.optimize import newton

from contact_measures.contact import ContactError, contact_frame, reeb_field, symplectic_cone_form
from contact_measures.dynamics import FlowError, FlowOptions, flow_map, flow_with_jacobian, pushforward_invariance_check
from contact_measures.exterior import (
    DEFAULT_STEP,
    ChartBoundaryError,
    FormField,
    KForm,
    ScalarField,
    exterior_derivative,
    pullback,
    top_coefficient,
    wedge,
    wedge_power,
)
from contact_measures.zeroset import (
    LevelSetChart,
    ZeroSetError,
    find_equilibria,
    reeb_rate,
    rescaled_field,
    restricted_field,
    restricted_vector_field,
    surface_measure_density,
    surface_sigma_residual,
)

logger = logging.getLogger(__name__)

RATE_TOL = 1e-6
REEB_RATE_TOL = 1e-8
SLICE_TOL = 1e-12
SLICE_MAX_ITER = 50
ON_SLICE_TOL = 1e-9


class SandwichError(Exception):
    """Custom exception for sandwich construction errors."""
    pass


class PreconditionError(SandwichError):
    """Raised when Z(sigma) = r or a constant xi(H) cannot be verified."""
    pass


class DomainFailure(SandwichError):
    """Raised when a rectifying flow stops before the time it needs."""
    pass


class SliceChartError(SandwichError):
    """Raised when the slice {sigma = 0} has no graph chart at a point."""
    pass


@dataclass(frozen=True, eq=False)
class RectifiedPoint:
    t: float
    point: np.ndarray


@dataclass(frozen=True, eq=False)
class Rectification:
    field: object
    sigma: ScalarField
    rate: float
    options: FlowOptions
    step: float = DEFAULT_STEP

    def __post_init__(self):
        if self.rate == 0:
            raise PreconditionError("rectification needs a nonzero rate r")

    def rate_defect(self, y):
        return float(self.field(y) @ self.sigma.grad(y, self.step) - self.rate)

    def _check_rate(self, y):
        defect = self.rate_defect(y)
        if abs(defect) > RATE_TOL:
            logger.error(f"Z(sigma) - r = {defect:.3e} at {y}")
            raise PreconditionError(f"Z(sigma) = r fails at {y} (defect {defect:.3e})")

    def _flow(self, y, tau, with_jacobian=False):
        try:
            if with_jacobian:
                return flow_with_jacobian(self.field, y, tau, self.options)
            return flow_map(self.field, y, tau, self.options)
        except FlowError as e:
            logger.warning(f"Rectifying flow from {y} failed: {e}")
            raise DomainFailure(str(e)) from e

    def _land(self, x):
        """Slide along Z onto the slice to remove integrator drift."""
        for _ in range(3):
            value = self.sigma(x)
            if abs(value) <= 1e-15:
                break
            x = x - (value / self.rate) * self.field(x)
        return x

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        self._check_rate(y)
        t = self.sigma(y) / self.rate
        if t == 0:
            return RectifiedPoint(0.0, y.copy())
        return RectifiedPoint(t, self._land(self._flow(y, -t)))

    def jacobian(self, y):
        """D phi at y, rows (t, slice point in ambient coordinates)."""
        y = np.asarray(y, dtype=float)
        grad = self.sigma.grad(y, self.step) / self.rate
        tau = -self.sigma(y) / self.rate
        if tau == 0:
            x, flow_jac = y, np.eye(y.size)
        else:
            x, flow_jac = self._flow(y, tau, with_jacobian=True)
        return np.vstack([grad, flow_jac - np.outer(self.field(x), grad)])

    def inverse(self, t, x):
        return self._flow(np.asarray(x, dtype=float), t)

    def field_defect(self, y):
        """|D phi Z - e_0|."""
        J = self.jacobian(y)
        target = np.zeros(J.shape[0])
        target[0] = 1.0
        return float(np.max(np.abs(J @ self.field(y) - target)))

    def transport_defect(self, y, times):
        """max |sigma(Phi_t y) - r t - sigma(y)|."""
        y = np.asarray(y, dtype=float)
        s0 = self.sigma(y)
        worst = 0.0
        for t in times:
            worst = max(worst, abs(self.sigma(self._flow(y, t)) - self.rate * t - s0))
        return worst

    def round_trip_defect(self, y):
        y = np.asarray(y, dtype=float)
        image = self(y)
        return float(np.max(np.abs(self.inverse(image.t, image.point) - y)))


def rectify(field, sigma, rate, y, opts=None):
    return Rectification(field, sigma, rate, opts or FlowOptions())(y)


def reeb_rate_constant(sys, points, tol=REEB_RATE_TOL):
    """The common value gamma of xi(H) over `points`."""
    values = np.array([contact_frame(sys, x).reeb @ sys.hamiltonian.grad(x, sys.step) for x in points])
    gamma = float(np.mean(values))
    spread = float(np.max(np.abs(values - gamma)))
    if spread > tol:
        logger.error(f"xi(H) varies by {spread:.3e} over the sample grid")
        raise PreconditionError(f"xi(H) is not constant (spread {spread:.3e})")
    if abs(gamma) < REEB_RATE_TOL:
        raise PreconditionError("xi(H) vanishes; the sandwich needs a nonzero constant rate")
    return gamma


def _grid_points(chart, rng_seed=0, count=20):
    return chart.sample(np.random.default_rng(rng_seed), count)


@dataclass(frozen=True, eq=False)
class Phi1Result:
    z: float
    point: np.ndarray
    pullback_defect: Optional[float] = None
    reeb_defect: Optional[float] = None
    jacobian: Optional[np.ndarray] = None

    @property
    def surface(self):
        return self.point[1:]


def contactification_rectification(sys, gamma, opts):
    return Rectification(reeb_field(sys), sys.hamiltonian, gamma, opts.within(sys.chart), sys.step)


def phi1(sys, y, opts=None, gamma=None, lsc=None, verify=True):
    """(H/gamma, point of S) for a system with constant xi(H) = gamma."""
    opts = opts or FlowOptions()
    if gamma is None:
        gamma = reeb_rate_constant(sys, _grid_points(sys.chart))
    y = np.asarray(y, dtype=float)
    rect = contactification_rectification(sys, gamma, opts)
    image = rect(y)
    if not verify:
        return Phi1Result(image.t, image.point)
    lsc = lsc or LevelSetChart(sys)
    J = np.delete(rect.jacobian(y), 1, axis=0)
    u = image.point[1:]
    target = KForm.elementary(sys.dim, (0,)) + lsc.theta(u).embed(sys.dim, 1)
    pulled = pullback(None, target, y, jacobian=J)
    pullback_defect = (pulled - sys.eta(y)).norm()
    xi = rect.field(y)
    speed = J @ xi
    speed[0] -= 1.0
    return Phi1Result(image.t, image.point, pullback_defect, float(np.max(np.abs(speed))), J)


class SliceChart:
    """Graph chart of B = {sigma = 0} inside S, eliminating one surface coordinate."""

    def __init__(self, lsc, sigma, seed, eliminate=None, tol=SLICE_TOL, max_iter=SLICE_MAX_ITER):
        seed = np.asarray(seed, dtype=float)
        grad = sigma.grad(seed, lsc.parent.step)
        k = int(np.argmax(np.abs(grad))) if eliminate is None else int(eliminate)
        if abs(grad[k]) < 1e-8:
            logger.error(f"sigma has no usable gradient along u{k} at {seed}")
            raise SliceChartError(f"slice chart not constructible at {seed}: d sigma/du{k} = {grad[k]:.3e}")
        self.lsc = lsc
        self.sigma = sigma
        self.seed = seed
        self.eliminated = k
        self.tol = tol
        self.max_iter = max_iter
        self.chart = lsc.surface.without_axis(k, name="B")
        self.eta = FormField(self.chart.dim, 1, self._eta_at, chart=self.chart, name="eta_B")

    @property
    def dim(self):
        return self.chart.dim

    def coordinates(self, u):
        return np.delete(np.asarray(u, dtype=float), self.eliminated)

    def embed(self, b):
        """The point u of B with coordinates b (Newton on the eliminated axis)."""
        b = np.asarray(b, dtype=float)
        k = self.eliminated

        def point(w):
            return np.insert(b, k, w)

        def slope(w):
            derivative = self.sigma.grad(point(w), self.lsc.parent.step)[k]
            if abs(derivative) < 1e-8:
                raise SliceChartError(f"no point of B over {b}: d sigma/du{k} = {derivative:.3e}")
            return derivative

        w, result = newton(lambda w: self.sigma(point(w)), self.seed[k], fprime=slope, tol=self.tol,
                           maxiter=self.max_iter, full_output=True, disp=False)
        u = point(float(w))
        if abs(self.sigma(u)) > self.tol:
            logger.error(f"Slice solve over {b} stopped with sigma = {self.sigma(u):.3e} ({result.flag})")
            raise SliceChartError(f"no point of B over {b}")
        return u

    def embed_jacobian(self, b, u=None):
        u = self.embed(b) if u is None else u
        grad = self.sigma.grad(u, self.lsc.parent.step)
        k = self.eliminated
        others = np.delete(grad, k)
        return np.insert(np.eye(self.dim), k, -others / grad[k], axis=0)

    def _eta_at(self, b):
        u = self.embed(b)
        return pullback(None, self.lsc.theta(u), b, jacobian=self.embed_jacobian(b, u))

    def deta_at(self, b):
        return exterior_derivative(self.eta, b, self.lsc.parent.step)

    def contact_coefficient(self, b):
        """Top coefficient of eta_B ^ (d eta_B)^(n-1)."""
        return top_coefficient(wedge(self.eta(b), wedge_power(self.deta_at(b), self.lsc.n - 1)))


@dataclass(frozen=True, eq=False)
class Phi2Result:
    s: float
    coordinates: np.ndarray
    point: np.ndarray
    pullback_defect: Optional[float] = None
    speed_defect: Optional[float] = None
    jacobian: Optional[np.ndarray] = None


def symplectification_rectification(lsc, sigma, opts):
    return Rectification(rescaled_field(lsc), sigma, float(lsc.n), opts.within(lsc.surface), lsc.parent.step)


def check_sigma_precondition(lsc, sigma, points, tol=RATE_TOL):
    worst = 0.0
    for u in points:
        worst = max(worst, abs(surface_sigma_residual(lsc, sigma, u)))
    if worst > tol:
        logger.error(f"Measure condition residual reaches {worst:.3e}")
        raise PreconditionError(f"X_H|S(sigma) = n xi(H) fails (residual {worst:.3e})")
    return worst


def _rectified_field_defect(second, rect, u):
    speed = second.jacobian @ rect.field(u)
    speed[0] -= 1.0
    return float(np.max(np.abs(speed)))


def symplectization_target(slice_chart, s, b):
    return symplectic_cone_form(slice_chart.eta(b), slice_chart.deta_at(b), s, -1.0)


def phi2(lsc, sigma, u, opts=None, slice_chart=None, samples=None, verify=True):
    """(sigma/n, point of B) for the rescaled restricted field."""
    opts = opts or FlowOptions()
    u = np.asarray(u, dtype=float)
    if samples is not None:
        check_sigma_precondition(lsc, sigma, samples)
    rect = symplectification_rectification(lsc, sigma, opts)
    image = rect(u)
    chart = slice_chart or SliceChart(lsc, sigma, image.point)
    b = chart.coordinates(image.point)
    if not verify:
        return Phi2Result(image.t, b, image.point)
    J = np.delete(rect.jacobian(u), 1 + chart.eliminated, axis=0)
    pulled = pullback(None, symplectization_target(chart, image.t, b), u, jacobian=J)
    pullback_defect = (pulled - lsc.symplectic.omega_at(u)).norm()
    speed = J @ restricted_field(lsc, u)
    speed[0] -= reeb_rate(lsc, u)
    return Phi2Result(image.t, b, image.point, pullback_defect, float(np.max(np.abs(speed))), J)


def eta_B_check(lsc, sigma, u, slice_chart=None):
    """Contact coefficient of eta_B at the point u of B."""
    u = np.asarray(u, dtype=float)
    value = sigma(u)
    if abs(value) > ON_SLICE_TOL:
        raise PreconditionError(f"point {u} is not on B (sigma = {value:.3e})")
    check_sigma_precondition(lsc, sigma, [u])
    chart = slice_chart or SliceChart(lsc, sigma, u)
    return chart.contact_coefficient(chart.coordinates(u))


def composite_defect(sys, y, first, second, slice_chart):
    """Pullback defect of dz + exp(-s) eta_B under (Id x phi2) o phi1 at y."""
    y = np.asarray(y, dtype=float)
    J = np.vstack([first.jacobian[:1], second.jacobian @ first.jacobian[1:]])
    b = second.coordinates
    dim = sys.dim
    target = KForm.elementary(dim, (0,)) + slice_chart.eta(b).embed(dim, 2) * exp(-second.s)
    return (pullback(None, target, y, jacobian=J) - sys.eta(y)).norm()


SANDWICH_CHECKS = (
    "phi1_pullback",
    "phi1_reeb",
    "phi2_pullback",
    "phi2_speed",
    "eta_B_contact",
    "composite_pullback",
    "rectified_field",
    "round_trip",
    "measure_pushforward",
)


@dataclass
class SandwichReport:
    gamma: Optional[float] = None
    obstruction: Optional[str] = None
    preconditions: list = field(default_factory=list)
    residuals: dict = field(default_factory=lambda: {name: [] for name in SANDWICH_CHECKS})
    eta_B_values: list = field(default_factory=list)
    samples_total: int = 0
    samples_rectified: int = 0
    domain_failures: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def coverage(self):
        return self.samples_rectified / self.samples_total if self.samples_total else 0.0

    @property
    def testable(self):
        return self.obstruction is None and not self.preconditions

    def maxima(self):
        return {name: (max(values) if values else None) for name, values in self.residuals.items()}

    def passed(self, threshold=1e-5, min_coverage=0.5):
        if not self.testable:
            return False
        if self.samples_total and self.coverage < min_coverage:
            return False
        return all(value is None or value <= threshold for value in self.maxima().values())

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "obstruction": self.obstruction,
            "preconditions": list(self.preconditions),
            "max_residuals": self.maxima(),
            "eta_B_min_abs": min((abs(v) for v in self.eta_B_values), default=None),
            "samples": self.samples_total,
            "rectified": self.samples_rectified,
            "coverage": self.coverage,
            "domain_failures": list(self.domain_failures),
            "notes": list(self.notes),
        }


def sandwich_report(sys, sigma, samples, opts=None, lsc=None, search=True, grid=3, t_check=1.0, eta_floor=1e-6,
                    eliminate=None):
    """Sampled verification of the sandwich maps, the composite and the measure equivalence."""
    opts = opts or FlowOptions()
    lsc = lsc or LevelSetChart(sys)
    samples = [np.asarray(y, dtype=float) for y in samples]
    report = SandwichReport(samples_total=len(samples))

    if search:
        equilibria = find_equilibria(lsc, grid=grid)
        if equilibria.obstruction:
            report.obstruction = equilibria.summary()
            report.notes.append("sandwich construction skipped: the restricted field has equilibria")
            return report
    if sigma is None:
        report.preconditions.append("no measure exponent sigma supplied")
        return report
    try:
        report.gamma = reeb_rate_constant(sys, samples)
    except (PreconditionError, ContactError) as e:
        report.preconditions.append(str(e))
    for i, y in enumerate(samples):
        try:
            check_sigma_precondition(lsc, sigma, [y[1:]])
        except (PreconditionError, ZeroSetError) as e:
            report.preconditions.append(f"sample {i}: {e}")
    if report.preconditions:
        report.notes.append("equivalence untestable: preconditions fail")
        logger.warning(f"Sandwich preconditions fail: {report.preconditions}")
        return report

    gamma = report.gamma
    rect1 = contactification_rectification(sys, gamma, opts)
    rect2 = symplectification_rectification(lsc, sigma, opts)
    surface_opts = opts.within(lsc.surface)
    density = lambda u: surface_measure_density(lsc, sigma, u)
    slice_chart = None
    for i, y in enumerate(samples):
        try:
            first = phi1(sys, y, opts, gamma, lsc)
            u = first.surface
            if slice_chart is None:
                slice_chart = SliceChart(lsc, sigma, rect2(u).point, eliminate)
            second = phi2(lsc, sigma, u, opts, slice_chart)
            values = {
                "phi1_pullback": first.pullback_defect,
                "phi1_reeb": first.reeb_defect,
                "phi2_pullback": second.pullback_defect,
                "phi2_speed": second.speed_defect,
                "composite_pullback": composite_defect(sys, y, first, second, slice_chart),
                "rectified_field": _rectified_field_defect(second, rect2, u),
                "round_trip": max(rect1.round_trip_defect(y), rect2.round_trip_defect(u)),
                "measure_pushforward": abs(pushforward_invariance_check(
                    density, restricted_vector_field(lsc), u, t_check, surface_opts)),
            }
            eta_value = slice_chart.contact_coefficient(second.coordinates)
        except (SandwichError, ZeroSetError, ContactError, ChartBoundaryError, FlowError) as e:
            logger.warning(f"Sample {i} not rectified ({type(e).__name__}): {e}")
            report.domain_failures.append({"sample": i, "reason": str(e), "kind": type(e).__name__})
            continue
        for name, value in values.items():
            report.residuals[name].append(float(value))
        report.eta_B_values.append(eta_value)
        report.residuals["eta_B_contact"].append(max(0.0, eta_floor - abs(eta_value)))
        report.samples_rectified += 1

    if report.domain_failures:
        logger.warning(f"{len(report.domain_failures)} of {len(samples)} samples left the chart during rectification")
    report.notes.append("both directions of the measure/sandwich equivalence are verified at sample resolution only")
    logger.info(f"Sandwich report: coverage {report.coverage:.3f} over {len(samples)} samples")
    return report
