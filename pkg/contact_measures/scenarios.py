"""Ready-made systems: the damped mechanical system, the cotangent-bundle
sampler measure, contactification/symplectification builders and the
kinetic energy level.

Darboux charts use the coordinate order (z, q1..qn, p1..pn) and the form
eta = dz - sum p_i dq^i.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from contact_measures.contact import ContactSystem, hamiltonian_field, symplectic_cone_form
from contact_measures.exterior import (
    DEFAULT_STEP,
    Chart,
    FormField,
    KForm,
    ScalarField,
    VectorField,
    exterior_derivative,
    numeric_jacobian,
    pullback,
)
from contact_measures.zeroset import (
    ExactSymplecticChart,
    LevelSetChart,
    restricted_field,
    surface_sigma_residual,
)

logger = logging.getLogger(__name__)

ORACLE_TOL = 1e-7
ZERO_SECTION_RADIUS = 1e-3


class ScenarioError(Exception):
    """Custom exception for scenario construction errors."""
    pass


class ZeroSectionError(ScenarioError):
    """Raised when the sampler measure is evaluated too close to p = 0."""
    pass


@dataclass(frozen=True)
class Potential:
    name: str
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]


POTENTIALS = {
    "linear": Potential("linear", lambda q: float(np.sum(q)), lambda q: np.ones_like(q)),
    "harmonic": Potential("harmonic", lambda q: 0.5 * float(q @ q), lambda q: np.array(q, dtype=float)),
    "cubic": Potential("cubic", lambda q: float(np.sum(q + q ** 3 / 3.0)), lambda q: 1.0 + q ** 2),
}


def potential(name):
    if isinstance(name, Potential):
        return name
    try:
        return POTENTIALS[name]
    except KeyError:
        raise ScenarioError(f"Unknown potential '{name}'; choose from {sorted(POTENTIALS)}")


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    system: Optional[ContactSystem] = None
    level_set: Optional[LevelSetChart] = None
    symplectic: Optional[ExactSymplecticChart] = None
    sigma: Optional[ScalarField] = None
    density: Optional[Callable] = None
    liouville: Optional[VectorField] = None
    oracles: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    slice_axis: Optional[int] = None

    @property
    def chart(self):
        if self.system is not None:
            return self.system.chart
        return self.symplectic.chart


def darboux_chart(dof, half_width, name="darboux"):
    axes = ("z",) + tuple(f"q{i + 1}" for i in range(dof)) + tuple(f"p{i + 1}" for i in range(dof))
    return Chart.box(name, axes, half_width)


def darboux_form(chart):
    dof = (chart.dim - 1) // 2
    derivative = np.zeros((chart.dim, chart.dim))
    for i in range(dof):
        derivative[1 + dof + i, 1 + i] = -1.0

    def value(x):
        coeffs = np.zeros(chart.dim)
        coeffs[0] = 1.0
        coeffs[1:dof + 1] = -x[dof + 1:]
        return KForm(chart.dim, 1, coeffs)

    return FormField(chart.dim, 1, value, lambda x: derivative, chart, "eta")


def dissipative(gamma, potential_name="linear", half_width=10.0, dof=2, check=True):
    """H = |p|^2/2 + V(q) + gamma z on a Darboux chart."""
    if gamma == 0:
        logger.error("Damped system requested with gamma = 0")
        raise ScenarioError("gamma must be nonzero: xi(H) = gamma is the transversality hypothesis")
    V = potential(potential_name)
    gamma = float(gamma)
    chart = darboux_chart(dof, half_width, name=f"damped-{V.name}")

    def H(x):
        p = x[dof + 1:]
        return 0.5 * float(p @ p) + V.value(x[1:dof + 1]) + gamma * x[0]

    def dH(x):
        return np.concatenate([[gamma], V.gradient(x[1:dof + 1]), x[dof + 1:]])

    system = ContactSystem(chart, darboux_form(chart), ScalarField(H, dH, "H"), name=chart.name)
    lsc = LevelSetChart(system)
    parameters = {"gamma": gamma, "potential": V.name, "dof": dof, "half_width": half_width}
    sigma = None
    oracles = {}
    slice_axis = None
    if V.name == "linear":
        sigma = linear_sigma(gamma, dof)
        oracles = linear_oracles(gamma, dof)
        slice_axis = 0
    scenario = Scenario(chart.name, system, lsc, lsc.symplectic, sigma, oracles=oracles,
                        parameters=parameters, slice_axis=slice_axis)
    if check and oracles:
        check_oracles(scenario)
    return scenario


def linear_sigma(gamma, dof):
    """The invariant-measure exponent -gamma sum p - gamma^2 sum q on S."""
    gradient = np.concatenate([np.full(dof, -gamma ** 2), np.full(dof, -gamma)])
    return ScalarField(lambda u: float(gradient @ u), lambda u: gradient.copy(), "sigma")


def linear_oracles(gamma, dof):
    c = 1.0 / gamma

    def surface_flow(t, u):
        q, p = u[:dof], u[dof:]
        decay = np.exp(-gamma * t)
        return np.concatenate([c * (p + c) * (1.0 - decay) - c * t + q, (p + c) * decay - c])

    def full_flow(t, x):
        qp = surface_flow(t, x[1:])
        q, p = x[1:dof + 1], x[dof + 1:]
        energy = (0.5 * p @ p + np.sum(q) + gamma * x[0]) * np.exp(-gamma * t)
        q_t, p_t = qp[:dof], qp[dof:]
        return np.concatenate([[(energy - 0.5 * p_t @ p_t - np.sum(q_t)) / gamma], qp])

    def phi1(x):
        q, p = x[1:dof + 1], x[dof + 1:]
        return np.concatenate([[(0.5 * p @ p + np.sum(q)) / gamma + x[0]], x[1:]])

    oracles = {"surface_flow": surface_flow, "full_flow": full_flow, "phi1": phi1}
    if dof == 2:
        def phi2(u):
            q1, q2, p1, p2 = u
            F = -0.5 * (p1 + p2 + gamma * (q1 + q2))
            E = np.exp(gamma * F)
            return np.array([
                gamma * F,
                ((-2.0 * gamma * p2 - 2.0) * E + 2.0 + gamma ** 2 * (q2 - q1) + gamma * (p2 - p1)) / (2.0 * gamma ** 2),
                (E * (gamma * p1 + 1.0) - 1.0) / gamma,
                (E * (gamma * p2 + 1.0) - 1.0) / gamma,
            ])

        def eta_B(b):
            _, p1, p2 = b
            return np.array([p1 - p2, gamma ** -2, (p1 - p2) / gamma + gamma ** -2])

        oracles.update({"phi2": phi2, "eta_B": eta_B})
    return oracles


def check_oracles(scenario, points=10, seed=0):
    """Probe every closed form against the numerics it stands in for."""
    rng = np.random.default_rng(seed)
    system, lsc = scenario.system, scenario.level_set
    dof = system.n
    h = 1e-5
    worst = {}
    for x in rng.uniform(-1.0, 1.0, size=(points, system.dim)):
        u = x[1:]
        flow = scenario.oracles["surface_flow"]
        t = float(rng.uniform(-1.0, 1.0))
        moved = flow(t, u)
        rate = (flow(t + h, u) - flow(t - h, u)) / (2.0 * h)
        worst["surface_flow"] = max(worst.get("surface_flow", 0.0),
                                    float(np.max(np.abs(rate - restricted_field(lsc, moved)))))
        full = scenario.oracles["full_flow"]
        rate = (full(t + h, x) - full(t - h, x)) / (2.0 * h)
        worst["full_flow"] = max(worst.get("full_flow", 0.0),
                                 float(np.max(np.abs(rate - hamiltonian_field(system, full(t, x))))))
        worst["sigma"] = max(worst.get("sigma", 0.0), abs(surface_sigma_residual(lsc, scenario.sigma, u)))
        image = scenario.oracles["phi1"](x)
        target = KForm.elementary(system.dim, (0,)) + lsc.theta(image[1:]).embed(system.dim, 1)
        pulled = pullback(scenario.oracles["phi1"], target, x, h)
        worst["phi1"] = max(worst.get("phi1", 0.0), (pulled - system.eta(x)).norm())
        if "phi2" in scenario.oracles:
            s, *b = scenario.oracles["phi2"](u)
            landed = flow(-s / scenario.parameters["gamma"], u)
            mismatch = max(abs(s - scenario.sigma(u) / dof), float(np.max(np.abs(landed[1:] - b))),
                           abs(scenario.sigma(landed)))
            worst["phi2"] = max(worst.get("phi2", 0.0), mismatch)
            eta = scenario.oracles["eta_B"](np.array(b))
            coefficients = eta_B_pullback(lsc, scenario.sigma, landed)
            worst["eta_B"] = max(worst.get("eta_B", 0.0), float(np.max(np.abs(coefficients - eta))))
    failed = {name: value for name, value in worst.items() if value > ORACLE_TOL}
    if failed:
        logger.error(f"Closed forms of {scenario.name} fail their probes: {failed}")
        raise ScenarioError(f"closed-form oracles of {scenario.name} are inconsistent: {failed}")
    logger.debug(f"Oracle probes for {scenario.name}: {worst}")
    return worst


def eta_B_pullback(lsc, sigma, u, axis=0):
    """theta pulled back to B = {sigma = 0} over the coordinates without `axis`."""
    grad = sigma.grad(u)
    others = np.delete(grad, axis)
    J = np.insert(np.eye(lsc.dim - 1), axis, -others / grad[axis], axis=0)
    return pullback(None, lsc.theta(u), np.delete(u, axis), jacobian=J).vector()


def cotangent_sampler(metric=None, F=None, rho=None, dof=2, epsilon=ZERO_SECTION_RADIUS, half_width=5.0):
    """The sampler measure K^(-n/2) rho(q) on T*Q minus the zero section.

    `metric` is either a list of constant diagonal entries of g or a
    callable q -> g(q); F and rho are alternatives (rho = exp(-n F)).
    """
    if F is not None and rho is not None:
        raise ScenarioError("give either F or rho, not both")
    if F is None and rho is not None:
        F = lambda q: -np.log(rho(q)) / dof
    F = F or (lambda q: 0.0)
    inverse_metric = _inverse_metric(metric, dof)
    chart = Chart.box("cotangent", tuple(f"q{i + 1}" for i in range(dof)) + tuple(f"p{i + 1}" for i in range(dof)),
                      half_width)

    def guard(x):
        if np.linalg.norm(x[dof:]) < epsilon:
            logger.error(f"Sampler measure evaluated at {x}, inside the zero-section tube")
            raise ZeroSectionError(f"|p| < {epsilon} at {x}")

    def kinetic(x):
        p = x[dof:]
        return 0.5 * float(p @ inverse_metric(x[:dof]) @ p)

    def sigma_value(x):
        guard(x)
        return 0.5 * np.log(kinetic(x)) + F(x[:dof])

    def sigma_gradient(x):
        guard(x)
        q, p = x[:dof], x[dof:]
        K = kinetic(x)
        dK_q = numeric_jacobian(lambda y: np.array([kinetic(np.concatenate([y, p]))]), q, DEFAULT_STEP)[0]
        dF = numeric_jacobian(lambda y: np.array([F(y)]), q, DEFAULT_STEP)[0]
        return np.concatenate([0.5 * dK_q / K + dF, (inverse_metric(q) @ p) / (2.0 * K)])

    def density(x):
        guard(x)
        return kinetic(x) ** (-dof / 2.0) * np.exp(-dof * F(x[:dof]))

    theta_derivative = np.zeros((2 * dof, 2 * dof))
    for i in range(dof):
        theta_derivative[dof + i, i] = -1.0

    def theta(x):
        return KForm(2 * dof, 1, np.concatenate([-x[dof:], np.zeros(dof)]))

    symplectic = ExactSymplecticChart(chart, FormField(2 * dof, 1, theta, lambda x: theta_derivative, chart, "theta"))
    liouville = VectorField(2 * dof, lambda x: np.concatenate([np.zeros(dof), x[dof:]]),
                            lambda x: np.block([[np.zeros((dof, dof)), np.zeros((dof, dof))],
                                                [np.zeros((dof, dof)), np.eye(dof)]]),
                            "Delta")
    return Scenario("cotangent-sampler", symplectic=symplectic, sigma=ScalarField(sigma_value, sigma_gradient, "sigma"),
                    density=density, liouville=liouville,
                    oracles={"kinetic": kinetic, "dilation": lambda t, x: np.concatenate([x[:dof], np.exp(t) * x[dof:]])},
                    parameters={"dof": dof, "epsilon": epsilon, "half_width": half_width})


def _inverse_metric(metric, dof):
    if metric is None:
        return lambda q: np.eye(dof)
    if callable(metric):
        def inverse(q):
            g = np.asarray(metric(q), dtype=float)
            if g.shape != (dof, dof) or not np.allclose(g, g.T):
                raise ScenarioError(f"metric at q={q} must be a symmetric {dof}x{dof} matrix")
            try:
                factor = cho_factor(g)
            except np.linalg.LinAlgError as e:
                logger.error(f"Metric is not positive definite at q={q}")
                raise ScenarioError(f"metric is not positive definite at q={q}") from e
            return cho_solve(factor, np.eye(dof))

        inverse(np.zeros(dof))
        return inverse
    diagonal = np.asarray(metric, dtype=float)
    if diagonal.shape != (dof,) or np.any(diagonal <= 0):
        raise ScenarioError(f"metric diagonal must hold {dof} positive entries, got {metric}")
    inverse = np.diag(1.0 / diagonal)
    return lambda q: inverse


def contactify(chart, lam, hamiltonian=None, samples=10, seed=0):
    """R x M with the form dz + lam; the Hamiltonian defaults to -1, whose field is the Reeb field."""
    rng = np.random.default_rng(seed)
    center = 0.5 * (chart.lower + chart.upper)
    for u in chart.sample(rng, samples):
        shrunk = center + 0.9 * (u - center)
        det = np.linalg.det(exterior_derivative(lam, shrunk).to_matrix())
        if abs(det) <= 1e-10:
            logger.error(f"d lambda degenerate at {shrunk}")
            raise ScenarioError(f"d lambda is degenerate at {shrunk} (det = {det:.3e})")
    dim = chart.dim + 1
    extended = Chart(f"R x {chart.name}", ("z",) + chart.axes,
                     np.concatenate([[-chart.scale], chart.lower]), np.concatenate([[chart.scale], chart.upper]))

    def value(x):
        return KForm.elementary(dim, (0,)) + lam(x[1:]).embed(dim, 1)

    derivative = None
    if lam.derivative is not None:
        def derivative(x):
            inner = np.asarray(lam.derivative(x[1:]))
            out = np.zeros((dim, dim))
            out[1:, 1:] = inner
            return out

    H = hamiltonian or ScalarField.constant(-1.0, dim, "-1")
    return ContactSystem(extended, FormField(dim, 1, value, derivative, extended, "dz + lambda"), H,
                         name=f"contactification of {chart.name}")


def symplectify(chart, eta, c=-1.0):
    """exp(c s)(d eta + c ds ^ eta) on R x chart, with s as the first axis."""
    if c == 0:
        raise ScenarioError("symplectification needs c != 0")
    extended = Chart(f"R x {chart.name}", ("s",) + chart.axes,
                     np.concatenate([[-chart.scale], chart.lower]), np.concatenate([[chart.scale], chart.upper]))

    def value(x):
        y = x[1:]
        return symplectic_cone_form(eta(y), exterior_derivative(eta, y), x[0], c)

    return FormField(extended.dim, 2, value, chart=extended, name=f"Omega_{c:g}"), extended


def kinetic_energy_level(level=1.0, half_width=2.0):
    """The level set |p|^2/2 = level of T*R^2 on a (q1, q2, angle) chart.

    The induced form is the pullback of sum p_i dq^i; its Reeb field is the
    symplectic Hamiltonian field of |p|^2/2 divided by p.dH/dp = 2 level.
    """
    if level <= 0:
        raise ScenarioError("energy level must be positive")
    r = np.sqrt(2.0 * level)
    chart = Chart("energy-level", ("q1", "q2", "phi"), [-half_width, -half_width, -np.pi], [half_width, half_width, np.pi])

    def value(x):
        return KForm(3, 1, [r * np.cos(x[2]), r * np.sin(x[2]), 0.0])

    def derivative(x):
        out = np.zeros((3, 3))
        out[2, :2] = [-r * np.sin(x[2]), r * np.cos(x[2])]
        return out

    system = ContactSystem(chart, FormField(3, 1, value, derivative, chart, "eta"),
                           ScalarField.constant(-1.0, 3, "-1"), name="kinetic energy level")

    def embedding_jacobian(x):
        return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                         [0.0, 0.0, -r * np.sin(x[2])], [0.0, 0.0, r * np.cos(x[2])]])

    def symplectic_reeb(x):
        p = r * np.array([np.cos(x[2]), np.sin(x[2])])
        ambient = np.concatenate([p, [0.0, 0.0]])
        return np.linalg.lstsq(embedding_jacobian(x), ambient, rcond=None)[0] / float(p @ p)

    return Scenario("kinetic-energy-level", system, oracles={"reeb": symplectic_reeb},
                    parameters={"level": level, "half_width": half_width})

