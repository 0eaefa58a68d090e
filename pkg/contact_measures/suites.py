"""Verification suites: each runs a fixed checklist of identities over sampled
points and records residual statistics, coverage and findings."""
import logging
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from contact_measures.contact import (
    check_contact,
    conformal_sigma,
    conformal_system,
    contact_frame,
    darboux_hamiltonian_field,
    hamiltonian_field,
    hamiltonian_residuals,
    hamiltonian_vector_field,
    jacobi_bracket,
    lie_residual_eta,
    lie_residual_volume,
    measure_residual,
    reeb,
    reeb_derivative,
)
from contact_measures.dynamics import FlowError, FlowOptions, pushforward_invariance_check
from contact_measures.exterior import ScalarField, central_gradient, lie_derivative
from contact_measures.sandwich import (
    SANDWICH_CHECKS,
    DomainFailure,
    SliceChart,
    phi1,
    phi2,
    sandwich_report,
    symplectification_rectification,
)
from contact_measures.scenarios import ScenarioError, cotangent_sampler, dissipative, kinetic_energy_level
from contact_measures.zeroset import (
    find_equilibria,
    find_zeros,
    liouville_defect,
    restricted_vector_field,
    surface_liouville_density,
    surface_measure_density,
    surface_sigma_residual,
)

logger = logging.getLogger(__name__)

CHECKLISTS = {
    "contact-identities": [
        ("contact-volume", "eta ^ (d eta)^n equals the Darboux coefficient (-1)^(n(n-1)/2) n!"),
        ("reeb", "eta(xi) = 1 and i_xi d eta = 0"),
        ("hamiltonian-dual-route", "-i_dH Lambda - H xi equals the Darboux component formula"),
        ("hamiltonian-conditions", "i_X d eta = dH - xi(H) eta and eta(X) = -H"),
        ("energy-rate", "X_H(H) = -H xi(H)"),
        ("lie-eta", "L_X eta = -xi(H) eta"),
        ("lie-volume", "L_X nu = -(n+1) xi(H) nu"),
        ("conformal-reeb", "the Reeb field of -eta/H is X_H where H != 0"),
        ("conformal-volume", "vol(-eta/H) = (-1)^(n+1) H^-(n+1) vol(eta)"),
        ("jacobi-reeb", "{f, -1} = xi(f)"),
        ("jacobi-first-order", "{f g, H} = f {g, H} + g {f, H} - f g {1, H}"),
        ("energy-level-reeb", "on |p|^2/2 = c the Reeb field is the symplectic field over Delta(H)"),
    ],
    "zeroset": [
        ("surface-solve", "|H(psi(u))| <= 1e-12"),
        ("omega-nondegenerate", "|det d theta| >= 0.1 in chart units"),
        ("liouville-definition", "i_Delta d theta = theta"),
        ("restricted-liouville", "X_H|S = -xi(H) Delta"),
        ("liouville-expansion", "L_Delta d theta = d theta"),
    ],
    "measure": [
        ("conformal-measure", "X_H(sigma) = (n+1) xi(H) for sigma = -(n+1) ln|H|"),
        ("conformal-pushforward", "|H|^-(n+1) nu is carried to itself by the flow of X_H"),
        ("measure-condition", "X_H|S(sigma) = n xi(H)"),
        ("liouville-condition", "Delta(sigma) = -n"),
        ("measure-pushforward", "exp(sigma)/xi(H) (d theta)^n is carried to itself by the flow of X_H|S"),
        ("liouville-pushforward", "exp(sigma) (d theta)^n is carried to itself by the flow of Delta"),
        ("sigma-transport", "sigma(Phi^Z_t u) = n t + sigma(u) for Z = X_H|S / xi(H)"),
    ],
    "sandwich": [
        ("preconditions", "xi(H) is a nonzero constant and X_H|S(sigma) = n xi(H) on the samples"),
        ("phi1_pullback", "phi1*(dz + theta) = eta"),
        ("phi1_reeb", "T phi1(xi) = d/dz"),
        ("phi2_pullback", "phi2*(exp(-s)(d eta_B - ds ^ eta_B)) = d theta"),
        ("phi2_speed", "T phi2(X_H|S) = xi(H) d/ds"),
        ("eta_B_contact", "eta_B ^ (d eta_B)^(n-1) != 0 on B"),
        ("composite_pullback", "((Id x phi2) o phi1)*(dz + exp(-s) eta_B) = eta"),
        ("rectified_field", "T phi2(Z) = d/ds"),
        ("round_trip", "Phi^Z(phi(y)) = y"),
        ("measure_pushforward", "exp(sigma)/xi(H) (d theta)^n is invariant along the rectified samples"),
        ("phi1-closed-form", "phi1 equals (H/gamma, q, p)"),
        ("phi2-closed-form", "phi2 equals its closed form on the linear potential"),
        ("eta-B-closed-form", "eta_B equals its closed form on the linear potential"),
    ],
    "sampler": [
        ("liouville-field", "the Liouville field of theta = -p dq is p d/dp"),
        ("kinetic-homogeneity", "Delta(K) = 2 K"),
        ("sigma-expansion", "Delta(sigma) = 1 for sigma = ln(K)/2 + F(q)"),
        ("dilation-pushforward", "K^(-n/2) rho(q) is invariant under p -> exp(t) p"),
    ],
}

DEFAULT_THRESHOLDS = {
    "contact-identities": {
        "contact-volume": 1e-10, "reeb": 1e-10, "hamiltonian-dual-route": 1e-8, "hamiltonian-conditions": 1e-7,
        "energy-rate": 1e-6, "lie-eta": 1e-6, "lie-volume": 1e-6, "conformal-reeb": 1e-7,
        "conformal-volume": 1e-8, "jacobi-reeb": 1e-8, "jacobi-first-order": 1e-8, "energy-level-reeb": 1e-6,
    },
    "zeroset": {
        "surface-solve": 1e-12, "omega-nondegenerate": 0.0, "liouville-definition": 1e-8,
        "restricted-liouville": 1e-7, "liouville-expansion": 1e-5,
    },
    "measure": {
        "conformal-measure": 1e-8, "conformal-pushforward": 1e-6, "measure-condition": 1e-10,
        "liouville-condition": 1e-8, "measure-pushforward": 1e-5, "liouville-pushforward": 1e-5,
        "sigma-transport": 1e-6,
    },
    "sandwich": {
        "preconditions": 0.0, "phi1_pullback": 1e-5, "phi1_reeb": 1e-5, "phi2_pullback": 1e-5, "phi2_speed": 1e-5,
        "eta_B_contact": 0.0, "composite_pullback": 1e-5, "rectified_field": 1e-5, "round_trip": 1e-7,
        "measure_pushforward": 1e-5, "phi1-closed-form": 1e-6, "phi2-closed-form": 1e-6, "eta-B-closed-form": 1e-8,
    },
    "sampler": {
        "liouville-field": 1e-8, "kinetic-homogeneity": 1e-8, "sigma-expansion": 1e-10,
        "dilation-pushforward": 1e-8,
    },
}

OMEGA_FLOOR = 0.1
CONFORMAL_FLOOR = 0.1
SAMPLER_P_FLOOR = 0.1
SAMPLER_MAX_DRAWS = 1000
MIN_COVERAGE = 0.5


@dataclass
class IdentityResult:
    key: str
    statement: str
    threshold: float
    residuals: list = field(default_factory=list)
    requested: int = 0
    domain_failures: int = 0
    skipped: bool = False
    min_coverage: float = 0.0

    def add(self, value):
        self.requested += 1
        self.residuals.append(float(value))

    def fail_domain(self):
        self.requested += 1
        self.domain_failures += 1

    @property
    def max_residual(self):
        return max(self.residuals) if self.residuals else None

    @property
    def mean_residual(self):
        return float(np.mean(self.residuals)) if self.residuals else None

    @property
    def coverage(self):
        if not self.requested:
            return 0.0
        return (self.requested - self.domain_failures) / self.requested

    @property
    def passed(self):
        if self.skipped:
            return True
        if self.requested and self.coverage < self.min_coverage:
            return False
        return all(np.isfinite(r) and r <= self.threshold for r in self.residuals)

    def to_dict(self):
        return {
            "ref": self.key,
            "quote": self.statement,
            "max_residual": self.max_residual,
            "mean_residual": self.mean_residual,
            "threshold": self.threshold,
            "pass": self.passed,
            "coverage": self.coverage,
            "samples": self.requested,
            "domain_failures": self.domain_failures,
            "skipped": self.skipped,
        }


@dataclass
class SuiteResult:
    name: str
    identities: dict
    findings: list = field(default_factory=list)

    @property
    def passed(self):
        return all(identity.passed for identity in self.identities.values())

    def finding(self, kind, message):
        logger.info(f"[{self.name}] {kind}: {message}")
        self.findings.append({"kind": kind, "message": message})

    def to_dict(self):
        return {
            "name": self.name,
            "pass": self.passed,
            "identities": [identity.to_dict() for identity in self.identities.values()],
            "findings": list(self.findings),
        }


def new_suite(name, thresholds=None, min_coverage=0.0):
    """Identities of one suite; an identity below min_coverage fails even with small residuals."""
    if name not in CHECKLISTS:
        raise KeyError(name)
    limits = dict(DEFAULT_THRESHOLDS[name])
    limits.update((thresholds or {}).get(name, {}))
    identities = {key: IdentityResult(key, statement, float(limits[key]), min_coverage=float(min_coverage))
                  for key, statement in CHECKLISTS[name]}
    return SuiteResult(name, identities)


def flow_options(config):
    settings = config.get("integrator", {})
    return FlowOptions(
        method=settings.get("method", "rk45"),
        step=settings.get("step", 1e-2),
        rtol=settings.get("rtol", 1e-10),
        atol=settings.get("atol", 1e-10),
        fd_step=settings.get("fd_step", 1e-5),
    )


def build_scenario(config):
    settings = config.get("scenario", {})
    name = settings.get("name", "dissipative")
    if name != "dissipative":
        raise ScenarioError(f"Unknown scenario '{name}'")
    return dissipative(settings.get("gamma", 1.0), settings.get("potential", "linear"),
                       settings.get("half_width", 20.0), settings.get("dof", 2))


def _sample_points(rng, dim, count, width):
    return rng.uniform(-width, width, size=(count, dim))


def _test_functions(dim):
    """Two smooth functions with analytic gradients for the bracket checks."""
    a = np.linspace(0.3, 0.9, dim)
    b = np.linspace(-0.5, 0.7, dim)
    f = ScalarField(lambda x: float(np.sin(a @ x)), lambda x: np.cos(a @ x) * a, "f")
    g = ScalarField(lambda x: float(np.exp(0.2 * (b @ x))), lambda x: 0.2 * np.exp(0.2 * (b @ x)) * b, "g")
    return f, g


def contact_identities_suite(scenario, config, rng):
    suite = new_suite("contact-identities", config.get("thresholds"), config.get("min_coverage", MIN_COVERAGE))
    ids = suite.identities
    sys = scenario.system
    n = sys.n
    count = config.get("samples", 20)
    width = config.get("scenario", {}).get("sample_width", 1.0)
    expected_volume = (-1) ** (n * (n - 1) // 2) * factorial(n)
    conformal = conformal_system(sys)
    minus_one = ScalarField.constant(-1.0, sys.dim)
    one = ScalarField.constant(1.0, sys.dim)
    f, g = _test_functions(sys.dim)
    H = sys.hamiltonian

    for x in _sample_points(rng, sys.dim, count, width):
        frame = contact_frame(sys, x)
        ids["contact-volume"].add(abs(check_contact(sys, x) - expected_volume))
        ids["reeb"].add(max(abs(frame.eta @ frame.reeb - 1.0), float(np.max(np.abs(frame.deta.T @ frame.reeb)))))
        X = hamiltonian_field(sys, x)
        ids["hamiltonian-dual-route"].add(float(np.max(np.abs(X - darboux_hamiltonian_field(sys, x)))))
        ids["hamiltonian-conditions"].add(max(hamiltonian_residuals(sys, x)))
        xi_H = frame.reeb @ H.grad(x)
        ids["energy-rate"].add(abs(X @ H.grad(x) + H(x) * xi_H))
        ids["lie-eta"].add(lie_residual_eta(sys, x))
        ids["lie-volume"].add(lie_residual_volume(sys, x))
        if abs(H(x)) >= CONFORMAL_FLOOR:
            ids["conformal-reeb"].add(float(np.max(np.abs(reeb(conformal, x) - X))))
            expected = (-1) ** (n + 1) / H(x) ** (n + 1)
            ids["conformal-volume"].add(abs(check_contact(conformal, x) / check_contact(sys, x) / expected - 1.0))
        ids["jacobi-reeb"].add(abs(jacobi_bracket(sys, f, minus_one, x) - reeb_derivative(sys, f, x)))
        fg = f * g
        rule = (f(x) * jacobi_bracket(sys, g, H, x) + g(x) * jacobi_bracket(sys, f, H, x)
                - f(x) * g(x) * jacobi_bracket(sys, one, H, x))
        ids["jacobi-first-order"].add(abs(jacobi_bracket(sys, fg, H, x) - rule))

    level = kinetic_energy_level(1.0)
    for x in level.system.chart.sample(rng, count, width=1.0):
        ids["energy-level-reeb"].add(float(np.max(np.abs(reeb(level.system, x) - level.oracles["reeb"](x)))))
    return suite


def zeroset_suite(scenario, config, rng):
    suite = new_suite("zeroset", config.get("thresholds"), config.get("min_coverage", MIN_COVERAGE))
    ids = suite.identities
    lsc = scenario.level_set
    chart = lsc.symplectic
    H = scenario.system.hamiltonian
    count = config.get("samples", 20)
    width = config.get("scenario", {}).get("sample_width", 1.0)
    delta = chart.liouville_field()
    omega = chart.omega_form()

    for u in _sample_points(rng, lsc.dim, count, width):
        ids["surface-solve"].add(abs(H(lsc.inclusion(u))))
        det = np.linalg.det(chart.omega_at(u).to_matrix())
        ids["omega-nondegenerate"].add(max(0.0, OMEGA_FLOOR - abs(det)))
        ids["liouville-definition"].add(chart.liouville_residual(u))
        ids["restricted-liouville"].add(liouville_defect(lsc, u))
        ids["liouville-expansion"].add((lie_derivative(delta, omega, u, 1e-3) - chart.omega_at(u)).norm())

    _equilibria_finding(suite, lsc, config)
    return suite


def _equilibria_finding(suite, lsc, config):
    search = find_equilibria(lsc, grid=config.get("search_grid", 3))
    if search.obstruction:
        suite.finding("obstruction: equilibrium found", search.summary())
    else:
        suite.finding("no obstruction found", search.summary())
    return search


def measure_suite(scenario, config, rng):
    suite = new_suite("measure", config.get("thresholds"), config.get("min_coverage", MIN_COVERAGE))
    ids = suite.identities
    sys = scenario.system
    lsc = scenario.level_set
    opts = flow_options(config)
    count = config.get("samples", 20)
    width = config.get("scenario", {}).get("sample_width", 1.0)
    n = sys.n
    H = sys.hamiltonian

    log_sigma = conformal_sigma(sys)
    density = lambda x: np.exp(log_sigma(x)) * check_contact(sys, x)
    field = hamiltonian_vector_field(sys)
    full_opts = opts.within(sys.chart)
    for i, x in enumerate(_sample_points(rng, sys.dim, count, width)):
        if abs(H(x)) < CONFORMAL_FLOOR:
            continue
        ids["conformal-measure"].add(abs(measure_residual(sys, log_sigma, x)))
        t = 0.5 if i % 2 == 0 else -0.5
        try:
            ids["conformal-pushforward"].add(abs(pushforward_invariance_check(density, field, x, t, full_opts)))
        except FlowError:
            ids["conformal-pushforward"].fail_domain()

    search = _equilibria_finding(suite, lsc, config)
    sigma = scenario.sigma
    surface_keys = ("measure-condition", "liouville-condition", "measure-pushforward", "liouville-pushforward",
                    "sigma-transport")
    if sigma is None or search.obstruction:
        if sigma is None and not search.obstruction:
            suite.finding("no measure exponent supplied", "the restricted-dynamics identities were not evaluated")
        for key in surface_keys:
            ids[key].skipped = True
        return suite

    surface_opts = opts.within(lsc.surface)
    restricted = restricted_vector_field(lsc)
    liouville = lsc.symplectic.liouville_field()
    rectification = symplectification_rectification(lsc, sigma, opts)
    surface_density = lambda u: surface_measure_density(lsc, sigma, u)
    paired_density = surface_liouville_density(lsc.symplectic, sigma)
    times = (-2.0, -1.0, 1.0, 2.0)
    for i, u in enumerate(_sample_points(rng, lsc.dim, count, width)):
        ids["measure-condition"].add(abs(surface_sigma_residual(lsc, sigma, u)))
        ids["liouville-condition"].add(abs(liouville(u) @ sigma.grad(u) + n))
        t = times[i % len(times)]
        try:
            ids["measure-pushforward"].add(abs(pushforward_invariance_check(surface_density, restricted, u, t,
                                                                          surface_opts)))
        except FlowError:
            ids["measure-pushforward"].fail_domain()
        if i < 3:
            try:
                ids["liouville-pushforward"].add(abs(pushforward_invariance_check(
                    paired_density, liouville, u, t / 2.0, surface_opts)))
            except FlowError:
                ids["liouville-pushforward"].fail_domain()
        try:
            ids["sigma-transport"].add(rectification.transport_defect(u, times))
        except DomainFailure:
            ids["sigma-transport"].fail_domain()
    return suite


def sandwich_samples(config, sys, rng):
    explicit = config.get("sandwich", {}).get("points")
    if explicit:
        return [np.asarray(p, dtype=float) for p in explicit]
    width = config.get("scenario", {}).get("sample_width", 1.0)
    return list(_sample_points(rng, sys.dim, config.get("samples", 20), width))


def sandwich_suite(scenario, config, rng):
    suite = new_suite("sandwich", config.get("thresholds"), config.get("min_coverage", MIN_COVERAGE))
    ids = suite.identities
    sys = scenario.system
    lsc = scenario.level_set
    opts = flow_options(config)
    samples = sandwich_samples(config, sys, rng)
    report = sandwich_report(sys, scenario.sigma, samples, opts, lsc,
                             grid=config.get("search_grid", 3),
                             t_check=config.get("sandwich", {}).get("t_check", 1.0),
                             eliminate=scenario.slice_axis)
    for note in report.notes:
        suite.finding("note", note)
    if report.obstruction:
        suite.finding("obstruction: equilibrium found", report.obstruction)
        for identity in ids.values():
            identity.skipped = True
        return suite
    if report.preconditions:
        ids["preconditions"].add(1.0)
        for message in report.preconditions:
            suite.finding("precondition failed", message)
        for key, identity in ids.items():
            if key != "preconditions":
                identity.skipped = True
        return suite
    ids["preconditions"].add(0.0)

    failed = {entry["sample"] for entry in report.domain_failures}
    for entry in report.domain_failures:
        suite.finding("domain failure", f"sample {entry['sample']} ({entry['kind']}): {entry['reason']}")
    for key in SANDWICH_CHECKS:
        ids[key].residuals = list(report.residuals[key])
        ids[key].requested = report.samples_total
        ids[key].domain_failures = len(failed)

    oracles = scenario.oracles
    closed_forms = ("phi1-closed-form", "phi2-closed-form", "eta-B-closed-form")
    if "phi2" not in oracles:
        for key in closed_forms:
            ids[key].skipped = True
        return suite
    gamma = report.gamma
    rect = symplectification_rectification(lsc, scenario.sigma, opts)
    slice_chart = None
    for i, y in enumerate(samples):
        if i in failed:
            for key in closed_forms:
                ids[key].fail_domain()
            continue
        first = phi1(sys, y, opts, gamma, lsc, verify=False)
        image = np.concatenate([[first.z], first.point[1:]])
        ids["phi1-closed-form"].add(float(np.max(np.abs(image - oracles["phi1"](y)))))
        u = first.surface
        if slice_chart is None:
            slice_chart = SliceChart(lsc, scenario.sigma, rect(u).point, scenario.slice_axis)
        second = phi2(lsc, scenario.sigma, u, opts, slice_chart, verify=False)
        image = np.concatenate([[second.s], second.coordinates])
        ids["phi2-closed-form"].add(float(np.max(np.abs(image - oracles["phi2"](u)))))
        eta_B = slice_chart.eta(second.coordinates).vector()
        ids["eta-B-closed-form"].add(float(np.max(np.abs(eta_B - oracles["eta_B"](second.coordinates)))))
    return suite


def _sampler_points(rng, dof, count, width):
    """Uniform points of [-width, width]^(2 dof) that clear the zero-section tube."""
    if width * np.sqrt(dof) <= SAMPLER_P_FLOOR:
        logger.error(f"Sampler box of width {width} lies inside the zero-section tube")
        raise ScenarioError(f"sample_width {width} cannot reach |p| >= {SAMPLER_P_FLOOR} with {dof} momenta")
    points = []
    for _ in range(SAMPLER_MAX_DRAWS * count):
        x = rng.uniform(-width, width, size=2 * dof)
        if np.linalg.norm(x[dof:]) >= SAMPLER_P_FLOOR:
            points.append(x)
            if len(points) == count:
                return points
    raise ScenarioError(f"only {len(points)} of {count} sampler points clear |p| >= {SAMPLER_P_FLOOR} "
                        f"after {SAMPLER_MAX_DRAWS * count} draws; widen sample_width")


def sampler_suite(scenario, config, rng):
    suite = new_suite("sampler", config.get("thresholds"), config.get("min_coverage", MIN_COVERAGE))
    ids = suite.identities
    settings = config.get("sampler", {})
    dof = settings.get("dof", 2)
    sampler = cotangent_sampler(settings.get("metric_diagonal"), dof=dof, epsilon=settings.get("epsilon", 1e-3))
    opts = flow_options(config)
    kinetic = sampler.oracles["kinetic"]
    width = config.get("scenario", {}).get("sample_width", 1.0)
    points = _sampler_points(rng, dof, config.get("samples", 20), width)
    for i, x in enumerate(points):
        delta = sampler.liouville(x)
        ids["liouville-field"].add(float(np.max(np.abs(sampler.symplectic.liouville(x) - delta))))
        K = kinetic(x)
        ids["kinetic-homogeneity"].add(abs(central_gradient(kinetic, x) @ delta - 2.0 * K) / K)
        ids["sigma-expansion"].add(abs(sampler.sigma.grad(x) @ delta - 1.0))
        t = -1.0 + 2.0 * (i + 0.5) / len(points)
        ids["dilation-pushforward"].add(abs(pushforward_invariance_check(
            sampler.density, sampler.liouville, x, t, opts, exact_flow=sampler.oracles["dilation"])))

    chart = sampler.symplectic.chart
    search = find_zeros(sampler.liouville, -np.full(chart.dim, width), np.full(chart.dim, width),
                        exclude=lambda x: np.linalg.norm(x[dof:]) < sampler.parameters["epsilon"])
    if search.obstruction:
        suite.finding("obstruction: equilibrium found", search.summary())
    else:
        suite.finding("no obstruction found", "the Liouville field has no zeros off the zero section")
    return suite


SUITES = {
    "contact-identities": contact_identities_suite,
    "zeroset": zeroset_suite,
    "measure": measure_suite,
    "sandwich": sandwich_suite,
    "sampler": sampler_suite,
}


def run_suites(config):
    """Run the configured suites in order; each gets its own seeded generator."""
    names = config.get("suites", list(SUITES))
    unknown = [name for name in names if name not in SUITES]
    if unknown:
        raise KeyError(f"Unknown suites: {unknown}")
    scenario = build_scenario(config)
    seed = int(config.get("seed", 0))
    results = []
    for index, name in enumerate(SUITES):
        if name not in names:
            continue
        logger.info(f"Running suite {name} on {scenario.name}")
        rng = np.random.default_rng([seed, index])
        results.append(SUITES[name](scenario, config, rng))
    return scenario, results
