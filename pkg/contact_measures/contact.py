"""Contact structures on a single chart: Reeb field, Jacobi bivector,
Hamiltonian fields and the invariant-measure residual.

Chart coordinates are ordered (z, q1..qn, p1..pn) whenever a Darboux
presentation is assumed. b_eta is the matrix B = D^T + eta eta^T with
D[i, j] = d eta(e_i, e_j), so B v is the covector i_v d eta + eta(v) eta.
"""
import logging
import warnings
from dataclasses import dataclass, replace
from math import exp

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.linalg.lapack import dgecon

from contact_measures.exterior import (
    DEFAULT_STEP,
    Chart,
    FormField,
    KForm,
    ScalarField,
    VectorField,
    exterior_derivative,
    lie_derivative,
    top_coefficient,
    wedge,
    wedge_power,
)

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12


class ContactError(Exception):
    """Custom exception for contact structure errors."""
    pass


class DegenerateContactError(ContactError):
    """Raised when b_eta is singular, i.e. the contact condition fails."""
    pass


@dataclass(frozen=True, eq=False)
class ContactSystem:
    chart: Chart
    eta: FormField
    hamiltonian: ScalarField
    name: str = "contact system"
    step: float = DEFAULT_STEP

    def __post_init__(self):
        if self.chart.dim % 2 != 1:
            raise ContactError(f"{self.name}: contact charts have odd dimension, got {self.chart.dim}")
        if self.eta.degree != 1 or self.eta.dim != self.chart.dim:
            raise ContactError(f"{self.name}: eta must be a 1-form field on dim {self.chart.dim}")

    @property
    def dim(self):
        return self.chart.dim

    @property
    def n(self):
        return (self.chart.dim - 1) // 2

    def deta_at(self, x):
        return exterior_derivative(self.eta, x, self.step)

    def volume_at(self, x):
        """nu = eta ^ (d eta)^n at x."""
        return wedge(self.eta(x), wedge_power(self.deta_at(x), self.n))

    def volume_form(self):
        return FormField(self.dim, self.dim, self.volume_at, chart=self.chart, name="nu")


@dataclass(frozen=True, eq=False)
class ContactFrame:
    """Everything derived from one factorization of b_eta at a point."""
    point: np.ndarray
    eta: np.ndarray
    deta: np.ndarray
    reeb: np.ndarray
    bivector: np.ndarray


@dataclass(frozen=True)
class MeasureDensity:
    """exp(sigma) times the top coefficient of a reference volume form."""
    sigma: ScalarField
    reference: object
    description: str = "eta ^ (d eta)^n"

    def __call__(self, x):
        return exp(self.sigma(x)) * self.reference(x)


def b_eta_matrix(sys, x):
    eta = sys.eta(x).vector()
    deta = sys.deta_at(x).to_matrix()
    return deta.T + np.outer(eta, eta), eta, deta


def contact_frame(sys, x):
    x = np.asarray(x, dtype=float)
    B, eta, deta = b_eta_matrix(sys, x)
    if not np.all(np.isfinite(B)):
        logger.error(f"Non-finite b_eta at {x} for {sys.name}")
        raise DegenerateContactError(f"non-finite b_eta at {x}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(B, check_finite=False)
    rcond, _ = dgecon(lu, np.linalg.norm(B, 1), norm="1")
    if not np.isfinite(rcond) or rcond * CONDITION_LIMIT < 1.0:
        logger.error(f"b_eta condition estimate exceeds {CONDITION_LIMIT:.0e} at {x} for {sys.name}")
        raise DegenerateContactError(f"contact condition fails at {x}: b_eta is singular")
    factors = (lu, piv)
    reeb_vector = lu_solve(factors, eta)
    inverse = lu_solve(factors, np.eye(sys.dim))
    bivector = inverse.T @ deta @ inverse
    return ContactFrame(x, eta, deta, reeb_vector, bivector)


def check_contact(sys, x):
    """Top coefficient of eta ^ (d eta)^n at x, signed by the chart order."""
    return top_coefficient(sys.volume_at(np.asarray(x, dtype=float)))


def reeb(sys, x):
    return contact_frame(sys, x).reeb


def reeb_field(sys):
    return VectorField(sys.dim, lambda x: reeb(sys, x), name="xi")


def reeb_derivative(sys, f, x):
    """xi(f) at x."""
    return float(reeb(sys, x) @ f.grad(x, sys.step))


def _covector(a):
    if isinstance(a, KForm):
        return a.vector()
    return np.asarray(a, dtype=float)


def lambda2(sys, a, b, x):
    """Jacobi bivector Lambda(a, b) = d eta(b_eta^-1 a, b_eta^-1 b)."""
    P = contact_frame(sys, x).bivector
    return float(_covector(a) @ P @ _covector(b))


def jacobi_bracket(sys, f, g, x):
    x = np.asarray(x, dtype=float)
    frame = contact_frame(sys, x)
    df = f.grad(x, sys.step)
    dg = g.grad(x, sys.step)
    return float(df @ frame.bivector @ dg + f(x) * (frame.reeb @ dg) - g(x) * (frame.reeb @ df))


def _field_from_frame(sys, frame):
    dH = sys.hamiltonian.grad(frame.point, sys.step)
    return -frame.bivector.T @ dH - sys.hamiltonian(frame.point) * frame.reeb


def hamiltonian_field(sys, x):
    """X_H = -i_{dH} Lambda - H xi."""
    return _field_from_frame(sys, contact_frame(sys, x))


def hamiltonian_vector_field(sys):
    return VectorField(sys.dim, lambda x: hamiltonian_field(sys, x), name=f"X_{sys.hamiltonian.name}")


def darboux_hamiltonian_field(sys, x):
    """Closed-form X_H in Darboux coordinates (z, q, p)."""
    x = np.asarray(x, dtype=float)
    n = sys.n
    grad = sys.hamiltonian.grad(x, sys.step)
    H_z, H_q, H_p = grad[0], grad[1:n + 1], grad[n + 1:]
    p = x[n + 1:]
    return np.concatenate([[p @ H_p - sys.hamiltonian(x)], H_p, -(H_q + p * H_z)])


def hamiltonian_residuals(sys, x):
    """Residuals of i_X d eta = dH - xi(H) eta and eta(X) = -H."""
    x = np.asarray(x, dtype=float)
    frame = contact_frame(sys, x)
    X = _field_from_frame(sys, frame)
    dH = sys.hamiltonian.grad(x, sys.step)
    xi_H = frame.reeb @ dH
    first = frame.deta.T @ X - dH + xi_H * frame.eta
    second = frame.eta @ X + sys.hamiltonian(x)
    return float(np.max(np.abs(first))), float(abs(second))


def conformal_system(sys):
    """The system carrying eta_H = -eta / H, defined where H != 0."""
    H = sys.hamiltonian

    def value(x):
        h = H(x)
        if h == 0.0:
            logger.error(f"eta_H evaluated on the zero level set at {x}")
            raise ContactError(f"eta_H is undefined where H = 0 (at {x})")
        return sys.eta(x) * (-1.0 / h)

    derivative = None
    if sys.eta.derivative is not None:
        def derivative(x):
            h = H(x)
            if h == 0.0:
                raise ContactError(f"eta_H is undefined where H = 0 (at {x})")
            eta = sys.eta(x).coeffs
            return -np.asarray(sys.eta.derivative(x)) / h + np.outer(H.grad(x, sys.step), eta) / h ** 2

    eta_H = FormField(sys.dim, 1, value, derivative, sys.chart, f"eta_{H.name}")
    return replace(sys, eta=eta_H, name=f"{sys.name} (conformal)")


def conformal_sigma(sys):
    """sigma = -(n+1) ln|H| on one component of H != 0."""
    H = sys.hamiltonian
    k = sys.n + 1
    return ScalarField(lambda x: -k * np.log(abs(H(x))),
                       lambda x: -k * H.grad(x, sys.step) / H(x),
                       f"-{k} ln|{H.name}|")


def measure_residual(sys, sigma, x):
    """X_H(sigma) - (n+1) xi(H); zero iff exp(sigma) nu is invariant at x."""
    x = np.asarray(x, dtype=float)
    frame = contact_frame(sys, x)
    X = _field_from_frame(sys, frame)
    xi_H = frame.reeb @ sys.hamiltonian.grad(x, sys.step)
    return float(X @ sigma.grad(x, sys.step) - (sys.n + 1) * xi_H)


def darboux_measure_residual(sys, sigma, x):
    """The same residual written as the Darboux-coordinate PDE in sigma."""
    x = np.asarray(x, dtype=float)
    n = sys.n
    dH = sys.hamiltonian.grad(x, sys.step)
    ds = sigma.grad(x, sys.step)
    p = x[n + 1:]
    H = sys.hamiltonian(x)
    lhs = (ds[0] * (p @ dH[n + 1:] - H)
           + ds[1:n + 1] @ dH[n + 1:]
           - ds[n + 1:] @ (dH[1:n + 1] + p * dH[0]))
    return float(lhs - (n + 1) * dH[0])


def liouville_density(sys, sigma):
    return MeasureDensity(sigma, lambda x: check_contact(sys, x))


def symplectic_cone_form(eta, deta, s, c=-1.0):
    """exp(c s)(d eta + c ds ^ eta) on R x chart, with s the new first axis."""
    dim = eta.dim + 1
    ds = KForm.elementary(dim, (0,))
    return (deta.embed(dim, 1) + c * wedge(ds, eta.embed(dim, 1))) * exp(c * s)


def lie_residual_eta(sys, x):
    """L_X eta + xi(H) eta at x, with L_X eta = i_X d eta + d(eta(X))."""
    X = hamiltonian_vector_field(sys)
    xi_H = reeb_derivative(sys, sys.hamiltonian, x)
    return (lie_derivative(X, sys.eta, x, sys.step) + sys.eta(x) * xi_H).norm()


def lie_residual_volume(sys, x):
    X = hamiltonian_vector_field(sys)
    xi_H = reeb_derivative(sys, sys.hamiltonian, x)
    nu = sys.volume_form()
    return (lie_derivative(X, nu, x, sys.step) + nu(x) * ((sys.n + 1) * xi_H)).norm()
