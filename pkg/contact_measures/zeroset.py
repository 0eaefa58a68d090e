"""The zero level set S = {H = 0} as a graph z = zeta(u) over the (q, p) block.

S carries the exact symplectic structure theta = psi* eta, Omega = d theta,
where psi(u) = (zeta(u), u). The convention for Omega is the matrix of
values Omega(e_i, e_j); i_v Omega is the covector u -> Omega(v, u).
"""
import itertools
import logging
import threading
from dataclasses import dataclass, field
from math import exp

import numpy as np
from scipy.optimize import fsolve, newton

from contact_measures.contact import ContactError, contact_frame
from contact_measures.exterior import (
    DEFAULT_STEP,
    Chart,
    FormField,
    KForm,
    VectorField,
    exterior_derivative,
    interior,
    numeric_jacobian,
    pullback,
    top_coefficient,
    wedge_power,
)

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
TRANSVERSALITY_TOL = 1e-8
TANGENCY_TOL = 1e-8
OMEGA_TOL = 1e-10


class ZeroSetError(Exception):
    """Custom exception for zero level set errors."""
    pass


class TransversalityError(ZeroSetError):
    """Raised where xi(H) vanishes on S."""
    pass


class SurfaceConvergenceError(ZeroSetError):
    """Raised when the height solve does not converge."""
    pass


class TangencyError(ZeroSetError):
    """Raised when X_H is not tangent to the computed surface."""
    pass


class DegenerateSymplecticError(ZeroSetError):
    """Raised when Omega = d theta is degenerate."""
    pass


@dataclass(frozen=True, eq=False)
class InducedStructure:
    point: np.ndarray
    theta: KForm
    omega: KForm
    liouville: np.ndarray


@dataclass(frozen=True, eq=False)
class ExactSymplecticChart:
    """An even-dimensional chart with a primitive theta of a symplectic form."""
    chart: Chart
    theta: FormField
    step: float = DEFAULT_STEP

    def __post_init__(self):
        if self.chart.dim % 2 or self.theta.degree != 1 or self.theta.dim != self.chart.dim:
            raise ZeroSetError(f"{self.chart.name}: need a 1-form on an even-dimensional chart")

    @property
    def dim(self):
        return self.chart.dim

    @property
    def n(self):
        return self.chart.dim // 2

    def omega_at(self, u):
        return exterior_derivative(self.theta, u, self.step)

    def omega_form(self):
        return FormField(self.dim, 2, self.omega_at, chart=self.chart, name="Omega")

    def induced(self, u):
        u = np.asarray(u, dtype=float)
        theta = self.theta(u)
        omega = self.omega_at(u)
        matrix = omega.to_matrix()
        det = np.linalg.det(matrix)
        if abs(det) <= OMEGA_TOL:
            logger.error(f"Omega is degenerate at {u}: det = {det:.3e}")
            raise DegenerateSymplecticError(f"d theta is degenerate at {u} (det = {det:.3e})")
        liouville = np.linalg.solve(matrix.T, theta.vector())
        return InducedStructure(u, theta, omega, liouville)

    def liouville(self, u):
        return self.induced(u).liouville

    def liouville_field(self):
        return VectorField(self.dim, self.liouville, name="Delta")

    def volume_coefficient(self, u):
        """Top coefficient of (d theta)^n in chart order."""
        return top_coefficient(wedge_power(self.omega_at(u), self.n))

    def liouville_residual(self, u):
        """|i_Delta Omega - theta| at u."""
        s = self.induced(u)
        return (interior(s.liouville, s.omega) - s.theta).norm()


class LevelSetChart:
    """Graph chart of S over the chart axes after the first (height) axis.

    The warm-start cache is thread-local, so concurrent queries from
    different threads never share Newton seeds.
    """

    def __init__(self, parent, surface=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER, warm_start=True, z_seed=0.0):
        self.parent = parent
        self.surface = surface or parent.chart.without_axis(0, name=f"{parent.chart.name}|S")
        self.tol = tol
        self.max_iter = max_iter
        self.warm_start = warm_start
        self.z_seed = z_seed
        self._cache = threading.local()
        self.theta = FormField(self.surface.dim, 1, self._theta_at, chart=self.surface, name="theta")
        self.symplectic = ExactSymplecticChart(self.surface, self.theta, parent.step)

    @property
    def dim(self):
        return self.surface.dim

    @property
    def n(self):
        return self.parent.n

    def _seed(self, z0):
        if z0 is not None:
            return float(z0)
        if self.warm_start:
            return getattr(self._cache, "z", self.z_seed)
        return self.z_seed

    def height(self, u, z0=None):
        """zeta(u): the root in z of H(z, u), found with scipy's Newton solver."""
        u = np.asarray(u, dtype=float)
        H = self.parent.hamiltonian

        def value(z):
            return H(np.concatenate([[z], u]))

        def slope(z):
            x = np.concatenate([[z], u])
            derivative = H.grad(x, self.parent.step)[0]
            if abs(derivative) < TRANSVERSALITY_TOL:
                logger.error(f"dH/dz vanishes at {x}")
                raise TransversalityError(f"dH/dz = {derivative:.3e} at {x}")
            return derivative

        z, result = newton(value, self._seed(z0), fprime=slope, tol=self.tol, maxiter=self.max_iter,
                           full_output=True, disp=False)
        z = float(z)
        residual = abs(value(z))
        if residual > self.tol:
            logger.error(f"Surface solve at {u} stalled with |H| = {residual:.3e} ({result.flag})")
            raise SurfaceConvergenceError(f"no convergence in {self.max_iter} iterations at u={u}")
        if self.warm_start:
            self._cache.z = z
        return z

    def inclusion(self, u, z0=None):
        u = np.asarray(u, dtype=float)
        return np.concatenate([[self.height(u, z0)], u])

    def inclusion_jacobian(self, u, x=None):
        """D psi at u: rows (z, u), z-row = -grad_u H / dH/dz."""
        u = np.asarray(u, dtype=float)
        x = self.inclusion(u) if x is None else x
        grad = self.parent.hamiltonian.grad(x, self.parent.step)
        if abs(grad[0]) < TRANSVERSALITY_TOL:
            raise TransversalityError(f"dH/dz = {grad[0]:.3e} at {x}")
        return np.vstack([-grad[1:] / grad[0], np.eye(self.dim)])

    def _theta_at(self, u):
        x = self.inclusion(u)
        return pullback(None, self.parent.eta(x), u, jacobian=self.inclusion_jacobian(u, x))

    def frame_at(self, u, z0=None):
        """(psi(u), contact frame at psi(u), xi(H) there)."""
        x = self.inclusion(u, z0)
        frame = contact_frame(self.parent, x)
        xi_H = float(frame.reeb @ self.parent.hamiltonian.grad(x, self.parent.step))
        if abs(xi_H) < TRANSVERSALITY_TOL:
            logger.error(f"xi(H) = {xi_H:.3e} on S at {x}")
            raise TransversalityError(f"xi(H) vanishes on S at {x}")
        return x, frame, xi_H


def solve_surface(lsc, u, z0=None):
    """The point psi(u) of S; checks transversality there."""
    return lsc.frame_at(u, z0)[0]


def induced(lsc, u):
    return lsc.symplectic.induced(u)


def reeb_rate(lsc, u):
    """xi(H) at psi(u)."""
    return lsc.frame_at(u)[2]


def _restricted(lsc, u):
    u = np.asarray(u, dtype=float)
    x, frame, xi_H = lsc.frame_at(u)
    H = lsc.parent.hamiltonian
    grad = H.grad(x, lsc.parent.step)
    X = -frame.bivector.T @ grad - H(x) * frame.reeb
    slope = -grad[1:] / grad[0]
    defect = X[0] - slope @ X[1:]
    if abs(defect) > TANGENCY_TOL * max(1.0, float(np.max(np.abs(X)))):
        logger.error(f"X_H leaves S at {x}: normal component {defect:.3e}")
        raise TangencyError(f"X_H is not tangent to S at {x} (defect {defect:.3e})")
    return X[1:], xi_H


def restricted_field(lsc, u):
    """u-components of X_H on S."""
    return _restricted(lsc, u)[0]


def restricted_vector_field(lsc):
    return VectorField(lsc.dim, lambda u: restricted_field(lsc, u), name="X_H|S")


def rescaled_field(lsc):
    """Z = X_H|S / xi(H), which satisfies Z(sigma) = n whenever the measure condition holds."""
    def evaluate(u):
        X, xi_H = _restricted(lsc, u)
        return X / xi_H
    return VectorField(lsc.dim, evaluate, name="Z")


def liouville_defect(lsc, u):
    """|X_H|S + xi(H) Delta| with Delta from the Omega-system."""
    X, xi_H = _restricted(lsc, u)
    return float(np.max(np.abs(X + xi_H * lsc.symplectic.liouville(u))))


def surface_sigma_residual(lsc, sigma, u):
    """X_H|S(sigma) - n xi(H); zero iff exp(sigma)/xi(H) (d theta)^n is invariant."""
    u = np.asarray(u, dtype=float)
    X, xi_H = _restricted(lsc, u)
    return float(X @ sigma.grad(u, lsc.parent.step) - lsc.n * xi_H)


def surface_measure_density(lsc, sigma, u):
    u = np.asarray(u, dtype=float)
    xi_H = reeb_rate(lsc, u)
    if xi_H == 0:
        raise ZeroSetError(f"xi(H) vanishes at {u}")
    return exp(sigma(u)) / xi_H * lsc.symplectic.volume_coefficient(u)


def surface_liouville_density(chart, sigma):
    """exp(sigma) (d theta)^n as a coefficient function on an exact symplectic chart."""
    return lambda u: exp(sigma(u)) * chart.volume_coefficient(u)


@dataclass
class EquilibriumSearch:
    roots: list = field(default_factory=list)
    seeds: int = 0
    box: tuple = ()

    @property
    def obstruction(self):
        return bool(self.roots)

    def summary(self):
        if self.roots:
            points = ", ".join(np.array2string(r, precision=6) for r in self.roots)
            return f"obstruction found: {len(self.roots)} equilibria ({points}); no invariant measure can exist"
        return f"no obstruction found over {self.seeds} seeds (not a proof that an invariant measure exists)"


def find_zeros(vector_field, lower, upper, grid=3, tol=1e-10, exclude=None):
    """Grid-seeded root search for a vector field inside the box [lower, upper]."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    axes = [np.linspace(lo, hi, grid) for lo, hi in zip(lower, upper)]
    roots = []
    seeds = 0
    for seed in itertools.product(*axes):
        seeds += 1
        seed = np.array(seed)
        if exclude is not None and exclude(seed):
            continue
        try:
            root, _, ier, _ = fsolve(vector_field, seed, full_output=True, xtol=1e-13,
                                     maxfev=50 * (seed.size + 1))
            for _ in range(3):
                residual = vector_field(root)
                if np.max(np.abs(residual)) <= 1e-15:
                    break
                root = root - np.linalg.lstsq(numeric_jacobian(vector_field, root), residual, rcond=None)[0]
            residual = np.max(np.abs(vector_field(root)))
        except (ZeroSetError, ContactError, np.linalg.LinAlgError, ValueError) as e:
            logger.debug(f"Seed {seed} abandoned: {e}")
            continue
        if not np.all(np.isfinite(root)) or np.any(root < lower) or np.any(root > upper):
            continue
        if residual > tol or (exclude is not None and exclude(root)):
            continue
        if all(np.max(np.abs(root - r)) > 1e-6 for r in roots):
            roots.append(root)
    return EquilibriumSearch(roots, seeds, (lower.tolist(), upper.tolist()))


def find_equilibria(lsc, lower=None, upper=None, grid=3):
    lower = lsc.surface.lower if lower is None else lower
    upper = lsc.surface.upper if upper is None else upper
    search = find_zeros(restricted_vector_field(lsc), lower, upper, grid)
    if search.obstruction:
        logger.warning(search.summary())
    else:
        logger.info(search.summary())
    return search
