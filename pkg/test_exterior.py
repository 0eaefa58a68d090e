import numpy as np
import pytest

from contact_measures.exterior import (
    Chart,
    ExteriorError,
    FormField,
    KForm,
    ScalarField,
    VectorField,
    exterior_derivative,
    interior,
    lie_derivative,
    pullback,
    top_coefficient,
    wedge,
    wedge_power,
)
from contact_measures.scenarios import darboux_chart, darboux_form


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def eta():
    return darboux_form(darboux_chart(2, 10.0))


def random_form(rng, dim, degree):
    return KForm(dim, degree, rng.normal(size=KForm.zero(dim, degree).coeffs.size))


def test_elementary_wedge():
    """dz ^ dq1 is the elementary 2-form on (z, q1)."""
    product = wedge(KForm.elementary(5, (0,)), KForm.elementary(5, (1,)))
    assert np.allclose(product.coeffs, KForm.elementary(5, (0, 1)).coeffs)
    assert product.coeffs[0] == 1.0


def test_wedge_of_one_form_with_itself_vanishes(rng):
    """alpha ^ alpha = 0 for 1-forms."""
    alpha = random_form(rng, 5, 1)
    assert wedge(alpha, alpha).norm() == 0.0


def test_symplectic_square_interleaved():
    """(dq1^dp1 + dq2^dp2)^2 = 2 dq1^dp1^dq2^dp2 in the order (q1, p1, q2, p2)."""
    omega = KForm.elementary(4, (0, 1)) + KForm.elementary(4, (2, 3))
    assert top_coefficient(wedge_power(omega, 2)) == pytest.approx(2.0)


def test_symplectic_square_blocked():
    """The same form in the order (q1, q2, p1, p2) has top coefficient -2."""
    omega = KForm.elementary(4, (0, 2)) + KForm.elementary(4, (1, 3))
    assert top_coefficient(wedge_power(omega, 2)) == pytest.approx(-2.0)


def test_wedge_graded_commutative_and_associative(rng):
    """a^b = (-1)^(kl) b^a and (a^b)^c = a^(b^c)."""
    a, b, c = random_form(rng, 6, 2), random_form(rng, 6, 1), random_form(rng, 6, 1)
    assert np.allclose(wedge(a, b).coeffs, wedge(b, a).coeffs)
    assert np.allclose(wedge(b, c).coeffs, -wedge(c, b).coeffs)
    assert np.allclose(wedge(wedge(a, b), c).coeffs, wedge(a, wedge(b, c)).coeffs)


def test_wedge_errors():
    """Dimension mismatch and degree overflow raise."""
    with pytest.raises(ExteriorError):
        wedge(KForm.elementary(3, (0,)), KForm.elementary(4, (0,)))
    with pytest.raises(ExteriorError):
        wedge(KForm.elementary(3, (0, 1)), KForm.elementary(3, (1, 2)))


def test_evaluation_is_antisymmetric(rng):
    """Swapping two arguments flips the sign."""
    w = random_form(rng, 5, 3)
    u, v, x = rng.normal(size=(3, 5))
    assert w(u, v, x) == pytest.approx(-w(v, u, x))
    assert w(u, u, x) == pytest.approx(0.0, abs=1e-12)


def test_matrix_round_trip(rng):
    """from_matrix/to_matrix agree with evaluation on basis vectors."""
    w = random_form(rng, 4, 2)
    matrix = w.to_matrix()
    e = np.eye(4)
    assert matrix[1, 3] == pytest.approx(w(e[1], e[3]))
    assert np.allclose(KForm.from_matrix(matrix).coeffs, w.coeffs)


def test_derivative_of_darboux_form(eta):
    """d(dz - p dq) = dq1^dp1 + dq2^dp2."""
    x = np.array([0.3, -0.2, 0.5, 1.1, -0.7])
    expected = KForm.elementary(5, (1, 3)) + KForm.elementary(5, (2, 4))
    assert np.allclose(exterior_derivative(eta, x).coeffs, expected.coeffs, atol=1e-12)


def test_derivative_by_finite_differences_matches_analytic(eta):
    """Dropping the analytic derivative gives the same d eta."""
    numeric = FormField(5, 1, eta.evaluate, chart=eta.chart)
    x = np.array([0.1, 0.2, -0.3, 0.4, 0.5])
    assert np.allclose(exterior_derivative(numeric, x).coeffs, exterior_derivative(eta, x).coeffs, atol=1e-9)


def test_derivative_of_constant_form(rng):
    """d of a constant form is zero."""
    w = FormField(4, 2, lambda x: KForm(4, 2, np.arange(6.0)))
    assert exterior_derivative(w, rng.normal(size=4)).norm() <= 1e-10


def test_d_squared_vanishes():
    """d(dF) is zero up to finite-difference error."""
    F = FormField(3, 0, lambda x: KForm.scalar(3, np.sin(x[0]) * x[1] ** 2 + np.exp(x[2]) * x[0]))
    dF = FormField(3, 1, lambda x: exterior_derivative(F, x))
    assert exterior_derivative(dF, np.array([0.2, -0.4, 0.3]), h=1e-3).norm() <= 1e-6


def test_boundary_margin():
    """Finite differences refuse points within h of the chart boundary."""
    chart = Chart.box("unit", ("a", "b"), 1.0)
    w = FormField(2, 1, lambda x: KForm(2, 1, x), chart=chart)
    with pytest.raises(ExteriorError):
        exterior_derivative(w, np.array([1.0, 0.0]), h=1e-3)


def test_interior_of_reeb_direction():
    """d/dz contracted into dq1^dp1 + dq2^dp2 is zero."""
    omega = KForm.elementary(5, (1, 3)) + KForm.elementary(5, (2, 4))
    assert interior(np.eye(5)[0], omega).norm() == 0.0


def test_interior_of_liouville_field():
    """p d/dp into dq ^ dp gives -p dq."""
    p = 1.7
    result = interior(np.array([0.0, p]), KForm.elementary(2, (0, 1)))
    assert np.allclose(result.coeffs, [-p, 0.0])


def test_interior_graded_leibniz(rng):
    """i_v(a ^ b) = (i_v a) b - a (i_v b) for 1-forms."""
    a, b = random_form(rng, 5, 1), random_form(rng, 5, 1)
    v = rng.normal(size=5)
    lhs = interior(v, wedge(a, b))
    rhs = b * a(v) - a * b(v)
    assert np.max(np.abs(lhs.coeffs - rhs.coeffs)) <= 1e-12


def test_interior_of_scalar_raises():
    with pytest.raises(ExteriorError):
        interior(np.ones(3), KForm.scalar(3, 1.0))


def test_lie_derivative_of_darboux_form_along_reeb(eta):
    """d/dz preserves dz - p dq."""
    reeb = VectorField(5, lambda x: np.eye(5)[0])
    assert lie_derivative(reeb, eta, np.array([0.2, 0.1, -0.3, 0.4, 0.9]), h=1e-4).norm() <= 1e-8


def test_lie_derivative_of_function():
    """On 0-forms the Lie derivative is X(f)."""
    f = FormField(2, 0, lambda x: KForm.scalar(2, x[0] * x[1]))
    X = VectorField(2, lambda x: np.array([1.0, 2.0]))
    value = lie_derivative(X, f, np.array([0.5, 0.25]))
    assert value.coeffs[0] == pytest.approx(0.25 + 1.0, abs=1e-8)


def test_pullback_by_identity(rng):
    """The identity map leaves a form unchanged."""
    w = random_form(rng, 4, 2)
    pulled = pullback(lambda x: x, w, rng.normal(size=4))
    assert np.max(np.abs(pulled.coeffs - w.coeffs)) <= 1e-10


def test_pullback_of_top_form_scales_by_determinant(rng):
    """A linear map multiplies a top form by det(A)."""
    A = rng.normal(size=(4, 4))
    w = KForm.elementary(4, (0, 1, 2, 3), 2.5)
    pulled = pullback(lambda x: A @ x, w, rng.normal(size=4))
    assert top_coefficient(pulled) == pytest.approx(2.5 * np.linalg.det(A), rel=1e-8)


def test_pullback_with_explicit_jacobian():
    """A given Jacobian replaces finite differences and may change the dimension."""
    J = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]])
    w = KForm.covector([1.0, 1.0, 1.0])
    assert np.allclose(pullback(None, w, np.zeros(2), jacobian=J).coeffs, [3.0, 0.0])


def test_pullback_rejects_non_finite_jacobian():
    with pytest.raises(ExteriorError):
        pullback(None, KForm.covector([1.0, 0.0]), np.zeros(2), jacobian=np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_top_coefficient_needs_top_degree():
    with pytest.raises(ExteriorError):
        top_coefficient(KForm.elementary(3, (0, 1)))


def test_scalar_field_product_rule():
    """The product of fields with analytic gradients has an analytic gradient."""
    f = ScalarField(lambda x: x[0] ** 2, lambda x: np.array([2 * x[0], 0.0]))
    g = ScalarField(lambda x: x[1], lambda x: np.array([0.0, 1.0]))
    x = np.array([3.0, 2.0])
    assert (f * g)(x) == pytest.approx(18.0)
    assert np.allclose((f * g).grad(x), [12.0, 9.0])


def test_vector_field_length_is_checked():
    X = VectorField(3, lambda x: np.ones(2))
    with pytest.raises(ExteriorError):
        X(np.zeros(3))
