import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from disclosure_mfg.costs import (
    Coupling,
    bar_major_cost,
    hamiltonian,
    hamiltonian_grad,
    lagrangian,
    major_cost,
    mixed_coefficient,
    monotonicity_pairing,
)
from disclosure_mfg.grid import Grid1D, GridError, MeasureOnGrid
from disclosure_mfg.model import (
    Constant,
    ConstantMajor,
    GaussianBump,
    LinearProfile,
    QuadraticMajor,
    ZeroProfile,
    make_model,
)

from .conftest import congestion_model, quadratic_model
from .oracles import dense_argmin, double_convolution, legendre_numeric

beliefs = st.floats(0.0, 1.0).map(lambda a: (a, 1.0 - a))


def bump_model(equal=False):
    a = [GaussianBump(1.0, 0.5), Constant(1.0) if not equal else GaussianBump(1.0, 0.5)]
    return make_model(a, [ZeroProfile()] * 2, [ZeroProfile()] * 2, [ConstantMajor(0.0)] * 2, (0.5, 0.5))


def random_density(grid, rng):
    k = rng.integers(1, 4)
    d = np.zeros(grid.n_x)
    for _ in range(k):
        d += rng.random() * np.exp(-0.5 * ((grid.x - rng.uniform(-2, 2)) / rng.uniform(0.2, 1.0)) ** 2)
    return d / grid.integrate(d)


# -- Lagrangian and Hamiltonian -------------------------------------------------


def test_lagrangian_unit_coefficients():
    m = bump_model(equal=True)
    m1 = make_model([Constant(1.0)] * 2, [ZeroProfile()] * 2, [ZeroProfile()] * 2, [ConstantMajor()] * 2, (0.2, 0.8))
    assert lagrangian(m1, 0.7, 2.0, (0.2, 0.8)) == pytest.approx(1.0, abs=1e-15)
    assert lagrangian(m, 0.0, 0.0, (0.3, 0.7)) == 0.0


def test_lagrangian_vertex_is_single_type():
    m = bump_model()
    x = np.linspace(-2, 2, 7)
    assert np.allclose(lagrangian(m, x, 1.3, (1.0, 0.0)), 1.3**2 / (4 * (1 + 0.5 * np.exp(-x**2))))
    assert np.allclose(lagrangian(m, x, 1.3, (0.0, 1.0)), 1.3**2 / 4)


def test_lagrangian_is_legendre_transform_of_hamiltonian():
    m = bump_model()
    x, u = 0.3, 1.0
    numeric = legendre_numeric(lambda xi: hamiltonian(m, x, xi, (1.0, 0.0)), u)
    assert numeric == pytest.approx(float(lagrangian(m, x, u, (1.0, 0.0))), abs=1e-6)
    # mixed belief: the transform of the mixed Hamiltonian is the mixed Lagrangian
    numeric = legendre_numeric(lambda xi: hamiltonian(m, x, xi, (0.4, 0.6)), u)
    assert numeric == pytest.approx(float(lagrangian(m, x, u, (0.4, 0.6))), abs=1e-6)


def test_hamiltonian_gradient_zero_at_origin():
    m = bump_model()
    assert hamiltonian_grad(m, 0.5, 0.0, (0.3, 0.7)) == 0.0


def test_hamiltonian_equal_types_is_single_type():
    m = bump_model(equal=True)
    x = np.linspace(-3, 3, 11)
    assert np.allclose(hamiltonian(m, x, 0.8, (0.5, 0.5)), hamiltonian(m, x, 0.8, (1.0, 0.0)), rtol=1e-15)


def test_hamiltonian_gradient_central_difference():
    m = bump_model()
    rng = np.random.default_rng(0)
    for _ in range(10):
        x, xi, a = rng.uniform(-2, 2), rng.uniform(-3, 3), rng.random()
        p = (a, 1 - a)
        h = 1e-4
        fd = (hamiltonian(m, x, xi + h, p) - hamiltonian(m, x, xi - h, p)) / (2 * h)
        assert fd == pytest.approx(hamiltonian_grad(m, x, xi, p), abs=1e-8)


def test_coercivity_bracket():
    m = bump_model()
    xi = np.linspace(-5, 5, 101)
    x = np.linspace(-3, 3, 31)[:, None]
    h = hamiltonian(m, x, xi, (0.5, 0.5))
    assert np.all(h >= 1.0 * xi**2 - 1e-12) and np.all(h <= 1.5 * xi**2 + 1e-12)


@given(x=st.floats(-4, 4), xi=st.floats(-10, 10), p=beliefs)
def test_fenchel_equality(x, xi, p):
    m = bump_model()
    h = hamiltonian(m, x, xi, p)
    u = -hamiltonian_grad(m, x, xi, p)
    assert h + lagrangian(m, x, u, p) == pytest.approx(-xi * u, rel=1e-12, abs=1e-8)


@given(x=st.floats(-4, 4), xi=st.floats(-10, 10), p=beliefs)
def test_mixture_linearity_when_coefficients_agree(x, xi, p):
    m = bump_model(equal=True)
    mixed = hamiltonian(m, x, xi, p)
    parts = p[0] * hamiltonian(m, x, xi, (1.0, 0.0)) + p[1] * hamiltonian(m, x, xi, (0.0, 1.0))
    assert mixed == pytest.approx(parts, rel=1e-12, abs=1e-12)


@given(x=st.floats(-4, 4), p=beliefs)
def test_mixed_coefficient_is_harmonic_mean(x, p):
    m = bump_model()
    a1 = 1 + 0.5 * np.exp(-x * x)
    expected = 1.0 / (p[0] / a1 + p[1] / 1.0)
    assert mixed_coefficient(m, x, p) == pytest.approx(expected, rel=1e-13)
    assert 1.0 - 1e-12 <= mixed_coefficient(m, x, p) <= a1 + 1e-12


@given(u1=st.floats(-5, 5), u2=st.floats(-5, 5), lam=st.floats(0, 1), p=beliefs)
def test_lagrangian_convex_in_control(u1, u2, lam, p):
    m = bump_model()
    mid = lagrangian(m, 0.2, lam * u1 + (1 - lam) * u2, p)
    assert mid <= lam * lagrangian(m, 0.2, u1, p) + (1 - lam) * lagrangian(m, 0.2, u2, p) + 1e-12


# -- Coupling ---------------------------------------------------------------------


def test_linear_profile_is_double_convolution(small_grid):
    g = small_grid
    m = make_model([Constant(1.0)] * 2, [LinearProfile(1.0)] * 2, [LinearProfile(1.0)] * 2, [ConstantMajor()] * 2, (0.5, 0.5))
    dens = random_density(g, np.random.default_rng(1))
    ref = double_convolution(dens, g.x, m.bandwidth, g.dx)
    assert np.max(np.abs(Coupling(m, g).running(dens, (0.3, 0.7)) - ref)) < 1e-8


def test_kernel_tail_truncated_and_normalised(small_grid):
    c = Coupling(quadratic_model(), small_grid)
    R = c.kernel
    reach = int(np.floor(6 * 0.3 / small_grid.dx))
    mid = small_grid.n_x // 2
    assert R[mid, mid + reach + 1] == 0.0 and R[mid, mid + reach] > 0.0
    assert R[mid].sum() * small_grid.dx == pytest.approx(1.0, abs=1e-14)


def test_coupling_rejects_negative_density(small_grid):
    c = Coupling(quadratic_model(), small_grid)
    d = np.full(small_grid.n_x, 1.0 / 8)
    d[3] = -1e-3
    with pytest.raises(GridError):
        c.running(d, (0.5, 0.5))


def test_pairing_vanishes_on_equal_densities(small_grid):
    c = Coupling(congestion_model(), small_grid)
    d = random_density(small_grid, np.random.default_rng(2))
    assert monotonicity_pairing(c, d, d, (0.5, 0.5)) == (0.0, 0.0)


@pytest.mark.parametrize("factory", [quadratic_model, congestion_model])
@pytest.mark.parametrize("which", ["running", "terminal"])
def test_strong_monotonicity_random_pairs(factory, which):
    g = Grid1D(8.0, 201, 1.0, 400)
    model = factory()
    c = Coupling(model, g)
    rng = np.random.default_rng(3)
    for _ in range(20):
        d1, d2 = random_density(g, rng), random_density(g, rng)
        a = rng.random()
        pairing, sq = monotonicity_pairing(c, d1, d2, (a, 1 - a), which)
        assert pairing >= 0.0
        assert pairing >= model.alpha * sq


# -- Major cost -------------------------------------------------------------------


def test_bar_cost_of_control_free_cost_is_the_cost(small_grid):
    m = make_model([Constant()] * 2, [ZeroProfile()] * 2, [ZeroProfile()] * 2, [ConstantMajor(0.7), ConstantMajor(0.1)], (0.5, 0.5))
    val, _ = bar_major_cost(m, 0.0, None, (0.25, 0.75))
    assert val == pytest.approx(0.25 * 0.7 + 0.75 * 0.1, abs=1e-15)


def test_bar_cost_vertex_parabola():
    m = quadratic_model(centers=(0.4, 1.0))
    val, arg = bar_major_cost(m, 0.0, None, (1.0, 0.0))
    assert arg == pytest.approx(0.4, abs=1e-8) and val == pytest.approx(0.0, abs=1e-15)


def test_bar_cost_mixture_matches_dense_grid():
    m = quadratic_model(centers=(0.0, 1.0))
    p = (0.3, 0.7)
    val, arg = bar_major_cost(m, 0.0, None, p)
    ref_val, ref_arg = dense_argmin(lambda u: major_cost(m, 0.0, u, None, p), 0.0, 1.0)
    assert arg == pytest.approx(0.7, abs=1e-6)
    assert val == pytest.approx(ref_val, abs=1e-6)
    assert abs(arg - ref_arg) < 1e-5


@given(u=st.floats(-1, 1), a=st.floats(0, 1))
def test_bar_cost_below_every_sampled_control(u, a):
    model = congestion_model()
    g = Grid1D(4.0, 41, 1.0, 40)
    dens = MeasureOnGrid.from_pdf(g, lambda x: np.exp(-0.5 * (x - 0.3) ** 2))
    val, _ = bar_major_cost(model, 0.0, dens, (a, 1 - a))
    assert val <= float(major_cost(model, 0.0, u, dens, (a, 1 - a))) + 1e-12


def test_major_cost_constant_family():
    m = make_model([Constant()] * 2, [ZeroProfile()] * 2, [ZeroProfile()] * 2, [QuadraticMajor(0.0), QuadraticMajor(1.0)], (0.5, 0.5))
    assert major_cost(m, 0.0, np.array([0.0, 1.0]), None, (0.5, 0.5)).tolist() == [0.5, 0.5]
