import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from oracles import bernstein_direct, central_difference, cox_de_boor_all, random_open_knots
from thbez.errors import DomainError
from thbez.splines_core import (
    KnotVector,
    TensorSpace,
    basis_funs_derivs,
    bernstein,
    bernstein_derivs,
    bernstein_matrix,
    eval_basis,
    eval_basis_derivs,
    eval_curve,
    eval_surface,
    find_span,
    greville,
    uniform_knots,
)

SAMPLE = KnotVector((0, 0, 0, 0.25, 0.5, 0.75, 0.75, 1, 1, 1), 2)


def full_basis(kv, x):
    s, N = eval_basis(kv, x)
    out = np.zeros(kv.n_functions)
    out[s - kv.degree : s + 1] = N
    return out


@st.composite
def knot_vectors(draw, min_degree=1):
    p = draw(st.integers(min_degree, 4))
    seed = draw(st.integers(0, 2**31 - 1))
    return KnotVector(tuple(random_open_knots(np.random.default_rng(seed), p)), p)


class TestKnotVector:
    def test_sample_properties(self):
        assert SAMPLE.n_functions == 7
        assert SAMPLE.n_elements == 4
        assert_array_equal(SAMPLE.breakpoints, [0, 0.25, 0.5, 0.75, 1])
        assert_array_equal(SAMPLE.element_spans, [2, 3, 4, 6])
        assert SAMPLE.multiplicity(0.75) == 2

    def test_domain_is_normalized(self):
        kv = KnotVector((2, 2, 3, 4, 4), 1)
        assert_allclose(kv.array, [0, 0, 0.5, 1, 1])

    def test_near_duplicates_are_merged(self):
        kv = KnotVector((0, 0, 0, 0.5, 0.5 + 1e-14, 1, 1, 1), 2)
        assert kv.multiplicity(0.5) == 2
        assert kv.n_elements == 2

    @pytest.mark.parametrize(
        "values, degree",
        [
            ((0, 0, 0.5, 0.4, 1, 1), 1),
            ((0, 0, 1, 1), 5),
            ((0, 0, 1, 1), 0),
            ((0, 0.5, 1, 1), 1),
            ((0, 0, 0.5, 0.5, 1, 1), 1),
            ((0, 0, 0, 0), 1),
        ],
        ids=["decreasing", "degree_too_high", "degree_zero", "not_open", "multiplicity_above_p", "empty_domain"],
    )
    def test_invalid_vectors_rejected(self, values, degree):
        with pytest.raises(ValueError):
            KnotVector(values, degree)

    def test_uniform_knots(self):
        kv = uniform_knots(4, 3)
        assert kv.n_functions == 7
        assert_allclose(kv.breakpoints, np.linspace(0, 1, 5))

    def test_element_functions_and_support(self):
        assert_array_equal(SAMPLE.element_functions(3), [4, 5, 6])
        first, last = SAMPLE.support_elements()
        assert_array_equal(first, [0, 0, 0, 1, 2, 3, 3])
        assert_array_equal(last, [0, 1, 2, 2, 3, 3, 3])


class TestFindSpan:
    @pytest.mark.parametrize(
        "xi, span", [(0.0, 2), (0.1, 2), (0.25, 3), (0.5, 4), (0.6, 4), (0.75, 6), (0.9, 6), (1.0, 6)]
    )
    def test_sample_spans(self, xi, span):
        assert find_span(SAMPLE, xi) == span

    @pytest.mark.parametrize("xi", [-0.1, 1.1])
    def test_outside_domain(self, xi):
        with pytest.raises(DomainError):
            find_span(SAMPLE, xi)


class TestEvalBasis:
    def test_sample_at_interior_point(self):
        s, N = eval_basis(SAMPLE, 0.625)
        assert s == 4
        assert_allclose(N, [0.125, 0.625, 0.25], atol=1e-15)

    def test_terminal_knot_is_closed(self):
        s, N = eval_basis(SAMPLE, 1.0)
        assert s == 6
        assert_allclose(N, [0, 0, 1], atol=1e-15)

    def test_matches_full_recursion_on_sample(self):
        for x in np.linspace(0, 1, 41):
            assert_allclose(full_basis(SAMPLE, x), cox_de_boor_all(SAMPLE.array, 2, x), atol=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(kv=knot_vectors(), x=st.floats(0, 1))
    def test_matches_full_recursion(self, kv, x):
        assert_allclose(full_basis(kv, x), cox_de_boor_all(kv.array, kv.degree, x), atol=1e-13)

    @settings(max_examples=60, deadline=None)
    @given(kv=knot_vectors(), x=st.floats(0, 1))
    def test_partition_of_unity_and_non_negativity(self, kv, x):
        N = full_basis(kv, x)
        assert abs(N.sum() - 1.0) <= 1e-13
        assert N.min() >= -1e-15

    @settings(max_examples=40, deadline=None)
    @given(kv=knot_vectors(), x=st.floats(0, 1))
    def test_local_support(self, kv, x):
        N = full_basis(kv, x)
        U = kv.array
        p = kv.degree
        for i in np.flatnonzero(N != 0.0):
            assert U[i] <= x <= U[i + p + 1]


class TestDerivatives:
    def test_order_above_degree_rejected(self):
        with pytest.raises(ValueError):
            eval_basis_derivs(SAMPLE, 0.3, 3)

    def test_sample_first_derivative(self):
        s, D = eval_basis_derivs(SAMPLE, 0.625, 1)
        assert s == 4
        # N2 = (0.75 - x)^2 / 0.125 and N4 = ((x - 0.5) / 0.25)^2 on [0.5, 0.75)
        assert_allclose(D[1], [-2.0, -2.0, 4.0], atol=1e-13)
        assert abs(D[1].sum()) < 1e-13

    def test_against_finite_differences(self):
        rng = np.random.default_rng(11)
        for p in range(1, 5):
            kv = KnotVector(tuple(random_open_knots(rng, p)), p)
            for x in rng.uniform(0.01, 0.99, 50):
                if np.min(np.abs(kv.breakpoints - x)) < 1e-4:
                    continue
                s = find_span(kv, x)
                D = basis_funs_derivs(kv, s, x, 1)
                fd = central_difference(lambda t: basis_funs_derivs(kv, s, t, 0)[0], x)
                assert_allclose(D[1], fd, rtol=1e-5, atol=1e-5)

    def test_derivatives_sum_to_zero(self):
        kv = uniform_knots(5, 4)
        for x in np.linspace(0, 1, 17):
            _, D = eval_basis_derivs(kv, x, 4)
            assert_allclose(D[1:].sum(axis=1), 0.0, atol=1e-9)

    def test_continuity_across_simple_knots(self):
        kv = uniform_knots(4, 3)
        full = lambda x, s: basis_funs_derivs(kv, s, x, 2)
        for k, x in enumerate([0.25, 0.5, 0.75]):
            left, right = full(x, 3 + k), full(x, 4 + k)
            # pieces of adjacent spans share p functions; compare them up to C^{p-1}
            assert_allclose(left[:, 1:], right[:, :-1], atol=1e-11)


class TestBernstein:
    @pytest.mark.parametrize("p", [1, 2, 3, 4])
    def test_matches_direct_formula(self, p):
        for t in np.linspace(0, 1, 13):
            assert_allclose(bernstein(p, t), bernstein_direct(p, t), atol=1e-15)

    def test_quadratic_midpoint(self):
        assert_allclose(bernstein(2, 0.5), [0.25, 0.5, 0.25])

    def test_outside_reference_interval(self):
        with pytest.raises(DomainError):
            bernstein(2, 1.5)

    @pytest.mark.parametrize("p", [1, 2, 3, 4])
    def test_derivatives_against_finite_differences(self, p):
        for t in np.linspace(0.05, 0.95, 7):
            D = bernstein_derivs(p, t, 1)
            assert_allclose(D[1], central_difference(lambda s: bernstein_direct(p, s), t), atol=1e-7)

    def test_matrix_shape(self):
        M = bernstein_matrix(3, [0.0, 0.5, 1.0], max_order=2)
        assert M.shape == (3, 4, 3)
        assert_allclose(M[0].sum(axis=0), 1.0)


class TestCurvesAndSurfaces:
    def test_greville_net_reproduces_identity(self):
        kv = SAMPLE
        g = greville(kv)
        for x in np.linspace(0, 1, 21):
            assert_allclose(eval_curve(kv, g, x), [x], atol=1e-14)

    def test_curve_net_size_checked(self):
        with pytest.raises(ValueError):
            eval_curve(SAMPLE, np.zeros(3), 0.5)

    def test_identity_surface(self):
        space = TensorSpace((uniform_knots(3, 2), uniform_knots(4, 3)))
        gx, gy = (greville(kv) for kv in space.knots)
        X, Y = np.meshgrid(gx, gy, indexing="xy")
        net = np.column_stack([X.ravel(), Y.ravel()])
        for x, y in [(0.0, 0.0), (0.3, 0.7), (1.0, 0.45), (0.8, 1.0)]:
            assert_allclose(eval_surface(space, net, x, y), [x, y], atol=1e-14)

    def test_surface_matches_double_sum(self):
        rng = np.random.default_rng(5)
        kx, ky = uniform_knots(3, 2), KnotVector((0, 0, 0.4, 1, 1), 1)
        space = TensorSpace((kx, ky))
        net = rng.standard_normal(space.n_functions)
        for x, y in rng.uniform(0, 1, (10, 2)):
            Nx = cox_de_boor_all(kx.array, 2, x)
            Ny = cox_de_boor_all(ky.array, 1, y)
            expected = sum(
                Nx[i] * Ny[j] * net[i + kx.n_functions * j] for i in range(kx.n_functions) for j in range(ky.n_functions)
            )
            assert_allclose(eval_surface(space, net, x, y), [expected], atol=1e-13)


class TestTensorSpace:
    def test_index_round_trip(self):
        space = TensorSpace((uniform_knots(3, 2), uniform_knots(2, 1)))
        assert space.function_shape == (5, 3)
        for f in range(space.n_functions):
            assert space.flat_function(space.multi_function(f)) == f
        assert space.multi_function(6) == (1, 1)

    def test_element_functions_xi_fastest(self):
        space = TensorSpace((uniform_knots(3, 1), uniform_knots(3, 1)))
        assert_array_equal(space.element_functions((1, 2)), [9, 10, 13, 14])
