"""Tests for semigroup application, Poisson subordination, kernel norms."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

from hypok.operator_core import (
    DomainError,
    KernelConstants,
    gramians,
    heat,
    kolmogorov,
    ornstein_uhlenbeck,
)
from hypok.semigroup import (
    DEFAULT_QUAD,
    QuadratureSpec,
    apply_poisson,
    apply_semigroup,
    apply_semigroup_report,
    kernel_lr_norm,
    lp_norm,
    lr_norm_constant,
    semigroup_gradient,
    sup_norm,
    ultracontractivity_check,
    ultracontractivity_constant,
)
from hypok.testfuncs import (
    CompactBump,
    GaussianTerm,
    ModulatedBump,
    TestFunction,
    UnsupportedDegreeError,
    constant,
    exact_semigroup_oracle,
    gaussian,
    linear,
)

PRESETS = lambda: (heat(1), heat(2), kolmogorov(1), ornstein_uhlenbeck(2))


def random_schwartz(rng, dim, n_terms=2, max_degree=2, widest=2.0):
    """Gaussian-polynomial mixture with moderate shape spectrum.

    Eigenvalues are kept in [0.3, widest] so a 40-point tensor rule
    resolves the integrand; the closed-form oracle has no such limit.
    """
    terms = []
    for _ in range(n_terms):
        A = rng.normal(size=(dim, dim))
        Qmat, _ = np.linalg.qr(A)
        lam = rng.uniform(0.3, widest, size=dim)
        shape = (Qmat * lam) @ Qmat.T
        center = rng.uniform(-1.5, 1.5, size=dim)
        coeff = rng.choice([-1.0, 1.0]) * rng.uniform(0.3, 1.0)
        monomial = [0] * dim
        for _ in range(rng.integers(0, max_degree + 1)):
            monomial[rng.integers(0, dim)] += 1
        terms.append(
            TestFunction((GaussianTerm(coeff, center, shape, tuple(monomial)),))
        )
    out = terms[0]
    for extra in terms[1:]:
        out = out + extra
    return out


def nested_semigroup(spec, f, s, t, X, order=80):
    """P_s applied by fresh Gauss-Hermite to the exact P_t f profile."""
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    grids = np.meshgrid(*([nodes] * spec.dim), indexing="ij")
    u = np.stack([g.ravel() for g in grids], axis=-1)
    w = np.ones(u.shape[0])
    for axis in range(spec.dim):
        w = w * weights[np.searchsorted(nodes, u[:, axis])]
    g = gramians(spec, s)
    vals, vecs = np.linalg.eigh(g.K_t)
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    pts = g.exp_tB @ np.asarray(X, float) + math.sqrt(4.0 * s) * u @ root.T
    inner = exact_semigroup_oracle(spec, f, t, pts)
    return math.pi ** (-spec.dim / 2.0) * float(w @ inner)


def kernel_vals(spec, X, Ys, t):
    """p(X, Y_i, t) through the drift-free-variable closed form."""
    g = gramians(spec, t)
    xi = np.asarray(X, float) - Ys @ g.exp_minus_tB.T
    q = np.einsum("...i,ij,...j->...", xi, g.inv_C_t, xi)
    log_p = (
        -0.5 * spec.dim * math.log(4.0 * math.pi)
        - t * spec.trace_B
        - 0.5 * g.logdet_C
        - 0.25 * q
    )
    return np.exp(log_p)


def bump_reference(spec, bump, t, X, order=220):
    """P_t bump(X) by Gauss-Legendre against the kernel over the support."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    r = bump.outer_radius
    xs = [bump.center[i] + r * nodes for i in range(spec.dim)]
    grids = np.meshgrid(*xs, indexing="ij")
    Ys = np.stack([g.ravel() for g in grids], axis=-1)
    w = np.ones(Ys.shape[0])
    for axis in range(spec.dim):
        w = w * r * weights[np.searchsorted(xs[axis], Ys[:, axis])]
    return float(w @ (kernel_vals(spec, X, Ys, t) * bump.value(Ys)))


class TestApplySemigroup:
    def test_matches_exact_oracle(self):
        rng = np.random.default_rng(11)
        for spec in PRESETS():
            for t in (0.05, 0.2, 0.5):
                f = random_schwartz(rng, spec.dim, widest=1.2)
                X = rng.uniform(-2.0, 2.0, size=spec.dim)
                got = apply_semigroup(spec, f, t, X)
                want = exact_semigroup_oracle(spec, f, t, X)
                assert abs(got - want) <= 1e-9 * (1.0 + abs(want))

    def test_matches_exact_oracle_sharp_terms(self):
        # narrow terms at long times need a denser rule: the whitened
        # integrand oscillates on the scale sigma / sqrt(4 t lambda_max(K))
        rng = np.random.default_rng(13)
        quad = QuadratureSpec(gh_order=200)
        for spec in PRESETS():
            f = random_schwartz(rng, spec.dim, widest=2.0)
            X = rng.uniform(-2.0, 2.0, size=spec.dim)
            got = apply_semigroup(spec, f, 2.0, X, quad=quad)
            want = exact_semigroup_oracle(spec, f, 2.0, X)
            assert abs(got - want) <= 1e-9 * (1.0 + abs(want))

    def test_constant_preserved(self):
        for spec in PRESETS():
            X = np.linspace(-1.0, 1.0, spec.dim)
            assert apply_semigroup(spec, constant(1.0, spec.dim), 0.7, X) == pytest.approx(
                1.0, abs=1e-12
            )

    def test_huge_bump_acts_as_one(self):
        # f = 1 proxy: every Monte Carlo draw lands on the plateau
        for spec in (heat(2), kolmogorov(1)):
            bump = CompactBump(np.zeros(spec.dim), 60.0, 120.0)
            report = apply_semigroup_report(spec, bump, 0.5, np.zeros(spec.dim))
            assert report.method == "monte-carlo"
            assert abs(report.value - 1.0) <= 1e-10

    def test_semigroup_law(self):
        rng = np.random.default_rng(5)
        quad = QuadratureSpec(gh_order=128)
        for spec in PRESETS():
            f = random_schwartz(rng, spec.dim, widest=1.5)
            X = rng.uniform(-1.0, 1.0, size=spec.dim)
            for s, t in ((0.3, 0.7), (1.0, 1.0)):
                whole = apply_semigroup(spec, f, s + t, X, quad=quad)
                nested = nested_semigroup(spec, f, s, t, X)
                assert abs(nested - whole) <= 1e-8 * (1.0 + abs(whole))

    def test_gh_and_mc_agree_on_modulated_profile(self):
        spec = heat(2)
        f = gaussian(np.zeros(2), 0.5 * np.eye(2))
        wide = ModulatedBump(CompactBump(np.zeros(2), 80.0, 160.0), f)
        t, X = 0.6, np.array([0.4, -0.2])
        report = apply_semigroup_report(spec, wide, t, X)
        exact = exact_semigroup_oracle(spec, f, t, X)
        assert report.stderr > 0
        assert abs(report.value - exact) <= 5.0 * report.stderr

    def test_rejects_bad_time_and_dim(self):
        spec = heat(2)
        f = gaussian(np.zeros(2), np.eye(2))
        with pytest.raises(DomainError):
            apply_semigroup(spec, f, 0.0, np.zeros(2))
        with pytest.raises(DomainError):
            apply_semigroup(spec, f, -1.0, np.zeros(2))
        with pytest.raises(ValueError):
            apply_semigroup(spec, gaussian(np.zeros(3), np.eye(3)), 1.0, np.zeros(2))

    def test_tensor_cap(self):
        spec = heat(5)
        f = gaussian(np.zeros(5), np.eye(5))
        with pytest.raises(UnsupportedDegreeError):
            apply_semigroup(spec, f, 1.0, np.zeros(5))

    def test_rejects_plain_callable(self):
        with pytest.raises(TypeError):
            apply_semigroup(heat(1), lambda Y: np.ones(Y.shape[0]), 1.0, np.zeros(1))


class TestMonteCarloFallback:
    def test_bump_matches_kernel_quadrature(self):
        for spec, X in ((heat(1), np.array([0.3])), (kolmogorov(1), np.array([0.2, -0.4]))):
            bump = CompactBump(np.full(spec.dim, 0.25), 1.0, 2.5)
            report = apply_semigroup_report(spec, bump, 0.6, X)
            ref = bump_reference(spec, bump, 0.6, X)
            assert report.method == "monte-carlo"
            assert 0 < report.stderr < 0.02
            assert abs(report.value - ref) <= 5.0 * report.stderr

    def test_deterministic_given_seed(self):
        spec = kolmogorov(1)
        bump = CompactBump(np.zeros(2), 1.0, 2.0)
        a = apply_semigroup_report(spec, bump, 0.4, np.zeros(2))
        b = apply_semigroup_report(spec, bump, 0.4, np.zeros(2))
        assert a.value == b.value and a.stderr == b.stderr

    def test_seed_changes_draws(self):
        spec = heat(2)
        bump = CompactBump(np.zeros(2), 1.0, 2.0)
        a = apply_semigroup_report(spec, bump, 0.4, np.zeros(2))
        other = QuadratureSpec(rng_seed=7)
        b = apply_semigroup_report(spec, bump, 0.4, np.zeros(2), quad=other)
        assert a.value != b.value


class TestSemigroupGradient:
    def test_linear_profile_exact(self):
        for spec in PRESETS():
            a = np.arange(1.0, spec.dim + 1.0)
            f = linear(a)
            got = semigroup_gradient(spec, f, 0.9, np.zeros(spec.dim))
            want = gramians(spec, 0.9).exp_tB.T @ a
            assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_matches_finite_difference(self):
        rng = np.random.default_rng(3)
        for spec in (heat(2), kolmogorov(1)):
            f = random_schwartz(rng, spec.dim)
            X = rng.uniform(-1.0, 1.0, size=spec.dim)
            t = 0.7
            grad = semigroup_gradient(spec, f, t, X)
            h = 1e-5
            for i in range(spec.dim):
                e = np.zeros(spec.dim)
                e[i] = h
                fd = (
                    apply_semigroup(spec, f, t, X + e)
                    - apply_semigroup(spec, f, t, X - e)
                ) / (2.0 * h)
                assert abs(grad[i] - fd) <= 1e-6 * (1.0 + abs(fd))


class TestApplyPoisson:
    def test_preserves_constant(self):
        for spec in PRESETS():
            one = constant(1.0, spec.dim)
            for z in (0.5, 2.0):
                assert apply_poisson(spec, one, z, np.zeros(spec.dim)) == pytest.approx(
                    1.0, abs=1e-8
                )

    def test_heat_matches_brute_subordination(self):
        spec = heat(1)
        f = gaussian(np.zeros(1), np.eye(1))
        X, z = np.array([0.3]), 1.2

        def profile(t):
            return math.exp(-X[0] ** 2 / (1.0 + 4.0 * t)) / math.sqrt(1.0 + 4.0 * t)

        def integrand(t):
            return (
                z
                / math.sqrt(4.0 * math.pi)
                * t ** (-1.5)
                * math.exp(-(z**2) / (4.0 * t))
                * profile(t)
            )

        brute = 0.0
        for lo, hi in ((0.0, z**2), (z**2, 50.0), (50.0, np.inf)):
            part, err = integrate.quad(
                integrand, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=400
            )
            brute += part
        got = apply_poisson(spec, f, z, X)
        assert abs(got - brute) <= 1e-7 * abs(brute)

    def test_short_range_identity(self):
        rng = np.random.default_rng(9)
        for spec in PRESETS():
            f = random_schwartz(rng, spec.dim)
            X = rng.uniform(-1.0, 1.0, size=spec.dim)
            fx = f.value(X)
            assert abs(apply_poisson(spec, f, 1e-4, X) - fx) <= 1e-3 * (1.0 + abs(fx))

    def test_ou_long_range_is_finite(self):
        spec = ornstein_uhlenbeck(2)
        f = gaussian(np.zeros(2), np.eye(2))
        val = apply_poisson(spec, f, 2.5, np.array([0.5, -0.5]))
        assert math.isfinite(val) and val > 0

    def test_rejects_bad_z(self):
        with pytest.raises(DomainError):
            apply_poisson(heat(1), constant(1.0, 1), 0.0, np.zeros(1))
        with pytest.raises(DomainError):
            apply_poisson(heat(1), constant(1.0, 1), -2.0, np.zeros(1))


class TestKernelLrNorm:
    def test_r_one_is_mass(self):
        # integral of p over the first slot is e^{-t tr B} for every spec
        for spec in PRESETS():
            for t in (0.2, 1.0, 5.0):
                want = math.exp(-t * spec.trace_B)
                got = kernel_lr_norm(spec, np.zeros(spec.dim), t, 1.0)
                assert got == pytest.approx(want, rel=1e-12)

    def test_heat_r_two(self):
        for dim in (1, 2):
            spec = heat(dim)
            for t in (0.3, 1.7):
                want = (8.0 * math.pi * t) ** (-dim / 4.0)
                got = kernel_lr_norm(spec, np.zeros(dim), t, 2.0)
                assert got == pytest.approx(want, rel=1e-12)

    def test_scaling_law_constant_in_t(self):
        for spec in PRESETS():
            const = KernelConstants.for_dim(spec.dim)
            for r in (1.5, 2.0, 3.0):
                seen = []
                for t in (0.2, 1.0, 5.0):
                    g = gramians(spec, t)
                    vol = const.omega_N * math.exp(0.5 * g.logdet_tK)
                    value = kernel_lr_norm(spec, np.zeros(spec.dim), t, r)
                    seen.append(
                        value * vol ** (1.0 - 1.0 / r) * math.exp(t * spec.trace_B / r)
                    )
                assert max(seen) - min(seen) <= 1e-8 * max(seen)

    def test_calibration_matches_gaussian_integral(self):
        # c_{N,r} has the closed form [(4 pi)^{-N/2} omega_N]^{1-1/r} r^{-N/(2r)}
        for dim in (1, 2, 3):
            omega = KernelConstants.for_dim(dim).omega_N
            for r in (1.5, 2.0, 3.0):
                want = ((4.0 * math.pi) ** (-dim / 2.0) * omega) ** (
                    1.0 - 1.0 / r
                ) * r ** (-dim / (2.0 * r))
                assert lr_norm_constant(dim, r) == pytest.approx(want, rel=1e-10)

    def test_independent_of_y(self):
        spec = kolmogorov(1)
        a = kernel_lr_norm(spec, np.zeros(2), 0.8, 2.5)
        b = kernel_lr_norm(spec, np.array([3.0, -1.0]), 0.8, 2.5)
        assert a == pytest.approx(b, rel=1e-14)

    def test_rejects_r_below_one(self):
        with pytest.raises(DomainError):
            kernel_lr_norm(heat(1), np.zeros(1), 1.0, 0.5)


class TestUltracontractivity:
    def test_p_equals_q_contracts_on_all_presets(self):
        for spec in PRESETS():
            f = gaussian(np.full(spec.dim, 0.4), np.eye(spec.dim) * 0.7)
            for p in (1.0, 2.0):
                for t in (0.3, 2.0):
                    result = ultracontractivity_check(spec, f, p, p, t)
                    assert result.passed
                    assert result.constant == 1.0

    def test_smoothing_passes(self):
        rng = np.random.default_rng(21)
        for spec in PRESETS():
            f = gaussian(
                rng.uniform(-0.5, 0.5, size=spec.dim), np.eye(spec.dim) * 1.1
            ) + gaussian(rng.uniform(-0.5, 0.5, size=spec.dim), np.eye(spec.dim) * 0.4)
            for p, q in ((1.0, 2.0), (2.0, 4.0), (1.0, np.inf)):
                result = ultracontractivity_check(spec, f, p, q, 0.7)
                assert result.passed, (spec.name, p, q)

    def test_heat_sup_bound_near_equality(self):
        # p=1, q=inf: sup P_t f <= (4 pi t)^{-N/2} ||f||_1, saturated by
        # a narrow source; the analytic L^1 mass avoids quadrature slack
        spec = heat(2)
        width = 0.05
        f = gaussian(np.zeros(2), np.eye(2) / (2.0 * width**2))
        t = 0.8
        mass = 2.0 * math.pi * width**2
        bound = (4.0 * math.pi * t) ** -1.0 * mass
        top = exact_semigroup_oracle(spec, f, t, np.zeros(2))
        assert top <= bound * (1.0 + 1e-9)
        assert top >= 0.99 * bound
        result = ultracontractivity_check(spec, f, 1.0, np.inf, t)
        assert result.passed

    def test_trace_flag(self):
        f = gaussian(np.zeros(2), np.eye(2))
        assert ultracontractivity_check(ornstein_uhlenbeck(2), f, 1.0, 2.0, 0.5).trace_b_negative
        assert not ultracontractivity_check(heat(2), f, 1.0, 2.0, 0.5).trace_b_negative

    def test_rejects_p_above_q(self):
        with pytest.raises(DomainError):
            ultracontractivity_check(heat(1), gaussian(np.zeros(1), np.eye(1)), 2.0, 1.0, 1.0)

    def test_constant_monotone_in_smoothing_gap(self):
        # more smoothing (larger q at fixed p) costs a smaller constant
        c_12 = ultracontractivity_constant(1, 1.0, 2.0)
        c_14 = ultracontractivity_constant(1, 1.0, 4.0)
        assert 0 < c_14 < c_12 < 1.0


class TestNormHelpers:
    def test_lp_norm_gaussian(self):
        f = gaussian(np.zeros(2), np.eye(2))
        # integral of e^{-2|y|^2} over the plane is pi/2
        assert lp_norm(f.value, 2.0, 2, 8.0) ** 2 == pytest.approx(
            math.pi / 2.0, rel=1e-12
        )

    def test_sup_norm_hits_center(self):
        f = gaussian(np.array([0.25, -0.5]), np.eye(2))
        assert sup_norm(f.value, 2, 4.0) == pytest.approx(1.0, abs=2e-4)

    def test_lp_norm_rejects_bad_p(self):
        with pytest.raises(DomainError):
            lp_norm(lambda pts: np.ones(pts.shape[0]), 0.5, 1, 1.0)


class TestInvariants:
    def test_positivity(self):
        rng = np.random.default_rng(17)
        for spec in PRESETS():
            f = gaussian(
                rng.uniform(-1, 1, size=spec.dim), np.eye(spec.dim) * 0.9
            ) * 0.5 + gaussian(rng.uniform(-1, 1, size=spec.dim), np.eye(spec.dim) * 1.8)
            for t in (0.05, 1.0, 4.0):
                X = rng.uniform(-2, 2, size=spec.dim)
                assert apply_semigroup(spec, f, t, X) >= 0.0

    def test_sup_contraction(self):
        rng = np.random.default_rng(29)
        for spec in PRESETS():
            f = random_schwartz(rng, spec.dim, max_degree=0)
            cloud = rng.uniform(-4, 4, size=(20000, spec.dim))
            sup_f = float(np.max(np.abs(f.value(cloud))))
            for t in (0.2, 1.5):
                X = rng.uniform(-2, 2, size=(40, spec.dim))
                vals = exact_semigroup_oracle(spec, f, t, X)
                assert float(np.max(np.abs(vals))) <= sup_f + 1e-10

    def test_strong_continuity(self):
        rng = np.random.default_rng(31)
        for spec in PRESETS():
            f = random_schwartz(rng, spec.dim)
            X = rng.uniform(-1.5, 1.5, size=spec.dim)
            gap = abs(apply_semigroup(spec, f, 1e-6, X) - f.value(X))
            assert gap <= 1e-4 * (1.0 + float(np.linalg.norm(f.gradient(X))))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_positive_mixture_stays_in_range(self, seed):
        rng = np.random.default_rng(seed)
        spec = (heat(2), kolmogorov(1), ornstein_uhlenbeck(2))[seed % 3]
        coeffs = rng.uniform(0.1, 1.0, size=2)
        f = gaussian(
            rng.uniform(-1, 1, size=spec.dim), np.eye(spec.dim) * rng.uniform(0.4, 1.5)
        ) * coeffs[0] + gaussian(
            rng.uniform(-1, 1, size=spec.dim), np.eye(spec.dim) * rng.uniform(0.4, 1.5)
        ) * coeffs[1]
        t = float(rng.uniform(0.05, 3.0))
        X = rng.uniform(-2, 2, size=spec.dim)
        value = apply_semigroup(spec, f, t, X)
        assert -1e-12 <= value <= float(np.sum(coeffs)) + 1e-12
