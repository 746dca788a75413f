"""Gaussian-polynomial test functions with exact calculus.

Each function in the family is a finite sum of terms

    coeff * (Y - center)^monomial * exp(-<shape (Y - center), Y - center>)

with a symmetric PSD shape matrix and a multi-index monomial of total
degree at most 4.  The family is closed under the operations the rest of
the package needs: values, gradients and Hessians are exact, and for
monomial degree at most 2 the Gaussian convolution against the transition
density N(e^{tB} X, 2 t K(t)) has a closed form, which makes the family a
quadrature-free oracle for every semigroup routine built on top of it.

Shape matrices are allowed to vanish so that linear and constant
polynomial limits can be expressed; ``is_schwartz`` reports whether every
term decays (all shapes positive definite).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .operator_core import (
    DomainError,
    GramianProfile,
    OperatorSpec,
    gramian_profile,
    gramians,
)

__all__ = [
    "TestFunction",
    "CompactBump",
    "ModulatedBump",
    "UnsupportedDegreeError",
    "gaussian",
    "linear",
    "constant",
    "generator_apply",
    "exact_semigroup_oracle",
    "exact_semigroup_profile",
]

MAX_EVAL_DEGREE = 4
MAX_ORACLE_DEGREE = 2


class UnsupportedDegreeError(ValueError):
    """Monomial degree exceeds what the requested operation supports."""


def _as_vector(x, dim=None):
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValueError("expected a vector, got shape %s" % (v.shape,))
    if dim is not None and v.shape[0] != dim:
        raise ValueError("dimension mismatch: %d != %d" % (v.shape[0], dim))
    return v


@dataclass(frozen=True)
class GaussianTerm:
    """One summand coeff * w^monomial * exp(-<S w, w>), w = Y - center."""

    coeff: float
    center: np.ndarray
    shape: np.ndarray
    monomial: tuple

    def __post_init__(self):
        center = _as_vector(self.center)
        n = center.shape[0]
        shape = np.asarray(self.shape, dtype=float)
        if shape.shape != (n, n):
            raise ValueError("shape matrix must be %dx%d" % (n, n))
        if not np.all(np.isfinite(shape)) or not np.all(np.isfinite(center)):
            raise ValueError("term data must be finite")
        scale = max(np.linalg.norm(shape, 2), 1.0)
        if np.linalg.norm(shape - shape.T, 2) > 1e-12 * scale:
            raise ValueError("shape matrix must be symmetric")
        shape = 0.5 * (shape + shape.T)
        if np.linalg.norm(shape, 2) > 0:
            lam_min = float(np.linalg.eigvalsh(shape)[0])
            if lam_min < -1e-12 * scale:
                raise ValueError("shape matrix must be positive semidefinite")
        monomial = tuple(int(k) for k in self.monomial)
        if len(monomial) != n or any(k < 0 for k in monomial):
            raise ValueError("monomial must be %d nonnegative integers" % n)
        if sum(monomial) > MAX_EVAL_DEGREE:
            raise UnsupportedDegreeError(
                "monomial degree %d exceeds cap %d" % (sum(monomial), MAX_EVAL_DEGREE)
            )
        object.__setattr__(self, "coeff", float(self.coeff))
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "monomial", monomial)
        self.center.setflags(write=False)
        self.shape.setflags(write=False)

    @property
    def degree(self):
        return sum(self.monomial)


@dataclass(frozen=True)
class TestFunction:
    """Finite sum of Gaussian-polynomial terms on R^N.

    Parameters
    ----------
    terms : sequence of GaussianTerm
        At least one term; all terms must share the same dimension.

    Notes
    -----
    Values, gradients and Hessians are exact and vectorised over a
    leading batch axis: ``value(Y)`` accepts ``Y`` of shape ``(N,)`` or
    ``(..., N)``.
    """

    terms: tuple
    dim: int = field(init=False)

    __test__ = False  # not a pytest class despite the name

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("TestFunction needs at least one term")
        if not all(isinstance(term, GaussianTerm) for term in terms):
            raise TypeError("terms must be GaussianTerm instances")
        n = terms[0].center.shape[0]
        if any(term.center.shape[0] != n for term in terms):
            raise ValueError("all terms must share one dimension")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "dim", n)

    @property
    def degree(self):
        return max(term.degree for term in self.terms)

    @property
    def is_schwartz(self):
        """True when every term has a positive definite shape matrix."""
        for term in self.terms:
            if np.linalg.norm(term.shape, 2) == 0:
                return False
            if float(np.linalg.eigvalsh(term.shape)[0]) <= 0:
                return False
        return True

    def _prepare(self, Y):
        Y = np.asarray(Y, dtype=float)
        if Y.shape[-1:] != (self.dim,):
            raise ValueError("points must have trailing dimension %d" % self.dim)
        return Y

    def value(self, Y):
        """Evaluate at ``Y`` with shape ``(..., N)``; returns ``(...,)``."""
        Y = self._prepare(Y)
        out = np.zeros(Y.shape[:-1])
        for term in self.terms:
            w = Y - term.center
            mono = _monomial(w, term.monomial)
            expo = np.exp(-_quad_form(term.shape, w))
            out = out + term.coeff * mono * expo
        return out if out.ndim else float(out)

    def gradient(self, Y):
        """Exact gradient; shape ``(..., N)`` for input ``(..., N)``."""
        Y = self._prepare(Y)
        out = np.zeros(Y.shape)
        for term in self.terms:
            w = Y - term.center
            expo = np.exp(-_quad_form(term.shape, w))
            u = -2.0 * (w @ term.shape.T)
            poly = _monomial(w, term.monomial)
            dpoly = _monomial_grad(w, term.monomial)
            out = out + term.coeff * (dpoly + poly[..., None] * u) * expo[..., None]
        return out

    def hessian(self, Y):
        """Exact Hessian; shape ``(..., N, N)`` for input ``(..., N)``."""
        Y = self._prepare(Y)
        n = self.dim
        out = np.zeros(Y.shape + (n,))
        for term in self.terms:
            w = Y - term.center
            expo = np.exp(-_quad_form(term.shape, w))
            u = -2.0 * (w @ term.shape.T)
            poly = _monomial(w, term.monomial)
            dpoly = _monomial_grad(w, term.monomial)
            hpoly = _monomial_hess(w, term.monomial)
            uu = u[..., :, None] * u[..., None, :]
            cross = dpoly[..., :, None] * u[..., None, :]
            cross = cross + u[..., :, None] * dpoly[..., None, :]
            core = hpoly + cross + poly[..., None, None] * (uu - 2.0 * term.shape)
            out = out + term.coeff * core * expo[..., None, None]
        return out

    def __mul__(self, scalar):
        c = float(scalar)
        return TestFunction(
            tuple(
                GaussianTerm(c * t.coeff, t.center, t.shape, t.monomial)
                for t in self.terms
            )
        )

    __rmul__ = __mul__

    def __add__(self, other):
        if not isinstance(other, TestFunction):
            return NotImplemented
        if other.dim != self.dim:
            raise ValueError("dimension mismatch in sum")
        return TestFunction(self.terms + other.terms)


def _monomial(w, monomial):
    # numpy's w**0 gives 1.0 even at w = 0, which is the convention we need
    out = np.ones(w.shape[:-1])
    for i, k in enumerate(monomial):
        if k:
            out = out * w[..., i] ** k
    return out


def _partial_product(w, monomial, skip):
    out = np.ones(w.shape[:-1])
    for i, k in enumerate(monomial):
        if k and i not in skip:
            out = out * w[..., i] ** k
    return out


def _monomial_grad(w, monomial):
    n = len(monomial)
    out = np.zeros(w.shape[:-1] + (n,))
    for j, k in enumerate(monomial):
        if k == 0:
            continue
        rest = _partial_product(w, monomial, {j})
        out[..., j] = k * w[..., j] ** (k - 1) * rest
    return out


def _monomial_hess(w, monomial):
    n = len(monomial)
    out = np.zeros(w.shape[:-1] + (n, n))
    for i, ki in enumerate(monomial):
        if ki >= 2:
            rest = _partial_product(w, monomial, {i})
            out[..., i, i] = ki * (ki - 1) * w[..., i] ** (ki - 2) * rest
        if ki == 0:
            continue
        for j, kj in enumerate(monomial):
            if j <= i or kj == 0:
                continue
            rest = _partial_product(w, monomial, {i, j})
            val = ki * kj * w[..., i] ** (ki - 1) * w[..., j] ** (kj - 1) * rest
            out[..., i, j] = val
            out[..., j, i] = val
    return out


def _quad_form(S, w):
    return np.einsum("...i,ij,...j->...", w, S, w)


def gaussian(center, shape, coeff=1.0, monomial=None):
    """Single-term function coeff * w^monomial * exp(-<S w, w>)."""
    center = _as_vector(center)
    n = center.shape[0]
    if monomial is None:
        monomial = (0,) * n
    return TestFunction((GaussianTerm(coeff, center, shape, monomial),))


def linear(a):
    """The linear functional Y -> <a, Y> as a polynomial limit member."""
    a = _as_vector(a)
    n = a.shape[0]
    zero = np.zeros((n, n))
    terms = []
    for i in range(n):
        if a[i] != 0.0:
            mono = tuple(1 if j == i else 0 for j in range(n))
            terms.append(GaussianTerm(a[i], np.zeros(n), zero, mono))
    if not terms:
        terms.append(GaussianTerm(0.0, np.zeros(n), zero, (0,) * n))
    return TestFunction(tuple(terms))


def constant(c, dim):
    """The constant function c as a polynomial limit member."""
    zero = np.zeros((dim, dim))
    return TestFunction((GaussianTerm(c, np.zeros(dim), zero, (0,) * dim),))


def generator_apply(spec: OperatorSpec, f: TestFunction, Y):
    """Evaluate A f = tr(Q Hess f) + <B Y, grad f> pointwise.

    Exact for every member of the family (degree cap 4 applies to f, the
    result is only ever needed as values, never as a family member).
    """
    if f.dim != spec.dim:
        raise ValueError("dimension mismatch between spec and f")
    Y = np.asarray(Y, dtype=float)
    hess = f.hessian(Y)
    grad = f.gradient(Y)
    diffusion = np.einsum("ij,...ji->...", spec.Q, hess)
    drift = np.einsum("...i,...i->...", Y @ spec.B.T, grad)
    out = diffusion + drift
    return out if out.ndim else float(out)


def _oracle_batch(exp_tB, Sigma, f, X):
    """Closed Gaussian convolution at one t for a batch of points.

    Sigma is the transition covariance 2 t K(t); the means e^{tB} X share
    every per-term factorisation, so X has shape (M, N) and the result (M,).
    """
    mu = X @ exp_tB.T
    total = np.zeros(X.shape[0])
    n = f.dim
    eye = np.eye(n)
    for term in f.terms:
        if term.degree > MAX_ORACLE_DEGREE:
            raise UnsupportedDegreeError(
                "closed-form convolution supports monomial degree <= %d"
                % MAX_ORACLE_DEGREE
            )
        m = mu - term.center
        # completion of squares written without Sigma^{-1}: with
        # G = I + 2 Sigma S the convolution is
        #   det(G)^{-1/2} exp(-<S G^{-1} m, m>) E[W^kappa],
        #   W ~ N(G^{-1} m, G^{-1} Sigma).
        # Sigma degenerates like t near t = 0, so the naive A = Sigma^{-1}
        # + 2S route cancels catastrophically while this one stays exact.
        G = eye + 2.0 * Sigma @ term.shape
        sign, logdet = np.linalg.slogdet(G)
        if sign <= 0:
            raise DomainError("convolution covariance lost positivity")
        nu = np.linalg.solve(G, m.T).T
        cov = np.linalg.solve(G, Sigma)
        cov = 0.5 * (cov + cov.T)
        # <S G^{-1} m, m> >= 0, so the exponential never overflows
        expo = -np.einsum("mi,mi->m", m @ term.shape, nu)
        amp = np.exp(expo - 0.5 * logdet)
        total += term.coeff * amp * _gaussian_moment(term.monomial, nu, cov, n)
    return total


def _gaussian_moment(monomial, nu, cov, n):
    """E[W^monomial] for rows of nu as means of N(nu, cov), degree <= 2."""
    deg = sum(monomial)
    if deg == 0:
        return 1.0
    idx = [i for i in range(n) for _ in range(monomial[i])]
    if deg == 1:
        return nu[:, idx[0]]
    i, j = idx
    return nu[:, i] * nu[:, j] + cov[i, j]


def exact_semigroup_oracle(spec: OperatorSpec, f: TestFunction, t, X):
    """Exact P_t f (X) by analytic Gaussian convolution.

    Parameters
    ----------
    spec : OperatorSpec
        Hypoelliptic operator data.
    f : TestFunction
        Monomial degree at most 2 in every term.
    t : positive float
    X : array of shape (N,) or (..., N)
        Batched evaluation points share one Gramian factorisation.

    Returns
    -------
    float or ndarray
        P_t f evaluated at X, the integral of f against the Gaussian
        transition density with mean e^{tB} X and covariance 2 t K(t).
    """
    if f.dim != spec.dim:
        raise ValueError("dimension mismatch between spec and f")
    g = gramians(spec, t)
    Sigma = 2.0 * t * g.K_t
    X = np.asarray(X, dtype=float)
    if X.shape == (spec.dim,):
        return float(_oracle_batch(g.exp_tB, Sigma, f, X[None, :])[0])
    if X.shape[-1:] != (spec.dim,):
        raise ValueError("points must have trailing dimension %d" % spec.dim)
    flat = X.reshape(-1, spec.dim)
    return _oracle_batch(g.exp_tB, Sigma, f, flat).reshape(X.shape[:-1])


def exact_semigroup_profile(spec: OperatorSpec, f: TestFunction, ts, X):
    """Exact P_t f (X) along a whole time grid with one block exponential.

    Same closed form as :func:`exact_semigroup_oracle`, vectorised over
    ``ts`` for the time-integral transforms that sample hundreds of
    semigroup values at a fixed point.
    """
    if f.dim != spec.dim:
        raise ValueError("dimension mismatch between spec and f")
    X = _as_vector(X, spec.dim)
    prof: GramianProfile = gramian_profile(spec, ts)
    n = spec.dim
    # tK_t already carries the factor t; the covariance is 2 tK(t)
    Sigma = 2.0 * prof.tK_t
    mu = np.einsum("tij,j->ti", prof.exp_tB, X)
    eye = np.eye(n)
    total = np.zeros(prof.ts.shape[0])
    for term in f.terms:
        if term.degree > MAX_ORACLE_DEGREE:
            raise UnsupportedDegreeError(
                "closed-form convolution supports monomial degree <= %d"
                % MAX_ORACLE_DEGREE
            )
        m = mu - term.center
        G = eye + 2.0 * Sigma @ term.shape
        sign, logdet = np.linalg.slogdet(G)
        if np.any(sign <= 0):
            raise DomainError("convolution covariance lost positivity")
        nu = np.linalg.solve(G, m[..., None])[..., 0]
        cov = np.linalg.solve(G, Sigma)
        cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
        expo = -np.einsum("ti,ti->t", m @ term.shape, nu)
        amp = np.exp(expo - 0.5 * logdet)
        deg = term.degree
        if deg == 0:
            moment = 1.0
        else:
            idx = [i for i in range(n) for _ in range(term.monomial[i])]
            if deg == 1:
                moment = nu[:, idx[0]]
            else:
                i, j = idx
                moment = nu[:, i] * nu[:, j] + cov[:, i, j]
        total += term.coeff * amp * moment
    return total


@dataclass(frozen=True)
class CompactBump:
    """Smooth compactly supported cutoff, identically 1 inside.

    Radial quintic-smoothstep profile: value 1 for |Y - center| <=
    inner_radius, 0 beyond outer_radius, with a C^2 polynomial
    transition in between.
    """

    center: np.ndarray
    inner_radius: float
    outer_radius: float

    def __post_init__(self):
        center = _as_vector(self.center)
        r_in = float(self.inner_radius)
        r_out = float(self.outer_radius)
        if not (0 < r_in < r_out):
            raise ValueError("need 0 < inner_radius < outer_radius")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "inner_radius", r_in)
        object.__setattr__(self, "outer_radius", r_out)
        self.center.setflags(write=False)

    @property
    def dim(self):
        return self.center.shape[0]

    def _s(self, Y):
        Y = np.asarray(Y, dtype=float)
        r = np.linalg.norm(Y - self.center, axis=-1)
        width = self.outer_radius - self.inner_radius
        return np.clip((r - self.inner_radius) / width, 0.0, 1.0), r

    def value(self, Y):
        s, _ = self._s(Y)
        out = 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)
        return out if out.ndim else float(out)

    def gradient(self, Y):
        Y = np.asarray(Y, dtype=float)
        s, r = self._s(Y)
        width = self.outer_radius - self.inner_radius
        ds = -30.0 * s**2 * (1.0 - s) ** 2 / width
        # radial direction; the factor vanishes wherever r could be 0
        safe_r = np.where(r > 0, r, 1.0)
        out = ds[..., None] * (Y - self.center) / safe_r[..., None]
        return out


@dataclass(frozen=True)
class ModulatedBump:
    """Product bump * f with the exact product-rule gradient.

    Value and gradient only; used where compact support is required of
    an otherwise Gaussian-polynomial profile.
    """

    bump: CompactBump
    f: TestFunction

    def __post_init__(self):
        if self.bump.dim != self.f.dim:
            raise ValueError("bump and f dimensions differ")

    @property
    def dim(self):
        return self.f.dim

    def value(self, Y):
        return self.bump.value(Y) * self.f.value(Y)

    def gradient(self, Y):
        bv = np.asarray(self.bump.value(Y))
        fv = np.asarray(self.f.value(Y))
        return (
            bv[..., None] * self.f.gradient(Y)
            + fv[..., None] * self.bump.gradient(Y)
        )
