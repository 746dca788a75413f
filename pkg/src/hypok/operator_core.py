"""Matrix calculus for degenerate Ornstein-Uhlenbeck-type generators.

The operator is ``A u = tr(Q D^2 u) + <B X, grad u>`` with ``Q`` symmetric
positive semidefinite and ``B`` an arbitrary real drift. Everything downstream
(kernels, semigroups, fractional powers, Besov seminorms) is a function of two
Gramians of the pair ``(Q, B)``::

    K(t) = (1/t) int_0^t e^{sB} Q e^{sB'} ds
    C(t) =       int_0^t e^{-sB} Q e^{-sB'} ds

linked by ``t K(t) = e^{tB} C(t) e^{tB'}`` and
``det(t K(t)) = e^{2 t tr B} det C(t)``. Both are obtained from a single block
matrix exponential (no numerical time quadrature), so every consumer inherits
expm-level accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm


# Scale-invariant tolerances for symmetry / positive-definiteness decisions.
TOL_SYM_REL = 1e-12
TOL_PD_REL = 1e-10


class DomainError(ValueError):
    """Raised when an argument leaves an operation's mathematical domain."""


def _as_square(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"{name} must be a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DomainError(f"{name} has non-finite entries")
    return M


@dataclass(frozen=True)
class OperatorSpec:
    """The pair (Q, B) defining one generator.

    Parameters
    ----------
    Q : (N, N) array_like
        Symmetric positive semidefinite diffusion matrix.
    B : (N, N) array_like
        Drift matrix; the drift field is ``X -> B X``.
    name : str
        Label used in reports ("heat", "kolmogorov", ...).
    """

    Q: np.ndarray
    B: np.ndarray
    name: str = "custom"
    dim: int = field(init=False)
    trace_B: float = field(init=False)

    def __post_init__(self):
        Q = _as_square(self.Q, "Q")
        B = _as_square(self.B, "B")
        if Q.shape != B.shape:
            raise DomainError(f"Q and B shapes differ: {Q.shape} vs {B.shape}")
        n = Q.shape[0]
        if n < 1:
            raise DomainError("dim must be >= 1")
        scale = np.linalg.norm(Q, 2)
        tol = TOL_SYM_REL * max(scale, 1.0)
        if np.linalg.norm(Q - Q.T, 2) > tol:
            raise DomainError("Q must be symmetric")
        Q = 0.5 * (Q + Q.T)
        lam_min = float(np.linalg.eigvalsh(Q)[0])
        if lam_min < -tol:
            raise DomainError(f"Q must be positive semidefinite (lambda_min={lam_min:.3e})")
        Q.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "dim", n)
        object.__setattr__(self, "trace_B", float(np.trace(B)))

    def sqrt_Q(self) -> np.ndarray:
        """Symmetric PSD square root of Q (eigendecomposition; deterministic)."""
        w, V = np.linalg.eigh(self.Q)
        w = np.clip(w, 0.0, None)
        return (V * np.sqrt(w)) @ V.T


def heat(dim: int = 1) -> OperatorSpec:
    """Q = I, B = 0: the classical heat operator."""
    return OperatorSpec(np.eye(dim), np.zeros((dim, dim)), name="heat")


def kolmogorov(n: int = 1) -> OperatorSpec:
    """Kinetic operator on R^{2n}: Laplacian in v plus transport <v, grad_x>.

    Q = diag(I_n, 0_n), B = [[0, 0], [I_n, 0]]; degenerate but hypoelliptic.
    """
    Q = np.zeros((2 * n, 2 * n))
    Q[:n, :n] = np.eye(n)
    B = np.zeros((2 * n, 2 * n))
    B[n:, :n] = np.eye(n)
    return OperatorSpec(Q, B, name="kolmogorov")


def ornstein_uhlenbeck(dim: int = 1) -> OperatorSpec:
    """Q = I, B = -I: confining drift, tr B = -dim < 0."""
    return OperatorSpec(np.eye(dim), -np.eye(dim), name="ornstein_uhlenbeck")


PRESETS = {
    "heat": heat,
    "kolmogorov": kolmogorov,
    "ornstein_uhlenbeck": ornstein_uhlenbeck,
}


def matrix_exponential(M, t: float = 1.0) -> np.ndarray:
    """e^{tM} by scaling-and-squaring Pade (scipy); batched over leading axes.

    ``M`` may be (N, N) or (..., N, N); ``t`` may be a scalar or an array
    broadcastable against the leading axes.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise DomainError("matrix_exponential: non-finite entries")
    t = np.asarray(t, dtype=float)
    return expm(M * t[..., None, None] if t.ndim else M * t)


@dataclass(frozen=True)
class GramianBundle:
    """All Gramian-derived quantities of one spec at one time."""

    t: float
    exp_tB: np.ndarray
    exp_minus_tB: np.ndarray
    K_t: np.ndarray
    C_t: np.ndarray
    det_tK: float
    logdet_tK: float
    logdet_C: float
    inv_K_t: np.ndarray
    inv_C_t: np.ndarray


def _block_gramians(spec: OperatorSpec, ts: np.ndarray):
    """Batched (exp_tB, C_t, tK_t) via the augmented block exponential.

    With H = [[B, Q], [0, -B']], exp(tH) has blocks E11 = e^{tB} and
    E12 = e^{tB} C(t); then C(t) = E11^{-1} E12 and t K(t) = E12 E11'.
    """
    n = spec.dim
    H = np.zeros((2 * n, 2 * n))
    H[:n, :n] = spec.B
    H[:n, n:] = spec.Q
    H[n:, n:] = -spec.B.T
    E = expm(H * ts[:, None, None])
    E11 = E[:, :n, :n]
    E12 = E[:, :n, n:]
    C = np.linalg.solve(E11, E12)
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    tK = E12 @ np.swapaxes(E11, -1, -2)
    tK = 0.5 * (tK + np.swapaxes(tK, -1, -2))
    return E11, C, tK


def gramians(spec: OperatorSpec, t: float) -> GramianBundle:
    """Gramian bundle at time t > 0 (block-exponential construction)."""
    if not (t > 0):
        raise DomainError(f"gramians: t must be > 0, got {t}")
    E11, C, tK = _block_gramians(spec, np.array([float(t)]))
    exp_tB, C_t, tK_t = E11[0], C[0], tK[0]
    K_t = tK_t / t
    sign, logdet_tK = np.linalg.slogdet(tK_t)
    if sign <= 0:
        raise DomainError(
            f"gramians: t*K(t) is not positive definite at t={t}; "
            "spec is not hypoelliptic (internal consistency)"
        )
    _, logdet_C = np.linalg.slogdet(C_t)
    return GramianBundle(
        t=float(t),
        exp_tB=exp_tB,
        exp_minus_tB=np.linalg.inv(exp_tB),
        K_t=K_t,
        C_t=C_t,
        det_tK=float(np.exp(logdet_tK)),
        logdet_tK=float(logdet_tK),
        logdet_C=float(logdet_C),
        inv_K_t=np.linalg.inv(K_t),
        inv_C_t=np.linalg.inv(C_t),
    )


@dataclass(frozen=True)
class GramianProfile:
    """Gramian quantities stacked over a time grid (for time integrals)."""

    ts: np.ndarray
    exp_tB: np.ndarray   # (m, N, N)
    C_t: np.ndarray      # (m, N, N)
    tK_t: np.ndarray     # (m, N, N)
    logdet_tK: np.ndarray  # (m,)


def gramian_profile(spec: OperatorSpec, ts) -> GramianProfile:
    """Vectorized gramians over a 1-D array of times (one batched expm call)."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if np.any(ts <= 0):
        raise DomainError("gramian_profile: all times must be > 0")
    E11, C, tK = _block_gramians(spec, ts)
    sign, logdet = np.linalg.slogdet(tK)
    if np.any(sign <= 0):
        raise DomainError("gramian_profile: t*K(t) not positive definite on the grid")
    return GramianProfile(ts=ts, exp_tB=E11, C_t=C, tK_t=tK, logdet_tK=logdet)


@dataclass(frozen=True)
class HypoellipticityReport:
    hypoelliptic: bool
    lambda_min_K1: float
    kalman_rank: int
    spectral_test: bool
    kalman_test: bool
    agree: bool

    def __bool__(self) -> bool:
        return self.hypoelliptic


def hypoellipticity_check(spec: OperatorSpec) -> HypoellipticityReport:
    """Two equivalent tests: lambda_min(K(1)) > 0 and the Kalman rank condition.

    The rank test uses [Q^{1/2}, B Q^{1/2}, ..., B^{N-1} Q^{1/2}] with the
    symmetric PSD root of Q. Both verdicts are reported; they must agree.
    """
    n = spec.dim
    _, _, tK = _block_gramians(spec, np.array([1.0]))
    K1 = tK[0]
    lam_min = float(np.linalg.eigvalsh(K1)[0])
    tol_pd = TOL_PD_REL * max(np.linalg.norm(K1, 2), 1e-300)
    spectral = lam_min > tol_pd

    Qh = spec.sqrt_Q()
    blocks = [Qh]
    for _ in range(n - 1):
        blocks.append(spec.B @ blocks[-1])
    kalman = np.hstack(blocks)
    rank = int(np.linalg.matrix_rank(kalman))
    rank_ok = rank == n
    return HypoellipticityReport(
        hypoelliptic=spectral and rank_ok,
        lambda_min_K1=lam_min,
        kalman_rank=rank,
        spectral_test=spectral,
        kalman_test=rank_ok,
        agree=spectral == rank_ok,
    )


def logdet_derivative_identity(spec: OperatorSpec, t: float) -> float:
    """Residual of tr(Q C^{-1}(t)) = d/dt log det C(t) + 2 tr B.

    Returns the max of the scalar residual (d/dt by central differences,
    h = 1e-5 t) and the operator-norm residual of the Gramian ODE
    C'(t) = e^{-tB} Q e^{-tB'} = Q - B C(t) - C(t) B'. The matrix residual is
    normalized by the size of its leading term: for expanding drifts the terms
    grow like e^{2t||B||} and an absolute residual would be pure roundoff.
    """
    if not (t > 0):
        raise DomainError(f"logdet_derivative_identity: t must be > 0, got {t}")
    g = gramians(spec, t)
    trQCinv = float(np.trace(spec.Q @ g.inv_C_t))
    h = 1e-5 * t
    prof = gramian_profile(spec, np.array([t - h, t + h]))
    _, ld = np.linalg.slogdet(prof.C_t)
    ddt_logdetC = float((ld[1] - ld[0]) / (2 * h))
    scalar_res = abs(trQCinv - ddt_logdetC - 2 * spec.trace_B) / (1.0 + abs(trQCinv))

    EmB = g.exp_minus_tB
    lead = EmB @ spec.Q @ EmB.T
    ode_res = np.linalg.norm(
        lead - spec.Q + spec.B @ g.C_t + g.C_t @ spec.B.T, 2
    ) / (1.0 + np.linalg.norm(lead, 2))
    return max(scalar_res, float(ode_res))


@dataclass(frozen=True)
class KernelConstants:
    """Dimensional constants entering the kernel and the volume function."""

    dim: int
    c_N: float
    omega_N: float

    @staticmethod
    def for_dim(n: int) -> "KernelConstants":
        g = math.gamma(n / 2 + 1)
        return KernelConstants(dim=n, c_N=1.0 / (4 ** (n / 2) * g), omega_N=math.pi ** (n / 2) / g)


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)
