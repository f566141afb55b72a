"""Finite-horizon state estimation under adversarial measurement attacks.

An LTI system ``x_{t+1} = A x_t + w_t``, ``y_t = C x_t + v_t`` observed over
``t = 0..N`` stacks into a linear inverse problem: the stacked measurement
vector is ``Y = Obs x_0 + Toep W``, the target state is ``x_k = A^k x_0 +
Gamma_k W``, and a linear estimator ``L`` maps ``Y`` to a state estimate.
This module provides the stacked matrices, the observability gramian, the
closed-form minimum-mean-square estimator (filter for ``k = N``, smoother
for ``k < N``) in both stacked and recursive forms, Monte Carlo adversarial
risks, and analytic bounds on the adversarial-standard risk gap driven by
the gramian's spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    CovarianceSpec,
    RngStream,
    cholesky_factor,
    validate_covariance,
)
from .risk import RiskEstimate, mc_estimate
from .training import EstimationProblem
from .trs import svd_full, worst_case_batch

REGIME_HIGH = "high_observability"
REGIME_LOW = "low_observability"

ISOTROPY_ATOL = 1e-9
_GEN_CHUNK = 32_768

_HALF_NORMAL = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """LTI tuple ``(A, C, Sigma_0, Sigma_w, Sigma_v, N)``.

    ``sigma_w`` is the per-step process noise covariance (n x n) and
    ``sigma_v`` the per-step measurement noise covariance (p x p).
    """

    a: np.ndarray
    c: np.ndarray
    sigma0: CovarianceSpec
    sigma_w: CovarianceSpec
    sigma_v: CovarianceSpec
    horizon: int

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        c = np.asarray(self.c, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", c)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"dynamics matrix must be square, got {a.shape}")
        n = a.shape[0]
        if c.ndim != 2 or c.shape[1] != n:
            raise ValueError(f"measurement matrix must have {n} columns, got {c.shape}")
        for name, spec, dim in (
            ("sigma0", self.sigma0, n),
            ("sigma_w", self.sigma_w, n),
            ("sigma_v", self.sigma_v, c.shape[0]),
        ):
            if spec.dim != dim:
                raise ValueError(f"{name} is {spec.dim}x{spec.dim}, expected {dim}x{dim}")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")

    @classmethod
    def from_matrices(cls, a, c, sigma0, sigma_w, sigma_v, horizon) -> "LtiSystem":
        return cls(
            a=np.asarray(a, dtype=float),
            c=np.asarray(c, dtype=float),
            sigma0=validate_covariance(sigma0, strict=True, name="sigma0"),
            sigma_w=validate_covariance(sigma_w, strict=True, name="sigma_w"),
            sigma_v=validate_covariance(sigma_v, strict=True, name="sigma_v"),
            horizon=int(horizon),
        )

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def p(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True)
class IsotropyInfo:
    """Scales detected when all covariances are isotropic and ``A'A = rho^2 I``."""

    sigma0_sq: float
    sigma_w_sq: float
    sigma_v_sq: float
    rho: float


def detect_isotropy(system: LtiSystem, atol: float = ISOTROPY_ATOL) -> IsotropyInfo | None:
    """Return the isotropic scales if the simplified-bound regime applies."""

    def scale(mat):
        d = mat.shape[0]
        c = float(np.trace(mat)) / d
        return c if np.abs(mat - c * np.eye(d)).max() <= atol else None

    s0 = scale(system.sigma0.matrix)
    sw = scale(system.sigma_w.matrix)
    sv = scale(system.sigma_v.matrix)
    gram = system.a.T @ system.a
    rho_sq = scale(gram)
    if None in (s0, sw, sv, rho_sq) or rho_sq < 0.0:
        return None
    return IsotropyInfo(sigma0_sq=s0, sigma_w_sq=sw, sigma_v_sq=sv, rho=float(np.sqrt(rho_sq)))


@dataclass(frozen=True, eq=False)
class StackedModel:
    """Stacked matrices for horizon ``N`` and estimation index ``k``.

    ``Y = obs @ x0 + toeplitz @ W`` and ``x_k = a_pow_k @ x0 + gamma_k @ W``
    hold exactly, with ``W`` the ``n*N`` stacked process noise.
    """

    obs: np.ndarray
    toeplitz: np.ndarray
    gamma_k: np.ndarray
    a_pow_k: np.ndarray
    k: int


def _powers(a: np.ndarray, top: int) -> list[np.ndarray]:
    pows = [np.eye(a.shape[0])]
    for _ in range(top):
        pows.append(a @ pows[-1])
    return pows


def build_stacked(system: LtiSystem, k: int) -> StackedModel:
    """Observability matrix, noise Toeplitz, and state-impulse blocks."""
    horizon = system.horizon
    if not 0 <= k <= horizon:
        raise ValueError(f"k must lie in [0, {horizon}], got {k}")
    n, p = system.n, system.p
    pows = _powers(system.a, horizon)
    obs = np.vstack([system.c @ pows[t] for t in range(horizon + 1)])
    toeplitz = np.zeros((p * (horizon + 1), n * horizon))
    for t in range(1, horizon + 1):
        for j in range(t):
            toeplitz[t * p : (t + 1) * p, j * n : (j + 1) * n] = system.c @ pows[t - 1 - j]
    gamma_k = np.zeros((n, n * horizon))
    for j in range(k):
        gamma_k[:, j * n : (j + 1) * n] = pows[k - 1 - j]
    return StackedModel(obs=obs, toeplitz=toeplitz, gamma_k=gamma_k, a_pow_k=pows[k], k=k)


@dataclass(frozen=True, eq=False)
class GramianSummary:
    """Observability gramian ``Obs' Obs`` with its spectral summaries.

    ``min_singular_value`` is ``sqrt(lambda_min)``: the smallest singular
    value of the observability matrix itself, the quantity that enters the
    estimator bounds.
    """

    gramian: np.ndarray
    lambda_min: float
    lambda_max: float
    frobenius: float

    @property
    def min_singular_value(self) -> float:
        return float(np.sqrt(max(self.lambda_min, 0.0)))


def observability_gramian(system: LtiSystem, n_steps: int | None = None) -> GramianSummary:
    """Gramian over ``t = 0..n_steps`` (defaults to the system horizon)."""
    steps = system.horizon if n_steps is None else int(n_steps)
    if steps < 0:
        raise ValueError("n_steps must be >= 0")
    pows = _powers(system.a, steps)
    obs = np.vstack([system.c @ pows[t] for t in range(steps + 1)])
    gram = obs.T @ obs
    gram = 0.5 * (gram + gram.T)
    eigs = np.linalg.eigvalsh(gram)
    return GramianSummary(
        gramian=gram,
        lambda_min=float(eigs[0]),
        lambda_max=float(eigs[-1]),
        frobenius=float(np.linalg.norm(gram, "fro")),
    )


def is_observable(system: LtiSystem) -> bool:
    """Rank test on the ``n-1``-step observability matrix via SVD."""
    pows = _powers(system.a, system.n - 1)
    obs = np.vstack([system.c @ pows[t] for t in range(system.n)])
    s = np.linalg.svd(obs, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return False
    return bool(np.sum(s > 1e-10 * s[0]) == system.n)


def _kron_eye(block: np.ndarray, reps: int) -> np.ndarray:
    return np.kron(np.eye(reps), block) if reps > 0 else np.zeros((0, 0))


def _second_moments(system: LtiSystem, stacked: StackedModel):
    """Covariance of the stacked measurements and its cross term with x_k."""
    horizon = system.horizon
    iw = _kron_eye(system.sigma_w.matrix, horizon)
    iv = _kron_eye(system.sigma_v.matrix, horizon + 1)
    obs, tau = stacked.obs, stacked.toeplitz
    g_yy = obs @ system.sigma0.matrix @ obs.T + tau @ iw @ tau.T + iv
    g_xy = stacked.a_pow_k @ system.sigma0.matrix @ obs.T + stacked.gamma_k @ iw @ tau.T
    return g_yy, g_xy


def kalman_estimator(system: LtiSystem, k: int) -> np.ndarray:
    """Minimum-mean-square linear estimator of ``x_k`` from the stacked ``Y``.

    Filter for ``k = N``, smoother for ``k < N``.  Computed from the joint
    second moments; the measurement-noise term keeps the solve well posed.
    """
    stacked = build_stacked(system, k)
    g_yy, g_xy = _second_moments(system, stacked)
    return np.linalg.solve(g_yy.T, g_xy.T).T


def recursive_kf(system: LtiSystem, measurements) -> list[np.ndarray]:
    """Recursive filter pass; returns the filtered means for ``k = 0..N``.

    Independent of the stacked form: propagates mean and covariance step by
    step, with the covariance symmetrized after each update.
    """
    ys = [np.asarray(y, dtype=float).reshape(-1) for y in measurements]
    if len(ys) != system.horizon + 1:
        raise ValueError(f"expected {system.horizon + 1} measurements, got {len(ys)}")
    a, c = system.a, system.c
    x_pred = np.zeros(system.n)
    p_pred = system.sigma0.matrix.copy()
    out = []
    for y in ys:
        innov_cov = c @ p_pred @ c.T + system.sigma_v.matrix
        try:
            gain = np.linalg.solve(innov_cov.T, (p_pred @ c.T).T).T
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("innovation covariance is singular") from exc
        x_post = x_pred + gain @ (y - c @ x_pred)
        p_post = p_pred - gain @ c @ p_pred
        p_post = 0.5 * (p_post + p_post.T)
        out.append(x_post)
        x_pred = a @ x_post
        p_pred = a @ p_post @ a.T + system.sigma_w.matrix
        p_pred = 0.5 * (p_pred + p_pred.T)
    return out


def _check_estimator_shape(l, system: LtiSystem) -> np.ndarray:
    l = np.asarray(l, dtype=float)
    expected = (system.n, system.p * (system.horizon + 1))
    if l.shape != expected:
        raise ValueError(f"estimator shape {l.shape} != {expected}")
    return l


def estimator_sr_closed(l, system: LtiSystem, k: int) -> float:
    """Standard risk ``E ||x_k - L Y||^2`` in closed form.

    Sum of three weighted Frobenius norms: initial-state mismatch, process
    noise mismatch, and measurement noise amplification.
    """
    l = _check_estimator_shape(l, system)
    stacked = build_stacked(system, k)
    s_mat = stacked.a_pow_k - l @ stacked.obs
    t_mat = stacked.gamma_k - l @ stacked.toeplitz
    horizon = system.horizon
    term0 = np.sum((s_mat @ system.sigma0.matrix) * s_mat)
    term_w = np.sum((t_mat @ _kron_eye(system.sigma_w.matrix, horizon)) * t_mat)
    term_v = np.sum((l @ _kron_eye(system.sigma_v.matrix, horizon + 1)) * l)
    return float(term0 + term_w + term_v)


def residual_covariance(l, system: LtiSystem, k: int) -> CovarianceSpec:
    """Covariance of the estimation residual ``x_k - L Y`` (n x n, PSD)."""
    l = _check_estimator_shape(l, system)
    stacked = build_stacked(system, k)
    s_mat = stacked.a_pow_k - l @ stacked.obs
    t_mat = stacked.gamma_k - l @ stacked.toeplitz
    horizon = system.horizon
    cov = (
        s_mat @ system.sigma0.matrix @ s_mat.T
        + t_mat @ _kron_eye(system.sigma_w.matrix, horizon) @ t_mat.T
        + l @ _kron_eye(system.sigma_v.matrix, horizon + 1) @ l.T
    )
    return validate_covariance(cov, name="residual covariance")


def simulate_rollouts(
    system: LtiSystem,
    k: int,
    count: int,
    stream: RngStream,
    base_index: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(Y, x_k)`` pairs from the stacked model.

    Row ``i`` is generated from the counter block of rollout
    ``base_index + i``; draws are shard-invariant.
    """
    stacked = build_stacked(system, k)
    n, p, horizon = system.n, system.p, system.horizon
    width = n + n * horizon + p * (horizon + 1)
    z = stream.normal_block(base_index, count, width)
    l0 = cholesky_factor(system.sigma0)
    x0 = z[:, :n] @ l0.T
    if horizon > 0:
        lw = np.kron(np.eye(horizon), cholesky_factor(system.sigma_w))
        w = z[:, n : n + n * horizon] @ lw.T
    else:
        w = np.zeros((count, 0))
    lv = np.kron(np.eye(horizon + 1), cholesky_factor(system.sigma_v))
    v = z[:, n + n * horizon :] @ lv.T
    ys = x0 @ stacked.obs.T + w @ stacked.toeplitz.T + v
    xk = x0 @ stacked.a_pow_k.T + w @ stacked.gamma_k.T
    return ys, xk


def _rollout_values(l, system, k, epsilon, n_samples, stream, base_index, want):
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    l = _check_estimator_shape(l, system)
    fact = svd_full(l)
    out = {key: np.empty(n_samples) for key in want}
    for start in range(0, n_samples, _GEN_CHUNK):
        cnt = min(_GEN_CHUNK, n_samples - start)
        ys, xk = simulate_rollouts(system, k, cnt, stream, base_index + start)
        b = xk - ys @ l.T
        sl = slice(start, start + cnt)
        if "gain" in out or "value" in out:
            _, gains, _, _ = worst_case_batch(fact, b, epsilon)
            if "gain" in out:
                out["gain"][sl] = gains
            if "value" in out:
                out["value"][sl] = (b * b).sum(axis=1) + gains
        if "sr" in out:
            out["sr"][sl] = (b * b).sum(axis=1)
    return out


def estimator_sr_mc(
    l, system: LtiSystem, k: int, n_samples: int, stream: RngStream, base_index: int = 0
) -> RiskEstimate:
    """Monte Carlo standard risk over simulated rollouts (cross-check)."""
    out = _rollout_values(l, system, k, 0.0, n_samples, stream, base_index, ("sr",))
    return mc_estimate(out["sr"], stream.seed)


def estimator_ar_mc(
    l,
    system: LtiSystem,
    k: int,
    epsilon: float,
    n_samples: int,
    stream: RngStream,
    base_index: int = 0,
) -> RiskEstimate:
    """Monte Carlo adversarial risk of an estimator.

    Per rollout the residual ``b = x_k - L Y`` feeds the exact inner
    adversary (one SVD of ``L`` shared across rollouts); the worst-case loss
    is ``||b||^2`` plus the gain.
    """
    out = _rollout_values(l, system, k, epsilon, n_samples, stream, base_index, ("value",))
    return mc_estimate(out["value"], stream.seed)


def estimator_gap_mc(
    l,
    system: LtiSystem,
    k: int,
    epsilon: float,
    n_samples: int,
    stream: RngStream,
    base_index: int = 0,
) -> RiskEstimate:
    """Common-random-number estimate of ``AR(L) - SR(L)`` (mean gain)."""
    out = _rollout_values(l, system, k, epsilon, n_samples, stream, base_index, ("gain",))
    return mc_estimate(out["gain"], stream.seed)


def gap_lower_bounds(l, system: LtiSystem, k: int, epsilon: float) -> tuple[float, float]:
    """Analytic lower bounds on ``AR(L) - SR(L)``: (general, frobenius).

    General: ``2 sqrt(2/pi) (eps/sqrt(n)) tr((L' Cov(x_k - LY) L)^{1/2})``.
    Frobenius (cruder): replace the trace term by
    ``sqrt(lambda_min(sigma_v)) ||L||_F^2``.
    """
    l = _check_estimator_shape(l, system)
    cov = residual_covariance(l, system, k).matrix
    inner = l.T @ cov @ l
    eigs = np.clip(np.linalg.eigvalsh(0.5 * (inner + inner.T)), 0.0, None)
    scale = _HALF_NORMAL * 2.0 * epsilon / np.sqrt(system.n)
    general = scale * float(np.sqrt(eigs).sum())
    sv_min = float(np.linalg.eigvalsh(system.sigma_v.matrix)[0])
    frobenius = scale * np.sqrt(sv_min) * float(np.sum(l * l))
    return general, frobenius


def gap_upper_bound_general(l, system: LtiSystem, k: int, epsilon: float) -> float:
    """``2 eps ||L||_2 ||Cov^{1/2}||_F + eps^2 ||L||_2^2`` with the residual
    covariance; its root-Frobenius norm is ``sqrt(tr(Cov))``."""
    l = _check_estimator_shape(l, system)
    cov = residual_covariance(l, system, k).matrix
    spec_norm = float(np.linalg.svd(l, compute_uv=False)[0])
    root_fro = float(np.sqrt(max(np.trace(cov), 0.0)))
    return 2.0 * epsilon * spec_norm * root_fro + epsilon * epsilon * spec_norm * spec_norm


def r_factor(rho: float, k: int) -> float:
    """Geometric accumulation ``sum_{j=0}^{k-1} rho^(2j)``; equals ``k`` at
    ``rho = 1`` and is continuous in ``rho``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return float(sum(rho ** (2 * j) for j in range(k)))


def _state_noise_matrix(system: LtiSystem, k: int) -> np.ndarray:
    """``A^k Sigma_0 (A^k)' + sum_{i=1}^k A^{k-i} Sigma_w (A^{k-i})'``."""
    pows = _powers(system.a, k)
    mat = pows[k] @ system.sigma0.matrix @ pows[k].T
    for i in range(1, k + 1):
        mat = mat + pows[k - i] @ system.sigma_w.matrix @ pows[k - i].T
    return 0.5 * (mat + mat.T)


def _sigma_bar_extremes(system: LtiSystem) -> tuple[float, float]:
    """(min, max) eigenvalues of ``blockdiag(Sigma_0, I_N (x) Sigma_w)``."""
    e0 = np.linalg.eigvalsh(system.sigma0.matrix)
    ew = np.linalg.eigvalsh(system.sigma_w.matrix)
    if system.horizon == 0:
        return float(e0[0]), float(e0[-1])
    return float(min(e0[0], ew[0])), float(max(e0[-1], ew[-1]))


def kalman_gap_lower_bound(system: LtiSystem, k: int, epsilon: float) -> float:
    """System-level lower bound on the gap at the nominal estimator.

    Grows as the gramian's Frobenius norm shrinks: uniformly poor
    observability forces a high-gain estimator, which an adversary
    exploits.  The state-noise factor is computed as an exact minimum
    eigenvalue, so the bound applies to arbitrary dynamics; under isotropic
    covariances with scaled-orthogonal dynamics it reduces to
    ``rho^(2k) sigma_0^2 + r_factor(rho, k) sigma_w^2``.
    """
    if not 0 <= k <= system.horizon:
        raise ValueError(f"k must lie in [0, {system.horizon}], got {k}")
    gram = observability_gramian(system)
    sv_min = float(np.linalg.eigvalsh(system.sigma_v.matrix)[0])
    sv_norm = float(np.linalg.eigvalsh(system.sigma_v.matrix)[-1])
    _, bar_max = _sigma_bar_extremes(system)
    noise_floor = float(np.linalg.eigvalsh(_state_noise_matrix(system, k))[0])
    denom = (system.horizon + 1) * bar_max * gram.frobenius + sv_norm
    ratio = noise_floor / denom
    c_fro = float(np.sum(system.c * system.c))
    return _HALF_NORMAL * 2.0 * epsilon / np.sqrt(system.n) * np.sqrt(sv_min) * c_fro * ratio**2


def kalman_gap_upper_bound(system: LtiSystem, k: int, epsilon: float) -> tuple[float, str]:
    """System-level upper bound on the gap at the nominal estimator.

    Returns ``(value, regime)``.  The estimator's gain is controlled by the
    smallest singular value of the whitened measurement map, bounded below
    by ``sqrt(lambda_min(gramian)) * lambda_min(Sigma_bar)``; when that
    exceeds the measurement noise scale the refined (high-observability)
    form applies.  The bound decreases as ``lambda_min`` of the gramian
    grows.
    """
    if not 0 <= k <= system.horizon:
        raise ValueError(f"k must lie in [0, {system.horizon}], got {k}")
    gram = observability_gramian(system)
    bar_min, bar_max = _sigma_bar_extremes(system)
    sv_min = float(np.linalg.eigvalsh(system.sigma_v.matrix)[0])
    sv_norm = float(np.linalg.eigvalsh(system.sigma_v.matrix)[-1])
    s_floor = np.sqrt(max(gram.lambda_min, 0.0)) * bar_min
    if s_floor <= 0.0:
        return float("inf"), REGIME_LOW
    if s_floor >= np.sqrt(sv_min):
        beta = s_floor / (s_floor * s_floor + sv_min)
        regime = REGIME_HIGH
    else:
        beta = 1.0 / s_floor
        regime = REGIME_LOW
    nu = float(np.linalg.eigvalsh(_state_noise_matrix(system, k))[-1])
    value = (
        epsilon
        * nu
        * beta
        * (2.0 * np.sqrt(system.n) * np.sqrt(bar_max + sv_norm * beta * beta) + epsilon * beta)
    )
    return float(value), regime


@dataclass(frozen=True)
class EstimatorBoundReport:
    """All gap bounds for an estimator on one system.

    The nominal-estimator bounds (``kalman_*``) are present only when the
    report was built at the minimum-mean-square estimator itself.
    """

    gap_lower_general: float
    gap_lower_frobenius: float
    gap_upper_general: float
    kalman_gap_lower: float | None
    kalman_gap_upper: float | None
    regime: str
    assumption_isotropic: bool


def bound_report(
    system: LtiSystem, k: int, epsilon: float, l=None
) -> EstimatorBoundReport:
    """Assemble every applicable bound; ``l`` defaults to the nominal
    estimator, enabling the system-level bounds."""
    at_nominal = l is None
    l = kalman_estimator(system, k) if at_nominal else np.asarray(l, dtype=float)
    general, frobenius = gap_lower_bounds(l, system, k, epsilon)
    upper = gap_upper_bound_general(l, system, k, epsilon)
    if at_nominal:
        kal_lower = kalman_gap_lower_bound(system, k, epsilon)
        kal_upper, regime = kalman_gap_upper_bound(system, k, epsilon)
    else:
        kal_lower = kal_upper = None
        _, regime = kalman_gap_upper_bound(system, k, epsilon)
    return EstimatorBoundReport(
        gap_lower_general=general,
        gap_lower_frobenius=frobenius,
        gap_upper_general=upper,
        kalman_gap_lower=kal_lower,
        kalman_gap_upper=kal_upper,
        regime=regime,
        assumption_isotropic=detect_isotropy(system) is not None,
    )


def as_estimation_problem(system: LtiSystem, k: int) -> EstimationProblem:
    """Adapter exposing state estimation to the trainers.

    The estimator plays the model role, the stacked measurements the input
    role, and the target state the output role, so robust smoothers can be
    trained and frontier-traced with the same machinery as the plain
    measurement model.
    """
    stacked = build_stacked(system, k)
    g_yy, g_xy = _second_moments(system, stacked)
    nominal = np.linalg.solve(g_yy.T, g_xy.T).T

    def draw(count, stream, base_index):
        return simulate_rollouts(system, k, count, stream, base_index)

    def sr_grad(l):
        return 2.0 * (l @ g_yy - g_xy)

    def ar_mc(l, eps, n_samples, stream):
        return estimator_ar_mc(l, system, k, eps, n_samples, stream)

    return EstimationProblem(
        dim_out=system.n,
        dim_in=system.p * (system.horizon + 1),
        nominal=nominal,
        draw=draw,
        sr_closed=lambda l: estimator_sr_closed(l, system, k),
        sr_grad=sr_grad,
        ar_mc=ar_mc,
        input_scale=float(np.linalg.eigvalsh(0.5 * (g_yy + g_yy.T))[-1]),
    )
