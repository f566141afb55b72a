"""Exact solver for the norm-constrained quadratic maximization

    max_{||delta||_2 <= eps}  delta' A'A delta - 2 delta' A' b,

which is the inner adversary of the adversarial risk: the maximum of
``||b - A delta||^2`` over the ball equals ``||b||^2`` plus the optimal value
here.  Strong duality holds, and the optimal primal-dual pair is recovered
from the full SVD of ``A`` plus a one-dimensional root find (the secular
equation) in the generic "easy" case, or a pseudoinverse plus a top
singular direction in the "hard" case where the dual variable sticks at the
largest squared singular value.

The solver is vectorized over right-hand sides ``b`` so one factorization
of ``A`` serves an entire Monte Carlo batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BRANCH_EASY = "easy"
BRANCH_HARD = "hard"
BRANCH_DEGENERATE = "degenerate"

# Singular values within this relative distance of sigma_1 are treated as a
# single top cluster; prevents catastrophic cancellation in 1/(s1^2 - si^2).
CLUSTER_RTOL = 1e-9
# Relative margin on the hard-case test; borderline goes to the easy branch.
HARD_MARGIN = 1e-9
ROOT_RTOL = 1e-12
MAX_ROOT_ITER = 200

_BATCH_CHUNK = 65536


@dataclass(frozen=True, eq=False)
class SvdFactorization:
    """Full SVD ``a = u @ diag(s) @ v.T`` (both orthogonal factors square).

    ``singular_values`` has length ``min(n, p)``, sorted nonincreasing.
    """

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    @property
    def p(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.v.shape[0]

    def matrix(self) -> np.ndarray:
        """Reassemble the factored matrix."""
        r = self.singular_values.size
        return (self.u[:, :r] * self.singular_values) @ self.v[:, :r].T


@dataclass(frozen=True, eq=False)
class PerturbationResult:
    """Optimal perturbation for one right-hand side.

    ``objective_gain`` is the optimal value of the quadratic maximization;
    the worst-case loss is ``||b||^2 + objective_gain``.
    """

    delta: np.ndarray
    dual_lambda: float
    objective_gain: float
    branch: str


def svd_full(a) -> SvdFactorization:
    """Full (not thin) SVD with nonincreasing singular values."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    u, s, vt = np.linalg.svd(a, full_matrices=True)
    return SvdFactorization(u=u, singular_values=s, v=vt.T)


def _as_svd(a) -> SvdFactorization:
    return a if isinstance(a, SvdFactorization) else svd_full(a)


def _secular_mu(w: np.ndarray, gaps: np.ndarray, eps: float) -> np.ndarray:
    """Vectorized root find for f(mu) = sum_i w_i / (mu + gaps_i)^2 = eps^2.

    ``mu = lambda - sigma_1^2`` is the distance of the dual variable above
    the top squared singular value; ``gaps_i = sigma_1^2 - sigma_i^2 >= 0``.
    Working in ``mu`` keeps every denominator an exact sum of nonnegative
    quantities, so near-hard instances lose no precision to cancellation.

    Requires each row to satisfy f(0+) >= eps^2 (easy-case condition).
    Safeguarded Newton: f is convex and decreasing, so Newton from the left
    bracket converges monotonically; steps leaving the bracket bisect.
    """
    tgt = eps * eps
    wsum = w.sum(axis=1)
    w_top = w[:, gaps <= 0.0].sum(axis=1)
    lo = np.sqrt(w_top) / eps  # f(lo) >= tgt: top terms alone contribute eps^2
    hi = np.sqrt(wsum) / eps  # f(hi) <= tgt: all terms at the top gap
    mu = lo.copy()
    active = np.ones(mu.shape[0], dtype=bool)
    for _ in range(MAX_ROOT_ITER):
        denom = mu[:, None] + gaps[None, :]
        q = np.where(w > 0.0, 1.0 / np.where(denom > 0.0, denom, 1.0), 0.0)
        wqq = w * q * q
        g = wqq.sum(axis=1) - tgt
        lo = np.where(g > 0.0, np.maximum(lo, mu), lo)
        hi = np.where(g < 0.0, np.minimum(hi, mu), hi)
        active &= np.abs(g) > ROOT_RTOL * tgt
        active &= (hi - lo) > np.finfo(float).eps * np.maximum(hi, 1e-300)
        if not active.any():
            break
        slope = -2.0 * (wqq * q).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = mu - g / slope
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        step = np.where(inside, newton, 0.5 * (lo + hi))
        mu = np.where(active, step, mu)
    return mu


def secular_root(weights, sigma_sqs, eps: float) -> float:
    """Dual variable of the easy case: the unique root above ``max(sigma_sqs)``.

    Solves ``sum_i weights_i / (lam - sigma_sqs_i)^2 = eps^2`` where
    ``weights_i = (b'u_i)^2 sigma_i^2``.  ``sigma_sqs`` may be a scalar when
    all terms share one squared singular value.

    Raises
    ------
    ValueError
        If all weights are zero (the caller should have taken the
        degenerate or hard branch).
    """
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if np.any(w < 0.0):
        raise ValueError("weights must be nonnegative")
    if not np.any(w > 0.0):
        raise ValueError("all weights are zero; no root above sigma_1^2 exists")
    sq = np.broadcast_to(np.asarray(sigma_sqs, dtype=float), w.shape)
    top = float(sq.max())
    gaps = top - sq
    mu = _secular_mu(w[None, :], gaps, float(eps))[0]
    return top + float(mu)


def _solve_batch(fact: SvdFactorization, b_batch: np.ndarray, eps: float):
    """Core vectorized solve; returns (coords, deltas, lams, gains, hard_mask).

    ``coords`` are the components of delta in the right singular basis
    (first ``min(n, p)`` coordinates; the rest are always zero).
    """
    s = fact.singular_values
    m = b_batch.shape[0]
    r = s.size
    n = fact.n
    s1 = float(s[0]) if r else 0.0

    deltas = np.zeros((m, n))
    lams = np.full(m, s1 * s1)
    gains = np.zeros(m)
    if eps == 0.0 or s1 <= 0.0:
        return None, deltas, lams, gains, None  # degenerate: delta = 0

    bu = b_batch @ fact.u[:, :r]  # (m, r) components b'u_i
    w = (bu * s) ** 2
    top = s >= s1 - CLUSTER_RTOL * max(s1, 1.0)
    gaps = np.where(top, 0.0, (s1 - s) * (s1 + s))
    wsum = w.sum(axis=1)
    atb = np.sqrt(wsum)  # ||A'b|| per row
    w_top = w[:, top].sum(axis=1)
    if (~top).any():
        inv_sq = np.where(top, 0.0, 1.0 / np.where(gaps > 0.0, gaps, 1.0) ** 2)
        s_low = w @ inv_sq
    else:
        s_low = np.zeros(m)

    # Hard case: dual sticks at s1^2.  Requires the residual budget after the
    # pseudoinverse component, and a numerically-zero top-cluster weight
    # (otherwise stationarity at s1^2 is violated and the easy root exists).
    hard = (s_low < eps * eps * (1.0 - HARD_MARGIN)) & (
        np.sqrt(w_top) <= HARD_MARGIN * (s1 * s1 * eps + atb)
    )

    coords = np.zeros((m, r))
    if hard.any():
        coef = np.where(gaps > 0.0, -bu * s / np.where(gaps > 0.0, gaps, 1.0), 0.0)
        extra = np.sqrt(np.maximum(eps * eps - s_low, 0.0))
        j_top = int(np.argmax(top))  # deterministic direction: first top vector
        ch = coef[hard]
        ch[:, j_top] += extra[hard]
        coords[hard] = ch
    easy = ~hard
    if easy.any():
        mu = _secular_mu(w[easy], gaps, eps)
        denom = mu[:, None] + gaps[None, :]
        coords[easy] = np.where(denom > 0.0, -bu[easy] * s / np.where(denom > 0.0, denom, 1.0), 0.0)
        lams[easy] = s1 * s1 + mu

    # Objective evaluated in the singular basis: exact for the coordinates.
    gains = (coords * coords) @ (s * s) - 2.0 * ((coords * bu) @ s)
    deltas = coords @ fact.v[:, :r].T
    return coords, deltas, lams, gains, hard


def worst_case_batch(a, b_batch: np.ndarray, eps: float):
    """Solve the inner maximization for many right-hand sides at once.

    Parameters
    ----------
    a : ndarray or SvdFactorization
        The model matrix; pass a precomputed factorization to amortize it.
    b_batch : ndarray, shape (m, p)
        Residual vectors, one per row.
    eps : float
        Perturbation budget.

    Returns
    -------
    deltas : ndarray, shape (m, n)
    gains : ndarray, shape (m,)
        Optimal objective values (worst-case loss minus ``||b||^2``).
    lams : ndarray, shape (m,)
        Dual variables.
    branches : ndarray of str, shape (m,)
    """
    fact = _as_svd(a)
    b_batch = np.asarray(b_batch, dtype=float)
    if not np.all(np.isfinite(b_batch)):
        raise ValueError("b has non-finite entries")
    if eps < 0.0 or not np.isfinite(eps):
        raise ValueError(f"eps must be finite and >= 0, got {eps}")
    m = b_batch.shape[0]
    deltas = np.empty((m, fact.n))
    gains = np.empty(m)
    lams = np.empty(m)
    branches = np.empty(m, dtype=object)
    for start in range(0, m, _BATCH_CHUNK):
        sl = slice(start, min(start + _BATCH_CHUNK, m))
        _, d, l, g, hard = _solve_batch(fact, b_batch[sl], eps)
        deltas[sl], lams[sl], gains[sl] = d, l, g
        if hard is None:
            branches[sl] = BRANCH_DEGENERATE
        else:
            branches[sl] = np.where(hard, BRANCH_HARD, BRANCH_EASY)
    return deltas, gains, lams, branches


def worst_case_perturbation(a, b, eps: float) -> PerturbationResult:
    """Global maximizer of the norm-constrained quadratic for one ``b``.

    Easy case: the dual solves the secular equation strictly above
    ``sigma_1^2`` and the perturbation follows from stationarity.  Hard
    case: the dual sticks at ``sigma_1^2`` and the perturbation is the
    pseudoinverse component plus a top right-singular direction scaled to
    exhaust the budget.  ``a = 0`` or ``eps = 0`` degenerate to
    ``delta = 0`` with zero gain.
    """
    b = np.asarray(b, dtype=float).reshape(-1)
    deltas, gains, lams, branches = worst_case_batch(a, b[None, :], eps)
    return PerturbationResult(
        delta=deltas[0],
        dual_lambda=float(lams[0]),
        objective_gain=float(gains[0]),
        branch=str(branches[0]),
    )
