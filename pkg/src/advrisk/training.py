"""Stochastic-gradient training of robustness-regularized linear models.

Minimizes ``SR(A) + lam * AR(A)`` (or pure adversarial risk for
``lam = inf``).  Both objectives are convex in the model matrix.  The SR
part has an exact gradient from its closed form; the AR part uses batches
of envelope gradients: solve the inner adversary, hold the maximizer fixed,
and differentiate the realized loss.  Tracing the regularization weight
over a grid with warm starts sweeps out the robustness-accuracy frontier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import LinearInverseProblem, RngStream, TrainingDivergedError, sample_batch
from .risk import RiskEstimate, adversarial_risk_mc, standard_risk_closed, with_epsilon
from .trs import worst_case_batch, worst_case_perturbation

DIVERGENCE_NORM = 1e6

_TRAIN_STREAM = 101
_EVAL_STREAM = 202


@dataclass(frozen=True, eq=False)
class EstimationProblem:
    """Hooks binding a data model to the trainers.

    The trained matrix maps ``dim_in``-vectors to ``dim_out``-vectors and
    the loss per pair is ``||y - A x||^2`` (adversarially, ``x`` is
    perturbed).  ``draw`` must be deterministic in ``(stream, base_index)``.
    """

    dim_out: int
    dim_in: int
    nominal: np.ndarray
    draw: Callable[[int, RngStream, int], tuple[np.ndarray, np.ndarray]]
    sr_closed: Callable[[np.ndarray], float]
    sr_grad: Callable[[np.ndarray], np.ndarray]
    ar_mc: Callable[[np.ndarray, float, int, RngStream], RiskEstimate]
    # largest eigenvalue of the input second moment; sets the curvature
    # scale of the quadratic loss and hence the stable step size
    input_scale: float = 1.0


def problem_adapter(problem: LinearInverseProblem) -> EstimationProblem:
    """Adapter for the plain measurement model ``y = A* x + w``."""

    def draw(count, stream, base_index):
        batch = sample_batch(problem, count, stream, base_index)
        return batch.xs, batch.ys

    def sr_grad(a):
        return 2.0 * (a - problem.a_star) @ problem.sigma_x.matrix

    def ar_mc(a, eps, n_samples, stream):
        return adversarial_risk_mc(a, with_epsilon(problem, eps), n_samples, stream)

    return EstimationProblem(
        dim_out=problem.p,
        dim_in=problem.n,
        nominal=problem.a_star.copy(),
        draw=draw,
        sr_closed=lambda a: standard_risk_closed(a, problem),
        sr_grad=sr_grad,
        ar_mc=ar_mc,
        input_scale=float(np.linalg.eigvalsh(problem.sigma_x.matrix)[-1]),
    )


@dataclass
class TrainConfig:
    """SGD hyperparameters.

    ``lam = math.inf`` (or ``pure_ar=True``) trains on the adversarial risk
    alone.  The step at iteration ``t`` is ``step_c0 / t**step_decay``; the
    default ``step_c0`` shrinks with ``lam`` to keep early steps stable.
    The returned matrix is the average of the final 10% of iterates.
    """

    lam: float = 0.0
    epsilon: float = 0.0
    batch_size: int = 32
    n_iters: int = 5000
    step_c0: float | None = None
    step_decay: float = 0.5
    seed: int = 0
    init: str | np.ndarray = "nominal"
    pure_ar: bool = False

    def __post_init__(self):
        if isinstance(self.lam, float) and math.isinf(self.lam):
            self.pure_ar = True
        if self.lam < 0 or self.epsilon < 0:
            raise ValueError("lam and epsilon must be nonnegative")
        if not (0.5 <= self.step_decay <= 1.0):
            raise ValueError("step_decay must lie in [0.5, 1]")
        if self.batch_size <= 0 or self.n_iters <= 0:
            raise ValueError("batch_size and n_iters must be positive")

    def resolved_step_c0(self, input_scale: float = 1.0) -> float:
        if self.step_c0 is not None:
            return self.step_c0
        lam = 0.0 if self.pure_ar else self.lam
        # normalize by the problem's curvature scale so the default stays
        # stable on badly scaled inputs; unit-scale problems are unaffected
        return 0.01 / (1.0 + lam) / max(1.0, input_scale)


def _init_matrix(config: TrainConfig, adapter: EstimationProblem) -> np.ndarray:
    if isinstance(config.init, np.ndarray):
        a0 = np.array(config.init, dtype=float)
        if a0.shape != (adapter.dim_out, adapter.dim_in):
            raise ValueError(f"init shape {a0.shape} != ({adapter.dim_out}, {adapter.dim_in})")
        return a0
    if config.init == "nominal":
        return adapter.nominal.copy()
    if config.init == "zeros":
        return np.zeros((adapter.dim_out, adapter.dim_in))
    raise ValueError(f"unknown init {config.init!r}")


def adversarial_loss_grad(a, x, y, eps: float) -> np.ndarray:
    """Envelope gradient of the pointwise-max loss at one sample.

    Solves the inner adversary for ``delta*`` and returns
    ``-2 (y - A(x + delta*)) (x + delta*)'``; valid because the maximizer is
    held fixed under differentiation of the max-value function.
    """
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    res = worst_case_perturbation(a, y - a @ x, eps)
    z = x + res.delta
    r = y - a @ z
    return -2.0 * np.outer(r, z)


def _ar_batch_grad(a, xs, ys, eps: float) -> np.ndarray:
    """Mean envelope gradient over a batch, sharing one SVD of ``a``."""
    deltas, _, _, _ = worst_case_batch(a, ys - xs @ a.T, eps)
    zs = xs + deltas
    rs = ys - zs @ a.T
    return (-2.0 / xs.shape[0]) * (rs.T @ zs)


def _adapter(problem) -> EstimationProblem:
    if isinstance(problem, EstimationProblem):
        return problem
    if isinstance(problem, LinearInverseProblem):
        return problem_adapter(problem)
    raise TypeError(f"cannot train on {type(problem).__name__}")


def train(problem, config: TrainConfig, on_iterate=None) -> np.ndarray:
    """Run SGD on ``SR + lam * AR`` and return the tail-averaged iterate.

    ``lam = 0`` uses only the exact SR gradient, so the descent is
    deterministic.  Raises ``TrainingDivergedError`` if the iterate norm
    exceeds ``DIVERGENCE_NORM`` (the step size is too large).
    ``on_iterate(t, a)``, when given, observes every iterate.
    """
    adapter = _adapter(problem)
    a = _init_matrix(config, adapter)
    c0 = config.resolved_step_c0(adapter.input_scale)
    stream = RngStream(config.seed, _TRAIN_STREAM)
    need_ar = config.pure_ar or config.lam > 0.0
    tail_len = max(1, config.n_iters // 10)
    tail_sum = np.zeros_like(a)
    for t in range(1, config.n_iters + 1):
        if need_ar:
            xs, ys = adapter.draw(config.batch_size, stream, (t - 1) * config.batch_size)
            g_ar = _ar_batch_grad(a, xs, ys, config.epsilon)
            grad = g_ar if config.pure_ar else adapter.sr_grad(a) + config.lam * g_ar
        else:
            grad = adapter.sr_grad(a)
        a = a - (c0 / t**config.step_decay) * grad
        norm = float(np.linalg.norm(a))
        if not np.isfinite(norm) or norm > DIVERGENCE_NORM:
            raise TrainingDivergedError(
                f"iterate norm {norm:.3e} at step {t}; reduce step_c0={c0:.3e} "
                f"or increase step_decay={config.step_decay}"
            )
        if on_iterate is not None:
            on_iterate(t, a)
        if t > config.n_iters - tail_len:
            tail_sum += a
    return tail_sum / tail_len


@dataclass(frozen=True, eq=False)
class ParetoPoint:
    """One sample of the robustness-accuracy frontier."""

    lam: float
    a: np.ndarray
    sr: float
    ar: RiskEstimate


def pareto_trace(
    problem,
    lambda_grid,
    config: TrainConfig,
    eval_samples: int = 10_000,
) -> list[ParetoPoint]:
    """Trace the frontier by re-solving along a nondecreasing ``lam`` grid.

    Each point warm-starts from the previous solution.  SR is evaluated in
    closed form; AR by Monte Carlo on one fixed evaluation stream, shared
    across all points so that frontier comparisons use common random
    numbers.
    """
    grid = [float(v) for v in lambda_grid]
    if not grid:
        raise ValueError("lambda_grid must be nonempty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda_grid must be nondecreasing")
    adapter = _adapter(problem)
    eval_stream = RngStream(config.seed, _EVAL_STREAM)
    points = []
    init = config.init
    for lam in grid:
        cfg = TrainConfig(
            lam=0.0 if math.isinf(lam) else lam,
            epsilon=config.epsilon,
            batch_size=config.batch_size,
            n_iters=config.n_iters,
            step_c0=config.step_c0,
            step_decay=config.step_decay,
            seed=config.seed,
            init=init,
            pure_ar=math.isinf(lam),
        )
        a = train(adapter, cfg)
        points.append(
            ParetoPoint(
                lam=lam,
                a=a,
                sr=adapter.sr_closed(a),
                ar=adapter.ar_mc(a, config.epsilon, eval_samples, eval_stream),
            )
        )
        init = a
    return points
