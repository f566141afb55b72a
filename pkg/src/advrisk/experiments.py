"""Experiment configurations, deterministic CSV output, and figure runs.

Every experiment is a pure function of ``(config, seed)``: rerunning with
the same config file produces byte-identical CSV.  Metadata (seed, config
hash, tool version) is embedded as ``#``-prefixed comment lines so each
output file documents how to regenerate itself.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .kalman import (
    LtiSystem,
    as_estimation_problem,
    bound_report,
    estimator_ar_mc,
    estimator_sr_closed,
    kalman_estimator,
    observability_gramian,
)
from .model import LinearInverseProblem, RngStream
from .risk import (
    adversarial_risk_mc,
    ar_sr_gap_mc,
    astar_gap_bounds,
    gap_bounds_mc,
    standard_risk_closed,
)
from .training import TrainConfig, pareto_trace, train
from .trs import BRANCH_DEGENERATE, BRANCH_EASY, BRANCH_HARD, worst_case_perturbation

EXPERIMENT_KINDS = (
    "perturb",
    "risk",
    "bounds",
    "pareto",
    "kalman-bounds",
    "fig-condition",
    "fig-observability",
    "fig-kf-vs-adv",
)

_BRANCH_CODES = {BRANCH_EASY: 0, BRANCH_HARD: 1, BRANCH_DEGENERATE: 2}

_MATRIX_STREAM = 11
_MC_STREAM = 12


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """One experiment: a kind, its parameters, and reproducibility keys.

    ``params`` holds kind-specific values (problem matrices as nested
    lists, sweep grids, training settings); unspecified entries fall back
    to the built-in defaults of the kind.
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    n_samples: int = 100_000
    lambda_grid: list[float] | None = None
    output_path: str | None = None
    svg: bool = False

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; options: {EXPERIMENT_KINDS}")
        if self.n_samples <= 0:
            raise ConfigError("n_samples must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not isinstance(self.params, dict):
            raise ConfigError("params must be an object")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": self.params,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "lambda_grid": self.lambda_grid,
            "output_path": self.output_path,
            "svg": self.svg,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {"kind", "params", "seed", "n_samples", "lambda_grid", "output_path", "svg"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "kind" not in data:
            raise ConfigError("config requires a 'kind' field")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        # Hash only the fields that determine the numbers; output path and
        # SVG choice are presentation and must not alter CSV content.
        semantic = {
            "kind": self.kind,
            "params": self.params,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "lambda_grid": self.lambda_grid,
        }
        canon = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def default_lambda_grid() -> list[float]:
    """{0} + 15 log-spaced points in [1e-3, 1e2] + {inf}."""
    return [0.0] + [float(v) for v in np.logspace(-3, 2, 15)] + [math.inf]


@dataclass
class ResultTable:
    """Columnar numeric results plus reproducibility metadata."""

    header: list[str]
    rows: list[list[float]]
    metadata: dict

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.header):
                raise ValueError(f"row width {len(row)} != header width {len(self.header)}")

    def to_csv(self) -> str:
        lines = [f"# {key}={value}" for key, value in self.metadata.items()]
        lines.append(",".join(self.header))
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())

    def column(self, name: str) -> np.ndarray:
        return np.array([row[self.header.index(name)] for row in self.rows])


def _fmt(value) -> str:
    # 17 significant digits round-trips doubles exactly.
    return f"{float(value):.17g}"


def read_result_table(path) -> ResultTable:
    """Parse a CSV written by ``ResultTable.write_csv``."""
    metadata = {}
    header = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                metadata[key] = value
            elif header is None:
                header = line.split(",")
            else:
                rows.append([float(v) for v in line.split(",")])
    if header is None:
        raise ValueError(f"no header found in {path}")
    return ResultTable(header=header, rows=rows, metadata=metadata)


def generate_conditioned_matrix(n: int, condition: float, stream: RngStream) -> np.ndarray:
    """Random square matrix with prescribed condition number and unit
    Frobenius norm.

    Two independent Haar-random orthogonal factors (QR of a Gaussian matrix
    with the sign fix) surround a geometric positive diagonal whose extreme
    ratio is ``condition``; the diagonal vector is scaled to unit Euclidean
    norm.
    """
    if condition < 1.0:
        raise ValueError("condition must be >= 1")
    u = _haar_orthogonal(n, stream, base_index=0)
    v = _haar_orthogonal(n, stream, base_index=n)
    diag = np.geomspace(condition, 1.0, n) if n > 1 else np.ones(1)
    diag = diag / np.linalg.norm(diag)
    return (u * diag) @ v.T


def _haar_orthogonal(n: int, stream: RngStream, base_index: int) -> np.ndarray:
    g = stream.normal_block(base_index, n, n)
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    return q * signs


def _problem_from_params(params: dict) -> LinearInverseProblem:
    try:
        a_star = np.asarray(params["a_star"], dtype=float)
        n = a_star.shape[1]
        p = a_star.shape[0]
        sigma_x = np.asarray(params.get("sigma_x", np.eye(n).tolist()), dtype=float)
        sigma_w = np.asarray(params.get("sigma_w", (0.1 * np.eye(p)).tolist()), dtype=float)
        epsilon = float(params.get("epsilon", 0.5))
        return LinearInverseProblem.from_matrices(a_star, sigma_x, sigma_w, epsilon)
    except (KeyError, IndexError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid problem parameters: {exc}") from exc


def _system_from_params(params: dict) -> LtiSystem:
    try:
        a = np.asarray(params["a"], dtype=float)
        c = np.asarray(params["c"], dtype=float)
        n = a.shape[0]
        p = c.shape[0] if c.ndim == 2 else 1
        c = c.reshape(p, n)
        sigma0 = np.asarray(params.get("sigma0", np.eye(n).tolist()), dtype=float)
        sigma_w = np.asarray(params.get("sigma_w", (0.1 * np.eye(n)).tolist()), dtype=float)
        sigma_v = np.asarray(params.get("sigma_v", (0.1 * np.eye(p)).tolist()), dtype=float)
        horizon = int(params.get("horizon", 5))
        return LtiSystem.from_matrices(a, c, sigma0, sigma_w, sigma_v, horizon)
    except (KeyError, IndexError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid system parameters: {exc}") from exc


def rotation_system(alpha: float, sigma_v: float = 0.1, horizon: int = 5) -> LtiSystem:
    """Planar rotation observed through its first coordinate.

    ``A = [[alpha, beta], [-beta, alpha]]`` with ``alpha^2 + beta^2 = 1``;
    as ``alpha`` approaches one the gramian's smallest eigenvalue shrinks.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    beta = float(np.sqrt(1.0 - alpha * alpha))
    a = np.array([[alpha, beta], [-beta, alpha]])
    c = np.array([[1.0, 0.0]])
    return LtiSystem.from_matrices(a, c, np.eye(2), 0.1 * np.eye(2), [[sigma_v]], horizon)


def shear_system(rho: float, sigma_v: float = 0.1, horizon: int = 5) -> LtiSystem:
    """Integrator chain with coupling ``rho``; observability grows with ``rho``."""
    a = np.array([[1.0, float(rho)], [0.0, 1.0]])
    c = np.array([[1.0, 0.0]])
    return LtiSystem.from_matrices(a, c, np.eye(2), 0.1 * np.eye(2), [[sigma_v]], horizon)


def _train_config(params: dict, config: ExperimentConfig, epsilon: float) -> TrainConfig:
    train = params.get("train", {})
    if not isinstance(train, dict):
        raise ConfigError("params.train must be an object")
    try:
        return TrainConfig(
            epsilon=epsilon,
            batch_size=int(train.get("batch_size", 32)),
            n_iters=int(train.get("n_iters", 5000)),
            step_c0=train.get("step_c0"),
            step_decay=float(train.get("step_decay", 0.5)),
            seed=config.seed,
            init=train.get("init", "nominal"),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid training parameters: {exc}") from exc


def _grid(config: ExperimentConfig) -> list[float]:
    if config.lambda_grid is None:
        return default_lambda_grid()
    grid = [float(v) for v in config.lambda_grid]
    if not grid:
        raise ConfigError("lambda_grid must be nonempty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ConfigError("lambda_grid must be nondecreasing")
    return grid


def _run_perturb(config: ExperimentConfig) -> ResultTable:
    params = config.params
    try:
        a = np.asarray(params["a"], dtype=float)
        b = np.asarray(params["b"], dtype=float).reshape(-1)
        eps = float(params.get("epsilon", 0.5))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"perturb requires 'a', 'b' (and optional 'epsilon'): {exc}") from exc
    res = worst_case_perturbation(a, b, eps)
    header = ["dual_lambda", "objective_gain", "branch_code", "delta_norm"] + [
        f"delta_{i}" for i in range(res.delta.size)
    ]
    row = [res.dual_lambda, res.objective_gain, _BRANCH_CODES[res.branch], np.linalg.norm(res.delta)]
    return ResultTable(header=header, rows=[row + list(res.delta)], metadata={})


def _run_risk(config: ExperimentConfig) -> ResultTable:
    problem = _problem_from_params(config.params)
    a = np.asarray(config.params.get("a", problem.a_star.tolist()), dtype=float)
    stream = RngStream(config.seed, _MC_STREAM)
    sr = standard_risk_closed(a, problem)
    ar = adversarial_risk_mc(a, problem, config.n_samples, stream)
    gap = ar_sr_gap_mc(a, problem, config.n_samples, stream)
    return ResultTable(
        header=["sr", "ar_mean", "ar_stderr", "gap_mean", "gap_stderr"],
        rows=[[sr, ar.mean, ar.std_error, gap.mean, gap.std_error]],
        metadata={},
    )


def _run_bounds(config: ExperimentConfig) -> ResultTable:
    problem = _problem_from_params(config.params)
    a = np.asarray(config.params.get("a", problem.a_star.tolist()), dtype=float)
    stream = RngStream(config.seed, _MC_STREAM)
    bounds = gap_bounds_mc(a, problem, config.n_samples, stream)
    gap = ar_sr_gap_mc(a, problem, config.n_samples, stream)
    rows = [[
        bounds.lower, bounds.upper, bounds.lambda_min, bounds.lambda_max,
        bounds.cross_term, bounds.cross_term_stderr, gap.mean, gap.std_error,
    ]]
    header = [
        "lower", "upper", "lambda_min", "lambda_max",
        "cross_term", "cross_stderr", "gap_mean", "gap_stderr",
    ]
    if np.array_equal(a, problem.a_star):
        try:
            closed = astar_gap_bounds(problem)
            rows[0] += [closed.lower, closed.upper]
            header += ["closed_lower", "closed_upper"]
        except ValueError:
            pass  # anisotropic noise: closed form not applicable
    return ResultTable(header=header, rows=rows, metadata={})


def _run_pareto(config: ExperimentConfig) -> ResultTable:
    problem = _problem_from_params(config.params)
    train_cfg = _train_config(config.params, config, problem.epsilon)
    points = pareto_trace(problem, _grid(config), train_cfg, eval_samples=config.n_samples)
    return ResultTable(
        header=["lambda", "sr", "ar_mean", "ar_stderr"],
        rows=[[pt.lam, pt.sr, pt.ar.mean, pt.ar.std_error] for pt in points],
        metadata={},
    )


def _kalman_row(system: LtiSystem, k: int, eps: float, n_samples: int, stream, system_id):
    gram = observability_gramian(system)
    nominal = kalman_estimator(system, k)
    sr = estimator_sr_closed(nominal, system, k)
    ar = estimator_ar_mc(nominal, system, k, eps, n_samples, stream)
    report = bound_report(system, k, eps)
    return [
        system_id, sr, ar.mean, ar.std_error,
        report.gap_lower_general, report.gap_lower_frobenius, report.kalman_gap_lower,
        report.gap_upper_general, report.kalman_gap_upper,
        gram.lambda_min, gram.min_singular_value, gram.frobenius,
    ]


_KALMAN_HEADER = [
    "system_id", "sr", "ar_mean", "ar_stderr",
    "lb_general", "lb_frobenius", "lb_kalman",
    "ub_general", "ub_kalman",
    "lambda_min_gramian", "sqrt_lambda_min_gramian", "frob_gramian",
]


def _run_kalman_bounds(config: ExperimentConfig) -> ResultTable:
    params = config.params
    k = int(params.get("k", params.get("horizon", 5)))
    eps = float(params.get("epsilon", 0.5))
    stream = RngStream(config.seed, _MC_STREAM)
    if "alphas" in params:
        systems = [rotation_system(float(al), horizon=int(params.get("horizon", 5)))
                   for al in params["alphas"]]
    elif "systems" in params:
        systems = [_system_from_params(s) for s in params["systems"]]
    else:
        systems = [_system_from_params(params)]
    rows = [
        _kalman_row(system, min(k, system.horizon), eps, config.n_samples, stream, idx)
        for idx, system in enumerate(systems)
    ]
    return ResultTable(header=_KALMAN_HEADER, rows=rows, metadata={})


def _run_fig_condition(config: ExperimentConfig) -> ResultTable:
    params = config.params
    kappas = [float(v) for v in params.get("kappas", [1.0, 3.0, 10.0])]
    n = int(params.get("n", 4))
    eps = float(params.get("epsilon", 0.5))
    rows = []
    for kappa in kappas:
        a_star = generate_conditioned_matrix(n, kappa, RngStream(config.seed, _MATRIX_STREAM))
        problem = LinearInverseProblem.from_matrices(a_star, np.eye(n), 0.1 * np.eye(n), eps)
        train_cfg = _train_config(params, config, eps)
        points = pareto_trace(problem, _grid(config), train_cfg, eval_samples=config.n_samples)
        rows += [[kappa, pt.lam, pt.sr, pt.ar.mean, pt.ar.std_error] for pt in points]
    return ResultTable(
        header=["kappa", "lambda", "sr", "ar_mean", "ar_stderr"],
        rows=rows,
        metadata={},
    )


def _run_fig_observability(config: ExperimentConfig) -> ResultTable:
    params = config.params
    alphas = [float(v) for v in params.get("alphas", [0.95, 0.98, 0.99])]
    horizon = int(params.get("horizon", 5))
    ks = [int(v) for v in params.get("ks", [0, horizon])]
    eps = float(params.get("epsilon", 0.5))
    rows = []
    for alpha in alphas:
        system = rotation_system(alpha, horizon=horizon)
        gram = observability_gramian(system)
        for k in ks:
            adapter = as_estimation_problem(system, k)
            train_cfg = _train_config(params, config, eps)
            points = pareto_trace(adapter, _grid(config), train_cfg, eval_samples=config.n_samples)
            rows += [
                [alpha, k, gram.lambda_min, gram.min_singular_value,
                 pt.lam, pt.sr, pt.ar.mean, pt.ar.std_error]
                for pt in points
            ]
    return ResultTable(
        header=["alpha", "k", "lambda_min_gramian", "sqrt_lambda_min_gramian",
                "lambda", "sr", "ar_mean", "ar_stderr"],
        rows=rows,
        metadata={},
    )


def _run_fig_kf_vs_adv(config: ExperimentConfig) -> ResultTable:
    params = config.params
    if "rhos" in params:
        rhos = [float(v) for v in params["rhos"]]
    else:
        count = int(params.get("n_rhos", 12))
        rhos = [float(v) for v in np.geomspace(0.1, np.sqrt(10.0), count)]
    horizon = int(params.get("horizon", 5))
    k = int(params.get("k", 0))
    eps = float(params.get("epsilon", 0.5))
    rows = []
    for rho in rhos:
        system = shear_system(rho, horizon=horizon)
        gram = observability_gramian(system)
        adapter = as_estimation_problem(system, k)
        nominal = adapter.nominal
        stream = RngStream(config.seed, _MC_STREAM)
        sr_kf = estimator_sr_closed(nominal, system, k)
        ar_kf = estimator_ar_mc(nominal, system, k, eps, config.n_samples, stream)
        train_cfg = _train_config(params, config, eps)
        train_cfg.pure_ar = True
        robust = train(adapter, train_cfg)
        sr_adv = estimator_sr_closed(robust, system, k)
        ar_adv = estimator_ar_mc(robust, system, k, eps, config.n_samples, stream)
        rows.append([
            rho, gram.lambda_min, gram.min_singular_value,
            sr_kf, ar_kf.mean, ar_kf.std_error,
            sr_adv, ar_adv.mean, ar_adv.std_error,
        ])
    return ResultTable(
        header=["rho", "lambda_min_gramian", "sqrt_lambda_min_gramian",
                "sr_kf", "ar_kf_mean", "ar_kf_stderr",
                "sr_adv", "ar_adv_mean", "ar_adv_stderr"],
        rows=rows,
        metadata={},
    )


_RUNNERS = {
    "perturb": _run_perturb,
    "risk": _run_risk,
    "bounds": _run_bounds,
    "pareto": _run_pareto,
    "kalman-bounds": _run_kalman_bounds,
    "fig-condition": _run_fig_condition,
    "fig-observability": _run_fig_observability,
    "fig-kf-vs-adv": _run_fig_kf_vs_adv,
}


def run_experiment(config: ExperimentConfig) -> ResultTable:
    """Run one experiment; write CSV (and optional SVG) if an output path is set.

    The SVG is pure presentation: skipping it never changes the CSV.
    """
    table = _RUNNERS[config.kind](config)
    table.metadata = {
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "tool_version": __version__,
        **table.metadata,
    }
    if config.output_path:
        table.write_csv(config.output_path)
        if config.svg:
            from .plotting import frontier_svg

            frontier_svg(table, _svg_path(config.output_path), title=config.kind)
    return table


def _svg_path(csv_path: str) -> str:
    return (csv_path[:-4] if csv_path.endswith(".csv") else csv_path) + ".svg"
