"""
Numeric side of the dominance argument for probe scaling: the oracle
probability bound, the ridge schedule λ = c/√n, synthetic logit-stack tasks
and the seeded experiment checking that LATES does not lose to temperature
scaling on holdout data.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from ..core.config import AggTrainConfig, default_jobs, default_seed
from ..core.interfaces import LossKind
from ..core.numerics import softmax
from ..core.stack import LogitStack, fit_lates, fit_temperature, lates_predict, loss_value
from .stats import bootstrap_interval

logger = logging.getLogger(__name__)

# start at (0, ..., 0, 1/τ*); the objective is convex in β, the minimizer is the same
WARM_START = AggTrainConfig(init="temperature")


class OracleBoundParams(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lambda_: float = Field(alias="lambda", gt=0.0)
    rho: float = Field(gt=0.0)
    n: PositiveInt
    beta_star_norm_sq: float = Field(ge=0.0)
    epsilon: float = Field(gt=0.0)


def oracle_delta_bound(params: OracleBoundParams) -> float:
    """Probability bound that temperature scaling beats LATES by more than ε.

    min(1, (λ‖β*‖² + 2ρ²/(λn)) / ε), clipped because it bounds a probability.
    """
    lam = params.lambda_
    raw = (lam * params.beta_star_norm_sq + 2.0 * params.rho ** 2 / (lam * params.n)) / params.epsilon
    return min(1.0, raw)


def lambda_schedule(n: int, c: float = 1.0) -> float:
    if n < 1:
        raise ValueError(f"lambda schedule needs n >= 1, got {n}")
    if c <= 0:
        raise ValueError(f"lambda schedule needs c > 0, got {c}")
    return c / math.sqrt(n)


class ProbeProfile(BaseModel):
    """How one synthetic probe sees the latent logits.

    logits = gain * (shared * u_shared + private * u_private + noise * eps)
    """
    model_config = ConfigDict(frozen=True)

    shared: float = 1.0
    private: float = 0.0
    noise: float = Field(default=0.5, ge=0.0)
    gain: float = Field(default=1.0, gt=0.0)


class SyntheticStackTask(BaseModel):
    """Generator of (logit stack, labels) pairs with known informativeness per probe.

    Labels are drawn from softmax(u_shared + u_private); the last profile plays
    the model's own logits.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "custom"
    n_classes: int = Field(default=3, ge=2)
    latent_scale: float = Field(default=2.0, gt=0.0)
    private_scale: float = Field(default=1.0, ge=0.0)
    probes: Tuple[ProbeProfile, ...] = Field(min_length=1)

    @property
    def d(self) -> int:
        return len(self.probes)

    @model_validator(mode="after")
    def _final_probe_sees_signal(self) -> "SyntheticStackTask":
        final = self.probes[-1]
        if final.shared == 0 and final.private == 0:
            raise ValueError("the final probe must carry some latent signal")
        return self


TASK_REGISTRY: Dict[str, SyntheticStackTask] = {
    # overconfident final layer, intermediates noisy but partly informative
    "default": SyntheticStackTask(
        name="default",
        n_classes=3,
        probes=(
            ProbeProfile(shared=0.5, private=0.8, noise=1.0, gain=1.0),
            ProbeProfile(shared=0.8, private=0.4, noise=0.8, gain=1.0),
            ProbeProfile(shared=1.0, private=0.0, noise=0.5, gain=3.0),
        ),
    ),
    "noise-probe": SyntheticStackTask(
        name="noise-probe",
        n_classes=3,
        probes=(
            ProbeProfile(shared=0.0, private=0.0, noise=1.0, gain=1.0),
            ProbeProfile(shared=0.0, private=0.0, noise=1.0, gain=1.0),
            ProbeProfile(shared=1.0, private=1.0, noise=0.5, gain=2.5),
        ),
    ),
    "informative": SyntheticStackTask(
        name="informative",
        n_classes=3,
        probes=(
            ProbeProfile(shared=0.2, private=1.0, noise=0.3, gain=1.0),
            ProbeProfile(shared=1.0, private=0.0, noise=0.3, gain=1.0),
        ),
    ),
    "degenerate": SyntheticStackTask(
        name="degenerate",
        n_classes=3,
        latent_scale=1.5,
        probes=(ProbeProfile(shared=1.0, private=1.0, noise=0.5, gain=1.5),),
    ),
    "binary": SyntheticStackTask(
        name="binary",
        n_classes=2,
        probes=(
            ProbeProfile(shared=0.5, private=0.8, noise=1.0, gain=1.0),
            ProbeProfile(shared=0.8, private=0.4, noise=0.8, gain=1.0),
            ProbeProfile(shared=1.0, private=0.0, noise=0.5, gain=3.0),
        ),
    ),
}


def get_task(name: str) -> SyntheticStackTask:
    try:
        return TASK_REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown synthetic task {name!r}; choose from {sorted(TASK_REGISTRY)}") from None


def sample_stack(task: SyntheticStackTask, n: int, rng: np.random.Generator) -> Tuple[LogitStack, np.ndarray]:
    K = task.n_classes
    u_shared = rng.normal(0.0, task.latent_scale, size=(n, K))
    u_private = rng.normal(0.0, task.latent_scale * task.private_scale, size=(n, K))
    true_probs = softmax(u_shared + u_private)
    draws = rng.random(n)
    labels = np.minimum((np.cumsum(true_probs, axis=1) < draws[:, None]).sum(axis=1), K - 1).astype(np.int64)

    values = np.empty((n, task.d, K), dtype=np.float64)
    for k, profile in enumerate(task.probes):
        eps = rng.normal(0.0, 1.0, size=(n, K))
        values[:, k, :] = profile.gain * (profile.shared * u_shared + profile.private * u_private + profile.noise * eps)
    return LogitStack(values), labels


class SeedOutcome(BaseModel):
    seed_index: int
    lates_holdout: float
    ts_holdout: float
    lates_eval: float
    ts_eval: float
    beta: List[float]
    tau: float

    @property
    def holdout_gap(self) -> float:
        return self.ts_holdout - self.lates_holdout


class DominanceResult(BaseModel):
    task: str
    holdout_n: int
    loss_kind: LossKind
    ridge: float
    tolerance: float
    dominance_fraction: float = Field(ge=0.0, le=1.0)
    mean_gap: float
    gap_interval: Tuple[float, float]
    mean_eval_gap: float
    mean_beta_norm_sq: float
    outcomes: List[SeedOutcome]

    def oracle_bound(self, rho: float = 1.0, epsilon: float = 0.05, beta_star_norm_sq: Optional[float] = None) -> float:
        """Bound at this experiment's λ and n; ‖β*‖² defaults to the mean fitted ‖β‖²."""
        norm_sq = self.mean_beta_norm_sq if beta_star_norm_sq is None else beta_star_norm_sq
        return oracle_delta_bound(OracleBoundParams(
            lambda_=self.ridge, rho=rho, n=self.holdout_n, beta_star_norm_sq=norm_sq, epsilon=epsilon,
        ))


def _run_seed(task: SyntheticStackTask, master_seed: int, index: int, holdout_n: int, eval_n: int,
              config: AggTrainConfig) -> SeedOutcome:
    rng = np.random.default_rng([master_seed, index])
    holdout, holdout_labels = sample_stack(task, holdout_n, rng)
    fresh, fresh_labels = sample_stack(task, eval_n, rng)
    seeded = config.model_copy(update={"seed": int(rng.integers(0, 2 ** 31 - 1))})

    weights = fit_lates(holdout, holdout_labels, seeded)
    temperature = fit_temperature(holdout.final_logits, holdout_labels, config.loss_kind)
    kind = config.loss_kind
    return SeedOutcome(
        seed_index=index,
        lates_holdout=loss_value(lates_predict(holdout, weights), holdout_labels, kind),
        ts_holdout=loss_value(temperature.predict_proba(holdout.final_logits), holdout_labels, kind),
        lates_eval=loss_value(lates_predict(fresh, weights), fresh_labels, kind),
        ts_eval=loss_value(temperature.predict_proba(fresh.final_logits), fresh_labels, kind),
        beta=weights.beta.tolist(),
        tau=temperature.tau,
    )


def dominance_experiment(
    seeds: int,
    holdout_n: int,
    task: SyntheticStackTask,
    master_seed: Optional[int] = None,
    loss_kind: LossKind = "nll",
    ridge_c: float = 1.0,
    tolerance: float = 0.0,
    eval_n: Optional[int] = None,
    jobs: Optional[int] = None,
    config: Optional[AggTrainConfig] = None,
) -> DominanceResult:
    """Fit LATES (ridge λ = ridge_c/√n) and temperature scaling on fresh holdout samples per seed.

    A seed counts as dominated when the LATES holdout loss is at most the
    temperature-scaling holdout loss plus tolerance. Seeds run in parallel
    with rng streams derived from (master_seed, seed index).
    """
    if seeds < 1:
        raise ValueError(f"need at least one seed, got {seeds}")
    master_seed = default_seed() if master_seed is None else master_seed
    ridge = lambda_schedule(holdout_n, ridge_c)
    base = (config or WARM_START).model_copy(update={"ridge": ridge, "loss_kind": loss_kind})
    eval_n = eval_n or holdout_n
    jobs = jobs or default_jobs()
    logger.info(
        f"Dominance experiment on task '{task.name}': {seeds} seeds, holdout n={holdout_n}, "
        f"ridge={ridge:.4g}, jobs={jobs}"
    )
    try:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(
                lambda i: _run_seed(task, master_seed, i, holdout_n, eval_n, base), range(seeds)
            ))
    except Exception as e:
        logger.error(f"Error in dominance experiment: {str(e)}")
        raise

    gaps = np.array([o.holdout_gap for o in outcomes])
    dominated = np.array([o.lates_holdout <= o.ts_holdout + tolerance for o in outcomes])
    result = DominanceResult(
        task=task.name,
        holdout_n=holdout_n,
        loss_kind=loss_kind,
        ridge=ridge,
        tolerance=tolerance,
        dominance_fraction=float(dominated.mean()),
        mean_gap=float(gaps.mean()),
        gap_interval=bootstrap_interval(gaps, seed=master_seed),
        mean_eval_gap=float(np.mean([o.ts_eval - o.lates_eval for o in outcomes])),
        mean_beta_norm_sq=float(np.mean([np.dot(o.beta, o.beta) for o in outcomes])),
        outcomes=outcomes,
    )
    logger.info(
        f"Dominance fraction {result.dominance_fraction:.3f}, mean gap {result.mean_gap:.5f} "
        f"(95% interval {result.gap_interval[0]:.5f} .. {result.gap_interval[1]:.5f})"
    )
    return result


class LowDataRow(BaseModel):
    """Gaps are temperature-scaling loss minus LATES loss; positive favours LATES."""
    holdout_n: int
    seeds: int
    mean_gap: float
    gap_interval: Tuple[float, float]
    mean_test_gap: float
    test_gap_interval: Tuple[float, float]


class LowDataResult(BaseModel):
    loss_kind: LossKind
    rows: List[LowDataRow]


def low_data_sweep(
    pool_stack: LogitStack,
    pool_labels: np.ndarray,
    test_stack: LogitStack,
    test_labels: np.ndarray,
    holdout_sizes: Sequence[int] = (50, 200, 1000),
    seeds: int = 20,
    master_seed: Optional[int] = None,
    config: Optional[AggTrainConfig] = None,
    jobs: Optional[int] = None,
) -> LowDataResult:
    """Refit both calibrators on random holdouts of each size drawn from the pool.

    mean_gap compares the two on the holdout each was fitted on, mean_test_gap
    on the shared test stack; both are averaged over seeds.
    """
    master_seed = default_seed() if master_seed is None else master_seed
    config = config or WARM_START
    kind = config.loss_kind
    pool_labels = np.asarray(pool_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    jobs = jobs or default_jobs()

    def one(size: int, index: int) -> Tuple[float, float]:
        rng = np.random.default_rng([master_seed, size, index])
        chosen = np.sort(rng.choice(pool_stack.n_examples, size=size, replace=False))
        holdout, labels = pool_stack.take(chosen), pool_labels[chosen]
        weights = fit_lates(holdout, labels, config.model_copy(update={"seed": int(rng.integers(0, 2 ** 31 - 1))}))
        temperature = fit_temperature(holdout.final_logits, labels, kind)
        test_gap = (
            loss_value(temperature.predict_proba(test_stack.final_logits), test_labels, kind)
            - loss_value(lates_predict(test_stack, weights), test_labels, kind)
        )
        holdout_gap = (
            loss_value(temperature.predict_proba(holdout.final_logits), labels, kind)
            - loss_value(lates_predict(holdout, weights), labels, kind)
        )
        return holdout_gap, test_gap

    rows = []
    for size in holdout_sizes:
        if not 1 <= size <= pool_stack.n_examples:
            raise ValueError(f"holdout size {size} outside 1..{pool_stack.n_examples}")
        logger.info(f"Low-data sweep: holdout n={size}, {seeds} seeds")
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            gaps = np.array(list(pool.map(lambda i: one(size, i), range(seeds))))
        rows.append(LowDataRow(
            holdout_n=size,
            seeds=seeds,
            mean_gap=float(gaps[:, 0].mean()),
            gap_interval=bootstrap_interval(gaps[:, 0], seed=master_seed),
            mean_test_gap=float(gaps[:, 1].mean()),
            test_gap_interval=bootstrap_interval(gaps[:, 1], seed=master_seed),
        ))
    return LowDataResult(loss_kind=kind, rows=rows)
