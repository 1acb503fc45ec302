import logging
import sys

from dotenv import load_dotenv

from lates.analysis.theory import low_data_sweep
from lates.core.config import AggTrainConfig, default_seed
from lates.core.pipeline import DEMO_AGG_EPOCHS
from util import format_table, run_pipeline, setup_logging, write_results

setup_logging()
logger = logging.getLogger(__name__)

# Load environment variables from .env file
load_dotenv()

HOLDOUT_SIZES = (50, 200, 1000)


def low_data_workflow(seed: int, seeds: int = 20, n: int = 5000) -> dict:
    """
    Compare LATES and temperature scaling as the calibration holdout shrinks.

    One reference network is trained on the spiral task with a holdout pool large
    enough for the biggest size; every (size, seed) pair then refits both
    calibrators on a random subset of the pool and scores them on that subset
    and on the test set.

    Args:
        seed: Seed for data, network and probes
        seeds: Repetitions per holdout size
        n: Examples for network training plus the holdout pool

    Returns:
        A dictionary with one row per holdout size
    """
    logger.info(f"Starting low-data workflow: seed={seed}, sizes={list(HOLDOUT_SIZES)}, {seeds} seeds each")
    pool_fraction = min(0.5, max(HOLDOUT_SIZES) / n * 1.2)
    result = run_pipeline({"task": "spiral", "n": n, "seed": seed, "holdout_fraction": pool_fraction, "severities": []})

    sweep = low_data_sweep(
        pool_stack=result.stacks["holdout"],
        pool_labels=result.dumps["holdout"].labels,
        test_stack=result.stacks["test"],
        test_labels=result.dumps["test"].labels,
        holdout_sizes=HOLDOUT_SIZES,
        seeds=seeds,
        master_seed=seed,
        config=AggTrainConfig(init="temperature", epochs=DEMO_AGG_EPOCHS, seed=seed),
    )
    rows = [row.model_dump() for row in sweep.rows]
    largest = sweep.rows[-1]
    if largest.mean_gap < 0:
        logger.warning(f"Mean holdout NLL gap at n={largest.holdout_n} is negative ({largest.mean_gap:.5f})")
    if largest.mean_test_gap < 0:
        logger.info(f"Mean test NLL gap at n={largest.holdout_n} is negative ({largest.mean_test_gap:.5f})")
    return {"seed": seed, "loss": sweep.loss_kind, "rows": rows}


if __name__ == "__main__":
    master = int(sys.argv[1]) if len(sys.argv) > 1 else default_seed()

    print("\n=== Low-data comparison (NLL gap = TS - LATES, holdout and test) ===")
    results = low_data_workflow(master)
    columns = ["holdout_n", "seeds", "mean_gap", "gap_interval", "mean_test_gap", "test_gap_interval"]
    print(format_table(results["rows"], columns))
    write_results(results, "runs/low_data.json")
