import logging
import sys

from dotenv import load_dotenv

from lates.analysis.metrics import METRIC_REGISTRY, ConditionReport, ReportCollection
from lates.analysis.stats import compare_collections
from lates.core.config import default_seed
from util import format_table, run_pipeline, setup_logging, write_results

setup_logging()
logger = logging.getLogger(__name__)

# Load environment variables from .env file
load_dotenv()


def shift_workflow(master_seed: int, runs: int = 3, n: int = 5000) -> dict:
    """
    Evaluate both calibrators on the clean test set and every shift severity over several runs.

    Each run retrains the network with its own seed; the conditions of all runs are
    pooled into one paired comparison per metric (Wilcoxon, Holm-adjusted across metrics).

    Args:
        master_seed: Seed of the first run; run i uses master_seed + i
        runs: Independent pipeline runs
        n: Examples per run

    Returns:
        A dictionary with the per-condition reports and the comparison table
    """
    logger.info(f"Starting shift workflow: {runs} runs from seed {master_seed}")
    pooled = {"lates": ReportCollection(method="lates"), "temperature": ReportCollection(method="temperature")}

    for i in range(runs):
        seed = master_seed + i
        result = run_pipeline({"task": "spiral", "n": n, "seed": seed})
        for method, collection in result.reports.items():
            for entry in collection.reports:
                if entry.condition == "holdout":
                    continue
                pooled[method].reports.append(
                    ConditionReport(condition=f"seed{seed}/{entry.condition}", report=entry.report)
                )
        logger.info(f"Run {i + 1}/{runs} done (seed {seed})")

    table = compare_collections(pooled["lates"], pooled["temperature"], list(METRIC_REGISTRY), test="wilcoxon")
    return {
        "runs": runs,
        "comparison": table.model_dump(),
        "table": table.format(),
        "conditions": [
            {
                "condition": entry.condition,
                "ece_lates": entry.report.ece,
                "ece_temperature": pooled["temperature"].by_condition()[entry.condition].ece,
            }
            for entry in pooled["lates"].reports
        ],
    }


if __name__ == "__main__":
    master = int(sys.argv[1]) if len(sys.argv) > 1 else default_seed()

    print("\n=== LATES vs temperature scaling under feature shift ===")
    results = shift_workflow(master)
    print(format_table(results["conditions"], ["condition", "ece_lates", "ece_temperature"]))
    print()
    print(results["table"])
    write_results(results, "runs/shift.json")
