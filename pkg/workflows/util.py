import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from lates.core.config import default_log_level
from lates.core.fileio import atomic_write_text
from lates.core.interfaces import PipelineParams
from lates.core.pipeline import PipelineResult, create_default_pipeline

logger = logging.getLogger(__name__)


def setup_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=getattr(logging, level or default_log_level(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )


def run_pipeline(params: PipelineParams) -> PipelineResult:
    """Run the calibration pipeline in memory (nothing written to disk)."""
    try:
        return create_default_pipeline(params).run()
    except Exception as e:
        logger.error(f"Error running pipeline with seed {params.get('seed')}: {str(e)}")
        raise


def write_results(payload: Dict[str, Any], path: str) -> Path:
    target = atomic_write_text(path, json.dumps(payload, indent=2, default=float) + "\n")
    logger.info(f"Results written to {target}")
    return target


def format_table(rows: List[Dict[str, Any]], columns: Sequence[str]) -> str:
    """Plain fixed-width table; floats printed with 5 decimals."""
    def cell(value: Any) -> str:
        if isinstance(value, float):
            return f"{value:.5f}"
        if isinstance(value, (list, tuple)):
            return "[" + ", ".join(cell(v) for v in value) + "]"
        return str(value)

    cells = [[cell(row.get(c, "")) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells)
    return "\n".join(lines)
