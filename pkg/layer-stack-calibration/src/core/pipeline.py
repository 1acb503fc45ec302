import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import BaseModel, Field

from ..analysis.metrics import (
    METRIC_REGISTRY,
    ConditionReport,
    MetricReport,
    ReportCollection,
    evaluate,
    relative_gain,
    write_bins_csv,
    write_report,
)
from ..refnet.network import RefNet, RefNetSpec, export_activations, train_refnet
from ..refnet.tasks import SHIFT_SEVERITIES, SyntheticTask, generate_task, shift_features
from .calibrators import LatesCalibrator, TemperatureCalibrator, save_calibrator
from .config import AggTrainConfig, ProbeTrainConfig, SplitSpec, default_jobs, default_seed
from .dataio import ActivationDump, split_indices, write_dump, write_manifest
from .errors import UndefinedStatisticError
from .fileio import PathLike, atomic_write_text
from .interfaces import AucMode, Calibrator, PipelineParams
from .probes import LinearProbe, probe_accuracy_curve, train_probes, write_probe_bundle
from .stack import LogitStack, build_logit_stack, layer_contributions

logger = logging.getLogger(__name__)

# angular noise that makes neighbouring spiral arms overlap, so the holdout is not separable
DEMO_NOISE = 0.5
DEMO_AGG_EPOCHS = 500


class PipelineSummary(BaseModel):
    task: Dict[str, Any]
    layer_widths: List[int]
    refnet_train_accuracy: Optional[float] = None
    probe_accuracy_holdout: List[float]
    probe_accuracy_test: List[float]
    beta: List[float]
    tau: float
    layer_contributions: Optional[List[float]] = None
    holdout_nll: Dict[str, float]
    relative_gains_test: Dict[str, Optional[float]] = Field(default_factory=dict)


@dataclass
class PipelineResult:
    net: RefNet
    probes: List[LinearProbe]
    dumps: Dict[str, ActivationDump]
    stacks: Dict[str, LogitStack]
    lates: LatesCalibrator
    temperature: TemperatureCalibrator
    reports: Dict[str, ReportCollection]
    summary: PipelineSummary
    written: List[Path] = field(default_factory=list)


class CalibrationPipeline:
    """Generate data, train the reference network, probe it and fit both calibrators.

    The network and its probes see only the train split; both calibrators are
    fitted on the disjoint holdout split and evaluated on holdout, a separately
    generated test set and noise-shifted copies of the test set.
    """

    def __init__(
        self,
        task: SyntheticTask,
        net_spec: RefNetSpec,
        split: SplitSpec,
        probe_config: ProbeTrainConfig,
        agg_config: AggTrainConfig,
        bins: int = 10,
        auc_mode: AucMode = "correctness",
        severities: Sequence[int] = tuple(range(1, len(SHIFT_SEVERITIES) + 1)),
        test_n: Optional[int] = None,
        jobs: int = 1,
    ):
        if net_spec.n_classes != task.n_classes:
            raise ValueError(f"network emits {net_spec.n_classes} classes but the task has {task.n_classes}")
        self.task = task
        self.net_spec = net_spec
        self.split = split
        self.probe_config = probe_config
        self.agg_config = agg_config
        self.bins = bins
        self.auc_mode = auc_mode
        self.severities = list(severities)
        self.test_n = test_n or max(task.n // 5, task.n_classes)
        self.jobs = jobs

    def _evaluate(self, calibrator: Calibrator, method: str, stacks: Dict[str, LogitStack],
                  dumps: Dict[str, ActivationDump]) -> ReportCollection:
        reports = []
        for condition, stack in stacks.items():
            if condition == "train":
                continue
            probs = calibrator.predict_proba(stack)
            reports.append(ConditionReport(
                condition=condition,
                report=evaluate(probs, dumps[condition].labels, self.bins, self.auc_mode),
            ))
        return ReportCollection(method=method, reports=reports)

    def run(self, out_dir: Optional[PathLike] = None) -> PipelineResult:
        try:
            features, labels = generate_task(self.task)
            test_task = self.task.model_copy(update={"n": self.test_n, "seed": self.task.seed + 1})
            test_features, test_labels = generate_task(test_task)

            train_idx, holdout_idx = split_indices(labels, self.task.n_classes, self.split)
            net = train_refnet(self.net_spec, features[train_idx], labels[train_idx])

            dumps: Dict[str, ActivationDump] = {
                "train": export_activations(net, features[train_idx], labels[train_idx], name="train"),
                "holdout": export_activations(net, features[holdout_idx], labels[holdout_idx], name="holdout"),
                "test": export_activations(net, test_features, test_labels, name="test"),
            }
            for severity in self.severities:
                shifted = shift_features(test_features, severity, seed=self.task.seed)
                dumps[f"shift-{severity}"] = export_activations(net, shifted, test_labels, name=f"shift-{severity}")

            probes = train_probes(dumps["train"], self.probe_config, jobs=self.jobs)
            stacks = {name: build_logit_stack(probes, dump) for name, dump in dumps.items()}

            holdout = stacks["holdout"]
            holdout_labels = dumps["holdout"].labels
            lates = LatesCalibrator.fit(holdout, holdout_labels, self.agg_config)
            temperature = TemperatureCalibrator.fit(holdout, holdout_labels, self.agg_config.loss_kind)

            reports = {
                "lates": self._evaluate(lates, "lates", stacks, dumps),
                "temperature": self._evaluate(temperature, "temperature", stacks, dumps),
            }
            summary = self._summarize(net, probes, dumps, lates, temperature, reports)
            result = PipelineResult(
                net=net, probes=probes, dumps=dumps, stacks=stacks, lates=lates,
                temperature=temperature, reports=reports, summary=summary,
            )
            if out_dir is not None:
                result.written = self.write_outputs(result, out_dir)
            return result
        except Exception as e:
            logger.error(f"Error in calibration pipeline: {str(e)}")
            raise

    def _summarize(self, net: RefNet, probes: List[LinearProbe], dumps: Dict[str, ActivationDump],
                   lates: LatesCalibrator, temperature: TemperatureCalibrator,
                   reports: Dict[str, ReportCollection]) -> PipelineSummary:
        try:
            contributions: Optional[List[float]] = layer_contributions(lates.weights).tolist()
        except UndefinedStatisticError as e:
            logger.warning(f"Layer contributions undefined: {str(e)}")
            contributions = None

        lates_test = reports["lates"].by_condition()["test"]
        ts_test = reports["temperature"].by_condition()["test"]
        gains: Dict[str, Optional[float]] = {}
        for metric, (field_name, higher_is_better) in METRIC_REGISTRY.items():
            baseline, improved = getattr(ts_test, field_name), getattr(lates_test, field_name)
            if baseline is None or improved is None or baseline == 0:
                gains[metric] = None
            else:
                gains[metric] = relative_gain(baseline, improved, higher_is_better)

        return PipelineSummary(
            task=self.task.model_dump(),
            layer_widths=list(self.net_spec.layer_widths),
            refnet_train_accuracy=net.trace.epoch_accuracies[-1] if net.trace.epoch_accuracies else None,
            probe_accuracy_holdout=probe_accuracy_curve(probes, dumps["holdout"]),
            probe_accuracy_test=probe_accuracy_curve(probes, dumps["test"]),
            beta=lates.weights.beta.tolist(),
            tau=temperature.model.tau,
            layer_contributions=contributions,
            holdout_nll={
                "lates": reports["lates"].by_condition()["holdout"].nll,
                "temperature": reports["temperature"].by_condition()["holdout"].nll,
            },
            relative_gains_test=gains,
        )

    def write_outputs(self, result: PipelineResult, out_dir: PathLike) -> List[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written: List[Path] = []
        for split in ("train", "holdout", "test"):
            dump = result.dumps[split]
            path = out / f"{split}.lats"
            written.append(write_dump(dump, path))
            written.append(write_manifest(dump, path, model_name=f"refnet{list(self.net_spec.layer_widths)}",
                                          split_name=split, task=self.task.kind, seed=self.task.seed))
        written.append(write_probe_bundle(result.probes, out / "probes.lprb"))
        written.append(save_calibrator(result.lates, out / "lates.json"))
        written.append(save_calibrator(result.temperature, out / "temperature.json"))
        for method, collection in result.reports.items():
            written.append(write_report(collection, out / f"reports_{method}.json"))
            test_report: MetricReport = collection.by_condition()["test"]
            written.append(write_bins_csv(test_report.bins, out / f"bins_{method}.csv"))
        written.append(atomic_write_text(out / "summary.json", result.summary.model_dump_json(indent=2) + "\n"))
        logger.info(f"Wrote {len(written)} pipeline outputs to {out}")
        return written


def create_default_pipeline(params: Optional[PipelineParams] = None) -> CalibrationPipeline:
    """Create a CalibrationPipeline from PipelineParams, filling every gap with defaults.

    The aggregator defaults to a full-batch warm start at the fitted temperature.
    """
    params = params or {}
    seed = params.get("seed", default_seed())
    n_classes = params.get("n_classes", 3)
    hidden = params.get("hidden_widths", [32, 32, 32])
    task = SyntheticTask(
        kind=params.get("task", "spiral"),
        n=params.get("n", 5000),
        n_classes=n_classes,
        noise=params.get("noise", DEMO_NOISE),
        seed=seed,
    )
    net_spec = RefNetSpec(
        layer_widths=(2, *hidden, n_classes),
        epochs=params.get("refnet_epochs", 200),
        seed=seed,
    )
    holdout_fraction = params.get("holdout_fraction", 0.1)
    split = SplitSpec(
        train_fraction=1.0 - holdout_fraction,
        holdout_fraction=holdout_fraction,
        seed=seed,
        stratify=params.get("stratify", False),
    )
    agg_config = AggTrainConfig(
        loss_kind=params.get("loss_kind", "nll"),
        epochs=params.get("agg_epochs", DEMO_AGG_EPOCHS),
        init=params.get("agg_init", "temperature"),
        seed=seed,
    )
    return CalibrationPipeline(
        task=task,
        net_spec=net_spec,
        split=split,
        probe_config=ProbeTrainConfig(seed=seed),
        agg_config=agg_config,
        bins=params.get("bins", 10),
        auc_mode=params.get("auc_mode", "correctness"),
        severities=params.get("severities", list(range(1, len(SHIFT_SEVERITIES) + 1))),
        test_n=params.get("test_n"),
        jobs=params.get("jobs", default_jobs()),
    )
