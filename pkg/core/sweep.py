"""
Split Sweeps and the Random Baseline
====================================

A sweep crosses every splitting criterion with every easy fraction of the
grid: rank split, route, evaluate, cost. The random baseline draws the easy
subset uniformly at random (exactly round(p * N) images, run r seeded with
seed + r) and reports the mean and sample standard deviation of each metric.

Measured wall-clock goes to the log only; results hold modelled cost.
"""

from __future__ import annotations
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import logging
import time
import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from core.dataset import Dataset
from core.detectors import DetectorBackend, InstrumentedBackend
from core.difficulty import CriterionKind, ScoreTable, easy_count, resolve_tables
from core.errors import ConfigurationError
from core.evaluation import DEFAULT_IOU_THRESHOLD, EvalReport, FpAxis, evaluate, run_standalone
from core.router import (
    CostReport,
    FractionSplit,
    RoutingPlan,
    TimingModel,
    compute_cost,
    route_assignment,
    route_batch,
)

logger = logging.getLogger(__name__)

DEFAULT_SPLITS: Tuple[float, ...] = (1.0, 0.75, 0.5, 0.25, 0.0)
RANDOM = 'random'


@dataclass
class Experiment:
    """Everything a sweep needs, already loaded"""

    dataset: Dataset
    fast: DetectorBackend
    slow: DetectorBackend
    criteria: Sequence[CriterionKind]
    score_tables: Mapping[str, ScoreTable] = field(default_factory=dict)
    splits: Sequence[float] = DEFAULT_SPLITS
    timing: TimingModel = field(default_factory=TimingModel.afw)
    baseline_runs: int = 5
    seed: int = 0
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    fp_axis_max: FpAxis = None
    max_workers: int = 1

    def __post_init__(self):
        self.criteria = tuple(self.criteria)
        self.splits = tuple(float(p) for p in self.splits)
        bad = [p for p in self.splits if not 0.0 <= p <= 1.0]
        if bad:
            raise ConfigurationError(f'Split fractions must be in [0,1], got {bad}')
        if self.baseline_runs < 1:
            raise ConfigurationError(f'baseline_runs must be >= 1, got {self.baseline_runs}')
        self.score_tables = resolve_tables(self.criteria, self.score_tables)


class SweepCell(BaseModel):
    criterion: str
    easy_fraction: float
    n_easy: int
    report: EvalReport
    cost: CostReport


class BaselineCell(BaseModel):
    easy_fraction: float
    n_easy: int
    runs: int
    mean: EvalReport
    std: EvalReport
    cost: CostReport


class SweepResult(BaseModel):
    """Grid of (criterion, split) cells plus one baseline cell per split"""

    dataset: str
    num_images: int
    fast_backend: str
    slow_backend: str
    splits: List[float]
    criteria: List[str]
    timing: TimingModel
    cells: List[SweepCell] = Field(default_factory=list)
    baseline: List[BaselineCell] = Field(default_factory=list)

    def cell(self, criterion: str, easy_fraction: float) -> SweepCell:
        for c in self.cells:
            if c.criterion == criterion and c.easy_fraction == easy_fraction:
                return c
        raise KeyError(f'No cell for ({criterion}, {easy_fraction})')

    def baseline_cell(self, easy_fraction: float) -> BaselineCell:
        for c in self.baseline:
            if c.easy_fraction == easy_fraction:
                return c
        raise KeyError(f'No baseline cell for {easy_fraction}')


# ---------- Random Baseline ---------------------------------------------- #


def _aggregate(reports: Sequence[EvalReport]) -> Tuple[EvalReport, EvalReport]:
    frame = pd.DataFrame([r.model_dump() for r in reports])
    # identical runs (a single run, p = 0 or p = 1) aggregate to that run, spread 0
    varies = frame.nunique() > 1
    mean = frame.mean().where(varies, frame.iloc[0])
    std = frame.std(ddof=1).where(varies, 0.0)
    return EvalReport(**mean.to_dict()), EvalReport(**std.to_dict())


def _baseline_runs(
    dataset: Dataset,
    fast: DetectorBackend,
    slow: DetectorBackend,
    p: float,
    runs: int,
    seed: int,
    iou_threshold: float,
    fp_axis_max: FpAxis,
    max_workers: int,
) -> Tuple[List[EvalReport], Optional[RoutingPlan]]:
    if runs < 1:
        raise ConfigurationError(f'runs must be >= 1, got {runs}')
    ids = dataset.ids
    k = easy_count(p, len(ids))
    reports, plan = [], None
    for run in range(runs):
        rng = np.random.default_rng(seed + run)
        chosen = rng.choice(len(ids), size=k, replace=False)
        easy_ids = [ids[i] for i in chosen]
        outputs, plan = route_assignment(dataset, easy_ids, fast, slow, max_workers)
        reports.append(evaluate(outputs, dataset, iou_threshold, fp_axis_max))
    return reports, plan


def random_baseline(
    dataset: Dataset,
    fast: DetectorBackend,
    slow: DetectorBackend,
    p: float,
    runs: int = 5,
    seed: int = 0,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    fp_axis_max: FpAxis = None,
    max_workers: int = 1,
) -> Tuple[EvalReport, EvalReport]:
    """
    Mean and sample standard deviation (0 for a single run) of the metrics
    over `runs` uniformly random easy subsets of size round(p * N).
    """
    reports, _ = _baseline_runs(
        dataset, fast, slow, p, runs, seed, iou_threshold, fp_axis_max, max_workers
    )
    return _aggregate(reports)


# ---------- Sweep -------------------------------------------------------- #


def run_sweep(experiment: Experiment) -> SweepResult:
    """
    Evaluate every (criterion, split) cell and the random baseline.

    Raises:
        MissingImageError: a score table lacks an image of the dataset
    """
    exp = experiment
    fast = InstrumentedBackend(exp.fast)
    slow = InstrumentedBackend(exp.slow)
    result = SweepResult(
        dataset=exp.dataset.name,
        num_images=len(exp.dataset),
        fast_backend=exp.fast.name,
        slow_backend=exp.slow.name,
        splits=list(exp.splits),
        criteria=[c.name for c in exp.criteria],
        timing=exp.timing,
    )
    started = time.perf_counter()

    for criterion in exp.criteria:
        for p in exp.splits:
            cell_start = time.perf_counter()
            outputs, plan = route_batch(
                exp.dataset,
                criterion,
                FractionSplit(p),
                fast,
                slow,
                exp.score_tables,
                exp.max_workers,
            )
            report = evaluate(outputs, exp.dataset, exp.iou_threshold, exp.fp_axis_max)
            cost = compute_cost(plan, exp.timing)
            result.cells.append(
                SweepCell(
                    criterion=criterion.name,
                    easy_fraction=p,
                    n_easy=plan.n_easy,
                    report=report,
                    cost=cost,
                )
            )
            logger.debug(
                '%s @ %.2f: AP %.4f, %.4f s/image modelled, %.3f s wall',
                criterion,
                p,
                report.ap,
                cost.avg_seconds_per_image,
                time.perf_counter() - cell_start,
            )

    for p in exp.splits:
        reports, plan = _baseline_runs(
            exp.dataset,
            fast,
            slow,
            p,
            exp.baseline_runs,
            exp.seed,
            exp.iou_threshold,
            exp.fp_axis_max,
            exp.max_workers,
        )
        mean, std = _aggregate(reports)
        result.baseline.append(
            BaselineCell(
                easy_fraction=p,
                n_easy=easy_count(p, len(exp.dataset)),
                runs=exp.baseline_runs,
                mean=mean,
                std=std,
                cost=compute_cost(plan, exp.timing),
            )
        )
        logger.debug('random @ %.2f: AP %.4f +/- %.4f', p, mean.ap, std.ap)

    logger.info(
        'Sweep over %s: %d criteria x %d splits + baseline in %.2f s '
        '(fast %d calls / %.2f s, slow %d calls / %.2f s)',
        exp.dataset.name,
        len(exp.criteria),
        len(exp.splits),
        time.perf_counter() - started,
        fast.calls,
        fast.wall_seconds,
        slow.calls,
        slow.wall_seconds,
    )
    return result


def standalone_reports(experiment: Experiment) -> Dict[str, EvalReport]:
    """Metrics of each backend alone, for comparing against the grid"""
    exp = experiment
    reports = {}
    for label, backend in (('fast', exp.fast), ('slow', exp.slow)):
        outputs = run_standalone(backend, exp.dataset)
        reports[label] = evaluate(outputs, exp.dataset, exp.iou_threshold, exp.fp_axis_max)
    return reports
