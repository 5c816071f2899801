"""
Easy-versus-Hard Routing
========================

Dispatch every image to the fast or the slow detector:

    value = C(image)
    if value <= t: answer with the fast detector
    else:          answer with the slow detector

For detector-based criteria the fast detector has to run anyway to compute
C, so route_batch runs it once per image and keeps its output as the answer
for easy images.

The cost model charges, per image and with p the easy fraction:

    detection          = p * t_fast + (1 - p) * t_slow
    criterion overhead = t_pred            score-table criteria, 0 < p < 1
                       = (1 - p) * t_fast  detector-based criteria, 0 < p < 1
                       = 0                 at p in {0, 1} and for random splits

The second overhead is the fast pass that is wasted on hard images.
"""

from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from math import inf
from typing import (
    Callable,
    Collection,
    Dict,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    TypeVar,
    Union,
)
import logging
import pandas as pd
from pydantic import BaseModel, Field
from pydantic.dataclasses import dataclass as pydantic_dataclass
from core.dataset import Dataset, ImageRecord
from core.detectors import DetectorBackend, DetectorOutput
from core.difficulty import (
    CriterionKind,
    CriterionScore,
    ScoreTable,
    criterion_features,
    criterion_value,
    rank_split,
    threshold_split,
)
from core.errors import ConfigurationError

logger = logging.getLogger(__name__)

T = TypeVar('T')


# ---------- Domain Types ------------------------------------------------- #


class BackendChoice(str, Enum):
    FAST = 'fast'
    SLOW = 'slow'


@dataclass(frozen=True)
class RoutingDecision:
    """Where one image went and why"""

    image_id: str
    criterion_value: float
    easy: bool
    chosen_backend: BackendChoice
    fast_output_reused: bool = False

    def __post_init__(self):
        if self.easy != (self.chosen_backend is BackendChoice.FAST):
            raise ValueError(f'{self.image_id}: easy images go to fast, hard to slow')
        if self.fast_output_reused and not self.easy:
            raise ValueError(f'{self.image_id}: only easy images reuse the fast output')


@dataclass(frozen=True)
class RoutingPlan:
    """One decision per image in id order; criterion None for random splits"""

    decisions: Tuple[RoutingDecision, ...]
    threshold: float
    criterion: Optional[CriterionKind] = None

    def __post_init__(self):
        object.__setattr__(self, 'decisions', tuple(self.decisions))
        ids = [d.image_id for d in self.decisions]
        if ids != sorted(set(ids)):
            raise ValueError('Routing decisions must be unique and ordered by image id')
        if self.criterion is None or not self.criterion.is_detector_based:
            if any(d.fast_output_reused for d in self.decisions):
                raise ValueError('Only detector-based criteria reuse the fast output')

    @property
    def n_images(self) -> int:
        return len(self.decisions)

    @property
    def n_easy(self) -> int:
        return sum(1 for d in self.decisions if d.easy)

    @property
    def easy_fraction(self) -> float:
        return self.n_easy / self.n_images if self.decisions else 0.0

    @property
    def easy_ids(self) -> List[str]:
        return [d.image_id for d in self.decisions if d.easy]

    @property
    def hard_ids(self) -> List[str]:
        return [d.image_id for d in self.decisions if not d.easy]


@pydantic_dataclass(frozen=True)
class TimingModel:
    """Modelled seconds per image"""

    t_fast: float = Field(0.28, ge=0, description='Fast detector')
    t_slow: float = Field(1.89, ge=0, description='Slow detector')
    t_pred: float = Field(0.05, ge=0, description='Score-table difficulty prediction')

    @classmethod
    def afw(cls) -> TimingModel:
        return cls(0.28, 1.89, 0.05)

    @classmethod
    def fddb(cls) -> TimingModel:
        return cls(0.27, 1.17, 0.05)


class CostReport(BaseModel):
    """Average modelled seconds per image, split into its two components"""

    easy_fraction: float = Field(..., ge=0, le=1)
    avg_seconds_per_image: float = Field(..., ge=0)
    detection: float = Field(..., ge=0)
    criterion_overhead: float = Field(..., ge=0)


@dataclass(frozen=True)
class ThresholdSplit:
    """Easy iff criterion value <= threshold"""

    threshold: float


@dataclass(frozen=True)
class FractionSplit:
    """The round(p * N) lowest-valued images are easy; sentinels stay hard below p = 1"""

    easy_fraction: float

    def __post_init__(self):
        if not 0.0 <= self.easy_fraction <= 1.0:
            raise ValueError(f'Easy fraction must be in [0,1], got {self.easy_fraction}')


SplitSpec = Union[ThresholdSplit, FractionSplit]


# ---------- Cost Model --------------------------------------------------- #


class OverheadKind(str, Enum):
    NONE = 'none'
    SCORE_TABLE = 'score-table'
    DETECTOR = 'detector'


def overhead_kind(criterion: Optional[CriterionKind]) -> OverheadKind:
    if criterion is None:
        return OverheadKind.NONE
    if criterion.is_detector_based:
        return OverheadKind.DETECTOR
    return OverheadKind.SCORE_TABLE


def expected_cost(p: float, model: TimingModel, kind: OverheadKind) -> CostReport:
    """Closed-form cost at easy fraction p"""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f'Easy fraction must be in [0,1], got {p}')
    detection = p * model.t_fast + (1.0 - p) * model.t_slow
    overhead = 0.0
    if 0.0 < p < 1.0:
        if kind is OverheadKind.SCORE_TABLE:
            overhead = model.t_pred
        elif kind is OverheadKind.DETECTOR:
            overhead = (1.0 - p) * model.t_fast
    return CostReport(
        easy_fraction=p,
        avg_seconds_per_image=detection + overhead,
        detection=detection,
        criterion_overhead=overhead,
    )


def compute_cost(plan: RoutingPlan, model: TimingModel) -> CostReport:
    """Cost of a routing plan; an empty plan costs nothing"""
    if plan.n_images == 0:
        return CostReport(
            easy_fraction=0.0, avg_seconds_per_image=0.0, detection=0.0, criterion_overhead=0.0
        )
    return expected_cost(plan.easy_fraction, model, overhead_kind(plan.criterion))


COST_TABLE_ROWS = (
    'Image difficulty',
    'Estimation of n, avg',
    'Face detection',
    'Face detection + image difficulty',
    'Face detection + estimation of n, avg',
)


def cost_table(model: TimingModel, splits: Sequence[float]) -> pd.DataFrame:
    """
    Time rows in the layout of a results table: one column per easy fraction.

    Component rows hold the per-image price of each stage where it is paid
    (NaN at the 100%/0% columns, where no criterion is evaluated).
    """
    columns: Dict[float, List[float]] = {}
    for p in splits:
        interior = 0.0 < p < 1.0
        nan = float('nan')
        columns[p] = [
            model.t_pred if interior else nan,
            model.t_fast if interior else nan,
            expected_cost(p, model, OverheadKind.NONE).avg_seconds_per_image,
            expected_cost(p, model, OverheadKind.SCORE_TABLE).avg_seconds_per_image,
            expected_cost(p, model, OverheadKind.DETECTOR).avg_seconds_per_image,
        ]
    return pd.DataFrame(columns, index=list(COST_TABLE_ROWS))


# ---------- Routing ------------------------------------------------------ #


def _parallel_map(
    fn: Callable[[ImageRecord], T], images: Sequence[ImageRecord], max_workers: int
) -> List[T]:
    """Map over images, preserving order"""
    if max_workers <= 1 or len(images) < 2:
        return [fn(image) for image in images]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, images))


def _table_for(
    criterion: CriterionKind, tables: Optional[Mapping[str, ScoreTable]]
) -> Optional[ScoreTable]:
    if criterion.is_detector_based:
        return None
    if not tables or criterion.table_name not in tables:
        raise ConfigurationError(
            f'criterion {criterion} needs score table {criterion.table_name!r}, '
            f'loaded: {sorted(tables or {})}'
        )
    return tables[criterion.table_name]


def route(
    image: ImageRecord,
    criterion: CriterionKind,
    t: float,
    fast: DetectorBackend,
    slow: DetectorBackend,
    tables: Optional[Mapping[str, ScoreTable]] = None,
) -> Tuple[DetectorOutput, RoutingDecision]:
    """
    Route one image: fast output if C(image) <= t, else slow output.

    Raises:
        MissingImageError: the score table has no entry for the image
        ConfigurationError: the criterion's score table was not supplied
    """
    table = _table_for(criterion, tables)
    fast_output = None
    if criterion.is_detector_based:
        fast_output = fast.detect(image)
        score = criterion_value(
            criterion, image.id, features=criterion_features(fast_output, image)
        )
    else:
        score = criterion_value(criterion, image.id, table=table)

    easy = score.value <= t
    if easy:
        output = fast_output if fast_output is not None else fast.detect(image)
    else:
        output = slow.detect(image)
    decision = RoutingDecision(
        image.id,
        score.value,
        easy,
        BackendChoice.FAST if easy else BackendChoice.SLOW,
        fast_output_reused=easy and fast_output is not None,
    )
    return output, decision


def score_images(
    dataset: Dataset,
    criterion: CriterionKind,
    fast: DetectorBackend,
    tables: Optional[Mapping[str, ScoreTable]] = None,
    max_workers: int = 1,
) -> Tuple[List[CriterionScore], Dict[str, DetectorOutput]]:
    """
    Criterion value of every image, plus the fast outputs computed on the way
    (empty for score-table criteria).
    """
    images = list(dataset)
    table = _table_for(criterion, tables)
    if not criterion.is_detector_based:
        scores = [criterion_value(criterion, image.id, table=table) for image in images]
        return scores, {}

    fast_outputs = _parallel_map(fast.detect, images, max_workers)
    scores = [
        criterion_value(criterion, image.id, features=criterion_features(out, image))
        for image, out in zip(images, fast_outputs)
    ]
    return scores, {out.image_id: out for out in fast_outputs}


def _dispatch(
    dataset: Dataset,
    scores: Mapping[str, float],
    easy_ids: Collection[str],
    fast: DetectorBackend,
    slow: DetectorBackend,
    fast_outputs: Mapping[str, DetectorOutput],
    max_workers: int,
) -> Tuple[Dict[str, DetectorOutput], Tuple[RoutingDecision, ...]]:
    easy_set = set(easy_ids)
    images = list(dataset)

    def answer(image: ImageRecord) -> DetectorOutput:
        if image.id in easy_set:
            reused = fast_outputs.get(image.id)
            return reused if reused is not None else fast.detect(image)
        return slow.detect(image)

    answers = _parallel_map(answer, images, max_workers)
    outputs = {out.image_id: out for out in answers}
    decisions = tuple(
        RoutingDecision(
            image.id,
            scores[image.id],
            image.id in easy_set,
            BackendChoice.FAST if image.id in easy_set else BackendChoice.SLOW,
            fast_output_reused=image.id in easy_set and image.id in fast_outputs,
        )
        for image in images
    )
    return outputs, decisions


def route_batch(
    dataset: Dataset,
    criterion: CriterionKind,
    split: SplitSpec,
    fast: DetectorBackend,
    slow: DetectorBackend,
    tables: Optional[Mapping[str, ScoreTable]] = None,
    max_workers: int = 1,
) -> Tuple[Dict[str, DetectorOutput], RoutingPlan]:
    """
    Route a whole dataset.

    Detector-based criteria run the fast detector exactly once per image and
    reuse that output for easy images; slow runs only on hard images. Score-
    table criteria are resolved for every image before any detector runs, so
    a missing entry aborts without side effects.

    Args:
        split: ThresholdSplit(t) compares each value to t; FractionSplit(p)
            marks the round(p * N) lowest-valued images easy (ties by id,
            sentinels kept hard below p = 1), and the plan records the
            largest easy value as its threshold
        max_workers: detector calls are spread over this many threads; the
            result does not depend on it

    Returns:
        (image id -> final output, plan)
    """
    scores, fast_outputs = score_images(dataset, criterion, fast, tables, max_workers)

    if isinstance(split, ThresholdSplit):
        threshold = split.threshold
        easy_ids, _ = threshold_split(scores, threshold)
    else:
        easy_ids, _ = rank_split(scores, split.easy_fraction)
        easy_set = set(easy_ids)
        threshold = max((s.value for s in scores if s.image_id in easy_set), default=-inf)

    value_of = {s.image_id: s.value for s in scores}
    outputs, decisions = _dispatch(
        dataset, value_of, easy_ids, fast, slow, fast_outputs, max_workers
    )
    plan = RoutingPlan(decisions, threshold, criterion)
    logger.debug(
        'Routed %s by %s: %d easy / %d hard (t=%s)',
        dataset.name,
        criterion,
        plan.n_easy,
        plan.n_images - plan.n_easy,
        threshold,
    )
    return outputs, plan


def route_assignment(
    dataset: Dataset,
    easy_ids: Collection[str],
    fast: DetectorBackend,
    slow: DetectorBackend,
    max_workers: int = 1,
) -> Tuple[Dict[str, DetectorOutput], RoutingPlan]:
    """
    Route by an explicit easy set, as for the random baseline.

    The recorded criterion value is an indicator (0 easy, 1 hard) and the
    plan has no criterion, so it is charged detection time only.
    """
    easy_set = set(easy_ids)
    unknown = sorted(easy_set - set(dataset.ids))
    if unknown:
        raise ValueError(f'Easy ids not in dataset {dataset.name}: {unknown[:5]}')
    indicator = {image_id: 0.0 if image_id in easy_set else 1.0 for image_id in dataset.ids}
    outputs, decisions = _dispatch(
        dataset, indicator, easy_set, fast, slow, {}, max_workers
    )
    return outputs, RoutingPlan(decisions, 0.5, None)
