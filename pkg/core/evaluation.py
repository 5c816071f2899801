"""
Detection Quality Metrics
=========================

Greedy IoU matching of detections to ground truth, followed by three
ranking metrics over the pooled, confidence-sorted detection list:

- AP: area under the all-points interpolated precision/recall curve
- DiscROC: normalised area under (cumulative FP count, TP / #faces)
- ContROC: the same with every TP credited by its IoU instead of 1

Curves have one point per distinct confidence value: detections that share a
confidence are accepted or rejected together by any threshold.
"""

from __future__ import annotations
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Tuple, Union
import logging
import numpy as np
from numba import jit
from pydantic import BaseModel, Field
from core.dataset import Dataset
from core.detectors import DetectorBackend, DetectorOutput, sort_detections
from core.errors import EvaluationError, MissingImageError
from core.geometry import boxes_to_array, iou_matrix

logger = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLD = 0.5

FpAxis = Union[int, str, None]


# ---------- Domain Types ------------------------------------------------- #


@dataclass(frozen=True)
class MatchRecord:
    image_id: str
    confidence: float
    is_tp: bool
    matched_iou: Optional[float] = None


@dataclass(frozen=True)
class MatchResult:
    """Per-detection verdicts, pooled over a dataset"""

    records: Tuple[MatchRecord, ...]
    num_gt_faces: int
    iou_threshold: float = DEFAULT_IOU_THRESHOLD

    @property
    def true_positives(self) -> int:
        return sum(1 for r in self.records if r.is_tp)

    @property
    def false_positives(self) -> int:
        return sum(1 for r in self.records if not r.is_tp)

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(confidence, is_tp as 0/1, IoU credit) in record order"""
        conf = np.array([r.confidence for r in self.records], dtype=np.float64)
        tp = np.array([1.0 if r.is_tp else 0.0 for r in self.records])
        credit = np.array([r.matched_iou if r.is_tp else 0.0 for r in self.records])
        return conf, tp, credit


@dataclass(frozen=True, eq=False)
class PRCurve:
    """One (recall, precision) point per distinct confidence, descending"""

    recall: np.ndarray
    precision: np.ndarray


class RocMode(str, Enum):
    DISCRETE = 'discrete'
    CONTINUOUS = 'continuous'


@dataclass(frozen=True, eq=False)
class ROCCurve:
    """Starts at the origin; one point per distinct confidence, descending"""

    false_positives: np.ndarray
    score_rate: np.ndarray
    mode: RocMode


class EvalReport(BaseModel):
    """
    Metrics of one set of detector outputs.

    Counts are floats so that the same model can carry means and standard
    deviations over repeated runs.
    """

    ap: float = Field(..., ge=0, le=1)
    disc_roc: float = Field(..., ge=0, le=1)
    cont_roc: float = Field(..., ge=0, le=1)
    true_positives: float = Field(0, ge=0)
    false_positives: float = Field(0, ge=0)
    num_detections: float = Field(0, ge=0)
    num_gt_faces: float = Field(0, ge=0)


# ---------- Matching ----------------------------------------------------- #


@jit(
    'Tuple((int64[:], float64[:]))(float64[:, :], float64)',
    nopython=True,
    cache=True,
)
def greedy_match(ious: np.ndarray, iou_threshold: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rows are detections in processing order, columns ground-truth faces.

    Each detection takes the unmatched face of highest IoU (lowest index on
    ties); it is a hit iff that IoU is strictly above the threshold, and only
    hits consume the face. Returns (matched face index or -1, matched IoU).
    """
    n_det = ious.shape[0]
    n_gt = ious.shape[1]
    matched = np.empty(n_det, dtype=np.int64)
    matched_iou = np.zeros(n_det)
    taken = np.zeros(n_gt, dtype=np.bool_)

    for i in range(n_det):
        matched[i] = -1
        best = -1
        best_iou = -1.0
        for j in range(n_gt):
            if taken[j]:
                continue
            if ious[i, j] > best_iou:
                best_iou = ious[i, j]
                best = j
        if best >= 0 and best_iou > iou_threshold:
            taken[best] = True
            matched[i] = best
            matched_iou[i] = best_iou

    return matched, matched_iou


def match_detections(
    outputs: Mapping[str, DetectorOutput],
    dataset: Dataset,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> MatchResult:
    """
    Match every image's detections to its ground truth.

    Detections are re-sorted internally (descending confidence, ties by box),
    so the result does not depend on the order they were supplied in.

    Raises:
        MissingImageError: an output names an image outside the dataset, or a
            dataset image has no output
    """
    for image_id in outputs:
        if image_id not in dataset:
            raise MissingImageError(image_id, f'dataset {dataset.name}')

    records: List[MatchRecord] = []
    for image in dataset:
        output = outputs.get(image.id)
        if output is None:
            raise MissingImageError(image.id, 'detector outputs')
        dets = sort_detections(output.detections)
        if not dets:
            continue
        ious = iou_matrix(boxes_to_array(d.box for d in dets), boxes_to_array(image.boxes))
        matched, matched_iou = greedy_match(ious, float(iou_threshold))
        for det, face, overlap in zip(dets, matched, matched_iou):
            hit = face >= 0
            records.append(
                MatchRecord(image.id, det.confidence, bool(hit), float(overlap) if hit else None)
            )

    return MatchResult(tuple(records), dataset.num_faces, iou_threshold)


# ---------- Curves ------------------------------------------------------- #


def _threshold_points(matches: MatchResult) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative (TP, FP, IoU credit) at every distinct confidence, descending"""
    conf, tp, credit = matches.arrays()
    if conf.size == 0:
        empty = np.zeros(0)
        return empty, empty, empty
    order = np.argsort(-conf, kind='stable')
    conf, tp, credit = conf[order], tp[order], credit[order]
    group_ends = np.append(np.nonzero(np.diff(conf))[0], conf.size - 1)
    cum_tp = np.cumsum(tp)[group_ends]
    cum_fp = np.cumsum(1.0 - tp)[group_ends]
    cum_credit = np.cumsum(credit)[group_ends]
    return cum_tp, cum_fp, cum_credit


def _require_faces(matches: MatchResult, metric: str) -> None:
    if matches.num_gt_faces <= 0:
        raise EvaluationError(f'{metric} is undefined without ground-truth faces')


def precision_recall_curve(matches: MatchResult) -> PRCurve:
    _require_faces(matches, 'precision/recall')
    cum_tp, cum_fp, _ = _threshold_points(matches)
    recall = cum_tp / matches.num_gt_faces
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1.0)
    return PRCurve(recall, precision)


def average_precision(matches: MatchResult) -> float:
    """
    All-points interpolated AP: sum over recall steps of the step width times
    the best precision reached at that recall or beyond.
    """
    curve = precision_recall_curve(matches)
    if curve.recall.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(curve.precision[::-1])[::-1]
    widths = np.diff(curve.recall, prepend=0.0)
    return min(1.0, float(np.sum(widths * envelope)))


def roc_curve(matches: MatchResult, mode: Union[RocMode, str] = RocMode.DISCRETE) -> ROCCurve:
    _require_faces(matches, 'ROC')
    mode = RocMode(mode)
    cum_tp, cum_fp, cum_credit = _threshold_points(matches)
    hits = cum_tp if mode is RocMode.DISCRETE else cum_credit
    return ROCCurve(
        np.concatenate(([0.0], cum_fp)),
        np.concatenate(([0.0], hits / matches.num_gt_faces)),
        mode,
    )


def _fp_axis(matches: MatchResult, fp_axis_max: FpAxis) -> float:
    if fp_axis_max is None or fp_axis_max == 'auto':
        return float(max(matches.false_positives, 1))
    if isinstance(fp_axis_max, str) or fp_axis_max <= 0:
        raise ValueError(f"fp_axis_max must be a positive integer or 'auto', got {fp_axis_max!r}")
    return float(fp_axis_max)


def roc_area(
    matches: MatchResult,
    mode: Union[RocMode, str] = RocMode.DISCRETE,
    fp_axis_max: FpAxis = None,
) -> float:
    """
    Trapezoid area under the ROC curve on [0, fp_axis_max], divided by
    fp_axis_max. The curve is held flat past its last point and cut (by
    linear interpolation) where it crosses fp_axis_max. None or 'auto' uses
    the total FP count, at least 1.
    """
    curve = roc_curve(matches, mode)
    limit = _fp_axis(matches, fp_axis_max)
    x, y = curve.false_positives, curve.score_rate

    beyond = np.nonzero(x > limit)[0]
    if beyond.size:
        j = int(beyond[0])
        y_cut = y[j - 1] + (y[j] - y[j - 1]) * (limit - x[j - 1]) / (x[j] - x[j - 1])
        x = np.append(x[:j], limit)
        y = np.append(y[:j], y_cut)
    elif x[-1] < limit:
        x = np.append(x, limit)
        y = np.append(y, y[-1])

    area = float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))
    return min(1.0, max(0.0, area / limit))


# ---------- Reports ------------------------------------------------------ #


def report_from_matches(matches: MatchResult, fp_axis_max: FpAxis = None) -> EvalReport:
    return EvalReport(
        ap=average_precision(matches),
        disc_roc=roc_area(matches, RocMode.DISCRETE, fp_axis_max),
        cont_roc=roc_area(matches, RocMode.CONTINUOUS, fp_axis_max),
        true_positives=matches.true_positives,
        false_positives=matches.false_positives,
        num_detections=len(matches.records),
        num_gt_faces=matches.num_gt_faces,
    )


def evaluate(
    outputs: Mapping[str, DetectorOutput],
    dataset: Dataset,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    fp_axis_max: FpAxis = None,
) -> EvalReport:
    """Match, then compute AP, DiscROC and ContROC"""
    return report_from_matches(match_detections(outputs, dataset, iou_threshold), fp_axis_max)


def run_standalone(backend: DetectorBackend, dataset: Dataset) -> Dict[str, DetectorOutput]:
    """Outputs of one backend on every image, as if it were the only detector"""
    return {image.id: backend.detect(image) for image in dataset}


def evaluate_backend(
    backend: DetectorBackend,
    dataset: Dataset,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    fp_axis_max: FpAxis = None,
) -> EvalReport:
    report = evaluate(run_standalone(backend, dataset), dataset, iou_threshold, fp_axis_max)
    logger.info(
        '%s on %s: AP %.4f, DiscROC %.4f, ContROC %.4f',
        backend.name,
        dataset.name,
        report.ap,
        report.disc_roc,
        report.cont_roc,
    )
    return report
