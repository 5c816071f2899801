"""
Detector Backends
=================

Detectors are black boxes that map an image to scored boxes plus a modelled
per-image latency. Two kinds are provided:

1. PrecomputedBackend - detections exported by an external model (jsonl)
2. SyntheticBackend - a seeded simulator whose detection probability grows
   logistically with relative face size

Synthetic draws are addressed by (seed, image id, purpose) through
core.random_streams, so outputs are reproducible and independent of the
order in which images are processed. Two synthetic configs that share a seed
also share every draw; with dominating parameters (see is_dominant_pair)
the slow detector's true positives are a superset of the fast detector's and
its false positives a prefix of the fast detector's.
"""

from __future__ import annotations
from abc import ABC, abstractmethod
from dataclasses import dataclass
from math import isinf, sqrt
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple
import json
import logging
import threading
import time
import numpy as np
from pydantic import Field, model_validator
from pydantic.dataclasses import dataclass as pydantic_dataclass
from scipy.special import expit
from scipy.stats import poisson
from core.dataset import ImageRecord, TextSource, iter_lines, relative_face_size
from core.errors import InputFormatError, MissingImageError
from core.geometry import BoundingBox, iou
from core.random_streams import uniforms

logger = logging.getLogger(__name__)

# False-positive boxes: square, side in this fraction range of the image diagonal
FP_SIDE_RANGE = (0.02, 0.20)
# A false positive may overlap any ground-truth face by at most this IoU
FP_MAX_GT_OVERLAP = 0.3
FP_PLACEMENT_RETRIES = 25


# ---------- Domain Types ------------------------------------------------- #


@dataclass(frozen=True)
class Detection:
    """A scored box"""

    box: BoundingBox
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f'Confidence must be in [0,1], got {self.confidence}')

    def sort_key(self) -> Tuple[float, float, float, float, float]:
        """Descending confidence, ties by box coordinates"""
        return (-self.confidence,) + self.box.as_tuple()


def sort_detections(detections: Iterable[Detection]) -> Tuple[Detection, ...]:
    return tuple(sorted(detections, key=Detection.sort_key))


@dataclass(frozen=True)
class DetectorOutput:
    """Result of running one detector on one image"""

    image_id: str
    detections: Tuple[Detection, ...]
    latency_model_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'detections', tuple(self.detections))
        if self.latency_model_s < 0:
            raise ValueError(f'Latency must be non-negative, got {self.latency_model_s}')
        keys = [d.sort_key() for d in self.detections]
        if keys != sorted(keys):
            raise ValueError(
                f'Detections of {self.image_id} are not in descending confidence order'
            )

    @property
    def boxes(self) -> List[BoundingBox]:
        return [d.box for d in self.detections]

    @property
    def confidences(self) -> List[float]:
        return [d.confidence for d in self.detections]


@pydantic_dataclass(frozen=True)
class BackendConfig:
    """Per-backend settings shared by every backend kind"""

    name: str = Field('detector', description='Backend label used in logs and reports')
    confidence_threshold: float = Field(
        0.5, ge=0, le=1, description='Detections below this confidence are dropped'
    )
    per_image_latency_s: float = Field(
        0.0, ge=0, description='Modelled seconds per image'
    )


@pydantic_dataclass(frozen=True)
class SyntheticDetectorConfig:
    """
    Parameters of the synthetic detector.

    A face of relative size s is found with probability
    quality * logistic(size_slope * (s - size_midpoint)).
    """

    quality: float = Field(0.9, ge=0, le=1, description='Asymptotic recall q')
    size_midpoint: float = Field(
        0.05, ge=0, lt=1, description='Relative size s0 at half of q'
    )
    size_slope: float = Field(
        40.0, gt=0, description='Logistic steepness gamma; inf gives a step at s0'
    )
    false_positive_rate: float = Field(
        0.3, ge=0, description='Poisson mean of false positives per image'
    )
    localization_noise: float = Field(
        0.05, ge=0, lt=0.5, description='Max coordinate jitter as a fraction of box side'
    )
    tp_confidence_floor: float = Field(0.6, ge=0, le=1)
    fp_confidence_ceiling: float = Field(0.4, ge=0, le=1)
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode='after')
    def check_confidence_ranges(self) -> 'SyntheticDetectorConfig':
        if not self.fp_confidence_ceiling < self.tp_confidence_floor:
            raise ValueError(
                f'fp_confidence_ceiling ({self.fp_confidence_ceiling}) must be below '
                f'tp_confidence_floor ({self.tp_confidence_floor})'
            )
        return self

    def detection_probability(self, size: float) -> float:
        """p_detect for a face of the given relative size"""
        if isinf(self.size_slope):
            if size > self.size_midpoint:
                step = 1.0
            elif size == self.size_midpoint:
                step = 0.5
            else:
                step = 0.0
        else:
            step = float(expit(self.size_slope * (size - self.size_midpoint)))
        return self.quality * step


def is_dominant_pair(fast: SyntheticDetectorConfig, slow: SyntheticDetectorConfig) -> bool:
    """
    True when every draw is shared and slow is at least as good everywhere:
    equal seed and slope, s0_slow <= s0_fast, q_slow >= q_fast,
    lambda_slow <= lambda_fast, eta_slow <= eta_fast, same confidence ranges.
    """
    return (
        fast.seed == slow.seed
        and fast.size_slope == slow.size_slope
        and slow.size_midpoint <= fast.size_midpoint
        and slow.quality >= fast.quality
        and slow.false_positive_rate <= fast.false_positive_rate
        and slow.localization_noise <= fast.localization_noise
        and slow.tp_confidence_floor == fast.tp_confidence_floor
        and slow.fp_confidence_ceiling == fast.fp_confidence_ceiling
    )


# ---------- Synthetic Simulator ------------------------------------------ #


def _poisson_count(u: float, rate: float) -> int:
    """Inverse-CDF Poisson draw; non-decreasing in rate for a fixed u"""
    if rate <= 0 or u <= 0:
        return 0
    return int(poisson.ppf(u, rate))


def _jittered(
    box: BoundingBox, v: np.ndarray, noise: float, image: ImageRecord
) -> Optional[BoundingBox]:
    dx = noise * box.width
    dy = noise * box.height
    try:
        moved = BoundingBox(
            box.x_min + (2.0 * v[0] - 1.0) * dx,
            box.y_min + (2.0 * v[1] - 1.0) * dy,
            box.x_max + (2.0 * v[2] - 1.0) * dx,
            box.y_max + (2.0 * v[3] - 1.0) * dy,
        )
        return moved.clamped(image.width, image.height)
    except ValueError:
        return None


def _false_positive_box(
    image: ImageRecord, seed: int, index: int
) -> Optional[BoundingBox]:
    """Uniform square box that does not coincide with any labelled face"""
    draws = uniforms(3 * FP_PLACEMENT_RETRIES, seed, image.id, 'fp-box', index)
    diagonal = sqrt(image.width**2 + image.height**2)
    lo, hi = FP_SIDE_RANGE
    truth = image.boxes

    for attempt in range(FP_PLACEMENT_RETRIES):
        u_side, u_x, u_y = draws[3 * attempt : 3 * attempt + 3]
        side = min(diagonal * (lo + (hi - lo) * u_side), image.width, image.height)
        x = u_x * (image.width - side)
        y = u_y * (image.height - side)
        candidate = BoundingBox(x, y, x + side, y + side)
        if all(iou(candidate, t) <= FP_MAX_GT_OVERLAP for t in truth):
            return candidate
    return None


def synthetic_detect(cfg: SyntheticDetectorConfig, image: ImageRecord) -> DetectorOutput:
    """
    Simulate one detector pass over an image (no threshold, zero latency).

    True positives: each face is emitted with probability p_detect(s), as the
    truth box with every coordinate jittered by up to +/- eta * side, and a
    confidence uniform in [c_tp, 1]. False positives: Poisson(lambda) uniform
    boxes with confidence uniform in [0, c_fp].
    """
    n = len(image.faces)
    key = (cfg.seed, image.id)
    u_detect = uniforms(n, *key, 'detect')
    u_jitter = uniforms(4 * n, *key, 'jitter').reshape(n, 4)
    u_conf = uniforms(n, *key, 'tp-confidence')

    detections: List[Detection] = []
    for i, face in enumerate(image.faces):
        p = cfg.detection_probability(relative_face_size(face.box, image))
        if u_detect[i] >= p:
            continue
        box = _jittered(face.box, u_jitter[i], cfg.localization_noise, image)
        if box is None:
            continue
        c_tp = cfg.tp_confidence_floor
        detections.append(Detection(box, c_tp + (1.0 - c_tp) * float(u_conf[i])))

    n_fp = _poisson_count(float(uniforms(1, *key, 'fp-count')[0]), cfg.false_positive_rate)
    u_fp_conf = uniforms(n_fp, *key, 'fp-confidence')
    for j in range(n_fp):
        box = _false_positive_box(image, cfg.seed, j)
        if box is None:
            logger.debug('Dropped false positive %d of %s: no free placement', j, image.id)
            continue
        detections.append(Detection(box, cfg.fp_confidence_ceiling * float(u_fp_conf[j])))

    return DetectorOutput(image.id, sort_detections(detections), 0.0)


# ---------- Backends ----------------------------------------------------- #


class DetectorBackend(ABC):
    """A detector: image in, thresholded and sorted detections out"""

    def __init__(self, config: BackendConfig):
        self.config = config

    @property
    def name(self) -> str:
        return self.config.name

    @abstractmethod
    def _raw_detections(self, image: ImageRecord) -> Sequence[Detection]:
        """Unfiltered detections for an image"""

    def detect(self, image: ImageRecord) -> DetectorOutput:
        threshold = self.config.confidence_threshold
        kept = [d for d in self._raw_detections(image) if d.confidence >= threshold]
        return DetectorOutput(
            image.id, sort_detections(kept), self.config.per_image_latency_s
        )


class PrecomputedBackend(DetectorBackend):
    """Serves detections that were computed elsewhere"""

    def __init__(
        self, records: Mapping[str, Sequence[Detection]], config: BackendConfig
    ):
        super().__init__(config)
        self._records: Dict[str, Tuple[Detection, ...]] = {
            image_id: tuple(dets) for image_id, dets in records.items()
        }

    @property
    def image_ids(self) -> List[str]:
        return sorted(self._records)

    def _raw_detections(self, image: ImageRecord) -> Sequence[Detection]:
        try:
            return self._records[image.id]
        except KeyError:
            raise MissingImageError(image.id, f'detections of {self.name}') from None


class SyntheticBackend(DetectorBackend):
    """Backend around synthetic_detect; outputs are memoised per image"""

    def __init__(self, synthetic: SyntheticDetectorConfig, config: BackendConfig):
        super().__init__(config)
        self.synthetic = synthetic
        self._cache: Dict[ImageRecord, Tuple[Detection, ...]] = {}
        self._lock = threading.Lock()

    def _raw_detections(self, image: ImageRecord) -> Sequence[Detection]:
        with self._lock:
            cached = self._cache.get(image)
        if cached is not None:
            return cached
        dets = synthetic_detect(self.synthetic, image).detections
        with self._lock:
            self._cache[image] = dets
        return dets


class InstrumentedBackend(DetectorBackend):
    """Counts invocations and measured wall-clock of a wrapped backend"""

    def __init__(self, inner: DetectorBackend):
        super().__init__(inner.config)
        self.inner = inner
        self._lock = threading.Lock()
        self.calls = 0
        self.wall_seconds = 0.0

    def _raw_detections(self, image: ImageRecord) -> Sequence[Detection]:
        return self.inner._raw_detections(image)

    def detect(self, image: ImageRecord) -> DetectorOutput:
        start = time.perf_counter()
        output = self.inner.detect(image)
        elapsed = time.perf_counter() - start
        with self._lock:
            self.calls += 1
            self.wall_seconds += elapsed
        return output

    def reset(self) -> None:
        with self._lock:
            self.calls = 0
            self.wall_seconds = 0.0


def detect(backend: DetectorBackend, image: ImageRecord) -> DetectorOutput:
    """Run a backend on one image"""
    return backend.detect(image)


# ---------- Detection Files ---------------------------------------------- #


def load_precomputed(
    text: TextSource, config: Optional[BackendConfig] = None, source: str = 'detections'
) -> PrecomputedBackend:
    """
    Load a jsonl detections file:
    {"id": str, "detections": [[x_min, y_min, x_max, y_max, confidence], ...]}
    """
    config = config or BackendConfig()
    records: Dict[str, List[Detection]] = {}

    for line_no, line in iter_lines(text):
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise InputFormatError(f'invalid JSON ({e.msg})', line_no, source) from None
        if not isinstance(obj, dict) or not isinstance(obj.get('id'), str):
            raise InputFormatError("expected an object with a string 'id'", line_no, source)
        image_id = obj['id']
        if image_id in records:
            raise InputFormatError(f'duplicate image id {image_id}', line_no, source)
        raw = obj.get('detections', [])
        if not isinstance(raw, list):
            raise InputFormatError("'detections' must be a list", line_no, source)

        dets = []
        for row in raw:
            if (
                not isinstance(row, list)
                or len(row) != 5
                or not all(
                    isinstance(c, (int, float)) and not isinstance(c, bool) for c in row
                )
            ):
                raise InputFormatError(
                    f'detection must be [x_min, y_min, x_max, y_max, confidence], got {row!r}',
                    line_no,
                    source,
                )
            try:
                dets.append(
                    Detection(BoundingBox(*(float(c) for c in row[:4])), float(row[4]))
                )
            except ValueError as e:
                raise InputFormatError(f'image {image_id}: {e}', line_no, source) from None
        records[image_id] = dets

    logger.info('Loaded %s: %d images', source, len(records))
    return PrecomputedBackend(records, config)


def dump_detections(outputs: Iterable[DetectorOutput]) -> str:
    """Serialize outputs to the jsonl detections format"""
    lines = [
        json.dumps({
            'id': out.image_id,
            'detections': [
                list(d.box.as_tuple()) + [d.confidence] for d in out.detections
            ],
        })
        for out in outputs
    ]
    return ''.join(line + '\n' for line in lines)
