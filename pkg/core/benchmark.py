"""
Synthetic Benchmark
===================

A seeded stand-in for a face detection test set, sized for desk-scale
experiments. It produces:

- a Dataset whose images hold K = 1 + Poisson(mu) non-overlapping faces with
  log-normal relative sizes around size_median * K ** -crowd_exponent, so
  crowded images hold small faces that the fast detector tends to miss
- a fast and a slow SyntheticBackend; with shared_draws they form a
  dominant pair (the slow detector is per image at least as good)
- difficulty score tables whose value is the expected number of faces the
  fast detector misses, plus seeded Gaussian noise

Everything is a function of the master seed.
"""

from __future__ import annotations
from dataclasses import dataclass, replace
from math import log, sqrt
from typing import Dict, Iterator, List, Tuple
import logging
import numpy as np
from pydantic import Field, model_validator
from pydantic.dataclasses import dataclass as pydantic_dataclass
from core.dataset import Dataset, FaceSource, GroundTruthFace, ImageRecord
from core.detectors import (
    BackendConfig,
    SyntheticBackend,
    SyntheticDetectorConfig,
    is_dominant_pair,
)
from core.difficulty import ScoreTable
from core.errors import BenchmarkError
from core.geometry import BoundingBox, iou
from core.random_streams import derive_seed, stream

logger = logging.getLogger(__name__)

CLASS_AGNOSTIC = 'class_agnostic'
PERSON_AWARE = 'person_aware'


def default_fast_detector() -> SyntheticDetectorConfig:
    return SyntheticDetectorConfig(
        quality=0.85,
        size_midpoint=0.08,
        size_slope=40.0,
        false_positive_rate=0.5,
        localization_noise=0.08,
        tp_confidence_floor=0.5,
        fp_confidence_ceiling=0.45,
    )


def default_slow_detector() -> SyntheticDetectorConfig:
    return SyntheticDetectorConfig(
        quality=0.97,
        size_midpoint=0.03,
        size_slope=40.0,
        false_positive_rate=0.2,
        localization_noise=0.04,
        tp_confidence_floor=0.5,
        fp_confidence_ceiling=0.45,
    )


@pydantic_dataclass(frozen=True)
class SynthBenchConfig:
    image_count: int = Field(500, ge=0)
    extra_faces_mean: float = Field(
        1.5, ge=0, description='Faces per image are 1 + Poisson(extra_faces_mean)'
    )
    size_median: float = Field(
        0.2, gt=0, lt=1, description='Median relative face size in a single-face image'
    )
    crowd_exponent: float = Field(
        1.2, ge=0, description='Median face size shrinks as face_count ** -crowd_exponent'
    )
    size_log_sigma: float = Field(0.35, ge=0)
    min_face_size: float = Field(0.02, gt=0, lt=1)
    max_face_size: float = Field(0.35, gt=0, le=1)
    aspect_jitter: float = Field(
        0.15, ge=0, lt=1, description='Box aspect ratio w/h uniform in 1 +/- jitter'
    )
    image_width: int = Field(640, gt=0)
    image_height: int = Field(480, gt=0)
    placement_retries: int = Field(200, gt=0)
    fast: SyntheticDetectorConfig = Field(default_factory=default_fast_detector)
    slow: SyntheticDetectorConfig = Field(default_factory=default_slow_detector)
    shared_draws: bool = Field(
        True, description='Slow reuses the fast seed, making draws per face identical'
    )
    fast_latency_s: float = Field(0.28, ge=0)
    slow_latency_s: float = Field(1.89, ge=0)
    confidence_threshold: float = Field(0.0, ge=0, le=1)
    class_agnostic_noise: float = Field(0.3, ge=0)
    person_aware_noise: float = Field(0.5, ge=0)
    master_seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode='after')
    def check_sizes(self) -> 'SynthBenchConfig':
        if not self.min_face_size < self.max_face_size:
            raise ValueError(
                f'min_face_size ({self.min_face_size}) must be below '
                f'max_face_size ({self.max_face_size})'
            )
        return self


@dataclass(frozen=True)
class SyntheticBenchmark:
    """Unpacks as (dataset, fast, slow, score table)"""

    dataset: Dataset
    fast: SyntheticBackend
    slow: SyntheticBackend
    score_tables: Dict[str, ScoreTable]

    @property
    def score_table(self) -> ScoreTable:
        return self.score_tables[CLASS_AGNOSTIC]

    def __iter__(self) -> Iterator:
        return iter((self.dataset, self.fast, self.slow, self.score_table))


# ---------- Generation --------------------------------------------------- #


def _face_boxes(
    cfg: SynthBenchConfig, image_id: str, rng: np.random.Generator
) -> List[BoundingBox]:
    width, height = cfg.image_width, cfg.image_height
    count = 1 + int(rng.poisson(cfg.extra_faces_mean))
    median = cfg.size_median * count ** -cfg.crowd_exponent
    sizes = np.clip(
        np.exp(rng.normal(log(median), cfg.size_log_sigma, count)),
        cfg.min_face_size,
        cfg.max_face_size,
    )
    aspects = 1.0 + cfg.aspect_jitter * (2.0 * rng.random(count) - 1.0)
    scale = sqrt(width * height)

    placed: List[BoundingBox] = []
    for k in range(count):
        side = sizes[k] * scale
        w = min(side * sqrt(aspects[k]), float(width))
        h = min(side / sqrt(aspects[k]), float(height))
        for _ in range(cfg.placement_retries):
            x = rng.uniform(0.0, width - w)
            y = rng.uniform(0.0, height - h)
            box = BoundingBox(x, y, x + w, y + h)
            if all(iou(box, other) == 0.0 for other in placed):
                placed.append(box)
                break
        else:
            raise BenchmarkError(
                f'image {image_id}: could not place face {k + 1} of {count} '
                f'after {cfg.placement_retries} attempts'
            )
    return placed


def _detector_pair(cfg: SynthBenchConfig) -> Tuple[SyntheticDetectorConfig, SyntheticDetectorConfig]:
    fast_seed = derive_seed(cfg.master_seed, 'fast-detector')
    slow_seed = fast_seed if cfg.shared_draws else derive_seed(cfg.master_seed, 'slow-detector')
    return replace(cfg.fast, seed=fast_seed), replace(cfg.slow, seed=slow_seed)


def _expected_misses(fast: SyntheticDetectorConfig, image: ImageRecord) -> float:
    scale = sqrt(image.area)
    return sum(
        1.0 - fast.detection_probability(sqrt(face.box.area) / scale) for face in image.faces
    )


def generate_benchmark(cfg: SynthBenchConfig) -> SyntheticBenchmark:
    """
    Build a benchmark from its config; the same config always yields the
    same dataset, detectors and score tables.

    Raises:
        BenchmarkError: a face could not be placed without overlap
    """
    images = []
    for i in range(cfg.image_count):
        image_id = f'img_{i:05d}'
        rng = stream(cfg.master_seed, 'image', image_id)
        faces = tuple(
            GroundTruthFace(box, FaceSource.RECTANGLE)
            for box in _face_boxes(cfg, image_id, rng)
        )
        images.append(ImageRecord(image_id, cfg.image_width, cfg.image_height, faces))
    dataset = Dataset(f'synthetic-{cfg.master_seed}', tuple(images))

    fast_cfg, slow_cfg = _detector_pair(cfg)
    if cfg.shared_draws and not is_dominant_pair(fast_cfg, slow_cfg):
        logger.warning('Shared draws requested but the detector pair is not dominant')

    fast = SyntheticBackend(
        fast_cfg, BackendConfig('fast', cfg.confidence_threshold, cfg.fast_latency_s)
    )
    slow = SyntheticBackend(
        slow_cfg, BackendConfig('slow', cfg.confidence_threshold, cfg.slow_latency_s)
    )

    tables = {}
    for name, noise in (
        (CLASS_AGNOSTIC, cfg.class_agnostic_noise),
        (PERSON_AWARE, cfg.person_aware_noise),
    ):
        scores = {
            image.id: _expected_misses(fast_cfg, image)
            + noise * float(stream(cfg.master_seed, 'difficulty', name, image.id).standard_normal())
            for image in dataset
        }
        tables[name] = ScoreTable(name, scores)

    logger.info(
        'Generated synthetic benchmark %s: %d images, %d faces (mean %.2f per image)',
        dataset.name,
        len(dataset),
        dataset.num_faces,
        dataset.num_faces / len(dataset) if len(dataset) else 0.0,
    )
    return SyntheticBenchmark(dataset, fast, slow, tables)
