"""Builders shared by the test modules"""

from typing import Dict, Iterable, Sequence, Tuple
from core.dataset import Dataset, GroundTruthFace, ImageRecord
from core.detectors import BackendConfig, Detection, DetectorOutput, PrecomputedBackend, sort_detections
from core.geometry import BoundingBox

Box = Tuple[float, float, float, float]


def image(image_id: str, faces: Iterable[Box] = (), width: int = 100, height: int = 100) -> ImageRecord:
    return ImageRecord(
        image_id, width, height, tuple(GroundTruthFace(BoundingBox(*f)) for f in faces)
    )


def dataset(*images: ImageRecord, name: str = 'test') -> Dataset:
    return Dataset(name, tuple(images))


def output(image_id: str, dets: Sequence[Tuple[Box, float]], latency: float = 0.0) -> DetectorOutput:
    return DetectorOutput(
        image_id, sort_detections(Detection(BoundingBox(*b), c) for b, c in dets), latency
    )


def precomputed(
    records: Dict[str, Sequence[Tuple[Box, float]]], name: str = 'det', threshold: float = 0.0
) -> PrecomputedBackend:
    return PrecomputedBackend(
        {k: [Detection(BoundingBox(*b), c) for b, c in v] for k, v in records.items()},
        BackendConfig(name, threshold),
    )
