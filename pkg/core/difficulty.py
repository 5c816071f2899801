"""
Splitting Criteria and Threshold Calibration
============================================

Per-image hardness scores that decide whether an image goes to the fast or
the slow detector. Every criterion is oriented so that a higher value means
a harder image; routing then reduces to the single test value <= t.

Criteria:
- external_difficulty(table): a predicted difficulty score, taken as-is
- num_faces: n, the number of faces the fast detector found
- avg_face_size: -avg, minus the mean relative size of those faces
- faces_over_avg_size: n / avg

The three detector-based criteria return +inf when the fast detector found
nothing. Such images are hard for any p < 1: rank_split never marks them
easy, even when that leaves fewer than round(p * N) easy images, and
calibrate_threshold stops at the largest finite value. Only p = 1 sends
them to the fast detector.
"""

from __future__ import annotations
from dataclasses import dataclass
from enum import Enum
from math import ceil, floor, inf, isfinite
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import io
import logging
import numpy as np
import pandas as pd
from core.dataset import ImageRecord, TextSource, relative_face_size
from core.detectors import DetectorOutput
from core.errors import ConfigurationError, InputFormatError, MissingImageError

logger = logging.getLogger(__name__)

# Slack for p * N landing a hair above an integer in floating point
_COUNT_EPS = 1e-9


class CriterionFamily(str, Enum):
    EXTERNAL_DIFFICULTY = 'difficulty'
    NUM_FACES = 'num_faces'
    AVG_FACE_SIZE = 'avg_face_size'
    FACES_OVER_AVG_SIZE = 'faces_over_avg_size'


_ALIASES = {
    'n': CriterionFamily.NUM_FACES,
    'num_faces': CriterionFamily.NUM_FACES,
    'avg': CriterionFamily.AVG_FACE_SIZE,
    'avg_face_size': CriterionFamily.AVG_FACE_SIZE,
    'n/avg': CriterionFamily.FACES_OVER_AVG_SIZE,
    'faces_over_avg_size': CriterionFamily.FACES_OVER_AVG_SIZE,
}


@dataclass(frozen=True)
class CriterionKind:
    """A splitting criterion; external_difficulty carries the score table name"""

    family: CriterionFamily
    table_name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'family', CriterionFamily(self.family))
        if self.family is CriterionFamily.EXTERNAL_DIFFICULTY:
            if not self.table_name:
                raise ConfigurationError('difficulty criterion needs a score table name')
        elif self.table_name is not None:
            raise ConfigurationError(
                f'{self.family.value} is computed from the fast detector and takes no table'
            )

    @classmethod
    def external(cls, table_name: str) -> CriterionKind:
        return cls(CriterionFamily.EXTERNAL_DIFFICULTY, table_name)

    @classmethod
    def num_faces(cls) -> CriterionKind:
        return cls(CriterionFamily.NUM_FACES)

    @classmethod
    def avg_face_size(cls) -> CriterionKind:
        return cls(CriterionFamily.AVG_FACE_SIZE)

    @classmethod
    def faces_over_avg_size(cls) -> CriterionKind:
        return cls(CriterionFamily.FACES_OVER_AVG_SIZE)

    @classmethod
    def detector_based(cls) -> Tuple[CriterionKind, ...]:
        return (cls.num_faces(), cls.avg_face_size(), cls.faces_over_avg_size())

    @classmethod
    def parse(cls, text: str) -> CriterionKind:
        """
        Parse 'num_faces' / 'n', 'avg_face_size' / 'avg',
        'faces_over_avg_size' / 'n/avg' or 'difficulty:<table>'.
        """
        text = text.strip()
        if ':' in text:
            prefix, _, table = text.partition(':')
            if prefix in ('difficulty', 'external_difficulty') and table:
                return cls.external(table)
            raise ConfigurationError(f'Unknown criterion {text!r}')
        try:
            return cls(_ALIASES[text])
        except KeyError:
            raise ConfigurationError(
                f'Unknown criterion {text!r}; expected one of {sorted(_ALIASES)} '
                "or 'difficulty:<table>'"
            ) from None

    @property
    def is_detector_based(self) -> bool:
        return self.family is not CriterionFamily.EXTERNAL_DIFFICULTY

    @property
    def name(self) -> str:
        if self.family is CriterionFamily.EXTERNAL_DIFFICULTY:
            return f'difficulty:{self.table_name}'
        return self.family.value

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class ScoreTable:
    """Predicted difficulty per image id; lookups of unknown ids fail"""

    name: str
    scores: Mapping[str, float]

    def __post_init__(self):
        object.__setattr__(self, 'scores', dict(self.scores))
        for image_id, score in self.scores.items():
            if not isfinite(score):
                raise ValueError(f'Score of {image_id} in {self.name} must be finite')

    def __len__(self) -> int:
        return len(self.scores)

    def __contains__(self, image_id: object) -> bool:
        return image_id in self.scores

    def lookup(self, image_id: str) -> float:
        try:
            return self.scores[image_id]
        except KeyError:
            raise MissingImageError(image_id, f'score table {self.name}') from None


@dataclass(frozen=True)
class CriterionFeatures:
    """Face count and mean relative size measured on a fast-detector output"""

    n: int
    avg: Optional[float] = None

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f'Face count must be non-negative, got {self.n}')
        if (self.n > 0) != (self.avg is not None):
            raise ValueError('avg is present exactly when n > 0')
        if self.avg is not None and not 0.0 < self.avg <= 1.0:
            raise ValueError(f'avg must be in (0, 1], got {self.avg}')


@dataclass(frozen=True)
class CriterionScore:
    """Hardness of one image; higher is harder"""

    image_id: str
    value: float

    @property
    def is_sentinel(self) -> bool:
        return self.value == inf


# ---------- Scoring ------------------------------------------------------ #


def load_score_table(text: TextSource, name: str = 'difficulty') -> ScoreTable:
    """
    Read a score table CSV with header "id,score".

    Raises:
        InputFormatError: missing columns, a non-numeric or non-finite score,
            or a duplicate id (named in the message)
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    try:
        frame = pd.read_csv(stream, dtype={'id': str}, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        return ScoreTable(name, {})
    except pd.errors.ParserError as e:
        raise InputFormatError(f'malformed CSV ({e})', source=name) from None

    missing = {'id', 'score'} - set(frame.columns)
    if missing:
        raise InputFormatError(f'score table lacks columns {sorted(missing)}', 1, name)

    dup = frame['id'].duplicated()
    if dup.any():
        first = frame.index[dup.to_numpy()][0]
        raise InputFormatError(
            f"duplicate image id {frame.at[first, 'id']}", int(first) + 2, name
        )

    scores = pd.to_numeric(frame['score'], errors='coerce')
    bad = scores.isna() | ~np.isfinite(scores.to_numpy(dtype=float, na_value=np.nan))
    if bad.any():
        first = frame.index[bad.to_numpy()][0]
        raise InputFormatError(
            f"score of {frame.at[first, 'id']} is not a finite number: "
            f"{frame.at[first, 'score']!r}",
            int(first) + 2,
            name,
        )

    table = ScoreTable(name, dict(zip(frame['id'].astype(str), scores.astype(float))))
    logger.info('Loaded score table %s: %d images', name, len(table))
    return table


def criterion_features(output: DetectorOutput, image: ImageRecord) -> CriterionFeatures:
    """n = number of detections; avg = their mean relative size"""
    if output.image_id != image.id:
        raise ValueError(f'Output of {output.image_id} does not belong to {image.id}')
    n = len(output.detections)
    if n == 0:
        return CriterionFeatures(0)
    sizes = [relative_face_size(d.box, image) for d in output.detections]
    return CriterionFeatures(n, min(1.0, float(np.mean(sizes))))


def criterion_value(
    kind: CriterionKind,
    image_id: str,
    features: Optional[CriterionFeatures] = None,
    table: Optional[ScoreTable] = None,
) -> CriterionScore:
    """
    Hardness of an image under a criterion.

    Detector-based kinds need the features of the fast output, the external
    kind needs its score table.

    Raises:
        MissingImageError: the score table has no entry for the image
        ConfigurationError: the required input was not supplied
    """
    family = kind.family
    if family is CriterionFamily.EXTERNAL_DIFFICULTY:
        if table is None:
            raise ConfigurationError(f'criterion {kind} needs score table {kind.table_name}')
        return CriterionScore(image_id, float(table.lookup(image_id)))

    if features is None:
        raise ConfigurationError(f'criterion {kind} needs fast-detector features')
    if features.n == 0:
        return CriterionScore(image_id, inf)

    if family is CriterionFamily.NUM_FACES:
        value = float(features.n)
    elif family is CriterionFamily.AVG_FACE_SIZE:
        value = -features.avg
    else:
        value = features.n / features.avg
    return CriterionScore(image_id, value)


# ---------- Splitting ---------------------------------------------------- #


def easy_count(p: float, n: int) -> int:
    """round(p * n) with halves rounded up, so both partitions add up to n"""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f'Easy fraction must be in [0,1], got {p}')
    return min(n, max(0, floor(p * n + 0.5 + _COUNT_EPS)))


def calibrate_threshold(values: Sequence[CriterionScore], p: float) -> float:
    """
    Smallest threshold t with at least ceil(p * N) values <= t.

    p = 0 gives -inf (nothing easy), p = 1 gives +inf (everything easy).
    With ties at the cutoff more than ceil(p * N) images may end up easy.
    Below p = 1 the threshold never reaches the +inf sentinel: when the
    cutoff falls on a sentinel, t is the largest finite value (-inf if
    there is none) and fewer images end up easy.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f'Easy fraction must be in [0,1], got {p}')
    if p == 0.0:
        return -inf
    if p == 1.0:
        return inf
    if not values:
        raise ValueError('Cannot calibrate a threshold on an empty value list')

    ordered = sorted(v.value for v in values)
    k = max(1, ceil(p * len(ordered) - _COUNT_EPS))
    t = ordered[k - 1]
    if t == inf:
        t = max((v for v in ordered if v != inf), default=-inf)
        logger.info(
            'Cutoff for p=%s falls on the no-detection sentinel; threshold capped at %s',
            p,
            t,
        )
    return t


def rank_split(
    values: Sequence[CriterionScore], p: float
) -> Tuple[List[str], List[str]]:
    """
    The round(p * N) lowest-valued images are easy, ties broken by id.

    Below p = 1 sentinel images stay hard even if that leaves the easy set
    short of round(p * N); the shortfall is logged and shows in the size of
    the easy set.

    Returns (easy ids, hard ids), each in id order.
    """
    k = easy_count(p, len(values))
    ranked = sorted(values, key=lambda v: (v.value, v.image_id))
    chosen = ranked[:k] if p == 1.0 else [v for v in ranked[:k] if not v.is_sentinel]
    if len(chosen) < k:
        logger.info(
            'Rank split at p=%s: %d of %d easy slots left empty by no-detection sentinels',
            p,
            k - len(chosen),
            k,
        )
    easy_set = {v.image_id for v in chosen}
    easy = sorted(easy_set)
    hard = sorted(v.image_id for v in values if v.image_id not in easy_set)
    return easy, hard


def threshold_split(
    values: Sequence[CriterionScore], t: float
) -> Tuple[List[str], List[str]]:
    """Images with value <= t are easy; returns (easy ids, hard ids)"""
    easy = sorted(v.image_id for v in values if v.value <= t)
    hard = sorted(v.image_id for v in values if not v.value <= t)
    return easy, hard


def resolve_tables(
    criteria: Sequence[CriterionKind], tables: Mapping[str, ScoreTable]
) -> Dict[str, ScoreTable]:
    """Check that every external criterion names a loaded table"""
    missing = sorted(
        {c.table_name for c in criteria if not c.is_detector_based} - set(tables)
    )
    if missing:
        raise ConfigurationError(
            f'No score table loaded for {missing}; loaded: {sorted(tables)}'
        )
    return dict(tables)
