"""
Ground-Truth Datasets and Annotation Parsers
============================================

Images with labelled faces, held in deterministic (lexicographic id) order.

Two on-disk formats are understood:
- jsonl: {"id": str, "width": int, "height": int, "faces": [[x0, y0, x1, y1], ...]}
- fddb-ellipse: blocks of (image id; face count; count lines of
  "semi_major semi_minor angle center_x center_y 1")

Ellipses are converted to their tight axis-aligned boxes on ingest and every
box is clamped to the image extent, since public annotations often overflow
the image border.
"""

from __future__ import annotations
from dataclasses import dataclass, field
from enum import Enum
from math import ceil, pi, sqrt
from typing import Dict, Iterator, List, Mapping, Optional, TextIO, Tuple, Union
import io
import json
import logging
import pandas as pd
from core.errors import InputFormatError, MissingImageError
from core.geometry import BoundingBox, EllipseAnnotation, ellipse_to_box

logger = logging.getLogger(__name__)

TextSource = Union[str, TextIO]
ImageSizes = Mapping[str, Tuple[int, int]]

# Tolerance for "box lies inside the image" after clamping
_EXTENT_EPS = 1e-9


class FaceSource(str, Enum):
    RECTANGLE = 'rectangle'
    CONVERTED_ELLIPSE = 'converted-ellipse'


class DatasetFormat(str, Enum):
    JSONL = 'jsonl'
    FDDB_ELLIPSE = 'fddb-ellipse'


@dataclass(frozen=True)
class GroundTruthFace:
    """A labelled face"""

    box: BoundingBox
    source: FaceSource = FaceSource.RECTANGLE


@dataclass(frozen=True)
class ImageRecord:
    """An annotated test image (pixels are never read)"""

    id: str
    width: int
    height: int
    faces: Tuple[GroundTruthFace, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValueError('Image id must be a non-empty string')
        for dim_name, dim in (('width', self.width), ('height', self.height)):
            if isinstance(dim, bool) or not isinstance(dim, int) or dim <= 0:
                raise ValueError(
                    f'Image {self.id}: {dim_name} must be a positive integer, got {dim!r}'
                )
        object.__setattr__(self, 'faces', tuple(self.faces))
        for face in self.faces:
            b = face.box
            if (
                b.x_min < -_EXTENT_EPS
                or b.y_min < -_EXTENT_EPS
                or b.x_max > self.width + _EXTENT_EPS
                or b.y_max > self.height + _EXTENT_EPS
            ):
                raise ValueError(
                    f'Image {self.id}: face box {b.as_tuple()} exceeds '
                    f'{self.width}x{self.height}'
                )

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def boxes(self) -> List[BoundingBox]:
        return [face.box for face in self.faces]


@dataclass(frozen=True)
class Dataset:
    """Named collection of images, iterated in lexicographic id order"""

    name: str
    images: Tuple[ImageRecord, ...] = ()
    _index: Dict[str, ImageRecord] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )

    def __post_init__(self):
        ordered = tuple(sorted(self.images, key=lambda img: img.id))
        index: Dict[str, ImageRecord] = {}
        for image in ordered:
            if image.id in index:
                raise ValueError(f'Duplicate image id in dataset: {image.id}')
            index[image.id] = image
        object.__setattr__(self, 'images', ordered)
        object.__setattr__(self, '_index', index)

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self) -> Iterator[ImageRecord]:
        return iter(self.images)

    def __contains__(self, image_id: object) -> bool:
        return image_id in self._index

    def __getitem__(self, image_id: str) -> ImageRecord:
        try:
            return self._index[image_id]
        except KeyError:
            raise MissingImageError(image_id, f'dataset {self.name}') from None

    @property
    def ids(self) -> List[str]:
        return [image.id for image in self.images]

    @property
    def num_faces(self) -> int:
        return sum(len(image.faces) for image in self.images)


def relative_face_size(box: BoundingBox, image: ImageRecord) -> float:
    """
    Scale-invariant face size: sqrt(box area / image area).

    A 10x10 face in a 100x100 image has size 0.1, as does a 20x5 face.
    """
    return sqrt(box.area / (image.width * image.height))


# ---------- Parsing ------------------------------------------------------ #


def iter_lines(text: TextSource) -> Iterator[Tuple[int, str]]:
    stream = io.StringIO(text) if isinstance(text, str) else text
    for line_no, raw in enumerate(stream, start=1):
        yield line_no, raw.strip()


def _as_positive_int(value: object, what: str, line: int, source: str) -> int:
    if isinstance(value, bool):
        raise InputFormatError(f'{what} must be an integer, got {value!r}', line, source)
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    if not isinstance(value, int) or value <= 0:
        raise InputFormatError(
            f'{what} must be a positive integer, got {value!r}', line, source
        )
    return value


def _clamp_face(
    box: BoundingBox,
    face_source: FaceSource,
    image_id: str,
    width: int,
    height: int,
    line: int,
    source: str,
) -> GroundTruthFace:
    try:
        clamped = box.clamped(width, height)
    except ValueError:
        raise InputFormatError(
            f'image {image_id}: face {box.as_tuple()} has zero area inside '
            f'{width}x{height} after clamping',
            line,
            source,
        ) from None
    if clamped != box:
        logger.debug('Clamped face %s of image %s to %s', box, image_id, clamped)
    return GroundTruthFace(clamped, face_source)


def _parse_jsonl(text: TextSource, source: str) -> List[ImageRecord]:
    images: List[ImageRecord] = []
    seen: Dict[str, int] = {}

    for line_no, line in iter_lines(text):
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise InputFormatError(f'invalid JSON ({e.msg})', line_no, source) from None
        if not isinstance(obj, dict):
            raise InputFormatError('expected a JSON object', line_no, source)

        image_id = obj.get('id')
        if not isinstance(image_id, str) or not image_id:
            raise InputFormatError("missing or non-string 'id'", line_no, source)
        if image_id in seen:
            raise InputFormatError(
                f'duplicate image id {image_id} (first seen on line {seen[image_id]})',
                line_no,
                source,
            )
        seen[image_id] = line_no

        width = _as_positive_int(obj.get('width'), 'width', line_no, source)
        height = _as_positive_int(obj.get('height'), 'height', line_no, source)
        raw_faces = obj.get('faces', [])
        if not isinstance(raw_faces, list):
            raise InputFormatError("'faces' must be a list", line_no, source)

        faces = []
        for raw in raw_faces:
            if (
                not isinstance(raw, list)
                or len(raw) != 4
                or not all(
                    isinstance(c, (int, float)) and not isinstance(c, bool) for c in raw
                )
            ):
                raise InputFormatError(
                    f'face must be [x_min, y_min, x_max, y_max], got {raw!r}',
                    line_no,
                    source,
                )
            try:
                box = BoundingBox(*(float(c) for c in raw))
            except ValueError as e:
                raise InputFormatError(
                    f'image {image_id}: {e}', line_no, source
                ) from None
            faces.append(
                _clamp_face(
                    box, FaceSource.RECTANGLE, image_id, width, height, line_no, source
                )
            )

        images.append(ImageRecord(image_id, width, height, tuple(faces)))

    return images


def _parse_ellipse_line(line: str, line_no: int, source: str) -> EllipseAnnotation:
    parts = line.split()
    if len(parts) not in (5, 6):
        raise InputFormatError(
            f'expected "semi_major semi_minor angle center_x center_y 1", got {line!r}',
            line_no,
            source,
        )
    try:
        a, b, angle, cx, cy = (float(p) for p in parts[:5])
    except ValueError:
        raise InputFormatError(f'non-numeric ellipse field in {line!r}', line_no, source) from None
    if a < b:
        # Same ellipse, axes swapped
        a, b, angle = b, a, angle + pi / 2
    try:
        return EllipseAnnotation(cx, cy, a, b, angle)
    except ValueError as e:
        raise InputFormatError(str(e), line_no, source) from None


def _parse_fddb(
    text: TextSource, source: str, image_sizes: Optional[ImageSizes]
) -> List[ImageRecord]:
    images: List[ImageRecord] = []
    seen: Dict[str, int] = {}
    lines = (item for item in iter_lines(text) if item[1])

    for line_no, image_id in lines:
        if image_id in seen:
            raise InputFormatError(
                f'duplicate image id {image_id} (first seen on line {seen[image_id]})',
                line_no,
                source,
            )
        seen[image_id] = line_no

        count_line = next(lines, None)
        if count_line is None:
            raise InputFormatError(
                f'image {image_id}: missing face count', line_no + 1, source
            )
        count_no, count_text = count_line
        try:
            count = int(count_text)
        except ValueError:
            raise InputFormatError(
                f'face count must be an integer, got {count_text!r}', count_no, source
            ) from None
        if count < 0:
            raise InputFormatError(f'negative face count {count}', count_no, source)

        boxes: List[Tuple[BoundingBox, int]] = []
        for k in range(count):
            item = next(lines, None)
            if item is None:
                raise InputFormatError(
                    f'image {image_id}: expected {count} ellipses, got {k}',
                    count_no + k + 1,
                    source,
                )
            e_no, e_text = item
            boxes.append((ellipse_to_box(_parse_ellipse_line(e_text, e_no, source)), e_no))

        if image_sizes is not None and image_id in image_sizes:
            width, height = image_sizes[image_id]
        else:
            width = max(1, ceil(max((b.x_max for b, _ in boxes), default=1.0)))
            height = max(1, ceil(max((b.y_max for b, _ in boxes), default=1.0)))
            logger.debug(
                'No size for %s; using annotation extent %dx%d', image_id, width, height
            )

        faces = tuple(
            _clamp_face(
                box, FaceSource.CONVERTED_ELLIPSE, image_id, width, height, e_no, source
            )
            for box, e_no in boxes
        )
        images.append(ImageRecord(image_id, int(width), int(height), faces))

    return images


def parse_dataset(
    text: TextSource,
    format: Union[DatasetFormat, str] = DatasetFormat.JSONL,
    name: str = 'dataset',
    image_sizes: Optional[ImageSizes] = None,
) -> Dataset:
    """
    Parse an annotation stream into a Dataset.

    Args:
        text: the whole file as a string, or an open text stream
        format: 'jsonl' or 'fddb-ellipse'
        name: dataset name, also used to label parse errors
        image_sizes: optional id -> (width, height); only used by fddb-ellipse,
            whose annotations carry no image size

    Raises:
        InputFormatError: malformed line, duplicate id, or a face that has
            zero area after clamping (message names the image)
    """
    fmt = DatasetFormat(format)
    if fmt is DatasetFormat.JSONL:
        images = _parse_jsonl(text, name)
    else:
        images = _parse_fddb(text, name, image_sizes)

    logger.info(
        'Parsed %s dataset %s: %d images, %d faces',
        fmt.value,
        name,
        len(images),
        sum(len(img.faces) for img in images),
    )
    return Dataset(name, tuple(images))


def dump_dataset(dataset: Dataset) -> str:
    """Serialize to the jsonl format (one image per line)"""
    lines = [
        json.dumps({
            'id': image.id,
            'width': image.width,
            'height': image.height,
            'faces': [list(face.box.as_tuple()) for face in image.faces],
        })
        for image in dataset
    ]
    return ''.join(line + '\n' for line in lines)


def load_image_sizes(text: TextSource) -> Dict[str, Tuple[int, int]]:
    """Read a CSV with header id,width,height"""
    stream = io.StringIO(text) if isinstance(text, str) else text
    try:
        frame = pd.read_csv(stream, dtype={'id': str})
    except pd.errors.EmptyDataError:
        return {}
    missing = {'id', 'width', 'height'} - set(frame.columns)
    if missing:
        raise InputFormatError(f'size table lacks columns {sorted(missing)}', 1, 'sizes')
    if frame['id'].duplicated().any():
        dup = frame.loc[frame['id'].duplicated(), 'id'].iloc[0]
        raise InputFormatError(f'duplicate image id {dup}', source='sizes')
    return {
        str(row.id): (int(row.width), int(row.height))
        for row in frame.itertuples(index=False)
    }
