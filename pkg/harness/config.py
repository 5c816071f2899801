"""
Experiment configuration: one declarative document (YAML or JSON) that
every CLI flag can override, validated by pydantic and turned into a
loaded core.sweep.Experiment.
"""

from __future__ import annotations
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import logging
import os
import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator
from core.benchmark import SynthBenchConfig, generate_benchmark
from core.dataset import DatasetFormat, load_image_sizes, parse_dataset
from core.detectors import (
    BackendConfig,
    DetectorBackend,
    SyntheticBackend,
    SyntheticDetectorConfig,
    load_precomputed,
)
from core.difficulty import CriterionKind, ScoreTable, load_score_table
from core.errors import ConfigurationError
from core.evaluation import DEFAULT_IOU_THRESHOLD
from core.report import ReportFormat
from core.router import TimingModel
from core.sweep import DEFAULT_SPLITS, Experiment

logger = logging.getLogger(__name__)

ENV_LOG_LEVEL = 'EASYHARD_LOG_LEVEL'
ENV_SEED = 'EASYHARD_SEED'

SYNTH_PREFIX = 'synth:'
FILE_THRESHOLD = 0.5
SYNTH_THRESHOLD = 0.0
_SYNTH_KEYS = {
    'q': 'quality',
    'quality': 'quality',
    's0': 'size_midpoint',
    'size_midpoint': 'size_midpoint',
    'gamma': 'size_slope',
    'size_slope': 'size_slope',
    'fp': 'false_positive_rate',
    'false_positive_rate': 'false_positive_rate',
    'eta': 'localization_noise',
    'localization_noise': 'localization_noise',
    'c_tp': 'tp_confidence_floor',
    'tp_confidence_floor': 'tp_confidence_floor',
    'c_fp': 'fp_confidence_ceiling',
    'fp_confidence_ceiling': 'fp_confidence_ceiling',
    'seed': 'seed',
}


class ExperimentConfig(BaseModel):
    """
    Declarative sweep description. Without a dataset the synthetic benchmark
    (section `synthetic`) provides the dataset, both detectors and the
    class_agnostic / person_aware score tables.
    """

    dataset: Optional[str] = Field(None, description='Ground-truth file')
    format: DatasetFormat = DatasetFormat.JSONL
    sizes: Optional[str] = Field(None, description='id,width,height CSV for fddb-ellipse')
    synthetic: Optional[SynthBenchConfig] = None
    fast: Optional[str] = Field(None, description="Detections file or 'synth:k=v,...'")
    slow: Optional[str] = None
    confidence_threshold: Optional[float] = Field(
        None, ge=0, le=1, description='Detector confidence threshold; 0.5 for files, 0 for synth: specs'
    )
    criteria: List[str] = Field(default_factory=lambda: ['all'])
    scores: List[str] = Field(default_factory=list, description='name=path or path')
    splits: List[float] = Field(default_factory=lambda: list(DEFAULT_SPLITS))
    timing: TimingModel = Field(default_factory=TimingModel.afw)
    runs: int = Field(5, ge=1)
    seed: int = Field(0, ge=0)
    iou_threshold: float = Field(DEFAULT_IOU_THRESHOLD, gt=0, lt=1)
    fp_axis_max: Optional[int] = Field(None, gt=0)
    max_workers: int = Field(1, ge=1)
    out: str = 'results'
    emit: List[ReportFormat] = Field(
        default_factory=lambda: [ReportFormat.CSV, ReportFormat.MARKDOWN, ReportFormat.PLOTDATA]
    )

    @field_validator('splits', mode='before')
    @classmethod
    def check_splits(cls, v: Any) -> Any:
        return parse_splits(v) if isinstance(v, (str, list, tuple)) else v

    @field_validator('timing', mode='before')
    @classmethod
    def parse_timing_text(cls, v: Any) -> Any:
        return parse_timing(v) if isinstance(v, str) else v


# ---------- Parsing helpers ---------------------------------------------- #


def _key_values(text: str, what: str) -> Dict[str, str]:
    pairs = {}
    for item in filter(None, (s.strip() for s in text.split(','))):
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise ConfigurationError(f'{what}: expected key=value, got {item!r}')
        pairs[key.strip()] = value.strip()
    return pairs


def parse_timing(text: Union[str, TimingModel]) -> TimingModel:
    """'afw', 'fddb' or 'fast=0.28,slow=1.89,pred=0.05'"""
    if isinstance(text, TimingModel):
        return text
    preset = text.strip().lower()
    if preset == 'afw':
        return TimingModel.afw()
    if preset == 'fddb':
        return TimingModel.fddb()
    names = {'fast': 't_fast', 'slow': 't_slow', 'pred': 't_pred'}
    values = {}
    for key, value in _key_values(text, 'timing').items():
        if key not in names:
            raise ConfigurationError(f'timing: unknown key {key!r}; expected {sorted(names)}')
        try:
            values[names[key]] = float(value)
        except ValueError:
            raise ConfigurationError(f'timing: {key} must be a number, got {value!r}') from None
    try:
        return TimingModel(**values)
    except ValidationError as e:
        raise ConfigurationError(f'timing: {e}') from None


def parse_splits(text: Union[str, Sequence[float]]) -> List[float]:
    """'1.0,0.75,0.5' -> [1.0, 0.75, 0.5]; every fraction must lie in [0,1]"""
    if isinstance(text, str):
        items = [s.strip() for s in text.split(',') if s.strip()]
    else:
        items = list(text)
    values = []
    for item in items:
        try:
            values.append(float(item))
        except (TypeError, ValueError):
            raise ConfigurationError(f'splits: expected numbers, got {item!r}') from None
    if not values:
        raise ConfigurationError('splits: no fractions given')
    bad = [p for p in values if not 0.0 <= p <= 1.0]
    if bad:
        raise ConfigurationError(f'split fractions must be in [0,1], got {bad}')
    return values


def parse_synthetic_spec(text: str) -> SyntheticDetectorConfig:
    """'synth:q=0.9,s0=0.05,gamma=40,fp=0.3,eta=0.05,seed=7'"""
    if not text.startswith(SYNTH_PREFIX):
        raise ConfigurationError(f'not a synthetic detector spec: {text!r}')
    values: Dict[str, Any] = {}
    for key, value in _key_values(text[len(SYNTH_PREFIX):], 'synthetic detector').items():
        if key not in _SYNTH_KEYS:
            raise ConfigurationError(f'synthetic detector: unknown key {key!r}')
        values[_SYNTH_KEYS[key]] = value
    try:
        return SyntheticDetectorConfig(**values)
    except ValidationError as e:
        raise ConfigurationError(f'synthetic detector {text!r}: {e}') from None


def parse_score_arg(text: str) -> Tuple[str, str]:
    """'name=path' or a bare path, named after the file stem"""
    name, sep, path = text.partition('=')
    if sep and name and not Path(text).exists():
        return name.strip(), path.strip()
    return Path(text).stem, text


def parse_criteria(names: List[str], table_names: List[str]) -> List[CriterionKind]:
    """'all' expands to every score table, then the three detector-based criteria"""
    kinds: List[CriterionKind] = []
    for item in names:
        for name in filter(None, (s.strip() for s in item.split(','))):
            if name == 'all':
                kinds += [CriterionKind.external(t) for t in table_names]
                kinds += list(CriterionKind.detector_based())
            else:
                kinds.append(CriterionKind.parse(name))
    unique: List[CriterionKind] = []
    for kind in kinds:
        if kind not in unique:
            unique.append(kind)
    return unique


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a YAML or JSON config document (JSON is valid YAML)"""
    with open(path, 'r', encoding='utf-8') as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigurationError(f'{path}: {e}') from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f'{path}: top level must be a mapping')
    return data


def build_config(file_values: Dict[str, Any], overrides: Dict[str, Any]) -> ExperimentConfig:
    """
    Merge file values, environment and flag overrides (flags win) and
    validate. EASYHARD_SEED sets the seed unless file or flags do.
    """
    merged = dict(file_values)
    if 'seed' not in merged and os.getenv(ENV_SEED):
        merged['seed'] = os.environ[ENV_SEED]
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigurationError(f'invalid configuration: {e}') from None


# ---------- Loading ------------------------------------------------------ #


def _resolve(path: str, base_dir: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base_dir / p


def _backend(
    spec: str, label: str, latency: float, threshold: Optional[float], base_dir: Path
) -> DetectorBackend:
    if spec.startswith(SYNTH_PREFIX):
        synth = parse_synthetic_spec(spec)
        config = BackendConfig(label, SYNTH_THRESHOLD if threshold is None else threshold, latency)
        if config.confidence_threshold > synth.fp_confidence_ceiling:
            logger.warning(
                '%s detector: threshold %s is above the false-positive confidence ceiling %s; '
                'every simulated false positive is filtered',
                label, config.confidence_threshold, synth.fp_confidence_ceiling,
            )
        return SyntheticBackend(synth, config)
    config = BackendConfig(label, FILE_THRESHOLD if threshold is None else threshold, latency)
    path = _resolve(spec, base_dir)
    with open(path, 'r', encoding='utf-8') as f:
        return load_precomputed(f, config, source=path.name)


def build_experiment(cfg: ExperimentConfig, base_dir: Union[str, Path] = '.') -> Experiment:
    """
    Load everything a config names.

    Raises:
        ConfigurationError: half-specified sources or unknown criteria
        InputFormatError, OSError: unreadable or malformed input files
    """
    base = Path(base_dir)
    tables: Dict[str, ScoreTable] = {}

    if cfg.dataset is None:
        if cfg.fast or cfg.slow:
            raise ConfigurationError('--fast/--slow need --dataset; omit all three for the synthetic benchmark')
        bench_cfg = cfg.synthetic or SynthBenchConfig(master_seed=cfg.seed)
        bench = generate_benchmark(bench_cfg)
        dataset, fast, slow = bench.dataset, bench.fast, bench.slow
        tables.update(bench.score_tables)
    else:
        if not (cfg.fast and cfg.slow):
            raise ConfigurationError('a dataset needs both --fast and --slow detectors')
        sizes = None
        if cfg.sizes:
            with open(_resolve(cfg.sizes, base), 'r', encoding='utf-8') as f:
                sizes = load_image_sizes(f)
        dataset_path = _resolve(cfg.dataset, base)
        with open(dataset_path, 'r', encoding='utf-8') as f:
            dataset = parse_dataset(f, cfg.format, dataset_path.stem, sizes)
        t = cfg.timing
        fast = _backend(cfg.fast, 'fast', t.t_fast, cfg.confidence_threshold, base)
        slow = _backend(cfg.slow, 'slow', t.t_slow, cfg.confidence_threshold, base)

    for item in cfg.scores:
        name, path = parse_score_arg(item)
        with open(_resolve(path, base), 'r', encoding='utf-8') as f:
            tables[name] = load_score_table(f, name)

    criteria = parse_criteria(cfg.criteria, sorted(tables))
    if not criteria:
        raise ConfigurationError('no splitting criteria selected')

    return Experiment(
        dataset=dataset,
        fast=fast,
        slow=slow,
        criteria=criteria,
        score_tables=tables,
        splits=cfg.splits,
        timing=cfg.timing,
        baseline_runs=cfg.runs,
        seed=cfg.seed,
        iou_threshold=cfg.iou_threshold,
        fp_axis_max=cfg.fp_axis_max,
        max_workers=cfg.max_workers,
    )
