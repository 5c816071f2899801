"""
Command-line entry point.

    python -m harness generate --out bench/ --images 500 --seed 3
    python -m harness sweep --dataset bench/dataset.jsonl \\
        --fast bench/fast.jsonl --slow bench/slow.jsonl \\
        --scores class_agnostic=bench/scores_class_agnostic.csv --criterion all
    python -m harness sweep --seed 3 --out results/     # synthetic benchmark
    python -m harness baseline --splits 0.75,0.5,0.25
    python -m harness eval --dataset bench/dataset.jsonl --detections bench/slow.jsonl
    python -m harness report --input results/result.json --emit markdown
    python -m harness cost --timing fddb

Exit codes: 0 success, 2 input or format error, 3 configuration error.
"""

from __future__ import annotations
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence
import argparse
import json
import logging
import os
import sys
from dotenv import load_dotenv
from pydantic import ValidationError
from core.benchmark import CLASS_AGNOSTIC, PERSON_AWARE, SynthBenchConfig, generate_benchmark
from core.dataset import dump_dataset, load_image_sizes, parse_dataset
from core.detectors import BackendConfig, dump_detections, load_precomputed
from core.errors import ConfigurationError, EvaluationError, InputFormatError, MissingImageError
from core.evaluation import evaluate_backend
from core.report import ReportFormat, emit_all, emit_report, render_cost_table, split_label
from core.sweep import SweepResult, random_baseline, run_sweep
from harness.config import (
    ENV_LOG_LEVEL,
    ExperimentConfig,
    build_config,
    build_experiment,
    load_config_file,
    parse_splits,
    parse_timing,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3


def _formats(text: str) -> List[str]:
    names = [s.strip() for s in text.split(',') if s.strip()]
    valid = {f.value for f in ReportFormat}
    bad = [n for n in names if n not in valid]
    if bad:
        raise argparse.ArgumentTypeError(f'unknown format(s) {bad}; choose from {sorted(valid)}')
    return names


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument('--config', help='YAML or JSON experiment document; flags override it')
    p.add_argument('--dataset', help='ground-truth file (omit for the synthetic benchmark)')
    p.add_argument('--format', choices=['jsonl', 'fddb-ellipse'], help='dataset format')
    p.add_argument('--sizes', help='id,width,height CSV for fddb-ellipse images')
    p.add_argument('--fast', help="detections file or 'synth:q=..,s0=..,gamma=..,fp=..,eta=..,seed=..'")
    p.add_argument('--slow', help='as --fast')
    p.add_argument('--threshold', type=float, dest='confidence_threshold',
                   help='detector confidence threshold (default 0.5 for files, 0 for synth: specs)')
    p.add_argument('--criterion', action='append', dest='criteria',
                   help="num_faces, avg_face_size, faces_over_avg_size, difficulty:<table> or all")
    p.add_argument('--scores', action='append', help='score table CSV, as name=path or path')
    p.add_argument('--splits', help='easy fractions, e.g. 1.0,0.75,0.5,0.25,0.0')
    p.add_argument('--timing', help="'afw', 'fddb' or fast=..,slow=..,pred=..")
    p.add_argument('--runs', type=int, help='random baseline runs (default 5)')
    p.add_argument('--seed', type=int, help='random baseline / benchmark seed')
    p.add_argument('--fp-axis-max', type=int, dest='fp_axis_max', help='ROC false-positive axis length')
    p.add_argument('--workers', type=int, dest='max_workers', help='detector threads')
    p.add_argument('--out', help='output directory')
    p.add_argument('--emit', type=_formats, help='csv,json,markdown,plotdata')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='easyhard', description='Easy-versus-hard routing between a fast and a slow detector'
    )
    parser.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING (default WARNING)')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('generate', help='write a synthetic benchmark to disk')
    gen.add_argument('--config', help='YAML/JSON synthetic benchmark settings')
    gen.add_argument('--images', type=int, help='image count')
    gen.add_argument('--seed', type=int, help='master seed')
    gen.add_argument('--out', default='benchmark', help='output directory')

    _add_experiment_flags(sub.add_parser('sweep', help='criteria x splits sweep plus baseline'))
    _add_experiment_flags(sub.add_parser('baseline', help='random-split baseline only'))

    ev = sub.add_parser('eval', help='metrics of one detections file')
    ev.add_argument('--dataset', required=True)
    ev.add_argument('--format', choices=['jsonl', 'fddb-ellipse'], default='jsonl')
    ev.add_argument('--sizes')
    ev.add_argument('--detections', required=True)
    ev.add_argument('--threshold', type=float, default=0.5)
    ev.add_argument('--fp-axis-max', type=int, dest='fp_axis_max')

    rep = sub.add_parser('report', help='re-render a saved result.json')
    rep.add_argument('--input', required=True)
    rep.add_argument('--emit', type=_formats, default=['markdown'])
    rep.add_argument('--out', help='directory to write into (default: stdout)')

    cost = sub.add_parser('cost', help='modelled time rows for a timing model')
    cost.add_argument('--timing', default='afw')
    cost.add_argument('--splits', default='1.0,0.75,0.5,0.25,0.0')
    return parser


def configure_logging(level: Optional[str]) -> None:
    level = (level or os.getenv(ENV_LOG_LEVEL) or 'WARNING').upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        stream=sys.stderr,
    )


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    file_values = load_config_file(args.config) if args.config else {}
    keys = (
        'dataset', 'format', 'sizes', 'fast', 'slow', 'confidence_threshold', 'criteria',
        'scores', 'splits', 'timing', 'runs', 'seed', 'fp_axis_max', 'max_workers', 'out', 'emit',
    )
    overrides: Dict[str, Any] = {k: getattr(args, k) for k in keys}
    return build_config(file_values, overrides)


def _write(out_dir: Path, files: Dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        with open(out_dir / name, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        logger.info('Wrote %s', out_dir / name)


# ---------- Commands ----------------------------------------------------- #


def cmd_generate(args: argparse.Namespace) -> int:
    values = load_config_file(args.config) if args.config else {}
    if args.images is not None:
        values['image_count'] = args.images
    if args.seed is not None:
        values['master_seed'] = args.seed
    bench = generate_benchmark(SynthBenchConfig(**values))

    files = {
        'dataset.jsonl': dump_dataset(bench.dataset),
        'fast.jsonl': dump_detections(bench.fast.detect(img) for img in bench.dataset),
        'slow.jsonl': dump_detections(bench.slow.detect(img) for img in bench.dataset),
    }
    for name in (CLASS_AGNOSTIC, PERSON_AWARE):
        table = bench.score_tables[name]
        rows = ''.join(f'{image_id},{table.scores[image_id]!r}\n' for image_id in bench.dataset.ids)
        files[f'scores_{name}.csv'] = 'id,score\n' + rows
    _write(Path(args.out), files)
    print(f'Wrote {len(bench.dataset)} images to {args.out}')
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    base_dir = Path(args.config).parent if args.config else Path('.')
    result = run_sweep(build_experiment(cfg, base_dir))
    files = {'result.json': result.model_dump_json(indent=2) + '\n'}
    files.update(emit_all(result, cfg.emit))
    _write(Path(cfg.out), files)
    if ReportFormat.MARKDOWN in cfg.emit:
        print(emit_report(result, ReportFormat.MARKDOWN))
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    base_dir = Path(args.config).parent if args.config else Path('.')
    exp = build_experiment(cfg, base_dir)
    lines = ['split,ap_mean,ap_std,disc_roc_mean,disc_roc_std,cont_roc_mean,cont_roc_std']
    for p in exp.splits:
        mean, std = random_baseline(
            exp.dataset, exp.fast, exp.slow, p, exp.baseline_runs, exp.seed,
            exp.iou_threshold, exp.fp_axis_max, exp.max_workers,
        )
        lines.append(
            f'{split_label(p)},{mean.ap:.4f},{std.ap:.4f},{mean.disc_roc:.4f},'
            f'{std.disc_roc:.4f},{mean.cont_roc:.4f},{std.cont_roc:.4f}'
        )
    text = '\n'.join(lines) + '\n'
    _write(Path(cfg.out), {'baseline.csv': text})
    print(text, end='')
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    sizes = None
    if args.sizes:
        with open(args.sizes, 'r', encoding='utf-8') as f:
            sizes = load_image_sizes(f)
    with open(args.dataset, 'r', encoding='utf-8') as f:
        dataset = parse_dataset(f, args.format, Path(args.dataset).stem, sizes)
    with open(args.detections, 'r', encoding='utf-8') as f:
        backend = load_precomputed(
            f, BackendConfig(Path(args.detections).stem, args.threshold), Path(args.detections).name
        )
    report = evaluate_backend(backend, dataset, fp_axis_max=args.fp_axis_max)
    print(json.dumps(report.model_dump(), indent=2))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    with open(args.input, 'r', encoding='utf-8') as f:
        try:
            result = SweepResult.model_validate_json(f.read())
        except ValidationError as e:
            raise InputFormatError(f'not a sweep result: {e}', source=args.input) from None
    files = emit_all(result, args.emit)
    if args.out:
        _write(Path(args.out), files)
    else:
        print('\n'.join(files.values()), end='')
    return EXIT_OK


def cmd_cost(args: argparse.Namespace) -> int:
    print(render_cost_table(parse_timing(args.timing), parse_splits(args.splits)), end='')
    return EXIT_OK


COMMANDS = {
    'generate': cmd_generate,
    'sweep': cmd_sweep,
    'baseline': cmd_baseline,
    'eval': cmd_eval,
    'report': cmd_report,
    'cost': cmd_cost,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ValidationError) as e:
        logger.error('Configuration error: %s', e)
        print(f'error: {e}', file=sys.stderr)
        return EXIT_CONFIG
    except (InputFormatError, MissingImageError, EvaluationError, OSError) as e:
        logger.error('Input error: %s', e)
        print(f'error: {e}', file=sys.stderr)
        return EXIT_INPUT
