"""
Report Generation
=================

Renders a SweepResult as csv, json, markdown or plot data. Numbers carry
four decimals in every format. Time rows are the modelled cost of each
cell, taken at the easy fraction the cell actually routed.
"""

from __future__ import annotations
from enum import Enum
from math import isnan
from typing import Any, Dict, List, Sequence, Union
import json
import pandas as pd
from core.router import TimingModel, cost_table
from core.sweep import RANDOM, SweepResult

CSV_COLUMNS = ['criterion', 'split', 'metric', 'value']
METRICS = (('ap', 'AP'), ('disc_roc', 'DiscROC'), ('cont_roc', 'ContROC'))
DECIMALS = 4


class ReportFormat(str, Enum):
    CSV = 'csv'
    JSON = 'json'
    MARKDOWN = 'markdown'
    PLOTDATA = 'plotdata'

    @property
    def extension(self) -> str:
        return {'csv': 'csv', 'json': 'json', 'markdown': 'md', 'plotdata': 'dat'}[self.value]


def split_label(p: float) -> str:
    """0.75 -> '75%-25%'"""
    easy = round(p * 100)
    return f'{easy}%-{100 - easy}%'


def _fmt(x: float) -> str:
    return '-' if isnan(x) else f'{x:.{DECIMALS}f}'


def _md_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> List[str]:
    lines = ['| ' + ' | '.join(header) + ' |', '|' + '|'.join('---' for _ in header) + '|']
    lines += ['| ' + ' | '.join(row) + ' |' for row in rows]
    return lines


def _rounded(obj: Any) -> Any:
    if isinstance(obj, float):
        return round(obj, DECIMALS)
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_rounded(v) for v in obj]
    return obj


# ---------- Formats ------------------------------------------------------ #


def _csv(result: SweepResult) -> str:
    rows = []
    for cell in result.cells:
        r, c = cell.report, cell.cost
        for metric, value in (
            ('ap', r.ap),
            ('disc_roc', r.disc_roc),
            ('cont_roc', r.cont_roc),
            ('true_positives', r.true_positives),
            ('false_positives', r.false_positives),
            ('seconds_per_image', c.avg_seconds_per_image),
            ('detection_seconds', c.detection),
            ('overhead_seconds', c.criterion_overhead),
        ):
            rows.append((cell.criterion, cell.easy_fraction, metric, value))

    for cell in result.baseline:
        for key, _ in METRICS:
            rows.append((RANDOM, cell.easy_fraction, f'{key}_mean', getattr(cell.mean, key)))
            rows.append((RANDOM, cell.easy_fraction, f'{key}_std', getattr(cell.std, key)))
        rows.append((RANDOM, cell.easy_fraction, 'true_positives_mean', cell.mean.true_positives))
        rows.append((RANDOM, cell.easy_fraction, 'false_positives_mean', cell.mean.false_positives))
        rows.append((RANDOM, cell.easy_fraction, 'seconds_per_image', cell.cost.avg_seconds_per_image))

    frame = pd.DataFrame(rows, columns=CSV_COLUMNS)
    return frame.to_csv(index=False, float_format=f'%.{DECIMALS}f', lineterminator='\n')


def _json(result: SweepResult) -> str:
    return json.dumps(_rounded(result.model_dump(mode='json')), indent=2) + '\n'


def render_cost_table(model: TimingModel, splits: Sequence[float]) -> str:
    """Markdown time rows for the given splits"""
    table = cost_table(model, splits)
    rows = [
        [component] + [_fmt(float(v)) for v in table.loc[component]]
        for component in table.index
    ]
    return '\n'.join(_md_table(['Component'] + [split_label(p) for p in splits], rows)) + '\n'


def _markdown(result: SweepResult) -> str:
    header = ['Splitting criterion'] + [split_label(p) for p in result.splits]
    baseline = {c.easy_fraction: c for c in result.baseline}
    runs = result.baseline[0].runs if result.baseline else 0

    lines = [
        f'# Easy-versus-hard sweep: {result.dataset}',
        '',
        f'{result.num_images} images; fast detector `{result.fast_backend}`, '
        f'slow detector `{result.slow_backend}`; random split averaged over {runs} runs.',
    ]
    for key, title in METRICS:
        rows = []
        if baseline:
            rows.append(
                ['Random split (mean ± std)']
                + [
                    f'{_fmt(getattr(baseline[p].mean, key))} ± {_fmt(getattr(baseline[p].std, key))}'
                    if p in baseline
                    else '-'
                    for p in result.splits
                ]
            )
        for criterion in result.criteria:
            rows.append(
                [criterion]
                + [_fmt(getattr(result.cell(criterion, p).report, key)) for p in result.splits]
            )
        lines += ['', f'## {title}', ''] + _md_table(header, rows)

    t = result.timing
    time_rows = []
    if baseline:
        time_rows.append(
            ['Random split']
            + [
                _fmt(baseline[p].cost.avg_seconds_per_image) if p in baseline else '-'
                for p in result.splits
            ]
        )
    for criterion in result.criteria:
        time_rows.append(
            [criterion]
            + [_fmt(result.cell(criterion, p).cost.avg_seconds_per_image) for p in result.splits]
        )
    lines += [
        '',
        f'## Time (seconds per image; fast {t.t_fast}, slow {t.t_slow}, difficulty {t.t_pred})',
        '',
    ] + _md_table(header, time_rows)
    return '\n'.join(lines) + '\n'


def _plot_block(name: str, points: List[Sequence[float]]) -> List[str]:
    lines = [f'# criterion: {name}', '# seconds ap disc_roc cont_roc easy_fraction']
    lines += [' '.join(_fmt(v) for v in point) for point in points]
    return lines


def _plotdata(result: SweepResult) -> str:
    blocks = []
    for criterion in result.criteria:
        points = []
        for p in result.splits:
            cell = result.cell(criterion, p)
            r = cell.report
            points.append((cell.cost.avg_seconds_per_image, r.ap, r.disc_roc, r.cont_roc, p))
        blocks.append(_plot_block(criterion, points))
    if result.baseline:
        blocks.append(
            _plot_block(
                RANDOM,
                [
                    (c.cost.avg_seconds_per_image, c.mean.ap, c.mean.disc_roc, c.mean.cont_roc, c.easy_fraction)
                    for c in result.baseline
                ],
            )
        )
    return '\n\n'.join('\n'.join(block) for block in blocks) + ('\n' if blocks else '')


_RENDERERS = {
    ReportFormat.CSV: _csv,
    ReportFormat.JSON: _json,
    ReportFormat.MARKDOWN: _markdown,
    ReportFormat.PLOTDATA: _plotdata,
}


def emit_report(result: SweepResult, format: Union[ReportFormat, str]) -> str:
    """Render a sweep result; format is csv, json, markdown or plotdata"""
    return _RENDERERS[ReportFormat(format)](result)


def emit_all(result: SweepResult, formats: Sequence[Union[ReportFormat, str]]) -> Dict[str, str]:
    """File name -> contents for each requested format"""
    out = {}
    for fmt in formats:
        fmt = ReportFormat(fmt)
        out[f'report.{fmt.extension}'] = emit_report(result, fmt)
    return out
