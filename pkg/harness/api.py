"""
FastAPI service for cost tables and synthetic sweeps
"""

from contextlib import asynccontextmanager
from typing import List, Optional
import logging
import os
import time
from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field
from core.benchmark import SynthBenchConfig, generate_benchmark
from core.difficulty import CriterionKind
from core.errors import EasyHardError
from core.report import ReportFormat, emit_report, split_label
from core.router import TimingModel, cost_table
from core.sweep import DEFAULT_SPLITS, Experiment, SweepResult, run_sweep
from harness.config import parse_criteria
from harness.warmup import warmup_numba_functions

load_dotenv()
logger = logging.getLogger(__name__)

MAX_IMAGES = int(os.getenv('EASYHARD_API_MAX_IMAGES', 2000))


@asynccontextmanager
async def lifespan(app: FastAPI):
    started = time.perf_counter()
    try:
        warmup_numba_functions()
    except Exception as e:
        logger.warning('Numba warmup failed: %s', e)
    logger.info('Initialization completed in %.2fs', time.perf_counter() - started)
    yield


app = FastAPI(
    title='Easy-versus-Hard Routing API',
    description='Cost model and synthetic sweeps for fast/slow detector routing',
    version='1.0.0',
    lifespan=lifespan,
)


class CostRequest(BaseModel):
    timing: TimingModel = Field(default_factory=TimingModel.afw)
    splits: List[float] = Field(default_factory=lambda: list(DEFAULT_SPLITS))


class CostRow(BaseModel):
    component: str
    seconds: List[Optional[float]]


class CostResponse(BaseModel):
    splits: List[str]
    rows: List[CostRow]


class SweepRequest(BaseModel):
    benchmark: SynthBenchConfig = Field(
        default_factory=lambda: SynthBenchConfig(image_count=200)
    )
    criteria: List[str] = Field(default_factory=lambda: ['all'])
    splits: List[float] = Field(default_factory=lambda: list(DEFAULT_SPLITS))
    timing: TimingModel = Field(default_factory=TimingModel.afw)
    runs: int = Field(5, ge=1, le=50)
    seed: int = Field(0, ge=0)


class SweepResponse(BaseModel):
    result: SweepResult
    markdown: str


@app.get('/api/health')
def health_check():
    """Health check endpoint"""
    return {'status': 'healthy'}


@app.post('/api/cost', response_model=CostResponse)
def cost(request: CostRequest):
    """Modelled seconds per image for each split"""
    try:
        table = cost_table(request.timing, request.splits)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    rows = [
        CostRow(
            component=component,
            seconds=[None if v != v else float(v) for v in table.loc[component]],
        )
        for component in table.index
    ]
    return CostResponse(splits=[split_label(p) for p in request.splits], rows=rows)


@app.post('/api/sweep', response_model=SweepResponse)
def sweep(request: SweepRequest):
    """Generate a synthetic benchmark and sweep it"""
    if request.benchmark.image_count > MAX_IMAGES:
        raise HTTPException(
            status_code=400,
            detail=f'image_count {request.benchmark.image_count} exceeds {MAX_IMAGES}',
        )
    try:
        bench = generate_benchmark(request.benchmark)
        criteria: List[CriterionKind] = parse_criteria(request.criteria, sorted(bench.score_tables))
        experiment = Experiment(
            dataset=bench.dataset,
            fast=bench.fast,
            slow=bench.slow,
            criteria=criteria,
            score_tables=bench.score_tables,
            splits=request.splits,
            timing=request.timing,
            baseline_runs=request.runs,
            seed=request.seed,
        )
        result = run_sweep(experiment)
    except (EasyHardError, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    return SweepResponse(result=result, markdown=emit_report(result, ReportFormat.MARKDOWN))


if __name__ == '__main__':
    import uvicorn

    port = int(os.getenv('PORT', 8000))
    uvicorn.run(app, host='0.0.0.0', port=port)
