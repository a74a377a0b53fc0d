import asyncio
import logging
import os
import re
import time
from typing import Any, Dict, Tuple

import numpy as np
from fastapi import APIRouter, HTTPException, Query
from fastapi.responses import PlainTextResponse

from app.config.settings import settings
from app.exceptions import ValidationFailure
from app.models.run_model import ReportResponse, ValuePredictRequest, ValuePredictResponse
from app.models.world_model import Category
from app.services.artifact_service import read_report
from app.services.valuelearn_service import BCPolicy, load_value_model
from app.services.value_map_service import cell_values, pgm_lines, to_gray
from app.services.world_service import load_world

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/value", tags=["value"])

SAFE_NAME = re.compile(r"^[A-Za-z0-9_.\-/]+$")

# path -> (mtime, loaded artifact)
_cache: Dict[str, Tuple[float, Any]] = {}


def _artifact_path(name: str) -> str:
    if not SAFE_NAME.match(name) or ".." in name.split("/"):
        raise HTTPException(status_code=400, detail={"error": f"Invalid artifact name: {name}"})
    path = os.path.join(settings.work_dir, name)
    if not os.path.exists(path):
        raise HTTPException(status_code=404, detail={"error": f"Artifact not found: {name}"})
    return path


def _load(path: str, loader):
    mtime = os.path.getmtime(path)
    cached = _cache.get(path)
    if cached is not None and cached[0] == mtime:
        return cached[1]
    value = loader(path)
    _cache[path] = (mtime, value)
    return value


def _failure(e: Exception, start_time: float, what: str) -> HTTPException:
    status = 400 if isinstance(e, ValidationFailure) else 500
    if status == 500:
        logger.error(f"Error {what}: {type(e).__name__}: {e}")
    return HTTPException(
        status_code=status,
        detail={
            "error": f"Error {what}: {str(e)}",
            "processing_time_seconds": round(time.time() - start_time, 3),
        },
    )


@router.get("/health")
async def health_check():
    """Reports which artifacts are present in the work directory"""
    present = {
        name: os.path.exists(os.path.join(settings.work_dir, f"{name}.txt"))
        for name in ("q", "td0", "mc", "bc", "strong", "strong_vlv", "stop")
    }
    return {
        "status": "healthy",
        "work_dir": settings.work_dir,
        "artifacts": present,
        "version": settings.app_version,
    }


@router.post("/predict", response_model=ValuePredictResponse)
async def predict(request: ValuePredictRequest):
    """Per-category value f(o, c) of one observation; Q-functions also return their 3 x 5 matrix"""
    start_time = time.time()
    path = _artifact_path(request.model)
    try:
        model, kind, config_hash = _load(path, load_value_model)
        if isinstance(model, BCPolicy):
            raise HTTPException(status_code=400, detail={"error": "Behavior-cloning policies have no value function"})
        obs = np.asarray(request.observation, dtype=np.float64)
        if obs.size != model.input_size:
            raise HTTPException(
                status_code=400,
                detail={"error": f"Observation has {obs.size} values, model expects {model.input_size}"},
            )
        values = model.values(obs)[0]
        q_values = model.q_values(obs)[0].tolist() if hasattr(model, "q_values") else None
        return ValuePredictResponse(
            model=request.model,
            values={c.slug: float(values[int(c)]) for c in Category},
            q_values=q_values,
            metadata={
                "kind": kind,
                "config_hash": config_hash,
                "processing_time_seconds": round(time.time() - start_time, 3),
            },
        )
    except HTTPException:
        raise
    except Exception as e:
        raise _failure(e, start_time, "predicting values")


@router.get("/map", response_class=PlainTextResponse)
async def value_map(
    world: str = Query(..., description="World file inside the work directory"),
    model: str = Query("q.txt", description="Value model file inside the work directory"),
    category: str = Query(Category.DINING_TABLE.slug, description="Target category"),
):
    """Plain-text PGM of the maximum value over headings at every free cell"""
    start_time = time.time()
    world_path, model_path = _artifact_path(world), _artifact_path(model)
    try:
        target = Category.parse(category)
    except ValueError as e:
        raise HTTPException(status_code=400, detail={"error": str(e)})
    try:
        grid_world, config_hash = _load(world_path, load_world)
        value_model, _, _ = _load(model_path, load_value_model)
        if isinstance(value_model, BCPolicy):
            raise HTTPException(status_code=400, detail={"error": "Behavior-cloning policies have no value function"})
        gray = await asyncio.to_thread(lambda: to_gray(cell_values(grid_world, value_model, target)))
        return "\n".join(pgm_lines(gray, config_hash)) + "\n"
    except HTTPException:
        raise
    except Exception as e:
        raise _failure(e, start_time, "rendering value map")


@router.get("/reports/{name}", response_model=ReportResponse)
async def get_report(name: str):
    """Parsed key-value report written by eval, ablate, branching, train-q or train-inverse"""
    start_time = time.time()
    path = _artifact_path(os.path.join("reports", f"{name}.txt"))
    try:
        entries = read_report(path)
        return ReportResponse(name=name, entries=entries, count=len(entries))
    except Exception as e:
        raise _failure(e, start_time, "reading report")
