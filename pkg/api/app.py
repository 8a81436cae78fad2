# HTTP surface over the synthetic scene generator, inference and detection scoring
from functools import lru_cache
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from starlette.concurrency import run_in_threadpool

from achelous.data.synth import DRIVABLE, SceneSpec, generate_sample
from achelous.evaluation.evaluate import evaluate_detection_request, load_model, predict
from achelous.models.config import DETECTION_CLASSES
from achelous.radar.geometry import CLUTTER
from core.errors import ConfigError, DatasetError
from core.logger import AppLogger
from schemas.perception_schemas import (
    DetectionEvalRequest,
    Detection,
    DetMetrics,
    InferRequest,
    InferResponse,
    SampleSummary,
)

app = FastAPI(title="Achelous Perception API")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

logger = AppLogger(__name__).get_logger()


@app.middleware("http")
async def log_requests(request: Request, call_next):
    logger.info(f"Incoming request: {request.method} {request.url.path}")
    response = await call_next(request)
    logger.info(f"Response status: {response.status_code}")
    return response


@lru_cache(maxsize=4)
def cached_model(checkpoint: str):
    return load_model(checkpoint)


def to_http(e: Exception) -> HTTPException:
    if isinstance(e, ConfigError):
        return HTTPException(status_code=400, detail=str(e))
    if isinstance(e, DatasetError):
        return HTTPException(status_code=404, detail=str(e))
    logger.error(f"Unexpected error: {e}")
    return HTTPException(status_code=500, detail=f"Internal server error: {e}")


def to_detections(boxes, classes, scores) -> list:
    return [
        Detection(box=[float(v) for v in box], label=DETECTION_CLASSES[int(c)], score=float(s))
        for box, c, s in zip(boxes, classes, scores)
    ]


@app.get("/api/health")
async def health_check():
    return {"status": "ok"}


@app.get("/api/v1/samples/{index}", response_model=SampleSummary)
async def sample_summary(
    index: int,
    seed: int = 0,
    degradation: Literal["none", "dark", "fog", "droplet"] = "none",
    image_size: int = Query(320, ge=32, le=1024),
):
    """Generate one synthetic scene and describe its annotations."""
    if index < 0:
        raise HTTPException(status_code=400, detail="index must be non-negative")
    try:
        spec = SceneSpec(seed=seed, image_size=image_size, degradation=degradation)
        sample = await run_in_threadpool(generate_sample, spec, index)
    except Exception as e:
        raise to_http(e)
    return SampleSummary(
        index=index,
        seed=seed,
        degradation=degradation,
        image_size=image_size,
        objects=to_detections(sample.boxes, sample.classes, np.ones(len(sample.classes))),
        radar_points=len(sample.radar),
        clutter_points=int((sample.point_labels == CLUTTER).sum()),
        drivable_fraction=float((sample.seg == DRIVABLE).mean()),
    )


@app.post("/api/v1/infer", response_model=InferResponse)
async def infer(request: InferRequest):
    """Run a checkpoint on a synthetic scene and return its decoded outputs."""
    def run():
        model, run_config = cached_model(request.checkpoint)
        spec = SceneSpec(seed=request.seed, image_size=run_config.image_size, degradation=request.degradation)
        sample = generate_sample(spec, request.index)
        return model, predict(model, [sample], score_threshold=request.score_threshold)[0]

    try:
        model, prediction = await run_in_threadpool(run)
    except Exception as e:
        raise to_http(e)
    logger.info(f"Inference with {model.tag} on sample {request.index} (seed {request.seed})")
    det = prediction.detections
    return InferResponse(
        model=model.tag,
        detections=to_detections(det.boxes, det.classes, det.scores) if det is not None else [],
        drivable_fraction=float((prediction.seg == DRIVABLE).mean()) if prediction.seg is not None else None,
        waterline_fraction=float(prediction.waterline.mean()) if prediction.waterline is not None else None,
        point_labels=[int(v) for v in prediction.point_labels] if prediction.point_labels is not None else None,
    )


@app.post("/api/v1/metrics/detection", response_model=DetMetrics)
async def detection_metrics(request: DetectionEvalRequest):
    """COCO-style mAP/AR for posted detections against posted ground truth."""
    try:
        return await run_in_threadpool(evaluate_detection_request, request)
    except Exception as e:
        raise to_http(e)


# Entry point for running the application directly
if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000)
