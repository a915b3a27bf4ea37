# backend/scfde/main.py
# =============================================================================
# What is this file?
# -----------------------------------------------------------------------------
# A small HTTP front door (FastAPI) for running link simulations.
# It lets you:
#   1) Upload an experiment config (TOML) and start a sweep (/simulate)
#   2) Watch the sweep progress (/status/{job_id})
#   3) Get the metrics as JSON (/result/{job_id}) or CSV (/result/{job_id}/csv)
#   4) See the exact config the job ran with, defaults filled in (/debug/config/{job_id})
# Start it with `scfde serve` or `uvicorn scfde.main:app`.
# =============================================================================

from pathlib import Path
from dotenv import load_dotenv

# SCFDE_* settings may live in a .env next to the backend folder.
load_dotenv(dotenv_path=Path(__file__).resolve().parents[1] / ".env")

import logging
import os
import uuid
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from fastapi import BackgroundTasks, FastAPI, File, HTTPException, Query, Response, UploadFile
from pydantic import BaseModel

from . import __version__
from .errors import ConfigurationError, ScfdeError
from .parsers.config_parser import parse_config, with_seed
from .schemas import ExperimentConfig, JobStatus, MetricsRecord
from .simulator import config_hash, run_point, write_metrics_csv

logger = logging.getLogger(__name__)


# ---------- Where job artifacts go ----------
JOB_ROOT = Path(os.getenv("SCFDE_JOB_DIR", Path(__file__).resolve().parents[2] / "jobs"))


# ---------- In-memory job table ----------
# JOBS:    live job tickets (stage, progress, config)
# RESULTS: finished metrics per job
JOBS: Dict[str, Dict[str, Any]] = {}
RESULTS: Dict[str, List[MetricsRecord]] = {}


app = FastAPI(title="scfde - SC-FDE relay link simulator", version=__version__)


# ---------- Health check ----------
class HealthResponse(BaseModel):
    ok: bool
    version: str
    jobs: int

@app.get("/healthz", response_model=HealthResponse)
def healthz():
    return HealthResponse(ok=True, version=__version__, jobs=len(JOBS))


def _now() -> datetime:
    return datetime.now(timezone.utc)


# ---------- The background pipeline ----------
def _simulate_pipeline(job_id: str):
    """
    Runs one uploaded experiment:

      1) PARSE    - turn the uploaded TOML into an ExperimentConfig
      2) SIMULATE - one run_point per (n_fb, relay SNR) point
      3) WRITE    - metrics.csv under jobs/<job_id>/
    """

    def update(stage: str, progress: int, message: str):
        job = JOBS[job_id]
        job["stage"] = stage
        job["progress"] = progress
        job["message"] = message
        job["updated_at"] = _now()

    try:
        update("parse", 5, "Parsing config…")
        job = JOBS[job_id]
        config: ExperimentConfig = with_seed(parse_config(job["config_text"]), job.get("seed"))
        job["config"] = config
        logger.info("[parse] job %s config %s", job_id, config_hash(config))

        points = [(n_fb, snr) for n_fb in config.feedback_lengths for snr in config.simulation.relay_snr_db]
        records: List[MetricsRecord] = []
        for i, (n_fb, snr) in enumerate(points):
            update("simulate", 10 + int(80 * i / len(points)), f"SNR {snr:g} dB, n_fb={n_fb} ({i + 1}/{len(points)})")
            records.append(run_point(config, snr, n_fb))

        update("write", 95, "Writing metrics.csv…")
        job_dir = JOB_ROOT / job_id
        job_dir.mkdir(parents=True, exist_ok=True)
        csv_path = job_dir / "metrics.csv"
        with open(csv_path, "w", newline="") as f:
            write_metrics_csv([(config, records)], f)
        job["csv_path"] = str(csv_path)
        RESULTS[job_id] = records
        logger.info("[write] job %s wrote %s", job_id, csv_path)

        update("done", 100, "Complete")

    except Exception as e:
        # the job is marked failed; the server keeps running
        logger.exception("[simulate] job %s failed", job_id)
        update("error", 100, f"Error: {e}")


# ---------- Routes ----------
@app.post("/simulate")
async def simulate(
    background_tasks: BackgroundTasks,
    config: UploadFile = File(...),
    seed: Optional[int] = Query(None, ge=0, lt=2 ** 64),
):
    """
    Upload a TOML config; the sweep runs in the background.
    Bad configs are rejected right here so the caller sees the field names.
    """
    text = (await config.read()).decode("utf-8", errors="replace")
    try:
        with_seed(parse_config(text), seed)
    except ConfigurationError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except ScfdeError as e:
        raise HTTPException(status_code=400, detail=str(e))

    job_id = str(uuid.uuid4())
    now = _now()
    JOBS[job_id] = {
        "job_id": job_id,
        "stage": "queued",
        "progress": 0,
        "message": "Queued",
        "created_at": now,
        "updated_at": now,
        "config_text": text,
        "seed": seed,
        "filename": config.filename,
    }
    background_tasks.add_task(_simulate_pipeline, job_id)
    return {"job_id": job_id}


def _job(job_id: str) -> Dict[str, Any]:
    if job_id not in JOBS:
        raise HTTPException(status_code=404, detail="Unknown job_id")
    return JOBS[job_id]


@app.get("/status/{job_id}", response_model=JobStatus)
def status(job_id: str):
    j = _job(job_id)
    return JobStatus(
        job_id=j["job_id"],
        stage=j["stage"],
        progress=j["progress"],
        message=j["message"],
        created_at=j["created_at"],
        updated_at=j["updated_at"],
    )


@app.get("/result/{job_id}", response_model=List[MetricsRecord])
def result(job_id: str):
    if job_id not in RESULTS:
        raise HTTPException(status_code=404, detail="Result not ready or job_id not found")
    return RESULTS[job_id]


@app.get("/result/{job_id}/csv")
def result_csv(job_id: str):
    p = _job(job_id).get("csv_path")
    if not p or not os.path.exists(p):
        raise HTTPException(status_code=404, detail="CSV not available for this job")
    return Response(Path(p).read_text(), media_type="text/csv")


# ---------- Debug: the config the job actually ran with ----------
@app.get("/debug/config/{job_id}")
def debug_config(job_id: str):
    j = _job(job_id)
    config: Optional[ExperimentConfig] = j.get("config")
    if config is None:
        raise HTTPException(status_code=404, detail="Config not parsed yet")
    return {"config_hash": config_hash(config), "config": config.model_dump(mode="json")}
