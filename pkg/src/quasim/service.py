"""Minimal job service: POST /jobs, GET /jobs/{id}, GET /healthz.

Jobs live in an in-memory store, so ids do not survive a restart.  Worker
threads pull jobs in submission order; with one worker (the default) results
are produced in a deterministic order.  Result documents are the same ones
the CLI writes, rounded the same way.
"""
from __future__ import annotations

import os
import queue
import threading
import time
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import jobs
from .errors import CapacityError, ConfigError
from .formats import round_sig

QUEUED, RUNNING, DONE, FAILED = "queued", "running", "done", "failed"


@dataclass
class JobRecord:
    id: str
    kind: str
    payload: dict
    seed: int
    status: str = QUEUED
    result: object = None
    submitted: float = field(default_factory=time.time)
    started: float | None = None
    finished: float | None = None

    def view(self) -> dict:
        doc = {"id": self.id, "kind": self.kind, "seed": self.seed, "status": self.status,
               "submitted": self.submitted, "started": self.started, "finished": self.finished}
        if self.status == DONE:
            doc["result"] = self.result
        elif self.status == FAILED:
            doc["error"] = self.result
        return doc


class JobStore:
    """Synchronized job map plus a FIFO queue drained by worker threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self._jobs: dict[str, JobRecord] = {}
        self._queue: queue.Queue = queue.Queue()
        self._threads: list[threading.Thread] = []
        self.completed: list[str] = []

    def submit(self, kind, payload, seed) -> JobRecord:
        rec = JobRecord(uuid.uuid4().hex, kind, payload, seed)
        with self._lock:
            self._jobs[rec.id] = rec
        self._queue.put(rec.id)
        return rec

    def get(self, job_id) -> dict | None:
        with self._lock:
            rec = self._jobs.get(job_id)
            return None if rec is None else rec.view()

    def _claim(self, job_id) -> JobRecord:
        with self._lock:
            rec = self._jobs[job_id]
            rec.status, rec.started = RUNNING, time.time()
            return rec

    def _finish(self, rec, status, result):
        with self._lock:
            rec.result, rec.finished, rec.status = result, time.time(), status
            self.completed.append(rec.id)

    def run_one(self, job_id) -> None:
        rec = self._claim(job_id)
        try:
            result = round_sig(jobs.run(rec.kind, rec.payload, rec.seed))
        except Exception as exc:  # any job failure is recorded, the worker carries on
            self._finish(rec, FAILED, f"{type(exc).__name__}: {exc}")
        else:
            self._finish(rec, DONE, result)

    def _worker(self):
        while True:
            job_id = self._queue.get()
            if job_id is None:
                break
            self.run_one(job_id)

    def start(self, workers: int = 1):
        for _ in range(max(1, workers)):
            t = threading.Thread(target=self._worker, daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self):
        for _ in self._threads:
            self._queue.put(None)
        for t in self._threads:
            t.join()
        self._threads.clear()

    def drain(self):
        """Run every queued job on the calling thread (used when no workers run)."""
        while not self._queue.empty():
            job_id = self._queue.get()
            if job_id is not None:
                self.run_one(job_id)


def create_app(workers: int | None = None, autostart: bool = True) -> FastAPI:
    if workers is None:
        workers = int(os.environ.get("QUASIM_WORKERS", "1"))
    store = JobStore()

    @asynccontextmanager
    async def lifespan(_app):
        if autostart:
            store.start(workers)
        yield
        store.stop()

    app = FastAPI(title="quasim job service", lifespan=lifespan)
    app.state.store = store

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/jobs", status_code=202)
    async def submit(request: Request):
        try:
            body = await request.json()
        except ValueError:
            return JSONResponse({"error": "request body is not valid JSON"}, status_code=400)
        if not isinstance(body, dict):
            return JSONResponse({"error": "request body must be an object"}, status_code=400)
        extra = sorted(set(body) - {"kind", "payload", "seed"})
        if extra:
            return JSONResponse({"error": f"unknown keys: {', '.join(extra)}"}, status_code=400)
        kind, payload, seed = body.get("kind"), body.get("payload"), body.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            return JSONResponse({"error": "seed must be an integer"}, status_code=400)
        try:
            jobs.validate(kind, payload, seed)
        except CapacityError as exc:
            return JSONResponse({"error": str(exc)}, status_code=422)
        except ConfigError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        except Exception as exc:
            return JSONResponse({"error": f"{type(exc).__name__}: {exc}"}, status_code=400)
        rec = store.submit(kind, payload, seed)
        return {"id": rec.id}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        view = store.get(job_id)
        if view is None:
            return JSONResponse({"error": f"unknown job id {job_id}"}, status_code=404)
        return view

    return app
