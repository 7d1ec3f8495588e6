"""Submission, evaluation and leaderboard HTTP service.

State lives in ``<data_dir>/journal.jsonl`` (one event per line, append only)
plus payloads stored under ``<data_dir>/bundles/<sha256>``. Restarting replays
the journal; queued submissions are evaluated again.

Environment: ``MACVI_DATA_DIR``, ``MACVI_GT_DIR``, ``MACVI_USERS``,
``MACVI_QUOTA``, ``MACVI_WORKERS`` and ``MACVI_PORT`` (for ``serve``).
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping

from fastapi import Depends, FastAPI, File, Form, Header, HTTPException, Response, UploadFile
from pydantic import BaseModel

from .core import EvalError
from .formats import TRACKS, BundleError, SubmissionBundle, json_safe, parse_bundle_manifest, parse_coco_json, parse_mot_csv
from .runner import GroundTruthDir, evaluate_track, primary_keys, read_mask_zip

log = logging.getLogger(__name__)

DEFAULT_QUOTA = 3


class QuotaExceeded(Exception):
    pass


class NotFound(Exception):
    pass


class Forbidden(Exception):
    pass


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass
class ServiceConfig:
    data_dir: Path
    gt_dir: Path | None = None
    users: Mapping[str, str] | None = None   # bearer token -> user name
    users_file: Path | None = None
    quota: int = DEFAULT_QUOTA
    workers: int = 2
    sync: bool = False                        # evaluate inside the request

    def __post_init__(self):
        self.data_dir = Path(self.data_dir)
        self.gt_dir = Path(self.gt_dir) if self.gt_dir else self.data_dir / "gt"
        if self.quota < 1:
            raise ValueError("quota must be at least 1")

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None) -> "ServiceConfig":
        env = os.environ if env is None else env
        data = Path(env.get("MACVI_DATA_DIR", "./macvi-data"))
        return cls(data_dir=data, gt_dir=env.get("MACVI_GT_DIR") or None,
                   users_file=Path(env["MACVI_USERS"]) if env.get("MACVI_USERS") else None,
                   quota=int(env.get("MACVI_QUOTA", DEFAULT_QUOTA)), workers=int(env.get("MACVI_WORKERS", 2)))

    def load_users(self) -> dict[str, str]:
        if self.users is not None:
            return dict(self.users)
        path = self.users_file or self.data_dir / "users.json"
        if not path.exists():
            log.warning("no user registry at %s; every request will be rejected", path)
            return {}
        return dict(json.loads(path.read_text()))


@dataclass
class Submission:
    id: str
    user: str
    track: str
    bundle: SubmissionBundle
    sha256: str
    created_at: str
    status: str = "queued"
    visible: bool = True
    report: dict | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {"id": self.id, "user": self.user, "track": self.track, "bundle": self.bundle.to_dict(),
                "sha256": self.sha256, "created_at": self.created_at, "status": self.status,
                "visible": self.visible, "report": self.report, "error": self.error}


def _sort_value(v) -> float:
    return -math.inf if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)


def check_payload(track: str, payload: bytes) -> None:
    """Parse the payload far enough to reject malformed uploads up front."""
    if track in ("od", "od-binary", "usv-det"):
        if parse_coco_json(payload).kind != "pred":
            raise EvalError("expected a COCO detection list")
    elif track == "mot":
        parse_mot_csv(payload)
    elif track == "usv-seg":
        if not read_mask_zip(payload):
            raise EvalError("zip contains no .pgm masks")


class EvalService:
    def __init__(self, config: ServiceConfig, clock: Callable[[], datetime] = utcnow):
        self.config = config
        self.clock = clock
        self.users = config.load_users()
        self.gt = GroundTruthDir(config.gt_dir)
        self._lock = threading.Lock()
        self._subs: dict[str, Submission] = {}
        self._uploads: dict[str, list[str]] = {}   # user -> created_at of every accepted upload
        self._next = 1
        self._boards: dict[str, tuple] = {t: () for t in TRACKS}
        config.data_dir.mkdir(parents=True, exist_ok=True)
        (config.data_dir / "bundles").mkdir(exist_ok=True)
        self._journal = config.data_dir / "journal.jsonl"
        self._pool = None if config.sync else ThreadPoolExecutor(max_workers=config.workers)
        self._replay()
        for sub in list(self._subs.values()):
            if sub.status == "queued":
                self._enqueue(sub.id)

    # --- persistence ---------------------------------------------------------

    def _append(self, event: dict) -> None:
        line = json.dumps(json_safe(event, None), sort_keys=True)
        with open(self._journal, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _replay(self) -> None:
        if not self._journal.exists():
            return
        for n, line in enumerate(self._journal.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                ev = json.loads(line)
            except json.JSONDecodeError:
                log.warning("journal line %d unreadable (torn write?), skipped", n)
                continue
            self._apply(ev)
        self._rebuild_boards()

    def _apply(self, ev: dict) -> None:
        kind, sid = ev["event"], ev["id"]
        if kind == "submitted":
            b = ev["bundle"]
            self._subs[sid] = Submission(sid, ev["user"], ev["track"], SubmissionBundle(**b), ev["sha256"],
                                         ev["created_at"], visible=ev.get("visible", True))
            self._uploads.setdefault(ev["user"], []).append(ev["created_at"])
            self._next = max(self._next, int(sid) + 1)
        elif sid not in self._subs:
            return
        elif kind == "evaluated":
            s = self._subs[sid]
            s.status, s.report, s.error = "evaluated", ev["report"], None
        elif kind == "failed":
            s = self._subs[sid]
            s.status, s.report, s.error = "failed", None, ev["error"]
        elif kind == "visibility":
            self._subs[sid].visible = bool(ev["visible"])
        elif kind == "deleted":
            del self._subs[sid]

    def _record(self, event: dict) -> None:
        """Persist then apply; callers hold the lock."""
        self._append(event)
        self._apply(event)
        self._rebuild_boards()

    def _blob_path(self, sha: str) -> Path:
        return self.config.data_dir / "bundles" / sha

    def _store_blob(self, data: bytes) -> str:
        sha = hashlib.sha256(data).hexdigest()
        p = self._blob_path(sha)
        if not p.exists():
            tmp = p.with_name(f"{sha}.{threading.get_ident()}.tmp")
            tmp.write_bytes(data)
            os.replace(tmp, p)
        return sha

    # --- operations ----------------------------------------------------------------

    def uploads_today(self, user: str) -> int:
        day = self.clock().astimezone(timezone.utc).date()
        return sum(1 for ts in self._uploads.get(user, ())
                   if datetime.fromisoformat(ts).astimezone(timezone.utc).date() == day)

    def submit(self, user: str, track: str, manifest, payload: bytes) -> Submission:
        if track not in TRACKS:
            raise NotFound(f"unknown track {track!r}")
        bundle = parse_bundle_manifest(manifest, track)
        if bundle.track != track:
            raise BundleError(f"manifest names track {bundle.track!r}, upload went to {track!r}")
        with self._lock:
            if self.uploads_today(user) >= self.config.quota:
                raise QuotaExceeded(f"daily quota of {self.config.quota} uploads reached")
        check_payload(track, payload)
        sha = self._store_blob(payload)
        with self._lock:
            # re-check: another request may have used the last slot meanwhile
            if self.uploads_today(user) >= self.config.quota:
                raise QuotaExceeded(f"daily quota of {self.config.quota} uploads reached")
            sid = f"{self._next:08d}"
            self._next += 1
            self._record({"event": "submitted", "id": sid, "user": user, "track": track,
                          "bundle": bundle.to_dict(), "sha256": sha,
                          "created_at": self.clock().astimezone(timezone.utc).isoformat(), "visible": True})
        self._enqueue(sid)
        return self._subs[sid]

    def _enqueue(self, sid: str) -> None:
        if self._pool is None:
            self.evaluate(sid)
        else:
            self._pool.submit(self.evaluate, sid)

    def run_evaluation(self, sid: str) -> dict:
        """Evaluate a stored submission without recording anything."""
        sub = self._subs.get(sid)
        if sub is None:
            raise NotFound(sid)
        payload = self._blob_path(sub.sha256).read_bytes()
        return json_safe(evaluate_track(sub.track, payload, self.gt), None)

    def evaluate(self, sid: str) -> None:
        try:
            report = self.run_evaluation(sid)
            event = {"event": "evaluated", "id": sid, "report": report}
        except NotFound:
            return
        except Exception as e:  # a failed job must not take the worker down
            log.exception("evaluation of %s failed", sid)
            event = {"event": "failed", "id": sid, "error": f"{type(e).__name__}: {e}"}
        with self._lock:
            if sid in self._subs:   # deleted while running
                self._record(event)

    def get(self, sid: str) -> Submission:
        sub = self._subs.get(sid)
        if sub is None:
            raise NotFound(sid)
        return sub

    def _owned(self, user: str, sid: str) -> Submission:
        sub = self.get(sid)
        if sub.user != user:
            raise Forbidden(f"submission {sid} belongs to another user")
        return sub

    def delete(self, user: str, sid: str) -> None:
        with self._lock:
            self._owned(user, sid)
            self._record({"event": "deleted", "id": sid})

    def set_visible(self, user: str, sid: str, visible: bool) -> Submission:
        with self._lock:
            self._owned(user, sid)
            self._record({"event": "visibility", "id": sid, "visible": bool(visible)})
            return self._subs[sid]

    def _rebuild_boards(self) -> None:
        boards = {}
        for track in TRACKS:
            keys = primary_keys(track)
            rows = [s for s in self._subs.values() if s.track == track and s.visible and s.status == "evaluated"]
            rows.sort(key=lambda s: (tuple(-_sort_value(s.report.get(k)) for k in keys), s.created_at, s.id))
            boards[track] = tuple(
                {"rank": i + 1, "id": s.id, "user": s.user, "model_name": s.bundle.model_name,
                 "metrics": {k: s.report.get(k) for k in keys}, "fps": s.bundle.declared_fps,
                 "hardware": s.bundle.hardware, "created_at": s.created_at}
                for i, s in enumerate(rows))
        self._boards = boards   # readers take the old or the new dict, never a partial one

    def leaderboard(self, track: str) -> list[dict]:
        if track not in TRACKS:
            raise NotFound(f"unknown track {track!r}")
        return list(self._boards[track])

    def drain(self) -> None:
        """Wait for queued evaluations (used by tests and shutdown)."""
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = ThreadPoolExecutor(max_workers=self.config.workers)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None


class VisibilityPatch(BaseModel):
    visible: bool


def create_app(config: ServiceConfig | None = None, *, clock: Callable[[], datetime] = utcnow,
               service: EvalService | None = None) -> FastAPI:
    svc = service or EvalService(config or ServiceConfig.from_env(), clock=clock)

    @asynccontextmanager
    async def lifespan(app):
        yield
        svc.close()

    app = FastAPI(title="macvi-eval", lifespan=lifespan)
    app.state.service = svc

    def current_user(authorization: str | None = Header(None)) -> str:
        if not authorization or not authorization.lower().startswith("bearer "):
            raise HTTPException(401, "bearer token required", headers={"WWW-Authenticate": "Bearer"})
        user = svc.users.get(authorization[7:].strip())
        if user is None:
            raise HTTPException(401, "unknown token", headers={"WWW-Authenticate": "Bearer"})
        return user

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/api/v1/tracks/{track}/submissions", status_code=202)
    def submit(track: str, manifest: str | None = Form(None), payload: UploadFile | None = File(None),
               user: str = Depends(current_user)):
        if track not in TRACKS:
            raise HTTPException(404, f"unknown track {track!r}")
        if manifest is None:
            raise HTTPException(400, "manifest field is required")
        if payload is None:
            raise HTTPException(400, "payload file is required")
        try:
            sub = svc.submit(user, track, manifest, payload.file.read())
        except BundleError as e:
            raise HTTPException(400, str(e))
        except QuotaExceeded as e:
            raise HTTPException(429, str(e))
        except EvalError as e:
            raise HTTPException(422, f"payload rejected: {e}")
        return {"id": sub.id, "status": sub.status}

    @app.get("/api/v1/tracks/{track}/leaderboard")
    def leaderboard(track: str):
        try:
            return {"track": track, "entries": svc.leaderboard(track)}
        except NotFound as e:
            raise HTTPException(404, str(e))

    @app.get("/api/v1/submissions/{sid}")
    def get_submission(sid: str, user: str = Depends(current_user)):
        try:
            sub = svc._owned(user, sid)
        except NotFound:
            raise HTTPException(404, f"no submission {sid}")
        except Forbidden as e:
            raise HTTPException(403, str(e))
        return sub.to_dict()

    @app.delete("/api/v1/submissions/{sid}", status_code=204)
    def delete(sid: str, user: str = Depends(current_user)):
        try:
            svc.delete(user, sid)
        except NotFound:
            raise HTTPException(404, f"no submission {sid}")
        except Forbidden as e:
            raise HTTPException(403, str(e))
        return Response(status_code=204)

    @app.patch("/api/v1/submissions/{sid}")
    def patch(sid: str, body: VisibilityPatch, user: str = Depends(current_user)):
        try:
            sub = svc.set_visible(user, sid, body.visible)
        except NotFound:
            raise HTTPException(404, f"no submission {sid}")
        except Forbidden as e:
            raise HTTPException(403, str(e))
        return {"id": sub.id, "visible": sub.visible}

    return app


def serve(config: ServiceConfig | None = None, host: str = "127.0.0.1", port: int | None = None) -> None:
    import uvicorn

    port = port if port is not None else int(os.environ.get("MACVI_PORT", 8000))
    uvicorn.run(create_app(config), host=host, port=port)
