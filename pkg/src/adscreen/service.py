"""Screening funnel service.

Event-sourced core: every mutation appends to a JSON-Lines event log and
service state is a pure fold over that log, so restart + replay reproduces
identical sessions and metrics.  A thin FastAPI layer exposes the /v1 API.

Session state machine:
    created -> consented_pre -> in_progress -> completed -> consented_post -> closed
with closure legal from any state and no backward moves.
"""

from __future__ import annotations

import json
import os
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable, Mapping

from .funnel import FunnelStats
from .rules import (
    CANCER_TYPES,
    Questionnaire,
    Response,
    ResponseError,
    Scs,
    SCSResult,
    Sex,
    load_ruleset,
    score,
)

SESSION_TTL = timedelta(hours=24)

STATE_ORDER = ["created", "consented_pre", "in_progress", "completed", "consented_post", "closed"]

EVENT_KINDS = (
    "click",
    "consent_pre",
    "answer",
    "complete",
    "consent_post",
    "conversion_emitted",
    "advice_shown",
    "closed",
)

# Privacy floor: the only payload keys the event log may ever contain.
ALLOWED_PAYLOAD_KEYS = {
    "cancer_type",
    "campaign_id",
    "creative_id",
    "query_term",
    "stage",
    "granted",
    "answers",
    "age",
    "sex",
    "scs",
    "fired_rules",
    "reason",
}


class ServiceError(Exception):
    def __init__(self, code: str, message: str, detail: Any = None, status: int = 400):
        super().__init__(message)
        self.code = code
        self.message = message
        self.detail = detail
        self.status = status


@dataclass(frozen=True)
class SessionEvent:
    seq: int
    session_id: str
    kind: str
    payload: Mapping[str, Any]
    ts: str  # ISO-8601 UTC

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "session_id": self.session_id,
            "kind": self.kind,
            "payload": dict(self.payload),
            "ts": self.ts,
        }


class EventLog:
    """Append-only JSON-Lines event log, flushed per event."""

    def __init__(self, path: str | Path | None):
        self._path = Path(path) if path else None
        self._events: list[SessionEvent] = []
        self._lock = threading.Lock()
        if self._path and self._path.exists():
            for line in self._path.read_text().splitlines():
                if line.strip():
                    obj = json.loads(line)
                    self._events.append(SessionEvent(**obj))
        self._fh = open(self._path, "a") if self._path else None

    def append(self, event: SessionEvent) -> None:
        with self._lock:
            self._events.append(event)
            if self._fh:
                self._fh.write(json.dumps(event.to_json()) + "\n")
                self._fh.flush()

    def scan(self) -> list[SessionEvent]:
        with self._lock:
            return list(self._events)


class FileRecordingAdClient:
    """Stub ad-platform client: records conversion signals to a JSONL file,
    deduplicating by the session-id idempotency key."""

    def __init__(self, path: str | Path):
        self._path = Path(path)
        self._seen: set[str] = set()
        self._lock = threading.Lock()

    def emit_conversion(self, signal: dict) -> None:
        with self._lock:
            if signal["session_id"] in self._seen:
                return
            self._seen.add(signal["session_id"])
            with open(self._path, "a") as fh:
                fh.write(json.dumps(signal) + "\n")
                fh.flush()


class CallbackAdClient:
    """Ad client delegating to a callable (e.g., an adsim learner loopback);
    deduplicates by session id."""

    def __init__(self, callback: Callable[[dict], None]):
        self._callback = callback
        self._seen: set[str] = set()
        self._lock = threading.Lock()

    def emit_conversion(self, signal: dict) -> None:
        with self._lock:
            if signal["session_id"] in self._seen:
                return
            self._seen.add(signal["session_id"])
        self._callback(signal)


class NullAdClient:
    def emit_conversion(self, signal: dict) -> None:
        pass


@dataclass
class Session:
    session_id: str
    cancer_type: str
    campaign_meta: dict
    state: str = "created"
    answers: dict = field(default_factory=dict)
    age: int | None = None
    sex: str = "unspecified"
    result: SCSResult | None = None
    excluded_from_study: bool = False
    conversion_emitted: bool = False
    created_at: datetime | None = None
    updated_at: datetime | None = None
    next_seq: int = 1


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class ScreeningService:
    """Event-sourced session engine.  Per-session operations are serialized
    by a keyed lock; cross-session operations are independent."""

    def __init__(
        self,
        questionnaires: Mapping[str, Questionnaire],
        event_log: EventLog,
        ad_client=None,
        clock: Callable[[], datetime] = _utcnow,
    ):
        self.questionnaires = dict(questionnaires)
        self.log = event_log
        self.ad_client = ad_client or NullAdClient()
        self.clock = clock
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        for event in self.log.scan():
            self._apply(event, replay=True)

    # -- event fold ---------------------------------------------------------

    def _apply(self, event: SessionEvent, replay: bool = False) -> None:
        """Pure state transition; identical during live operation and replay."""
        s = self._sessions.get(event.session_id)
        p = event.payload
        ts = datetime.fromisoformat(event.ts)
        if event.kind == "click":
            s = Session(
                session_id=event.session_id,
                cancer_type=p["cancer_type"],
                campaign_meta={
                    "campaign_id": p["campaign_id"],
                    "creative_id": p["creative_id"],
                    "query_term": p["query_term"],
                },
                created_at=ts,
            )
            self._sessions[event.session_id] = s
        elif event.kind == "consent_pre":
            if p["granted"]:
                s.state = "consented_pre"
            else:
                s.excluded_from_study = True
                s.state = "closed"
        elif event.kind == "answer":
            s.state = "in_progress"
            s.answers.update(p["answers"])
            if "age" in p:
                s.age = p["age"]
            if "sex" in p:
                s.sex = p["sex"]
        elif event.kind == "complete":
            q = self.questionnaires[s.cancer_type]
            s.result = score(
                q,
                Response(
                    questionnaire_version=q.version,
                    answers=s.answers,
                    age=s.age if s.age is not None else 0,
                    sex=Sex(s.sex),
                ),
            )
            s.state = "completed"
        elif event.kind == "consent_post":
            if p["granted"]:
                s.state = "consented_post"
            else:
                s.excluded_from_study = True
                s.state = "closed"
        elif event.kind == "conversion_emitted":
            s.conversion_emitted = True
        elif event.kind == "closed":
            s.state = "closed"
        s = self._sessions[event.session_id]
        s.updated_at = ts
        s.next_seq = event.seq + 1

    def _append(self, session_id: str, kind: str, payload: dict) -> SessionEvent:
        unknown = set(payload) - ALLOWED_PAYLOAD_KEYS
        if unknown:
            raise ServiceError("internal", f"payload keys {sorted(unknown)} not allowed", status=500)
        seq = self._sessions[session_id].next_seq if session_id in self._sessions else 0
        event = SessionEvent(
            seq=seq,
            session_id=session_id,
            kind=kind,
            payload=payload,
            ts=self.clock().isoformat(),
        )
        self._apply(event)
        self.log.append(event)
        return event

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(session_id, threading.Lock())

    def _get(self, session_id: str) -> Session:
        s = self._sessions.get(session_id)
        if s is None:
            raise ServiceError("unknown_session", f"unknown session {session_id}", status=404)
        if s.state != "closed" and self.clock() - s.updated_at > SESSION_TTL:
            self._append(session_id, "closed", {"reason": "expired"})
        return s

    # -- operations ---------------------------------------------------------

    def create_session(
        self, cancer_type: str, campaign_id: str = "", creative_id: str = "", query_term: str = ""
    ) -> str:
        if cancer_type not in self.questionnaires:
            raise ServiceError(
                "unknown_cancer_type",
                f"no questionnaire loaded for cancer_type {cancer_type!r}",
                status=404,
            )
        session_id = secrets.token_hex(16)  # 128-bit bearer token
        with self._lock_for(session_id):
            self._sessions[session_id] = Session(
                session_id=session_id, cancer_type=cancer_type, campaign_meta={}
            )
            # placeholder replaced by the click event fold
            self._sessions[session_id].next_seq = 0
            self._append(
                session_id,
                "click",
                {
                    "cancer_type": cancer_type,
                    "campaign_id": campaign_id,
                    "creative_id": creative_id,
                    "query_term": query_term,
                },
            )
        return session_id

    def get_questionnaire(self, session_id: str) -> dict:
        with self._lock_for(session_id):
            s = self._get(session_id)
            q = self.questionnaires[s.cancer_type]
            return {
                "cancer_type": q.cancer_type,
                "version": q.version,
                "questions": [
                    {"id": question.id, "prompt": question.prompt, "kind": question.kind,
                     "allowed": question.allowed}
                    for question in q.questions
                ],
            }

    def record_consent(self, session_id: str, stage: str, granted: bool) -> str:
        if stage not in ("pre", "post"):
            raise ServiceError("bad_stage", f"stage must be 'pre' or 'post', got {stage!r}")
        with self._lock_for(session_id):
            s = self._get(session_id)
            if stage == "pre":
                if s.state != "created":
                    raise ServiceError(
                        "wrong_stage", f"pre-consent not valid in state {s.state!r}", status=409
                    )
                self._append(session_id, "consent_pre", {"stage": "pre", "granted": granted})
            else:
                if s.state != "completed":
                    raise ServiceError(
                        "wrong_stage", f"post-consent not valid in state {s.state!r}", status=409
                    )
                self._append(session_id, "consent_post", {"stage": "post", "granted": granted})
                if granted and s.result is not None and s.result.scs is Scs.HIGH:
                    if not s.conversion_emitted:
                        self._append(
                            session_id,
                            "conversion_emitted",
                            {"campaign_id": s.campaign_meta.get("campaign_id", "")},
                        )
                        self.ad_client.emit_conversion(
                            {
                                "session_id": session_id,
                                "campaign_meta": s.campaign_meta,
                                "ts": self.clock().isoformat(),
                            }
                        )
            return s.state

    def submit_answers(
        self, session_id: str, answers: Mapping[str, Any],
        age: int | None = None, sex: str | None = None,
    ) -> str:
        with self._lock_for(session_id):
            s = self._get(session_id)
            if s.state not in ("consented_pre", "in_progress"):
                raise ServiceError(
                    "wrong_stage", f"answers not accepted in state {s.state!r}", status=409
                )
            q = self.questionnaires[s.cancer_type]
            for qid, value in answers.items():
                try:
                    question = q.question(qid)
                except KeyError:
                    raise ServiceError("unknown_question", f"unknown question {qid!r}") from None
                if not question.accepts(value):
                    raise ServiceError(
                        "domain_violation",
                        f"answer for question {qid!r} outside its domain",
                        detail={"question": qid},
                    )
            payload: dict = {"answers": dict(answers)}
            if age is not None:
                if not isinstance(age, int) or not 0 <= age <= 130:
                    raise ServiceError("domain_violation", f"age {age!r} out of range [0, 130]")
                payload["age"] = age
            if sex is not None:
                if sex not in ("female", "male", "unspecified"):
                    raise ServiceError("domain_violation", f"bad sex {sex!r}")
                payload["sex"] = sex
            self._append(session_id, "answer", payload)
            referenced = q.rule_referenced_questions()
            if referenced <= set(s.answers) and s.age is not None:
                try:
                    self._append(session_id, "complete", {})
                except ResponseError as e:
                    raise ServiceError("invalid_response", str(e)) from None
            return s.state

    def get_result(self, session_id: str) -> dict:
        with self._lock_for(session_id):
            s = self._get(session_id)
            if s.result is None:
                raise ServiceError("not_ready", "result not ready", status=409)
            self._append(session_id, "advice_shown", {})
            return {
                "scs": s.result.scs.value,
                "advice": s.result.advice,
                "excluded_from_study": s.excluded_from_study,
            }

    # -- metrics ------------------------------------------------------------

    def funnel_metrics(self, date_from: str | None = None, date_to: str | None = None) -> list[dict]:
        """Per-day FunnelStats projected from the event log prefix.

        A session's whole funnel progress is attributed to the day of its
        click (cohort semantics), which keeps the ordering invariant intact
        for sessions that span midnight.
        """
        events = self.log.scan()
        click_day: dict[str, str] = {
            e.session_id: e.ts[:10] for e in events if e.kind == "click"
        }
        per_day: dict[str, dict] = {}
        started: set[str] = set()
        for event in events:
            day = click_day.get(event.session_id)
            if day is None:
                continue
            if date_from and day < date_from:
                continue
            if date_to and day > date_to:
                continue
            d = per_day.setdefault(
                day, {"clicks": 0, "starts": 0, "completions": 0, "conversions": 0}
            )
            if event.kind == "click":
                d["clicks"] += 1
            elif event.kind == "answer" and event.session_id not in started:
                started.add(event.session_id)
                d["starts"] += 1
            elif event.kind == "complete":
                d["completions"] += 1
            elif event.kind == "conversion_emitted":
                d["conversions"] += 1
        rows = []
        for i, day in enumerate(sorted(per_day)):
            d = per_day[day]
            stats = FunnelStats(
                day=i,
                impressions=d["clicks"],  # the service's funnel entry is the click
                clicks=d["clicks"],
                questionnaire_starts=d["starts"],
                completions=d["completions"],
                high_scs_conversions=d["conversions"],
            )
            rows.append(
                {
                    "date": day,
                    "impressions": stats.impressions,
                    "clicks": stats.clicks,
                    "starts": stats.questionnaire_starts,
                    "completions": stats.completions,
                    "conversions": stats.high_scs_conversions,
                    "conversion_rate": stats.conversion_rate,
                }
            )
        return rows


def load_questionnaire_dir(path: str | Path) -> dict[str, Questionnaire]:
    qs = {}
    for f in sorted(Path(path).iterdir()):
        if f.suffix in (".sample", ".json"):
            q = load_ruleset(f)
            qs[q.cancer_type] = q
    if not qs:
        raise ValueError(f"no ruleset documents found in {path}")
    return qs


def default_ruleset_dir() -> Path:
    return Path(__file__).parent / "data" / "rulesets"


def create_app(service: ScreeningService | None = None):
    """FastAPI application; configuration via environment when no service is
    injected: ADSCREEN_RULESET_DIR, ADSCREEN_EVENT_LOG, ADSCREEN_AD_CLIENT
    (``file:<path>`` or ``none``)."""
    from fastapi import FastAPI, Request
    from fastapi.responses import FileResponse, JSONResponse

    if service is None:
        ruleset_dir = os.environ.get("ADSCREEN_RULESET_DIR") or default_ruleset_dir()
        log_path = os.environ.get("ADSCREEN_EVENT_LOG") or None
        ad_mode = os.environ.get("ADSCREEN_AD_CLIENT", "none")
        if ad_mode.startswith("file:"):
            ad_client = FileRecordingAdClient(ad_mode[5:])
        else:
            ad_client = NullAdClient()
        service = ScreeningService(
            load_questionnaire_dir(ruleset_dir), EventLog(log_path), ad_client
        )

    app = FastAPI(title="adscreen service")
    app.state.service = service

    @app.exception_handler(ServiceError)
    async def _service_error(_req: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.post("/v1/sessions", status_code=201)
    def post_session(body: dict):
        for key in ("cancer_type",):
            if key not in body:
                raise ServiceError("bad_request", f"missing field {key!r}")
        sid = service.create_session(
            body["cancer_type"],
            campaign_id=body.get("campaign_id", ""),
            creative_id=body.get("creative_id", ""),
            query_term=body.get("query_term", ""),
        )
        return {"session_id": sid}

    @app.post("/v1/sessions/{sid}/consent")
    def post_consent(sid: str, body: dict):
        state = service.record_consent(sid, body.get("stage", ""), bool(body.get("granted")))
        return {"state": state}

    @app.get("/v1/sessions/{sid}/questionnaire")
    def get_questionnaire(sid: str):
        return service.get_questionnaire(sid)

    @app.post("/v1/sessions/{sid}/answers")
    def post_answers(sid: str, body: dict):
        state = service.submit_answers(
            sid, body.get("answers", {}), age=body.get("age"), sex=body.get("sex")
        )
        return {"state": state}

    @app.get("/v1/sessions/{sid}/result")
    def get_result(sid: str):
        return service.get_result(sid)

    @app.get("/v1/metrics/funnel")
    def get_metrics(date_from: str | None = None, date_to: str | None = None):
        return {"days": service.funnel_metrics(date_from, date_to)}

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    static_dir = os.environ.get("ADSCREEN_STATIC_DIR")
    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="static")

    return app
