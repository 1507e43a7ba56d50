"""Session-scoped online selection over HTTP.

A session holds one selector's state (policy, budget, ratio bounds) on the
server; clients stream prompts one ``select`` call at a time and get the
enrich-or-pass decision plus threshold telemetry back.  Decisions are
irrevocable and per-session processing is serialized, so concurrent calls
against one session cannot double-spend.  Optional idempotency keys make
retries safe: a replay with the same key returns the stored response
without re-executing.  Idle sessions expire (default one hour) and their
state is discarded; ``close`` freezes a session early while leaving its
report readable until expiry.

The request/response documents are plain JSON; infinite budgets are spelled
``"inf"`` on the wire.  The business logic lives in :class:`SessionStore`,
which speaks the exact same documents in process — the FastAPI layer only
routes and translates errors, so wire and in-process behavior match.

Run with ``python -m chunkselect.service``; the listen address comes from
the ``CHUNKSELECT_ADDR`` environment variable (default 127.0.0.1:8411).
"""

from __future__ import annotations

import json
import math
import os
import random
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict

from .metrics import compute_metrics
from .model import Candidate, Decision, PromptArrival
from .selectors import (
    POLICY_NAMES,
    SelectorState,
    ThresholdParams,
    make_stepper,
    psi,
)

SCHEMA_VERSION = 1
DEFAULT_TTL_SECONDS = 3600.0
ADDR_ENV_VAR = "CHUNKSELECT_ADDR"
TTL_ENV_VAR = "CHUNKSELECT_SESSION_TTL"
DEFAULT_ADDR = "127.0.0.1:8411"


class UnknownSessionError(KeyError):
    """No live session with that id (never created, expired, or purged)."""


class ClosedSessionError(RuntimeError):
    """The session is closed; it no longer accepts selections."""


class IdempotencyConflictError(RuntimeError):
    """An idempotency key was reused with a different request payload."""


def _parse_budget(raw) -> float:
    if isinstance(raw, str):
        if raw.strip().lower() == "inf":
            return math.inf
        raise ValueError(f"budget must be a number or 'inf', got {raw!r}")
    value = float(raw)
    if math.isnan(value) or value < 0:
        raise ValueError(f"budget must be >= 0 (or 'inf'), got {raw!r}")
    return value


def _wire_number(x: float):
    """Infinities are spelled 'inf' in response documents (strict JSON)."""
    if x is None:
        return None
    if math.isinf(x):
        return "inf"
    return x


@dataclass
class _Session:
    session_id: str
    policy: str
    budget: float
    params: ThresholdParams
    state: SelectorState
    step: Callable[[PromptArrival], Decision]
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_access: float = 0.0
    closed: bool = False
    idempotency: dict[str, tuple[str, dict]] = field(default_factory=dict)


class SessionStore:
    """Thread-safe session registry speaking JSON-shaped documents.

    All public methods take and return plain dicts so that the HTTP layer
    can pass them through unchanged; tests drive the store directly to
    check wire/in-process parity.
    """

    def __init__(
        self,
        ttl_seconds: float = DEFAULT_TTL_SECONDS,
        clock: Callable[[], float] = time.monotonic,
    ):
        if ttl_seconds <= 0:
            raise ValueError(f"ttl_seconds must be > 0, got {ttl_seconds!r}")
        self.ttl_seconds = ttl_seconds
        self._clock = clock
        self._sessions: dict[str, _Session] = {}
        self._registry_lock = threading.Lock()

    # -- session lifecycle -------------------------------------------------

    def create_session(
        self,
        budget,
        ratio_lower: float,
        ratio_upper: float,
        policy: str = "ucosa",
        seed: int = 0,
        total_prompts: int | None = None,
    ) -> dict:
        budget_value = _parse_budget(budget)
        params = ThresholdParams(ratio_lower, ratio_upper)  # raises on bad bounds
        if policy not in POLICY_NAMES:
            raise ValueError(
                f"unknown policy {policy!r}; choose from {', '.join(POLICY_NAMES)}"
            )
        if policy == "balance":
            if total_prompts is None or total_prompts < 1:
                raise ValueError("the balance policy requires total_prompts >= 1")
        state, step = make_stepper(
            policy,
            budget_value,
            params=params if policy == "ucosa" else None,
            rng=random.Random(seed),
            total_prompts=total_prompts,
        )
        session = _Session(
            session_id=uuid.uuid4().hex,
            policy=policy,
            budget=budget_value,
            params=params,
            state=state,
            step=step,
        )
        now = self._clock()
        session.last_access = now
        with self._registry_lock:
            self._purge_expired(now)
            self._sessions[session.session_id] = session
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": session.session_id,
            "policy": policy,
            "budget": _wire_number(budget_value),
            "ratio_lower": ratio_lower,
            "ratio_upper": ratio_upper,
            "remaining": _wire_number(state.remaining),
        }

    def _purge_expired(self, now: float) -> None:
        expired = [
            sid
            for sid, s in self._sessions.items()
            if now - s.last_access > self.ttl_seconds
        ]
        for sid in expired:
            del self._sessions[sid]

    def _get(self, session_id: str) -> _Session:
        now = self._clock()
        with self._registry_lock:
            session = self._sessions.get(session_id)
            if session is not None and now - session.last_access > self.ttl_seconds:
                del self._sessions[session_id]
                session = None
            if session is None:
                raise UnknownSessionError(f"no live session {session_id!r}")
            session.last_access = now
            return session

    # -- operations ---------------------------------------------------------

    def select(
        self,
        session_id: str,
        prompt_id: str,
        candidates: list[dict],
        idempotency_key: str | None = None,
    ) -> dict:
        session = self._get(session_id)
        parsed = self._parse_candidates(candidates)
        fingerprint = json.dumps(
            {"prompt_id": prompt_id, "candidates": candidates}, sort_keys=True
        )
        with session.lock:
            if session.closed:
                raise ClosedSessionError(f"session {session_id!r} is closed")
            if idempotency_key is not None:
                stored = session.idempotency.get(idempotency_key)
                if stored is not None:
                    stored_fingerprint, stored_response = stored
                    if stored_fingerprint != fingerprint:
                        raise IdempotencyConflictError(
                            f"idempotency key {idempotency_key!r} was already used "
                            "with a different request"
                        )
                    return dict(stored_response)

            state = session.state
            z_before = state.z
            psi_before = (
                psi(z_before, session.params) if session.policy == "ucosa" else None
            )
            decision = session.step(PromptArrival(prompt_id, parsed))
            chosen = decision.candidate
            response = {
                "schema_version": SCHEMA_VERSION,
                "session_id": session_id,
                "prompt_id": prompt_id,
                "outcome": "enriched" if chosen is not None else "passthrough",
                "chunk_id": chosen.chunk_id if chosen is not None else None,
                "price": chosen.price if chosen is not None else None,
                "relevance": chosen.relevance if chosen is not None else None,
                "z_before": z_before,
                "psi_before": psi_before,
                "spent": state.spent,
                "remaining": _wire_number(state.remaining),
                "decision_index": len(state.decisions) - 1,
            }
            if idempotency_key is not None:
                session.idempotency[idempotency_key] = (fingerprint, dict(response))
            return response

    @staticmethod
    def _parse_candidates(candidates: list[dict]) -> tuple[Candidate, ...]:
        # Structural validation only.  The session's ratio bounds tune the
        # threshold; a candidate whose ratio falls outside them is the
        # caller breaking their own promise, and the policy simply treats
        # it like any other arrival rather than failing the request.
        parsed = []
        seen: set[str] = set()
        for index, raw in enumerate(candidates):
            chunk_id = raw["chunk_id"]
            if chunk_id in seen:
                raise ValueError(f"duplicate chunk_id {chunk_id!r} in request")
            seen.add(chunk_id)
            relevance = float(raw["relevance"])
            price = float(raw["price"])
            if not 0 < relevance <= 1:
                raise ValueError(
                    f"candidates[{index}].relevance must be in (0, 1], got {relevance!r}"
                )
            if not price > 0 or math.isinf(price):
                raise ValueError(
                    f"candidates[{index}].price must be finite and > 0, got {price!r}"
                )
            parsed.append(
                Candidate(chunk_id, raw.get("source_id", ""), relevance, price)
            )
        return tuple(parsed)

    def report(self, session_id: str) -> dict:
        session = self._get(session_id)
        with session.lock:
            return self._report_locked(session)

    def _report_locked(self, session: _Session) -> dict:
        state = session.state
        metrics = compute_metrics(state.decisions)
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": session.session_id,
            "policy": session.policy,
            "closed": session.closed,
            "budget": _wire_number(session.budget),
            "remaining": _wire_number(state.remaining),
            "metrics": {
                "nep": metrics.nep,
                "ar": metrics.ar,
                "nep_times_ar": metrics.nep_times_ar,
                "total_relevance": metrics.total_relevance,
                "spent": metrics.spent,
                "perf_to_budget": metrics.perf_to_budget,
            },
            "decisions": [
                {
                    "prompt_id": d.prompt_id,
                    "outcome": "enriched" if d.candidate is not None else "passthrough",
                    "chunk_id": d.candidate.chunk_id if d.candidate else None,
                    "relevance": d.candidate.relevance if d.candidate else None,
                    "price": d.candidate.price if d.candidate else None,
                    "z_at_decision": d.z_at_decision,
                }
                for d in state.decisions
            ],
        }

    def close(self, session_id: str) -> dict:
        session = self._get(session_id)
        with session.lock:
            session.closed = True
            return self._report_locked(session)


# -- HTTP layer --------------------------------------------------------------


class CandidatePayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    chunk_id: str
    source_id: str = ""
    relevance: float
    price: float


class CreateSessionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    budget: float | str
    ratio_lower: float
    ratio_upper: float
    policy: str = "ucosa"
    seed: int = 0
    total_prompts: int | None = None


class SelectRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    prompt_id: str
    candidates: list[CandidatePayload]
    idempotency_key: str | None = None


def create_app(*, session_ttl: float | None = None) -> FastAPI:
    """Build the service app (TTL from arg, env var, or the 1-hour default)."""
    if session_ttl is None:
        session_ttl = float(os.environ.get(TTL_ENV_VAR, DEFAULT_TTL_SECONDS))
    store = SessionStore(ttl_seconds=session_ttl)
    app = FastAPI(title="chunkselect selection service")
    app.state.store = store

    @app.post("/v1/sessions", status_code=201)
    def create_session(request: CreateSessionRequest) -> dict:
        try:
            return store.create_session(
                budget=request.budget,
                ratio_lower=request.ratio_lower,
                ratio_upper=request.ratio_upper,
                policy=request.policy,
                seed=request.seed,
                total_prompts=request.total_prompts,
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/v1/sessions/{session_id}/select")
    def select(session_id: str, request: SelectRequest) -> dict:
        try:
            return store.select(
                session_id,
                request.prompt_id,
                [c.model_dump() for c in request.candidates],
                idempotency_key=request.idempotency_key,
            )
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except (ClosedSessionError, IdempotencyConflictError) as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/v1/sessions/{session_id}/report")
    def report(session_id: str) -> dict:
        try:
            return store.report(session_id)
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.post("/v1/sessions/{session_id}/close")
    def close(session_id: str) -> dict:
        try:
            return store.close(session_id)
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    return app


def run(addr: str | None = None) -> None:  # pragma: no cover - manual entry point
    import uvicorn

    addr = addr or os.environ.get(ADDR_ENV_VAR, DEFAULT_ADDR)
    host, _, port = addr.rpartition(":")
    uvicorn.run(create_app(), host=host or "127.0.0.1", port=int(port))


if __name__ == "__main__":  # pragma: no cover
    run()
