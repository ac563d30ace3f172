"""Game service: session lifecycle, event intake with validation,
summaries, durable JSONL export, and a small HTTP+JSON front.

Sessions are independent; events within one session are processed
strictly in order under a per-session lock.  The event store is
append-only and summaries are pure functions of it.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Iterator, Mapping, Sequence
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import events as ev
from .fitting import episodes_from_events, reward_rates, trim_episodes
from .protocols import PROTOCOLS, ExperimentProtocol, Phase

IDLE_WARN_MS = 7_000
IDLE_REJECT_MS = 14_000
ACTION_KINDS = (ev.QUEUE_SELECT, ev.ADVANCE_KEY, ev.DEFECT)


class ServiceError(Exception):
    status = 400


class UnknownSessionError(ServiceError):
    status = 404


class ClosedSessionError(ServiceError):
    status = 409


class OutOfOrderError(ServiceError):
    status = 409


@dataclass
class Violation:
    tick: int
    kind: str
    reason: str

    def to_dict(self) -> dict:
        return {"tick": self.tick, "kind": self.kind, "reason": self.reason}


@dataclass
class _EpisodeState:
    tau: int
    condition: str
    phase: int
    selected: str | None = None  # short / long
    defected: bool = False


@dataclass
class Session:
    id: str
    protocol: ExperimentProtocol
    rho: float
    seed: int
    order: int
    events: list[ev.GameEvent] = field(default_factory=list)
    violations: list[Violation] = field(default_factory=list)
    last_tick: int = -1
    last_ms: int = 0
    last_action_ms: int = 0
    episode: _EpisodeState | None = None
    defocus_count: int = 0
    idle_warnings: int = 0
    rejected: bool = False
    rejected_reason: str | None = None
    closed: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def phase_of(self, ms: int) -> int:
        bounds = self.protocol.phase_bounds_ms()
        for i, (lo, hi) in enumerate(bounds):
            if lo <= ms < hi:
                return i
        return len(bounds) - 1


def build_config(session_id: str, protocol: ExperimentProtocol, rho: float, seed: int) -> dict:
    phases = []
    for i, phase in enumerate(protocol.phases):
        phases.append(
            {
                "duration_s": phase.duration_s,
                "conditions": list(ev.condition_rotation(phase.conditions, seed + 17 * i)),
            }
        )
    schedules: dict[str, dict[str, list[dict]]] = {}
    for condition in protocol.schedules:
        schedules[condition] = {}
        for tau in protocol.queue_lengths:
            entries = protocol.schedule_entries(condition, tau)
            if entries:
                schedules[condition][str(tau)] = [
                    {"position": pos, "points": pts} for pos, pts in entries
                ]
    return {
        "schema_version": ev.SCHEMA_VERSION,
        "session_id": session_id,
        "protocol": protocol.id,
        "rho": rho,
        "tick_ms": protocol.tick_ms,
        "keystrokes_per_advance": protocol.keystrokes_per_advance,
        "queue_lengths": list(protocol.queue_lengths),
        "mu_ss": protocol.mu_ss,
        "phases": phases,
        "schedules": schedules,
        "tau_sampler": {"algo": "splitmix64", "seed": seed},
        "idle_warn_s": IDLE_WARN_MS // 1000,
        "idle_reject_s": IDLE_REJECT_MS // 1000,
    }


class GameService:
    """In-memory session store with optional durable JSONL append."""

    def __init__(self, log_dir: str | Path | None = None, protocols: Mapping[str, ExperimentProtocol] | None = None):
        self._sessions: dict[str, Session] = {}
        self._registry = dict(protocols if protocols is not None else PROTOCOLS)
        self._lock = threading.RLock()
        self._log_dir = Path(log_dir) if log_dir else None
        if self._log_dir:
            self._log_dir.mkdir(parents=True, exist_ok=True)

    # -- sessions ----------------------------------------------------------

    def create_session(
        self, protocol_id: str, seed: int, rho: float | None = None, session_id: str | None = None
    ) -> tuple[str, dict]:
        try:
            protocol = self._registry[protocol_id.upper()]
        except KeyError:
            raise UnknownSessionError(f"unknown protocol {protocol_id!r}") from None
        if rho is None:
            rho = protocol.rho_arms[ev.splitmix64(seed, 0x0A21) % len(protocol.rho_arms)]
        elif rho not in protocol.rho_arms:
            raise ServiceError(f"rho {rho} not offered by {protocol.id}")
        with self._lock:
            sid = session_id or uuid.uuid4().hex[:12]
            if sid in self._sessions:
                raise ServiceError(f"session {sid!r} already exists")
            self._sessions[sid] = Session(
                id=sid, protocol=protocol, rho=float(rho), seed=seed, order=len(self._sessions)
            )
        return sid, build_config(sid, protocol, float(rho), seed)

    def _session(self, session_id: str) -> Session:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise UnknownSessionError(f"unknown session {session_id!r}") from None

    # -- event intake ------------------------------------------------------

    def record_event(self, session_id: str, event: ev.GameEvent) -> dict:
        return self.record_events(session_id, [event])

    def record_events(self, session_id: str, batch: Sequence[ev.GameEvent]) -> dict:
        session = self._session(session_id)
        with session.lock:
            accepted = 0
            new_violations: list[Violation] = []
            appended: list[ev.GameEvent] = []
            for event in batch:
                if session.closed or session.rejected:
                    raise ClosedSessionError(
                        f"session {session_id} is closed"
                        + (f" ({session.rejected_reason})" if session.rejected_reason else "")
                    )
                if event.session != session_id:
                    raise ServiceError("event session id does not match the endpoint")
                if event.tick <= session.last_tick:
                    raise OutOfOrderError(
                        f"tick {event.tick} not greater than last {session.last_tick}"
                    )
                if event.ms < session.last_ms:
                    raise OutOfOrderError("ms must be non-decreasing")
                idle_gap = event.ms - session.last_action_ms
                if event.kind in ACTION_KINDS and idle_gap > IDLE_REJECT_MS:
                    rejected = self._synthesize(
                        session, ev.REJECTED, {"reason": "idle", "gap_ms": idle_gap}
                    )
                    appended.append(rejected)
                    session.rejected = True
                    session.rejected_reason = "idle"
                    break
                if event.kind in ACTION_KINDS and idle_gap > IDLE_WARN_MS:
                    session.idle_warnings += 1
                violation = self._apply(session, event)
                session.events.append(event)
                appended.append(event)
                session.last_tick = event.tick
                session.last_ms = event.ms
                if event.kind in ACTION_KINDS:
                    session.last_action_ms = event.ms
                accepted += 1
                if violation is not None:
                    session.violations.append(violation)
                    new_violations.append(violation)
                if session.defocus_count >= 2 and not session.rejected:
                    rejected = self._synthesize(
                        session, ev.REJECTED, {"reason": "defocus", "count": session.defocus_count}
                    )
                    appended.append(rejected)
                    session.rejected = True
                    session.rejected_reason = "defocus"
                    break
            self._persist(session, appended)
            return {
                "accepted": accepted,
                "violations": [v.to_dict() for v in new_violations],
                "rejected": session.rejected,
                "idle_warnings": session.idle_warnings,
            }

    def _synthesize(self, session: Session, kind: str, payload: dict) -> ev.GameEvent:
        event = ev.GameEvent(
            session=session.id,
            tick=session.last_tick + 1,
            ms=session.last_ms,
            kind=kind,
            payload=payload,
        )
        session.events.append(event)
        session.last_tick = event.tick
        return event

    def _apply(self, session: Session, event: ev.GameEvent) -> Violation | None:
        kind, payload = event.kind, event.payload
        protocol = session.protocol

        def violated(reason: str) -> Violation:
            return Violation(tick=event.tick, kind=kind, reason=reason)

        if kind == ev.EPISODE_START:
            tau = int(payload.get("tau", -1))
            condition = str(payload.get("condition", "none"))
            phase = session.phase_of(event.ms)
            out = None
            if session.episode is not None:
                out = violated("episode started while another is open")
            if tau not in protocol.queue_lengths:
                out = violated(f"tau {tau} not in the protocol's length set")
            if condition not in protocol.phases[phase].conditions:
                out = violated(f"condition {condition!r} not active in phase {phase}")
            session.episode = _EpisodeState(tau=tau, condition=condition, phase=phase)
            return out
        if kind == ev.QUEUE_SELECT:
            state = session.episode
            if state is None or state.selected is not None:
                return violated("queue selection outside the vestibule")
            queue = payload.get("queue")
            if queue not in ("short", "long"):
                return violated(f"unknown queue {queue!r}")
            state.selected = str(queue)
            return None
        if kind == ev.ADVANCE_KEY:
            state = session.episode
            if state is None or state.selected != "long":
                return violated("advance keystroke outside the long queue")
            return None
        if kind == ev.DEFECT:
            state = session.episode
            if state is None or state.selected != "long":
                return violated("defection outside the long queue")
            state.defected = True
            position = int(payload.get("position", -1))
            if not 2 <= position <= state.tau:
                return violated(f"defection position {position} outside 2..{state.tau}")
            return None
        if kind == ev.BONUS_AWARDED:
            state = session.episode
            if state is None:
                return violated("bonus outside an episode")
            scheduled = {pos for pos, _ in protocol.schedule_entries(state.condition, state.tau)}
            position = int(payload.get("position", -1))
            if position not in scheduled:
                return violated(f"bonus at unscheduled position {position}")
            return None
        if kind == ev.SERVED:
            state = session.episode
            session.episode = None
            if state is None:
                return violated("service without an open episode")
            points = float(payload.get("points", -1.0))
            if state.defected or state.selected == "short" or payload.get("queue") == "short":
                expected = protocol.mu_ss
            else:
                expected = protocol.mu_ss * state.tau * session.rho - protocol.schedule_total(
                    state.condition, state.tau
                )
            if abs(points - expected) > 1e-6:
                return violated(f"points {points} != expected {expected}")
            return None
        if kind == ev.DEFOCUS:
            session.defocus_count += 1
            return None
        if kind in (ev.IDLE_WARNING, ev.REJECTED):
            if kind == ev.REJECTED:
                session.rejected = True
                session.rejected_reason = str(payload.get("reason", "client"))
            return None
        return violated(f"unhandled event kind {kind}")

    def _persist(self, session: Session, batch: Sequence[ev.GameEvent]) -> None:
        if not self._log_dir or not batch:
            return
        path = self._log_dir / f"{session.id}.jsonl"
        with open(path, "a", encoding="utf-8") as fh:
            for event in batch:
                fh.write(ev.event_to_line(event))
                fh.write("\n")

    # -- summaries and export ----------------------------------------------

    def session_summary(self, session_id: str) -> dict:
        session = self._session(session_id)
        with session.lock:
            events = list(session.events)
        episodes = episodes_from_events(events)
        kept = trim_episodes(episodes, session.protocol)
        rates = reward_rates(kept)
        hazard: dict[str, dict] = {}
        from .fitting import EmpiricalHazard

        emp = EmpiricalHazard.from_episodes(kept)
        for tau in emp.taus():
            h = emp.population_hazard(tau)
            hazard[str(tau)] = {
                "h": [None if not np.isfinite(x) else float(x) for x in h],
                "episodes": int(sum(emp.episodes[(s, t)] for (s, t) in emp.episodes if t == tau)),
            }
        # Raw-event score: exactly what a client accumulates on SERVED and
        # BONUS_AWARDED, so replays must reproduce it to the point.
        score = sum(
            float(e.payload.get("points", 0.0))
            for e in events
            if e.kind in (ev.SERVED, ev.BONUS_AWARDED)
        )
        return {
            "session_id": session_id,
            "protocol": session.protocol.id,
            "rho": session.rho,
            "score": score,
            "episodes_total": len(episodes),
            "episodes_kept": len(kept),
            "no_usable_episodes": not kept,
            "reward_rate": rates.get(session_id),
            "hazard": hazard,
            "episodes": [
                {
                    "tau": e.tau,
                    "condition": e.condition,
                    "phase": e.phase,
                    "outcome": "completed" if e.defect_step is None else f"defected@{e.defect_step}",
                    "points": e.points,
                    "bonuses": e.bonuses,
                    "start_ms": e.start_ms,
                    "end_ms": e.end_ms,
                }
                for e in kept
            ],
            "rejected": session.rejected,
            "rejected_reason": session.rejected_reason,
            "idle_warnings": session.idle_warnings,
            "violations": [v.to_dict() for v in session.violations],
        }

    def iter_events(
        self, sessions: Sequence[str] | None = None, protocol: str | None = None
    ) -> Iterator[ev.GameEvent]:
        with self._lock:
            ordered = sorted(self._sessions.values(), key=lambda s: s.order)
        for session in ordered:
            if sessions is not None and session.id not in sessions:
                continue
            if protocol is not None and session.protocol.id != protocol.upper():
                continue
            with session.lock:
                batch = list(session.events)
            yield from batch

    def export_logs(
        self, sessions: Sequence[str] | None = None, protocol: str | None = None
    ) -> Iterator[str]:
        for event in self.iter_events(sessions, protocol):
            yield ev.event_to_line(event)


def protocol_from_dict(doc: Mapping) -> ExperimentProtocol:
    """Protocol definition from a JSON document (for --protocol-dir)."""
    schedules = {
        condition: {
            int(tau): tuple((int(p), float(x)) for p, x in entries)
            for tau, entries in by_tau.items()
        }
        for condition, by_tau in doc.get("schedules", {}).items()
    }
    return ExperimentProtocol(
        id=str(doc["id"]).upper(),
        rho_arms=tuple(float(r) for r in doc["rho_arms"]),
        tick_ms=int(doc["tick_ms"]),
        queue_lengths=tuple(int(t) for t in doc["queue_lengths"]),
        keystrokes_per_advance=int(doc["keystrokes_per_advance"]),
        phases=tuple(
            Phase(duration_s=int(d), conditions=tuple(c)) for d, c in doc["phases"]
        ),
        schedules=schedules,
        mu_ss=float(doc.get("mu_ss", 100.0)),
    )


def load_protocol_dir(path: str | Path) -> dict[str, ExperimentProtocol]:
    registry = dict(PROTOCOLS)
    for file in sorted(Path(path).glob("*.json")):
        with open(file, "r", encoding="utf-8") as fh:
            protocol = protocol_from_dict(json.load(fh))
        registry[protocol.id] = protocol
    return registry


# ---------------------------------------------------------------------------
# HTTP front
# ---------------------------------------------------------------------------


def _event_from_wire(session_id: str, doc: Mapping) -> ev.GameEvent:
    return ev.GameEvent(
        session=str(doc.get("session", session_id)),
        tick=int(doc["tick"]),
        ms=int(doc["ms"]),
        kind=str(doc["kind"]),
        payload=doc.get("payload", {}),
    )


class _Handler(BaseHTTPRequestHandler):
    service: GameService  # set by make_server

    def log_message(self, *args) -> None:  # quiet by default
        pass

    def _send_json(self, status: int, doc) -> None:
        body = json.dumps(doc).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error(self, exc: Exception) -> None:
        status = getattr(exc, "status", 400)
        self._send_json(status, {"error": {"type": type(exc).__name__, "message": str(exc)}})

    def _read_body(self):
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length) if length else b"{}"
        return json.loads(raw)

    def do_POST(self) -> None:
        try:
            parts = [p for p in urlparse(self.path).path.split("/") if p]
            if parts == ["sessions"]:
                doc = self._read_body()
                sid, config = self.service.create_session(
                    protocol_id=str(doc["protocol"]),
                    seed=int(doc.get("seed", 0)),
                    rho=doc.get("rho"),
                )
                self._send_json(200, {"session_id": sid, "config": config})
                return
            if len(parts) == 3 and parts[0] == "sessions" and parts[2] == "events":
                sid = parts[1]
                doc = self._read_body()
                if not isinstance(doc, list):
                    raise ServiceError("expected a JSON array of events")
                batch = [_event_from_wire(sid, item) for item in doc]
                receipt = self.service.record_events(sid, batch)
                self._send_json(200, receipt)
                return
            raise UnknownSessionError(f"no route for {self.path}")
        except Exception as exc:  # surfaced as machine-readable JSON
            self._send_error(exc)

    def do_GET(self) -> None:
        try:
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            if len(parts) == 3 and parts[0] == "sessions" and parts[2] == "summary":
                self._send_json(200, self.service.session_summary(parts[1]))
                return
            if parts == ["export"]:
                params = parse_qs(url.query)
                sessions = params.get("session")
                protocol = params.get("protocol", [None])[0]
                body = "".join(line + "\n" for line in self.service.export_logs(sessions, protocol))
                data = body.encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/x-ndjson")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)
                return
            raise UnknownSessionError(f"no route for {self.path}")
        except Exception as exc:
            self._send_error(exc)


def make_server(service: GameService, port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve(port: int, protocol_dir: str | Path | None = None, log_dir: str | Path | None = None) -> None:
    registry = load_protocol_dir(protocol_dir) if protocol_dir else None
    service = GameService(log_dir=log_dir, protocols=registry)
    server = make_server(service, port)
    host, bound_port = server.server_address
    print(f"game service listening on http://{host}:{bound_port}")
    try:
        server.serve_forever()
    finally:
        server.server_close()
