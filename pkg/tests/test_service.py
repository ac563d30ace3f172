import json
import threading
import urllib.request

import numpy as np
import pytest

from dgmdp import AgentParams
from dgmdp.events import (
    ADVANCE_KEY,
    DEFECT,
    DEFOCUS,
    EPISODE_START,
    QUEUE_SELECT,
    SERVED,
    GameEvent,
    parse_line,
    synthesize_session,
)
from dgmdp.fitting import empirical_hazard
from dgmdp.protocols import get_protocol
from dgmdp.service import (
    ClosedSessionError,
    GameService,
    OutOfOrderError,
    UnknownSessionError,
    make_server,
)


def make_event(session, tick, ms, kind, **payload):
    return GameEvent(session=session, tick=tick, ms=ms, kind=kind, payload=payload)


def short_episode(session, seq, ms, tau=6):
    return [
        make_event(session, seq, ms, EPISODE_START, tau=tau, condition="none", rho=1.5),
        make_event(session, seq + 1, ms + 1000, QUEUE_SELECT, queue="short", tau=tau),
        make_event(session, seq + 2, ms + 1000, SERVED, points=100.0, tau=tau, position=1, queue="short"),
    ]


class TestSessions:
    def test_create_session_config(self):
        service = GameService()
        sid, config = service.create_session("EXP1", seed=3, rho=1.25)
        assert config["rho"] == 1.25
        assert config["tick_ms"] == 2000
        assert config["queue_lengths"] == [4, 6, 8, 10, 12, 14]
        assert config["tau_sampler"] == {"algo": "splitmix64", "seed": 3}
        assert config["idle_warn_s"] == 7 and config["idle_reject_s"] == 14

    def test_exp5_two_phase_plan(self):
        service = GameService()
        _, config = service.create_session("EXP5", seed=1)
        assert [p["duration_s"] for p in config["phases"]] == [240, 420]
        assert sorted(config["phases"][1]["conditions"]) == ["early", "late"]
        assert "6" in config["schedules"]["early"]

    def test_unknown_protocol(self):
        with pytest.raises(UnknownSessionError):
            GameService().create_session("EXP9", seed=0)

    def test_rho_must_be_offered(self):
        from dgmdp.service import ServiceError

        with pytest.raises(ServiceError):
            GameService().create_session("EXP2", seed=0, rho=1.25)


class TestRecording:
    def test_nominal_episode_completes(self):
        service = GameService()
        sid, _ = service.create_session("EXP2", seed=0, session_id="s")
        tau = 4
        events = [
            make_event("s", 0, 0, EPISODE_START, tau=tau, condition="none", rho=1.5),
            make_event("s", 1, 2000, QUEUE_SELECT, queue="long", tau=tau),
            make_event("s", 2, 3000, ADVANCE_KEY, position=2, tau=tau),
            make_event("s", 3, 4000, ADVANCE_KEY, position=3, tau=tau),
            make_event("s", 4, 5000, ADVANCE_KEY, position=4, tau=tau),
            make_event("s", 5, 6000, SERVED, points=600.0, tau=tau, position=tau, queue="long"),
        ]
        receipt = service.record_events("s", events)
        assert receipt["accepted"] == 6
        assert receipt["violations"] == []
        summary = service.session_summary("s")
        assert summary["episodes_total"] == 1
        assert summary["episodes_kept"] == 0  # inside the head trim window

    def test_defocus_twice_rejects(self):
        service = GameService()
        service.create_session("EXP2", seed=0, session_id="s")
        service.record_event("s", make_event("s", 0, 0, DEFOCUS))
        receipt = service.record_event("s", make_event("s", 1, 500, DEFOCUS))
        assert receipt["rejected"]
        with pytest.raises(ClosedSessionError):
            service.record_event("s", make_event("s", 5, 1000, EPISODE_START, tau=4, condition="none"))
        summary = service.session_summary("s")
        assert summary["rejected"] and summary["rejected_reason"] == "defocus"

    def test_advance_in_vestibule_is_flagged_not_dropped(self):
        service = GameService()
        service.create_session("EXP2", seed=0, session_id="s")
        service.record_event("s", make_event("s", 0, 0, EPISODE_START, tau=4, condition="none"))
        receipt = service.record_event("s", make_event("s", 1, 1000, ADVANCE_KEY, position=2))
        assert len(receipt["violations"]) == 1
        assert "long queue" in receipt["violations"][0]["reason"]
        assert len(list(service.iter_events(["s"]))) == 2  # still logged

    def test_out_of_order_tick_refused(self):
        service = GameService()
        service.create_session("EXP2", seed=0, session_id="s")
        service.record_event("s", make_event("s", 5, 1000, EPISODE_START, tau=4, condition="none"))
        with pytest.raises(OutOfOrderError):
            service.record_event("s", make_event("s", 5, 2000, QUEUE_SELECT, queue="long"))

    def test_idle_rejection_after_14s(self):
        service = GameService()
        service.create_session("EXP2", seed=0, session_id="s")
        service.record_events("s", short_episode("s", 0, 0))
        late = make_event("s", 10, 16_000, QUEUE_SELECT, queue="short")
        receipt = service.record_events("s", [
            make_event("s", 9, 15_500, EPISODE_START, tau=4, condition="none"),
            late,
        ])
        assert receipt["rejected"]
        assert service.session_summary("s")["rejected_reason"] == "idle"

    def test_idle_warning_counted(self):
        service = GameService()
        service.create_session("EXP2", seed=0, session_id="s")
        service.record_events("s", short_episode("s", 0, 0))
        service.record_events("s", [
            make_event("s", 3, 9_000, EPISODE_START, tau=4, condition="none"),
            make_event("s", 4, 9_500, QUEUE_SELECT, queue="short"),
            make_event("s", 5, 9_500, SERVED, points=100.0, tau=4, position=1, queue="short"),
        ])
        assert service.session_summary("s")["idle_warnings"] == 1

    def test_wrong_points_flagged(self):
        service = GameService()
        service.create_session("EXP2", seed=0, session_id="s")
        receipt = service.record_events("s", [
            make_event("s", 0, 0, EPISODE_START, tau=4, condition="none"),
            make_event("s", 1, 1000, QUEUE_SELECT, queue="short"),
            make_event("s", 2, 1000, SERVED, points=250.0, tau=4, position=1, queue="short"),
        ])
        assert any("points" in v["reason"] for v in receipt["violations"])


class TestSummary:
    def test_only_head_window_play_is_empty(self):
        service = GameService()
        service.create_session("EXP2", seed=0, session_id="s")
        service.record_events("s", short_episode("s", 0, 0))
        summary = service.session_summary("s")
        assert summary["episodes_kept"] == 0
        assert summary["no_usable_episodes"]

    def test_deterministic_short_player_rate_100(self):
        service = GameService()
        service.create_session("EXP2", seed=0, session_id="s")
        seq = 0
        for i in range(70):  # continuous play from the session start
            service.record_events("s", short_episode("s", seq, 4_000 * i))
            seq += 3
        summary = service.session_summary("s")
        assert summary["episodes_kept"] > 50
        assert summary["reward_rate"] == pytest.approx(100.0)
        assert summary["hazard"]["6"]["h"][0] == 1.0

    def test_summary_matches_fitting_on_export(self):
        protocol = get_protocol("EXP2")
        agent = AgentParams(gamma=0.957, sigma1=81.3, sigma=21.3, mu_e=-52.1)
        events, _ = synthesize_session(protocol, agent, "sX", seed=5)
        service = GameService()
        service.create_session("EXP2", seed=5, session_id="sX")
        receipt = service.record_events("sX", events)
        assert receipt["violations"] == []
        summary = service.session_summary("sX")
        exported = [parse_line(line) for line in service.export_logs(["sX"])]
        emp = empirical_hazard(exported, protocol)
        for tau in emp.taus():
            expected = emp.population_hazard(tau)
            got = np.array(
                [np.nan if x is None else x for x in summary["hazard"][str(tau)]["h"]]
            )
            np.testing.assert_allclose(got, expected, equal_nan=True)


class TestExport:
    def test_three_events_three_lines(self):
        service = GameService()
        service.create_session("EXP2", seed=0, session_id="s")
        service.record_events("s", short_episode("s", 0, 0))
        lines = list(service.export_logs())
        assert len(lines) == 3

    def test_empty_store_empty_stream(self):
        assert list(GameService().export_logs()) == []

    def test_round_trip_reproduces_summaries(self):
        protocol = get_protocol("EXP2")
        agent = AgentParams(gamma=0.957, sigma1=81.3, sigma=21.3, mu_e=-52.1)
        events, _ = synthesize_session(protocol, agent, "sY", seed=6)
        first = GameService()
        first.create_session("EXP2", seed=6, session_id="sY")
        first.record_events("sY", events)
        exported = list(first.export_logs())

        second = GameService()
        second.create_session("EXP2", seed=6, session_id="sY")
        second.record_events("sY", [parse_line(line) for line in exported])
        assert second.session_summary("sY") == first.session_summary("sY")
        assert list(second.export_logs()) == exported

    def test_byte_stable(self):
        def build():
            service = GameService()
            service.create_session("EXP2", seed=0, session_id="s")
            service.record_events("s", short_episode("s", 0, 0))
            return "".join(line + "\n" for line in service.export_logs())

        assert build() == build()


class TestDurableLog:
    def test_events_appended_to_disk(self, tmp_path):
        service = GameService(log_dir=tmp_path)
        service.create_session("EXP2", seed=0, session_id="s")
        service.record_events("s", short_episode("s", 0, 0))
        service.record_events("s", short_episode("s", 3, 6_000))
        lines = (tmp_path / "s.jsonl").read_text().strip().split("\n")
        assert len(lines) == 6
        assert parse_line(lines[0]).kind == EPISODE_START


class TestHttp:
    @pytest.fixture()
    def server(self):
        service = GameService()
        httpd = make_server(service, port=0)
        thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        thread.start()
        yield f"http://127.0.0.1:{httpd.server_address[1]}", service
        httpd.shutdown()
        httpd.server_close()

    def _post(self, url, doc):
        req = urllib.request.Request(
            url, data=json.dumps(doc).encode(), headers={"Content-Type": "application/json"}
        )
        with urllib.request.urlopen(req) as resp:
            return json.loads(resp.read())

    def _get(self, url):
        with urllib.request.urlopen(url) as resp:
            return resp.read().decode()

    def test_full_flow(self, server):
        base, _ = server
        created = self._post(f"{base}/sessions", {"protocol": "EXP2", "seed": 9})
        sid = created["session_id"]
        assert created["config"]["tick_ms"] == 1000
        events = [
            {"tick": 0, "ms": 0, "kind": EPISODE_START, "payload": {"tau": 6, "condition": "none", "rho": 1.5}},
            {"tick": 1, "ms": 1000, "kind": QUEUE_SELECT, "payload": {"queue": "short", "tau": 6}},
            {"tick": 2, "ms": 1000, "kind": SERVED, "payload": {"points": 100.0, "tau": 6, "position": 1, "queue": "short"}},
        ]
        receipt = self._post(f"{base}/sessions/{sid}/events", events)
        assert receipt["accepted"] == 3
        summary = json.loads(self._get(f"{base}/sessions/{sid}/summary"))
        assert summary["episodes_total"] == 1
        export = self._get(f"{base}/export?session={sid}")
        assert len(export.strip().split("\n")) == 3

    def test_error_is_machine_readable(self, server):
        base, _ = server
        req = urllib.request.Request(
            f"{base}/sessions", data=json.dumps({"protocol": "EXP9"}).encode(),
            headers={"Content-Type": "application/json"},
        )
        try:
            urllib.request.urlopen(req)
            raise AssertionError("expected HTTP error")
        except urllib.error.HTTPError as err:
            doc = json.loads(err.read())
            assert doc["error"]["type"] == "UnknownSessionError"
            assert err.code == 404


def test_out_of_set_tau_flagged():
    service = GameService()
    service.create_session("EXP4", seed=0, session_id="s")
    receipt = service.record_event(
        "s", make_event("s", 0, 0, EPISODE_START, tau=5, condition="none", rho=1.5)
    )
    assert any("length set" in v["reason"] for v in receipt["violations"])


def test_concurrent_sessions_append_independently(tmp_path):
    service = GameService(log_dir=tmp_path)
    for sid in ("a", "b"):
        service.create_session("EXP2", seed=0, session_id=sid)

    def pump(sid):
        seq = 0
        for i in range(30):
            service.record_events(sid, short_episode(sid, seq, 4_000 * i))
            seq += 3

    threads = [threading.Thread(target=pump, args=(sid,)) for sid in ("a", "b")]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for sid in ("a", "b"):
        assert len(list(service.iter_events([sid]))) == 90
        assert (tmp_path / f"{sid}.jsonl").read_text().count("\n") == 90


def test_protocol_dir_extends_registry(tmp_path):
    import json as _json

    from dgmdp.service import load_protocol_dir

    doc = {
        "id": "CUSTOM1",
        "rho_arms": [1.5],
        "tick_ms": 1000,
        "queue_lengths": [3, 5],
        "keystrokes_per_advance": 1,
        "phases": [[120, ["none"]]],
        "schedules": {"none": {}},
    }
    (tmp_path / "custom.json").write_text(_json.dumps(doc))
    registry = load_protocol_dir(tmp_path)
    assert "CUSTOM1" in registry and "EXP1" in registry
    service = GameService(protocols=registry)
    _, config = service.create_session("CUSTOM1", seed=1)
    assert config["queue_lengths"] == [3, 5]
