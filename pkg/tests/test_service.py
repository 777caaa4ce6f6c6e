import json
import os
import time

import pytest

from ods.errors import ValidationError
from ods.optimizer import LinkFeatures, LogStore, offline_recommend
from ods.records import dumps_jsonl
from ods.service import Api, ApiError, Client, Config, OdsHttpServer, OdsService

from test_records_recommend import corpus


def _slow(delay):
    def hook(run, task, moved):
        time.sleep(delay)
    return hook


@pytest.fixture
def tree(tmp_path):
    src = tmp_path / "src" / "set"
    src.mkdir(parents=True)
    data = {}
    for i in range(4):
        b = os.urandom(250_000 + i)
        (src / f"f{i}").write_bytes(b)
        data[f"f{i}"] = b
    return tmp_path, data


def _svc(tmp_path, **kw):
    fault = kw.pop("fault", None)
    cfg = Config(port=0, data_dir=str(tmp_path / "data"), chunk_size=32768, **kw)
    return OdsService(cfg, fault=fault)


def _body(root, out="out", **extra):
    return dict({"src": f"localfs://{root}/src/set", "dst": f"localfs://{root}/{out}",
                 "params": {"cc": 2, "p": 2, "pp": 2}}, **extra)


def _wait(svc, job_id, timeout=20):
    end = time.monotonic() + timeout
    while time.monotonic() < end:
        st = svc.job_status(job_id)
        if st["state"] in ("done", "failed"):
            return st
        time.sleep(0.02)
    raise AssertionError(f"job {job_id} did not finish: {svc.job_status(job_id)}")


def _req(api, method, target, body=None, **headers):
    raw = json.dumps(body).encode() if body is not None else b""
    r = api.handle(method, target, headers, raw)
    return r.status, r.body


def test_submit_runs_and_copies(tree):
    root, data = tree
    svc = _svc(root)
    try:
        api = Api(svc)
        status, env = _req(api, "POST", "/jobs", _body(root), **{"X-Request-Id": "abc"})
        assert status == 202 and env["v"] == 1 and env["request_id"] == "abc"
        st = _wait(svc, env["data"]["job_id"])
        assert st["state"] == "done" and st["committed"] == st["total"] == sum(map(len, data.values()))
        for k, b in data.items():
            assert (root / "out" / "set" / k).read_bytes() == b
        status, eta = _req(api, "GET", f"/jobs/{st['job_id']}/eta")
        assert status == 200 and eta["data"]["expected_completion"] == st["finished_at"]
    finally:
        svc.close()


def test_error_envelopes(tree):
    root, _ = tree
    svc = _svc(root, token="tok")
    try:
        api = Api(svc)
        status, env = _req(api, "GET", "/monitor")
        assert status == 401 and env["error"]["code"] == "unauthorized"
        auth = {"Authorization": "Bearer tok"}
        status, env = _req(api, "POST", "/jobs", {"src": f"localfs://{root}/src/set"}, **auth)
        assert status == 400 and "dst" in env["error"]["detail"]["fields"]
        status, env = _req(api, "GET", "/jobs/nope", **auth)
        assert status == 404 and env["error"]["code"] == "not_found"
        status, env = _req(api, "GET", "/nowhere", **auth)
        assert status == 404
        status, env = _req(api, "DELETE", "/jobs", **auth)
        assert status == 405
        r = api.handle("POST", "/jobs", auth, b"{not json")
        assert r.status == 400
        status, env = _req(api, "POST", "/jobs", _body(root, params={"cc": 64, "p": 64, "pp": 1}), **auth)
        assert status == 400 and env["error"]["code"] == "parameter_domain"
        status, env = _req(api, "POST", "/jobs", _body(root), **auth)
        jid = env["data"]["job_id"]
        _wait(svc, jid)
        status, env = _req(api, "POST", f"/jobs/{jid}/pause", **auth)
        assert status == 409 and env["error"]["code"] == "illegal_transition"
    finally:
        svc.close()


def test_idempotent_submit(tree):
    root, _ = tree
    svc = _svc(root)
    try:
        api = Api(svc)
        _, a = _req(api, "POST", "/jobs", _body(root), **{"Idempotency-Key": "k1"})
        _, b = _req(api, "POST", "/jobs", _body(root), **{"Idempotency-Key": "k1"})
        assert a["data"]["job_id"] == b["data"]["job_id"] and b["data"]["replayed"]
        assert len(svc.jobs()) == 1
        _wait(svc, a["data"]["job_id"])
    finally:
        svc.close()
    again = _svc(root)
    try:
        _, c = _req(Api(again), "POST", "/jobs", _body(root), **{"Idempotency-Key": "k1"})
        assert c["data"]["job_id"] == a["data"]["job_id"]
    finally:
        again.close()


def test_capacity_and_monitor(tree):
    root, _ = tree
    svc = _svc(root, max_concurrent_jobs=2, fault=_slow(0.005))
    try:
        ids = [svc.submit(_body(root, out=f"o{i}"))["job_id"] for i in range(3)]
        states = [svc.job_status(j)["state"] for j in ids]
        assert states == ["running", "running", "queued"]
        mon = svc.monitor()
        active = [j for j in svc.jobs() if j["state"] not in ("done", "failed")]
        assert len(mon["jobs"]) == len(active) == 3
        assert {j["job_id"] for j in mon["jobs"]} == set(ids)
        for j in ids:
            assert _wait(svc, j)["state"] == "done"
        assert svc.monitor()["jobs"] == []
    finally:
        svc.close()


def test_pause_resume_and_params(tree):
    root, data = tree
    svc = _svc(root, fault=_slow(0.01))
    try:
        jid = svc.submit(_body(root, params={"cc": 1, "p": 1, "pp": 1}))["job_id"]
        time.sleep(0.1)
        assert svc.set_params(jid, {"cc": 2, "p": 2, "pp": 4})["changed"]
        t0 = time.monotonic()
        assert svc.pause(jid)["state"] == "paused"
        assert time.monotonic() - t0 < 2.0       # drains in-flight batches, no timeout
        held = svc.job_status(jid)["committed"]
        time.sleep(0.15)
        assert svc.job_status(jid)["committed"] == held
        svc.resume(jid)
        st = _wait(svc, jid)
        assert st["state"] == "done" and st["committed"] >= held
        assert [p for _, p in st["params_timeline"]][-1] == {"cc": 2, "p": 2, "pp": 4}
        for k, b in data.items():
            assert (root / "out" / "set" / k).read_bytes() == b
    finally:
        svc.close()


def test_restart_preserves_acknowledged_jobs(tree):
    root, data = tree
    svc = _svc(root, max_concurrent_jobs=1, fault=_slow(0.01))
    ids = [svc.submit(_body(root, out=f"r{i}", params={"cc": 1, "p": 1, "pp": 1}))["job_id"] for i in range(3)]
    time.sleep(0.1)
    svc.close()   # stop mid-transfer
    again = _svc(root, max_concurrent_jobs=1)
    try:
        assert [j["job_id"] for j in again.jobs()] == ids
        for i, j in enumerate(ids):
            assert _wait(again, j)["state"] == "done"
            for k, b in data.items():
                assert (root / f"r{i}" / "set" / k).read_bytes() == b
    finally:
        again.close()


def test_recommend_matches_offline(tmp_path):
    svc = _svc(tmp_path)
    try:
        api = Api(svc)
        status, env = _req(api, "GET", "/recommend?rtt=30&bandwidth=2000&avg_file_size=1e7")
        assert status == 200 and env["data"]["basis"] == "default"
        logs = corpus()
        r = api.handle("POST", "/logs/ingest?format=jsonl", {}, dumps_jsonl(logs).encode())
        assert r.status == 200 and r.body["data"]["accepted"] == len(logs)
        status, env = _req(api, "GET", "/recommend?rtt=30&bandwidth=2000&avg_file_size=1e7")
        want = offline_recommend(LinkFeatures(30, 2000, 1e7), LogStore(logs))
        assert env["data"]["basis"] == "offline" and env["data"]["params"] == want.to_dict()
        status, env = _req(api, "GET", "/recommend?rtt=30")
        assert status == 400
    finally:
        svc.close()


def test_ingest_reports_bad_rows(tmp_path):
    svc = _svc(tmp_path)
    try:
        text = dumps_jsonl(corpus()[:2]) + "{oops\n"
        out = svc.ingest(text, "jsonl")
        assert out["accepted"] == 2 and [e["row"] for e in out["errors"]] == [3]
    finally:
        svc.close()


def test_health(tmp_path):
    svc = _svc(tmp_path)
    try:
        assert svc.health() == {"endpoint_registry": "up", "scheduler": "up", "log_store": "up"}
    finally:
        svc.close()


def test_http_round_trip(tree):
    root, _ = tree
    cfg = Config(port=0, data_dir=str(root / "data"), token="tok")
    with OdsHttpServer(cfg) as srv:
        c = Client(srv.url, "tok")
        assert c.request("GET", "/health")["data"]["scheduler"] == "up"
        with pytest.raises(ApiError) as ei:
            Client(srv.url, "wrong").request("GET", "/jobs")
        assert ei.value.status == 401
        jid = c.request("POST", "/jobs", _body(root))["data"]["job_id"]
        for _ in range(400):
            st = c.request("GET", f"/jobs/{jid}")["data"]
            if st["state"] == "done":
                break
            time.sleep(0.02)
        assert st["state"] == "done"


# ---- config

def test_config_file_and_env(tmp_path):
    ini = tmp_path / "ods.ini"
    ini.write_text("[ods]\nport = 9000\npolicy = sjf\n[tuning]\nmax_samples = 5\n")
    cfg = Config.load(ini, env={})
    assert (cfg.port, cfg.policy, cfg.tuning_samples) == (9000, "sjf", 5)
    cfg = Config.load(ini, env={"ODS_PORT": "9100", "ODS_MAX_JOBS": "4", "ODS_TUNING_SAMPLES": "3"})
    assert (cfg.port, cfg.max_concurrent_jobs, cfg.tuning_samples) == (9100, 4, 3)
    cfg = Config.load(env={"ODS_CONFIG": str(ini)})
    assert cfg.port == 9000


@pytest.mark.parametrize("env", [{"ODS_PORT": "x"}, {"ODS_POLICY": "random"}, {"ODS_MAX_JOBS": "0"},
                                 {"ODS_PEAK_HOURS": "25-3"}])
def test_config_rejects(env):
    with pytest.raises(ValidationError):
        Config.load(env=env)


def test_peak_window():
    from datetime import datetime
    cfg = Config(peak_hours="9-17")
    assert cfg.regime_at(datetime(2026, 1, 5, 10)) == "peak"
    assert cfg.regime_at(datetime(2026, 1, 5, 20)) == "offpeak"


def test_auto_tune_beats_default_on_sim_link(tmp_path):
    from ods import simnet
    from ods.endpoint import MemStore
    from ods.params import ParamVector
    from ods.relay import SimClock

    link = simnet.LinkModel(capacity=1000, rtt=50, buffer=250_000, command_rtt=10,
                            overload_threshold=16, loss_coeff=0.01)
    MemStore.get("auto-src").put("/blob", bytes(128 * 2**20))
    cfg = Config(data_dir=str(tmp_path / "data"), tuning_samples=8, tuning_sample_bytes=4 * 2**20,
                 chunk_size=2**20)
    svc = OdsService(cfg, clock_for=lambda job: SimClock(link), fault=lambda run, task, moved: time.sleep(0.001))
    try:
        jid = svc.submit({"src": "mem://auto-src/blob", "dst": "mem://auto-dst/", "params": "auto"})["job_id"]
        st = _wait(svc, jid, timeout=60)
        assert st["state"] == "done"
        base = simnet.effective_throughput(link, ParamVector(1, 1, 1), 0)
        assert st["outcome"]["avg_throughput"] > 2 * base
        assert len(st["params_timeline"]) >= 2
    finally:
        svc.close()
        MemStore.drop("auto-src")
        MemStore.drop("auto-dst")
