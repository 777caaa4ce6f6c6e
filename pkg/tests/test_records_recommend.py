import itertools

import pytest

from ods.errors import ColdStartError, ValidationError
from ods.optimizer import KNNRegressor, LinkFeatures, LogStore, build_surface, offline_recommend
from ods.params import ParamVector
from ods.records import TransferLogRecord, dumps_csv, dumps_jsonl, parse_any, parse_csv, parse_jsonl
from ods.simnet import Dataset, LinkModel, LoadProfile, generate_logs

GRID = [ParamVector(a, b, c) for a, b, c in itertools.product((1, 2, 4, 8), (1, 2, 4, 8), (1, 2, 4, 8))]


def corpus(rtts=(20, 100), bws=(1000, 10000), regime="offpeak", bg=10):
    links = [LinkModel(capacity=bw, rtt=rtt, buffer=250_000, command_rtt=rtt / 4, overload_threshold=24,
                       loss_coeff=0.02, src=f"s{rtt}", dst=f"d{bw}") for rtt in rtts for bw in bws]
    return generate_logs(links, [LoadProfile.constant(bg, regime)], [Dataset.uniform(50, 20_000_000)], GRID, seed=4)


def test_jsonl_and_csv_round_trip():
    logs = corpus()[:20]
    assert parse_jsonl(dumps_jsonl(logs)).records == logs
    assert parse_csv(dumps_csv(logs)).records == logs


def test_partial_ingest_reports_rows():
    logs = corpus()[:3]
    lines = dumps_csv(logs).splitlines()
    lines.insert(2, lines[1].replace(",offpeak", ",sometimes"))
    lines.insert(3, "garbage")
    report = parse_any("\n".join(lines) + "\n", name="x.csv")
    assert len(report.records) == 3
    assert [r for r, _ in report.errors] == [2, 3]


def test_record_validation_lists_fields():
    with pytest.raises(ValidationError) as ei:
        TransferLogRecord.from_mapping({"src_host": "a"})
    assert "observed_throughput" in ei.value.fields
    with pytest.raises(ValidationError) as ei:
        TransferLogRecord("a", "b", 10, 100, 1, 1, 1, 0, 1, 1, 5.0, 0, "offpeak")
    assert ei.value.fields == ["cc"]


def test_logstore_persists_and_versions(tmp_path):
    path = tmp_path / "logs.jsonl"
    store = LogStore(path=path)
    v0 = store.version
    report = store.ingest_text(dumps_jsonl(corpus()[:5]) + "{bad\n")
    assert len(report.records) == 5 and report.errors[0][0] == 6
    assert store.version > v0
    assert len(LogStore(path=path)) == 5


def test_recommend_picks_matching_context():
    store = LogStore(corpus())
    reg = KNNRegressor(k=1)
    rec = reg.recommend(LinkFeatures(100, 1000, 20_000_000), store)
    key = rec.neighbors[0]
    assert key[2] == 100 and key[3] == 1000
    # oracle: the maximum of the surface built from that context alone
    own = [r for r in store.snapshot() if r.context_key() == key]
    assert rec.params == build_surface(own).maxima[0][0]


def test_offline_recommend_deterministic():
    store = LogStore(corpus())
    f = LinkFeatures(30, 2000, 10_000_000)
    assert offline_recommend(f, store) == offline_recommend(f, LogStore(corpus()))


def test_regime_filter():
    store = LogStore(corpus(regime="offpeak", bg=0) + corpus(regime="peak", bg=300))
    peak = KNNRegressor().neighbors(LinkFeatures(20, 1000, 2e7, regime="peak"), store)
    assert {k[-1] for k, _, _ in peak} == {"peak"}


def test_cold_start():
    with pytest.raises(ColdStartError):
        offline_recommend(LinkFeatures(10, 100, 1e6), LogStore())


def test_features_validated():
    with pytest.raises(ValidationError):
        LinkFeatures(0, 100, 1e6)
