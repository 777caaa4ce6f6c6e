import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ods.errors import UnrecoverableJournalError
from ods.params import ParamVector
from ods.ranges import OverlapError, RangeSet
from ods.relay.journal import Journal, replay

intervals = st.lists(st.tuples(st.integers(0, 200), st.integers(0, 40)).map(lambda t: (t[0], t[0] + t[1])),
                     max_size=25)


def _points(ranges):
    return {i for a, b in ranges for i in range(a, b)}


@given(intervals)
def test_rangeset_matches_point_model(ivs):
    rs = RangeSet(ivs)
    pts = _points(ivs)
    assert _points(rs) == pts
    assert rs.total == len(pts)
    spans = list(rs)
    # sorted, disjoint and merged (no touching neighbours)
    assert all(a < b for a, b in spans)
    assert all(x[1] < y[0] for x, y in zip(spans, spans[1:]))


@given(intervals, st.integers(0, 250), st.integers(0, 250))
def test_gaps_and_covers(ivs, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    rs = RangeSet(ivs)
    pts = _points(ivs)
    want = set(range(lo, hi)) - pts
    gaps = rs.gaps(lo, hi)
    assert _points(gaps) == want
    assert rs.covers(lo, hi) == (not want)
    assert rs.overlaps(lo, hi) == bool(set(range(lo, hi)) & pts)


@given(intervals, st.integers(0, 250))
def test_contiguous_prefix(ivs, start):
    rs = RangeSet(ivs)
    pts = _points(ivs)
    end = start
    while end in pts:
        end += 1
    assert rs.contiguous_prefix(start) == end


@given(intervals)
def test_add_is_idempotent(ivs):
    rs = RangeSet(ivs)
    again = RangeSet(ivs)
    for a, b in ivs:
        again.add(a, b)
    assert again == rs


def test_strict_overlap():
    rs = RangeSet([(0, 10)])
    rs.add(10, 20, strict=True)
    with pytest.raises(OverlapError):
        rs.add(5, 12, strict=True)
    assert rs.to_list() == [[0, 20]]
    with pytest.raises(ValueError):
        rs.add(5, 2)


# ---- journal

def _journal(tmp_path, records):
    j = Journal(tmp_path / "j.jsonl", "job1", fresh=True)
    for r in records:
        j.write(r)
    j.close()
    return tmp_path / "j.jsonl"


FILES = [
    {"type": "job", "job": {"job_id": "job1"}},
    {"type": "file", "idx": 0, "file_id": "a", "src": "/s/a", "dst": "/d/a", "size": 100, "transfer_id": "t0"},
    {"type": "file", "idx": 1, "file_id": "b", "src": "/s/b", "dst": "/d/b", "size": 50, "transfer_id": "t1"},
    {"type": "phase", "t": 1, "phase": "listed"},
    {"type": "params", "t": 2, "params": {"cc": 2, "p": 1, "pp": 4}},
    {"type": "range", "idx": 0, "start": 0, "end": 40},
    {"type": "range", "idx": 1, "start": 0, "end": 50},
    {"type": "commit", "idx": 1, "crc": 7},
    {"type": "range", "idx": 0, "start": 60, "end": 100},
]


def test_replay_state(tmp_path):
    path = _journal(tmp_path, FILES)
    st_ = replay(path)
    assert st_.job_id == "job1" and st_.listed and not st_.complete
    assert st_.files[0].committed.to_list() == [[0, 40], [60, 100]]
    assert st_.files[1].status == "done" and st_.files[1].crc == 7
    assert st_.committed_bytes == 130
    assert st_.last_params == ParamVector(2, 1, 4)
    assert st_.files[0].committed.gaps(0, 100) == [(40, 60)]


def test_replay_is_idempotent(tmp_path):
    path = _journal(tmp_path, FILES)
    a, b = replay(path), replay(path)
    assert {k: v.committed for k, v in a.files.items()} == {k: v.committed for k, v in b.files.items()}
    assert a.params == b.params and a.phases == b.phases


def test_header_is_first_line(tmp_path):
    path = _journal(tmp_path, [])
    head = json.loads(path.read_text().splitlines()[0])
    assert head["type"] == "header" and head["v"] == 1 and head["job_id"] == "job1"


def test_torn_tail_ignored(tmp_path):
    path = _journal(tmp_path, FILES)
    with open(path, "a") as f:
        f.write('{"type":"range","idx":0,"st')
    st_ = replay(path)
    assert st_.torn_tail and st_.committed_bytes == 130


def test_malformed_middle_line_unrecoverable(tmp_path):
    path = _journal(tmp_path, FILES)
    lines = path.read_text().splitlines()
    lines.insert(3, "{garbage")
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(UnrecoverableJournalError):
        replay(path)


@pytest.mark.parametrize("bad", [
    {"type": "range", "idx": 0, "start": 30, "end": 50},    # overlaps [0, 40)
    {"type": "range", "idx": 0, "start": 90, "end": 120},   # past end of file
    {"type": "range", "idx": 9, "start": 0, "end": 1},      # unknown file
    {"type": "mystery"},
])
def test_invariant_violations_unrecoverable(tmp_path, bad):
    path = _journal(tmp_path, FILES + [bad])
    with pytest.raises(UnrecoverableJournalError):
        replay(path)


def test_missing_or_headless_journal(tmp_path):
    with pytest.raises(UnrecoverableJournalError):
        replay(tmp_path / "absent.jsonl")
    p = tmp_path / "h.jsonl"
    p.write_text('{"type":"job","job":{}}\n')
    with pytest.raises(UnrecoverableJournalError):
        replay(p)


def test_future_schema_version_rejected(tmp_path):
    p = tmp_path / "v.jsonl"
    p.write_text('{"type":"header","v":99,"job_id":"x","created":0}\n')
    with pytest.raises(UnrecoverableJournalError):
        replay(p)
