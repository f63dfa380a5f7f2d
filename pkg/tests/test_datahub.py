import math
import random

import pytest

from twindesk.datahub import DataHub, SeriesPoint
from twindesk.errors import BadRequestError, UnknownTargetError


@pytest.fixture
def hub(tmp_path):
    return DataHub(tmp_path / "data")


def test_append_then_query(hub):
    hub.append_point(SeriesPoint("a.b", 100, 1.5))
    pts = hub.query_range("a.b", 0, 200)
    assert [(p.timestamp, p.value) for p in pts] == [(100, 1.5)]


def test_nan_and_inf_rejected(hub):
    with pytest.raises(BadRequestError):
        hub.append_point(SeriesPoint("a", 1, float("nan")))
    with pytest.raises(BadRequestError):
        hub.append_point(SeriesPoint("a", 1, math.inf))


def test_batch_count(hub):
    hub.append_batch([SeriesPoint("k", i, float(i)) for i in range(10)])
    assert hub.count("k") == 10


def test_bad_series_key_rejected(hub):
    with pytest.raises(BadRequestError):
        hub.append_point(SeriesPoint("../evil", 1, 1.0))


def test_out_of_order_appends_sorted(hub):
    for t in (30, 10, 20):
        hub.append_point(SeriesPoint("s", t, float(t)))
    assert [p.timestamp for p in hub.query_range("s", 0, 100)] == [10, 20, 30]


def test_inverted_range_rejected(hub):
    with pytest.raises(BadRequestError):
        hub.query_range("s", 10, 5)


def test_empty_series_query(hub):
    assert hub.query_range("ghost", 0, 10) == []
    assert hub.latest("ghost") is None


def test_latest_tie_prefers_last_inserted(hub):
    hub.append_point(SeriesPoint("s", 5, 1.0))
    hub.append_point(SeriesPoint("s", 5, 2.0))
    assert hub.latest("s").value == 2.0


def test_query_matches_filter_sort_oracle(hub):
    rng = random.Random(9)
    log = []
    for _ in range(500):
        t = rng.randint(0, 1000)
        v = rng.random()
        log.append((t, v))
        hub.append_point(SeriesPoint("w", t, v))
    for _ in range(20):
        a = rng.randint(0, 900)
        b = rng.randint(a, 1000)
        expected = sorted(((t, v) for t, v in log if a <= t <= b), key=lambda p: p[0])
        got = [(p.timestamp, p.value) for p in hub.query_range("w", a, b)]
        assert got == expected


def test_events_total_order_and_poll(hub):
    ids = [hub.publish_event("PT", "tick").id for _ in range(3)]
    assert ids == [1, 2, 3]
    assert [e.id for e in hub.poll_events(after=1)] == [2, 3]
    assert hub.poll_events(after=3) == []


def test_event_type_filter(hub):
    hub.publish_event("PT", "alpha")
    hub.publish_event("DT", "beta")
    hub.publish_event("PT", "alpha")
    assert [e.id for e in hub.poll_events(type="alpha")] == [1, 3]


def test_command_delivery_at_most_once(hub):
    hub.register_target("x.cmd")
    hub.send_command("x.cmd", "set", {"v": 1})
    got = hub.fetch_commands("x.cmd")
    assert len(got) == 1 and got[0].status == "Delivered"
    assert hub.fetch_commands("x.cmd") == []


def test_unknown_command_target(hub):
    with pytest.raises(UnknownTargetError):
        hub.send_command("nowhere", "noop")


def test_target_unregister(hub):
    hub.register_target("t")
    hub.unregister_target("t")
    with pytest.raises(UnknownTargetError):
        hub.send_command("t", "noop")


def test_durability_across_restart(tmp_path):
    hub = DataHub(tmp_path / "data")
    rng = random.Random(13)
    expected = {}
    for k in range(5):
        key = f"series.{k}"
        expected[key] = []
        for _ in range(200):
            t, v = rng.randint(0, 10_000), rng.random()
            hub.append_point(SeriesPoint(key, t, v))
            expected[key].append((t, v))
    ev_count = 7
    for i in range(ev_count):
        hub.publish_event("PT", "e", {"i": i})
    pre_series = {k: [(p.timestamp, p.value) for p in hub.query_range(k, 0, 10_000)]
                  for k in expected}
    pre_events = [e.to_dict() for e in hub.poll_events()]
    hub.close()

    reborn = DataHub(tmp_path / "data")
    for k in expected:
        post = [(p.timestamp, p.value) for p in reborn.query_range(k, 0, 10_000)]
        assert post == pre_series[k]
    assert [e.to_dict() for e in reborn.poll_events()] == pre_events
    # event ids continue gap-free after restart
    assert reborn.publish_event("PT", "e").id == ev_count + 1


def test_hub_survives_torn_tail_record(tmp_path):
    hub = DataHub(tmp_path / "data")
    for i in range(5):
        hub.append_point(SeriesPoint("s", i, float(i)))
    hub.close()
    # simulate a crash mid-write: append half a record
    path = tmp_path / "data" / "s.log"
    with path.open("ab") as fh:
        fh.write(b"\x01\x02\x03")
    reborn = DataHub(tmp_path / "data")
    assert reborn.count("s") == 5
