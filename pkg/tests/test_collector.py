import threading
from datetime import datetime, timezone

import pytest
from harness import T0, CollectorHarness, start_node, station_config

from wxline.clock import SimClock, spawn_actor
from wxline.collector import (
    CHECKSUM_MISMATCH,
    MALFORMED,
    TIMEOUT,
    Collector,
    CollectorConfig,
    PollFailure,
    StationLink,
    console_line,
    poll_once,
)
from wxline.logstore import LogRecord, LogStore
from wxline.nodesim import CorruptionModel
from wxline.protocol import Reading, encode_measurement
from wxline.transport import in_process_pair

UTC = timezone.utc


class TestConfigValidation:
    def test_duplicate_station_ids_rejected(self):
        config = CollectorConfig(stations=(StationLink(1, "a"), StationLink(1, "b")))
        with pytest.raises(ValueError):
            config.validate()

    def test_timeout_must_be_below_interval(self):
        with pytest.raises(ValueError):
            station_config(poll_interval_s=5.0, poll_timeout_s=5.0).validate()

    def test_no_stations_rejected(self):
        with pytest.raises(ValueError):
            CollectorConfig(stations=()).validate()


class TestPollOnce:
    def test_healthy_node_returns_reading_within_latency(self):
        clock = SimClock(start=T0)
        with clock.actor():
            node, link, thread = start_node(clock, 1)
            t_send = clock.now()
            outcome = poll_once(link, 1, timeout_s=8.0, clock=clock)
            latency = clock.now() - t_send
            link.close()
        thread.join(timeout=5)
        assert isinstance(outcome, Reading)
        assert 4.0 <= latency <= 5.0

    def test_absent_node_times_out(self):
        clock = SimClock(start=T0)
        link, _unused = in_process_pair(clock)
        t0 = clock.now()
        outcome = poll_once(link, 1, timeout_s=8.0, clock=clock)
        assert outcome == PollFailure(TIMEOUT, "no response within 8.0s")
        assert clock.now() - t0 == pytest.approx(8.0)

    def test_closed_transport_is_malformed(self):
        clock = SimClock(start=T0)
        link, other = in_process_pair(clock)
        other.close()
        outcome = poll_once(link, 1, timeout_s=8.0, clock=clock)
        assert isinstance(outcome, PollFailure) and outcome.kind == MALFORMED

    def test_corrupted_frames_detected_never_wrong(self):
        # p_max 0.5 at max baud: most frames damaged, none silently accepted
        clock = SimClock(start=T0)
        failures = []
        accepted = []
        with clock.actor():
            node, link, thread = start_node(
                clock,
                1,
                baud=1_000_000,
                error_model=CorruptionModel(p_max=0.5),
                latency_min_s=0.1,
                latency_max_s=0.2,
            )
            for _ in range(100):
                outcome = poll_once(link, 1, timeout_s=8.0, clock=clock)
                if isinstance(outcome, Reading):
                    accepted.append(outcome)
                else:
                    failures.append(outcome)
            link.close()
        thread.join(timeout=5)
        checksum_failures = [f for f in failures if f.kind == CHECKSUM_MISMATCH]
        assert len(checksum_failures) > 0
        # every accepted reading matches the node's own pre-corruption trace
        trace = {r.seq: r for r in node.emitted}
        assert all(trace[r.seq] == r for r in accepted)

    def test_stale_response_drained_before_next_poll(self):
        clock = SimClock(start=T0)
        link, other = in_process_pair(clock)
        stale = Reading(1, 999, 20.0, 50.0, 0, 1.0, 0)
        other.send(encode_measurement(stale))
        outcome = poll_once(link, 1, timeout_s=2.0, clock=clock)
        assert outcome == PollFailure(TIMEOUT, "no response within 2.0s")


class TestConsoleLine:
    def test_format(self):
        record = LogRecord(
            datetime(2026, 3, 14, 9, 0, 12, tzinfo=UTC),
            Reading(1, 42, 25.0, 80.0, 650, 3.4, 90),
        )
        assert console_line(record) == (
            "2026-03-14T09:00:12Z st=1 seq=42 T=25.0C RH=80.0% IRR=650W/m2 WS=3.4m/s WD=90deg"
        )


class TestCollectorLoop:
    def test_sixty_second_run_yields_six_records(self, tmp_path):
        harness = CollectorHarness(tmp_path)
        harness.run_for(59.0)
        records = harness.records()
        assert len(records) == 6
        seqs = [r.reading.seq for r in records]
        assert seqs == sorted(seqs)
        assert len(harness.console_lines) == 6

    def test_seq_strictly_increasing(self, tmp_path):
        harness = CollectorHarness(tmp_path)
        harness.run_for(99.0)
        seqs = [r.reading.seq for r in harness.records()]
        assert seqs == list(range(10))

    def test_two_stations_ordered_within_tick(self, tmp_path):
        harness = CollectorHarness(tmp_path, n_stations=2)
        harness.run_for(49.0)
        sids = [r.reading.station_id for r in harness.records()]
        assert sids == [1, 2] * 5

    def test_counters_conserve_and_match_log(self, tmp_path):
        harness = CollectorHarness(tmp_path, n_stations=2)
        harness.run_for(49.0)
        state = harness.collector.current_state()
        records = harness.records()
        for sid, st in state.items():
            t = st.totals
            assert t.polls == t.ok + t.checksum_errors + t.timeouts + t.other_errors
            assert t.ok == sum(1 for r in records if r.reading.station_id == sid)

    def test_absent_station_counts_timeouts(self, tmp_path):
        clock = SimClock(start=T0)
        config = station_config(poll_interval_s=10.0, poll_timeout_s=8.0, log_dir=str(tmp_path))
        dead_end, _ = in_process_pair(clock)
        store = LogStore(tmp_path)
        collector = Collector(config, {1: dead_end}, clock, store, console=lambda s: None)
        shutdown = threading.Event()
        with clock.actor():
            thread = spawn_actor(clock, lambda: collector.run(shutdown), name="collector")
            clock.wait_until(clock.now() + 25.0)
            shutdown.set()
            clock.kick()
        thread.join(timeout=10)
        state = collector.current_state()[1]
        assert state.totals.timeouts >= 2
        assert state.totals.ok == 0
        assert state.last_reading is None
        assert state.consecutive_failures == state.totals.polls

    def test_snapshot_before_first_poll(self, tmp_path):
        harness = CollectorHarness(tmp_path)
        state = harness.collector.current_state()[1]
        assert state.last_reading is None
        assert state.totals.polls == 0

    def test_snapshots_without_ticks_are_equal(self, tmp_path):
        harness = CollectorHarness(tmp_path)
        harness.run_for(9.0)
        a = harness.collector.current_state()
        b = harness.collector.current_state()
        assert a == b

    def test_slow_station_does_not_queue_ticks(self, tmp_path):
        # timeout 8s x 2 dead stations = 16s of work per tick; with a 10s
        # interval the tick count must stay near T/interval, never double
        clock = SimClock(start=T0)
        config = station_config(2, poll_interval_s=10.0, poll_timeout_s=8.0, log_dir=str(tmp_path))
        ends = {1: in_process_pair(clock)[0], 2: in_process_pair(clock)[0]}
        store = LogStore(tmp_path)
        collector = Collector(config, ends, clock, store, console=lambda s: None)
        shutdown = threading.Event()
        with clock.actor():
            thread = spawn_actor(clock, lambda: collector.run(shutdown), name="collector")
            clock.wait_until(clock.now() + 99.0)
            shutdown.set()
            clock.kick()
        thread.join(timeout=10)
        polls = collector.current_state()[1].totals.polls
        # 16s of work per tick: ticks land on the 10s grid at 0,20,40,60,80.
        # Queued (fixed-delay) ticks would instead run back-to-back at
        # 0,16,32,48,64,80,96 and yield 7.
        assert polls == 5

    def test_online_aggregates_match_log_aggregates(self, tmp_path):
        from wxline.logstore import QUANTITIES, aggregate

        harness = CollectorHarness(tmp_path)
        harness.run_for(99.0)
        records = harness.records()
        start = datetime(2000, 1, 1, tzinfo=UTC)
        end = datetime(2100, 1, 1, tzinfo=UTC)
        offline = aggregate(records, (start, end))
        online = harness.collector.online_aggregates()[1]
        for name in QUANTITIES:
            assert online[name] == offline.quantity(name)
