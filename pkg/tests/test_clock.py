import threading
import time

import pytest

from wxline.clock import ScaledClock, SimClock, SystemClock, spawn_actor


class TestSimClock:
    def test_starts_at_given_time(self):
        assert SimClock(start=1000.0).now() == 1000.0

    def test_sleep_jumps_with_no_actors(self):
        clock = SimClock(start=0.0)
        clock.sleep(42.5)
        assert clock.now() == 42.5

    def test_wait_until_returns_false_on_deadline(self):
        clock = SimClock()
        assert clock.wait_until(10.0) is False
        assert clock.now() == 10.0

    def test_wake_predicate_wins(self):
        clock = SimClock()
        flag = threading.Event()
        woke = []

        # the driving thread registers too, so time cannot advance while
        # it is still setting up
        with clock.actor():
            t = spawn_actor(clock, lambda: woke.append(clock.wait_until(100.0, wake=flag.is_set)))
            time.sleep(0.05)
            flag.set()
            clock.kick()
        t.join(timeout=5)
        assert woke == [True]
        assert clock.now() < 100.0

    def test_two_actors_interleave_deterministically(self):
        clock = SimClock()
        order = []
        ready = threading.Barrier(2)

        def actor(name, period, count):
            with clock.actor():
                ready.wait()
                for _ in range(count):
                    clock.sleep(period)
                    order.append((clock.now(), name))

        ta = threading.Thread(target=actor, args=("a", 10.0, 3))
        tb = threading.Thread(target=actor, args=("b", 15.0, 2))
        ta.start()
        tb.start()
        ta.join(timeout=10)
        tb.join(timeout=10)
        # both wake at t=30; that tie is the only permitted reordering
        assert sorted(order) == [
            (10.0, "a"),
            (15.0, "b"),
            (20.0, "a"),
            (30.0, "a"),
            (30.0, "b"),
        ]
        assert order[:3] == [(10.0, "a"), (15.0, "b"), (20.0, "a")]

    def test_driver_deadline_interleaves_with_worker(self):
        clock = SimClock()
        done = threading.Event()

        def worker():
            clock.sleep(1000.0)
            done.set()
            clock.kick()

        with clock.actor():
            t = spawn_actor(clock, worker)
            assert clock.wait_until(500.0) is False
            assert clock.now() == 500.0
            assert not done.is_set()
            assert clock.wait_until(2000.0, wake=done.is_set) is True
            assert clock.now() == 1000.0
        t.join(timeout=10)

    def test_stall_raises_instead_of_hanging(self):
        clock = SimClock(stall_limit=0.3)
        raised = []

        def actor():
            try:
                with clock.actor():
                    clock.wait_until(float("inf"))
            except RuntimeError as err:
                raised.append(err)

        t = threading.Thread(target=actor)
        t.start()
        t.join(timeout=10)
        assert not t.is_alive()
        assert raised and "stalled" in str(raised[0])


class TestWallClocks:
    def test_system_clock_tracks_time(self):
        clock = SystemClock()
        assert abs(clock.now() - time.time()) < 1.0
        assert clock.wall_timeout(3.0) == 3.0

    def test_scaled_clock_compresses_sleeps(self):
        clock = ScaledClock(scale=100.0, start=0.0)
        t0 = time.monotonic()
        clock.sleep(5.0)
        wall = time.monotonic() - t0
        assert 0.02 <= wall < 0.5
        assert clock.now() >= 5.0
        assert clock.wall_timeout(5.0) == pytest.approx(0.05)

    def test_scaled_clock_rejects_sub_unit_scale(self):
        with pytest.raises(ValueError):
            ScaledClock(scale=0.5)
