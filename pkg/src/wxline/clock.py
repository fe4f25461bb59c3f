"""Injectable clocks.

Every loop in this package takes a clock instead of calling ``time`` directly,
so timing contracts can be tested deterministically.  Three implementations:

* :class:`SystemClock` -- wall time, for live runs.
* :class:`ScaledClock` -- sim time runs ``scale`` times faster than wall time;
  sleeps are divided by the scale.  Used for compressed live demos.
* :class:`SimClock` -- a discrete-event clock for tests.  Time advances only
  when every registered actor thread is blocked in :meth:`wait_until`; it then
  jumps straight to the earliest pending deadline.  Runs hours of simulated
  traffic in milliseconds, with exact latencies.

Clock time is seconds since the Unix epoch (UTC), as a float.
"""

from __future__ import annotations

import math
import threading
import time
from contextlib import contextmanager


class Clock:
    """Interface; see module docstring for semantics."""

    def now(self) -> float:
        raise NotImplementedError

    def sleep(self, seconds: float) -> None:
        self.wait_until(self.now() + seconds)

    def wait_until(self, deadline: float, wake=None) -> bool:
        """Block until ``wake()`` is true or sim time reaches ``deadline``.

        Returns True if ``wake`` fired, False on deadline.  ``wake`` is an
        optional nullary predicate re-evaluated after every :meth:`kick`.
        """
        raise NotImplementedError

    def kick(self) -> None:
        """Wake all waiters so they re-evaluate their predicates."""
        raise NotImplementedError

    def wall_timeout(self, sim_duration: float) -> float:
        """Wall-clock seconds equivalent to ``sim_duration`` sim seconds."""
        raise NotImplementedError

    @contextmanager
    def actor(self):
        """Registration scope for a participating thread (SimClock only)."""
        yield


class _WallClockBase(Clock):
    def __init__(self):
        self._cond = threading.Condition()

    def wait_until(self, deadline: float, wake=None) -> bool:
        with self._cond:
            while True:
                if wake is not None and wake():
                    return True
                remaining = self.wall_timeout(deadline - self.now())
                if remaining <= 0:
                    return False
                # cap so predicates flipped without a kick are still noticed
                self._cond.wait(min(remaining, 0.2))

    def kick(self) -> None:
        with self._cond:
            self._cond.notify_all()


class SystemClock(_WallClockBase):
    def now(self) -> float:
        return time.time()

    def wall_timeout(self, sim_duration: float) -> float:
        return sim_duration


class ScaledClock(_WallClockBase):
    """Sim time anchored at ``start`` and running ``scale`` x wall speed."""

    def __init__(self, scale: float, start: float | None = None):
        super().__init__()
        if scale < 1:
            raise ValueError(f"scale must be >= 1, got {scale}")
        self.scale = scale
        self._wall0 = time.time()
        self._sim0 = self._wall0 if start is None else start

    def now(self) -> float:
        return self._sim0 + (time.time() - self._wall0) * self.scale

    def wall_timeout(self, sim_duration: float) -> float:
        return sim_duration / self.scale


class _Waiter:
    __slots__ = ("deadline", "counted", "woken", "seen_gen")

    def __init__(self, deadline: float, counted: bool):
        self.deadline = deadline
        self.counted = counted  # True when an actor's block is tallied in _running
        self.woken = False      # True once an advance has re-credited it
        self.seen_gen = -1      # last state generation the wake predicate saw


class SimClock(Clock):
    """Discrete-event virtual clock.

    Threads doing sim-timed work register via :meth:`actor`.  Whenever all
    registered actors are simultaneously blocked in :meth:`wait_until`, the
    clock jumps to the earliest pending deadline and wakes the waiters due at
    it.  Non-registered threads (e.g. a test's main thread) may also call
    :meth:`wait_until`; their deadlines participate in the jump target but
    they never hold time back.

    A driving (test harness) thread should register itself as an actor for
    the whole drive as well: otherwise a worker that blocks first can pull
    time forward before the driver has enqueued its own waits.  While
    registered, block only through :meth:`wait_until`; plain thread joins
    would hold time still forever.

    ``stall_limit`` bounds the wall-clock time the clock will sit fully
    blocked with no finite deadline before raising, turning deadlocked tests
    into errors instead of hangs.
    """

    def __init__(self, start: float = 0.0, stall_limit: float = 30.0):
        self._cond = threading.Condition()
        self._now = float(start)
        self._running = 0
        self._gen = 0  # bumped whenever shared state may have changed
        self._actors: set[int] = set()
        self._waiting: list[_Waiter] = []
        self._stall_limit = stall_limit

    def now(self) -> float:
        with self._cond:
            return self._now

    def wall_timeout(self, sim_duration: float) -> float:
        raise RuntimeError("SimClock has no wall-time equivalent; use in-process transports")

    @contextmanager
    def actor(self):
        ident = threading.get_ident()
        with self._cond:
            self._actors.add(ident)
            self._running += 1
        try:
            yield
        finally:
            with self._cond:
                self._actors.discard(ident)
                self._running -= 1
                self._gen += 1  # the leaving actor may have mutated shared state
                self._maybe_advance()
                self._cond.notify_all()

    def kick(self) -> None:
        with self._cond:
            self._gen += 1
            self._cond.notify_all()

    def wait_until(self, deadline: float, wake=None) -> bool:
        with self._cond:
            counted = threading.get_ident() in self._actors
            if wake is not None and wake():
                return True
            if self._now >= deadline:
                return False
            waiter = _Waiter(deadline, counted)
            self._waiting.append(waiter)
            if counted:
                self._running -= 1
            stalled_wall = 0.0
            try:
                while True:
                    if wake is not None and wake():
                        return True
                    if self._now >= waiter.deadline:
                        return False
                    if waiter.seen_gen != self._gen:
                        # predicate freshly evaluated against current state;
                        # we may now be the last piece holding time still
                        waiter.seen_gen = self._gen
                        self._maybe_advance()
                        continue
                    notified = self._cond.wait(timeout=0.05)
                    if notified:
                        stalled_wall = 0.0
                    elif self._fully_blocked_without_deadline():
                        stalled_wall += 0.05
                        if stalled_wall >= self._stall_limit:
                            raise RuntimeError(
                                "SimClock stalled: every actor is blocked and no finite deadline is pending"
                            )
            finally:
                self._waiting.remove(waiter)
                if counted and not waiter.woken:
                    self._running += 1
                # departure changes the pending set; the remaining waiters may
                # now be free to advance
                self._maybe_advance()
                self._cond.notify_all()

    def _fully_blocked_without_deadline(self) -> bool:
        if self._running != 0:
            return False
        pending = [w.deadline for w in self._waiting if not w.woken]
        return not pending or min(pending) == math.inf

    def _maybe_advance(self) -> None:
        # caller holds the lock; advance only when every blocked waiter has
        # evaluated its predicate against the current state generation
        if self._running != 0:
            return
        pending = [w for w in self._waiting if not w.woken]
        if not pending:
            return
        if any(w.seen_gen != self._gen for w in pending):
            return
        target = min(w.deadline for w in pending)
        if not math.isfinite(target):
            return
        self._now = target
        for w in self._waiting:
            if not w.woken and w.deadline <= target:
                w.woken = True
                if w.counted:
                    self._running += 1
        self._cond.notify_all()


def spawn_actor(clock: Clock, target, *, name: str | None = None) -> threading.Thread:
    """Start ``target`` on a thread registered as a clock actor.

    Returns only after registration, so a SimClock cannot advance past the
    new actor while it is still starting up.
    """
    ready = threading.Event()

    def run():
        with clock.actor():
            ready.set()
            target()

    thread = threading.Thread(target=run, name=name, daemon=True)
    thread.start()
    ready.wait()
    return thread
