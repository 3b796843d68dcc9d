"""Deterministic discrete-event engine.

Simulated time is an integer count of microseconds. Helpers ``ms`` and
``as_ms`` convert from and to float milliseconds at the edges; everything
inside the engine compares integers, so event order never depends on float
rounding.
"""

import hashlib
import heapq
import itertools
import random
from dataclasses import dataclass, field

US_PER_MS = 1000


def ms(value):
    """Milliseconds (float or int) to SimTime microseconds."""
    return int(round(value * US_PER_MS))


def as_ms(t):
    """SimTime microseconds to float milliseconds."""
    return t / US_PER_MS


class SchedulingError(ValueError):
    pass


@dataclass(eq=False)
class Event:
    fire_at: int
    sequence: int
    action: object
    args: tuple = ()
    kind: str = ""
    detail: str = ""
    cancelled: bool = False

    def cancel(self):
        self.cancelled = True


class Engine:
    """Single-threaded event loop ordered by (fire_at, sequence)."""

    def __init__(self, trace=False):
        self.now = 0
        self._queue = []
        self._seq = itertools.count()
        self.trace = [] if trace else None
        self.dispatched = 0

    def schedule(self, fire_at, action, *args, kind="", detail=""):
        fire_at = int(fire_at)
        if fire_at < self.now:
            raise SchedulingError(
                f"cannot schedule at t={fire_at}us, clock is already t={self.now}us")
        ev = Event(fire_at, next(self._seq), action, args, kind, detail)
        heapq.heappush(self._queue, (fire_at, ev.sequence, ev))
        return ev

    def schedule_in(self, delay, action, *args, kind="", detail=""):
        return self.schedule(self.now + int(delay), action, *args, kind=kind, detail=detail)

    def log(self, kind, detail=""):
        """Record a point occurrence in the trace without scheduling anything."""
        if self.trace is not None:
            self.trace.append((self.now, -1, kind, detail))

    def _dispatch(self, ev):
        self.now = ev.fire_at
        if self.trace is not None and ev.kind:
            self.trace.append((ev.fire_at, ev.sequence, ev.kind, ev.detail))
        self.dispatched += 1
        ev.action(*ev.args)

    def run_until(self, t_end):
        """Dispatch every event with fire_at <= t_end; leave the clock at t_end."""
        t_end = int(t_end)
        count = 0
        q = self._queue
        while q and q[0][0] <= t_end:
            _, _, ev = heapq.heappop(q)
            if ev.cancelled:
                continue
            self._dispatch(ev)
            count += 1
        if t_end > self.now:
            self.now = t_end
        return count

    def run(self, limit=None):
        """Dispatch until the queue is empty (or ``limit`` events fired)."""
        count = 0
        q = self._queue
        while q and (limit is None or count < limit):
            _, _, ev = heapq.heappop(q)
            if ev.cancelled:
                continue
            self._dispatch(ev)
            count += 1
        return count

    def pending(self):
        return sum(1 for _, _, ev in self._queue if not ev.cancelled)

    def dump_trace(self, fh):
        for t, seq, kind, detail in self.trace or ():
            fh.write(f"{t}\t{seq}\t{kind}\t{detail}\n")


def _stream_seed(seed, label):
    digest = hashlib.sha256(f"{int(seed)}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class RngStream:
    """Named random stream; (seed, stream_id, draw index) fixes every value."""

    seed: int
    stream_id: str
    _rng: random.Random = field(init=False, repr=False)

    def __post_init__(self):
        self._rng = random.Random(_stream_seed(self.seed, self.stream_id))

    def uniform(self):
        return self._rng.random()

    def exponential(self, mean):
        if not mean > 0:
            raise ValueError(f"exponential mean must be positive, got {mean}")
        return self._rng.expovariate(1.0 / mean)

    def choice(self, items, weights):
        return self._rng.choices(items, weights)[0]


def draw(stream, distribution, mean=None):
    """Draw one value: ``distribution`` is ``"uniform"`` or ``"exponential"``."""
    if distribution == "uniform":
        return stream.uniform()
    if distribution == "exponential":
        if mean is None:
            raise ValueError("exponential draw needs a mean")
        return stream.exponential(mean)
    raise ValueError(f"unknown distribution {distribution!r}")
