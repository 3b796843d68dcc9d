"""Queueing models of the HSS front-end VNFs and the UDR.

A front end is a FIFO server (one per CPU). Each request costs ``cpu_ms`` of
front-end work followed by a UDR query; by default the query is a
synchronous call, so the front end stays occupied until the UDR answers.

The UDR serves up to ``server_count`` queries at once. Concurrent ULR
queries slow each other down: while ``k`` ULRs are in flight, a query of a
command with contention factor ``f`` progresses at rate
``1 / (1 + f * max(0, k - 1))``. Two ULRs that fully overlap therefore each
take ``db_ms * (1 + f)``.
"""

import collections
from dataclasses import dataclass

from .diameter import APPLICATION_OF
from .sim import Engine, ms

ULR = "ULR"
MS_PER_S = 1000.0


class CalibrationError(Exception):
    def __init__(self, message, achievable=None):
        super().__init__(message)
        self.achievable = achievable


@dataclass(frozen=True)
class CommandCost:
    cpu_ms: float
    db_ms: float
    db_contention_factor: float = 0.0

    def __post_init__(self):
        if min(self.cpu_ms, self.db_ms, self.db_contention_factor) < 0:
            raise ValueError(f"negative cost in {self}")

    @property
    def total_ms(self):
        return self.cpu_ms + self.db_ms


DEFAULT_SERVICE_TIMES = {
    "ULR": CommandCost(5.0, 110.0, 0.28),
    "AIR": CommandCost(3.0, 2.0),
    "PUR": CommandCost(2.0, 2.0),
    "LIR": CommandCost(2.0, 1.0),
    "MAR": CommandCost(3.0, 2.0),
    "SAR": CommandCost(2.0, 2.0),
    "UAR": CommandCost(2.0, 1.0),
}


def service_table(overrides=None):
    """Default table with per-command overrides (dicts or CommandCost)."""
    table = dict(DEFAULT_SERVICE_TIMES)
    for cmd, cost in (overrides or {}).items():
        if cmd not in APPLICATION_OF:
            raise ValueError(f"unknown command {cmd!r} in service-time table")
        if isinstance(cost, dict):
            base = table[cmd]
            cost = CommandCost(float(cost.get("cpu_ms", base.cpu_ms)),
                               float(cost.get("db_ms", base.db_ms)),
                               float(cost.get("db_contention_factor", base.db_contention_factor)))
        table[cmd] = cost
    return table


def mean_service_ms(table, mix):
    """Uncontended mean service time of a command mix given in percent."""
    total = sum(mix.values())
    return sum(table[c].total_ms * p for c, p in mix.items()) / total


class _Query:
    __slots__ = ("command", "factor", "remaining", "rate", "arrived", "updated", "event",
                 "callback", "is_ulr")

    def __init__(self, command, cost, callback, now, scale):
        self.command = command
        self.factor = cost.db_contention_factor
        self.remaining = ms(cost.db_ms) * scale
        self.rate = 1.0
        self.arrived = now
        self.updated = now
        self.event = None
        self.callback = callback
        self.is_ulr = command == ULR


class UdrModel:
    """UDR with ``server_count`` parallel query slots and ULR contention."""

    def __init__(self, engine, table, server_count=16):
        self.engine = engine
        self.table = table
        self.server_count = server_count
        self.in_flight_ulr = 0
        self.active = []
        self.waiting = collections.deque()
        self.completed = 0
        self.max_ulr_concurrency = 0

    def query(self, command, callback, scale=1.0):
        """Start a query; ``callback(delay_us)`` fires when the UDR answers."""
        q = _Query(command, self.table[command], callback, self.engine.now, scale)
        if len(self.active) >= self.server_count:
            self.waiting.append(q)
        else:
            self._admit(q)
        return q

    def _rate(self, q):
        if not q.factor or self.in_flight_ulr <= 1:
            return 1.0
        return 1.0 / (1.0 + q.factor * (self.in_flight_ulr - 1))

    def _admit(self, q):
        q.updated = self.engine.now
        self.active.append(q)
        if q.is_ulr:
            self._ulr_change(+1)
        else:
            q.rate = self._rate(q)
            self._schedule(q)

    def _ulr_change(self, delta):
        now = self.engine.now
        for q in self.active:
            if q.factor:
                q.remaining -= (now - q.updated) * q.rate
                q.updated = now
        self.in_flight_ulr += delta
        self.max_ulr_concurrency = max(self.max_ulr_concurrency, self.in_flight_ulr)
        for q in self.active:
            if q.factor or q.event is None:
                rate = self._rate(q)
                if q.event is None or rate != q.rate:
                    q.rate = rate
                    self._schedule(q)

    def _schedule(self, q):
        if q.event is not None:
            q.event.cancel()
        delay = max(0, int(round(q.remaining / q.rate)))
        q.event = self.engine.schedule_in(delay, self._done, q)

    def _release(self, q):
        self.active.remove(q)
        if q.is_ulr:
            self._ulr_change(-1)
        if self.waiting and len(self.active) < self.server_count:
            self._admit(self.waiting.popleft())

    def _done(self, q):
        q.event = None
        self.completed += 1
        self._release(q)
        q.callback(self.engine.now - q.arrived)

    def cancel(self, q):
        if q in self.waiting:
            self.waiting.remove(q)
        elif q in self.active:
            if q.event is not None:
                q.event.cancel()
                q.event = None
            self._release(q)


def udr_query(command, udr, callback):
    """Issue one query against ``udr``; the delay reaches ``callback`` in microseconds."""
    return udr.query(command, callback)


class FrontEndVnf:
    """FIFO front end with ``cpu_capacity`` identical servers.

    ``on_complete(fe, msg)`` is called when a request finishes. With
    ``sync_db`` (the default) the server is held during the UDR query; with
    ``sync_db=False`` it is released right after the CPU phase.
    """

    def __init__(self, engine, instance_id, applications, udr, table, on_complete=None,
                 cpu_capacity=1, sync_db=True, jitter=None):
        self.engine = engine
        self.instance_id = instance_id
        self.applications = frozenset(applications)
        self.udr = udr
        self.table = table
        self.on_complete = on_complete
        self.cpu_capacity = cpu_capacity
        self.sync_db = sync_db
        self.jitter = jitter
        self.queue = collections.deque()
        self.in_service = {}
        self.busy = 0
        self.rejected = 0
        self.completed = 0
        self.cross_application_waits = 0
        self._present = collections.Counter()
        self._busy_integral = 0
        self._busy_changed = 0
        self.stopped = False

    def _account(self):
        now = self.engine.now
        self._busy_integral += (now - self._busy_changed) * self.busy
        self._busy_changed = now

    def busy_time(self):
        """Server-occupied microseconds so far, summed over servers."""
        self._account()
        return self._busy_integral

    def handle(self, msg):
        if self.stopped or msg.application not in self.applications:
            self.rejected += 1
            return False
        msg.enqueued_at = self.engine.now
        if any(n for app, n in self._present.items() if app != msg.application):
            self.cross_application_waits += 1
        self._present[msg.application] += 1
        self.queue.append(msg)
        if self.busy < self.cpu_capacity:
            self._start_next()
        return True

    def _draw(self, base_ms):
        if self.jitter is None or base_ms == 0:
            return ms(base_ms)
        return ms(self.jitter.exponential(base_ms))

    def _start_next(self):
        msg = self.queue.popleft()
        self._account()
        self.busy += 1
        msg.service_start = self.engine.now
        cost = self.table[msg.command]
        ev = self.engine.schedule_in(self._draw(cost.cpu_ms), self._cpu_done, msg)
        self.in_service[msg.message_id] = [msg, ev, None, True]

    def _cpu_done(self, msg):
        entry = self.in_service[msg.message_id]
        entry[1] = None
        scale = 1.0
        if self.jitter is not None and self.table[msg.command].db_ms:
            scale = self.jitter.exponential(1.0)
        if not self.sync_db:
            self._free_server(entry)
        entry[2] = self.udr.query(msg.command, lambda _d: self._db_done(msg), scale)

    def _free_server(self, entry):
        if entry[3]:
            entry[3] = False
            self._account()
            self.busy -= 1
            if self.queue and not self.stopped:
                self._start_next()

    def _db_done(self, msg):
        entry = self.in_service.pop(msg.message_id)
        msg.completed_at = self.engine.now
        self._present[msg.application] -= 1
        self.completed += 1
        self._free_server(entry)
        if self.on_complete is not None:
            self.on_complete(self, msg)

    def stop(self):
        """Drop everything queued or in service; returns the dropped messages."""
        self.stopped = True
        dropped = list(self.queue)
        self.queue.clear()
        for msg, ev, query, holds in self.in_service.values():
            if ev is not None:
                ev.cancel()
            if query is not None:
                self.udr.cancel(query)
            dropped.append(msg)
        self._account()
        self.busy = 0
        self.in_service.clear()
        self._present.clear()
        return dropped


def handle(fe, msg):
    return fe.handle(msg)


def measure_busy_fraction(rate_per_s, mix, table, seed=0, duration_s=60.0, warmup_fraction=0.1,
                          interface=None, stream="calibration", sync_db=True, udr_servers=16):
    """Busy fraction of one dedicated front end fed Poisson traffic at ``rate_per_s``.

    Measured over the run after the warm-up fraction; fully determined by
    the arguments.
    """
    from .workload import TrafficGenerator, TrafficProfile

    interface = interface or APPLICATION_OF[next(iter(mix))]
    engine = Engine()
    udr = UdrModel(engine, table, udr_servers)
    fe = FrontEndVnf(engine, "calibration-fe", [interface], udr, table, sync_db=sync_db)
    profile = TrafficProfile(interface, mix, rate=rate_per_s, duration_s=duration_s, seed=seed)
    gen = TrafficGenerator(engine, profile, fe.handle, stream=f"{stream}/{interface}")
    gen.start()
    t_warm = ms(duration_s * MS_PER_S * warmup_fraction)
    t_end = ms(duration_s * MS_PER_S)
    engine.run_until(t_warm)
    b0 = fe.busy_time()
    engine.run_until(t_end)
    b1 = fe.busy_time()
    return (b1 - b0) / ((t_end - t_warm) * fe.cpu_capacity)


def calibrate_arrival_rate(target_r, table, mix, seed=0, duration_s=60.0, warmup_fraction=0.1,
                           tolerance=0.002, max_rate=None, max_iter=60, **kw):
    """Arrival rate (msg/s) at which a dedicated front end is busy ``target_r`` of the time.

    Bisection on the rate with common random numbers: every evaluation
    replays the same uniform draws, so the measured busy fraction moves
    monotonically with the rate and the search is reproducible from
    ``seed``.
    """
    if not 0 < target_r < 1:
        raise CalibrationError(f"target utilization must lie in (0, 1), got {target_r}")
    total = sum(mix.values())
    if abs(total - 100) > 1e-9:
        raise CalibrationError(f"command mix sums to {total}, not 100")
    mean_ms = mean_service_ms(table, mix)
    if mean_ms <= 0:
        raise CalibrationError("mix has zero service time; no rate reaches the target",
                               achievable=0.0)
    ideal = target_r / mean_ms * MS_PER_S
    hi = 1.25 / mean_ms * MS_PER_S
    if max_rate is not None:
        if max_rate * mean_ms / MS_PER_S < target_r:
            bound = max_rate * mean_ms / MS_PER_S
            raise CalibrationError(
                f"target {target_r:.2f} unattainable: at most {bound:.3f} at {max_rate} msg/s",
                achievable=bound)
        hi = min(hi, max_rate)

    def busy(rate):
        return measure_busy_fraction(rate, mix, table, seed, duration_s, warmup_fraction, **kw)

    lo, rate = 0.0, ideal
    best = (float("inf"), ideal)
    for _ in range(max_iter):
        b = busy(rate)
        err = b - target_r
        if abs(err) < best[0]:
            best = (abs(err), rate)
        if abs(err) <= tolerance:
            return rate
        if err < 0:
            lo = rate
        else:
            hi = rate
        rate = (lo + hi) / 2
    if best[0] > 0.01:
        raise CalibrationError(f"no rate within 0.01 of {target_r}; closest off by {best[0]:.4f}",
                               achievable=busy(hi))
    return best[1]
