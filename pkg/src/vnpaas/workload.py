"""S6a / Cx traffic generation and the message-conservation ledger."""

import collections
import itertools
from dataclasses import dataclass, field

from .diameter import APPLICATION_OF, COMMANDS, DiameterMessage, RoutingError
from .sim import RngStream, ms

# Messages per seven-minute run at each target utilization.
TABLE_I_COUNTS = {
    0.25: {"S6a": 19067, "Cx": 21234},
    0.50: {"S6a": 40749, "Cx": 45102},
    0.70: {"S6a": 59366, "Cx": 64098},
    0.90: {"S6a": 76783, "Cx": 84131},
}
TABLE_I_DURATION_S = 420.0

COMMAND_MIX = {
    "S6a": {"AIR": 40, "PUR": 30, "ULR": 30},
    "Cx": {"LIR": 43, "MAR": 2, "SAR": 8, "UAR": 47},
}


class ConservationError(Exception):
    def __init__(self, cells):
        self.cells = cells
        detail = ", ".join(f"({i}, {c}): {v}" for (i, c), v in sorted(cells.items()))
        super().__init__(f"conservation violated in {detail}")


@dataclass
class TrafficProfile:
    """Arrival process for one interface.

    Either ``total`` messages over ``duration_s`` (fixed-count mode, rate =
    total / duration) or a plain ``rate`` in msg/s.
    """

    interface: str
    mix: dict
    duration_s: float
    rate: float = None
    total: int = None
    seed: int = 0
    arrivals: str = "poisson"

    def __post_init__(self):
        if self.interface not in COMMANDS:
            raise ValueError(f"unknown interface {self.interface!r}")
        foreign = [c for c in self.mix if APPLICATION_OF.get(c) != self.interface]
        if foreign:
            raise ValueError(f"commands {foreign} do not belong to {self.interface}")
        if any(p < 0 for p in self.mix.values()):
            raise ValueError("mix percentages must be non-negative")
        if abs(sum(self.mix.values()) - 100) > 1e-9:
            raise ValueError(f"mix sums to {sum(self.mix.values())}, not 100")
        if (self.rate is None) == (self.total is None):
            raise ValueError("give exactly one of rate or total")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        if self.arrivals not in ("poisson", "deterministic"):
            raise ValueError(f"unknown arrival process {self.arrivals!r}")

    @property
    def rate_per_s(self):
        return self.rate if self.rate is not None else self.total / self.duration_s


def table_profile(interface, r, duration_s=60.0, seed=0):
    """Rate-mode profile at the Table I rate for utilization ``r``."""
    rate = TABLE_I_COUNTS[r][interface] / TABLE_I_DURATION_S
    return TrafficProfile(interface, dict(COMMAND_MIX[interface]), duration_s, rate=rate, seed=seed)


def arrival_times(profile, stream):
    """Yield (offset_us, command) pairs until the profile's duration elapses."""
    rate = profile.rate_per_s
    if rate <= 0:
        return
    mean_gap_ms = 1000.0 / rate
    horizon = ms(profile.duration_s * 1000.0)
    commands = list(profile.mix)
    weights = [profile.mix[c] for c in commands]
    t = 0.0
    while True:
        if profile.arrivals == "poisson":
            t += stream.exponential(mean_gap_ms)
        else:
            t += mean_gap_ms
        at = ms(t)
        if at >= horizon:
            return
        yield at, stream.choice(commands, weights)


class TrafficGenerator:
    """Event-loop actor feeding one interface's requests to ``sink``.

    ``sink(msg)`` returning False, or raising RoutingError, counts the
    message as dropped in ``ledger``.
    """

    def __init__(self, engine, profile, sink, stream=None, ledger=None, ids=None):
        self.engine = engine
        self.profile = profile
        self.sink = sink
        self.ledger = ledger
        self.ids = ids if ids is not None else itertools.count(1)
        self.stream = RngStream(profile.seed, stream or f"arrivals/{profile.interface}")
        self.generated = 0
        self._arrivals = None
        self._t0 = 0

    def start(self):
        self._t0 = self.engine.now
        self._arrivals = arrival_times(self.profile, self.stream)
        self._next()

    def _next(self):
        nxt = next(self._arrivals, None)
        if nxt is not None:
            at, cmd = nxt
            self.engine.schedule(self._t0 + at, self._arrive, cmd)

    def _arrive(self, command):
        mid = next(self.ids)
        msg = DiameterMessage(mid, f"{self.profile.interface}-{mid}", self.profile.interface,
                              command, self.engine.now)
        self.generated += 1
        if self.ledger is not None:
            self.ledger.generated(msg)
        try:
            accepted = self.sink(msg)
        except RoutingError:
            accepted = False
        if accepted is False and self.ledger is not None:
            self.ledger.dropped(msg)
        self._next()


def generate(profile, stream=None):
    """Arrival list [(offset_us, command)] for ``profile`` without an engine."""
    rng = RngStream(profile.seed, stream or f"arrivals/{profile.interface}")
    return list(arrival_times(profile, rng))


@dataclass
class ConservationLedger:
    counts: dict = field(default_factory=lambda: collections.defaultdict(collections.Counter))
    closed: bool = False

    def _cell(self, msg):
        return self.counts[(msg.application, msg.command)]

    def generated(self, msg):
        self._cell(msg)["generated"] += 1

    def completed(self, msg):
        self._cell(msg)["completed"] += 1

    def dropped(self, msg):
        self._cell(msg)["dropped"] += 1

    def close(self, in_flight):
        """Record the messages still inside the system when the run ends."""
        for msg in in_flight:
            self._cell(msg)["in_flight_at_end"] += 1
        self.closed = True

    def imbalances(self):
        bad = {}
        for cell, c in self.counts.items():
            diff = c["generated"] - c["completed"] - c["dropped"] - c["in_flight_at_end"]
            if diff:
                bad[cell] = diff
        return bad

    def audit(self):
        bad = self.imbalances()
        if bad:
            raise ConservationError(bad)
        return True

    def totals(self):
        out = collections.Counter()
        for c in self.counts.values():
            out.update(c)
        return {k: out[k] for k in ("generated", "completed", "dropped", "in_flight_at_end")}

    def rows(self):
        for (iface, cmd), c in sorted(self.counts.items()):
            yield (iface, cmd, c["generated"], c["completed"], c["dropped"], c["in_flight_at_end"])


def audit(ledger):
    return ledger.audit()
