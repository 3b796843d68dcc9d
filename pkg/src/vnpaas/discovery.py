"""Central VNF registry with publish and blocking discover.

A discover that finds nothing parks until a matching publish or until its
timeout fires. Both are ordinary engine events, so when a publish and a
timeout land on the same instant the one scheduled first wins.
"""

from dataclasses import dataclass, field

from .sim import as_ms


class DiscoveryError(Exception):
    pass


class DiscoveryRejected(DiscoveryError):
    """The allow-list does not authorize the operation."""


class DiscoveryTimeout(DiscoveryError):
    pass


class RuleConflict(DiscoveryError):
    pass


@dataclass(frozen=True)
class ConnectionPoint:
    address: str
    port: int
    protocol: str = "diameter"


@dataclass
class VnfRecordEntry:
    vnf_type: str
    instance_id: str
    zone: str
    connection_points: list
    metadata: dict = field(default_factory=dict)
    published_at: int = 0

    def __post_init__(self):
        if not self.connection_points:
            raise ValueError(f"record {self.vnf_type}/{self.instance_id} has no connection point")


@dataclass(frozen=True)
class DiscoveryRule:
    publisher_zone: str
    vnf_type: str
    consumer_zones: frozenset

    def __post_init__(self):
        object.__setattr__(self, "consumer_zones", frozenset(self.consumer_zones))
        if not self.consumer_zones:
            raise ValueError(f"rule for {self.vnf_type!r} has no consumer zones")


class DiscoverRequest:
    """Handle for one discover call; completes once per lifetime."""

    def __init__(self, vnf_type, zone, requested_at, callback):
        self.vnf_type = vnf_type
        self.zone = zone
        self.requested_at = requested_at
        self.callback = callback
        self.done = False
        self.records = None
        self.error = None
        self.completed_at = None
        self._timer = None

    @property
    def ok(self):
        return self.done and self.error is None

    def _finish(self, now, records=None, error=None):
        self.done = True
        self.records, self.error, self.completed_at = records, error, now
        if self._timer is not None:
            self._timer.cancel()
        if self.callback is not None:
            self.callback(self)


class DiscoveryEngine:
    def __init__(self, engine):
        self.engine = engine
        self.rules = []
        self._records = {}
        self._pending = []

    def add_rule(self, rule):
        for r in self.rules:
            if (r.vnf_type == rule.vnf_type and r.publisher_zone != rule.publisher_zone
                    and r.consumer_zones & rule.consumer_zones):
                raise RuleConflict(
                    f"{rule.vnf_type!r} for zones {sorted(r.consumer_zones & rule.consumer_zones)} "
                    f"already published from {r.publisher_zone!r}, not {rule.publisher_zone!r}")
        if rule not in self.rules:
            self.rules.append(rule)

    def remove_rule(self, rule):
        if rule in self.rules:
            self.rules.remove(rule)

    def _may_publish(self, zone, vnf_type):
        return any(r.publisher_zone == zone and r.vnf_type == vnf_type for r in self.rules)

    def _may_discover(self, zone, vnf_type):
        return any(r.vnf_type == vnf_type and zone in r.consumer_zones for r in self.rules)

    def _visible(self, vnf_type, zone):
        zones = {r.publisher_zone for r in self.rules
                 if r.vnf_type == vnf_type and zone in r.consumer_zones}
        return [rec for (t, _), rec in self._records.items() if t == vnf_type and rec.zone in zones]

    def publish(self, record):
        if not self._may_publish(record.zone, record.vnf_type):
            raise DiscoveryRejected(
                f"zone {record.zone!r} is not authorized to publish {record.vnf_type!r}")
        key = (record.vnf_type, record.instance_id)
        if key in self._records:
            raise DiscoveryError(f"record {record.vnf_type}/{record.instance_id} already published")
        record.published_at = self.engine.now
        self._records[key] = record
        self.engine.log("publish", f"{record.vnf_type}/{record.instance_id}@{record.zone}")
        woken = [req for req in self._pending
                 if req.vnf_type == record.vnf_type and self._may_discover(req.zone, req.vnf_type)
                 and record in self._visible(req.vnf_type, req.zone)]
        for req in woken:
            self._pending.remove(req)
            req._finish(self.engine.now, records=self._visible(req.vnf_type, req.zone))

    def unpublish(self, vnf_type, instance_id):
        try:
            del self._records[(vnf_type, instance_id)]
        except KeyError:
            raise DiscoveryError(f"no record {vnf_type}/{instance_id}") from None
        self.engine.log("unpublish", f"{vnf_type}/{instance_id}")

    def discover(self, vnf_type, requester_zone, timeout, callback=None):
        """Return a DiscoverRequest; it may already be complete on return.

        Raises DiscoveryRejected at once when no rule lets ``requester_zone``
        see ``vnf_type``. A timeout completes the request with a
        DiscoveryTimeout error at exactly request time + ``timeout``.
        """
        if timeout <= 0:
            raise ValueError(f"discover timeout must be positive, got {timeout}")
        if not self._may_discover(requester_zone, vnf_type):
            raise DiscoveryRejected(
                f"zone {requester_zone!r} is not authorized to discover {vnf_type!r}")
        req = DiscoverRequest(vnf_type, requester_zone, self.engine.now, callback)
        found = self._visible(vnf_type, requester_zone)
        if found:
            req._finish(self.engine.now, records=found)
            return req
        self.engine.log("discover-park", f"{vnf_type}@{requester_zone}")
        self._pending.append(req)
        req._timer = self.engine.schedule_in(timeout, self._expire, req, kind="discover-timeout",
                                             detail=f"{vnf_type}@{requester_zone}")
        return req

    def _expire(self, req):
        if req.done:
            return
        self._pending.remove(req)
        req._timer = None
        req._finish(self.engine.now, error=DiscoveryTimeout(
            f"no {req.vnf_type!r} record for zone {req.zone!r} within "
            f"{as_ms(self.engine.now - req.requested_at):g} ms"))

    def list(self, vnf_type=None):
        return [rec for (t, _), rec in sorted(self._records.items())
                if vnf_type is None or t == vnf_type]

    def pending(self):
        return list(self._pending)

    def dump(self, fh):
        for rec in self.list():
            cp = rec.connection_points[0]
            fh.write(f"{rec.vnf_type}\t{rec.instance_id}\t{rec.zone}\t{cp.address}\t{cp.port}\n")
