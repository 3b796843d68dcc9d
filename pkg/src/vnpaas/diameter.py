"""Diameter request model and application-based round-robin routing."""

from dataclasses import dataclass, field

S6A, CX = "S6a", "Cx"
APPLICATIONS = (S6A, CX)
COMMANDS = {
    S6A: ("AIR", "PUR", "ULR"),
    CX: ("LIR", "MAR", "SAR", "UAR"),
}
APPLICATION_OF = {cmd: app for app, cmds in COMMANDS.items() for cmd in cmds}
ALL_COMMANDS = tuple(c for app in APPLICATIONS for c in COMMANDS[app])


class RoutingError(Exception):
    pass


@dataclass(slots=True)
class DiameterMessage:
    message_id: int
    session_id: str
    application: str
    command: str
    created_at: int
    enqueued_at: int = None
    service_start: int = None
    completed_at: int = None
    backend_id: str = None

    def __post_init__(self):
        if self.application not in COMMANDS:
            raise ValueError(f"unknown diameter application {self.application!r}")
        if self.command not in COMMANDS[self.application]:
            raise ValueError(f"command {self.command} does not belong to {self.application}")

    @property
    def response_time(self):
        return self.completed_at - self.created_at


@dataclass(frozen=True)
class BackendRegistration:
    backend_id: str
    applications: frozenset
    endpoint: object = None

    def __post_init__(self):
        object.__setattr__(self, "applications", frozenset(self.applications))
        if not self.applications:
            raise ValueError(f"backend {self.backend_id!r} registers no application")
        unknown = self.applications - set(APPLICATIONS)
        if unknown:
            raise ValueError(f"backend {self.backend_id!r}: unknown applications {sorted(unknown)}")


@dataclass
class DiameterRouter:
    """Routes each request by application, round-robin within the application.

    Every application keeps its own rotation and cursor; routing S6a never
    moves the Cx cursor. ``deliver`` maps a backend id to the callable that
    accepts the message. With ``proxy_delay`` > 0 delivery is deferred on
    ``engine`` by that many microseconds.
    """

    engine: object = None
    proxy_delay: int = 0
    audit: list = None
    rotations: dict = field(default_factory=lambda: {app: [] for app in APPLICATIONS})
    cursors: dict = field(default_factory=lambda: {app: 0 for app in APPLICATIONS})
    backends: dict = field(default_factory=dict)
    deliver: dict = field(default_factory=dict)
    dropped: int = 0
    routed: int = 0

    def register_backend(self, reg, handler=None):
        if reg.backend_id in self.backends:
            raise RoutingError(f"backend {reg.backend_id!r} already registered")
        self.backends[reg.backend_id] = reg
        for app in APPLICATIONS:
            if app in reg.applications:
                self.rotations[app].append(reg.backend_id)
        if handler is not None:
            self.deliver[reg.backend_id] = handler

    def deregister_backend(self, backend_id):
        if backend_id not in self.backends:
            raise RoutingError(f"backend {backend_id!r} is not registered")
        del self.backends[backend_id]
        self.deliver.pop(backend_id, None)
        for app, rot in self.rotations.items():
            if backend_id in rot:
                pos = rot.index(backend_id)
                rot.pop(pos)
                if pos < self.cursors[app]:
                    self.cursors[app] -= 1
                if self.cursors[app] >= len(rot):
                    self.cursors[app] = 0

    def pick(self, application):
        if application not in self.rotations:
            raise RoutingError(f"unknown diameter application {application!r}")
        rot = self.rotations[application]
        if not rot:
            raise RoutingError(f"no backend registered for {application}")
        i = self.cursors[application]
        self.cursors[application] = (i + 1) % len(rot)
        return rot[i]

    def route(self, msg):
        """Choose a backend for ``msg`` and hand it over; returns the backend id."""
        try:
            backend = self.pick(msg.application)
        except RoutingError:
            self.dropped += 1
            raise
        msg.backend_id = backend
        self.routed += 1
        if self.audit is not None:
            self.audit.append((msg.message_id, msg.application, msg.command, backend))
        handler = self.deliver.get(backend)
        if handler is not None:
            if self.proxy_delay and self.engine is not None:
                self.engine.schedule_in(self.proxy_delay, handler, msg)
            else:
                handler(msg)
        return backend

    def dump_audit(self, fh):
        for mid, app, cmd, backend in self.audit or ():
            fh.write(f"{mid}\t{app}\t{cmd}\t{backend}\n")
