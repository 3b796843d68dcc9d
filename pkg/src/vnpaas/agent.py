"""Per-zone orchestration agent.

The agent walks a subservice template in lifecycle order, one node at a
time. Plain Vnf nodes are created on the simulated VIM / container service,
configured with the endpoints of the nodes they connect to, and brought to
``running``. VnfRecord nodes publish the attached Vnf's instances;
DiscoverableVnf nodes issue a blocking discover and cache what it returns.
"""

import logging
from dataclasses import dataclass, field

from . import template as tpl
from .discovery import ConnectionPoint, DiscoveryError, VnfRecordEntry
from .sim import ms

log = logging.getLogger(__name__)

CREATING, CONFIGURING, RUNNING, STOPPED, FAILED = (
    "creating", "configuring", "running", "stopped", "failed")
_NEXT = {CREATING: CONFIGURING, CONFIGURING: RUNNING, RUNNING: STOPPED}
LIVE_STATES = (CREATING, CONFIGURING, RUNNING)

DEFAULT_VM_CREATE_MS = 2000.0
DEFAULT_CONTAINER_CREATE_MS = 200.0
DEFAULT_DISCOVER_TIMEOUT_MS = 30000.0
DIAMETER_PORT = 3868


class CapacityExhausted(Exception):
    pass


@dataclass
class VnfInstance:
    instance_id: str
    node_id: str
    vnf_type: str
    zone: str
    deployment: str
    cpu: int
    memory_mib: int
    state: str = CREATING
    endpoints: list = field(default_factory=list)
    properties: dict = field(default_factory=dict)
    peers: dict = field(default_factory=dict)

    def advance(self, state):
        if state != FAILED and _NEXT.get(self.state) != state:
            raise ValueError(f"{self.instance_id}: illegal transition {self.state} -> {state}")
        self.state = state


@dataclass
class ZoneResources:
    cpu: int
    memory_mib: int
    allocated_cpu: int = 0
    allocated_memory_mib: int = 0

    def fits(self, cpu, memory_mib):
        return (self.allocated_cpu + cpu <= self.cpu
                and self.allocated_memory_mib + memory_mib <= self.memory_mib)

    def allocate(self, cpu, memory_mib):
        if not self.fits(cpu, memory_mib):
            raise CapacityExhausted(
                f"need cpu={cpu} mem={memory_mib}MiB, free cpu={self.cpu - self.allocated_cpu} "
                f"mem={self.memory_mib - self.allocated_memory_mib}MiB")
        self.allocated_cpu += cpu
        self.allocated_memory_mib += memory_mib

    def release(self, cpu, memory_mib):
        self.allocated_cpu -= cpu
        self.allocated_memory_mib -= memory_mib
        assert self.allocated_cpu >= 0 and self.allocated_memory_mib >= 0


@dataclass
class DeployJob:
    """Progress of one deploy_subservice call."""

    template: object
    order: list
    instances: list = field(default_factory=list)
    failed_nodes: list = field(default_factory=list)
    status: str = "deploying"
    error: str = None
    discovered: dict = field(default_factory=dict)
    published: list = field(default_factory=list)
    started_at: int = 0
    completed_at: int = None
    _cursor: int = 0
    _callback: object = None

    @property
    def ok(self):
        return self.status == "running"


class OrchestrationAgent:
    def __init__(self, zone_id, engine, discovery, cpu=64, memory_mib=262144,
                 vm_create_ms=DEFAULT_VM_CREATE_MS,
                 container_create_ms=DEFAULT_CONTAINER_CREATE_MS,
                 configure_ms=0.0, discover_timeout_ms=DEFAULT_DISCOVER_TIMEOUT_MS,
                 on_running=None, on_stopped=None):
        self.zone_id = zone_id
        self.engine = engine
        self.discovery = discovery
        self.resources = ZoneResources(cpu, memory_mib)
        self.create_delay = {"vm": ms(vm_create_ms), "container": ms(container_create_ms)}
        self.configure_delay = ms(configure_ms)
        self.discover_timeout = ms(discover_timeout_ms)
        self.on_running = on_running
        self.on_stopped = on_stopped
        self.instances = {}
        self.transitions = []
        self.metrics = []
        self.rejected_metrics = 0
        self._published_by = {}

    # lifecycle -----------------------------------------------------------

    def _set_state(self, inst, state):
        inst.advance(state)
        self.transitions.append((self.engine.now, inst.instance_id, state))
        self.engine.log(f"vnf-{state}", f"{self.zone_id}/{inst.instance_id}")

    def deploy_subservice(self, template, callback=None):
        """Start deploying ``template``; ``callback(job)`` fires on completion."""
        job = DeployJob(template, tpl.lifecycle_order(template), started_at=self.engine.now,
                        _callback=callback)
        log.debug("zone %s deploying %s: %s", self.zone_id, template.name, job.order)
        self.engine.log("subservice-start", f"{self.zone_id}/{template.name}")
        self._step(job)
        return job

    def _finish(self, job, status, error=None):
        job.status, job.error, job.completed_at = status, error, self.engine.now
        self.engine.log(f"subservice-{status}", f"{self.zone_id}/{job.template.name}")
        if job._callback is not None:
            job._callback(job)

    def _fail(self, job, error):
        job.failed_nodes.extend(job.order[job._cursor:])
        for inst in job.instances:
            if inst.state in (CREATING, CONFIGURING):
                self._set_state(inst, FAILED)
                self.resources.release(inst.cpu, inst.memory_mib)
        self._finish(job, "failed", error)

    def _step(self, job):
        if job._cursor >= len(job.order):
            self._finish(job, "running")
            return
        node = job.template.node(job.order[job._cursor])
        if node.kind == tpl.VNF:
            self._create(job, node)
        elif node.kind == tpl.VNF_RECORD:
            self._publish(job, node)
        else:
            self._discover(job, node)

    def _advance(self, job):
        job._cursor += 1
        self._step(job)

    def _create(self, job, node):
        replicas = int(node.properties.get("replicas", 1))
        port = int(node.properties.get("port", DIAMETER_PORT))
        protocol = node.properties.get("protocol", "diameter")
        created = []
        for k in range(replicas):
            iid = node.id if replicas == 1 else f"{node.id}-{k + 1}"
            try:
                self.resources.allocate(node.cpu, node.memory_mib)
            except CapacityExhausted as exc:
                job.instances.extend(created)
                self._fail(job, f"zone {self.zone_id}: {node.id}: {exc}")
                return
            inst = VnfInstance(iid, node.id, node.vnf_type, self.zone_id, node.deployment,
                               node.cpu, node.memory_mib,
                               endpoints=[ConnectionPoint(f"{self.zone_id}.{iid}", port, protocol)])
            self.instances[iid] = inst
            self.transitions.append((self.engine.now, iid, CREATING))
            self.engine.log("vnf-creating", f"{self.zone_id}/{iid}")
            created.append(inst)
        job.instances.extend(created)
        self.engine.schedule_in(self.create_delay[node.deployment], self._configure, job, node,
                                created, kind="vim-created", detail=f"{self.zone_id}/{node.id}")

    def _peer_endpoints(self, job, node):
        peers = {}
        for target in job.template.targets_of(node.id):
            tnode = job.template.node(target)
            if tnode.kind == tpl.VNF:
                peers[target] = [cp for inst in job.instances if inst.node_id == target
                                 for cp in inst.endpoints]
            elif tnode.kind == tpl.DISCOVERABLE_VNF:
                peers[target] = [cp for rec in job.discovered.get(target, ())
                                 for cp in rec.connection_points]
        return peers

    def _interrupted(self, job, created, expected):
        if any(inst.state != expected for inst in created):
            self._fail(job, f"zone {self.zone_id}: instances stopped during deployment")
            return True
        return False

    def _configure(self, job, node, created):
        if job.status != "deploying" or self._interrupted(job, created, CREATING):
            return
        peers = self._peer_endpoints(job, node)
        for inst in created:
            self._set_state(inst, CONFIGURING)
            for target, cps in peers.items():
                inst.properties[f"peer.{target}"] = ",".join(f"{cp.address}:{cp.port}" for cp in cps)
            inst.peers = peers
        self.engine.schedule_in(self.configure_delay, self._started, job, created,
                                kind="vnf-configured", detail=f"{self.zone_id}/{node.id}")

    def _started(self, job, created):
        if job.status != "deploying" or self._interrupted(job, created, CONFIGURING):
            return
        for inst in created:
            self._set_state(inst, RUNNING)
            if self.on_running is not None:
                self.on_running(self, inst)
        self._advance(job)

    def _publish(self, job, node):
        (attached,) = [r.source for r in job.template.relationships if r.target == node.id]
        try:
            for inst in job.instances:
                if inst.node_id != attached:
                    continue
                entry = VnfRecordEntry(inst.vnf_type, inst.instance_id, self.zone_id,
                                       list(inst.endpoints), {"node": inst.node_id})
                self.discovery.publish(entry)
                self._published_by.setdefault(inst.instance_id, []).append(
                    (entry.vnf_type, entry.instance_id))
                job.published.append(entry)
        except DiscoveryError as exc:
            self._fail(job, f"zone {self.zone_id}: publish {node.id}: {exc}")
            return
        self._advance(job)

    def _discover(self, job, node):
        def resume(req):
            if req.error is not None:
                self._fail(job, f"zone {self.zone_id}: discover {node.vnf_type}: {req.error}")
                return
            job.discovered[node.id] = req.records
            self.engine.log("discover-return", f"{node.vnf_type}@{self.zone_id}")
            self._advance(job)

        try:
            self.discovery.discover(node.vnf_type, self.zone_id, self.discover_timeout, resume)
        except DiscoveryError as exc:
            self._fail(job, f"zone {self.zone_id}: discover {node.vnf_type}: {exc}")

    def stop_subservice(self, instances):
        """Stop ``instances`` in reverse order; already-stopped ones are skipped."""
        for inst in reversed(list(instances)):
            if inst.state not in LIVE_STATES:
                continue
            for vnf_type, iid in self._published_by.pop(inst.instance_id, ()):
                try:
                    self.discovery.unpublish(vnf_type, iid)
                except DiscoveryError:
                    pass
            if inst.state == RUNNING:
                self._set_state(inst, STOPPED)
            else:
                self._set_state(inst, FAILED)
            self.resources.release(inst.cpu, inst.memory_mib)
            if self.on_stopped is not None:
                self.on_stopped(self, inst)

    def allocated_by_instances(self):
        live = [i for i in self.instances.values() if i.state in LIVE_STATES]
        return sum(i.cpu for i in live), sum(i.memory_mib for i in live)

    # monitoring ------------------------------------------------------------

    def ingest_metric(self, sample):
        """Store a sample pushed by a managed instance's monitoring agent."""
        if sample.instance_id not in self.instances:
            self.rejected_metrics += 1
            return False
        sample.zone = self.zone_id
        self.metrics.append(sample)
        return True
