"""Global orchestrator: template decomposition per zone and NS lifecycle."""

import logging
from dataclasses import dataclass, field

import networkx as nx

from . import template as tpl
from .discovery import DiscoveryRule, RuleConflict

log = logging.getLogger(__name__)


class OrchestratorError(Exception):
    pass


class PlacementError(OrchestratorError):
    pass


@dataclass(frozen=True)
class ZoneConfig:
    zone_id: str
    agent: object = None
    cpu: int = 64
    memory_mib: int = 262144
    location_tag: str = ""

    def __post_init__(self):
        if self.cpu <= 0 or self.memory_mib <= 0:
            raise ValueError(f"zone {self.zone_id!r}: capacity must be positive")


@dataclass
class DeploymentPlan:
    ns_instance_id: str
    service: str
    subservices: dict
    discovery_rules: list
    placement: dict = field(default_factory=dict)

    def to_mapping(self):
        return {
            "ns_instance_id": self.ns_instance_id,
            "service": self.service,
            "subservices": [
                {"zone": zone, **tpl.to_mapping(sub)} for zone, sub in self.subservices.items()
            ],
            "discovery_rules": [
                {"publisher_zone": r.publisher_zone, "vnf_type": r.vnf_type,
                 "consumer_zones": sorted(r.consumer_zones)}
                for r in self.discovery_rules
            ],
        }

    def serialize(self):
        return tpl.dump_yaml(self.to_mapping())

    @classmethod
    def parse(cls, text):
        doc = tpl.load_document(text)
        subs = {}
        for item in doc.get("subservices") or []:
            zone = item["zone"]
            subs[zone] = tpl.template_from_mapping({k: v for k, v in item.items() if k != "zone"})
        rules = [DiscoveryRule(r["publisher_zone"], r["vnf_type"], frozenset(r["consumer_zones"]))
                 for r in doc.get("discovery_rules") or []]
        placement = {n.id: zone for zone, sub in subs.items() for n in sub.vnf_nodes()}
        return cls(doc["ns_instance_id"], doc["service"], subs, rules, placement)


def record_id(node_id):
    return f"{node_id}-record"


def discoverable_id(node_id):
    return f"{node_id}-discoverable"


def place_all(t, zone_id):
    """Trivial placement putting every Vnf node of ``t`` in one zone."""
    return {n.id: zone_id for n in t.vnf_nodes()}


def decompose(t, placement, zones=None, ns_instance_id=None):
    """Split ``t`` into one subservice per zone used by ``placement``.

    Each cross-zone edge A(x) -> B(y) becomes A -> DiscoverableVnf(B) in
    zone x and B -> VnfRecord(B) in zone y, plus a discovery rule letting x
    see B's vnf_type from y. Consumers in one zone share a single
    DiscoverableVnf per target; a target gets one VnfRecord whatever the
    number of consuming zones.
    """
    bad = [n.id for n in t.nodes if not n.is_vnf]
    if bad:
        raise PlacementError(f"input template already has composition nodes: {bad}")
    vnf_ids = [n.id for n in t.vnf_nodes()]
    missing = [nid for nid in vnf_ids if nid not in placement]
    if missing:
        raise PlacementError(f"placement is not total: no zone for {missing}")
    extra = sorted(set(placement) - set(vnf_ids))
    if extra:
        raise PlacementError(f"placement names unknown nodes {extra}")
    if zones is not None:
        unknown = sorted({z for z in placement.values() if z not in zones})
        if unknown:
            raise PlacementError(f"unknown zones {unknown}")

    zone_order = sorted(set(placement.values()))
    nodes = {z: [n for n in t.nodes if placement[n.id] == z] for z in zone_order}
    rels = {z: [] for z in zone_order}
    extra_nodes = {z: {} for z in zone_order}
    consumers = {}
    for r in t.relationships:
        zs, zt = placement[r.source], placement[r.target]
        if zs == zt:
            rels[zs].append(r)
            continue
        target = t.node(r.target)
        did = discoverable_id(target.id)
        if did not in extra_nodes[zs]:
            extra_nodes[zs][did] = tpl.NodeTemplate(
                did, tpl.DISCOVERABLE_VNF, "none", target.vnf_type,
                properties={"target": target.id, "publisher_zone": zt})
        rels[zs].append(tpl.Relationship(r.source, did))
        rid = record_id(target.id)
        if rid not in extra_nodes[zt]:
            extra_nodes[zt][rid] = tpl.NodeTemplate(
                rid, tpl.VNF_RECORD, "none", target.vnf_type, properties={"target": target.id})
            rels[zt].append(tpl.Relationship(target.id, rid))
        consumers.setdefault((zt, target.vnf_type), set()).add(zs)

    subservices = {}
    for z in zone_order:
        sub = tpl.ServiceTemplate(
            f"{t.name}-{z}" if len(zone_order) > 1 else t.name,
            tuple(nodes[z]) + tuple(extra_nodes[z][k] for k in sorted(extra_nodes[z])),
            tuple(dict.fromkeys(rels[z])),
        )
        problems = tpl.validate(sub)
        if problems:
            raise OrchestratorError(f"subservice for {z} is invalid: {problems}")
        subservices[z] = sub
    rules = [DiscoveryRule(zp, vt, frozenset(cz)) for (zp, vt), cz in sorted(consumers.items())]
    return DeploymentPlan(ns_instance_id or t.name, t.name, subservices, rules, dict(placement))


def recompose(plan):
    """Inverse of decompose: drop records, fold discoverables onto their Vnf."""
    nodes, rels = [], []
    by_zone_type = {}
    for zone, sub in plan.subservices.items():
        for n in sub.vnf_nodes():
            by_zone_type.setdefault((zone, n.vnf_type), []).append(n.id)
    for zone, sub in plan.subservices.items():
        kinds = {n.id: n.kind for n in sub.nodes}
        nodes.extend(sub.vnf_nodes())
        for r in sub.relationships:
            tkind = kinds[r.target]
            if tkind == tpl.VNF_RECORD:
                continue
            if tkind == tpl.DISCOVERABLE_VNF:
                vt = sub.node(r.target).vnf_type
                (rule,) = [x for x in plan.discovery_rules
                           if x.vnf_type == vt and zone in x.consumer_zones]
                (target,) = by_zone_type[(rule.publisher_zone, vt)]
                rels.append(tpl.Relationship(r.source, target, r.kind))
            else:
                rels.append(r)
    return tpl.ServiceTemplate(plan.service, tuple(nodes), tuple(rels))


class DependencyGraph:
    """Typed graph of zones, agents, NS instances and VNF instances."""

    def __init__(self):
        self.g = nx.MultiDiGraph()

    def add_vertex(self, kind, ident, **attrs):
        self.g.add_node((kind, ident), kind=kind, **attrs)
        return (kind, ident)

    def relate(self, u, v, relation):
        for end in (u, v):
            if end not in self.g:
                raise KeyError(f"no vertex {end}")
        self.g.add_edge(u, v, key=relation, relation=relation)

    def vertices(self, kind=None):
        return sorted(v for v, d in self.g.nodes(data=True) if kind is None or d["kind"] == kind)

    def edges(self, relation=None):
        return sorted((u, v, k) for u, v, k in self.g.edges(keys=True)
                      if relation is None or k == relation)

    def remove_ns(self, ns_id):
        ns = ("ns-instance", ns_id)
        members = [u for u, _, k in self.g.in_edges(ns, keys=True) if k == "part-of"]
        self.g.remove_nodes_from(members + [ns])


@dataclass
class NsInstance:
    ns_instance_id: str
    plan: DeploymentPlan
    status: str = "deploying"
    zone_status: dict = field(default_factory=dict)
    jobs: dict = field(default_factory=dict)
    started_at: int = 0
    completed_at: int = None
    errors: dict = field(default_factory=dict)

    def instances(self):
        return [i for job in self.jobs.values() for i in job.instances]


@dataclass(frozen=True)
class ZonePolicy:
    max_delay_ms: float


@dataclass(frozen=True)
class ZoneAction:
    zone_id: str
    action: str
    mean_delay_ms: float


class Orchestrator:
    def __init__(self, engine, discovery, zones):
        self.engine = engine
        self.discovery = discovery
        self.zones = {z.zone_id: z for z in zones}
        if len(self.zones) != len(zones):
            raise ValueError("zone ids must be unique")
        self.graph = DependencyGraph()
        for z in zones:
            zv = self.graph.add_vertex("zone", z.zone_id, location=z.location_tag)
            if z.agent is not None:
                av = self.graph.add_vertex("agent", z.zone_id)
                self.graph.relate(av, zv, "manages")
        self.ns = {}
        self._configured = {}

    def decompose(self, t, placement, ns_instance_id=None):
        return decompose(t, placement, self.zones, ns_instance_id)

    def configure_discovery(self, plan):
        added = []
        try:
            for rule in plan.discovery_rules:
                if rule.publisher_zone not in self.zones or not rule.consumer_zones <= set(self.zones):
                    raise OrchestratorError(f"rule {rule} names an unknown zone")
                self.discovery.add_rule(rule)
                added.append(rule)
        except RuleConflict:
            for rule in added:
                self.discovery.remove_rule(rule)
            raise
        self._configured[plan.ns_instance_id] = list(plan.discovery_rules)
        self.engine.log("discovery-configured", plan.ns_instance_id)

    def deploy(self, plan, callback=None):
        """Instruct every zone agent at the current instant; returns the NsInstance.

        The record's status moves to ``running`` or ``failed`` when the last
        agent reports back; ``callback(ns)`` fires then.
        """
        if plan.ns_instance_id in self.ns:
            return self.ns[plan.ns_instance_id]
        if plan.ns_instance_id not in self._configured:
            raise OrchestratorError(f"discovery not configured for {plan.ns_instance_id!r}")
        for zone in plan.subservices:
            if zone not in self.zones or self.zones[zone].agent is None:
                raise OrchestratorError(f"no agent for zone {zone!r}")
        ns = NsInstance(plan.ns_instance_id, plan, started_at=self.engine.now)
        self.ns[ns.ns_instance_id] = ns
        self.graph.add_vertex("ns-instance", ns.ns_instance_id)
        for zone, sub in plan.subservices.items():
            ns.zone_status[zone] = "deploying"
            self.engine.schedule_in(0, self._instruct, ns, zone, sub, callback,
                                    kind="instruct-agent", detail=f"{zone}/{sub.name}")
        return ns

    def _instruct(self, ns, zone, sub, callback):
        agent = self.zones[zone].agent
        ns.jobs[zone] = agent.deploy_subservice(
            sub, lambda job: self._zone_done(ns, zone, job, callback))

    def _zone_done(self, ns, zone, job, callback):
        ns.zone_status[zone] = job.status
        if job.error:
            ns.errors[zone] = job.error
        zv = ("zone", zone)
        nv = ("ns-instance", ns.ns_instance_id)
        for inst in job.instances:
            vv = self.graph.add_vertex("vnf-instance", f"{zone}/{inst.instance_id}",
                                       vnf_type=inst.vnf_type)
            self.graph.relate(zv, vv, "hosts")
            self.graph.relate(vv, nv, "part-of")
        if any(s == "deploying" for s in ns.zone_status.values()):
            return
        ns.status = "running" if all(s == "running" for s in ns.zone_status.values()) else "failed"
        ns.completed_at = self.engine.now
        self.engine.log(f"ns-{ns.status}", ns.ns_instance_id)
        log.info("ns %s %s: %s", ns.ns_instance_id, ns.status, ns.zone_status)
        if callback is not None:
            callback(ns)

    def teardown(self, ns_instance_id):
        try:
            ns = self.ns.pop(ns_instance_id)
        except KeyError:
            raise OrchestratorError(f"unknown NS instance {ns_instance_id!r}") from None
        for zone, job in ns.jobs.items():
            self.zones[zone].agent.stop_subservice(job.instances)
        for rule in self._configured.pop(ns_instance_id, ()):
            self.discovery.remove_rule(rule)
        self.graph.remove_ns(ns_instance_id)
        ns.status = "terminated"
        self.engine.log("ns-terminated", ns_instance_id)
        return ns

    def manage_zones(self, kpi_report, policy):
        """Flag zones whose mean agent-to-VIM delay exceeds the policy bound."""
        actions = []
        for zone in sorted(kpi_report):
            samples = list(kpi_report[zone])
            mean = sum(samples) / len(samples) if samples else 0.0
            action = "flag-over-threshold" if mean > policy.max_delay_ms else "none"
            actions.append(ZoneAction(zone, action, mean))
        return actions
