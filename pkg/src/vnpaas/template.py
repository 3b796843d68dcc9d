"""Service template model, YAML document format and lifecycle ordering.

A template document looks like::

    service: hss
    nodes:
      - id: UDR
        kind: Vnf
        deployment: vm
        vnf_type: UDR
        cpu: 16
        memory_mib: 32768
        properties: {}
    relationships:
      - source: S6a
        target: UDR
        kind: connects-to

Two node kinds besides plain ``Vnf`` carry cross-zone composition: a
``VnfRecord`` publishes the instances of the Vnf attached to it, and a
``DiscoverableVnf`` stands in for a Vnf deployed in another zone.
"""

from dataclasses import dataclass, field

import networkx as nx
import yaml

VNF = "Vnf"
VNF_RECORD = "VnfRecord"
DISCOVERABLE_VNF = "DiscoverableVnf"
NODE_KINDS = (VNF, VNF_RECORD, DISCOVERABLE_VNF)
DEPLOYMENTS = ("container", "vm", "none")
CONNECTS_TO = "connects-to"

_NODE_KEYS = ("id", "kind", "deployment", "vnf_type", "cpu", "memory_mib", "properties")
_REL_KEYS = ("source", "target", "kind")


class TemplateError(ValueError):
    """Raised when a document cannot be turned into a valid template."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [Violation("error", violations)]
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    node: str = None
    line: int = None

    def __str__(self):
        where = f" (line {self.line})" if self.line else ""
        return f"{self.code}: {self.message}{where}"


@dataclass(frozen=True)
class NodeTemplate:
    id: str
    kind: str = VNF
    deployment: str = "container"
    vnf_type: str = ""
    cpu: int = 0
    memory_mib: int = 0
    properties: dict = field(default_factory=dict, hash=False)

    @property
    def is_vnf(self):
        return self.kind == VNF


@dataclass(frozen=True)
class Relationship:
    source: str
    target: str
    kind: str = CONNECTS_TO


@dataclass(frozen=True)
class ServiceTemplate:
    name: str
    nodes: tuple = ()
    relationships: tuple = ()

    def node(self, node_id):
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def node_ids(self):
        return [n.id for n in self.nodes]

    def vnf_nodes(self):
        return [n for n in self.nodes if n.kind == VNF]

    def targets_of(self, node_id):
        return [r.target for r in self.relationships if r.source == node_id]


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    mapping = loader.construct_mapping(node, deep=True)
    mapping["__line__"] = node.start_mark.line + 1
    return mapping


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _strip_line(d):
    return {k: v for k, v in d.items() if k != "__line__"}


def load_document(text):
    """Parse YAML text, tagging each mapping with the line it starts on."""
    try:
        return yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise TemplateError([Violation("syntax", str(exc).splitlines()[0],
                                       line=mark.line + 1 if mark else None)])


def template_from_mapping(doc):
    """Build a template from a loaded document mapping and validate it."""
    problems = []
    if not isinstance(doc, dict):
        raise TemplateError("template document must be a mapping")
    top_line = doc.get("__line__")
    name = doc.get("service")
    if not isinstance(name, str) or not name:
        problems.append(Violation("schema", "missing or empty 'service'", line=top_line))
    raw_nodes = doc.get("nodes") or []
    raw_rels = doc.get("relationships") or []
    if not isinstance(raw_nodes, list):
        problems.append(Violation("schema", "'nodes' must be a list", line=top_line))
        raw_nodes = []
    if not isinstance(raw_rels, list):
        problems.append(Violation("schema", "'relationships' must be a list", line=top_line))
        raw_rels = []

    nodes, lines = [], {}
    for item in raw_nodes:
        line = item.get("__line__") if isinstance(item, dict) else None
        if not isinstance(item, dict) or "id" not in item:
            problems.append(Violation("schema", "node entry without 'id'", line=line))
            continue
        extra = set(_strip_line(item)) - set(_NODE_KEYS)
        if extra:
            problems.append(Violation("schema", f"unknown node keys {sorted(extra)}",
                                      node=str(item["id"]), line=line))
        props = _strip_line(item.get("properties") or {})
        try:
            node = NodeTemplate(
                id=str(item["id"]),
                kind=str(item.get("kind", VNF)),
                deployment=str(item.get("deployment", "container")),
                vnf_type=str(item.get("vnf_type", "")),
                cpu=int(item.get("cpu", 0)),
                memory_mib=int(item.get("memory_mib", 0)),
                properties={str(k): str(v) for k, v in props.items()},
            )
        except (TypeError, ValueError) as exc:
            problems.append(Violation("schema", f"bad node field: {exc}",
                                      node=str(item["id"]), line=line))
            continue
        nodes.append(node)
        lines.setdefault(node.id, line)

    rels = []
    for item in raw_rels:
        line = item.get("__line__") if isinstance(item, dict) else None
        if not isinstance(item, dict) or "source" not in item or "target" not in item:
            problems.append(Violation("schema", "relationship needs 'source' and 'target'",
                                      line=line))
            continue
        rel = Relationship(str(item["source"]), str(item["target"]),
                           str(item.get("kind", CONNECTS_TO)))
        rels.append(rel)
        lines.setdefault(f"{rel.source}->{rel.target}", line)

    if problems:
        raise TemplateError(problems)
    template = ServiceTemplate(name, tuple(nodes), tuple(rels))
    problems = validate(template)
    if problems:
        raise TemplateError([Violation(v.code, v.message, v.node, v.line or lines.get(v.node))
                             for v in problems])
    return template


def parse(text):
    """Parse a template document (YAML text) into a validated ServiceTemplate."""
    return template_from_mapping(load_document(text))


def to_mapping(t):
    return {
        "service": t.name,
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind,
                "deployment": n.deployment,
                "vnf_type": n.vnf_type,
                "cpu": n.cpu,
                "memory_mib": n.memory_mib,
                "properties": dict(sorted(n.properties.items())),
            }
            for n in t.nodes
        ],
        "relationships": [
            {"source": r.source, "target": r.target, "kind": r.kind} for r in t.relationships
        ],
    }


def dump_yaml(obj):
    return yaml.safe_dump(obj, sort_keys=False, default_flow_style=False, allow_unicode=True)


def serialize(t):
    """Canonical document text for ``t``; ``parse(serialize(t)) == t``."""
    return dump_yaml(to_mapping(t))


def validate(t):
    """Return every invariant violation in ``t`` (an empty list means valid)."""
    out = []
    seen = {}
    for n in t.nodes:
        if n.id in seen:
            out.append(Violation("duplicate-id", f"duplicate node id {n.id!r}", node=n.id))
        seen.setdefault(n.id, n)
        if n.kind not in NODE_KINDS:
            out.append(Violation("schema", f"node {n.id!r}: unknown kind {n.kind!r}", node=n.id))
        elif n.kind == VNF and n.deployment not in ("container", "vm"):
            out.append(Violation("deployment",
                                 f"Vnf node {n.id!r} needs deployment container or vm, "
                                 f"got {n.deployment!r}", node=n.id))
        elif n.kind != VNF and n.deployment != "none":
            out.append(Violation("deployment",
                                 f"{n.kind} node {n.id!r} must have deployment none, "
                                 f"got {n.deployment!r}", node=n.id))
        if n.cpu < 0 or n.memory_mib < 0:
            out.append(Violation("schema", f"node {n.id!r}: negative resources", node=n.id))

    incoming = {}
    for r in t.relationships:
        key = f"{r.source}->{r.target}"
        if r.kind != CONNECTS_TO:
            out.append(Violation("schema", f"unknown relationship kind {r.kind!r}", node=key))
        if r.source == r.target:
            out.append(Violation("self-loop", f"relationship {r.source}->{r.target} is a self-loop",
                                 node=key))
        for end in (r.source, r.target):
            if end not in seen:
                out.append(Violation("dangling",
                                     f"relationship {r.source}->{r.target} names unknown node "
                                     f"{end!r}", node=key))
        src = seen.get(r.source)
        if src is not None and src.kind != VNF:
            out.append(Violation("schema", f"{src.kind} node {src.id!r} cannot be a source",
                                 node=key))
        incoming.setdefault(r.target, []).append(r.source)

    for n in t.nodes:
        if n.kind == VNF_RECORD and len(incoming.get(n.id, ())) != 1:
            out.append(Violation("schema",
                                 f"VnfRecord {n.id!r} must be attached to exactly one Vnf",
                                 node=n.id))

    g = nx.DiGraph()
    g.add_edges_from((r.source, r.target) for r in t.relationships if r.source != r.target)
    try:
        cycle = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        path = " -> ".join([u for u, _ in cycle] + [cycle[0][0]])
        out.append(Violation("cycle", f"relationship cycle {path}"))
    return out


def dependency_graph(t):
    """Edges point from prerequisite to dependent.

    A connects-to target is a prerequisite of its source, except that a
    VnfRecord waits for the Vnf attached to it.
    """
    kinds = {n.id: n.kind for n in t.nodes}
    g = nx.DiGraph()
    g.add_nodes_from(kinds)
    for r in t.relationships:
        if kinds.get(r.target) == VNF_RECORD:
            g.add_edge(r.source, r.target)
        else:
            g.add_edge(r.target, r.source)
    return g


def lifecycle_order(t):
    """Topological deployment order, ties broken by node id."""
    g = dependency_graph(t)
    try:
        return list(nx.lexicographical_topological_sort(g))
    except nx.NetworkXUnfeasible:
        cycle = nx.find_cycle(g)
        path = " -> ".join([u for u, _ in cycle] + [cycle[0][0]])
        raise TemplateError([Violation("cycle", f"dependency cycle {path}")]) from None
