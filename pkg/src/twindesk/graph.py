"""Property-graph view of a twin configuration.

``map_config`` turns a configuration tree and its assets into an immutable
in-process property graph: one twin node per nesting level, one node per
distinct referenced asset, plus parameter, channel and endpoint nodes.  Edge
labels: ``contains`` (twin -> asset/parameter), ``exposes`` (twin ->
channel/endpoint), ``pairs`` (function -> tool), ``connects`` (wired
producer -> consumer), ``uses`` (function/tool consumer -> model/data
producer) and ``child`` (twin -> nested twin).

Queries are conjunctions of triple patterns with property-equality
constraints, written::

    MATCH (f:Function)-[uses]->(m:Model) WHERE f.name = "calib" RETURN f, m

Evaluation is a deterministic nested-loop join; results are sorted by the
bound node ids.  The grammar ships in ``docs/graph-query.ebnf``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Optional

from .dtconfig import ConfigDoc, base_name, derive_variant, parse_connection
from .errors import BadRequestError, NotFoundError, UnknownPathError
from .registry import AssetKind

NODE_LABELS = ("DT", "Data", "Model", "Function", "Tool", "ReadyDT",
               "Param", "Channel", "Endpoint")
EDGE_LABELS = ("contains", "uses", "pairs", "connects", "child", "exposes")

SERIALIZATION_HEADER = "# twin-graph v1"


@dataclass(frozen=True)
class Node:
    id: str
    label: str
    properties: tuple[tuple[str, Any], ...] = ()

    def prop(self, key: str) -> Any:
        for k, v in self.properties:
            if k == key:
                return v
        return None

    def props_dict(self) -> dict[str, Any]:
        return dict(self.properties)


@dataclass
class TwinGraph:
    nodes: dict[str, Node] = field(default_factory=dict)
    edges: set[tuple[str, str, str]] = field(default_factory=set)  # (src, label, dst)

    def add_node(self, node_id: str, label: str, **props: Any) -> None:
        self.nodes[node_id] = Node(node_id, label, tuple(sorted(props.items())))

    def add_edge(self, src: str, label: str, dst: str) -> None:
        self.edges.add((src, label, dst))

    def nodes_by_label(self, label: str) -> list[Node]:
        return sorted((n for n in self.nodes.values() if n.label == label),
                      key=lambda n: n.id)

    def out_edges(self, src: str, label: Optional[str] = None) -> list[tuple[str, str, str]]:
        return sorted(e for e in self.edges
                      if e[0] == src and (label is None or e[1] == label))

    def in_edges(self, dst: str, label: Optional[str] = None) -> list[tuple[str, str, str]]:
        return sorted(e for e in self.edges
                      if e[2] == dst and (label is None or e[1] == label))

    def canonical(self) -> str:
        """One record per line; equal graphs serialize identically."""
        lines = [SERIALIZATION_HEADER]
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            props = json.dumps(n.props_dict(), sort_keys=True, default=str)
            lines.append(f"node {nid} {n.label} {props}")
        for src, label, dst in sorted(self.edges):
            lines.append(f"edge {src} {label} {dst}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# The representation mapping
# ---------------------------------------------------------------------------

def map_config(doc: ConfigDoc, registry=None) -> TwinGraph:
    """Build the property graph for a configuration tree and its assets.

    With a registry, asset nodes carry the stored name/kind/owner and a
    dangling reference raises ``NotFoundError``; without one, the kind
    implied by the reference's position is used.
    """
    g = TwinGraph()
    _map_level(doc, registry, None, doc.name, g)
    return g


def dt_node_id(path: str) -> str:
    return f"dt:{path}"


def _map_level(doc: ConfigDoc, registry, parent_id: Optional[str],
               path: str, g: TwinGraph) -> None:
    dt_id = dt_node_id(path)
    g.add_node(dt_id, "DT", name=doc.name, tick_ms=doc.c_i.tick_ms,
               flavour=doc.c_i.workspace_flavour)
    if parent_id is not None:
        g.add_edge(parent_id, "child", dt_id)

    ref_kinds: dict[str, AssetKind] = {}
    for ref, implied in doc.c_a.asset_ref_pairs():
        node_id = f"asset:{ref}"
        if registry is not None:
            rec = registry.try_get(ref)
            if rec is None:
                raise NotFoundError(f"dangling asset reference {ref!r}")
            g.add_node(node_id, rec.kind.value, name=rec.name, owner=rec.owner)
            ref_kinds[ref] = rec.kind
        else:
            g.add_node(node_id, implied.value, name=ref)
            ref_kinds[ref] = implied
        g.add_edge(dt_id, "contains", node_id)

    for p in doc.c_a.ft_pairs:
        if p.complete:
            g.add_edge(f"asset:{p.function}", "pairs", f"asset:{p.tool}")

    for name in sorted(doc.c_a.parameters):
        pid = f"param:{path}/{name}"
        g.add_node(pid, "Param", name=name, value=doc.c_a.parameters[name])
        g.add_edge(dt_id, "contains", pid)

    channel_ids = {}
    for ch in doc.c_pt.channels:
        cid = f"chan:{path}/{ch.name}"
        props = {"name": ch.name, "role": ch.role}
        if ch.series:
            props["series"] = ch.series
        if ch.target:
            props["target"] = ch.target
        g.add_node(cid, "Channel", **props)
        g.add_edge(dt_id, "exposes", cid)
        channel_ids[ch.name] = cid

    for ep in doc.c_e.endpoints:
        eid = f"ep:{path}/{ep.name}"
        g.add_node(eid, "Endpoint", name=ep.name, url=ep.url, direction=ep.direction)
        g.add_edge(dt_id, "exposes", eid)

    for conn in doc.c_a.connections:
        try:
            (pref, pport), (cref, cport) = parse_connection(conn)
        except BadRequestError:
            continue  # validator reports malformed connections
        src = channel_ids.get(pref, f"asset:{pref}")
        dst = channel_ids.get(cref, f"asset:{cref}")
        if src not in g.nodes or dst not in g.nodes:
            continue
        g.add_edge(src, "connects", dst)
        # a function/tool consuming a model/data output "uses" it
        ckind = ref_kinds.get(cref)
        pkind = ref_kinds.get(pref)
        if (ckind in (AssetKind.FUNCTION, AssetKind.TOOL)
                and pkind in (AssetKind.MODEL, AssetKind.DATA)):
            g.add_edge(dst, "uses", src)

    for child in doc.children:
        _map_level(child, registry, dt_id, f"{path}/{child.name}", g)


# ---------------------------------------------------------------------------
# Conjunctive pattern queries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pattern:
    src_var: str
    src_label: Optional[str]
    edge_label: str
    dst_var: str
    dst_label: Optional[str]


@dataclass(frozen=True)
class Constraint:
    var: str
    prop: str
    value: Any


@dataclass
class GraphQuery:
    patterns: list[Pattern]
    constraints: list[Constraint] = field(default_factory=list)
    returns: list[str] = field(default_factory=list)


_NODE_RE = re.compile(r"\(\s*(?P<var>[A-Za-z_][A-Za-z0-9_]*)?\s*(?::\s*(?P<label>[A-Za-z]+))?\s*\)")
_PATTERN_RE = re.compile(
    r"(?P<src>\([^)]*\))\s*-\s*\[\s*(?P<edge>[A-Za-z_]+)\s*\]\s*->\s*(?P<dst>\([^)]*\))")
_WHERE_RE = re.compile(
    r"(?P<var>[A-Za-z_][A-Za-z0-9_]*)\.(?P<prop>[A-Za-z_][A-Za-z0-9_]*)\s*=\s*"
    r"(?P<value>\"[^\"]*\"|'[^']*'|-?\d+(?:\.\d+)?|true|false)")


def parse_query(text: str) -> GraphQuery:
    """Parse ``MATCH ... [WHERE ...] [RETURN ...]`` into a GraphQuery."""
    text = text.strip()
    m = re.match(r"(?is)^MATCH\b(?P<match>.*?)(?:\bWHERE\b(?P<where>.*?))?(?:\bRETURN\b(?P<ret>.*))?$",
                 text, re.DOTALL)
    if not m or not m.group("match").strip():
        raise BadRequestError("query must start with a MATCH clause")

    anon = iter(f"_anon{i}" for i in range(100))

    def node_part(chunk: str) -> tuple[str, Optional[str]]:
        nm = _NODE_RE.fullmatch(chunk.strip())
        if not nm:
            raise BadRequestError(f"malformed node pattern {chunk!r}")
        return nm.group("var") or next(anon), nm.group("label")

    patterns = []
    match_text = m.group("match")
    consumed_spans = []
    for pm in _PATTERN_RE.finditer(match_text):
        src_var, src_label = node_part(pm.group("src"))
        dst_var, dst_label = node_part(pm.group("dst"))
        edge = pm.group("edge")
        if edge not in EDGE_LABELS:
            raise BadRequestError(f"unknown edge label {edge!r}")
        patterns.append(Pattern(src_var, src_label, edge, dst_var, dst_label))
        consumed_spans.append(pm.span())
    if not patterns:
        raise BadRequestError("MATCH clause contains no triple pattern")
    leftover = match_text
    for start, end in reversed(consumed_spans):
        leftover = leftover[:start] + leftover[end:]
    if leftover.strip().strip(","):
        raise BadRequestError(f"unparsed MATCH content: {leftover.strip()!r}")

    constraints = []
    if m.group("where"):
        for wm in _WHERE_RE.finditer(m.group("where")):
            raw = wm.group("value")
            if raw[0] in "\"'":
                value: Any = raw[1:-1]
            elif raw in ("true", "false"):
                value = raw == "true"
            elif "." in raw:
                value = float(raw)
            else:
                value = int(raw)
            constraints.append(Constraint(wm.group("var"), wm.group("prop"), value))

    known_vars = {p.src_var for p in patterns} | {p.dst_var for p in patterns}
    for c in constraints:
        if c.var not in known_vars:
            raise BadRequestError(f"WHERE references unbound variable {c.var!r}")

    if m.group("ret"):
        returns = [v.strip() for v in m.group("ret").split(",") if v.strip()]
        for v in returns:
            if v not in known_vars:
                raise BadRequestError(f"RETURN references unbound variable {v!r}")
    else:
        returns = sorted(v for v in known_vars if not v.startswith("_anon"))
    return GraphQuery(patterns=patterns, constraints=constraints, returns=returns)


def run_query(graph: TwinGraph, query: GraphQuery | str) -> list[dict[str, str]]:
    """All satisfying assignments, as rows of variable -> node id.

    Rows are distinct over the returned variables and sorted lexicographically
    by the bound node ids.
    """
    if isinstance(query, str):
        query = parse_query(query)

    def label_ok(node_id: str, label: Optional[str]) -> bool:
        return label is None or graph.nodes[node_id].label == label

    def constraint_ok(binding: dict[str, str]) -> bool:
        for c in query.constraints:
            if c.var in binding and graph.nodes[binding[c.var]].prop(c.prop) != c.value:
                return False
        return True

    edges_by_label: dict[str, list[tuple[str, str, str]]] = {}
    for e in sorted(graph.edges):
        edges_by_label.setdefault(e[1], []).append(e)

    bindings: list[dict[str, str]] = [{}]
    for pat in query.patterns:
        next_bindings = []
        for b in bindings:
            for src, _, dst in edges_by_label.get(pat.edge_label, []):
                if not (label_ok(src, pat.src_label) and label_ok(dst, pat.dst_label)):
                    continue
                if pat.src_var in b and b[pat.src_var] != src:
                    continue
                if pat.dst_var in b and b[pat.dst_var] != dst:
                    continue
                nb = dict(b)
                nb[pat.src_var] = src
                nb[pat.dst_var] = dst
                if constraint_ok(nb):
                    next_bindings.append(nb)
        bindings = next_bindings
        if not bindings:
            return []

    rows = {tuple(b[v] for v in query.returns) for b in bindings}
    return [dict(zip(query.returns, row)) for row in sorted(rows)]


# ---------------------------------------------------------------------------
# Consistency checks
# ---------------------------------------------------------------------------

@dataclass
class ConsistencyQuery:
    id: str
    query: str
    expectation: str  # "must-match" | "must-not-match"
    message: str
    severity: str = "error"


@dataclass
class CheckResult:
    id: str
    passed: bool
    severity: str
    message: str

    def to_dict(self) -> dict:
        return {"id": self.id, "passed": self.passed,
                "severity": self.severity, "message": self.message}


@dataclass
class ConsistencyReport:
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results if r.severity == "error")

    def to_dict(self) -> dict:
        return {"passed": self.passed, "results": [r.to_dict() for r in self.results]}


def _builtin_sensor_feeds_pipeline(graph: TwinGraph) -> CheckResult:
    bad = []
    for node in graph.nodes_by_label("Channel"):
        if node.prop("role") != "sensor":
            continue
        consumers = [dst for _, _, dst in graph.out_edges(node.id, "connects")
                     if graph.nodes[dst].label in ("Function", "Tool")]
        if not consumers:
            bad.append(node.prop("name"))
    if bad:
        return CheckResult("CHAN-01", False, "error",
                           f"sensor channels feed no function or tool: {bad}")
    return CheckResult("CHAN-01", True, "error", "every sensor channel feeds the pipeline")


def _builtin_command_reachable(graph: TwinGraph) -> CheckResult:
    bad = []
    for node in graph.nodes_by_label("Channel"):
        if node.prop("role") != "command":
            continue
        owners = [src for src, _, _ in graph.in_edges(node.id, "exposes")]
        reachable = False
        for owner in owners:
            seen = {owner}
            frontier = [owner]
            while frontier:
                cur = frontier.pop()
                for _, lbl, dst in graph.out_edges(cur):
                    if lbl not in ("contains", "connects"):
                        continue
                    if dst == node.id:
                        reachable = True
                        frontier = []
                        break
                    if dst not in seen:
                        seen.add(dst)
                        frontier.append(dst)
            if reachable:
                break
        if not reachable:
            bad.append(node.prop("name"))
    if bad:
        return CheckResult("CHAN-02", False, "error",
                           f"command channels unreachable from their twin: {bad}")
    return CheckResult("CHAN-02", True, "error", "every command channel is fed by the twin")


def _builtin_no_orphan_sources(graph: TwinGraph) -> CheckResult:
    orphans = []
    for label in ("Model", "Data"):
        for node in graph.nodes_by_label(label):
            used = graph.in_edges(node.id, "uses") or graph.out_edges(node.id, "connects") \
                or graph.in_edges(node.id, "connects")
            if not used:
                orphans.append(node.prop("name"))
    if orphans:
        return CheckResult("ORPH-01", False, "warning",
                           f"model/data assets wired to nothing: {orphans}")
    return CheckResult("ORPH-01", True, "warning", "no orphan model/data assets")


BUILTIN_CHECKS = (_builtin_sensor_feeds_pipeline, _builtin_command_reachable,
                  _builtin_no_orphan_sources)


def check_consistency(graph: TwinGraph,
                      queries: Optional[list[ConsistencyQuery]] = None) -> ConsistencyReport:
    """Run the built-in checks plus any user-supplied consistency queries."""
    report = ConsistencyReport()
    for check in BUILTIN_CHECKS:
        report.results.append(check(graph))
    for cq in queries or []:
        rows = run_query(graph, cq.query)
        matched = bool(rows)
        ok = matched if cq.expectation == "must-match" else not matched
        report.results.append(CheckResult(cq.id, ok, cq.severity, cq.message))
    return report


# ---------------------------------------------------------------------------
# Reconfiguration rules
# ---------------------------------------------------------------------------

_SUBST_RE = re.compile(r"\$\{(?P<var>[A-Za-z_][A-Za-z0-9_]*)\.(?P<prop>[A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass
class ReconfigRule:
    id: str
    trigger_type: str
    transform: list[tuple[str, Any]]          # (config path, value or template)
    source: Optional[str] = None              # restrict to events from PT|DT|User
    guard: Optional[str] = None               # query text; nonempty match fires
    applies_to: Optional[str] = None          # config base name; None = any


class RuleBook:
    """Ordered registry of reconfiguration rules.

    Firing never mutates anything: it only derives a candidate configuration,
    which the caller revalidates and applies (or drops).
    """

    def __init__(self):
        self._rules: list[ReconfigRule] = []

    def register_rule(self, rule: ReconfigRule, reference: ConfigDoc) -> None:
        """Validate transform paths against a reference document, then add."""
        if rule.guard:
            parse_query(rule.guard)  # fail fast on malformed guards
        data = reference.to_dict()
        for path, _ in rule.transform:
            from .dtconfig import _navigate  # shared path walker
            parent, key = _navigate(data, path.split("."), path)
            if isinstance(parent, dict) and key not in parent:
                raise UnknownPathError(f"transform path {path!r} not in configuration "
                                       f"{reference.name!r}")
        self._rules.append(rule)

    @property
    def rules(self) -> list[ReconfigRule]:
        return list(self._rules)

    def fire_rules(self, config: ConfigDoc, event, registry=None) -> Optional[ConfigDoc]:
        """First registered rule whose trigger and guard match produces a
        candidate configuration; returns None when nothing matches."""
        graph = None
        for rule in self._rules:
            if rule.trigger_type != event.type:
                continue
            if rule.source is not None and rule.source != event.source:
                continue
            if rule.applies_to is not None and rule.applies_to != base_name(config.name):
                continue
            binding: dict[str, str] = {}
            if rule.guard:
                if graph is None:
                    graph = map_config(config, registry)
                rows = run_query(graph, rule.guard)
                if not rows:
                    continue
                binding = rows[0]
            overrides = {}
            for path, template in rule.transform:
                overrides[path] = _render(template, binding, graph)
            return derive_variant(config, overrides, tag=rule.id)
        return None


def _render(template: Any, binding: dict[str, str], graph: Optional[TwinGraph]) -> Any:
    """Substitute ``${var.prop}`` references against the guard's first match."""
    if not isinstance(template, str) or "${" not in template:
        return template
    full = _SUBST_RE.fullmatch(template.strip())
    if full:  # a bare reference keeps the property's native type
        return _lookup(full, binding, graph, template)
    return _SUBST_RE.sub(lambda m: str(_lookup(m, binding, graph, template)), template)


def _lookup(m: re.Match, binding: dict[str, str], graph: Optional[TwinGraph],
            template: str) -> Any:
    var, prop = m.group("var"), m.group("prop")
    if graph is None or var not in binding:
        raise BadRequestError(f"template {template!r}: variable {var!r} not bound by guard")
    return graph.nodes[binding[var]].prop(prop)
