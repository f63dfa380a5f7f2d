"""Twin configuration documents: parsing, validation, diffing and variants.

A configuration is a recursive tree. Each level carries four sections plus
nested children:

* ``c_a``  -- asset composition and wiring (data, models, function/tool
  pairs, an optional ready-to-run twin, child references, connections,
  parameters)
* ``c_i``  -- infrastructure demands (workspace flavour, cpu, memory, tick)
* ``c_e``  -- external integration endpoints
* ``c_pt`` -- channels and connector to the physical counterpart

The on-disk format is a YAML document validated against the JSON schema
shipped in ``schema/twin-config.schema.json``.  Unknown keys are rejected.

Validation never raises for content problems; it returns a
:class:`ValidationReport` whose diagnostics carry stable rule ids:

========== ======== =====================================================
GRAMMAR-01 error    composition grammar violated
DEP-01     error    model/data output consumed by a non-function/tool
REF-01     error    referenced asset id not found in the registry
REF-02     error    referenced asset has the wrong kind
REF-03     error    child reference does not match exactly one child doc
REF-04     warning  child doc present but never referenced
TREE-01    error    configuration name repeats along a root-to-leaf path
CONN-01    error    connection endpoint unknown or malformed
PORT-01    error    port missing on asset / wrong direction or role
INFRA-01   error    non-positive infrastructure resources
EXT-01     error    duplicate external endpoint names
PT-01      error    duplicate channel names
PT-02      error    command channel without any sensor channel
PT-03      warning  empty physical-twin section (pure simulation)
PT-04      error    channel missing its series key / command target
NAME-01    error    empty configuration name
========== ======== =====================================================
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Optional

import jsonschema
import yaml

from .errors import BadRequestError, ParseError, UnknownPathError
from .registry import AssetKind

VARIANT_SEP = "~"

_SCHEMA = json.loads(
    resources.files("twindesk").joinpath("schema/twin-config.schema.json").read_text()
)
_VALIDATOR = jsonschema.Draft202012Validator(_SCHEMA)

FLAVOURS = ("IsolatedProcess", "SharedPool", "Dedicated")
CHANNEL_ROLES = ("sensor", "actuator", "event", "command")

# Channel roles that act as producers / consumers in a connection.
_PRODUCER_ROLES = ("sensor", "event")
_CONSUMER_ROLES = ("actuator", "command")


# ---------------------------------------------------------------------------
# Document model
# ---------------------------------------------------------------------------

@dataclass
class FTPair:
    """Function/tool pairing; an entry with only one side is a dangling asset."""

    function: Optional[str] = None
    tool: Optional[str] = None

    @property
    def complete(self) -> bool:
        return self.function is not None and self.tool is not None


@dataclass
class CompositionSpec:
    data_refs: list[str] = field(default_factory=list)
    model_refs: list[str] = field(default_factory=list)
    ft_pairs: list[FTPair] = field(default_factory=list)
    ready_dt_ref: Optional[str] = None
    child_dt_refs: list[str] = field(default_factory=list)
    connections: list[str] = field(default_factory=list)
    parameters: dict[str, Any] = field(default_factory=dict)

    def asset_ref_pairs(self) -> list[tuple[str, AssetKind]]:
        """Each reference occurrence with the kind its position implies."""
        pairs: list[tuple[str, AssetKind]] = []
        pairs += [(r, AssetKind.DATA) for r in self.data_refs]
        pairs += [(r, AssetKind.MODEL) for r in self.model_refs]
        for p in self.ft_pairs:
            if p.function is not None:
                pairs.append((p.function, AssetKind.FUNCTION))
            if p.tool is not None:
                pairs.append((p.tool, AssetKind.TOOL))
        if self.ready_dt_ref is not None:
            pairs.append((self.ready_dt_ref, AssetKind.READY_DT))
        return pairs

    def asset_refs(self) -> dict[str, AssetKind]:
        """Every asset id referenced at this level (last role wins on reuse)."""
        return dict(self.asset_ref_pairs())


@dataclass
class InfraSpec:
    workspace_flavour: str = "IsolatedProcess"
    cpu_units: int = 1
    memory_mb: int = 128
    tick_ms: int = 100


@dataclass
class Endpoint:
    name: str
    url: str
    direction: str = "out"


@dataclass
class ExternalSpec:
    endpoints: list[Endpoint] = field(default_factory=list)


@dataclass
class Channel:
    name: str
    role: str
    series: Optional[str] = None
    target: Optional[str] = None


@dataclass
class PTSpec:
    channels: list[Channel] = field(default_factory=list)
    endpoint: Optional[str] = None

    @property
    def empty(self) -> bool:
        return not self.channels and self.endpoint is None


@dataclass
class ConfigDoc:
    name: str
    c_a: CompositionSpec = field(default_factory=CompositionSpec)
    c_i: InfraSpec = field(default_factory=InfraSpec)
    c_e: ExternalSpec = field(default_factory=ExternalSpec)
    c_pt: PTSpec = field(default_factory=PTSpec)
    children: list["ConfigDoc"] = field(default_factory=list)

    # -- canonical dict form (matches the file format) -----------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "c_a": {
                "data": list(self.c_a.data_refs),
                "models": list(self.c_a.model_refs),
                "ft_pairs": [
                    {"function": p.function, "tool": p.tool} for p in self.c_a.ft_pairs
                ],
                "ready_dt": self.c_a.ready_dt_ref,
                "child_dts": list(self.c_a.child_dt_refs),
                "connections": list(self.c_a.connections),
                "parameters": dict(self.c_a.parameters),
            },
            "c_i": {
                "workspace_flavour": self.c_i.workspace_flavour,
                "cpu_units": self.c_i.cpu_units,
                "memory_mb": self.c_i.memory_mb,
                "tick_ms": self.c_i.tick_ms,
            },
            "c_e": {
                "endpoints": [
                    {"name": e.name, "url": e.url, "direction": e.direction}
                    for e in self.c_e.endpoints
                ]
            },
            "c_pt": {
                "endpoint": self.c_pt.endpoint,
                "channels": [
                    {k: v for k, v in (
                        ("name", ch.name), ("role", ch.role),
                        ("series", ch.series), ("target", ch.target),
                    ) if v is not None}
                    for ch in self.c_pt.channels
                ],
            },
            "children": [c.to_dict() for c in self.children],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConfigDoc":
        ca = d.get("c_a") or {}
        ci = d.get("c_i") or {}
        ce = d.get("c_e") or {}
        cpt = d.get("c_pt") or {}
        return cls(
            name=d.get("name", ""),
            c_a=CompositionSpec(
                data_refs=list(ca.get("data") or []),
                model_refs=list(ca.get("models") or []),
                ft_pairs=[
                    FTPair(function=p.get("function"), tool=p.get("tool"))
                    for p in (ca.get("ft_pairs") or [])
                ],
                ready_dt_ref=ca.get("ready_dt"),
                child_dt_refs=list(ca.get("child_dts") or []),
                connections=list(ca.get("connections") or []),
                parameters=dict(ca.get("parameters") or {}),
            ),
            c_i=InfraSpec(
                workspace_flavour=ci.get("workspace_flavour", "IsolatedProcess"),
                cpu_units=ci.get("cpu_units", 1),
                memory_mb=ci.get("memory_mb", 128),
                tick_ms=ci.get("tick_ms", 100),
            ),
            c_e=ExternalSpec(
                endpoints=[
                    Endpoint(name=e["name"], url=e.get("url", ""),
                             direction=e.get("direction", "out"))
                    for e in (ce.get("endpoints") or [])
                ]
            ),
            c_pt=PTSpec(
                channels=[
                    Channel(name=c["name"], role=c["role"],
                            series=c.get("series"), target=c.get("target"))
                    for c in (cpt.get("channels") or [])
                ],
                endpoint=cpt.get("endpoint"),
            ),
            children=[cls.from_dict(c) for c in d.get("children") or []],
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConfigDoc):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def copy(self) -> "ConfigDoc":
        return ConfigDoc.from_dict(copy.deepcopy(self.to_dict()))


def base_name(name: str) -> str:
    """Configuration name with any variant tag stripped."""
    return name.split(VARIANT_SEP, 1)[0]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def parse_config_dict(data: Any) -> ConfigDoc:
    """Validate an already-parsed mapping against the schema and build a doc."""
    if not isinstance(data, dict):
        raise ParseError("configuration document must be a mapping")
    errors = sorted(_VALIDATOR.iter_errors(data), key=lambda e: str(e.json_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ParseError(f"{err.json_path}: {err.message}", path=err.json_path)
    return ConfigDoc.from_dict(data)


def parse_config(text: str) -> ConfigDoc:
    """Parse a YAML configuration document.

    Syntax errors carry the line and column reported by the YAML parser;
    schema violations carry the offending path.
    """
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ParseError(f"syntax error: {exc.problem or exc}", line=line, column=col) from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"syntax error: {exc}") from exc
    return parse_config_dict(data)


def dump_config(doc: ConfigDoc) -> str:
    return yaml.safe_dump(doc.to_dict(), sort_keys=False)


_CONNECTION_RE = re.compile(r"^\s*(?P<pref>.+)\.(?P<pport>[^.\s]+)\s*->\s*(?P<cref>.+)\.(?P<cport>[^.\s]+)\s*$")


def parse_connection(text: str) -> tuple[tuple[str, str], tuple[str, str]]:
    """Split ``"a.p -> b.q"`` into ((a, p), (b, q))."""
    m = _CONNECTION_RE.match(text)
    if not m:
        raise BadRequestError(f"malformed connection {text!r}")
    return ((m.group("pref").strip(), m.group("pport")),
            (m.group("cref").strip(), m.group("cport")))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class Diagnostic:
    severity: str  # "error" | "warning"
    rule: str
    message: str
    path: str

    def to_dict(self) -> dict:
        return {"severity": self.severity, "rule": self.rule,
                "message": self.message, "path": self.path}


@dataclass
class ValidationReport:
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not any(d.severity == "error" for d in self.diagnostics)

    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "error"]

    def rules(self) -> set[str]:
        return {d.rule for d in self.diagnostics}

    def to_dict(self) -> dict:
        return {"valid": self.valid,
                "diagnostics": [d.to_dict() for d in self.diagnostics]}


@dataclass(frozen=True)
class GrammarCounts:
    """Asset multiset of one composition level, as the grammar sees it."""

    data: int = 0
    models: int = 0
    pairs: int = 0       # complete function/tool pairs
    dangling: int = 0    # pair entries missing one side
    ready: int = 0
    children: int = 0

    @classmethod
    def of(cls, c_a: CompositionSpec) -> "GrammarCounts":
        return cls(
            data=len(c_a.data_refs),
            models=len(c_a.model_refs),
            pairs=sum(1 for p in c_a.ft_pairs if p.complete),
            dangling=sum(1 for p in c_a.ft_pairs if not p.complete),
            ready=1 if c_a.ready_dt_ref is not None else 0,
            children=len(c_a.child_dt_refs),
        )


def grammar_accepts(counts: GrammarCounts) -> bool:
    """Composition grammar over one level's asset multiset.

    Accepted forms:

    * any data and models together with one or more complete function/tool
      pairs, and nothing else;
    * one or more child twins together with any elementary assets (data,
      models, paired or unpaired functions/tools);
    * a single ready-to-run twin standing alone.
    """
    if counts.ready:
        return counts.ready == 1 and not (counts.data or counts.models or counts.pairs
                                          or counts.dangling or counts.children)
    if counts.children >= 1:
        return True
    return counts.pairs >= 1 and counts.dangling == 0


def validate_config(doc: ConfigDoc, registry=None) -> ValidationReport:
    """Check a configuration tree and return a full diagnostic report.

    ``registry`` may be None, in which case reference resolution, kind
    matching, asset-port checks and the dependency rule are skipped (the
    structural and grammar rules still run).  The function is pure: equal
    inputs produce identical reports.
    """
    report = ValidationReport()
    _validate_level(doc, registry, "", (), report)
    return report


def _diag(report: ValidationReport, severity: str, rule: str, message: str, path: str) -> None:
    report.diagnostics.append(Diagnostic(severity, rule, message, path))


def _validate_level(doc: ConfigDoc, registry, path: str, ancestors: tuple[str, ...],
                    report: ValidationReport) -> None:
    here = path or "."

    if not doc.name or not doc.name.strip():
        _diag(report, "error", "NAME-01", "configuration name is empty", here)
    if doc.name in ancestors:
        _diag(report, "error", "TREE-01",
              f"configuration name {doc.name!r} repeats along the path", here)

    counts = GrammarCounts.of(doc.c_a)
    if not grammar_accepts(counts):
        _diag(report, "error", "GRAMMAR-01",
              "composition grammar violated: need a complete function/tool pair, "
              "a child twin, or a lone ready twin "
              f"(data={counts.data} models={counts.models} pairs={counts.pairs} "
              f"dangling={counts.dangling} ready={counts.ready} children={counts.children})",
              _join(path, "c_a"))

    # Reference resolution and kind matching: every occurrence is checked
    # against the kind its position implies, so one asset id listed in two
    # roles is flagged for the role it does not satisfy.
    kinds: dict[str, AssetKind] = {}
    if registry is not None:
        missing: set[str] = set()
        for ref, expected in doc.c_a.asset_ref_pairs():
            rec = registry.try_get(ref)
            if rec is None:
                if ref not in missing:
                    missing.add(ref)
                    _diag(report, "error", "REF-01", f"asset {ref!r} not found",
                          _join(path, "c_a"))
            else:
                kinds[ref] = rec.kind
                if rec.kind != expected:
                    _diag(report, "error", "REF-02",
                          f"asset {ref!r} is {rec.kind.value}, expected {expected.value}",
                          _join(path, "c_a"))

    # Child references must match the nested documents one-to-one.
    child_names = [c.name for c in doc.children]
    for ref in doc.c_a.child_dt_refs:
        if child_names.count(ref) != 1:
            _diag(report, "error", "REF-03",
                  f"child reference {ref!r} matches {child_names.count(ref)} nested "
                  "documents (expected exactly 1)", _join(path, "c_a.child_dts"))
    for i, name in enumerate(child_names):
        if name not in doc.c_a.child_dt_refs:
            _diag(report, "warning", "REF-04",
                  f"nested document {name!r} is never referenced in child_dts",
                  _join(path, f"children.{i}"))

    _validate_infra(doc.c_i, _join(path, "c_i"), report)
    _validate_external(doc.c_e, _join(path, "c_e"), report)
    _validate_pt(doc.c_pt, _join(path, "c_pt"), report)
    _validate_connections(doc, registry, kinds, path, report)

    for i, child in enumerate(doc.children):
        _validate_level(child, registry, _join(path, f"children.{i}"),
                        ancestors + (doc.name,), report)


def _validate_infra(c_i: InfraSpec, path: str, report: ValidationReport) -> None:
    if c_i.workspace_flavour not in FLAVOURS:
        _diag(report, "error", "INFRA-01",
              f"unknown workspace flavour {c_i.workspace_flavour!r}", path)
    for fld in ("cpu_units", "memory_mb", "tick_ms"):
        val = getattr(c_i, fld)
        if not isinstance(val, int) or val <= 0:
            _diag(report, "error", "INFRA-01", f"{fld} must be a positive integer", path)


def _validate_external(c_e: ExternalSpec, path: str, report: ValidationReport) -> None:
    seen: set[str] = set()
    for e in c_e.endpoints:
        if e.name in seen:
            _diag(report, "error", "EXT-01", f"duplicate endpoint name {e.name!r}", path)
        seen.add(e.name)


def _validate_pt(c_pt: PTSpec, path: str, report: ValidationReport) -> None:
    if c_pt.empty:
        _diag(report, "warning", "PT-03",
              "no physical-twin section: twin runs as pure simulation", path)
        return
    seen: set[str] = set()
    roles: set[str] = set()
    for ch in c_pt.channels:
        if ch.name in seen:
            _diag(report, "error", "PT-01", f"duplicate channel name {ch.name!r}", path)
        seen.add(ch.name)
        roles.add(ch.role)
        if ch.role in _PRODUCER_ROLES and not ch.series:
            _diag(report, "error", "PT-04",
                  f"channel {ch.name!r} ({ch.role}) needs a series key", path)
        if ch.role in _CONSUMER_ROLES and not ch.target:
            _diag(report, "error", "PT-04",
                  f"channel {ch.name!r} ({ch.role}) needs a command target", path)
    if "command" in roles and "sensor" not in roles:
        _diag(report, "error", "PT-02",
              "command channel present but no sensor channel provides feedback", path)


def _validate_connections(doc: ConfigDoc, registry, kinds: dict[str, AssetKind],
                          path: str, report: ValidationReport) -> None:
    refs = doc.c_a.asset_refs()
    channels = {ch.name: ch for ch in doc.c_pt.channels}
    for i, conn in enumerate(doc.c_a.connections):
        cpath = _join(path, f"c_a.connections.{i}")
        try:
            (pref, pport), (cref, cport) = parse_connection(conn)
        except BadRequestError:
            _diag(report, "error", "CONN-01", f"malformed connection {conn!r}", cpath)
            continue
        p_ok = _check_endpoint(pref, pport, "out", refs, channels, registry, report, cpath)
        c_ok = _check_endpoint(cref, cport, "in", refs, channels, registry, report, cpath)
        if not (p_ok and c_ok):
            continue
        # Dependency rule: model/data outputs may only feed functions or tools.
        if registry is not None and pref in kinds:
            if kinds[pref] in (AssetKind.MODEL, AssetKind.DATA):
                consumer_kind = kinds.get(cref)
                if consumer_kind not in (AssetKind.FUNCTION, AssetKind.TOOL):
                    what = consumer_kind.value if consumer_kind else "a channel"
                    _diag(report, "error", "DEP-01",
                          f"{kinds[pref].value} output {pref}.{pport} consumed by "
                          f"{what}; only functions or tools may use models/data", cpath)


def _check_endpoint(ref: str, port: str, want: str, refs: dict,
                    channels: dict, registry, report: ValidationReport,
                    cpath: str) -> bool:
    """One side of a connection: ``want`` is "out" for producers, "in" for consumers."""
    if ref in channels:
        ch = channels[ref]
        if port != want:
            _diag(report, "error", "PORT-01",
                  f"channel endpoint {ref}.{port} must use port {want!r}", cpath)
            return False
        role_ok = ch.role in (_PRODUCER_ROLES if want == "out" else _CONSUMER_ROLES)
        if not role_ok:
            _diag(report, "error", "PORT-01",
                  f"channel {ref!r} has role {ch.role}; cannot act as "
                  f"{'producer' if want == 'out' else 'consumer'}", cpath)
            return False
        return True
    if ref not in refs:
        _diag(report, "error", "CONN-01",
              f"connection endpoint {ref!r} is neither a referenced asset nor a channel",
              cpath)
        return False
    if registry is None:
        return True
    rec = registry.try_get(ref)
    if rec is None:
        return False  # REF-01 already reported
    port_rec = next((p for p in rec.ports if p.name == port), None)
    if port_rec is None or port_rec.direction != want:
        _diag(report, "error", "PORT-01",
              f"asset {ref!r} has no {want}-port named {port!r}", cpath)
        return False
    return True


def _join(path: str, seg: str) -> str:
    return f"{path}.{seg}" if path else seg


# ---------------------------------------------------------------------------
# Depth, diff, variants
# ---------------------------------------------------------------------------

def depth(doc: ConfigDoc) -> int:
    """Nesting level: 0 for a leaf, 1 + deepest child otherwise."""
    if not doc.children:
        return 0
    return 1 + max(depth(c) for c in doc.children)


class _Absent:
    """Marks a key that exists on only one side of a diff."""

    def __repr__(self) -> str:
        return "ABSENT"


ABSENT = _Absent()


@dataclass
class Change:
    path: str
    old: Any
    new: Any

    def to_dict(self) -> dict:
        enc = lambda v: {"$absent": True} if v is ABSENT else v
        return {"path": self.path, "old": enc(self.old), "new": enc(self.new)}

    @classmethod
    def from_dict(cls, d: dict) -> "Change":
        dec = lambda v: ABSENT if isinstance(v, dict) and v.get("$absent") else v
        return cls(path=d["path"], old=dec(d["old"]), new=dec(d["new"]))


def diff_config(old: ConfigDoc, new: ConfigDoc) -> list[Change]:
    """Minimal field-level change list such that ``apply_changes(old, cs) == new``.

    The root name is identity, not content: both documents must share the same
    base name (variant tags are ignored) and no change entry is emitted for it.
    """
    if base_name(old.name) != base_name(new.name):
        raise BadRequestError(
            f"root name mismatch: {old.name!r} vs {new.name!r}")
    changes: list[Change] = []
    od, nd = old.to_dict(), new.to_dict()
    od.pop("name"), nd.pop("name")
    _diff_value(od, nd, "", changes)
    return changes


def _diff_value(old: Any, new: Any, path: str, out: list[Change]) -> None:
    if isinstance(old, dict) and isinstance(new, dict):
        for key in sorted(set(old) | set(new)):
            sub = _join(path, key)
            if key not in old:
                out.append(Change(sub, ABSENT, new[key]))
            elif key not in new:
                out.append(Change(sub, old[key], ABSENT))
            else:
                _diff_value(old[key], new[key], sub, out)
    elif isinstance(old, list) and isinstance(new, list):
        if len(old) != len(new):
            if old != new:
                out.append(Change(path, old, new))
        else:
            for i, (o, n) in enumerate(zip(old, new)):
                _diff_value(o, n, _join(path, str(i)), out)
    else:
        if old != new:
            out.append(Change(path, old, new))


def _navigate(container: Any, segments: list[str], path: str) -> tuple[Any, Any]:
    """Walk to the parent of the final segment; returns (parent, final key/index)."""
    cur = container
    for seg in segments[:-1]:
        cur = _step(cur, seg, path)
    last = segments[-1]
    if isinstance(cur, list):
        try:
            idx = int(last)
        except ValueError:
            raise UnknownPathError(f"path {path!r}: {last!r} is not a list index")
        if not -len(cur) <= idx < len(cur):
            raise UnknownPathError(f"path {path!r}: index {idx} out of range")
        return cur, idx
    if not isinstance(cur, dict):
        raise UnknownPathError(f"path {path!r}: cannot descend into scalar")
    return cur, last


def _step(cur: Any, seg: str, path: str) -> Any:
    if isinstance(cur, list):
        try:
            idx = int(seg)
        except ValueError:
            raise UnknownPathError(f"path {path!r}: {seg!r} is not a list index")
        if not -len(cur) <= idx < len(cur):
            raise UnknownPathError(f"path {path!r}: index {idx} out of range")
        return cur[idx]
    if isinstance(cur, dict):
        if seg not in cur:
            raise UnknownPathError(f"path {path!r}: no key {seg!r}")
        return cur[seg]
    raise UnknownPathError(f"path {path!r}: cannot descend into scalar")


def apply_changes(doc: ConfigDoc, changes: list[Change]) -> ConfigDoc:
    """Apply a change list produced by :func:`diff_config`."""
    data = doc.to_dict()
    for ch in changes:
        segments = ch.path.split(".")
        parent, key = _navigate(data, segments, ch.path)
        if ch.new is ABSENT:
            if isinstance(parent, dict) and key not in parent:
                raise UnknownPathError(f"path {ch.path!r}: no key {key!r}")
            del parent[key]
        elif ch.old is ABSENT and isinstance(parent, dict):
            parent[key] = copy.deepcopy(ch.new)
        else:
            if isinstance(parent, dict) and key not in parent:
                raise UnknownPathError(f"path {ch.path!r}: no key {key!r}")
            parent[key] = copy.deepcopy(ch.new)
    return ConfigDoc.from_dict(data)


def derive_variant(base: ConfigDoc, overrides: dict[str, Any],
                   tag: Optional[str] = None) -> ConfigDoc:
    """Fresh document differing from ``base`` exactly at the override paths.

    Every path must already exist in the base document.  The variant's name is
    the base name plus a ``~tag`` suffix (a short deterministic hash of the
    overrides when no tag is given).
    """
    data = base.to_dict()
    for path, value in sorted(overrides.items()):
        segments = path.split(".")
        parent, key = _navigate(data, segments, path)
        if isinstance(parent, dict) and key not in parent:
            raise UnknownPathError(f"override path {path!r} does not exist")
        parent[key] = copy.deepcopy(value)
    if tag is None:
        digest = hashlib.sha1(
            json.dumps({k: overrides[k] for k in sorted(overrides)},
                       sort_keys=True, default=str).encode()
        ).hexdigest()[:6]
        tag = digest
    data["name"] = f"{base_name(base.name)}{VARIANT_SEP}{tag}"
    return ConfigDoc.from_dict(data)
