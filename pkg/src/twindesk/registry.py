"""Asset registry: stores, indexes and shares the reusable building blocks
twins are composed from.

Records are indexed in memory and persisted through an append-only metadata
log (``store/registry.log``, one JSON line per mutation) replayed at startup.
Asset content lives as opaque files under ``store/<owner>/<asset-id>/``; a
shared asset additionally gets a copy under ``store/common/<asset-id>/``.
"""

from __future__ import annotations

import json
import shutil
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional

from .errors import BadRequestError, ConflictError, ForbiddenError, InUseError, NotFoundError
from .util import now_ms, slugify

LOG_NAME = "registry.log"
LOG_HEADER = '{"format": "asset-registry-log", "version": 1}'
CONTENT_FILE = "content"


class AssetKind(str, Enum):
    DATA = "Data"
    MODEL = "Model"
    FUNCTION = "Function"
    TOOL = "Tool"
    READY_DT = "ReadyDT"


class Visibility(str, Enum):
    PRIVATE = "Private"
    SHARED = "Shared"


@dataclass
class Port:
    """Named endpoint on an asset: direction in|out, payload data|command|event."""

    name: str
    direction: str
    payload: str = "data"

    def to_dict(self) -> dict:
        return {"name": self.name, "direction": self.direction, "payload": self.payload}

    @classmethod
    def from_dict(cls, d: dict) -> "Port":
        return cls(name=d["name"], direction=d["direction"], payload=d.get("payload", "data"))


@dataclass
class AssetRecord:
    id: str
    kind: AssetKind
    name: str
    owner: str
    visibility: Visibility = Visibility.PRIVATE
    version: int = 1
    content_ref: str = ""
    ports: list[Port] = field(default_factory=list)
    params: dict[str, object] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "name": self.name,
            "owner": self.owner,
            "visibility": self.visibility.value,
            "version": self.version,
            "content_ref": self.content_ref,
            "ports": [p.to_dict() for p in self.ports],
            "params": dict(self.params),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AssetRecord":
        return cls(
            id=d["id"],
            kind=AssetKind(d["kind"]),
            name=d["name"],
            owner=d["owner"],
            visibility=Visibility(d["visibility"]),
            version=d["version"],
            content_ref=d.get("content_ref", ""),
            ports=[Port.from_dict(p) for p in d.get("ports", [])],
            params=dict(d.get("params", {})),
            metadata=dict(d.get("metadata", {})),
        )


@dataclass
class AssetQuery:
    """All fields optional; an empty query matches every visible asset."""

    kind: Optional[AssetKind] = None
    owner: Optional[str] = None
    visibility: Optional[Visibility] = None
    text: Optional[str] = None

    def matches(self, rec: AssetRecord) -> bool:
        if self.kind is not None and rec.kind != self.kind:
            return False
        if self.owner is not None and rec.owner != self.owner:
            return False
        if self.visibility is not None and rec.visibility != self.visibility:
            return False
        if self.text is not None:
            hay = rec.name + " " + " ".join(f"{k} {v}" for k, v in sorted(rec.metadata.items()))
            if self.text.lower() not in hay.lower():
                return False
        return True


_UPDATABLE = {"name", "visibility", "ports", "params", "metadata"}


class AssetRegistry:
    """File-backed asset catalog.

    Reads are lock-free against the live index; every mutation is serialized
    through a single writer lock and appended to the metadata log before the
    in-memory index changes become visible.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._records: dict[str, AssetRecord] = {}
        self._write_lock = threading.Lock()
        self._reference_checker: Optional[Callable[[str], bool]] = None
        self._usage_hook: Optional[Callable[[str, int], None]] = None
        self._log_path = self.root / LOG_NAME
        self._replay_log()

    # -- wiring -------------------------------------------------------------

    def set_reference_checker(self, fn: Callable[[str], bool]) -> None:
        """``fn(asset_id) -> True`` when a non-terminated instance uses the asset."""
        self._reference_checker = fn

    def set_usage_hook(self, fn: Callable[[str, int], None]) -> None:
        """``fn(user, nbytes)`` called when stored content grows."""
        self._usage_hook = fn

    # -- persistence --------------------------------------------------------

    def _replay_log(self) -> None:
        if not self._log_path.exists():
            self._log_path.write_text(LOG_HEADER + "\n", encoding="utf-8")
            return
        with self._log_path.open(encoding="utf-8") as fh:
            first = fh.readline()
            if first.strip() and json.loads(first).get("format") != "asset-registry-log":
                raise BadRequestError(f"{self._log_path} is not a registry log")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                op = entry["op"]
                if op in ("register", "update", "share"):
                    rec = AssetRecord.from_dict(entry["record"])
                    self._records[rec.id] = rec
                elif op == "delete":
                    self._records.pop(entry["id"], None)

    def _append_log(self, op: str, **payload) -> None:
        entry = {"op": op, "ts": now_ms(), **payload}
        with self._log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()

    def _content_dir(self, rec: AssetRecord) -> Path:
        return self.root / rec.owner / rec.id

    def _common_dir(self, rec: AssetRecord) -> Path:
        return self.root / "common" / rec.id

    def _write_content(self, rec: AssetRecord, content: str) -> None:
        d = self._content_dir(rec)
        d.mkdir(parents=True, exist_ok=True)
        data = content.encode("utf-8")
        (d / CONTENT_FILE).write_bytes(data)
        rec.content_ref = f"{rec.owner}/{rec.id}/{CONTENT_FILE}"
        if rec.visibility == Visibility.SHARED:
            self._sync_common(rec)
        if self._usage_hook:
            self._usage_hook(rec.owner, len(data))

    def _sync_common(self, rec: AssetRecord) -> None:
        src = self._content_dir(rec)
        if src.exists():
            dst = self._common_dir(rec)
            if dst.exists():
                shutil.rmtree(dst)
            shutil.copytree(src, dst)

    # -- validation ---------------------------------------------------------

    @staticmethod
    def _check_invariants(kind: AssetKind, name: str, ports: list[Port],
                          metadata: dict[str, str]) -> None:
        if not name or not name.strip():
            raise BadRequestError("asset name must be nonempty")
        if kind == AssetKind.DATA and not ports:
            raise BadRequestError("Data assets must declare at least one port")
        if kind == AssetKind.TOOL and not metadata.get("executable"):
            raise BadRequestError("Tool assets must declare an 'executable' metadata entry")
        for p in ports:
            if p.direction not in ("in", "out"):
                raise BadRequestError(f"port {p.name!r}: direction must be 'in' or 'out'")
            if p.payload not in ("data", "command", "event"):
                raise BadRequestError(f"port {p.name!r}: payload must be data|command|event")
            if "." in p.name:
                raise BadRequestError(f"port name {p.name!r} must not contain '.'")

    # -- operations ---------------------------------------------------------

    def register_asset(self, caller: str, kind: AssetKind, name: str,
                       ports: Optional[Iterable[Port]] = None,
                       params: Optional[dict] = None,
                       metadata: Optional[dict[str, str]] = None,
                       visibility: Visibility = Visibility.PRIVATE,
                       content: Optional[str] = None) -> AssetRecord:
        ports = list(ports or [])
        params = dict(params or {})
        metadata = dict(metadata or {})
        self._check_invariants(kind, name, ports, metadata)
        with self._write_lock:
            for rec in self._records.values():
                if (rec.owner, rec.name, rec.kind) == (caller, name, kind):
                    raise ConflictError(
                        f"asset {name!r} of kind {kind.value} already registered by {caller}")
            aid = f"ast-{slugify(caller)}-{kind.value.lower()}-{slugify(name)}"
            rec = AssetRecord(id=aid, kind=kind, name=name, owner=caller,
                              visibility=visibility, version=1,
                              ports=ports, params=params, metadata=metadata)
            if content is not None:
                self._write_content(rec, content)
            if visibility == Visibility.SHARED:
                self._sync_common(rec)
            self._append_log("register", record=rec.to_dict())
            self._records[aid] = rec
        return rec

    def get_asset(self, asset_id: str, caller: str) -> AssetRecord:
        rec = self._records.get(asset_id)
        if rec is None:
            raise NotFoundError(f"no asset {asset_id!r}")
        if rec.owner != caller and rec.visibility != Visibility.SHARED:
            raise ForbiddenError(f"asset {asset_id!r} is private to {rec.owner}")
        return rec

    def list_assets(self, query: AssetQuery, caller: str) -> list[AssetRecord]:
        out = [
            rec for rec in self._records.values()
            if (rec.owner == caller or rec.visibility == Visibility.SHARED)
            and query.matches(rec)
        ]
        out.sort(key=lambda r: (r.kind.value, r.name))
        return out

    def update_asset(self, asset_id: str, patch: dict, caller: str,
                     content: Optional[str] = None) -> AssetRecord:
        with self._write_lock:
            rec = self._records.get(asset_id)
            if rec is None:
                raise NotFoundError(f"no asset {asset_id!r}")
            if rec.owner != caller:
                raise ForbiddenError("only the owner may update an asset")
            unknown = set(patch) - _UPDATABLE
            if unknown:
                raise BadRequestError(f"unknown asset fields: {sorted(unknown)}")
            new_name = patch.get("name", rec.name)
            new_ports = [Port.from_dict(p) if isinstance(p, dict) else p
                         for p in patch.get("ports", rec.ports)]
            new_meta = dict(patch.get("metadata", rec.metadata))
            self._check_invariants(rec.kind, new_name, new_ports, new_meta)
            if new_name != rec.name:
                for other in self._records.values():
                    if other.id != rec.id and (other.owner, other.name, other.kind) == (
                            caller, new_name, rec.kind):
                        raise ConflictError(f"asset {new_name!r} already exists for {caller}")
            rec.name = new_name
            rec.ports = new_ports
            rec.metadata = new_meta
            if "params" in patch:
                rec.params = dict(patch["params"])
            if "visibility" in patch:
                rec.visibility = Visibility(patch["visibility"])
            rec.version += 1
            if content is not None:
                self._write_content(rec, content)
            elif rec.visibility == Visibility.SHARED:
                self._sync_common(rec)
            self._append_log("update", record=rec.to_dict())
        return rec

    def delete_asset(self, asset_id: str, caller: str) -> None:
        with self._write_lock:
            rec = self._records.get(asset_id)
            if rec is None:
                raise NotFoundError(f"no asset {asset_id!r}")
            if rec.owner != caller:
                raise ForbiddenError("only the owner may delete an asset")
            if self._reference_checker and self._reference_checker(asset_id):
                raise InUseError(f"asset {asset_id!r} is referenced by a live twin instance")
            self._append_log("delete", id=asset_id)
            del self._records[asset_id]
            for d in (self._content_dir(rec), self._common_dir(rec)):
                if d.exists():
                    shutil.rmtree(d)

    def share_asset(self, asset_id: str, caller: str) -> AssetRecord:
        with self._write_lock:
            rec = self._records.get(asset_id)
            if rec is None:
                raise NotFoundError(f"no asset {asset_id!r}")
            if rec.owner != caller:
                raise ForbiddenError("only the owner may share an asset")
            if rec.visibility == Visibility.SHARED:
                return rec  # idempotent, no version bump
            rec.visibility = Visibility.SHARED
            self._sync_common(rec)
            self._append_log("share", record=rec.to_dict())
        return rec

    # -- helpers used by other modules --------------------------------------

    def try_get(self, asset_id: str) -> Optional[AssetRecord]:
        """Unchecked lookup for validators; returns None when absent."""
        return self._records.get(asset_id)

    def read_content(self, asset_id: str, caller: str) -> bytes:
        rec = self.get_asset(asset_id, caller)
        path = self.root / rec.content_ref if rec.content_ref else None
        if path is None or not path.exists():
            raise NotFoundError(f"asset {asset_id!r} has no stored content")
        return path.read_bytes()
