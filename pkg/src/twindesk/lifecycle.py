"""Twin instance lifecycle: create, execute, save, restore, analyse, evolve,
terminate.

Phases are ``Created``, ``Executing`` and ``Terminated``; saving, analysing
and evolving are operations available while a phase is held, not phases of
their own.  Allowed transitions:

    Created    --execute-->   Executing
    Created    --evolve-->    Created
    Created    --terminate--> Terminated
    Executing  --save/evolve/analyse--> Executing
    Executing  --terminate--> Terminated
    Terminated --restore-->   Created

Execute, save and terminate propagate through an instance's descendants
(children run/persist/stop with their composer); create, analyse and evolve
leave child phases untouched.  All transitions for one instance tree are
serialized through a per-root lock; status reads take no lock.

Snapshots are written to ``state/<instance-id>/<snapshot-id>.snap`` as a
one-line format header followed by a JSON body embedding the configuration
and the runner state.
"""

from __future__ import annotations

import json
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional
from urllib.parse import parse_qsl

from .datahub import DataHub, SeriesPoint
from .dtconfig import ConfigDoc, base_name, validate_config
from .errors import (
    ConflictError,
    ForbiddenError,
    InvalidTransitionError,
    NoAnalysisPipelineError,
    NotFoundError,
    UnknownSnapshotError,
    UnknownTriggerError,
    ValidationFailedError,
)
from .executor import ExecManager, Workspace
from .graph import RuleBook, check_consistency, map_config
from .registry import AssetKind, AssetRegistry
from .util import fresh_id, now_ms

log = logging.getLogger(__name__)

SNAP_HEADER = "TWINSNAP 1"


class Phase(str, Enum):
    CREATED = "Created"
    EXECUTING = "Executing"
    TERMINATED = "Terminated"


@dataclass
class DTInstance:
    id: str
    config: ConfigDoc
    phase: Phase
    owner: str
    parent: Optional[str] = None
    children: list[str] = field(default_factory=list)
    workspace_id: Optional[str] = None
    run_id: Optional[str] = None
    snapshot_ids: list[str] = field(default_factory=list)
    runner: Any = None
    pending_state: Optional[dict] = None
    registered_targets: list[str] = field(default_factory=list)
    ephemeral: bool = False

    def to_dict(self, include_config: bool = True) -> dict:
        out = {
            "id": self.id,
            "name": self.config.name,
            "phase": self.phase.value,
            "owner": self.owner,
            "parent": self.parent,
            "children": list(self.children),
            "workspace": self.workspace_id,
            "run": self.run_id,
            "snapshots": list(self.snapshot_ids),
        }
        if include_config:
            out["config"] = self.config.to_dict()
        return out


# ---------------------------------------------------------------------------
# Runner pipelines
# ---------------------------------------------------------------------------

class HeartbeatPipeline:
    """Fallback runner: counts steps and writes one liveness series."""

    def __init__(self, instance: DTInstance, hub: DataHub):
        self.instance = instance
        self.hub = hub
        self.steps = 0
        self.series = f"run.{instance.id}.alive"

    def tick(self, now: int) -> None:
        self.steps += 1
        self.hub.append_point(SeriesPoint(self.series, now, float(self.steps)))

    def state_dict(self) -> dict:
        return {"steps": self.steps}

    def load_state(self, state: dict) -> None:
        self.steps = int(state.get("steps", 0))


class SimplePipelineFactory:
    """Builds heartbeat runners; concrete twins install richer factories."""

    def build(self, instance: DTInstance, engine: "LifecycleEngine"):
        return HeartbeatPipeline(instance, engine.hub)

    def analyse_historical(self, instance: DTInstance, engine: "LifecycleEngine",
                           request: dict) -> dict:
        return {"estimates": {}, "anomalies": [], "mode": "historical"}


# ---------------------------------------------------------------------------
# Physical-twin connectors
# ---------------------------------------------------------------------------

class ConnectorRegistry:
    """Starts built-in physical-twin connectors named ``builtin:<id>?opts``.

    Connectors outlive the twins that reference them: terminating a twin
    leaves its physical counterpart running and appending telemetry.
    """

    def __init__(self):
        self._factories: dict[str, Any] = {}
        self._active: dict[str, Any] = {}
        self._lock = threading.Lock()

    def register_factory(self, name: str, factory) -> None:
        self._factories[name] = factory

    def ensure(self, endpoint: str):
        """Start (once) the connector behind a ``builtin:`` endpoint."""
        if not endpoint or not endpoint.startswith("builtin:"):
            return None
        with self._lock:
            if endpoint in self._active:
                return self._active[endpoint]
            rest = endpoint[len("builtin:"):]
            name, _, query = rest.partition("?")
            factory = self._factories.get(name)
            if factory is None:
                raise NotFoundError(f"no built-in connector named {name!r}")
            options = dict(parse_qsl(query))
            connector = factory(options)
            connector.start()
            self._active[endpoint] = connector
            return connector

    def active(self) -> dict[str, Any]:
        with self._lock:
            return dict(self._active)

    def stop_all(self) -> None:
        with self._lock:
            for c in self._active.values():
                c.stop()
            self._active.clear()


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

class LifecycleEngine:
    def __init__(self, registry: AssetRegistry, hub: DataHub, executor: ExecManager,
                 state_root: str | Path, rulebook: Optional[RuleBook] = None,
                 pipeline_factory=None):
        self.registry = registry
        self.hub = hub
        self.executor = executor
        self.state_root = Path(state_root)
        self.state_root.mkdir(parents=True, exist_ok=True)
        self.rulebook = rulebook or RuleBook()
        self.pipeline_factory = pipeline_factory or SimplePipelineFactory()
        self.connectors = ConnectorRegistry()
        self._instances: dict[str, DTInstance] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._table_lock = threading.Lock()

    # -- lookups ---------------------------------------------------------------

    def get_instance(self, instance_id: str) -> DTInstance:
        inst = self._instances.get(instance_id)
        if inst is None:
            raise NotFoundError(f"no twin instance {instance_id!r}")
        return inst

    def list_instances(self, owner: Optional[str] = None) -> list[DTInstance]:
        out = [i for i in self._instances.values() if not i.ephemeral]
        if owner is not None:
            out = [i for i in out if i.owner == owner]
        return sorted(out, key=lambda i: i.id)

    def _root_of(self, inst: DTInstance) -> DTInstance:
        while inst.parent is not None:
            inst = self._instances[inst.parent]
        return inst

    def _lock_for(self, inst: DTInstance) -> threading.RLock:
        root = self._root_of(inst)
        with self._table_lock:
            return self._locks.setdefault(root.id, threading.RLock())

    @contextmanager
    def _locked(self, inst: DTInstance, timeout: float = 10.0):
        """Serialize transitions per instance tree.

        A bounded wait keeps runner ticks (which may evolve their own twin)
        and request handlers (which may stop that runner) from deadlocking:
        whichever side times out backs off with a retryable conflict.
        """
        lock = self._lock_for(inst)
        if not lock.acquire(timeout=timeout):
            raise ConflictError(f"instance {inst.id!r} is busy; retry")
        try:
            yield
        finally:
            lock.release()

    def _descendants(self, inst: DTInstance) -> list[DTInstance]:
        out = []
        for cid in inst.children:
            child = self._instances[cid]
            out.append(child)
            out.extend(self._descendants(child))
        return out

    def asset_in_use(self, asset_id: str) -> bool:
        """True when a non-terminated instance's configuration references it."""
        for inst in self._instances.values():
            if inst.phase == Phase.TERMINATED:
                continue
            if any(ref == asset_id for ref, _ in inst.config.c_a.asset_ref_pairs()):
                return True
        return False

    # -- create -----------------------------------------------------------------

    def create_dt(self, config: ConfigDoc, caller: str, ephemeral: bool = False) -> DTInstance:
        report = validate_config(config, self.registry)
        if not report.valid:
            raise ValidationFailedError("configuration rejected", report)
        self._check_visibility(config, caller)
        root = self._instantiate(config, caller, parent=None, ephemeral=ephemeral)
        return root

    def _check_visibility(self, config: ConfigDoc, caller: str) -> None:
        for ref, _ in config.c_a.asset_ref_pairs():
            self.registry.get_asset(ref, caller)  # raises Forbidden/NotFound
        for child in config.children:
            self._check_visibility(child, caller)

    def _instantiate(self, config: ConfigDoc, caller: str, parent: Optional[str],
                     ephemeral: bool) -> DTInstance:
        inst = DTInstance(id=fresh_id("dt"), config=config, phase=Phase.CREATED,
                          owner=caller, parent=parent, ephemeral=ephemeral)
        self._instances[inst.id] = inst
        for child_cfg in config.children:
            child = self._instantiate(child_cfg, caller, parent=inst.id,
                                      ephemeral=ephemeral)
            inst.children.append(child.id)
        return inst

    # -- execute ------------------------------------------------------------------

    def execute_dt(self, instance_id: str) -> None:
        inst = self.get_instance(instance_id)
        with self._locked(inst):
            if inst.phase != Phase.CREATED:
                raise InvalidTransitionError(
                    f"cannot execute from {inst.phase.value}; expected Created")
            if any(d.phase == Phase.TERMINATED for d in self._descendants(inst)):
                raise InvalidTransitionError(
                    "a terminated child must be restored before executing the composer")
            report = validate_config(inst.config, self.registry)
            if not report.valid:
                raise ValidationFailedError("revalidation at execute failed", report)
            if inst.parent is not None and \
                    self._instances[inst.parent].phase != Phase.EXECUTING:
                log.warning("executing %s independently of its composer %s",
                            inst.id, inst.parent)
            started: list[DTInstance] = []
            try:
                self._execute_tree(inst, started)
            except Exception:
                for s in reversed(started):
                    self._stop_instance(s)
                    s.phase = Phase.CREATED
                raise

    def _execute_tree(self, inst: DTInstance, started: list[DTInstance]) -> None:
        for cid in inst.children:  # children reach Executing before the composer
            child = self._instances[cid]
            if child.phase == Phase.CREATED:
                self._execute_tree(child, started)
        if inst.phase == Phase.EXECUTING:
            return
        self._start_instance(inst)
        started.append(inst)

    def _start_instance(self, inst: DTInstance) -> None:
        c_i = inst.config.c_i
        ws = self.executor.provision(c_i.workspace_flavour, c_i.cpu_units,
                                     c_i.memory_mb, inst.id, inst.owner)
        try:
            if inst.config.c_pt.endpoint:
                self.connectors.ensure(inst.config.c_pt.endpoint)
            known = set(self.hub.targets())
            for ch in inst.config.c_pt.channels:
                if ch.target and ch.target not in known:
                    self.hub.register_target(ch.target)
                    inst.registered_targets.append(ch.target)
            pipeline = self.pipeline_factory.build(inst, self)
            if inst.pending_state is not None:
                pipeline.load_state(inst.pending_state)
                inst.pending_state = None
            inst.runner = pipeline

            def tick(now: int, _inst=inst) -> None:
                try:
                    _inst.runner.tick(now)
                except Exception as exc:  # a failing step must not kill the loop
                    log.exception("runner tick failed for %s", _inst.id)
                    try:
                        self.hub.publish_event("DT", "runner.error",
                                               {"instance": _inst.id, "error": str(exc)})
                    except Exception:
                        pass

            handle = self.executor.spawn_run(ws, c_i.tick_ms, tick)
        except Exception:
            self.executor.release(ws.id)
            raise
        inst.workspace_id = ws.id
        inst.run_id = handle.id
        inst.phase = Phase.EXECUTING

    def _stop_instance(self, inst: DTInstance) -> None:
        if inst.run_id is not None:
            try:
                self.executor.stop_run(inst.run_id)
            except NotFoundError:
                pass
            inst.run_id = None
        if inst.workspace_id is not None:
            self.executor.release(inst.workspace_id)
            inst.workspace_id = None
        for target in inst.registered_targets:
            self.hub.unregister_target(target)
        inst.registered_targets = []
        inst.runner = None

    # -- save / restore --------------------------------------------------------------

    def save_dt(self, instance_id: str) -> str:
        inst = self.get_instance(instance_id)
        with self._locked(inst):
            if inst.phase != Phase.EXECUTING:
                raise InvalidTransitionError(
                    f"cannot save from {inst.phase.value}; expected Executing")
            return self._save_tree(inst)

    def _save_tree(self, inst: DTInstance) -> str:
        child_snaps = {}
        for cid in inst.children:  # children persist before the composer
            child = self._instances[cid]
            if child.phase == Phase.EXECUTING:
                child_snaps[cid] = self._save_tree(child)
        snap_id = fresh_id("snap")
        body = {
            "format_version": 1,
            "id": snap_id,
            "instance_id": inst.id,
            "captured_at": now_ms(),
            "config": inst.config.to_dict(),
            "runner_state": inst.runner.state_dict() if inst.runner else {},
            "child_snapshots": child_snaps,
        }
        snap_dir = self.state_root / inst.id
        snap_dir.mkdir(parents=True, exist_ok=True)
        (snap_dir / f"{snap_id}.snap").write_text(
            SNAP_HEADER + "\n" + json.dumps(body, sort_keys=True), encoding="utf-8")
        inst.snapshot_ids.append(snap_id)
        return snap_id

    def _load_snapshot(self, inst: DTInstance, snapshot_id: str) -> dict:
        path = self.state_root / inst.id / f"{snapshot_id}.snap"
        if snapshot_id not in inst.snapshot_ids or not path.exists():
            raise UnknownSnapshotError(
                f"snapshot {snapshot_id!r} does not belong to {inst.id!r}")
        text = path.read_text(encoding="utf-8")
        header, _, body = text.partition("\n")
        if header != SNAP_HEADER:
            raise UnknownSnapshotError(f"snapshot {snapshot_id!r} has format {header!r}")
        return json.loads(body)

    def restore_dt(self, instance_id: str, snapshot_id: str) -> None:
        inst = self.get_instance(instance_id)
        with self._locked(inst):
            self._restore_tree(inst, snapshot_id)

    def _restore_tree(self, inst: DTInstance, snapshot_id: str) -> None:
        if inst.phase != Phase.TERMINATED:
            raise InvalidTransitionError(
                f"cannot restore from {inst.phase.value}; expected Terminated")
        body = self._load_snapshot(inst, snapshot_id)
        for cid, child_snap in body.get("child_snapshots", {}).items():
            self._restore_tree(self._instances[cid], child_snap)
        inst.config = ConfigDoc.from_dict(body["config"])
        inst.pending_state = body.get("runner_state") or {}
        inst.phase = Phase.CREATED

    # -- analyse -----------------------------------------------------------------

    def analyse_dt(self, instance_id: str, request: Optional[dict] = None) -> dict:
        inst = self.get_instance(instance_id)
        request = request or {}
        if not self._has_analysis_function(inst.config):
            raise NoAnalysisPipelineError(
                "configuration declares no analysis-role function asset")
        if inst.phase == Phase.EXECUTING and inst.runner is not None \
                and hasattr(inst.runner, "analyse") and request.get("mode") != "historical":
            return inst.runner.analyse(request)
        return self.pipeline_factory.analyse_historical(inst, self, request)

    def _has_analysis_function(self, config: ConfigDoc) -> bool:
        for ref, kind in config.c_a.asset_ref_pairs():
            if kind != AssetKind.FUNCTION:
                continue
            rec = self.registry.try_get(ref)
            if rec is not None and rec.metadata.get("role") == "analysis":
                return True
        return any(self._has_analysis_function(c) for c in config.children)

    # -- evolve ------------------------------------------------------------------

    def evolve_dt(self, instance_id: str, new_config: Optional[ConfigDoc] = None,
                  trigger=None, lock_timeout: float = 10.0) -> None:
        inst = self.get_instance(instance_id)
        with self._locked(inst, timeout=lock_timeout):
            if inst.phase not in (Phase.CREATED, Phase.EXECUTING):
                raise InvalidTransitionError(
                    f"cannot evolve from {inst.phase.value}")
            if trigger is not None:
                candidate = self.rulebook.fire_rules(inst.config, trigger, self.registry)
                if candidate is None:
                    raise UnknownTriggerError(
                        f"no registered rule matches event type {trigger.type!r}")
            elif new_config is not None:
                candidate = new_config
            else:
                raise ValidationFailedError("evolve requires a new configuration or an event")
            if base_name(candidate.name) != base_name(inst.config.name):
                raise ValidationFailedError(
                    f"evolve cannot rename the twin ({inst.config.name!r} -> "
                    f"{candidate.name!r})")
            if self._child_shape(candidate) != self._child_shape(inst.config):
                raise ValidationFailedError(
                    "evolve cannot add or remove child twins; terminate and recreate")
            report = validate_config(candidate, self.registry)
            if not report.valid:
                raise ValidationFailedError("evolved configuration rejected", report)
            consistency = check_consistency(map_config(candidate, self.registry))
            if not consistency.passed:
                raise ValidationFailedError(
                    "evolved configuration fails twin-graph consistency",
                    consistency)
            self._swap_configs(inst, candidate)
            self.hub.publish_event("DT", "config.changed",
                                   {"instance": inst.id, "name": candidate.name})

    @staticmethod
    def _child_shape(config: ConfigDoc) -> list:
        return [(c.name, LifecycleEngine._child_shape(c)) for c in config.children]

    def _swap_configs(self, inst: DTInstance, candidate: ConfigDoc) -> None:
        inst.config = candidate  # reference swap: readers see old or new, never a mix
        for cid, child_cfg in zip(inst.children, candidate.children):
            self._swap_configs(self._instances[cid], child_cfg)

    # -- terminate ----------------------------------------------------------------

    def terminate_dt(self, instance_id: str) -> None:
        inst = self.get_instance(instance_id)
        with self._locked(inst):
            if inst.phase not in (Phase.CREATED, Phase.EXECUTING):
                raise InvalidTransitionError(
                    f"cannot terminate from {inst.phase.value}")
            self._terminate_tree(inst)

    def _terminate_tree(self, inst: DTInstance) -> None:
        for cid in inst.children:  # descendants finish before the composer's cleanup
            child = self._instances[cid]
            if child.phase != Phase.TERMINATED:
                self._terminate_tree(child)
        self._stop_instance(inst)
        inst.phase = Phase.TERMINATED
