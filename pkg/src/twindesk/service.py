"""Platform assembly: builds every subsystem from one configuration file.

``platform.cfg`` is YAML:

    listen:  {host: 127.0.0.1, port: 8612}
    paths:   {store: var/store, data: var/data, state: var/state}
    pool:    {cpu_units: 8, memory_mb: 8192}
    runtime: {driver: sim, pace: 0.0, auto_pump: true}
    tokens:
      - {token: admin-secret, user: root, role: Admin}
    demo:    {seed_assets: true, owner: demo}
    rules_file: configs/rules.yaml      # optional
    console_dir: frontend/dist          # optional, served at /console/

``driver: sim`` runs every periodic task on one lockstep clock starting at
0 ms; ``auto_pump`` advances it from a background thread (``pace`` wall
seconds per simulated second, 0 = as fast as possible).  ``driver: thread``
uses one paced thread per task against the wall clock.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .datahub import DataHub
from .dtconfig import ConfigDoc
from .errors import BadRequestError
from .executor import ExecManager, SimScheduler, TaskHost, UsageLedger
from .graph import ReconfigRule, RuleBook
from .incubator import (
    IncubatorPipelineFactory,
    demo_config,
    demo_rules,
    make_emulator_factory,
    seed_demo_assets,
)
from .lifecycle import LifecycleEngine
from .registry import AssetRegistry

ROLES = ("Viewer", "Developer", "Admin")


@dataclass
class Principal:
    user: str
    role: str

    def rank(self) -> int:
        return ROLES.index(self.role)


@dataclass
class PlatformConfig:
    host: str = "127.0.0.1"
    port: int = 8612
    store_path: str = "var/store"
    data_path: str = "var/data"
    state_path: str = "var/state"
    pool_cpu: int = 8
    pool_memory_mb: int = 8192
    driver: str = "sim"          # "sim" | "thread"
    pace: float = 0.0
    auto_pump: bool = True
    tokens: dict[str, Principal] = field(default_factory=dict)
    seed_demo: bool = True
    demo_owner: str = "demo"
    rules_file: Optional[str] = None
    console_dir: Optional[str] = None

    @classmethod
    def load(cls, path: str | Path) -> "PlatformConfig":
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        return cls.from_dict(raw, base=Path(path).parent)

    @classmethod
    def from_dict(cls, raw: dict, base: Path = Path(".")) -> "PlatformConfig":
        cfg = cls()
        listen = raw.get("listen") or {}
        cfg.host = listen.get("host", cfg.host)
        cfg.port = int(listen.get("port", cfg.port))
        paths = raw.get("paths") or {}
        cfg.store_path = str(base / paths.get("store", cfg.store_path))
        cfg.data_path = str(base / paths.get("data", cfg.data_path))
        cfg.state_path = str(base / paths.get("state", cfg.state_path))
        pool = raw.get("pool") or {}
        cfg.pool_cpu = int(pool.get("cpu_units", cfg.pool_cpu))
        cfg.pool_memory_mb = int(pool.get("memory_mb", cfg.pool_memory_mb))
        runtime = raw.get("runtime") or {}
        cfg.driver = runtime.get("driver", cfg.driver)
        if cfg.driver not in ("sim", "thread"):
            raise BadRequestError(f"unknown runtime driver {cfg.driver!r}")
        cfg.pace = float(runtime.get("pace", cfg.pace))
        cfg.auto_pump = bool(runtime.get("auto_pump", cfg.auto_pump))
        for entry in raw.get("tokens") or []:
            role = entry["role"]
            if role not in ROLES:
                raise BadRequestError(f"unknown role {role!r}")
            cfg.tokens[entry["token"]] = Principal(user=entry["user"], role=role)
        demo = raw.get("demo") or {}
        cfg.seed_demo = bool(demo.get("seed_assets", cfg.seed_demo))
        cfg.demo_owner = demo.get("owner", cfg.demo_owner)
        if raw.get("rules_file"):
            cfg.rules_file = str(base / raw["rules_file"])
        if raw.get("console_dir"):
            cfg.console_dir = str(base / raw["console_dir"])
        return cfg


def load_rules_file(path: str | Path) -> list[ReconfigRule]:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    rules = []
    for entry in raw.get("rules") or []:
        trigger = entry.get("trigger") or {}
        rules.append(ReconfigRule(
            id=entry["id"],
            trigger_type=trigger.get("type", ""),
            source=trigger.get("source"),
            guard=entry.get("guard"),
            applies_to=entry.get("applies_to"),
            transform=[(t["path"], t["value"]) for t in entry.get("transform") or []],
        ))
    return rules


class Platform:
    """All subsystems wired together; one instance per process."""

    def __init__(self, config: PlatformConfig):
        self.config = config
        self.registry = AssetRegistry(config.store_path)
        self.hub = DataHub(config.data_path)
        self.scheduler = SimScheduler() if config.driver == "sim" else None
        self.ledger = UsageLedger()
        self.executor = ExecManager(cpu_units=config.pool_cpu,
                                    memory_mb=config.pool_memory_mb,
                                    ledger=self.ledger,
                                    scheduler=self.scheduler,
                                    pace=config.pace if config.driver == "thread" else 1.0)
        self.host = TaskHost(scheduler=self.scheduler,
                             pace=config.pace if config.driver == "thread" else 1.0)
        self.rulebook = RuleBook()
        self.engine = LifecycleEngine(self.registry, self.hub, self.executor,
                                      config.state_path, rulebook=self.rulebook,
                                      pipeline_factory=IncubatorPipelineFactory())
        self.engine.connectors.register_factory(
            "incubator", make_emulator_factory(self.hub, self.host))
        self.registry.set_reference_checker(self.engine.asset_in_use)
        self.registry.set_usage_hook(self.ledger.record_asset_bytes)

        self.demo_ids: dict[str, str] = {}
        if config.seed_demo:
            self.demo_ids = seed_demo_assets(self.registry, config.demo_owner)
            reference = demo_config(self.demo_ids)
            for rule in demo_rules():
                self.rulebook.register_rule(rule, reference)
        if config.rules_file:
            reference = demo_config(self.demo_ids) if self.demo_ids else None
            for rule in load_rules_file(config.rules_file):
                self.rulebook.register_rule(rule, reference)

        self._pump_stop = threading.Event()
        self._pump_thread: Optional[threading.Thread] = None

    # -- sim clock -------------------------------------------------------------

    def pump(self, sim_ms: int) -> None:
        """Advance the lockstep clock (sim driver only)."""
        if self.scheduler is None:
            raise BadRequestError("platform runs on the thread driver; no sim clock")
        self.scheduler.run_for(sim_ms)

    def start(self) -> None:
        if self.scheduler is not None and self.config.auto_pump \
                and self._pump_thread is None:
            self._pump_thread = threading.Thread(target=self._pump_loop, daemon=True)
            self._pump_thread.start()

    def _pump_loop(self) -> None:
        chunk_ms = 200
        while not self._pump_stop.is_set():
            self.scheduler.run_for(chunk_ms)
            delay = (chunk_ms / 1000.0) * self.config.pace
            self._pump_stop.wait(delay if delay > 0 else 0.001)

    def shutdown(self) -> None:
        self._pump_stop.set()
        if self._pump_thread is not None:
            self._pump_thread.join()
            self._pump_thread = None
        self.engine.connectors.stop_all()
        self.executor.shutdown()
        self.host.stop_all()
        self.hub.close()

    # -- helpers ---------------------------------------------------------------

    def principal_for(self, token: str) -> Optional[Principal]:
        return self.config.tokens.get(token)

    def demo_twin_config(self, endpoint: Optional[str] = None) -> ConfigDoc:
        if not self.demo_ids:
            raise BadRequestError("demo assets are not seeded on this platform")
        if endpoint is None:
            return demo_config(self.demo_ids)
        return demo_config(self.demo_ids, endpoint=endpoint)
