"""Simulated workspaces, twin step loops and usage accounting.

Workspaces are bookkeeping records against a fixed capacity pool; runners are
periodic step loops attached to a workspace.  Two drivers exist:

* ``ThreadDriver`` -- one thread per run, paced against the wall clock
  (``pace=1.0`` is real time, ``pace=0`` free-runs); timestamps are wall ms.
* ``SimScheduler`` -- a single lockstep clock starting at 0 that fires every
  registered task in registration order at each due tick.  Advancing is
  explicit (``run_for``), which makes multi-task runs deterministic.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import BadRequestError, CapacityError, NotFoundError
from .util import fresh_id, now_ms

TickFn = Callable[[int], None]  # receives the current time in ms


@dataclass
class Workspace:
    id: str
    flavour: str
    cpu_units: int
    memory_mb: int
    instance_id: str
    owner: str
    status: str = "Active"  # "Active" | "Released"
    activated_at: float = field(default_factory=time.monotonic)

    def to_dict(self) -> dict:
        return {"id": self.id, "flavour": self.flavour, "cpu_units": self.cpu_units,
                "memory_mb": self.memory_mb, "instance_id": self.instance_id,
                "owner": self.owner, "status": self.status}


@dataclass
class RunHandle:
    id: str
    workspace_id: str
    tick_ms: int
    owner: str
    status: str = "Running"  # "Running" | "Stopped"
    ticks: int = 0
    missed_deadlines: int = 0

    def to_dict(self) -> dict:
        return {"id": self.id, "workspace_id": self.workspace_id,
                "tick_ms": self.tick_ms, "status": self.status,
                "ticks": self.ticks, "missed_deadlines": self.missed_deadlines}


class UsageLedger:
    """Per-user monotone counters."""

    def __init__(self):
        self._lock = threading.Lock()
        self._seconds: dict[str, float] = {}
        self._ticks: dict[str, int] = {}
        self._bytes: dict[str, int] = {}
        self._provisioned: dict[str, int] = {}
        self._released: dict[str, int] = {}

    def record_asset_bytes(self, user: str, nbytes: int) -> None:
        with self._lock:
            self._bytes[user] = self._bytes.get(user, 0) + max(0, nbytes)

    def record_ticks(self, user: str, n: int = 1) -> None:
        with self._lock:
            self._ticks[user] = self._ticks.get(user, 0) + n

    def record_provision(self, user: str) -> None:
        with self._lock:
            self._provisioned[user] = self._provisioned.get(user, 0) + 1

    def record_release(self, user: str, seconds: float) -> None:
        with self._lock:
            self._released[user] = self._released.get(user, 0) + 1
            self._seconds[user] = self._seconds.get(user, 0.0) + max(0.0, seconds)

    def report(self, user: str, live_seconds: float = 0.0) -> dict:
        with self._lock:
            return {
                "user": user,
                "workspace_seconds": self._seconds.get(user, 0.0) + live_seconds,
                "ticks_executed": self._ticks.get(user, 0),
                "assets_stored_bytes": self._bytes.get(user, 0),
                "workspaces_provisioned": self._provisioned.get(user, 0),
                "workspaces_released": self._released.get(user, 0),
            }


class _SimTask:
    __slots__ = ("task_id", "period_ms", "fn", "next_due", "seq", "active", "mutex")

    def __init__(self, task_id: str, period_ms: int, fn: TickFn, next_due: int, seq: int):
        self.task_id = task_id
        self.period_ms = period_ms
        self.fn = fn
        self.next_due = next_due
        self.seq = seq
        self.active = True
        self.mutex = threading.Lock()


class SimScheduler:
    """Deterministic lockstep clock shared by every registered task.

    Time starts at 0 ms and advances only through :meth:`run_for`; tasks due
    at the same instant fire in registration order.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._tasks: dict[str, _SimTask] = {}
        self._seq = 0
        self.now_ms = 0

    def register(self, task_id: str, period_ms: int, fn: TickFn) -> None:
        if period_ms <= 0:
            raise BadRequestError("task period must be positive")
        with self._lock:
            self._seq += 1
            self._tasks[task_id] = _SimTask(task_id, period_ms, fn,
                                            self.now_ms + period_ms, self._seq)

    def unregister(self, task_id: str) -> None:
        with self._lock:
            task = self._tasks.pop(task_id, None)
        if task is not None:
            task.active = False
            with task.mutex:  # wait out an in-flight fire
                pass

    def run_for(self, duration_ms: int) -> None:
        """Advance the clock, firing due tasks; stops exactly at now + duration."""
        end = self.now_ms + duration_ms
        while True:
            with self._lock:
                pending = [t for t in self._tasks.values() if t.active and t.next_due <= end]
                if not pending:
                    self.now_ms = end
                    return
                due = min(t.next_due for t in pending)
                batch = sorted((t for t in pending if t.next_due == due),
                               key=lambda t: t.seq)
                self.now_ms = due
            for task in batch:
                with task.mutex:
                    if task.active:
                        task.fn(due)
                        task.next_due = due + task.period_ms


class _ThreadTask:
    def __init__(self, period_ms: int, pace: float, fn: TickFn,
                 on_tick: Callable[[], None], on_miss: Callable[[], None]):
        self._period_s = period_ms / 1000.0
        self._pace = pace
        self._fn = fn
        self._on_tick = on_tick
        self._on_miss = on_miss
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join()

    def _loop(self) -> None:
        while not self._stop.is_set():
            t0 = time.monotonic()
            self._fn(now_ms())
            self._on_tick()
            budget = self._period_s * self._pace
            remaining = budget - (time.monotonic() - t0)
            if remaining > 0:
                self._stop.wait(remaining)
            elif budget > 0:
                self._on_miss()


class TaskHost:
    """Periodic tasks outside the workspace pool (physical-twin connectors).

    Backed by the shared lockstep scheduler when one is given, otherwise by a
    paced thread per task.
    """

    def __init__(self, scheduler: Optional[SimScheduler] = None, pace: float = 1.0):
        self.scheduler = scheduler
        self.pace = pace
        self._threads: dict[str, _ThreadTask] = {}

    def add_task(self, task_id: str, period_ms: int, fn: TickFn) -> None:
        if self.scheduler is not None:
            self.scheduler.register(task_id, period_ms, fn)
        else:
            task = _ThreadTask(period_ms, self.pace, fn,
                               on_tick=lambda: None, on_miss=lambda: None)
            self._threads[task_id] = task
            task.start()

    def remove_task(self, task_id: str) -> None:
        if self.scheduler is not None:
            self.scheduler.unregister(task_id)
        else:
            task = self._threads.pop(task_id, None)
            if task is not None:
                task.stop()

    def stop_all(self) -> None:
        for task_id in list(self._threads):
            self.remove_task(task_id)


class ExecManager:
    """Capacity-checked workspace pool plus run loop management.

    With a :class:`SimScheduler` the manager registers runs as lockstep tasks;
    otherwise each run gets its own paced thread.
    """

    def __init__(self, cpu_units: int = 8, memory_mb: int = 8192,
                 ledger: Optional[UsageLedger] = None,
                 scheduler: Optional[SimScheduler] = None,
                 pace: float = 1.0):
        self.pool_cpu = cpu_units
        self.pool_memory = memory_mb
        self.ledger = ledger or UsageLedger()
        self.scheduler = scheduler
        self.pace = pace
        self._lock = threading.Lock()
        self._workspaces: dict[str, Workspace] = {}
        self._runs: dict[str, RunHandle] = {}
        self._threads: dict[str, _ThreadTask] = {}

    # -- workspaces ------------------------------------------------------------

    def provision(self, flavour: str, cpu_units: int, memory_mb: int,
                  instance_id: str, owner: str) -> Workspace:
        if cpu_units <= 0 or memory_mb <= 0:
            raise BadRequestError("workspace resources must be positive")
        with self._lock:
            used_cpu = sum(w.cpu_units for w in self._workspaces.values()
                           if w.status == "Active")
            used_mem = sum(w.memory_mb for w in self._workspaces.values()
                           if w.status == "Active")
            if used_cpu + cpu_units > self.pool_cpu or used_mem + memory_mb > self.pool_memory:
                raise CapacityError(
                    f"pool exhausted: need {cpu_units} cpu / {memory_mb} MB, "
                    f"free {self.pool_cpu - used_cpu} cpu / {self.pool_memory - used_mem} MB")
            ws = Workspace(id=fresh_id("ws"), flavour=flavour, cpu_units=cpu_units,
                           memory_mb=memory_mb, instance_id=instance_id, owner=owner)
            self._workspaces[ws.id] = ws
        self.ledger.record_provision(owner)
        return ws

    def release(self, workspace_id: str) -> None:
        with self._lock:
            ws = self._workspaces.get(workspace_id)
            if ws is None:
                raise NotFoundError(f"no workspace {workspace_id!r}")
            if ws.status != "Active":
                raise BadRequestError(f"workspace {workspace_id!r} already released")
            running = [r for r in self._runs.values()
                       if r.workspace_id == workspace_id and r.status == "Running"]
            if running:
                raise BadRequestError(
                    f"workspace {workspace_id!r} still has a running loop; stop it first")
            ws.status = "Released"
        self.ledger.record_release(ws.owner, time.monotonic() - ws.activated_at)

    def workspaces(self, owner: Optional[str] = None) -> list[Workspace]:
        with self._lock:
            out = list(self._workspaces.values())
        if owner is not None:
            out = [w for w in out if w.owner == owner]
        return sorted(out, key=lambda w: w.id)

    def active_count(self) -> int:
        with self._lock:
            return sum(1 for w in self._workspaces.values() if w.status == "Active")

    # -- runs --------------------------------------------------------------------

    def spawn_run(self, workspace: Workspace, tick_ms: int, tick_fn: TickFn) -> RunHandle:
        with self._lock:
            ws = self._workspaces.get(workspace.id)
            if ws is None or ws.status != "Active":
                raise BadRequestError("workspace released before the run could start")
            handle = RunHandle(id=fresh_id("run"), workspace_id=ws.id,
                               tick_ms=tick_ms, owner=ws.owner)
            self._runs[handle.id] = handle

        def ticked(now: int) -> None:
            tick_fn(now)
            handle.ticks += 1
            self.ledger.record_ticks(handle.owner, 1)

        if self.scheduler is not None:
            self.scheduler.register(handle.id, tick_ms, ticked)
        else:
            task = _ThreadTask(
                tick_ms, self.pace, tick_fn,
                on_tick=lambda: (setattr(handle, "ticks", handle.ticks + 1),
                                 self.ledger.record_ticks(handle.owner, 1)),
                on_miss=lambda: setattr(handle, "missed_deadlines",
                                        handle.missed_deadlines + 1))
            self._threads[handle.id] = task
            task.start()
        return handle

    def stop_run(self, run_id: str) -> None:
        with self._lock:
            handle = self._runs.get(run_id)
            if handle is None:
                raise NotFoundError(f"no run {run_id!r}")
            if handle.status != "Running":
                raise BadRequestError(f"run {run_id!r} already stopped")
        if self.scheduler is not None:
            self.scheduler.unregister(run_id)
        else:
            self._threads.pop(run_id).stop()
        handle.status = "Stopped"

    def runs(self) -> list[RunHandle]:
        with self._lock:
            return sorted(self._runs.values(), key=lambda r: r.id)

    # -- accounting ---------------------------------------------------------------

    def usage_report(self, user: str) -> dict:
        now = time.monotonic()
        with self._lock:
            live = sum(now - w.activated_at for w in self._workspaces.values()
                       if w.owner == user and w.status == "Active")
        return self.ledger.report(user, live_seconds=live)

    def shutdown(self) -> None:
        for run_id in [r.id for r in self.runs() if r.status == "Running"]:
            self.stop_run(run_id)
