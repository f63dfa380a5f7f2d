"""Built-in incubator physical twin and the digital twin pipeline that closes
the loop around it.

The physical side is an insulated box with a heater, modelled as a first
order lumped thermal system with two conductance regimes (lid closed/open)
and integrated with explicit Euler:

    C * dT/dt = P * [heater on] - G * (T - T_ambient),   G in {G_closed, G_open}

A bang-bang controller with hysteresis lives with the plant; the digital twin
cannot see the lid.  It estimates the effective conductance online from the
sensed temperature stream, flags a lid anomaly when the estimate crosses the
midpoint between the two nominal regimes, replans the controller through
what-if simulations and reconfigures itself to mirror the plant.

The conductance estimator aggregates the per-sample heat balance over a
sliding window.  Summing the Euler update over consecutive samples telescopes
the temperature differences, so sensor noise enters one window only through
its two endpoints; each full window yields one recursive-least-squares update
with forgetting.  On noiseless self-generated data the window equation is
exact and the estimate lands on the generating conductance immediately.
"""

from __future__ import annotations

import logging
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .datahub import DataHub, SeriesPoint
from .dtconfig import (
    Channel,
    CompositionSpec,
    ConfigDoc,
    Endpoint,
    ExternalSpec,
    FTPair,
    InfraSpec,
    PTSpec,
    derive_variant,
)
from .errors import BadRequestError, PlatformError
from .graph import ReconfigRule
from .lifecycle import DTInstance, HeartbeatPipeline, LifecycleEngine, Phase, SimplePipelineFactory
from .registry import AssetKind, AssetRegistry, Port, Visibility

log = logging.getLogger(__name__)

EULER_MAX_DT_MS = 200

# executable keys that wire demo assets to the in-process behaviors
X_ESTIMATOR = "builtin:rls-estimator"
X_DETECTOR = "builtin:anomaly-detector"
X_PLANNER = "builtin:whatif-planner"
X_SIM = "builtin:euler-sim"


# ---------------------------------------------------------------------------
# Plant
# ---------------------------------------------------------------------------

@dataclass
class PlantParams:
    heat_capacity: float = 300.0        # J/degC
    conductance_closed: float = 2.0     # W/degC
    conductance_open: float = 8.0       # W/degC, lid open loses heat faster
    heater_power: float = 100.0         # W
    ambient: float = 21.0               # degC
    sensor_noise_std: float = 0.02      # degC

    def __post_init__(self):
        if self.heat_capacity <= 0 or self.heater_power <= 0:
            raise BadRequestError("heat capacity and heater power must be positive")
        if self.conductance_closed <= 0:
            raise BadRequestError("closed-lid conductance must be positive")
        if self.conductance_open <= self.conductance_closed:
            raise BadRequestError("open-lid conductance must exceed closed-lid")
        if self.sensor_noise_std < 0:
            raise BadRequestError("sensor noise must be non-negative")


@dataclass
class IncubatorState:
    t_box: float
    heater_on: bool = False
    lid_open: bool = False
    t_ms: int = 0


@dataclass
class ControllerParams:
    setpoint: float = 35.0
    band: float = 0.5

    def __post_init__(self):
        if self.band <= 0:
            raise BadRequestError("controller band must be positive")


def plant_step(state: IncubatorState, params: PlantParams, dt_ms: int,
               rng: Optional[random.Random] = None) -> tuple[IncubatorState, float]:
    """One explicit-Euler step; returns the new state and the sensed reading.

    The step must respect both the hard cap of 200 ms and the Euler stability
    bound dt < 2*C/G for the worst-case (open lid) conductance.
    """
    if dt_ms <= 0:
        raise BadRequestError("dt must be positive")
    if not math.isfinite(state.t_box):
        raise BadRequestError("non-finite plant state")
    if dt_ms > EULER_MAX_DT_MS:
        raise BadRequestError(f"dt {dt_ms} ms exceeds the {EULER_MAX_DT_MS} ms cap")
    g = params.conductance_open if state.lid_open else params.conductance_closed
    if dt_ms >= 2000.0 * params.heat_capacity / g:
        raise BadRequestError("dt violates the Euler stability bound 2C/G")
    dt = dt_ms / 1000.0
    power = params.heater_power if state.heater_on else 0.0
    t_next = state.t_box + (dt / params.heat_capacity) * (
        power - g * (state.t_box - params.ambient))
    noise = 0.0
    if rng is not None and params.sensor_noise_std > 0:
        noise = rng.gauss(0.0, params.sensor_noise_std)
    new_state = IncubatorState(t_box=t_next, heater_on=state.heater_on,
                               lid_open=state.lid_open, t_ms=state.t_ms + dt_ms)
    return new_state, t_next + noise


def controller_step(sensed: float, ctrl: ControllerParams, heater_on: bool) -> bool:
    """Bang-bang with hysteresis: below the band turns on, above turns off."""
    if sensed < ctrl.setpoint - ctrl.band:
        return True
    if sensed > ctrl.setpoint + ctrl.band:
        return False
    return heater_on


# ---------------------------------------------------------------------------
# Hidden-quantity estimator
# ---------------------------------------------------------------------------

@dataclass
class ConductanceEstimator:
    """Online estimate of the effective conductance from sensed samples.

    Feed consecutive sample pairs with :meth:`update`; every ``stride``
    accepted samples (once ``window`` of them are buffered) one aggregate
    equation enters a scalar recursive-least-squares update with forgetting
    factor ``lam``.  Samples with the box close to ambient carry no
    information and are skipped.
    """

    heat_capacity: float
    heater_power: float
    ambient: float
    window: int = 100
    stride: int = 10
    lam: float = 0.95
    p0: float = 1000.0
    info_floor: float = 1.0      # degC; |T - ambient| below this is skipped
    warmup_updates: int = 5

    g_hat: float = 1.0
    cov: float = field(default=1000.0)
    updates: int = 0
    residuals: deque = field(default_factory=lambda: deque(maxlen=20))
    _buf: deque = field(default_factory=deque)
    _since: int = 0

    def __post_init__(self):
        self.cov = self.p0
        self._buf = deque(maxlen=self.window)

    @property
    def warmed_up(self) -> bool:
        return self.updates >= self.warmup_updates

    def update(self, t_k: float, t_k1: float, heater_on: bool, dt_s: float) -> bool:
        """Consume one sample pair; True when the estimate was refreshed."""
        if dt_s <= 0:
            raise BadRequestError("sample dt must be positive")
        if abs(t_k - self.ambient) < self.info_floor:
            return False  # no information in this sample
        self._buf.append((t_k, t_k1, 1.0 if heater_on else 0.0, dt_s))
        self._since += 1
        if len(self._buf) < self.window or self._since < self.stride:
            return False
        self._since = 0
        power = self.heater_power
        c = self.heat_capacity
        # summed heat balance: interior temperature noise telescopes away
        y = sum(power * on - c * (t1 - t0) / dt for t0, t1, on, dt in self._buf)
        phi = sum(t0 - self.ambient for t0, t1, on, dt in self._buf)
        if abs(phi) < self.info_floor:
            return False
        gain = self.cov * phi / (self.lam + phi * phi * self.cov)
        self.g_hat = self.g_hat + gain * (y - phi * self.g_hat)
        self.cov = (self.cov - gain * phi * self.cov) / self.lam
        self.updates += 1
        self.residuals.append(y / phi - self.g_hat)
        return True

    def state_dict(self) -> dict:
        return {
            "g_hat": self.g_hat,
            "cov": self.cov,
            "updates": self.updates,
            "residuals": list(self.residuals),
            "buf": [list(s) for s in self._buf],
            "since": self._since,
        }

    def load_state(self, state: dict) -> None:
        self.g_hat = state.get("g_hat", self.g_hat)
        self.cov = state.get("cov", self.cov)
        self.updates = state.get("updates", 0)
        self.residuals = deque(state.get("residuals", []), maxlen=20)
        self._buf = deque((tuple(s) for s in state.get("buf", [])), maxlen=self.window)
        self._since = state.get("since", 0)


@dataclass
class AnomalyDetector:
    """Lid-state change detection from the conductance estimate.

    Emits ``lid-open`` when the estimate stays strictly above the midpoint of
    the two nominal conductances for ``sustain`` consecutive estimator
    updates, and ``lid-closed`` on the symmetric condition.
    """

    g_closed: float
    g_open: float
    sustain: int = 20

    believed_open: bool = False
    above: int = 0
    below: int = 0
    _seen_updates: int = 0

    @property
    def midpoint(self) -> float:
        return (self.g_closed + self.g_open) / 2.0

    def observe(self, estimator: ConductanceEstimator) -> Optional[str]:
        """Call once per pipeline step; reacts only to fresh estimator updates."""
        if not estimator.warmed_up or estimator.updates == self._seen_updates:
            return None
        self._seen_updates = estimator.updates
        if estimator.g_hat > self.midpoint:
            self.above += 1
            self.below = 0
        else:
            self.below += 1
            self.above = 0
        if not self.believed_open and self.above >= self.sustain:
            self.believed_open = True
            return "lid-open"
        if self.believed_open and self.below >= self.sustain:
            self.believed_open = False
            return "lid-closed"
        return None

    def state_dict(self) -> dict:
        return {"believed_open": self.believed_open, "above": self.above,
                "below": self.below, "seen_updates": self._seen_updates}

    def load_state(self, state: dict) -> None:
        self.believed_open = state.get("believed_open", False)
        self.above = state.get("above", 0)
        self.below = state.get("below", 0)
        self._seen_updates = state.get("seen_updates", 0)


def detect_anomaly(estimator: ConductanceEstimator, detector: AnomalyDetector) -> Optional[str]:
    return detector.observe(estimator)


# ---------------------------------------------------------------------------
# What-if planning
# ---------------------------------------------------------------------------

def simulate_setpoint_error(g: float, model: dict, ctrl: ControllerParams,
                            t0: float, heater_on: bool, tick_ms: int,
                            horizon_ms: int) -> float:
    """Mean squared setpoint error of a candidate controller against the
    identified (noiseless) plant over the horizon."""
    params = PlantParams(
        heat_capacity=float(model["heat_capacity"]),
        conductance_closed=g,
        conductance_open=g * 4.0 + 1.0,  # unused: the lid stays closed here
        heater_power=float(model["heater_power"]),
        ambient=float(model["ambient"]),
        sensor_noise_std=0.0,
    )
    state = IncubatorState(t_box=t0, heater_on=heater_on)
    err = 0.0
    steps = max(1, horizon_ms // tick_ms)
    for _ in range(steps):
        state, sensed = plant_step(state, params, tick_ms)
        state.heater_on = controller_step(sensed, ctrl, state.heater_on)
        err += (state.t_box - ctrl.setpoint) ** 2
    return err / steps


def run_whatif(engine: LifecycleEngine, instance_id: str, candidates: list[dict],
               horizon_ms: int = 60_000) -> list[dict]:
    """Score candidate controller settings in ephemeral simulations.

    Each candidate becomes a configuration variant; the variants are ranked
    ascending by mean squared setpoint error against the identified plant.
    One temporary workspace is held for the duration and released afterwards;
    simulated steps are accounted as ticks to the caller's usage ledger.
    """
    inst = engine.get_instance(instance_id)
    if not candidates:
        raise BadRequestError("what-if needs at least one candidate")
    g_hat = _current_estimate(engine, inst)
    if g_hat is None:
        raise BadRequestError("no conductance estimate available yet")
    model = _model_params(engine, inst)
    t0, heater_on = _plant_snapshot(engine.hub, inst.config, model)
    tick_ms = inst.config.c_i.tick_ms

    ws = engine.executor.provision("SharedPool", 1, 64, f"whatif-{inst.id}", inst.owner)
    results = []
    try:
        for cand in candidates:
            try:
                ctrl = ControllerParams(setpoint=float(cand["setpoint"]),
                                        band=float(cand["band"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise BadRequestError(f"malformed candidate {cand!r}: {exc}")
            variant = derive_variant(inst.config, {
                "c_a.parameters.setpoint": ctrl.setpoint,
                "c_a.parameters.band": ctrl.band,
            })
            ephemeral = DTInstance(id=f"whatif-{variant.name}", config=variant,
                                   phase=Phase.CREATED, owner=inst.owner, ephemeral=True)
            score = simulate_setpoint_error(g_hat, model, ctrl, t0, heater_on,
                                            tick_ms, horizon_ms)
            engine.executor.ledger.record_ticks(inst.owner,
                                                max(1, horizon_ms // tick_ms))
            ephemeral.phase = Phase.TERMINATED
            results.append({"setpoint": ctrl.setpoint, "band": ctrl.band,
                            "score": score, "variant": variant.name})
    finally:
        engine.executor.release(ws.id)
    results.sort(key=lambda r: r["score"])
    for rank, r in enumerate(results, start=1):
        r["rank"] = rank
    return results


def _current_estimate(engine: LifecycleEngine, inst: DTInstance) -> Optional[float]:
    runner = inst.runner
    if isinstance(runner, IncubatorPipeline) and runner.estimator.warmed_up:
        return runner.estimator.g_hat
    keys = _series_keys(inst.config)
    if keys.get("g_hat"):
        point = engine.hub.latest(keys["g_hat"])
        if point is not None:
            return point.value
    return None


def _model_params(engine: LifecycleEngine, inst: DTInstance) -> dict:
    for ref, kind in inst.config.c_a.asset_ref_pairs():
        if kind == AssetKind.MODEL:
            rec = engine.registry.try_get(ref)
            if rec is not None and "heat_capacity" in rec.params:
                return dict(rec.params)
    raise BadRequestError("configuration references no thermal model asset")


def _plant_snapshot(hub: DataHub, config: ConfigDoc, model: dict) -> tuple[float, bool]:
    keys = _series_keys(config)
    t0 = float(model["ambient"])
    heater = False
    if keys.get("t_box"):
        p = hub.latest(keys["t_box"])
        if p is not None:
            t0 = p.value
    if keys.get("heater"):
        p = hub.latest(keys["heater"])
        if p is not None:
            heater = p.value >= 0.5
    return t0, heater


def _series_keys(config: ConfigDoc) -> dict[str, Optional[str]]:
    """Wiring discovered from the physical-twin channels."""
    keys: dict[str, Optional[str]] = {"t_box": None, "heater": None, "lid": None,
                                      "ctrl": None, "g_hat": None}
    for ch in config.c_pt.channels:
        if ch.name in ("t_box", "heater", "lid") and ch.series:
            keys[ch.name] = ch.series
        if ch.role == "command" and ch.target:
            keys["ctrl"] = ch.target
    if keys["t_box"]:
        prefix, _, _ = keys["t_box"].rpartition(".")
        keys["g_hat"] = f"{prefix}.g_hat" if prefix else "g_hat"
    return keys


# ---------------------------------------------------------------------------
# The twin-side pipeline (monitor -> analyse -> plan -> execute)
# ---------------------------------------------------------------------------

class IncubatorPipeline:
    """Runner for twins composed from the built-in incubator assets."""

    def __init__(self, instance: DTInstance, engine: LifecycleEngine):
        self.instance = instance
        self.engine = engine
        self.hub = engine.hub
        self.keys = _series_keys(instance.config)
        if not self.keys["t_box"]:
            raise BadRequestError("incubator pipeline needs a t_box sensor channel")
        model = _model_params(engine, instance)
        self.model = model
        self.estimator = ConductanceEstimator(
            heat_capacity=float(model["heat_capacity"]),
            heater_power=float(model["heater_power"]),
            ambient=float(model["ambient"]),
        )
        self.detector = AnomalyDetector(
            g_closed=float(model["conductance_closed"]),
            g_open=float(model["conductance_open"]),
        )
        self.steps = 0
        self._prev: Optional[tuple[int, float, float]] = None  # (t, sensed, heater)
        self._last_plan_ms: Optional[int] = None

    # -- parameters read fresh each tick so evolve takes effect next step ----

    def _param(self, name: str, default):
        return self.instance.config.c_a.parameters.get(name, default)

    def tick(self, now: int) -> None:
        self.steps += 1
        anomaly = self._monitor_and_analyse(now)
        self._plan_and_execute(now, anomaly)

    def _monitor_and_analyse(self, now: int) -> Optional[str]:
        t_point = self.hub.latest(self.keys["t_box"])
        h_point = self.hub.latest(self.keys["heater"]) if self.keys["heater"] else None
        if t_point is None:
            return None
        heater = h_point.value >= 0.5 if h_point is not None else False
        anomaly = None
        if self._prev is not None and t_point.timestamp > self._prev[0]:
            t_prev_ms, sensed_prev, _ = self._prev
            dt_s = (t_point.timestamp - t_prev_ms) / 1000.0
            refreshed = self.estimator.update(sensed_prev, t_point.value, heater, dt_s)
            if refreshed:
                if self.keys["g_hat"]:
                    self.hub.append_point(SeriesPoint(self.keys["g_hat"], now,
                                                      self.estimator.g_hat))
                anomaly = self.detector.observe(self.estimator)
        if self._prev is None or t_point.timestamp > self._prev[0]:
            self._prev = (t_point.timestamp, t_point.value,
                          1.0 if heater else 0.0)
        return anomaly

    def _plan_and_execute(self, now: int, anomaly: Optional[str]) -> None:
        if anomaly is not None:
            event = self.hub.publish_event(
                "DT", f"anomaly.{anomaly}",
                {"instance": self.instance.id, "g_hat": self.estimator.g_hat,
                 "at": now})
            self._evolve_by_rule(event)
        plan_every = int(self._param("plan_every_ms", 0))
        due = (plan_every > 0 and
               (self._last_plan_ms is None or now - self._last_plan_ms >= plan_every))
        if anomaly is not None or due:
            self._replan(now)

    def _evolve_by_rule(self, event) -> None:
        try:
            self.engine.evolve_dt(self.instance.id, trigger=event, lock_timeout=0.5)
        except PlatformError as exc:
            self.hub.publish_event("DT", "evolve.skipped",
                                   {"instance": self.instance.id, "code": exc.code,
                                    "error": exc.message})

    def _replan(self, now: int) -> None:
        self._last_plan_ms = now
        if not self.estimator.warmed_up:
            return
        bands = [float(b) for b in
                 str(self._param("whatif_bands", "0.25 0.5 1.0 2.0")).replace(",", " ").split()]
        setpoint = float(self._param("setpoint", 35.0))
        horizon = int(self._param("whatif_horizon_ms", 60_000))
        candidates = [{"setpoint": setpoint, "band": b} for b in bands]
        try:
            ranked = run_whatif(self.engine, self.instance.id, candidates, horizon)
        except PlatformError as exc:
            self.hub.publish_event("DT", "plan.failed",
                                   {"instance": self.instance.id, "error": exc.message})
            return
        winner = ranked[0]
        if self.keys["ctrl"]:
            try:
                self.hub.send_command(self.keys["ctrl"], "set_controller",
                                      {"setpoint": winner["setpoint"],
                                       "band": winner["band"]}, timestamp=now)
            except PlatformError as exc:
                self.hub.publish_event("DT", "command.failed",
                                       {"instance": self.instance.id,
                                        "error": exc.message})
        try:
            candidate = derive_variant(self.instance.config, {
                "c_a.parameters.setpoint": winner["setpoint"],
                "c_a.parameters.band": winner["band"],
            }, tag="plan")
            self.engine.evolve_dt(self.instance.id, new_config=candidate,
                                  lock_timeout=0.5)
        except PlatformError as exc:
            self.hub.publish_event("DT", "evolve.rejected",
                                   {"instance": self.instance.id, "code": exc.code,
                                    "error": exc.message})

    # -- analysis on demand ----------------------------------------------------

    def analyse(self, request: dict) -> dict:
        result = {
            "mode": "live",
            "estimates": {
                "g_hat": self.estimator.g_hat,
                "uncertainty": self.estimator.cov,
                "updates": self.estimator.updates,
            },
            "warmed_up": self.estimator.warmed_up,
            "anomalies": [e.to_dict() for e in self.hub.poll_events()
                          if e.type.startswith("anomaly.")
                          and e.payload.get("instance") == self.instance.id],
        }
        if self.keys["g_hat"] and self.estimator.updates:
            last = self.hub.latest(self.keys["g_hat"])
            ts = (last.timestamp + 1) if last is not None else 0
            self.hub.append_point(SeriesPoint(self.keys["g_hat"], ts,
                                              self.estimator.g_hat))
        return result

    # -- persistence -------------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "steps": self.steps,
            "estimator": self.estimator.state_dict(),
            "detector": self.detector.state_dict(),
            "prev": list(self._prev) if self._prev else None,
            "last_plan_ms": self._last_plan_ms,
        }

    def load_state(self, state: dict) -> None:
        self.steps = state.get("steps", 0)
        self.estimator.load_state(state.get("estimator", {}))
        self.detector.load_state(state.get("detector", {}))
        prev = state.get("prev")
        self._prev = tuple(prev) if prev else None
        self._last_plan_ms = state.get("last_plan_ms")


def replay_analysis(engine: LifecycleEngine, instance: DTInstance,
                    request: dict) -> dict:
    """Historical analysis: rebuild the estimate from stored telemetry."""
    keys = _series_keys(instance.config)
    if not keys["t_box"]:
        return {"mode": "historical", "estimates": {}, "anomalies": []}
    model = _model_params(engine, instance)
    t0 = int(request.get("from", 0))
    t1 = int(request.get("to", 2**62))
    temps = engine.hub.query_range(keys["t_box"], t0, t1)
    heats = {p.timestamp: p.value
             for p in engine.hub.query_range(keys["heater"], t0, t1)} \
        if keys["heater"] else {}
    estimator = ConductanceEstimator(
        heat_capacity=float(model["heat_capacity"]),
        heater_power=float(model["heater_power"]),
        ambient=float(model["ambient"]),
    )
    detector = AnomalyDetector(g_closed=float(model["conductance_closed"]),
                               g_open=float(model["conductance_open"]))
    anomalies = []
    prev = None
    for p in temps:
        if prev is not None and p.timestamp > prev.timestamp:
            heater = heats.get(p.timestamp, 0.0) >= 0.5
            if estimator.update(prev.value, p.value, heater,
                                (p.timestamp - prev.timestamp) / 1000.0):
                kind = detector.observe(estimator)
                if kind:
                    anomalies.append({"type": f"anomaly.{kind}", "at": p.timestamp,
                                      "g_hat": estimator.g_hat})
        prev = p
    result = {
        "mode": "historical",
        "estimates": {"g_hat": estimator.g_hat, "uncertainty": estimator.cov,
                      "updates": estimator.updates},
        "warmed_up": estimator.warmed_up,
        "anomalies": anomalies,
    }
    # when ground-truth lid telemetry exists, score the detector against it
    if keys["lid"]:
        lid_points = engine.hub.query_range(keys["lid"], t0, t1)
        opened = next((p.timestamp for p in lid_points if p.value >= 0.5), None)
        detected = next((a["at"] for a in anomalies
                         if a["type"] == "anomaly.lid-open"), None)
        if opened is not None and detected is not None:
            result["detection_delay_ms"] = detected - opened
    return result


class IncubatorPipelineFactory(SimplePipelineFactory):
    """Builds the incubator pipeline for configurations that reference the
    built-in estimator; anything else gets the heartbeat runner."""

    def _is_incubator(self, instance: DTInstance, engine: LifecycleEngine) -> bool:
        for ref, kind in instance.config.c_a.asset_ref_pairs():
            if kind != AssetKind.FUNCTION:
                continue
            rec = engine.registry.try_get(ref)
            if rec is not None and rec.metadata.get("executable") == X_ESTIMATOR:
                return True
        return False

    def build(self, instance: DTInstance, engine: LifecycleEngine):
        if self._is_incubator(instance, engine):
            return IncubatorPipeline(instance, engine)
        return HeartbeatPipeline(instance, engine.hub)

    def analyse_historical(self, instance: DTInstance, engine: LifecycleEngine,
                           request: dict) -> dict:
        if self._is_incubator(instance, engine):
            return replay_analysis(engine, instance, request)
        return super().analyse_historical(instance, engine, request)


def mapek_tick(engine: LifecycleEngine, instance_id: str, now: int) -> None:
    """Drive one monitor/analyse/plan/execute step of a running incubator twin."""
    inst = engine.get_instance(instance_id)
    if inst.phase != Phase.EXECUTING or not isinstance(inst.runner, IncubatorPipeline):
        raise BadRequestError("instance is not running an incubator pipeline")
    inst.runner.tick(now)


# ---------------------------------------------------------------------------
# The emulator connector (the physical side)
# ---------------------------------------------------------------------------

class IncubatorEmulator:
    """Periodic task that plays the physical incubator against the hub.

    Options (all optional): ``seed``, ``noise``, ``tick_ms``, ``prefix``,
    ``lid_open_s``/``lid_close_s`` (scripted lid schedule), ``start_t``.
    The emulator consumes ``set_controller`` and ``set_lid`` commands from its
    command target and keeps running when its twin terminates.
    """

    def __init__(self, options: dict, hub: DataHub, host):
        self.hub = hub
        self.host = host
        self.prefix = options.get("prefix", "inc")
        self.tick_ms = int(options.get("tick_ms", 100))
        self.params = PlantParams(
            sensor_noise_std=float(options.get("noise", PlantParams.sensor_noise_std)))
        self.ctrl = ControllerParams()
        self.rng = random.Random(int(options.get("seed", 1234)))
        start_t = float(options.get("start_t", self.params.ambient))
        self.state = IncubatorState(t_box=start_t)
        self.sensed = start_t
        self.lid_open_ms = int(float(options["lid_open_s"]) * 1000) \
            if "lid_open_s" in options else None
        self.lid_close_ms = int(float(options["lid_close_s"]) * 1000) \
            if "lid_close_s" in options else None
        self.task_id = f"pt-{self.prefix}"
        self.target = f"{self.prefix}.ctrl"
        self._started = False
        self._t0: Optional[int] = None  # lid schedule is relative to first tick

    def start(self) -> None:
        if self._started:
            return
        self.hub.register_target(self.target)
        self.host.add_task(self.task_id, self.tick_ms, self.tick)
        self._started = True

    def stop(self) -> None:
        if self._started:
            self.host.remove_task(self.task_id)
            self.hub.unregister_target(self.target)
            self._started = False

    def _apply_commands(self) -> None:
        for cmd in self.hub.fetch_commands(self.target):
            if cmd.name == "set_controller":
                try:
                    self.ctrl = ControllerParams(
                        setpoint=float(cmd.args.get("setpoint", self.ctrl.setpoint)),
                        band=float(cmd.args.get("band", self.ctrl.band)))
                except (BadRequestError, TypeError, ValueError):
                    log.warning("ignoring malformed set_controller %r", cmd.args)
            elif cmd.name == "set_lid":
                self.state.lid_open = bool(cmd.args.get("open", False))

    def tick(self, now: int) -> None:
        self._apply_commands()
        if self._t0 is None:
            self._t0 = now - self.tick_ms
        rel = now - self._t0
        if self.lid_open_ms is not None and rel >= self.lid_open_ms:
            if self.lid_close_ms is None or rel < self.lid_close_ms:
                self.state.lid_open = True
            else:
                self.state.lid_open = False
        self.state.heater_on = controller_step(self.sensed, self.ctrl,
                                               self.state.heater_on)
        self.state, self.sensed = plant_step(self.state, self.params,
                                             self.tick_ms, self.rng)
        self.hub.append_batch([
            SeriesPoint(f"{self.prefix}.t_box", now, self.sensed),
            SeriesPoint(f"{self.prefix}.heater", now,
                        1.0 if self.state.heater_on else 0.0),
            SeriesPoint(f"{self.prefix}.lid", now,
                        1.0 if self.state.lid_open else 0.0),
        ])


def make_emulator_factory(hub: DataHub, host):
    """One emulator per series prefix: a second twin (or the same twin after a
    restore) attaches to the already-running box rather than forking it."""
    live: dict[str, IncubatorEmulator] = {}

    def factory(options: dict) -> IncubatorEmulator:
        prefix = options.get("prefix", "inc")
        if prefix not in live or not live[prefix]._started:
            live[prefix] = IncubatorEmulator(options, hub, host)
        return live[prefix]
    return factory


# ---------------------------------------------------------------------------
# Demo catalog
# ---------------------------------------------------------------------------

MODEL_PARAMS = {
    "heat_capacity": 300.0,
    "conductance_closed": 2.0,
    "conductance_open": 8.0,
    "heater_power": 100.0,
    "ambient": 21.0,
}


def seed_demo_assets(registry: AssetRegistry, owner: str = "demo") -> dict[str, str]:
    """Register (idempotently) the shared asset set the demo twin composes."""
    from .registry import AssetQuery

    existing = {(r.name, r.kind): r.id
                for r in registry.list_assets(AssetQuery(owner=owner), owner)}

    def ensure(kind, name, **kw):
        if (name, kind) in existing:
            return existing[(name, kind)]
        return registry.register_asset(owner, kind, name,
                                       visibility=Visibility.SHARED, **kw).id

    ids = {}
    ids["telemetry"] = ensure(
        AssetKind.DATA, "incubator-telemetry",
        ports=[Port("feed", "out")],
        metadata={"series": "inc.t_box inc.heater inc.lid"})
    ids["model"] = ensure(
        AssetKind.MODEL, "thermal-2p",
        ports=[Port("params", "out")],
        params=dict(MODEL_PARAMS),
        content=yaml.safe_dump(MODEL_PARAMS))
    ids["estimator"] = ensure(
        AssetKind.FUNCTION, "rls-estimator",
        ports=[Port("t_in", "in"), Port("heater_in", "in"), Port("data_in", "in"),
               Port("model_in", "in"), Port("g_hat", "out")],
        metadata={"role": "analysis", "executable": X_ESTIMATOR})
    ids["detector"] = ensure(
        AssetKind.FUNCTION, "anomaly-detector",
        ports=[Port("g_in", "in"), Port("lid_in", "in"),
               Port("event_out", "out", "event")],
        metadata={"role": "anomaly", "executable": X_DETECTOR})
    ids["planner"] = ensure(
        AssetKind.FUNCTION, "whatif-planner",
        ports=[Port("model_in", "in"), Port("ctrl_out", "out", "command")],
        metadata={"role": "planner", "executable": X_PLANNER})
    ids["sim"] = ensure(
        AssetKind.TOOL, "euler-sim",
        ports=[Port("model_in", "in"), Port("sim_out", "out")],
        metadata={"executable": X_SIM})
    return ids


def demo_config(ids: dict[str, str], name: str = "incubator",
                endpoint: str = "builtin:incubator?seed=1234") -> ConfigDoc:
    return ConfigDoc(
        name=name,
        c_a=CompositionSpec(
            data_refs=[ids["telemetry"]],
            model_refs=[ids["model"]],
            ft_pairs=[
                FTPair(function=ids["estimator"], tool=ids["sim"]),
                FTPair(function=ids["detector"], tool=ids["sim"]),
                FTPair(function=ids["planner"], tool=ids["sim"]),
            ],
            connections=[
                f"t_box.out -> {ids['estimator']}.t_in",
                f"heater.out -> {ids['estimator']}.heater_in",
                f"lid.out -> {ids['detector']}.lid_in",
                f"{ids['telemetry']}.feed -> {ids['estimator']}.data_in",
                f"{ids['model']}.params -> {ids['estimator']}.model_in",
                f"{ids['model']}.params -> {ids['sim']}.model_in",
                f"{ids['estimator']}.g_hat -> {ids['detector']}.g_in",
                f"{ids['planner']}.ctrl_out -> ctrl.in",
            ],
            parameters={
                "setpoint": 35.0,
                "band": 0.5,
                "conductance": MODEL_PARAMS["conductance_closed"],
                "whatif_bands": "0.25 0.5 1.0 2.0",
                "whatif_horizon_ms": 60000,
                "plan_every_ms": 0,
            },
        ),
        c_i=InfraSpec(workspace_flavour="IsolatedProcess", cpu_units=1,
                      memory_mb=256, tick_ms=100),
        c_e=ExternalSpec(endpoints=[Endpoint("dashboard", "http://localhost:0/",
                                             "out")]),
        c_pt=PTSpec(
            endpoint=endpoint,
            channels=[
                Channel("t_box", "sensor", series="inc.t_box"),
                Channel("heater", "sensor", series="inc.heater"),
                Channel("lid", "sensor", series="inc.lid"),
                Channel("ctrl", "command", target="inc.ctrl"),
            ],
        ),
    )


def demo_rules() -> list[ReconfigRule]:
    """Anomaly events switch the twin's conductance belief to mirror the box."""
    guard = 'MATCH (d:DT)-[exposes]->(c:Channel) WHERE c.name = "heater" RETURN d, c'
    return [
        ReconfigRule(id="lid-open-mirror", trigger_type="anomaly.lid-open",
                     guard=guard, applies_to="incubator",
                     transform=[("c_a.parameters.conductance",
                                 MODEL_PARAMS["conductance_open"])]),
        ReconfigRule(id="lid-closed-mirror", trigger_type="anomaly.lid-closed",
                     guard=guard, applies_to="incubator",
                     transform=[("c_a.parameters.conductance",
                                 MODEL_PARAMS["conductance_closed"])]),
    ]
