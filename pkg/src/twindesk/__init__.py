"""Desk-scale digital twin platform.

Reusable asset library, composition grammar validation, lifecycle
orchestration, workspace execution, time-series telemetry, a property-graph
view of twin configurations, and a built-in incubator demo that closes the
monitor/analyse/plan/execute loop.
"""

__version__ = "0.1.0"
