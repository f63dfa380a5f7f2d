"""Small shared helpers: ids, time, name slugs."""

from __future__ import annotations

import re
import time
import uuid

_SLUG_RE = re.compile(r"[^a-z0-9-]+")


def slugify(text: str) -> str:
    """Lowercase, dash-separated form safe for ids and file names."""
    s = _SLUG_RE.sub("-", text.lower()).strip("-")
    return s or "x"


def fresh_id(prefix: str) -> str:
    return f"{prefix}-{uuid.uuid4().hex[:12]}"


def now_ms() -> int:
    """Wall-clock milliseconds since the UTC epoch."""
    return int(time.time() * 1000)
