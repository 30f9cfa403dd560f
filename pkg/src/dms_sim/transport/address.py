from __future__ import annotations

import re
from dataclasses import dataclass

LOCAL = "local"

_CANON = re.compile(r"(?P<host>[^/:\s]+)(?::(?P<port>\d+))?/(?P<queue>[^/\s]+)")
# DIRECT=OS:host\private$\name, spaces around '=' tolerated
_DIRECT = re.compile(
    r"DIRECT\s*=\s*OS:(?P<host>[^\\\s]+)\s*\\\s*private\$\\(?P<queue>[^\\\s]+)",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class QueueAddress:
    """Where a queue lives: ``host[:port]/queue_name``."""

    host: str
    queue: str
    port: int | None = None

    def __post_init__(self):
        if self.port is not None and not 0 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")
        if not self.queue or "/" in self.queue:
            raise ValueError(f"bad queue name {self.queue!r}")

    @property
    def is_local(self) -> bool:
        return self.host == LOCAL

    def __str__(self) -> str:
        port = f":{self.port}" if self.port is not None else ""
        return f"{self.host}{port}/{self.queue}"

    @classmethod
    def parse(cls, text: str) -> "QueueAddress":
        text = text.strip()
        m = _DIRECT.fullmatch(text)
        if m:
            return cls(m["host"], m["queue"])
        m = _CANON.fullmatch(text)
        if not m:
            raise ValueError(f"cannot parse queue address {text!r}")
        port = int(m["port"]) if m["port"] is not None else None
        return cls(m["host"], m["queue"], port)


def data_queue(lp: str) -> str:
    return f"pq-{lp}"


def sync_queue(lp: str) -> str:
    return f"sq-{lp}"
