"""In-process message bus that records every inter-agent message.

Privacy and sensor-lifecycle properties are checked as assertions over the
recorded log. ``PMM_LOG`` sets verbosity: ``0``/unset silent, ``1`` one line
per message kind, ``2`` every message.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field

log = logging.getLogger("pmm.events")

MA = "MA"
MP = "MP"


@dataclass(frozen=True)
class Event:
    seq: int
    sender: str
    receiver: str
    kind: str
    payload: bytes = b""

    def line(self) -> str:
        return f"{self.seq} {self.sender} -> {self.receiver} {self.kind} {len(self.payload)}B"


@dataclass
class EventBus:
    events: list[Event] = field(default_factory=list)
    verbosity: int = field(default_factory=lambda: int(os.environ.get("PMM_LOG", "0") or 0))

    def send(self, sender: str, receiver: str, kind: str, payload: bytes = b"") -> Event:
        ev = Event(len(self.events), sender, receiver, kind, bytes(payload))
        self.events.append(ev)
        if self.verbosity >= 2 or (self.verbosity == 1 and kind not in self._seen_kinds()):
            log.info(ev.line())
        return ev

    def _seen_kinds(self) -> set[str]:
        return {e.kind for e in self.events[:-1]}

    def received_by(self, party: str) -> list[Event]:
        return [e for e in self.events if e.receiver == party]

    def of_kind(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]

    def digest(self) -> str:
        h = hashlib.sha256()
        for e in self.events:
            for part in (e.sender, e.receiver, e.kind):
                b = part.encode()
                h.update(len(b).to_bytes(4, "big") + b)
            h.update(len(e.payload).to_bytes(4, "big") + e.payload)
        return h.hexdigest()


class NullBus(EventBus):
    """Bus that drops messages; used when an operation runs outside the harness."""

    def send(self, sender: str, receiver: str, kind: str, payload: bytes = b"") -> Event:
        return Event(-1, sender, receiver, kind, bytes(payload))
