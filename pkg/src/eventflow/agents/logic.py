"""Persistent screening logic (global text plus per-venue texts) with full version history."""

from __future__ import annotations

import copy
import json
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_GLOBAL_LOGIC = """\
- Attendance and venue capacity set the size of the traffic change; larger crowds mean larger and wider effects.
- Arrivals build up before the start time and departures peak right after the end; keep both phases.
- Events that overlap weekday rush hours compound congestion on the main access roads.
- Note the direction most visitors arrive from; sensors on that side see the strongest change.
- Ignore online chatter that says nothing about attendance, timing or travel."""


@dataclass
class LogicStore:
    """Global and per-venue screening logic.

    ``revision`` starts at 1 and every update bumps it by one.  ``history``
    keeps a snapshot of every revision, oldest first, so
    ``len(history) == revision`` and ``history[-2]`` is the version an update
    replaced.  Updates are serialised by a lock and, when the store has a
    path, persisted with write-then-rename.
    """

    logic_global: str = DEFAULT_GLOBAL_LOGIC
    logic_venue: dict[str, str] = field(default_factory=dict)
    revision: int = 1
    history: list[dict] = field(default_factory=list)
    path: Path | None = None
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    def __post_init__(self):
        if not self.history:
            self.history = [self._snapshot()]
        if len(self.history) != self.revision:
            raise ValueError(f"logic store history has {len(self.history)} entries but revision is {self.revision}")

    def _snapshot(self) -> dict:
        return {"revision": self.revision, "logic_global": self.logic_global, "logic_venue": dict(self.logic_venue)}

    def logic_for(self, venue_id: str | None = None) -> str:
        """Text handed to the mobility analyser: global logic plus the venue's own, if any."""
        with self._lock:
            text = self.logic_global.strip()
            venue = self.logic_venue.get(venue_id or "", "").strip()
            if venue:
                text += f"\n\nVenue-specific logic ({venue_id}):\n{venue}"
            return text

    def update(self, logic_global: str | None = None, venues: dict[str, str] | None = None) -> int:
        """Apply one revision (global and any venue texts together) and persist it."""
        with self._lock:
            if logic_global is not None and not logic_global.strip():
                raise ValueError("global logic cannot become empty")
            prev = (self.logic_global, dict(self.logic_venue), self.revision, list(self.history))
            if logic_global is not None:
                self.logic_global = logic_global
            self.logic_venue.update(venues or {})
            self.revision += 1
            self.history.append(self._snapshot())
            if self.path is not None:
                try:
                    self.save(self.path)
                except OSError:
                    self.logic_global, self.logic_venue, self.revision, self.history = prev
                    raise
            return self.revision

    def to_json(self) -> dict:
        with self._lock:
            return {
                "logic_global": self.logic_global,
                "logic_venue": dict(self.logic_venue),
                "revision": self.revision,
                "history": copy.deepcopy(self.history),
            }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = self.to_json()
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                json.dump(doc, fh, indent=2, sort_keys=True)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "LogicStore":
        with open(path) as fh:
            doc = json.load(fh)
        store = cls(doc["logic_global"], dict(doc.get("logic_venue", {})), int(doc["revision"]), list(doc["history"]))
        store.path = Path(path)
        return store

    @classmethod
    def open(cls, path) -> "LogicStore":
        """Load ``path`` if it exists, otherwise create a fresh store bound to it."""
        path = Path(path)
        if path.exists():
            return cls.load(path)
        store = cls(path=path)
        store.save(path)
        return store
