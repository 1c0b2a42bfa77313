"""Append-only run ledger: line-delimited JSON, replayable byte-for-byte.

Every agent call, decision, metric, and review lands here. Writes are
serialized through a single appender lock; decision and review entries are
fsynced so a crash never loses an accepted verdict. A truncated final line
(torn write) is detected on open and trimmed, and appending resumes from the
last complete entry.
"""

from __future__ import annotations

import hashlib
import os
import threading
from pathlib import Path
from typing import Any, Callable

from .model import EventKind, RunLedgerEntry, canonical_json, system_clock

Clock = Callable[[], Any]


def _scan_complete_entries(path: Path) -> tuple[list[RunLedgerEntry], int]:
    """Parse entries from disk, returning (entries, byte offset of last good line)."""
    entries: list[RunLedgerEntry] = []
    good_offset = 0
    with open(path, "rb") as fh:
        data = fh.read()
    start = 0
    while start < len(data):
        newline = data.find(b"\n", start)
        if newline < 0:
            break  # no terminator: torn final line
        line = data[start : newline]
        try:
            entries.append(RunLedgerEntry.from_dict(_loads(line)))
        except Exception:
            break  # corrupt line: everything after is suspect
        start = newline + 1
        good_offset = start
    return entries, good_offset


def _loads(line: bytes) -> dict[str, Any]:
    import json

    obj = json.loads(line.decode("utf-8"))
    if not isinstance(obj, dict):
        raise ValueError("ledger line is not an object")
    return obj


class Ledger:
    """Single-appender event log for one run.

    With ``path=None`` the ledger is memory-only (handy for unit tests and
    free-standing module use); otherwise entries are appended to disk as
    canonical JSON lines.
    """

    def __init__(self, path: str | Path | None = None, clock: Clock = system_clock):
        self._path = Path(path) if path is not None else None
        self._clock = clock
        self._lock = threading.Lock()
        self.entries: list[RunLedgerEntry] = []
        self._fh = None
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            if self._path.exists():
                self.entries, good = _scan_complete_entries(self._path)
                if good < self._path.stat().st_size:
                    with open(self._path, "r+b") as fh:
                        fh.truncate(good)
            self._fh = open(self._path, "ab")
        self._next_seq = self.entries[-1].sequence_no + 1 if self.entries else 1

    def append(self, kind: EventKind, payload: dict[str, Any]) -> RunLedgerEntry:
        with self._lock:
            entry = RunLedgerEntry(
                sequence_no=self._next_seq,
                timestamp=self._clock(),
                event_kind=kind,
                payload=payload,
            )
            self._next_seq += 1
            self.entries.append(entry)
            if self._fh is not None:
                self._fh.write((canonical_json(entry.to_dict()) + "\n").encode("utf-8"))
                self._fh.flush()
                if kind in (EventKind.DECISION, EventKind.REVIEW):
                    os.fsync(self._fh.fileno())
            return entry

    def decision(self, stage: str, **fields: Any) -> RunLedgerEntry:
        payload = {"schema": "decision", "stage": stage, **fields}
        return self.append(EventKind.DECISION, payload)

    def of_kind(self, kind: EventKind) -> list[RunLedgerEntry]:
        return [e for e in self.entries if e.event_kind == kind]

    def stages(self) -> set[str]:
        """Distinct pipeline stages that produced any entry."""
        return {
            e.payload["stage"] for e in self.entries if "stage" in e.payload
        }

    def digest(self) -> str:
        """SHA-256 over the canonical byte stream of all entries."""
        hasher = hashlib.sha256()
        for entry in self.entries:
            hasher.update((canonical_json(entry.to_dict()) + "\n").encode("utf-8"))
        return hasher.hexdigest()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "Ledger":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_ledger(path: str | Path) -> list[RunLedgerEntry]:
    """Read all complete entries from a ledger file, ignoring a torn tail."""
    entries, _ = _scan_complete_entries(Path(path))
    return entries


def file_digest(path: str | Path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
