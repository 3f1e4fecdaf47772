"""Append-only content-addressed file store with a JSON resource index.

Objects are stored once under their content hash; resource ids (graphs,
scenes) are separate index entries pointing at an object, so re-posting an
identical graph yields a fresh id without duplicating bytes. Writes go
through a temp-file-then-rename step so a crashed write never corrupts the
store.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from pathlib import Path
from typing import Any


class Store:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "objects").mkdir(parents=True, exist_ok=True)
        self._index_path = self.root / "index.json"
        self._lock = threading.Lock()
        if self._index_path.exists():
            self._index = json.loads(self._index_path.read_text())
        else:
            self._index = {"resources": {}, "next_id": 1}

    def _object_path(self, digest: str) -> Path:
        d = self.root / "objects" / digest[:2]
        d.mkdir(exist_ok=True)
        return d / digest[2:]

    def _atomic_write(self, path: Path, data: bytes) -> None:
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)

    def _flush_index(self) -> None:
        self._atomic_write(self._index_path,
                           json.dumps(self._index, sort_keys=True).encode())

    def put(self, kind: str, data: bytes, meta: dict[str, Any] | None = None) -> str:
        """Store bytes, register a fresh resource id of the given kind."""
        digest = hashlib.sha256(data).hexdigest()
        with self._lock:
            obj_path = self._object_path(digest)
            if not obj_path.exists():
                self._atomic_write(obj_path, data)
            rid = f"{kind}-{self._index['next_id']:06d}"
            self._index["next_id"] += 1
            self._index["resources"][rid] = {
                "kind": kind, "object": digest, "meta": meta or {}}
            self._flush_index()
        return rid

    def get(self, rid: str) -> tuple[bytes, dict[str, Any]]:
        with self._lock:
            entry = self._index["resources"].get(rid)
        if entry is None:
            raise KeyError(rid)
        data = self._object_path(entry["object"]).read_bytes()
        return data, entry["meta"]

    def kind_of(self, rid: str) -> str | None:
        entry = self._index["resources"].get(rid)
        return entry["kind"] if entry else None
