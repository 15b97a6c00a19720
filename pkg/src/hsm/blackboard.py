"""Shared keyed store visible to every state in one execution.

One Blackboard instance is threaded through an entire run, including nested
machines, so a value written at any depth is readable at any other depth.
Values are restricted to a closed taxonomy -- bool, int, float, str, plus
lists and string-keyed dicts of the same -- so they stay serializable for
the definition format and the monitor protocol.
"""

from __future__ import annotations

import threading
from typing import Union

from .errors import EmptyKey, InvalidValue, KeyNotFound

Value = Union[bool, int, float, str, list, dict]


def check_value(value, path: str = "value") -> None:
    """Raise InvalidValue unless `value` fits the supported taxonomy."""
    if isinstance(value, (bool, str)):
        return
    if isinstance(value, (int, float)):
        return
    if isinstance(value, list):
        for i, item in enumerate(value):
            check_value(item, f"{path}[{i}]")
        return
    if isinstance(value, dict):
        for k, v in value.items():
            if not isinstance(k, str):
                raise InvalidValue(f"{path}: mapping keys must be strings, got {type(k).__name__}")
            check_value(v, f"{path}.{k}")
        return
    raise InvalidValue(f"{path}: unsupported type {type(value).__name__}")


class Blackboard:
    """Thread-safe key/value store with exact-match, case-sensitive keys.

    Reads and writes are serialized by one lock, so a read always observes
    the most recent completed write; monitor snapshots may read while the
    executing thread writes.
    """

    def __init__(self, seed: dict | None = None):
        self._lock = threading.RLock()
        self._entries: dict[str, Value] = {}
        if seed:
            for key, value in seed.items():
                self.set(key, value)

    def set(self, key: str, value: Value) -> None:
        if not isinstance(key, str) or key == "":
            raise EmptyKey("blackboard keys must be non-empty strings")
        check_value(value)
        with self._lock:
            self._entries[key] = value

    def get(self, key: str) -> Value:
        with self._lock:
            try:
                return self._entries[key]
            except KeyError:
                raise KeyNotFound(key) from None

    def contains(self, key: str) -> bool:
        with self._lock:
            return key in self._entries

    def remove(self, key: str) -> Value | None:
        """Remove and return the stored value, or None if the key is absent."""
        with self._lock:
            return self._entries.pop(key, None)

    def keys(self) -> list[str]:
        with self._lock:
            return list(self._entries)

    def __contains__(self, key: str) -> bool:
        return self.contains(key)

    def __repr__(self) -> str:
        with self._lock:
            return f"Blackboard({self._entries!r})"
