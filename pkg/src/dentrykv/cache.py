"""Small thread-safe LRU caches for values and directory handles."""

from __future__ import annotations

import threading
from collections import OrderedDict
from typing import Callable, Generic, Hashable, TypeVar

V = TypeVar("V")


class LRUCache(Generic[V]):
    """LRU map bounded by total charge (bytes for values, 1 per handle).

    A capacity of 0 disables caching entirely.
    """

    def __init__(self, capacity: int, charge: Callable[[V], int] = lambda _v: 1):
        self.capacity = capacity
        self._charge = charge
        self._data: OrderedDict[Hashable, tuple[V, int]] = OrderedDict()
        self.used = 0
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._data)

    def get(self, key: Hashable) -> V | None:
        with self._lock:
            item = self._data.get(key)
            if item is None:
                self.misses += 1
                return None
            self._data.move_to_end(key)
            self.hits += 1
            return item[0]

    def put(self, key: Hashable, value: V) -> None:
        cost = self._charge(value)
        if cost > self.capacity:
            return
        with self._lock:
            old = self._data.pop(key, None)
            if old is not None:
                self.used -= old[1]
            self._data[key] = (value, cost)
            self.used += cost
            while self.used > self.capacity:
                _, (_, c) = self._data.popitem(last=False)
                self.used -= c

    def invalidate_if(self, pred: Callable[[Hashable], bool]) -> int:
        with self._lock:
            doomed = [k for k in self._data if pred(k)]
            for k in doomed:
                self.used -= self._data.pop(k)[1]
            return len(doomed)

    def clear(self) -> None:
        with self._lock:
            self._data.clear()
            self.used = 0
