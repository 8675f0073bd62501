"""
Quantized-point memo shared by derived fields.

Keys are integer coordinates round(x / quantum); lookups and inserts are
guarded by a lock, evaluation of misses happens outside it.
"""
import logging
import threading
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from nonlocal_acf.core.config import settings

logger = logging.getLogger(__name__)

PointKey = Tuple[int, ...]


class PointCache:
    """Thread-safe memo of scalar values keyed on quantized coordinates."""

    def __init__(self, field_key: str, quantum: Optional[float] = None):
        self.field_key = field_key
        self.quantum = quantum or settings.CACHE_QUANTUM
        self._values: Dict[PointKey, float] = {}
        self._lock = threading.Lock()
        self._dirty: Dict[PointKey, float] = {}
        self.hits = 0
        self.misses = 0

    def key(self, point: np.ndarray) -> PointKey:
        return tuple(int(v) for v in np.rint(np.asarray(point, dtype=float) / self.quantum))

    def __len__(self) -> int:
        return len(self._values)

    def get_or_compute(self, point: np.ndarray, compute: Callable[[np.ndarray], float]) -> float:
        return float(self.get_many(np.atleast_2d(point), lambda pts: [compute(p) for p in pts])[0])

    def get_many(self, points: np.ndarray, compute: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Return cached values for `points`, computing the missing ones in one batch."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        keys = [self.key(p) for p in points]
        out = np.empty(len(keys))
        missing = []
        with self._lock:
            for i, k in enumerate(keys):
                value = self._values.get(k)
                if value is None:
                    missing.append(i)
                else:
                    out[i] = value
            self.hits += len(keys) - len(missing)
            self.misses += len(missing)
        if missing:
            computed = np.asarray(compute(points[missing]), dtype=float).reshape(-1)
            out[missing] = computed
            with self._lock:
                for i, value in zip(missing, computed):
                    self._values[keys[i]] = float(value)
                    self._dirty[keys[i]] = float(value)
        return out

    def load(self) -> int:
        """Pull previously persisted values for this field from SQLite."""
        from nonlocal_acf.core.database import get_db
        from nonlocal_acf.models.cache_entry import CacheEntry

        with get_db() as db:
            rows = db.query(CacheEntry).filter(CacheEntry.field_key == self.field_key).all()
            with self._lock:
                for row in rows:
                    k = tuple(int(v) for v in row.point_key.split(","))
                    self._values.setdefault(k, row.value)
            logger.debug("Loaded %d cached points for %s", len(rows), self.field_key)
        return len(rows)

    def flush(self) -> int:
        """Persist values computed since the last flush."""
        from nonlocal_acf.core.database import get_db
        from nonlocal_acf.models.cache_entry import CacheEntry

        with self._lock:
            pending = dict(self._dirty)
            self._dirty.clear()
        if not pending:
            return 0
        with get_db() as db:
            existing = {
                row.point_key
                for row in db.query(CacheEntry.point_key).filter(CacheEntry.field_key == self.field_key)
            }
            for k, value in pending.items():
                point_key = ",".join(str(v) for v in k)
                if point_key not in existing:
                    db.add(CacheEntry(field_key=self.field_key, point_key=point_key, value=value))
            db.commit()
            logger.debug("Flushed %d points for %s", len(pending), self.field_key)
        return len(pending)


_registry: Dict[str, PointCache] = {}
_registry_lock = threading.Lock()


def cache_for(field_key: str) -> PointCache:
    """Process-wide cache for a derived field, loaded from disk when persistence is on."""
    with _registry_lock:
        cache = _registry.get(field_key)
        if cache is None:
            cache = _registry[field_key] = PointCache(field_key)
            if settings.USE_PERSISTENT_CACHE:
                cache.load()
        return cache


def flush_all() -> int:
    """Persist every registered cache; no-op unless persistence is enabled."""
    if not settings.USE_PERSISTENT_CACHE:
        return 0
    with _registry_lock:
        caches = list(_registry.values())
    return sum(c.flush() for c in caches)


def clear_registry():
    with _registry_lock:
        _registry.clear()
