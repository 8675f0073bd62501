import numpy as np
import pytest

from nonlocal_acf.core import cache as point_cache
from nonlocal_acf.core.cache import PointCache, cache_for, flush_all
from nonlocal_acf.core.config import settings
from nonlocal_acf.core.database import get_db, init_db, reset_engine
from nonlocal_acf.models.cache_entry import CacheEntry


@pytest.fixture
def cache_dir(tmp_path, monkeypatch):
    """Point the SQLite cache at a temporary directory."""
    monkeypatch.setattr(settings, "NONLOCAL_ACF_CACHE_DIR", str(tmp_path))
    reset_engine()
    init_db()
    yield tmp_path
    reset_engine()


def test_quantized_keys():
    cache = PointCache("test", quantum=1e-6)
    assert cache.key(np.array([0.1, -0.2])) == (100000, -200000)
    assert cache.key(np.array([0.1 + 1e-8])) == cache.key(np.array([0.1]))


def test_get_many_computes_misses_once():
    cache = PointCache("test", quantum=1e-9)
    calls = []

    def compute(points):
        calls.append(len(points))
        return points[:, 0] ** 2

    points = np.array([[0.5], [1.5]])
    assert cache.get_many(points, compute).tolist() == [0.25, 2.25]
    assert cache.get_many(np.array([[1.5], [2.0]]), compute).tolist() == [2.25, 4.0]
    assert calls == [2, 1]
    assert cache.hits == 1 and cache.misses == 3
    assert len(cache) == 3


def test_get_or_compute():
    cache = PointCache("test")
    assert cache.get_or_compute(np.array([3.0]), lambda p: float(p[0]) + 1.0) == 4.0
    assert cache.get_or_compute(np.array([3.0]), lambda p: -1.0) == 4.0


def test_registry_shares_caches(monkeypatch):
    monkeypatch.setattr(settings, "USE_PERSISTENT_CACHE", False)
    assert cache_for("a") is cache_for("a")
    assert cache_for("a") is not cache_for("b")
    assert flush_all() == 0


def test_flush_and_reload(cache_dir):
    cache = PointCache("field[x]", quantum=1e-9)
    cache.get_many(np.array([[0.1], [0.2]]), lambda pts: pts[:, 0] * 10.0)
    assert cache.flush() == 2
    assert cache.flush() == 0
    assert (cache_dir / "points.db").exists()

    fresh = PointCache("field[x]", quantum=1e-9)
    assert fresh.load() == 2
    values = fresh.get_many(np.array([[0.1], [0.2]]), lambda pts: pytest.fail("value should be cached"))
    assert values == pytest.approx([1.0, 2.0])
    assert PointCache("field[y]").load() == 0


def test_flush_all_persists_registered_caches(cache_dir, monkeypatch):
    monkeypatch.setattr(settings, "USE_PERSISTENT_CACHE", True)
    point_cache.clear_registry()
    cache_for("persisted").get_many(np.array([[0.3]]), lambda pts: pts[:, 0])
    assert flush_all() == 1
    point_cache.clear_registry()
    assert len(cache_for("persisted")) == 1


def test_flushed_rows_are_visible_through_get_db(cache_dir):
    assert CacheEntry.__tablename__ == "cacheentry"
    cache = PointCache("field[z]", quantum=1e-9)
    cache.get_many(np.array([[0.4], [0.5], [0.6]]), lambda pts: pts[:, 0])
    assert cache.flush() == 3
    with get_db() as db:
        rows = db.query(CacheEntry).filter(CacheEntry.field_key == "field[z]").all()
        assert sorted(row.value for row in rows) == pytest.approx([0.4, 0.5, 0.6])
