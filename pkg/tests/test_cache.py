from dentrykv.cache import LRUCache


def test_lru_eviction_order():
    c = LRUCache(3)
    for k in "abc":
        c.put(k, k.upper())
    assert c.get("a") == "A"  # a becomes most recent
    c.put("d", "D")
    assert c.get("b") is None
    assert c.get("a") == "A" and c.get("c") == "C" and c.get("d") == "D"


def test_byte_charge():
    c = LRUCache(10, charge=len)
    c.put("x", b"123456")
    c.put("y", b"1234")
    assert c.used == 10
    c.put("z", b"1")
    assert c.get("x") is None and c.used == 5
    c.put("huge", b"x" * 11)
    assert c.get("huge") is None


def test_zero_capacity_disables():
    c = LRUCache(0)
    c.put("a", 1)
    assert c.get("a") is None and len(c) == 0


def test_invalidate_if_and_counters():
    c = LRUCache(10)
    for i in range(5):
        c.put((i % 2, i), i)
    assert c.invalidate_if(lambda k: k[0] == 1) == 2
    assert len(c) == 3
    c.get((0, 0))
    c.get((1, 1))
    assert c.hits == 1 and c.misses == 1
    c.clear()
    assert len(c) == 0 and c.used == 0
