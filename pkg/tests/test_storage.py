import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microreduce.storage import (
    KvItem,
    KvStore,
    MessageQueue,
    ObjectStore,
    StorageFaultError,
    ThrottledError,
    ThrottlePolicy,
    TokenBucket,
    is_shuffle_object_key,
)

from conftest import FakeClock


class TestObjectStore:
    def test_read_your_write(self):
        store = ObjectStore()
        store.put("k", b"body")
        assert store.get("k") == b"body"

    def test_last_writer_wins(self):
        store = ObjectStore()
        store.put("k", b"one")
        store.put("k", b"two")
        assert store.get("k") == b"two"

    def test_missing_key_raises(self):
        with pytest.raises(KeyError):
            ObjectStore().get("nope")

    def test_forced_fault_rate(self):
        store = ObjectStore(fault_rate=1.0)
        with pytest.raises(StorageFaultError):
            store.put("k", b"x")
        assert len(store) == 0

    def test_list_prefix_sorted(self):
        store = ObjectStore()
        assert store.list("anything") == []
        for key in ("e/AA/2.json", "e/BB/1.json", "e/AA/1.json"):
            store.put(key, b"x")
        assert store.list("e/AA/") == ["e/AA/1.json", "e/AA/2.json"]
        assert store.list("") == sorted(["e/AA/1.json", "e/AA/2.json", "e/BB/1.json"])

    def test_dump_to_dir(self, tmp_path):
        store = ObjectStore()
        store.put("run/AA/x.json", b"{}")
        store.dump_to_dir(tmp_path)
        assert (tmp_path / "run" / "AA" / "x.json").read_bytes() == b"{}"


def test_shuffle_key_shape():
    eid = "0" * 8 + "-" + "-".join(["0" * 4] * 3) + "-" + "0" * 12
    good = f"{eid}/AA/{eid}.json"
    assert is_shuffle_object_key(good)
    assert not is_shuffle_object_key(f"{eid}/AA/extra/{eid}.json")
    assert not is_shuffle_object_key(f"{eid}/AA/{eid}.txt")


class TestTokenBucket:
    def test_burst_arithmetic(self):
        clock = FakeClock()
        bucket = TokenBucket(ThrottlePolicy(0.0, 5.0, enabled=True), clock)
        results = [bucket.try_acquire() for _ in range(6)]
        assert results == [True] * 5 + [False]

    def test_disabled_policy_never_throttles(self):
        bucket = TokenBucket(ThrottlePolicy(0.0, 0.0, enabled=False), FakeClock())
        assert all(bucket.try_acquire() for _ in range(100))

    def test_refill_capped_at_burst(self):
        clock = FakeClock()
        bucket = TokenBucket(ThrottlePolicy(10.0, 3.0, enabled=True), clock)
        for _ in range(3):
            assert bucket.try_acquire()
        clock.advance(60_000)  # a minute refills far beyond the cap
        results = [bucket.try_acquire() for _ in range(4)]
        assert results == [True, True, True, False]

    @given(
        rate=st.floats(0.0, 50.0),
        burst=st.floats(0.0, 20.0),
        gaps_ms=st.lists(st.floats(0.0, 2_000.0), min_size=1, max_size=60),
    )
    @settings(max_examples=150)
    def test_window_bound(self, rate, burst, gaps_ms):
        # over any demand window, grants <= burst + rate * elapsed
        clock = FakeClock()
        bucket = TokenBucket(ThrottlePolicy(rate, burst, enabled=True), clock)
        granted = 0
        for gap in gaps_ms:
            clock.advance(gap)
            if bucket.try_acquire():
                granted += 1
        elapsed_s = sum(gaps_ms) / 1000.0
        assert granted <= burst + rate * elapsed_s + 1e-6


class TestKvStore:
    def item(self, hk="h", sk="i1#AA", lsi="AA", n=1):
        return KvItem(hk, sk, lsi, {"n": n})

    def test_put_get_query(self):
        kv = KvStore()
        kv.put_item(self.item(sk="i1#AA", lsi="AA"))
        kv.put_item(self.item(sk="i2#AA", lsi="AA"))
        kv.put_item(self.item(sk="i1#BB", lsi="BB"))
        assert kv.get_item("h", "i1#AA") is not None
        assert [it.sort_key for it in kv.query_lsi("h", "AA")] == ["i1#AA", "i2#AA"]
        assert kv.query_lsi("h", "ZZ") == []
        assert len(kv.scan("h")) == 3

    def test_primary_key_unique_last_write_wins(self):
        kv = KvStore()
        kv.put_item(self.item(n=1))
        kv.put_item(self.item(n=2))
        assert kv.get_item("h", "i1#AA").payload["n"] == 2
        assert len(kv.scan("h")) == 1

    def test_lsi_union_equals_scan(self):
        kv = KvStore()
        for i in range(10):
            lsi = "AA" if i % 3 else "BB"
            kv.put_item(self.item(sk=f"i{i}#{lsi}", lsi=lsi))
        union = {it.sort_key for it in kv.query_lsi("h", "AA")} | {
            it.sort_key for it in kv.query_lsi("h", "BB")
        }
        assert union == {it.sort_key for it in kv.scan("h")}

    def test_throttled_write_leaves_store_unchanged(self):
        kv = KvStore(throttle=ThrottlePolicy(0.0, 1.0, enabled=True))
        kv.put_item(self.item(sk="a#AA"))
        with pytest.raises(ThrottledError):
            kv.put_item(self.item(sk="b#AA"))
        assert len(kv.scan("h")) == 1
        assert kv.throttled_writes == 1

    def test_counter_basics(self):
        kv = KvStore()
        assert kv.counter_add("e", "ingested", 12) == 12
        assert kv.counter_add("e", "ingested", 3) == 15
        assert kv.counter_get("e") == (15, 0)
        assert kv.counter_get("unknown") == (0, 0)
        with pytest.raises(ValueError):
            kv.counter_add("e", "bogus", 1)
        with pytest.raises(ValueError):
            kv.counter_add("e", "mapped", 0)

    def test_counter_replay_to_recorded_total(self):
        # replaying a recorded workload of batched increments reproduces
        # the recorded final value exactly
        kv = KvStore()
        total = 1_299_481
        step = 4_999
        added = 0
        while added < total:
            delta = min(step, total - added)
            kv.counter_add("job", "ingested", delta)
            kv.counter_add("job", "mapped", delta)
            added += delta
        assert kv.counter_get("job") == (total, total)

    def test_concurrent_counter_adds_are_lost_update_free(self):
        kv = KvStore()
        threads = [
            threading.Thread(
                target=lambda: [kv.counter_add("e", "mapped", 1) for _ in range(250)]
            )
            for _ in range(8)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert kv.counter_get("e") == (0, 2000)
        # history is monotone per field
        values = [w.value for w in kv.counter_history if w.fieldname == "mapped"]
        assert values == sorted(values)


class TestQueue:
    def test_send_receive_delete(self):
        clock = FakeClock()
        q = MessageQueue(clock=clock)
        q.send("m1")
        got = q.receive(max_messages=10)
        assert [m.body for m in got] == ["m1"]
        assert q.delete(got[0].receipt)
        assert len(q) == 0
        assert q.visible_count() == 0

    def test_invisible_while_in_flight(self):
        clock = FakeClock()
        q = MessageQueue(clock=clock)
        q.send("m1")
        q.receive()
        assert q.receive() == []
        assert q.in_flight_count() == 1

    def test_redelivery_after_visibility_timeout(self):
        clock = FakeClock()
        q = MessageQueue(clock=clock, visibility_timeout_ms=30_000)
        q.send("m1")
        first = q.receive()[0]
        assert first.receive_count == 1
        clock.advance(30_001)
        second = q.receive()[0]
        assert second.receive_count == 2
        assert second.body == "m1"
        # the stale receipt can no longer delete
        assert not q.delete(first.receipt)
        assert q.delete(second.receipt)

    def test_dlq_after_max_receives(self):
        clock = FakeClock()
        q = MessageQueue(clock=clock, visibility_timeout_ms=1_000, max_receives=3)
        q.send("poison")
        deliveries = 0
        for _ in range(10):
            got = q.receive()
            deliveries += len(got)  # consumer always fails: never deletes
            clock.advance(1_001)
        assert deliveries == 3
        assert q.dlq_count() == 1
        assert q.dlq_bodies == ["poison"]
        assert len(q) == 0

    def test_receipts_are_single_use(self):
        q = MessageQueue(clock=FakeClock())
        q.send("m")
        receipt = q.receive()[0].receipt
        assert q.delete(receipt)
        assert not q.delete(receipt)

    def test_conservation_under_random_consumers(self):
        # every message ends deleted once or dead-lettered, never lost
        import random

        rng = random.Random(99)
        clock = FakeClock()
        q = MessageQueue(clock=clock, visibility_timeout_ms=500, max_receives=3)
        n = 120
        for i in range(n):
            q.send(f"m{i}")
        for _ in range(3_000):
            clock.advance(rng.uniform(0, 400))
            for msg in q.receive(max_messages=rng.randrange(1, 4)):
                if rng.random() < 0.5:
                    assert q.delete(msg.receipt)
            if len(q) == 0:
                break
        clock.advance(10_000)
        q.receive()  # final sweep
        assert q.deleted_count + q.dlq_count() == n
        assert len(q) == 0
