"""Local emulations of object storage, key-value storage, and queuing.

All three backends are in-memory, thread-safe, and take their notion of
time from an injected ``clock`` callable (milliseconds), so they behave
identically under the simulator's virtual clock and under test-driven
fake clocks.  Latency is *not* modeled here; callers charge it on the
virtual timeline.
"""

from __future__ import annotations

import itertools
import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from random import Random
from typing import Callable, Optional

Clock = Callable[[], float]

OBJECT_KEY_RE = re.compile(
    r"^[0-9a-f-]{36}/[^/]+/[0-9a-f-]{36}\.json$"
)


def _zero_clock() -> float:
    return 0.0


class StorageFaultError(RuntimeError):
    """Injected backend fault."""


class ThrottledError(RuntimeError):
    """Write rejected by the provisioning throttle; store unchanged."""


def is_shuffle_object_key(key: str) -> bool:
    """Keys look like ``{execution_id}/{partition_key}/{instance_id}.json``."""
    return bool(OBJECT_KEY_RE.match(key))


# -- token bucket ----------------------------------------------------------


@dataclass
class ThrottlePolicy:
    sustained_ops_per_sec: float = 0.0
    burst_capacity: float = 0.0
    enabled: bool = False


class TokenBucket:
    """Standard token bucket; available tokens never exceed the burst cap."""

    def __init__(self, policy: ThrottlePolicy, clock: Clock):
        self.policy = policy
        self._clock = clock
        self._tokens = float(policy.burst_capacity)
        self._last = clock()
        self._lock = threading.Lock()

    def try_acquire(self, n: float = 1.0) -> bool:
        if not self.policy.enabled:
            return True
        with self._lock:
            now = self._clock()
            elapsed_s = max(0.0, now - self._last) / 1000.0
            self._last = now
            self._tokens = min(
                self.policy.burst_capacity,
                self._tokens + elapsed_s * self.policy.sustained_ops_per_sec,
            )
            if self._tokens >= n:
                self._tokens -= n
                return True
            return False


# -- object store ----------------------------------------------------------


class ObjectStore:
    """Prefix-addressed blob store; last writer wins, listing is sorted."""

    def __init__(self, fault_rate: float = 0.0, fault_seed: int = 0):
        self._objects: dict[str, bytes] = {}
        self._lock = threading.RLock()
        self.fault_rate = fault_rate
        self._fault_rng = Random(fault_seed)

    def put(self, key: str, body: bytes) -> None:
        if self.fault_rate > 0.0 and self._fault_rng.random() < self.fault_rate:
            raise StorageFaultError(f"injected fault on put {key!r}")
        with self._lock:
            self._objects[key] = bytes(body)

    def get(self, key: str) -> bytes:
        with self._lock:
            try:
                return self._objects[key]
            except KeyError:
                raise KeyError(f"no such object {key!r}") from None

    def delete(self, key: str) -> None:
        with self._lock:
            self._objects.pop(key, None)

    def list(self, prefix: str = "") -> list[str]:
        with self._lock:
            return sorted(k for k in self._objects if k.startswith(prefix))

    def size(self, key: str) -> int:
        return len(self.get(key))

    def __len__(self) -> int:
        return len(self._objects)

    def dump_to_dir(self, root: Path | str) -> None:
        """Mirror stored keys as files under ``root`` for inspection."""
        root = Path(root)
        with self._lock:
            for key, body in self._objects.items():
                path = root / key
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(body)


# -- key-value store -------------------------------------------------------


@dataclass(frozen=True, slots=True)
class KvItem:
    """Item in the shuffle table.

    The physical sort key combines the writing invocation's instance id
    with the partition key, because one invocation emits one item per
    partition key and (hash_key, sort_key) must stay unique.
    """

    hash_key: str
    sort_key: str
    lsi_sort_key: str
    payload: dict


@dataclass(slots=True)
class CounterWrite:
    at_ms: float
    execution_id: str
    fieldname: str
    value: int


class KvStore:
    """Key-value tables: shuffle items (with an LSI), counters, results.

    ``counter_add`` is atomic and linearizable; the write history is kept
    for event-order audits.
    """

    def __init__(self, clock: Clock = _zero_clock,
                 throttle: Optional[ThrottlePolicy] = None):
        self._clock = clock
        self._lock = threading.RLock()
        self._items: dict[str, dict[str, KvItem]] = {}
        self._counters: dict[str, dict[str, int]] = {}
        self._results: dict[str, dict[str, tuple[int, int]]] = {}
        self.counter_history: list[CounterWrite] = []
        self.bucket = TokenBucket(throttle or ThrottlePolicy(), clock)
        self.throttled_writes = 0

    # shuffle table

    def put_item(self, item: KvItem) -> None:
        if not self.bucket.try_acquire():
            with self._lock:
                self.throttled_writes += 1
            raise ThrottledError(
                f"write capacity exceeded for {item.hash_key}/{item.sort_key}"
            )
        with self._lock:
            self._items.setdefault(item.hash_key, {})[item.sort_key] = item

    def get_item(self, hash_key: str, sort_key: str) -> Optional[KvItem]:
        with self._lock:
            return self._items.get(hash_key, {}).get(sort_key)

    def delete_item(self, hash_key: str, sort_key: str) -> None:
        with self._lock:
            self._items.get(hash_key, {}).pop(sort_key, None)

    def query_lsi(self, hash_key: str, lsi_sort_key: str) -> list[KvItem]:
        """All items under ``hash_key`` whose index key matches, sort-key order."""
        with self._lock:
            bucket = self._items.get(hash_key, {})
            return [
                bucket[k] for k in sorted(bucket) if bucket[k].lsi_sort_key == lsi_sort_key
            ]

    def scan(self, hash_key: str) -> list[KvItem]:
        with self._lock:
            bucket = self._items.get(hash_key, {})
            return [bucket[k] for k in sorted(bucket)]

    # counters

    def counter_add(self, execution_id: str, fieldname: str, delta: int) -> int:
        if fieldname not in ("ingested", "mapped"):
            raise ValueError(f"unknown counter field {fieldname!r}")
        if delta < 1:
            raise ValueError("delta must be >= 1")
        with self._lock:
            row = self._counters.setdefault(execution_id, {"ingested": 0, "mapped": 0})
            row[fieldname] += delta
            value = row[fieldname]
            self.counter_history.append(
                CounterWrite(self._clock(), execution_id, fieldname, value)
            )
            return value

    def counter_get(self, execution_id: str) -> tuple[int, int]:
        with self._lock:
            row = self._counters.get(execution_id, {"ingested": 0, "mapped": 0})
            return row["ingested"], row["mapped"]

    # results table

    def put_result(self, execution_id: str, carrier: str, delay_sum: int, count: int) -> None:
        with self._lock:
            self._results.setdefault(execution_id, {})[carrier] = (delay_sum, count)

    def list_results(self, execution_id: str) -> list[tuple[str, int, int]]:
        with self._lock:
            rows = self._results.get(execution_id, {})
            return [(c, s, n) for c, (s, n) in sorted(rows.items())]


# -- queue -----------------------------------------------------------------


@dataclass(slots=True)
class _QueueEntry:
    body: str
    enqueued_at: float
    receive_count: int = 0
    visible_at: float = 0.0
    receipt: Optional[int] = None


@dataclass(frozen=True, slots=True)
class ReceivedMessage:
    receipt: int
    body: str
    receive_count: int


class MessageQueue:
    """At-least-once queue with visibility timeout and dead-letter routing.

    A message delivered ``max_receives`` times without being deleted moves
    to the DLQ when its last visibility timeout expires.  Receipts are
    single-use tokens, so concurrent consumers cannot double-delete.
    """

    def __init__(
        self,
        clock: Clock = _zero_clock,
        visibility_timeout_ms: float = 30_000.0,
        max_receives: int = 3,
    ):
        self._clock = clock
        self.visibility_timeout_ms = visibility_timeout_ms
        self.max_receives = max_receives
        self._lock = threading.RLock()
        self._entries: dict[int, _QueueEntry] = {}
        self._order: list[int] = []
        self._ids = itertools.count(1)
        self._receipts = itertools.count(1)
        self._receipt_to_id: dict[int, int] = {}
        self.dlq_bodies: list[str] = []
        self.sent_count = 0
        self.deleted_count = 0

    def send(self, body: str) -> None:
        with self._lock:
            mid = next(self._ids)
            self._entries[mid] = _QueueEntry(body=body, enqueued_at=self._clock())
            self._order.append(mid)
            self.sent_count += 1

    def _sweep(self, now: float) -> None:
        # Expire visibility; retire exhausted messages to the DLQ.
        for mid in list(self._order):
            entry = self._entries.get(mid)
            if entry is None:
                continue
            if entry.receipt is not None and now >= entry.visible_at:
                entry.receipt = None
                if entry.receive_count >= self.max_receives:
                    self._retire(mid, entry)

    def _retire(self, mid: int, entry: _QueueEntry) -> None:
        del self._entries[mid]
        self._order.remove(mid)
        self.dlq_bodies.append(entry.body)

    def receive(self, max_messages: int = 1) -> list[ReceivedMessage]:
        if max_messages < 1:
            raise ValueError("max_messages must be >= 1")
        now = self._clock()
        out: list[ReceivedMessage] = []
        with self._lock:
            self._sweep(now)
            for mid in self._order:
                if len(out) >= max_messages:
                    break
                entry = self._entries[mid]
                if entry.receipt is not None:
                    continue  # in flight
                receipt = next(self._receipts)
                entry.receipt = receipt
                entry.receive_count += 1
                entry.visible_at = now + self.visibility_timeout_ms
                self._receipt_to_id[receipt] = mid
                out.append(
                    ReceivedMessage(receipt=receipt, body=entry.body,
                                    receive_count=entry.receive_count)
                )
        return out

    def delete(self, receipt: int) -> bool:
        """Delete by receipt; False when the receipt is stale or reused."""
        now = self._clock()
        with self._lock:
            mid = self._receipt_to_id.pop(receipt, None)
            if mid is None:
                return False
            entry = self._entries.get(mid)
            if entry is None or entry.receipt != receipt or now >= entry.visible_at:
                return False
            del self._entries[mid]
            self._order.remove(mid)
            self.deleted_count += 1
            return True

    def visible_count(self) -> int:
        now = self._clock()
        with self._lock:
            self._sweep(now)
            return sum(1 for e in self._entries.values() if e.receipt is None)

    def in_flight_count(self) -> int:
        with self._lock:
            return sum(1 for e in self._entries.values() if e.receipt is not None)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def dlq_count(self) -> int:
        return len(self.dlq_bodies)
