"""Simulated Function-as-a-Service executor.

Each invocation runs as a process on the virtual clock: cold-start
initialization, compute charged through the calibration table with
memory-derived worker parallelism, a hard timeout, GB-ms billing, an
account-wide concurrency ceiling with FIFO overflow queuing, and
queue-driven consumer pools that scale by a fixed step per virtual minute.
"""

from __future__ import annotations

import csv
import io
import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import Any, Callable, Optional

from .calibration import CalibrationTable, vcpus
from .core import new_execution_id
from .sim import Event, Interrupted, Process, Simulator
from .storage import KvStore, MessageQueue, ObjectStore

LEDGER_COLUMNS = (
    "function",
    "execution_id",
    "instance_id",
    "cold_start",
    "init_ms",
    "duration_ms",
    "billed_gb_ms",
    "max_mem_used_mb",
    "outcome",
)

MAX_TIMEOUT_MS = 900_000
MIN_MEMORY_MB = 128
MAX_MEMORY_MB = 10_240


@dataclass(frozen=True, slots=True)
class FunctionConfig:
    name: str
    memory_mb: int
    timeout_ms: int = MAX_TIMEOUT_MS
    workers: int = 1

    def __post_init__(self):
        if not MIN_MEMORY_MB <= self.memory_mb <= MAX_MEMORY_MB:
            raise ValueError(f"memory_mb {self.memory_mb} outside [128, 10240]")
        if not 0 < self.timeout_ms <= MAX_TIMEOUT_MS:
            raise ValueError(f"timeout_ms {self.timeout_ms} outside (0, {MAX_TIMEOUT_MS}]")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if self.workers > vcpus(self.memory_mb):
            raise ValueError(
                f"workers {self.workers} exceeds {vcpus(self.memory_mb)} vCPUs "
                f"at {self.memory_mb} MB"
            )

    @property
    def vcpus(self) -> int:
        return vcpus(self.memory_mb)


@dataclass(frozen=True, slots=True)
class RuntimeLimits:
    account_concurrency: int = 1000
    queue_scale_per_min: int = 60
    queue_scale_cap: int = 1000


@dataclass(frozen=True, slots=True)
class ColdStartModel:
    warm_pool_idle_ms: float = 600_000.0
    init_ms_mean: float = 850.0
    init_ms_sigma: float = 40.0


@dataclass(slots=True)
class InvocationRecord:
    function: str
    execution_id: str
    instance_id: str
    cold_start: bool
    init_ms: float
    duration_ms: float
    billed_gb_ms: float
    max_mem_used_mb: int
    outcome: str  # ok | timeout | error
    # not exported: used for concurrency accounting and diagnostics
    start_ms: float = 0.0
    error: Optional[str] = None
    exception: Any = None
    result: Any = None


def write_ledger_csv(records: list[InvocationRecord], path: Path | str) -> None:
    Path(path).write_text(render_ledger_csv(records), encoding="utf-8")


def render_ledger_csv(records: list[InvocationRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LEDGER_COLUMNS)
    for r in records:
        writer.writerow(
            [
                r.function,
                r.execution_id,
                r.instance_id,
                "true" if r.cold_start else "false",
                f"{r.init_ms:.3f}",
                f"{r.duration_ms:.3f}",
                f"{r.billed_gb_ms:.3f}",
                r.max_mem_used_mb,
                r.outcome,
            ]
        )
    return buf.getvalue()


def load_ledger_csv(path: Path | str) -> list[InvocationRecord]:
    rows = list(csv.reader(io.StringIO(Path(path).read_text(encoding="utf-8"))))
    if not rows or tuple(rows[0]) != LEDGER_COLUMNS:
        raise ValueError(f"unexpected ledger header in {path}")
    out = []
    for row in rows[1:]:
        out.append(
            InvocationRecord(
                function=row[0],
                execution_id=row[1],
                instance_id=row[2],
                cold_start=row[3] == "true",
                init_ms=float(row[4]),
                duration_ms=float(row[5]),
                billed_gb_ms=float(row[6]),
                max_mem_used_mb=int(row[7]),
                outcome=row[8],
            )
        )
    return out


class StorageClients:
    """Latency-charging facades over the storage backends.

    Every method is a generator: it advances the virtual clock by the
    op's modeled latency, then applies the op, so state changes land at
    the op's completion instant.
    """

    def __init__(
        self,
        cal: CalibrationTable,
        objects: Optional[ObjectStore] = None,
        raw_objects: Optional[ObjectStore] = None,
        kv: Optional[KvStore] = None,
        queue: Optional[MessageQueue] = None,
    ):
        self.cal = cal
        self.objects = objects
        self.raw_objects = raw_objects
        self.kv = kv
        self.queue = queue

    def object_get(self, key: str, store: Optional[ObjectStore] = None):
        store = store or self.objects
        size = store.size(key)  # missing key fails at call time
        yield self.cal.object_get_ms(size)
        return store.get(key)

    def raw_object_get(self, key: str):
        return self.object_get(key, store=self.raw_objects)

    def object_put(self, key: str, body: bytes, store: Optional[ObjectStore] = None):
        store = store or self.objects
        yield self.cal.object_put_ms(len(body))
        store.put(key, body)

    def object_delete(self, key: str):
        yield self.cal.object_put_ms(0)
        self.objects.delete(key)

    def object_list(self, prefix: str):
        approx = len(self.objects.list(prefix))
        yield self.cal.object_list_ms(approx)
        return self.objects.list(prefix)

    def kv_put(self, item):
        yield self.cal.kv_put_ms
        self.kv.put_item(item)  # may raise ThrottledError at completion time

    def kv_delete(self, hash_key: str, sort_key: str):
        yield self.cal.kv_put_ms
        self.kv.delete_item(hash_key, sort_key)

    def kv_query_lsi(self, hash_key: str, lsi_sort_key: str):
        approx = len(self.kv.query_lsi(hash_key, lsi_sort_key))
        yield self.cal.kv_query_ms(approx)
        return self.kv.query_lsi(hash_key, lsi_sort_key)

    def kv_scan(self, hash_key: str):
        approx = len(self.kv.scan(hash_key))
        yield self.cal.kv_query_ms(approx)
        return self.kv.scan(hash_key)

    def counter_add(self, execution_id: str, fieldname: str, delta: int):
        yield self.cal.counter_add_ms
        return self.kv.counter_add(execution_id, fieldname, delta)

    def counter_get(self, execution_id: str):
        yield self.cal.counter_get_ms
        return self.kv.counter_get(execution_id)

    def results_put(self, execution_id: str, carrier: str, delay_sum: int, count: int):
        yield self.cal.kv_put_ms
        self.kv.put_result(execution_id, carrier, delay_sum, count)

    def results_list(self, execution_id: str):
        approx = len(self.kv.list_results(execution_id))
        yield self.cal.kv_query_ms(approx)
        return self.kv.list_results(execution_id)

    def queue_send(self, body: str):
        yield self.cal.queue_send_ms
        self.queue.send(body)

    def queue_receive(self, max_messages: int = 1):
        yield self.cal.queue_receive_ms
        return self.queue.receive(max_messages)

    def queue_delete(self, receipt: int):
        yield self.cal.queue_delete_ms
        return self.queue.delete(receipt)


class InvocationContext:
    """What a handler sees: clock, clients, seeded RNG, work charging."""

    def __init__(
        self,
        sim: Simulator,
        config: FunctionConfig,
        cal: CalibrationTable,
        clients: StorageClients,
        execution_id: str,
        instance_id: str,
        rng: Random,
        extras: dict,
    ):
        self.sim = sim
        self.config = config
        self.cal = cal
        self.clients = clients
        self.execution_id = execution_id
        self.instance_id = instance_id
        self.rng = rng
        self.extras = extras
        self._mem_watermark_mb = 35

    def now(self) -> float:
        return self.sim.now()

    def work(self, units: float):
        """Charge ``units`` of compute, scaled by the worker pool."""
        ms = self.cal.work_ms(units, self.config.workers, self.config.vcpus)
        if ms > 0:
            yield ms
        return ms

    def note_memory(self, mb: float) -> None:
        used = min(self.config.memory_mb, int(mb))
        if used > self._mem_watermark_mb:
            self._mem_watermark_mb = used


Handler = Callable[[InvocationContext, Any], Any]


class FunctionRuntime:
    """Executes handlers on the virtual clock and keeps the invocation ledger."""

    def __init__(
        self,
        sim: Simulator,
        clients: StorageClients,
        cal: Optional[CalibrationTable] = None,
        limits: RuntimeLimits = RuntimeLimits(),
        cold_start: Optional[ColdStartModel] = None,
        seed: int = 0,
    ):
        self.sim = sim
        self.clients = clients
        self.cal = cal or clients.cal
        self.limits = limits
        self.cold_start = cold_start or ColdStartModel(
            warm_pool_idle_ms=self.cal.warm_pool_idle_ms,
            init_ms_mean=self.cal.init_ms_mean,
            init_ms_sigma=self.cal.init_ms_sigma,
        )
        self.ledger: list[InvocationRecord] = []
        self._pools: dict[str, list[float]] = {}
        self._init_rngs: dict[str, Random] = {}
        self._seed = seed
        self._id_rng = Random(("runtime-ids", seed).__repr__())
        self._active = 0
        self._admission_waiters: deque[Event] = deque()
        self.max_active_seen = 0
        self.cold_start_count = 0

    # -- cold-start bookkeeping -------------------------------------------

    def _init_rng(self, name: str) -> Random:
        rng = self._init_rngs.get(name)
        if rng is None:
            rng = Random(("init", self._seed, name).__repr__())
            self._init_rngs[name] = rng
        return rng

    def _acquire_instance(self, fn: FunctionConfig) -> tuple[bool, float]:
        pool = self._pools.setdefault(fn.name, [])
        now = self.sim.now()
        while pool:
            expiry = pool.pop()
            if expiry >= now:
                return False, 0.0
        init = max(0.0, self._init_rng(fn.name).gauss(
            self.cold_start.init_ms_mean, self.cold_start.init_ms_sigma))
        self.cold_start_count += 1
        return True, init

    def _release_instance(self, fn: FunctionConfig) -> None:
        self._pools.setdefault(fn.name, []).append(
            self.sim.now() + self.cold_start.warm_pool_idle_ms
        )

    # -- invocation ---------------------------------------------------------

    def invoke(
        self,
        fn: FunctionConfig,
        handler: Handler,
        payload: Any,
        execution_id: str = "",
        extras: Optional[dict] = None,
    ) -> Process:
        """Schedule one invocation; the process result is its InvocationRecord."""
        gen = self._invocation(fn, handler, payload, execution_id, extras or {})
        return self.sim.spawn(gen, name=f"invoke-{fn.name}")

    def _guarded(self, handler_gen, box: dict):
        try:
            box["result"] = yield from handler_gen
            box["status"] = "ok"
        except Interrupted:
            box["status"] = "timeout"
        except Exception as exc:
            box["status"] = "error"
            box["error"] = exc

    def _invocation(self, fn, handler, payload, execution_id, extras):
        # Admission control: saturated invocations queue FIFO, never drop.
        if self._active >= self.limits.account_concurrency:
            gate = self.sim.event()
            self._admission_waiters.append(gate)
            yield gate  # slot handed over by a finishing invocation
        else:
            self._active += 1
        self.max_active_seen = max(self.max_active_seen, self._active)

        instance_id = new_execution_id(self._id_rng)
        cold, init_ms = self._acquire_instance(fn)
        if init_ms > 0:
            yield init_ms
        start = self.sim.now()
        rng = Random(("invocation", self._seed, instance_id).__repr__())
        ctx = InvocationContext(
            self.sim, fn, self.cal, self.clients, execution_id, instance_id, rng, extras
        )
        box: dict = {"status": "running", "result": None, "error": None}
        hproc = self.sim.spawn(self._guarded(handler(ctx, payload), box),
                               name=f"{fn.name}-handler")
        timeout_handle = self.sim.call_in(fn.timeout_ms, hproc.interrupt)
        yield hproc.finished
        self.sim.cancel(timeout_handle)

        if box["status"] == "timeout":
            duration = float(fn.timeout_ms)
            outcome = "timeout"
        else:
            duration = self.sim.now() - start
            outcome = "ok" if box["status"] == "ok" else "error"
        record = InvocationRecord(
            function=fn.name,
            execution_id=execution_id,
            instance_id=instance_id,
            cold_start=cold,
            init_ms=init_ms if cold else 0.0,
            duration_ms=duration,
            billed_gb_ms=(fn.memory_mb / 1024.0) * duration,
            max_mem_used_mb=ctx._mem_watermark_mb,
            outcome=outcome,
            start_ms=start,
            error=repr(box["error"]) if box["error"] is not None else None,
            exception=box["error"],
            result=box["result"],
        )
        self.ledger.append(record)
        self._release_instance(fn)
        if self._admission_waiters:
            self._admission_waiters.popleft().trigger()  # slot handover
        else:
            self._active -= 1
        return record

    def run_single(
        self, fn: FunctionConfig, handler: Handler, payload: Any, execution_id: str = ""
    ) -> InvocationRecord:
        """Convenience wrapper: run one invocation to completion."""
        proc = self.invoke(fn, handler, payload, execution_id)
        self.sim.run(until=proc.finished)
        return proc.result

    # -- queue event source --------------------------------------------------

    def attach_queue_source(
        self,
        fn: FunctionConfig,
        queue: MessageQueue,
        handler: Handler,
        batch_size: int = 1,
        decode: Callable[[str], Any] = json.loads,
        extras: Optional[dict] = None,
    ) -> "QueueSource":
        source = QueueSource(self, fn, queue, handler, batch_size, decode, extras or {})
        source.start()
        return source


class QueueSource:
    """Polling consumer pool for one function, scaled per virtual minute.

    The pool starts at one consumer and, while a backlog is visible at the
    minute mark, grows by ``queue_scale_per_min`` up to ``queue_scale_cap``.
    """

    def __init__(
        self,
        runtime: FunctionRuntime,
        fn: FunctionConfig,
        queue: MessageQueue,
        handler: Handler,
        batch_size: int,
        decode: Callable[[str], Any],
        extras: Optional[dict] = None,
    ):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.runtime = runtime
        self.fn = fn
        self.queue = queue
        self.handler = handler
        self.batch_size = batch_size
        self.decode = decode
        self.extras = extras or {}
        self.pool_size = 0
        self.pool_history: list[tuple[float, int]] = []
        self._stopped = False
        self._procs: list[Process] = []

    def start(self) -> None:
        self._grow(1)
        self._procs.append(self.runtime.sim.spawn(self._manager(), name="queue-scaler"))

    def stop(self) -> None:
        self._stopped = True

    def _grow(self, n: int) -> None:
        sim = self.runtime.sim
        for _ in range(n):
            self._procs.append(sim.spawn(self._consumer(), name=f"consumer-{self.fn.name}"))
        self.pool_size += n
        self.pool_history.append((sim.now(), self.pool_size))

    def _manager(self):
        limits = self.runtime.limits
        while not self._stopped:
            yield 60_000.0
            if self._stopped:
                return
            if self.queue.visible_count() <= 0:
                continue
            room = min(limits.queue_scale_cap, limits.account_concurrency) - self.pool_size
            if room > 0:
                self._grow(min(limits.queue_scale_per_min, room))

    def _consumer(self):
        clients = self.runtime.clients
        poll = self.runtime.cal.consumer_poll_interval_ms
        while not self._stopped:
            messages = yield from clients.queue_receive(self.batch_size)
            if not messages:
                yield poll
                continue
            for msg in messages:
                payload = self.decode(msg.body)
                execution_id = payload.get("execution_id", "") if isinstance(payload, dict) else ""
                proc = self.runtime.invoke(
                    self.fn, self.handler, payload, execution_id, extras=self.extras
                )
                record = yield proc.finished
                if record.outcome == "ok":
                    yield from clients.queue_delete(msg.receipt)
                # otherwise leave it; visibility expiry redelivers or retires


def concurrency_integral_check(records: list[InvocationRecord]) -> tuple[float, float]:
    """(series integral, summed durations) over the handler windows; equal by
    construction, kept as a unit-consistency audit."""
    from .report import concurrency_series

    series = concurrency_series(records)
    integral = sum(active for _, active in series) * 1000.0
    total = sum(r.duration_ms for r in records)
    return integral, total
