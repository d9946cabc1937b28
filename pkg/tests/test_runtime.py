import math

import pytest

from microreduce.calibration import (
    ANCHOR_FILE_BYTES,
    ANCHOR_INGEST_MS,
    ANCHOR_ROWS,
    CalibrationTable,
    DEFAULT_CALIBRATION,
    effective_parallelism,
    fit_ingest_constants,
    vcpus,
)
from microreduce.runtime import (
    ColdStartModel,
    FunctionConfig,
    FunctionRuntime,
    RuntimeLimits,
    StorageClients,
    load_ledger_csv,
    render_ledger_csv,
)
from microreduce.sim import Simulator
from microreduce.storage import KvStore, MessageQueue, ObjectStore


def make_runtime(seed=0, limits=None, cold=None, cal=None, sim=None):
    sim = sim or Simulator()
    cal = cal or DEFAULT_CALIBRATION
    clients = StorageClients(
        cal,
        objects=ObjectStore(),
        raw_objects=ObjectStore(),
        kv=KvStore(clock=sim.now),
        queue=MessageQueue(clock=sim.now),
    )
    return FunctionRuntime(sim, clients, cal, limits=limits or RuntimeLimits(),
                           cold_start=cold, seed=seed)


def busy_handler(units):
    def handler(ctx, payload):
        yield from ctx.work(units)
        return {"done": True}

    return handler


class TestVcpus:
    def test_anchor_points(self):
        assert vcpus(1024) == 2
        assert vcpus(2048) == 2
        assert vcpus(3072) == 3

    def test_floor_of_the_model(self):
        assert vcpus(128) == 1
        assert vcpus(512) == 1

    def test_monotone_and_bounded(self):
        values = [vcpus(m) for m in range(128, 10_241, 64)]
        assert values == sorted(values)
        assert values[0] >= 1

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            vcpus(64)
        with pytest.raises(ValueError):
            vcpus(20_000)


class TestFunctionConfig:
    def test_workers_capped_by_vcpus(self):
        FunctionConfig("f", 3072, workers=3)
        with pytest.raises(ValueError):
            FunctionConfig("f", 1024, workers=3)

    def test_timeout_cap(self):
        with pytest.raises(ValueError):
            FunctionConfig("f", 1024, timeout_ms=900_001)

    def test_memory_domain(self):
        with pytest.raises(ValueError):
            FunctionConfig("f", 64)


class TestCalibrationFit:
    def test_fit_reproduces_frozen_defaults(self):
        row_units, p = fit_ingest_constants(CalibrationTable())
        assert math.isclose(row_units, DEFAULT_CALIBRATION.ingest_row_units)
        assert math.isclose(p, DEFAULT_CALIBRATION.amdahl_parallel_fraction)
        assert 0.0 < p < 1.0

    def test_model_hits_anchors_within_ten_percent(self):
        cal = DEFAULT_CALIBRATION
        batches = math.ceil(ANCHOR_ROWS / 100)
        fixed = (cal.object_get_ms(ANCHOR_FILE_BYTES)
                 + batches * cal.queue_send_ms + cal.counter_add_ms)
        work = ANCHOR_ROWS * cal.ingest_row_units + batches * cal.ingest_batch_units
        for workers, mem in ((1, 1024), (2, 2048), (3, 3072)):
            simulated = fixed + cal.work_ms(work, workers, vcpus(mem))
            target = ANCHOR_INGEST_MS[workers]
            assert abs(simulated - target) / target < 0.10

    def test_doubling_workers_never_doubles_throughput(self):
        cal = DEFAULT_CALIBRATION
        t1 = cal.work_ms(1000.0, 1, 8)
        t2 = cal.work_ms(1000.0, 2, 8)
        t4 = cal.work_ms(1000.0, 4, 8)
        assert t1 / t2 < 2.0 and t2 / t4 < 2.0
        assert t2 < t1 and t4 < t2

    def test_zero_units_is_free(self):
        assert DEFAULT_CALIBRATION.work_ms(0.0, 3, 3) == 0.0

    def test_effective_parallelism_monotone_capped(self):
        p = 0.66
        effs = [effective_parallelism(w, 8, p) for w in range(1, 9)]
        assert effs[0] == 1.0
        assert effs == sorted(effs)
        # vCPU ceiling binds
        assert effective_parallelism(8, 2, p) == effective_parallelism(2, 2, p)

    def test_table_round_trip(self, tmp_path):
        path = tmp_path / "cal.txt"
        DEFAULT_CALIBRATION.save(path)
        loaded = CalibrationTable.load(path)
        assert loaded == DEFAULT_CALIBRATION

    def test_table_partial_override(self, tmp_path):
        path = tmp_path / "cal.txt"
        path.write_text("# comment\nkv_put_ms = 9.5\n", encoding="utf-8")
        loaded = CalibrationTable.load(path, base=DEFAULT_CALIBRATION)
        assert loaded.kv_put_ms == 9.5
        assert loaded.object_get_base_ms == DEFAULT_CALIBRATION.object_get_base_ms

    def test_table_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "cal.txt"
        path.write_text("bogus_key=1\n", encoding="utf-8")
        with pytest.raises(ValueError):
            CalibrationTable.load(path)


class TestInvocation:
    def test_first_call_is_cold_with_seeded_init(self):
        rt = make_runtime(seed=1)
        fn = FunctionConfig("fn", 1024)
        record = rt.run_single(fn, busy_handler(10.0), {})
        assert record.cold_start and record.outcome == "ok"
        assert 700 < record.init_ms < 1000  # seeded draw near the 850 mean
        rt2 = make_runtime(seed=1)
        again = rt2.run_single(fn, busy_handler(10.0), {})
        assert again.init_ms == record.init_ms

    def test_warm_reuse_within_idle_window(self):
        rt = make_runtime()
        fn = FunctionConfig("fn", 1024)
        first = rt.run_single(fn, busy_handler(5.0), {})
        second = rt.run_single(fn, busy_handler(5.0), {})
        assert first.cold_start and not second.cold_start
        assert second.init_ms == 0.0

    def test_instance_expires_after_idle_window(self):
        sim = Simulator()
        rt = make_runtime(sim=sim, cold=ColdStartModel(warm_pool_idle_ms=1_000))
        fn = FunctionConfig("fn", 1024)
        rt.run_single(fn, busy_handler(5.0), {})

        def wait_then_invoke():
            yield 5_000.0
            record = yield rt.invoke(fn, busy_handler(5.0), {})
            return record

        proc = sim.spawn(wait_then_invoke())
        sim.run(until=proc.finished)
        assert proc.result.cold_start

    def test_serial_invocations_single_cold_start_with_infinite_idle(self):
        rt = make_runtime(cold=ColdStartModel(warm_pool_idle_ms=math.inf))
        fn = FunctionConfig("fn", 1024)
        records = [rt.run_single(fn, busy_handler(1.0), {}) for _ in range(10)]
        assert sum(r.cold_start for r in records) == 1
        assert rt.cold_start_count <= len(records)

    def test_billing_arithmetic(self):
        rt = make_runtime()
        fn = FunctionConfig("fn", 2048)
        record = rt.run_single(fn, busy_handler(0.0), {})
        assert record.billed_gb_ms == 2.0 * record.duration_ms
        # the reference example: 2 GB for 88403 ms bills 176806 GB-ms
        assert 2048 / 1024 * 88403 == 176806

    def test_handler_error_recorded_and_propagates_nothing(self):
        rt = make_runtime()
        fn = FunctionConfig("fn", 1024)

        def broken(ctx, payload):
            yield 1.0
            raise RuntimeError("boom")

        record = rt.run_single(fn, broken, {})
        assert record.outcome == "error"
        assert "boom" in record.error
        assert isinstance(record.exception, RuntimeError)

    def test_timeout_is_exact_and_aborts(self):
        rt = make_runtime()
        fn = FunctionConfig("fn", 1024, timeout_ms=500)
        record = rt.run_single(fn, busy_handler(100_000.0), {})
        assert record.outcome == "timeout"
        assert record.duration_ms == 500.0

    def test_default_timeout_is_fifteen_minutes(self):
        rt = make_runtime()
        fn = FunctionConfig("fn", 1024)
        record = rt.run_single(fn, busy_handler(1_000_000.0), {})
        assert record.outcome == "timeout"
        assert record.duration_ms == 900_000.0

    def test_billing_sums_exactly(self):
        rt = make_runtime()
        fn = FunctionConfig("fn", 1536)
        for _ in range(7):
            rt.run_single(fn, busy_handler(3.0), {})
        total = sum(r.billed_gb_ms for r in rt.ledger)
        assert total == sum((1536 / 1024) * r.duration_ms for r in rt.ledger)
        assert sum(r.cold_start for r in rt.ledger) <= len(rt.ledger)


class TestConcurrencyCeiling:
    def test_cap_enforced_and_fifo(self):
        sim = Simulator()
        rt = make_runtime(sim=sim, limits=RuntimeLimits(account_concurrency=3),
                          cold=ColdStartModel(init_ms_sigma=0.0))
        fn = FunctionConfig("fn", 1024)
        order = []

        def tracked(tag):
            def handler(ctx, payload):
                yield from ctx.work(100.0)
                order.append(tag)
                return tag

            return handler

        procs = [rt.invoke(fn, tracked(i), {}) for i in range(9)]
        sim.run(until=sim.all_of(procs))
        assert rt.max_active_seen == 3
        assert order == list(range(9))  # FIFO overflow queue

    def test_queued_invocations_not_billed_for_waiting(self):
        sim = Simulator()
        rt = make_runtime(sim=sim, limits=RuntimeLimits(account_concurrency=1),
                          cold=ColdStartModel(init_ms_mean=0.0, init_ms_sigma=0.0))
        fn = FunctionConfig("fn", 1024)
        procs = [rt.invoke(fn, busy_handler(100.0), {}) for _ in range(3)]
        sim.run(until=sim.all_of(procs))
        for record in rt.ledger:
            assert record.duration_ms == pytest.approx(100.0)


class TestDeterminism:
    def test_identical_seeds_identical_ledgers(self):
        def run():
            rt = make_runtime(seed=7)
            fn_a = FunctionConfig("a", 1024)
            fn_b = FunctionConfig("b", 2048)
            sim = rt.sim
            procs = [rt.invoke(fn_a, busy_handler(50.0), {}) for _ in range(5)]
            procs += [rt.invoke(fn_b, busy_handler(20.0), {}) for _ in range(5)]
            sim.run(until=sim.all_of(procs))
            return render_ledger_csv(rt.ledger)

        assert run() == run()


class TestLedgerCsv:
    def test_round_trip(self, tmp_path):
        rt = make_runtime()
        fn = FunctionConfig("fn", 1024)
        rt.run_single(fn, busy_handler(10.0), {}, execution_id="e1")
        path = tmp_path / "ledger.csv"
        path.write_text(render_ledger_csv(rt.ledger), encoding="utf-8")
        loaded = load_ledger_csv(path)
        assert len(loaded) == 1
        assert loaded[0].function == "fn"
        assert loaded[0].execution_id == "e1"
        assert loaded[0].cold_start is True
        assert loaded[0].duration_ms == pytest.approx(rt.ledger[0].duration_ms, abs=1e-3)

    def test_header_is_frozen(self):
        text = render_ledger_csv([])
        assert text.splitlines()[0] == (
            "function,execution_id,instance_id,cold_start,init_ms,duration_ms,"
            "billed_gb_ms,max_mem_used_mb,outcome"
        )


class TestQueueSourceScaling:
    def run_pool(self, minutes, backlog, cap=1000, handler_ms=1e9):
        sim = Simulator()
        rt = make_runtime(sim=sim, limits=RuntimeLimits(
            account_concurrency=10_000, queue_scale_cap=cap))
        queue = rt.clients.queue
        for i in range(backlog):
            queue.send('{"execution_id": "e", "n": %d}' % i)

        def slow(ctx, payload):
            yield handler_ms
            return None

        source = rt.attach_queue_source(FunctionConfig("map", 1024), queue, slow)
        sim.run(max_time=minutes * 60_000.0 + 1.0)
        source.stop()
        return source

    def test_backlog_zero_pool_stays_one(self):
        source = self.run_pool(minutes=5, backlog=0)
        assert source.pool_size == 1

    def test_growth_is_sixty_per_minute(self):
        source = self.run_pool(minutes=3, backlog=100_000)
        assert source.pool_size == 1 + 60 * 3

    def test_growth_respects_cap(self):
        source = self.run_pool(minutes=10, backlog=100_000, cap=150)
        assert source.pool_size == 150
