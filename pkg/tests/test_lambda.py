import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iiotsim import _kernels
from iiotsim.lambda_arch import (
    LambdaPipeline,
    UnsupportedKind,
    ViewKind,
    ViewQuery,
    ViewStore,
    throughput_harness,
)
from iiotsim.model import Measurement
from oracles import fold_query


def _m(i, device="d", sensor="s", value=1.0, tenant="t"):
    return Measurement(tenant, device, sensor, i * 1_000_000, value, "u")


def _queries(tenants=("t", "u"), devices=(None, "d0", "d1"), sensors=(None, "s0", "s1")):
    for kind in ViewKind:
        for t in tenants:
            for d in devices:
                for s in sensors:
                    yield ViewQuery(kind, t, d, s)


def test_single_measurement():
    lp = LambdaPipeline()
    assert lp.fork_ingest(_m(0, value=4.0))
    assert len(lp.master) == 1
    assert lp.serve(ViewQuery(ViewKind.SUM, "t")) == 4.0
    assert lp.serve(ViewQuery(ViewKind.COUNT, "t")) == 1


def test_conservation_counters():
    lp = LambdaPipeline()
    for i in range(500):
        lp.fork_ingest(_m(i))
    assert lp.ingested == len(lp.master) == lp.speed_applied == 500


def test_duplicate_sequence_rejected():
    lp = LambdaPipeline()
    assert lp.fork_ingest(_m(0), seq=5)
    assert not lp.fork_ingest(_m(1), seq=5)
    assert not lp.fork_ingest(_m(1), seq=3)
    assert lp.duplicates == 2 and len(lp.master) == 1
    assert lp.serve(ViewQuery(ViewKind.COUNT, "t")) == 1


def test_empty_master():
    lp = LambdaPipeline()
    assert lp.batch_recompute() == 0
    assert len(lp.batch) == 0
    assert lp.serve(ViewQuery(ViewKind.MEAN, "t")) is None
    assert lp.serve(ViewQuery(ViewKind.COUNT, "t")) == 0


def test_recompute_is_idempotent():
    lp = LambdaPipeline(bucket_us=7_000_000)
    rng = random.Random(1)
    for i in range(300):
        lp.fork_ingest(_m(i, f"d{rng.randrange(3)}", value=rng.uniform(-5, 5)))
    lp.batch_recompute()
    first = lp.batch.snapshot()
    lp.batch_recompute()
    assert lp.batch.snapshot() == first
    assert len(lp.speed) == 0


def test_all_batch_and_max_from_speed():
    lp = LambdaPipeline()
    for i, v in enumerate([1.0, 2.0, 3.0]):
        lp.fork_ingest(_m(i, value=v))
    lp.batch_recompute()
    assert lp.serve(ViewQuery(ViewKind.SUM, "t")) == 6.0
    lp.fork_ingest(_m(10, value=99.0))
    assert lp.serve(ViewQuery(ViewKind.MAX, "t")) == 99.0


def test_unsupported_kind():
    with pytest.raises(UnsupportedKind):
        LambdaPipeline().serve(ViewQuery("MEDIAN", "t"))


def test_checkpoint_is_monotone():
    lp = LambdaPipeline()
    for i in range(10):
        lp.fork_ingest(_m(i))
    lp.batch_recompute(6)
    with pytest.raises(ValueError):
        lp.batch_recompute(3)


def test_seventy_thirty_split_matches_single_pass():
    rng = random.Random(70)
    recs = [_m(i, f"d{rng.randrange(2)}", f"s{rng.randrange(2)}", rng.uniform(-1e3, 1e3),
               rng.choice("tu")) for i in range(1000)]
    lp = LambdaPipeline(bucket_us=50_000_000)
    for m in recs[:700]:
        lp.fork_ingest(m)
    lp.batch_recompute()
    for m in recs[700:]:
        lp.fork_ingest(m)
    for q in _queries():
        assert lp.serve(q) == fold_query(recs, q, lp.bucket_us), q


@given(st.lists(st.tuples(st.sampled_from("tu"), st.sampled_from(["d0", "d1"]),
                          st.sampled_from(["s0", "s1"]),
                          st.floats(-1e12, 1e12, allow_nan=False)), max_size=60),
       st.lists(st.integers(0, 60), max_size=3), st.integers(1, 20))
def test_serve_equals_fold_over_master(rows, cuts, bucket_s):
    lp = LambdaPipeline(bucket_us=bucket_s * 1_000_000)
    recs = [_m(i, d, s, v, t) for i, (t, d, s, v) in enumerate(rows)]
    cuts = sorted(c for c in cuts if c <= len(recs))
    pos = 0
    for c in cuts + [len(recs)]:
        for m in recs[pos:c]:
            lp.fork_ingest(m)
        pos = c
        if c != len(recs):
            lp.batch_recompute()
        # batch and speed cover disjoint sequence ranges
        assert sum(lp.batch.snapshot()[k][0] for k in lp.batch.snapshot()) == lp.checkpoint_seq
    for q in _queries():
        got, want = lp.serve(q), fold_query(recs, q, lp.bucket_us)
        assert got == want, q
    for b in {m.timestamp_us // lp.bucket_us for m in recs}:
        q = ViewQuery(ViewKind.SUM, "t", bucket=b)
        assert lp.serve(q) == fold_query(recs, q, lp.bucket_us)


def test_large_random_instances():
    rng = random.Random(2024)
    for trial in range(3):
        recs = [_m(i, f"d{rng.randrange(2)}", f"s{rng.randrange(2)}",
                   rng.choice([1e16, -1e16, 1.0, rng.uniform(-1, 1)]), rng.choice("tu"))
                for i in range(1200)]
        lp = LambdaPipeline(bucket_us=100_000_000)
        cut = rng.randrange(len(recs))
        for i, m in enumerate(recs):
            lp.fork_ingest(m)
            if i == cut:
                lp.batch_recompute()
        for q in _queries():
            assert lp.serve(q) == fold_query(recs, q, lp.bucket_us)


def test_master_file_uses_line_format(tmp_path):
    path = tmp_path / "master.log"
    lp = LambdaPipeline(master_path=path)
    for i in range(3):
        lp.fork_ingest(_m(i, value=i))
    assert path.read_bytes().count(b"MEAS|") == 3


# -- kernel backends -----------------------------------------------------------

def _fold_with(fn, keys, vals, n_keys):
    counts = np.zeros(n_keys, dtype=np.int64)
    maxes = np.full(n_keys, -np.inf)
    partials = np.zeros((n_keys, _kernels.PARTIAL_SLOTS))
    nparts = np.zeros(n_keys, dtype=np.int64)
    fn(keys, vals, counts, maxes, partials, nparts)
    sums = [math.fsum(partials[i, :nparts[i]]) for i in range(n_keys)]
    return counts.tolist(), maxes.tolist(), sums


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
def test_numba_and_numpy_fold_agree():
    rng = np.random.default_rng(5)
    keys = rng.integers(0, 50, size=20_000)
    vals = rng.choice([1e20, -1e20, 3.0, 1e-20], size=20_000) * rng.normal(size=20_000)
    a = _fold_with(_kernels.fold_numpy, keys, vals, 50)
    b = _fold_with(_kernels.fold_numba, keys, vals, 50)
    assert a == b
    for k in range(50):
        assert a[2][k] == math.fsum(vals[keys == k])
        assert a[0][k] == int((keys == k).sum())


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
@given(st.lists(st.tuples(st.floats(0, 1e4), st.floats(-1e3, 1e3)), min_size=1, max_size=40))
def test_numba_and_numpy_slope_agree(points):
    t = np.array([p[0] for p in points])
    v = np.array([p[1] for p in points])
    a, b = _kernels.slope_numpy(t, v), _kernels.slope_numba(t, v)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


def test_view_store_grows():
    store = ViewStore(2)
    ids = np.array([store.key_id(("t", "d", str(i), 0)) for i in range(100)])
    store.apply(ids, np.ones(100))
    assert int(store.counts.sum()) == 100


# -- throughput ----------------------------------------------------------------

def test_zero_rate_is_trivially_bounded():
    rep = throughput_harness(0.0, 5.0, keep_master=False)
    assert rep.records == 0 and rep.max_depth == 0 and rep.sustained


def test_small_rate_accounting():
    rep = throughput_harness(240_000.0, 2.0, tail_s=1.0, keep_master=False)
    assert rep.records == pytest.approx(480_000 / rep.record_bytes, abs=1)
    assert rep.bytes == rep.records * rep.record_bytes
