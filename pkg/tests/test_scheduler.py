import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuroflow.errors import NiceOutOfRange, UnknownSubgraph
from neuroflow.flowgraph import NodeKind, ProgramNode, analyze, build_graph
from neuroflow.platforms import PlatformDescriptor, PlatformKind, PlatformSnapshot, PlatformState
from neuroflow.scheduler import (
    FifoPolicy,
    QueueTag,
    RoundRobinPolicy,
    SchedState,
    SubgraphQueue,
    TaskInstance,
    choose_platform,
    classify,
    dispatch_dnn,
    nice_to_weight,
    node_priority,
)
from neuroflow.workload import LatencyOracleParams


def task(id, prio=0, sub="s", release=0.0, kind=NodeKind.NON_DNN, mem=0.0, model=None):
    return TaskInstance(id=id, node_id=id, kind=kind, release_t_ms=release, priority=prio, subgraph=sub,
                        memory_mb=mem, model_id=model)


def state(**vr):
    s = SchedState()
    for sid, v in vr.items():
        s.runqueue[sid] = SubgraphQueue(sid, 1024, v)
    return s


def test_classify():
    assert classify(ProgramNode("d", NodeKind.DNN, "det2d")) is QueueTag.DNN
    assert classify(ProgramNode("n")) is QueueTag.NON_DNN


def test_isolated_node_priority_zero():
    g = build_graph([ProgramNode("a"), ProgramNode("b"), ProgramNode("c")], [("a", "b")])
    an = analyze(g)
    assert node_priority(g.nodes["c"], an) == 0
    assert node_priority(g.nodes["a"], an) == 1
    assert node_priority(g.nodes["c"], None) == 0


def test_nice_weights():
    assert nice_to_weight(0) == 1024
    assert nice_to_weight(1) == 819
    assert nice_to_weight(-5) > nice_to_weight(0) > nice_to_weight(5)
    for bad in (-21, 20, 1.5):
        with pytest.raises(NiceOutOfRange):
            nice_to_weight(bad)
    ws = [nice_to_weight(n) for n in range(-20, 20)]
    assert all(a > b for a, b in zip(ws, ws[1:]))


def test_account_examples():
    s = state(a=0.0)
    s.account("a", 10.0)
    assert s.runqueue["a"].vruntime_ms == 10.0
    s.runqueue["b"] = SubgraphQueue("b", 2048)
    s.account("b", 10.0)
    assert s.runqueue["b"].vruntime_ms == 5.0
    with pytest.raises(UnknownSubgraph):
        s.account("zzz", 1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(-20, 19), st.floats(0, 1e3), st.floats(0, 1e3))
def test_account_is_additive(nice, a, b):
    s1, s2 = SchedState(), SchedState()
    for s in (s1, s2):
        s.runqueue["x"] = SubgraphQueue("x", nice_to_weight(nice))
    s1.account("x", a)
    s1.account("x", b)
    s2.account("x", a + b)
    assert s1.runqueue["x"].vruntime_ms == pytest.approx(s2.runqueue["x"].vruntime_ms, rel=1e-12, abs=1e-12)


def test_next_non_dnn_examples():
    assert SchedState().next_non_dnn() is None
    s = state(a=9.0, b=5.0)
    s.runqueue["a"].push(task("x", sub="a"))
    s.runqueue["b"].push(task("y", sub="b"))
    assert s.next_non_dnn().id == "y"
    s = state(c=0.0)
    s.runqueue["c"].push(task("B", prio=1, sub="c"))
    s.runqueue["c"].push(task("A", prio=2, sub="c"))
    assert s.next_non_dnn().id == "A"


def test_ties_break_on_release_then_id_then_subgraph():
    s = state(b=1.0, a=1.0)
    s.runqueue["b"].push(task("t1", sub="b"))
    s.runqueue["a"].push(task("t9", sub="a", release=5.0))
    s.runqueue["a"].push(task("t3", sub="a", release=2.0))
    s.runqueue["a"].push(task("t2", sub="a", release=2.0))
    # no accounting, so vruntimes stay equal and subgraph "a" wins every round
    assert [s.next_non_dnn().id for _ in range(4)] == ["t2", "t3", "t9", "t1"]
    assert s.next_non_dnn() is None


ops = st.lists(st.one_of(
    st.tuples(st.just("enq"), st.sampled_from("abc")),
    st.tuples(st.just("run"), st.floats(0, 50)),
), max_size=60)


@settings(max_examples=150, deadline=None)
@given(ops, st.lists(st.integers(-20, 19), min_size=3, max_size=3))
def test_vruntime_never_decreases(seq, nices):
    s = SchedState()
    for sid, n in zip("abc", nices):
        s.runqueue[sid] = SubgraphQueue(sid, nice_to_weight(n))
    prev = {k: 0.0 for k in "abc"}
    for i, (op, arg) in enumerate(seq):
        if op == "enq":
            s.enqueue_non_dnn(task(f"t{i}", sub=arg, release=float(i)))
        else:
            t = s.next_non_dnn()
            if t is not None:
                s.account(t.subgraph, arg)
        for k, q in s.runqueue.items():
            assert q.vruntime_ms >= prev[k]
            prev[k] = q.vruntime_ms


def test_wake_credit_bounds_lag():
    s = state(busy=100.0, idle=0.0)
    s.wake_credit_ms = 3.0
    s.enqueue_non_dnn(task("b1", sub="busy"))
    s.enqueue_non_dnn(task("i1", sub="idle"))
    assert s.runqueue["idle"].vruntime_ms == 97.0
    # never decreases
    s2 = state(busy=1.0, idle=50.0)
    s2.enqueue_non_dnn(task("b1", sub="busy"))
    s2.enqueue_non_dnn(task("i1", sub="idle"))
    assert s2.runqueue["idle"].vruntime_ms == 50.0


def test_choose_platform_examples():
    pred = {"ipc": 10.0, "sbc_gpu": 20.0, "dla": 15.0}
    assert choose_platform(pred, ["dla", "ipc", "sbc_gpu"], {}) == "ipc"
    assert choose_platform(pred, ["dla", "sbc_gpu"], {}) == "dla"
    assert choose_platform({"x": 5.0, "y": 5.0}, ["x", "y"], {"x": 0.9, "y": 0.2}) == "y"
    assert choose_platform({"x": 5.0, "y": 5.0}, ["x", "y"], {}) == "x"
    assert choose_platform(pred, [], {}) is None


PLATS = [PlatformDescriptor("fast", PlatformKind.GPU, 10.0, 100.0, "h"),
         PlatformDescriptor("slow", PlatformKind.GPU, 2.0, 100.0, "h")]
ORACLE = LatencyOracleParams(base_ms={"m": {"fast": 5.0, "slow": 9.0}})


def test_dispatch_falls_back_without_predictor():
    plats = {p.id: PlatformState(p) for p in PLATS}
    t = task("d", kind=NodeKind.DNN, mem=60.0, model="m")
    dec = dispatch_dnn(t, None, {}, plats, ORACLE)
    assert dec.platform_id == "fast" and dec.degraded
    plats["fast"].admit(task("other", mem=60.0))
    assert dispatch_dnn(t, None, {}, plats, ORACLE).platform_id == "slow"
    plats["slow"].admit(task("other2", mem=60.0))
    assert dispatch_dnn(t, None, {}, plats, ORACLE).platform_id is None


def test_dispatch_uses_predictions():
    class Fake:
        def predict(self, model_id, batch, snapshots):
            class P:
                latency_ms = {"fast": 30.0, "slow": 12.0}
            return P()

    plats = {p.id: PlatformState(p) for p in PLATS}
    snaps = {p.id: PlatformSnapshot(p.id, 0.0, 0, 0, 0, 0, 0) for p in PLATS}
    dec = dispatch_dnn(task("d", kind=NodeKind.DNN, mem=1.0, model="m"), Fake(), snaps, plats, ORACLE)
    assert dec.platform_id == "slow" and dec.predicted_latency_ms == 12.0 and not dec.degraded


def test_baseline_policies_order():
    g = build_graph([ProgramNode("a"), ProgramNode("b")], [])
    an = analyze(g)
    fifo = FifoPolicy(an, ORACLE)
    for i, sub in enumerate(["b", "a", "b"]):
        fifo.enqueue(task(f"t{i}", sub=sub, release=float(i)))
    assert [fifo.next_non_dnn().id for _ in range(3)] == ["t0", "t1", "t2"]
    rr = RoundRobinPolicy(an, ORACLE)
    for i, sub in enumerate(["a", "a", "b"]):
        rr.enqueue(task(f"t{i}", sub=sub))
    assert [rr.next_non_dnn().id for _ in range(3)] == ["t0", "t2", "t1"]
    assert rr.next_non_dnn() is None


def test_task_invariants():
    with pytest.raises(ValueError):
        TaskInstance("x", "x", NodeKind.DNN, 0.0, batch=0)
    with pytest.raises(ValueError):
        TaskInstance("x", "x", NodeKind.NON_DNN, -1.0)
