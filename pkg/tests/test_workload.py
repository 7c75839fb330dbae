import math

import pytest

from chipforge import workload
from chipforge.perfmodel import MemoryModule, scaled_chiplet
from chipforge.workload import (
    BATCH_AGNOSTIC,
    BATCH_SENSITIVE,
    Edge,
    OperatorGraph,
    OperatorNode,
    WorkloadError,
    batch_response,
    classify_boundedness,
    operator_footprint,
    parse_network,
)


def matmul(nid="m", M=2, K=3, N=4, **kw):
    return OperatorNode(nid, "matmul", {"M": M, "K": K, "N": N}, **kw)


class TestFootprint:
    def test_matmul_hand_counts(self):
        # 2*M*K*N flops; K*N weights, M*K inputs, M*N outputs, 2 B/elem
        st = operator_footprint(matmul())
        assert st.flops == 48
        assert st.weight_bytes == 24
        assert st.input_bytes == 12
        assert st.output_bytes == 16

    def test_conv_hand_counts(self):
        op = OperatorNode(
            "c", "conv", {"N": 1, "K": 4, "C": 3, "R": 3, "S": 3, "P": 8, "Q": 8}
        )
        st = operator_footprint(op)
        assert st.flops == 2 * 4 * 3 * 9 * 64
        assert st.weight_bytes == 4 * 3 * 9 * 2
        assert st.input_bytes == 3 * 10 * 10 * 2  # stride-1 halo
        assert st.output_bytes == 4 * 64 * 2

    def test_attention_score_hand_counts(self):
        op = OperatorNode(
            "s", "attention-score", {"H": 2, "LQ": 4, "LK": 8, "D": 16}
        )
        st = operator_footprint(op)
        assert st.flops == 2 * 2 * 4 * 8 * 16
        assert st.weight_bytes == 0
        assert st.input_bytes == 2 * (4 + 8) * 16 * 2
        assert st.output_bytes == 2 * 4 * 8 * 2

    def test_batch_scales_io_not_weights(self):
        one = operator_footprint(matmul())
        three = operator_footprint(matmul(), batch=3)
        assert three.flops == 3 * one.flops
        assert three.weight_bytes == one.weight_bytes
        assert three.input_bytes == 3 * one.input_bytes
        assert three.output_bytes == 3 * one.output_bytes

    def test_repeat_scales_everything_static(self):
        rep = operator_footprint(matmul(repeat=2))
        one = operator_footprint(matmul())
        assert rep.flops == 2 * one.flops
        assert rep.weight_bytes == 2 * one.weight_bytes

    def test_stream_bytes_scale_with_batch_only(self):
        op = matmul(stream_bytes=100)
        assert operator_footprint(op, 1).input_bytes == 12 + 100
        assert operator_footprint(op, 4).input_bytes == 48 + 400

    def test_overflow_guard(self):
        op = OperatorNode("h", "matmul", {"M": 1 << 21, "K": 1 << 21, "N": 1 << 21})
        with pytest.raises(OverflowError):
            operator_footprint(op)

    def test_intensity(self):
        st = operator_footprint(matmul())
        assert st.arithmetic_intensity == 48 / 52


class TestClassification:
    def test_ridge_tie_is_memory_bound(self):
        chiplet = scaled_chiplet("WS", 1, 1)
        ridge = chiplet.peak_flops / 64e9
        mem = MemoryModule("X", 64e9, 1e-12, 1 << 30, 1.0)
        at = lambda flops, total: workload.WorkloadStats(flops, total, 0, 0)
        assert classify_boundedness(at(int(ridge * 10), 10), chiplet, mem) == "memory-bound"
        assert classify_boundedness(at(int(ridge * 10) + 10, 10), chiplet, mem) == "compute-bound"

    def test_batch_agnostic_flat_throughput(self):
        op = OperatorNode("e", "elementwise", {"E": 4096})
        chiplet = scaled_chiplet("OS", 1, 1)
        mem = MemoryModule("X", 64e9, 1e-12, 1 << 30, 1.0)
        curve = batch_response(op, chiplet, mem, [1, 2, 4, 8])
        thru = [b / t for (t, _), b in zip(curve, [1, 2, 4, 8])]
        assert all(math.isclose(x, thru[0], rel_tol=1e-12) for x in thru)

    def test_batch_sensitive_throughput_improves(self):
        op = matmul(M=1, K=2048, N=2048)
        chiplet = scaled_chiplet("WS", 1, 1)
        mem = MemoryModule("X", 64e9, 1e-12, 1 << 30, 1.0)
        curve = batch_response(op, chiplet, mem, [1, 8])
        assert curve[1][1] > curve[0][1]


class TestParser:
    def test_roundtrip_example(self):
        g = parse_network(
            "node a matmul M=2 K=3 N=4\nnode b elementwise E=8\nedge a b bytes=16\n"
        )
        assert [n.id for n in g.nodes] == ["a", "b"]
        assert g.nodes[0].batch_class == BATCH_SENSITIVE
        assert g.nodes[1].batch_class == BATCH_AGNOSTIC
        assert g.edges[0].bytes == 16

    def test_unknown_kind(self):
        with pytest.raises(WorkloadError):
            parse_network("node a gemm M=1 K=1 N=1\n")

    def test_missing_dim(self):
        with pytest.raises(WorkloadError):
            parse_network("node a matmul M=1 K=1\n")

    def test_dangling_edge(self):
        with pytest.raises(WorkloadError):
            OperatorGraph((matmul("a"),), (Edge("a", "zz", 4),))

    def test_order_violation_rejected(self):
        nodes = (matmul("a"), matmul("b"))
        with pytest.raises(WorkloadError):
            OperatorGraph(nodes, (Edge("b", "a", 4),))

    def test_attention_cannot_be_batch_sensitive(self):
        with pytest.raises(WorkloadError):
            OperatorNode(
                "s",
                "attention-score",
                {"H": 1, "LQ": 1, "LK": 1, "D": 1},
                batch_class=BATCH_SENSITIVE,
            )

    def test_all_bundled_fixtures_load(self):
        for name in [
            "opt66b_prefill",
            "opt66b_decode",
            "opt1p3b_decode",
            "resnet50",
            "mobilenetv3",
            "vit",
            "replknet31",
            "convstack",
            "toy_chain",
            "toy_decode",
        ]:
            g = workload.load_bundled(name)
            assert g.nodes

    def test_decode_attention_is_memory_bound(self):
        # single-token decode attention streams the whole KV cache: far
        # below every ridge point in the default menus
        g = workload.load_bundled("opt66b_decode")
        score = g.nodes[g.node_index("score")]
        st = operator_footprint(score)
        chiplet = scaled_chiplet("WS", 4, 16)
        mem = MemoryModule("HBM3", 819e9, 3.5e-12, 24 << 30, 15.0)
        assert classify_boundedness(st, chiplet, mem) == "memory-bound"
