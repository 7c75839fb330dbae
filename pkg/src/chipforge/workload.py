"""Operator-level network representation and roofline classification.

Networks are loaded from a line-oriented text format (one ``node`` or
``edge`` record per line, see `load_network`).  Every node carries named
loop bounds from which compute and traffic footprints are derived; a
``repeat`` count marks a node that stands for several identical layers
(all footprint fields scale by it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

OP_KINDS = (
    "conv",
    "depthwise-conv",
    "matmul",
    "attention-score",
    "attention-context",
    "elementwise",
    "normalization",
)

BATCH_AGNOSTIC = "batch-agnostic"
BATCH_SENSITIVE = "batch-sensitive"

# Kinds whose weights are reused across batch samples benefit from batching.
_DEFAULT_BATCH_CLASS = {
    "conv": BATCH_SENSITIVE,
    "depthwise-conv": BATCH_SENSITIVE,
    "matmul": BATCH_SENSITIVE,
    "attention-score": BATCH_AGNOSTIC,
    "attention-context": BATCH_AGNOSTIC,
    "elementwise": BATCH_AGNOSTIC,
    "normalization": BATCH_AGNOSTIC,
}

# Required loop-bound names per kind.
_DIM_SCHEMA = {
    "matmul": ("M", "K", "N"),
    "conv": ("N", "K", "C", "R", "S", "P", "Q"),
    "depthwise-conv": ("N", "C", "R", "S", "P", "Q"),
    "attention-score": ("H", "LQ", "LK", "D"),
    "attention-context": ("H", "LQ", "LK", "D"),
    "elementwise": ("E",),
    "normalization": ("E",),
}

# Guard against silent loss of precision in footprint arithmetic.
_MAX_COUNT = 1 << 62


class WorkloadError(ValueError):
    """Malformed workload file or graph-level validation failure."""


@dataclass(frozen=True)
class OperatorNode:
    id: str
    kind: str
    dims: dict
    bytes_per_element: int = 2
    batch_class: str = ""
    repeat: int = 1
    # Per-sample off-chip bytes streamed from resident state (e.g. a KV
    # cache) that do not appear as graph edges.
    stream_bytes: int = 0

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise WorkloadError(f"unknown operator kind {self.kind!r}")
        for name in _DIM_SCHEMA[self.kind]:
            if name not in self.dims:
                raise WorkloadError(f"node {self.id}: missing dim {name}")
            if self.dims[name] < 1:
                raise WorkloadError(f"node {self.id}: dim {name} < 1")
        if self.bytes_per_element < 1:
            raise WorkloadError(f"node {self.id}: bytes_per_element < 1")
        if self.repeat < 1:
            raise WorkloadError(f"node {self.id}: repeat < 1")
        if not self.batch_class:
            object.__setattr__(
                self, "batch_class", _DEFAULT_BATCH_CLASS[self.kind]
            )
        if self.batch_class not in (BATCH_AGNOSTIC, BATCH_SENSITIVE):
            raise WorkloadError(f"node {self.id}: bad batch_class")
        if self.kind.startswith("attention") and self.batch_class != BATCH_AGNOSTIC:
            raise WorkloadError(
                f"node {self.id}: attention operators are batch-agnostic"
            )


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    bytes: int


@dataclass(frozen=True)
class OperatorGraph:
    nodes: tuple[OperatorNode, ...]
    edges: tuple[Edge, ...]
    name: str = ""

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise WorkloadError("duplicate node id")
        index = {nid: i for i, nid in enumerate(ids)}
        for e in self.edges:
            if e.src not in index or e.dst not in index:
                raise WorkloadError(f"edge {e.src}->{e.dst}: unknown node id")
            if e.bytes <= 0:
                raise WorkloadError(f"edge {e.src}->{e.dst}: bytes <= 0")
            # Stored order must be a valid topological order, which also
            # rules out cycles.
            if index[e.src] >= index[e.dst]:
                raise WorkloadError(
                    f"edge {e.src}->{e.dst} violates stored topological order"
                )

    def node_index(self, node_id: str) -> int:
        for i, n in enumerate(self.nodes):
            if n.id == node_id:
                return i
        raise KeyError(node_id)


@dataclass(frozen=True)
class WorkloadStats:
    flops: int
    weight_bytes: int
    input_bytes: int
    output_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.weight_bytes + self.input_bytes + self.output_bytes

    @property
    def arithmetic_intensity(self) -> float:
        return self.flops / self.total_bytes


def _checked_product(factors: Iterable[int]) -> int:
    out = 1
    for f in factors:
        out *= f
        if out > _MAX_COUNT:
            raise OverflowError("loop-bound product exceeds representable range")
    return out


def _mac_count(op: OperatorNode) -> int:
    d = op.dims
    if op.kind == "matmul":
        return _checked_product((d["M"], d["K"], d["N"]))
    if op.kind == "conv":
        return _checked_product(
            (d["N"], d["K"], d["C"], d["R"], d["S"], d["P"], d["Q"])
        )
    if op.kind == "depthwise-conv":
        return _checked_product((d["N"], d["C"], d["R"], d["S"], d["P"], d["Q"]))
    if op.kind in ("attention-score", "attention-context"):
        return _checked_product((d["H"], d["LQ"], d["LK"], d["D"]))
    # elementwise / normalization: one op per element
    return d["E"]


def _weight_elems(op: OperatorNode) -> int:
    d = op.dims
    if op.kind == "matmul":
        return d["K"] * d["N"]
    if op.kind == "conv":
        return d["K"] * d["C"] * d["R"] * d["S"]
    if op.kind == "depthwise-conv":
        return d["C"] * d["R"] * d["S"]
    return 0


def _io_elems(op: OperatorNode) -> tuple[int, int]:
    """Per-sample (input, output) element counts, stride-1 spatial dims."""
    d = op.dims
    if op.kind == "matmul":
        return d["M"] * d["K"], d["M"] * d["N"]
    if op.kind == "conv":
        h, w = d["P"] + d["R"] - 1, d["Q"] + d["S"] - 1
        return d["N"] * d["C"] * h * w, d["N"] * d["K"] * d["P"] * d["Q"]
    if op.kind == "depthwise-conv":
        h, w = d["P"] + d["R"] - 1, d["Q"] + d["S"] - 1
        return d["N"] * d["C"] * h * w, d["N"] * d["C"] * d["P"] * d["Q"]
    if op.kind == "attention-score":
        return d["H"] * (d["LQ"] + d["LK"]) * d["D"], d["H"] * d["LQ"] * d["LK"]
    if op.kind == "attention-context":
        return (
            d["H"] * (d["LQ"] * d["LK"] + d["LK"] * d["D"]),
            d["H"] * d["LQ"] * d["D"],
        )
    return d["E"], d["E"]


def operator_footprint(op: OperatorNode, batch: int = 1) -> WorkloadStats:
    """Compute/traffic footprint of one operator at a given batch.

    Weights are independent of batch (fetched once per batch); input and
    output bytes scale linearly with batch.  All fields scale by the
    node's repeat count.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    macs = _checked_product((_mac_count(op), batch, op.repeat))
    flops = 2 * macs
    bpe = op.bytes_per_element
    ins, outs = _io_elems(op)
    return WorkloadStats(
        flops=flops,
        weight_bytes=_weight_elems(op) * bpe * op.repeat,
        input_bytes=_checked_product((ins, bpe, batch, op.repeat))
        + op.stream_bytes * batch,
        output_bytes=_checked_product((outs, bpe, batch, op.repeat)),
    )


def classify_boundedness(stats: WorkloadStats, chiplet, memory) -> str:
    """Roofline classification against one chiplet/memory pair.

    Compute-bound strictly above the ridge point; ties are memory-bound.
    """
    if chiplet.peak_flops <= 0:
        raise ValueError("chiplet peak throughput must be > 0")
    if memory.bandwidth <= 0:
        raise ValueError("memory bandwidth must be > 0")
    ridge = chiplet.peak_flops / memory.bandwidth
    return "compute-bound" if stats.arithmetic_intensity > ridge else "memory-bound"


def batch_response(op, chiplet, memory, batches):
    """Per-batch (latency, throughput) curve for one operator.

    Batch-agnostic operators have all traffic scale with batch, so the
    curve is exactly linear in latency and flat in throughput;
    batch-sensitive operators amortize weight traffic and gain
    throughput until the roofline flips to compute-bound.
    """
    from .perfmodel import dataflow_affinity

    if not batches:
        raise ValueError("batches must be nonempty")
    if any(b2 <= b1 for b1, b2 in zip(batches, batches[1:])):
        raise ValueError("batches must be strictly increasing")
    aff = dataflow_affinity(op.kind, chiplet.dataflow)
    curve = []
    for b in batches:
        st = operator_footprint(op, b)
        if op.batch_class == BATCH_AGNOSTIC:
            moved = b * operator_footprint(op, 1).total_bytes
        else:
            moved = st.total_bytes
        t = max(st.flops / (chiplet.peak_flops * aff), moved / memory.bandwidth)
        curve.append((t, b / t))
    return curve


def _parse_kv(tokens, where):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise WorkloadError(f"{where}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def parse_network(text: str, name: str = "") -> OperatorGraph:
    nodes: list[OperatorNode] = []
    edges: list[Edge] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        where = f"line {lineno}"
        if parts[0] == "node":
            if len(parts) < 3:
                raise WorkloadError(f"{where}: node needs id and kind")
            nid, kind = parts[1], parts[2]
            kv = _parse_kv(parts[3:], where)
            dims = {}
            bpe, repeat, stream, bclass = 2, 1, 0, ""
            for k, v in kv.items():
                if k == "bpe":
                    bpe = int(v)
                elif k == "repeat":
                    repeat = int(v)
                elif k == "stream":
                    stream = int(v)
                elif k == "batch_class":
                    bclass = v
                else:
                    try:
                        dims[k] = int(v)
                    except ValueError as exc:
                        raise WorkloadError(f"{where}: bad dim {k}={v}") from exc
            nodes.append(
                OperatorNode(nid, kind, dims, bpe, bclass, repeat, stream)
            )
        elif parts[0] == "edge":
            if len(parts) != 4:
                raise WorkloadError(f"{where}: edge needs src dst bytes=<n>")
            kv = _parse_kv(parts[3:], where)
            if set(kv) != {"bytes"}:
                raise WorkloadError(f"{where}: edge takes only bytes=<n>")
            edges.append(Edge(parts[1], parts[2], int(kv["bytes"])))
        else:
            raise WorkloadError(f"{where}: unknown record {parts[0]!r}")
    if not nodes:
        raise WorkloadError("empty workload file")
    return OperatorGraph(tuple(nodes), tuple(edges), name=name)


def load_network(path) -> OperatorGraph:
    """Load and validate a workload file."""
    import os

    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    name = os.path.splitext(os.path.basename(str(path)))[0]
    return parse_network(text, name=name)


def load_bundled(name: str) -> OperatorGraph:
    """Load one of the workload fixtures shipped with the package."""
    from importlib import resources

    text = (
        resources.files("chipforge").joinpath(f"data/{name}.graph").read_text()
    )
    return parse_network(text, name=name)
