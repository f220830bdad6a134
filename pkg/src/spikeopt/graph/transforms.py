"""Conversion transforms: batch-norm folding, ReLU range normalization,
max-pool tree decomposition, layer-norm decomposition, neuron substitution,
and the stimulate/depress calibration.

Every transform preserves the graph's real-arithmetic forward semantics; the
decompositions rewrite one nonlinear tensor operator into linear plumbing plus
binary-input nonlinearities that spiking neurons can evaluate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..schedules import Schedule, parse_schedule
from . import io as gio
from .model import (
    Graph,
    GraphError,
    Node,
    infer_shapes,
    node_forward,
    run_forward,
)

__all__ = [
    "ConversionError",
    "SnnGraph",
    "fold_batchnorm",
    "normalize_relu",
    "decompose_maxpool",
    "decompose_layernorm",
    "convert",
    "calibrate",
]


class ConversionError(GraphError):
    """A node cannot be converted or transformed as requested."""


def _rebuild(g: Graph, nodes: list[Node], edges: list) -> Graph:
    return Graph(nodes, edges)


def fold_batchnorm(g: Graph) -> Graph:
    """Absorb inference-time batch norm into the preceding dense/conv node."""
    g = g.copy()
    nodes = [g.nodes[i] for i in g.topo_order]
    edges = list(g.edges)
    for bn in [n for n in nodes if n.kind == "batchnorm"]:
        preds = g.inputs_of(bn.id)
        if len(preds) != 1:
            raise ConversionError(f"batchnorm {bn.id!r} needs a single producer")
        prev = g.nodes[preds[0]]
        if prev.kind not in ("dense", "conv2d"):
            raise ConversionError(
                f"batchnorm {bn.id!r} follows {prev.kind!r}; only dense/conv2d can fold"
            )
        if len(set(g.successors(prev.id))) != 1:
            raise ConversionError(
                f"cannot fold batchnorm {bn.id!r}: producer {prev.id!r} feeds other nodes"
            )
        scale = bn.tensor("gamma") / np.sqrt(bn.tensor("var") + bn.params["eps"])
        w, b = prev.tensor("weight"), prev.tensor("bias")
        if prev.kind == "dense":
            w = w * scale[:, None]
        else:
            w = w * scale[:, None, None, None]
        b = (b - bn.tensor("mean")) * scale + bn.tensor("beta")
        prev.params["weight"] = w.astype(np.float32)
        prev.params["bias"] = b.astype(np.float32)
        # splice the bn node out
        nodes = [n for n in nodes if n.id != bn.id]
        edges = [(s, d, p) for s, d, p in edges if d != bn.id]
        edges = [
            (prev.id, d, p) if s == bn.id else (s, d, p) for s, d, p in edges
        ]
    return _rebuild(g, nodes, edges)


def normalize_relu(g: Graph, calib_inputs) -> Graph:
    """Scale each ReLU's neighborhood by its maximum observed activation.

    Records M_f on the node (params['m_f']) and folds M_f into the adjacent
    affine parameters using ReLU's positive homogeneity, so the forward
    output is unchanged. Dead ReLUs (M_f <= 0) are skipped with a warning.
    """
    g = g.copy()
    relus = [n.id for n in g.nodes.values() if n.kind == "relu"]
    if not relus:
        raise ConversionError("graph has no ReLU nodes to normalize")
    batches = list(calib_inputs)
    if not batches:
        raise ConversionError("need at least one calibration batch")
    peaks = {rid: 0.0 for rid in relus}
    for x in batches:
        acts = run_forward(g, x)
        for rid in relus:
            peaks[rid] = max(peaks[rid], float(np.max(acts[rid])))
    for rid in relus:
        m = peaks[rid]
        relu_node = g.nodes[rid]
        if m <= 0.0:
            warnings.warn(f"ReLU {rid!r} never activates on calibration data; skipped")
            continue
        preds = g.inputs_of(rid)
        succs = list(set(g.successors(rid)))
        if len(preds) != 1 or g.nodes[preds[0]].kind not in ("dense", "conv2d", "affine"):
            raise ConversionError(f"ReLU {rid!r} lacks an affine producer to scale")
        for sid in succs:
            if g.nodes[sid].kind not in ("dense", "conv2d", "affine"):
                raise ConversionError(
                    f"ReLU {rid!r} feeds {g.nodes[sid].kind!r} node {sid!r}; cannot fold its scale"
                )
        prev = g.nodes[preds[0]]
        prev.params["weight"] = (prev.tensor("weight") / m).astype(np.float32)
        prev.params["bias"] = (prev.tensor("bias") / m).astype(np.float32)
        for sid in succs:
            nxt = g.nodes[sid]
            nxt.params["weight"] = (nxt.tensor("weight") * m).astype(np.float32)
        relu_node.params["m_f"] = m
    return g


def _tournament_rounds(count: int) -> list[tuple[list[int], list[int], list[int]]]:
    """Pairings (a_idx, b_idx, bye_idx) per round reducing `count` slots to 1."""
    rounds = []
    slots = list(range(count))
    while len(slots) > 1:
        a = slots[0::2][: len(slots) // 2]
        b = slots[1::2]
        bye = slots[len(b) * 2 :]
        rounds.append((a, b, bye))
        slots = list(range(len(b) + len(bye)))
    return rounds


def decompose_maxpool(g: Graph) -> Graph:
    """Replace each max pooling with a tournament of binary max stages.

    Rows of each window are reduced K_r -> 1, then columns K_c -> 1, giving
    K_r*K_c - 1 binary-max evaluations per window at tree depth
    ceil(log2 K_r) + ceil(log2 K_c); odd counts pass an element through as a
    bye. Stage inputs are flat `gather` selections, so overlapping windows
    are supported. The final stage keeps the pooling node's id.
    """
    g = g.copy()
    shapes = infer_shapes(g)
    nodes = [g.nodes[i] for i in g.topo_order]
    edges = list(g.edges)
    for mp in [n for n in nodes if n.kind == "maxpool2d"]:
        src = g.inputs_of(mp.id)[0]
        c, h, w = shapes[src]
        kh, kw = mp.params["kernel"]
        sh, sw = mp.params.get("stride", mp.params["kernel"])
        ho = (h - kh) // sh + 1
        wo = (w - kw) // sw + 1

        # positions[window][dy][dx] = flat index into the current stage tensor
        windows = [(ci, i, j) for ci in range(c) for i in range(ho) for j in range(wo)]
        pos = {
            win: [
                [win[0] * h * w + (win[1] * sh + dy) * w + (win[2] * sw + dx) for dx in range(kw)]
                for dy in range(kh)
            ]
            for win in windows
        }

        new_nodes: list[Node] = []
        new_edges: list = []
        prev_id = src
        stage = 0

        def add_stage(pair_a, pair_b, byes, prev_id, stage):
            base = f"{mp.id}.s{stage}"
            ga = Node(f"{base}.a", "gather", {"indices": pair_a})
            gb = Node(f"{base}.b", "gather", {"indices": pair_b})
            mx = Node(f"{base}.max", "max2", {})
            new_nodes.extend([ga, gb, mx])
            new_edges.extend(
                [(prev_id, ga.id, 0), (prev_id, gb.id, 0), (ga.id, mx.id, 0), (gb.id, mx.id, 1)]
            )
            if byes:
                gc = Node(f"{base}.bye", "gather", {"indices": byes})
                cat = Node(f"{base}.cat", "concat", {})
                new_nodes.extend([gc, cat])
                new_edges.extend([(prev_id, gc.id, 0), (mx.id, cat.id, 0), (gc.id, cat.id, 1)])
                return cat.id
            return mx.id

        # row stage: reduce the dy dimension of every window in lockstep
        for a_rows, b_rows, bye_rows in _tournament_rounds(kh):
            pair_a, pair_b, byes = [], [], []
            for win in windows:
                for dx in range(kw):
                    for ra, rb in zip(a_rows, b_rows):
                        pair_a.append(pos[win][ra][dx])
                        pair_b.append(pos[win][rb][dx])
                    for rb_ in bye_rows:
                        byes.append(pos[win][rb_][dx])
            prev_id = add_stage(pair_a, pair_b, byes, prev_id, stage)
            stage += 1
            # recompute positions in the stage output: pairs first, then byes
            cursor_pair, cursor_bye = 0, len(pair_a)
            for win in windows:
                merged = []
                for dx in range(kw):
                    col = []
                    for _ in zip(a_rows, b_rows):
                        col.append(cursor_pair)
                        cursor_pair += 1
                    for _ in bye_rows:
                        col.append(cursor_bye)
                        cursor_bye += 1
                    merged.append(col)
                # merged is per-dx lists of new row positions
                rows_now = len(merged[0])
                pos[win] = [[merged[dx][r] for dx in range(kw)] for r in range(rows_now)]

        # column stage: each window now holds a single row of kw entries
        for a_cols, b_cols, bye_cols in _tournament_rounds(kw):
            pair_a, pair_b, byes = [], [], []
            for win in windows:
                row = pos[win][0]
                for ca, cb in zip(a_cols, b_cols):
                    pair_a.append(row[ca])
                    pair_b.append(row[cb])
                for cb_ in bye_cols:
                    byes.append(row[cb_])
            prev_id = add_stage(pair_a, pair_b, byes, prev_id, stage)
            stage += 1
            cursor_pair, cursor_bye = 0, len(pair_a)
            for win in windows:
                row = []
                for _ in zip(a_cols, b_cols):
                    row.append(cursor_pair)
                    cursor_pair += 1
                for _ in bye_cols:
                    row.append(cursor_bye)
                    cursor_bye += 1
                pos[win] = [row]

        # reorder the surviving elements into (C, Ho, Wo) and keep the id
        order = Node(f"{mp.id}.order", "gather", {"indices": [pos[w][0][0] for w in windows]})
        final = Node(mp.id, "reshape", {"shape": [c, ho, wo]})
        new_nodes.extend([order, final])
        new_edges.extend([(prev_id, order.id, 0), (order.id, final.id, 0)])

        nodes = [n for n in nodes if n.id != mp.id] + new_nodes
        edges = [(s, d, p) for s, d, p in edges if d != mp.id and s != mp.id] + new_edges
        edges += [(final.id, d, p) for s, d, p in g.edges if s == mp.id]
    return _rebuild(g, nodes, edges)


def decompose_layernorm(g: Graph) -> Graph:
    """Rewrite layer norm into centering, square, mean+eps, and x1/sqrt(x2).

    Stages: affine (I - J/n) -> square layer -> affine (mean row, bias eps)
    -> mul_inv_sqrt (centered value over shared variance) -> affine
    (gamma scale, beta shift, keeping the original node id). Variance uses
    the population divisor n.
    """
    g = g.copy()
    shapes = infer_shapes(g)
    nodes = [g.nodes[i] for i in g.topo_order]
    edges = list(g.edges)
    for ln in [n for n in nodes if n.kind == "layernorm"]:
        src = g.inputs_of(ln.id)[0]
        shape = shapes[src]
        if len(shape) != 1:
            raise ConversionError(
                f"layernorm {ln.id!r}: only flat (n,) inputs are supported, got {shape}"
            )
        n = shape[0]
        gamma, beta, eps = ln.tensor("gamma"), ln.tensor("beta"), ln.params["eps"]
        center = Node(
            f"{ln.id}.center", "affine",
            {"weight": np.eye(n) - np.full((n, n), 1.0 / n), "bias": np.zeros(n)},
        )
        sq = Node(f"{ln.id}.sq", "square", {})
        var = Node(
            f"{ln.id}.var", "affine",
            {"weight": np.full((1, n), 1.0 / n), "bias": np.array([eps])},
        )
        norm = Node(f"{ln.id}.norm", "mul_inv_sqrt", {})
        out = Node(ln.id, "affine", {"weight": np.diag(gamma), "bias": beta})
        new_edges = [
            (src, center.id, 0),
            (center.id, sq.id, 0),
            (sq.id, var.id, 0),
            (center.id, norm.id, 0),
            (var.id, norm.id, 1),
            (norm.id, out.id, 0),
        ]
        nodes = [x for x in nodes if x.id != ln.id] + [center, sq, var, norm, out]
        edges = [(s, d, p) for s, d, p in edges if d != ln.id] + new_edges
    return _rebuild(g, nodes, edges)


_SIGNGD_MAP = {
    "relu": "signgd:relu",
    "gelu": "signgd:gelu",
    "max2": "signgd:max2",
    "square": "signgd:square",
    "mul_inv_sqrt": "signgd:misr",
}


@dataclass
class SnnGraph:
    """Converted network: operator DAG with neuron layers, one shared schedule."""

    graph: Graph
    family: str
    schedule: Schedule
    parameterization: str = "canonical"
    meta: dict = field(default_factory=dict)

    @property
    def calibrated(self) -> bool:
        return all(
            n.params.get("cal_w") is not None
            for n in self.graph.nodes.values()
            if n.kind == "neuron"
        ) and self.graph.nodes[self.graph.output_id].params.get("cal_w") is not None

    def neuron_nodes(self) -> list[Node]:
        return [self.graph.nodes[i] for i in self.graph.topo_order
                if self.graph.nodes[i].kind == "neuron"]

    def save(self, path) -> None:
        meta = dict(self.meta)
        meta.update(
            family=self.family,
            schedule=str(self.schedule),
            parameterization=self.parameterization,
            kind="snn",
        )
        gio.save_model(self.graph, path, meta=meta)

    @classmethod
    def load(cls, path) -> "SnnGraph":
        graph, meta = gio.load_model(path)
        if meta.get("kind") != "snn":
            raise ConversionError(f"{path} is not a converted SNN model")
        family = meta.pop("family")
        schedule = parse_schedule(meta.pop("schedule"))
        parameterization = meta.pop("parameterization", "canonical")
        meta.pop("kind", None)
        return cls(graph, family, schedule, parameterization, meta)


def convert(g: Graph, neuron_family: str, schedule: Schedule,
            parameterization: str = "canonical") -> SnnGraph:
    """Convert an operator graph into a spiking network (uncalibrated).

    Applies batch-norm folding and the max-pool / layer-norm decompositions,
    rewrites average pooling as fixed convolution weights, then substitutes
    each nonlinearity with its neuron layer. The subgradient family supports
    ReLU-only graphs; the sign family covers every decomposed nonlinearity.
    """
    if neuron_family not in ("subgrad", "signgd"):
        raise ConversionError(f"unknown neuron family {neuron_family!r}")
    if any(n.kind == "batchnorm" for n in g.nodes.values()):
        g = fold_batchnorm(g)
    if any(n.kind == "maxpool2d" for n in g.nodes.values()):
        if neuron_family == "subgrad":
            bad = next(n for n in g.nodes.values() if n.kind == "maxpool2d")
            raise ConversionError(
                f"node {bad.id!r} (maxpool2d) is not supported by the subgrad family"
            )
        g = decompose_maxpool(g)
    if any(n.kind == "layernorm" for n in g.nodes.values()):
        if neuron_family == "subgrad":
            bad = next(n for n in g.nodes.values() if n.kind == "layernorm")
            raise ConversionError(
                f"node {bad.id!r} (layernorm) is not supported by the subgrad family"
            )
        g = decompose_layernorm(g)
    g = g.copy()
    shapes = infer_shapes(g)

    for nid in g.topo_order:
        node = g.nodes[nid]
        if node.kind == "avgpool2d":
            src = g.inputs_of(nid)[0]
            c = shapes[src][0]
            kh, kw = node.params["kernel"]
            sh, sw = node.params.get("stride", node.params["kernel"])
            w = np.zeros((c, c, kh, kw), dtype=np.float32)
            for ci in range(c):
                w[ci, ci] = 1.0 / (kh * kw)
            node.kind = "conv2d"
            node.params = {
                "weight": w, "bias": np.zeros(c, dtype=np.float32),
                "stride": [sh, sw], "padding": [0, 0],
            }
            continue
        if node.kind in ("relu", "leaky_relu", "gelu", "max2", "square", "mul_inv_sqrt"):
            if neuron_family == "subgrad":
                if node.kind != "relu":
                    raise ConversionError(
                        f"node {nid!r} ({node.kind}) is not supported by the subgrad family"
                    )
                mech = "subgrad"
            elif node.kind == "leaky_relu":
                mech = f"signgd:leaky:{node.params['delta']:g}"
            else:
                mech = _SIGNGD_MAP[node.kind]
            in_shape = shapes[g.predecessors(nid)[0][0]]
            count = int(np.prod(in_shape))
            arity = 2 if node.kind in ("max2", "mul_inv_sqrt") else 1
            m_f = node.params.get("m_f")
            node.kind = "neuron"
            node.params = {
                "mech": mech, "count": count, "arity": arity,
                "shape": list(in_shape), "cal_w": None, "cal_b": None,
            }
            if m_f is not None:
                node.params["m_f"] = m_f

    snn_graph = Graph([g.nodes[i] for i in g.topo_order], list(g.edges))
    return SnnGraph(snn_graph, neuron_family, schedule, parameterization)


def _forced_pass(snn: SnnGraph, emission: float):
    """Propagate a constant emission through the linear plumbing.

    Every neuron layer and the input node are forced to emit `emission`;
    recorded are the per-port influx currents of each neuron layer and of
    the output node.
    """
    g = snn.graph
    frames: dict[str, np.ndarray] = {}
    currents: dict[str, list[np.ndarray]] = {}
    out_current = None
    for nid in g.topo_order:
        node = g.nodes[nid]
        if node.kind == "input":
            frames[nid] = np.full(tuple(node.params["shape"]), emission)
            continue
        inputs = [frames[s] for s, _ in g.predecessors(nid)]
        if node.kind == "neuron":
            currents[nid] = [x.reshape(-1) for x in inputs]
            frames[nid] = np.full(tuple(node.params["shape"]), emission)
        elif node.kind == "output":
            out_current = inputs[0].reshape(-1)
            frames[nid] = inputs[0]
        else:
            frames[nid] = node_forward(node, inputs)
    return currents, out_current


def calibrate(snn: SnnGraph) -> SnnGraph:
    """Populate the spike-to-sign calibration by stimulate/depress passes.

    Two algebraic forward passes over the linear segments: all-ones emission
    records the stimulated currents, all-zeros the idle currents; each neuron
    operand stores W = I+ - I- and b = I-, and the output node stores the
    readout calibration the same way.
    """
    hi, out_hi = _forced_pass(snn, 1.0)
    lo, out_lo = _forced_pass(snn, 0.0)
    for node in snn.neuron_nodes():
        n = node.params["count"]
        arity = node.params["arity"]
        w = np.zeros((arity, n))
        b = np.zeros((arity, n))
        for port in range(arity):
            w[port] = np.broadcast_to(hi[node.id][port] - lo[node.id][port], (n,))
            b[port] = np.broadcast_to(lo[node.id][port], (n,))
        node.params["cal_w"] = w
        node.params["cal_b"] = b
    out_node = snn.graph.nodes[snn.graph.output_id]
    out_node.params["cal_w"] = out_hi - out_lo
    out_node.params["cal_b"] = out_lo
    return snn
