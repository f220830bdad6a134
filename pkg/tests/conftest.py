"""Shared model builders for the graph/engine/CLI/acceptance tests."""

import numpy as np
import pytest

from spikeopt.codec import make_rng
from spikeopt.graph import Graph, Node


def chain_edges(ids):
    return [(a, b, 0) for a, b in zip(ids, ids[1:])]


def dense_node(rng, nid, n_in, n_out, scale=None):
    scale = scale if scale is not None else 1.0 / np.sqrt(n_in)
    return Node(nid, "dense", {
        "weight": rng.normal(0, scale, (n_out, n_in)),
        "bias": rng.normal(0, 0.1, n_out),
    })


def build_mlp(seed=0, dims=(8, 16, 4), act="relu", act_params=None):
    """input -> dense -> act -> dense -> ... -> output."""
    rng = make_rng(seed)
    nodes = [Node("in", "input", {"shape": [dims[0]]})]
    ids = ["in"]
    for k in range(len(dims) - 1):
        nid = f"fc{k}"
        nodes.append(dense_node(rng, nid, dims[k], dims[k + 1]))
        ids.append(nid)
        if k < len(dims) - 2:
            aid = f"act{k}"
            nodes.append(Node(aid, act, dict(act_params or {})))
            ids.append(aid)
    nodes.append(Node("out", "output", {}))
    ids.append("out")
    return Graph(nodes, chain_edges(ids))


def build_cnn(seed=0, in_shape=(1, 8, 8), channels=4, kernel=3, pool=2, n_out=4):
    rng = make_rng(seed)
    c, h, w = in_shape
    hc = h - kernel + 1
    hp = hc // pool
    flat = channels * hp * hp
    nodes = [
        Node("in", "input", {"shape": list(in_shape)}),
        Node("conv", "conv2d", {
            "weight": rng.normal(0, 1.0 / np.sqrt(c * kernel * kernel),
                                 (channels, c, kernel, kernel)),
            "bias": rng.normal(0, 0.1, channels),
            "stride": [1, 1], "padding": [0, 0],
        }),
        Node("act", "relu", {}),
        Node("pool", "maxpool2d", {"kernel": [pool, pool], "stride": [pool, pool]}),
        Node("flat", "flatten", {}),
        dense_node(rng, "fc", flat, n_out),
        Node("out", "output", {}),
    ]
    return Graph(nodes, chain_edges(["in", "conv", "act", "pool", "flat", "fc", "out"]))


def build_layernorm_block(seed=0, n=10, n_out=4):
    rng = make_rng(seed)
    nodes = [
        Node("in", "input", {"shape": [n]}),
        dense_node(rng, "fc0", n, n),
        Node("ln", "layernorm", {
            "gamma": rng.uniform(0.5, 1.5, n), "beta": rng.normal(0, 0.2, n),
            "eps": 1e-5,
        }),
        Node("act", "gelu", {}),
        dense_node(rng, "fc1", n, n_out),
        Node("out", "output", {}),
    ]
    return Graph(nodes, chain_edges(["in", "fc0", "ln", "act", "fc1", "out"]))


@pytest.fixture
def rng():
    return make_rng(1234)
