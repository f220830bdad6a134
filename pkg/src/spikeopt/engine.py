"""Time-stepped execution of converted networks.

One global step encodes the next input frame, pushes it through the node
order (linear nodes map the instantaneous frame, neuron layers integrate,
fire and reset), and folds the output node's current into the readout:

  sign family      readout r(t) = r(t-1) - eta(t) (2 (I_out - b_out) - W_out),
                   r(0) = b_out (the calibrated output bias image)
  subgradient/rate readout r(t) = running mean of output currents

Inputs are encoded per element with the family's codec, so the first neuron
layer sees encoder emissions exactly like upstream spikes. Classification
reads argmax r(T).

An instance is single-writer; independent instances (e.g. dataset items)
share the immutable SnnGraph and run fully in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import (
    ConstantEncoder,
    DeterministicEncoder,
    FloatEncoder,
    PoissonEncoder,
    RateDeterministicEncoder,
    StochasticEncoder,
)
from .graph.model import Graph, infer_shapes, node_forward, run_forward
from .graph.transforms import ConversionError, SnnGraph
from .neurons import SignGdNeuron, SubgradNeuron, parse_mechanism
from .schedules import solve_signgd_coefficients, solve_subgrad_coefficients

__all__ = [
    "ann_forward",
    "SnnInstance",
    "make_input_encoder",
    "run",
    "probe",
    "TraceRecord",
    "EnergyModel",
    "EnergyReport",
    "estimate_energy",
]


def ann_forward(g: Graph, x) -> dict[str, np.ndarray]:
    """Reference activations of every node (neuron layers evaluate their
    target nonlinearity)."""
    return run_forward(g, np.asarray(x, dtype=np.float64))


class SnnInstance:
    """Executable state for one converted network (single input stream)."""

    def __init__(self, snn: SnnGraph):
        if not snn.calibrated:
            raise ConversionError("calibrate the network before executing it")
        self.snn = snn
        self.graph = snn.graph
        self.schedule = snn.schedule
        self.shapes = infer_shapes(snn.graph)
        self.input_shape = tuple(self.graph.nodes[self.graph.input_id].params["shape"])
        out = self.graph.nodes[self.graph.output_id]
        self.readout_w = out.tensor("cal_w")
        self.readout_b = out.tensor("cal_b")
        self.layers: dict[str, object] = {}
        for node in snn.neuron_nodes():
            n = node.params["count"]
            if node.params["mech"] == "subgrad":
                coeffs = solve_subgrad_coefficients(snn.schedule)
                self.layers[node.id] = SubgradNeuron(coeffs, n=n)
            else:
                mech = parse_mechanism(node.params["mech"])
                coeffs = solve_signgd_coefficients(snn.schedule, snn.parameterization)
                self.layers[node.id] = SignGdNeuron(
                    mech, coeffs, snn.schedule,
                    W=node.tensor("cal_w"), b=node.tensor("cal_b"), n=n,
                )
        self.t = 0
        self.r = self._initial_readout()
        self.spike_counts = {nid: 0 for nid in self.layers}

    def _initial_readout(self) -> np.ndarray:
        if self.snn.family == "signgd":
            return self.readout_b.copy()
        return np.zeros_like(self.readout_b)

    def reset(self):
        for layer in self.layers.values():
            layer.reset()
        self.t = 0
        self.r = self._initial_readout()
        self.spike_counts = {nid: 0 for nid in self.layers}

    def step(self, input_frame) -> np.ndarray:
        """Propagate one spike/current frame; returns the readout snapshot."""
        x = np.asarray(input_frame, dtype=np.float64).reshape(self.input_shape)
        self.t += 1
        frames: dict[str, np.ndarray] = {}
        out_current = None
        for nid in self.graph.topo_order:
            node = self.graph.nodes[nid]
            if node.kind == "input":
                frames[nid] = x
                continue
            inputs = [frames[s] for s, _ in self.graph.predecessors(nid)]
            if node.kind == "neuron":
                layer = self.layers[nid]
                n = node.params["count"]
                if node.params["arity"] == 1:
                    currents = inputs[0].reshape(1, -1)
                else:
                    currents = np.stack([
                        np.broadcast_to(p.reshape(-1), (n,)) if p.size != n else p.reshape(-1)
                        for p in inputs
                    ])
                spikes = layer.step(currents)
                self.spike_counts[nid] += int(np.sum(spikes))
                frames[nid] = spikes.reshape(tuple(node.params["shape"]))
            elif node.kind == "output":
                out_current = inputs[0].reshape(-1)
                frames[nid] = inputs[0]
            else:
                frames[nid] = node_forward(node, inputs)
        if self.snn.family == "signgd":
            eta_t = float(self.schedule(self.t))
            self.r = self.r - eta_t * (2.0 * (out_current - self.readout_b) - self.readout_w)
        else:
            self.r = self.r * (self.t - 1) / self.t + out_current / self.t
        return self.r.copy()

    @property
    def total_spikes(self) -> int:
        return sum(self.spike_counts.values())

    @property
    def total_neurons(self) -> int:
        return sum(node.params["count"] for node in self.snn.neuron_nodes())

    def layer_decoded(self) -> dict[str, np.ndarray]:
        return {nid: np.asarray(layer.decoded).copy() for nid, layer in self.layers.items()}


def make_input_encoder(snn: SnnGraph, x, encoder: str = "float",
                       stoch_c: float = 0.5, seed: int = 0):
    """Per-element input encoder matched to the network's coding family.

    sign family: the signed-schedule codecs (float / det / stoch).
    subgradient family: constant current (float), greedy rate spikes (det),
    or Bernoulli(ReLU1(x)) spikes (stoch).
    """
    flat = np.asarray(x, dtype=np.float64).reshape(-1)
    if snn.family == "signgd":
        if encoder == "float":
            return FloatEncoder(flat, snn.schedule)
        if encoder == "det":
            return DeterministicEncoder(flat, snn.schedule)
        if encoder == "stoch":
            return StochasticEncoder(flat, snn.schedule, c=stoch_c, seed=seed)
    else:
        if encoder == "float":
            return ConstantEncoder(flat)
        if encoder == "det":
            return RateDeterministicEncoder(flat)
        if encoder == "stoch":
            return PoissonEncoder(flat, seed=seed)
    raise ValueError(f"unknown encoder {encoder!r}")


def run(snn: SnnGraph, x, T: int, encoder: str = "float", stoch_c: float = 0.5,
        seed: int = 0, instance: SnnInstance | None = None) -> np.ndarray:
    """Drive T steps; returns the readout history of shape (T, n_out)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    inst = instance or SnnInstance(snn)
    inst.reset()
    enc = make_input_encoder(snn, x, encoder, stoch_c, seed)
    history = np.empty((T, inst.readout_b.size))
    for t in range(T):
        history[t] = inst.step(enc.step())
    return history


@dataclass
class TraceRecord:
    """Per-layer decode-vs-reference errors plus spike counts for one run."""

    layer_ids: list[str]
    times: np.ndarray
    errors: dict[str, np.ndarray]          # layer id -> (T,) error norms
    readout_error: np.ndarray              # (T,)
    spike_counts: dict[str, int] = field(default_factory=dict)
    norm: str = "maxabs"

    def rows(self):
        """CSV rows (layer, t, err), readout listed as layer 'readout'."""
        for lid in self.layer_ids:
            for t, e in zip(self.times, self.errors[lid]):
                yield lid, int(t), float(e)
        for t, e in zip(self.times, self.readout_error):
            yield "readout", int(t), float(e)


def probe(snn: SnnGraph, x, T: int, encoder: str = "float", stoch_c: float = 0.5,
          seed: int = 0, norm: str = "maxabs") -> TraceRecord:
    """Compare per-layer decoded activations against the reference forward."""
    inst = SnnInstance(snn)
    enc = make_input_encoder(snn, x, encoder, stoch_c, seed)
    acts = ann_forward(snn.graph, x)
    ref = {nid: acts[nid].reshape(-1) for nid in inst.layers}
    ref_out = acts[snn.graph.output_id].reshape(-1)

    def reduce(err):
        if norm == "l2":
            return float(np.linalg.norm(err))
        return float(np.max(np.abs(err)))

    layer_ids = list(inst.layers)
    errors = {nid: np.empty(T) for nid in layer_ids}
    readout_error = np.empty(T)
    for t in range(T):
        r = inst.step(enc.step())
        decoded = inst.layer_decoded()
        for nid in layer_ids:
            errors[nid][t] = reduce(decoded[nid] - ref[nid])
        readout_error[t] = reduce(r - ref_out)
    return TraceRecord(
        layer_ids=layer_ids,
        times=np.arange(1, T + 1),
        errors=errors,
        readout_error=readout_error,
        spike_counts=dict(inst.spike_counts),
        norm=norm,
    )


@dataclass(frozen=True)
class EnergyModel:
    """Per-synaptic-operation energy on 45nm CMOS, in picojoules."""

    e_sop_ac: float = 0.9      # IF / LIF accumulate
    e_sop_signgd: float = 1.8  # sign-based neuron (two internal updates)
    e_mac: float = 4.6         # float multiply-accumulate

    def e_sop(self, neuron_kind: str) -> float:
        return self.e_sop_signgd if neuron_kind == "signgd" else self.e_sop_ac


@dataclass(frozen=True)
class EnergyReport:
    neurons: int
    timesteps: int
    spikes: int
    firing_rate: float
    n_sop: int
    energy_joules: float

    @property
    def energy_pj(self) -> float:
        return self.energy_joules * 1e12


def estimate_energy(spikes: int, timesteps: int, neurons: int, neuron_kind: str,
                    model: EnergyModel = EnergyModel()) -> EnergyReport:
    """fr = spikes / (timesteps * neurons); N_SOP = spikes; E = N_SOP * E_SOP."""
    fr = spikes / (timesteps * neurons) if timesteps * neurons else 0.0
    e = spikes * model.e_sop(neuron_kind) * 1e-12
    return EnergyReport(
        neurons=neurons, timesteps=timesteps, spikes=spikes,
        firing_rate=fr, n_sop=spikes, energy_joules=e,
    )


def classify(history: np.ndarray) -> int:
    """Classification decision from a readout history: argmax of r(T)."""
    return int(np.argmax(history[-1]))
