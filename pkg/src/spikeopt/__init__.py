"""spikeopt: spiking neuronal dynamics as verifiable first-order optimizers.

Subpackages/modules:
  schedules  step-size schedules and dynamics-coefficient families
  codec      spike/current train encoders and decoders
  neurons    IF, LIF, subgradient-based and sign-based neuron layers
  oracles    optimizer-form reference iterations, transforms, bounds
  graph      ANN operator graphs, file formats, conversion transforms
  engine     time-stepped SNN execution, probes, energy accounting
  cli        command-line interface
"""

from .schedules import Schedule, parse_schedule

__version__ = "0.1.0"

__all__ = ["Schedule", "parse_schedule", "__version__"]
