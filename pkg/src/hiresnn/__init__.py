"""Spiking neural networks with crafted input noise for adversarial robustness.

Modules: ``tensorops`` (layer kernels), ``spiking`` (LIF dynamics and BPTT),
``model`` (network graph, conversion), ``attacks`` (FGSM/PGD), ``training``
(traditional, HIRE and Gaussian-noise regimes), ``metrics`` (spiking activity,
perturbation distance, FLOPs and energy), ``datasets``, ``checkpoint`` and
``cli``.
"""
from . import attacks, checkpoint, datasets, metrics, model, spiking, tensorops, training
from .errors import (ConfigurationError, ContractError, DataFormatError, DependencyError,
                     InputError, StateError, TrainingError)

__version__ = "0.1.0"
