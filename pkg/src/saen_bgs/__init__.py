"""Spiking autoencoder for video background subtraction."""
from .network import NetworkConfig, SAENBGS, build_network, predict_mask
from .spiking import NeuronConfig
from .training import TrainConfig, fit

__version__ = "0.1.0"

__all__ = ["NetworkConfig", "NeuronConfig", "SAENBGS", "TrainConfig", "build_network", "fit", "predict_mask"]
