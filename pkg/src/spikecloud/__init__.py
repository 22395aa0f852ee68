"""Event-camera action recognition with a point-cloud spiking neural network."""

__version__ = "0.1.0"
