"""Federated learning over a clustered CSMA/CA wireless network."""

__version__ = "0.1.0"
