"""Federated learning over boosted-tree batches, with a FedAvg baseline.

The package simulates cross-silo federation for short-term electrical load
forecasting: clients train on per-substation data, a central server either
keeps the best tree batch per round (tree federation) or averages neural
parameters (FedAvg), and a delta-based patience rule decides when to stop.
"""

__version__ = "0.1.0"

from fedtrees.errors import ConfigError, DataError, ModelFormatError

__all__ = ["ConfigError", "DataError", "ModelFormatError", "__version__"]
