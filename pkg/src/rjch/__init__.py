"""Random-jump and bounded-load consistent hashing: ring, simulators and exact oracles."""
from rjch._backend import BACKEND

__all__ = ["BACKEND"]
