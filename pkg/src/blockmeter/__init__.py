"""Application-agnostic performance measurement harness for
private-blockchain-style transaction backends."""

__version__ = "1.0.0"
