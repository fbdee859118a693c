"""Functional and timing/energy model of a secure-analytics IoT end-node cluster."""

__version__ = "0.1.0"
