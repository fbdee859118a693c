"""Bit-exact models of the cryptographic engine."""
