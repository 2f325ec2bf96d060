"""Efficiency method families, each packaged as an instantiation factory."""
