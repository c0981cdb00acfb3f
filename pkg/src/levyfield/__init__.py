"""Levy-field term-structure models: simulation, martingale drift, pricing
and statistical validation."""

__version__ = "0.1.0"
