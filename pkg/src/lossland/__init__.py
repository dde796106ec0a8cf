"""Constructing and verifying pathological loss landscapes of conic least-squares schemes."""

__version__ = "0.1.0"
