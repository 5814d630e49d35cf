"""Desk-scale AV ride-comfort and disengagement data-collection suite."""

__version__ = "0.1.0"
