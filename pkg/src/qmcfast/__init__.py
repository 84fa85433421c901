"""Randomized low-discrepancy sequences, fast structured kernel methods and (multilevel) QMC cubature."""

__version__ = "0.1.0"
