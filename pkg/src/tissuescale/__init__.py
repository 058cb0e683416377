"""Periodic homogenization toolkit for poroelastic tissue with reacting pectin and calcium."""

__version__ = "0.1.0"
