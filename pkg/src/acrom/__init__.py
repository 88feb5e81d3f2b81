"""Artificial-compression reduced order modeling for incompressible flow.

Pipeline: mesh generation -> full-order artificial-compression solve ->
POD basis extraction -> reduced-order online integration -> diagnostics.
"""

__version__ = "0.1.0"
