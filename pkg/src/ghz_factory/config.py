"""Numerical tolerances shared by every module."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    norm: float = 1e-12
    hermitian: float = 1e-10
    trace: float = 1e-10
    min_eigenvalue: float = -1e-9
    unitary: float = 1e-10
    projector: float = 1e-10
    zero_probability: float = 1e-14
    sqrt_clamp: float = 1e-9
    imag_residue: float = 1e-10


TOL = Tolerances()
