"""Input validation helpers.

These mirror the ``check_*`` helpers of scikit-learn: each takes raw user
input, coerces it to a numpy array of the right dtype and shape, and raises
``ValueError`` with a readable message when an invariant is violated.
"""

from __future__ import annotations

import numpy as np

from .config import TOL


def _is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


def n_qubits_for_dim(dim: int) -> int:
    if not _is_power_of_two(dim):
        raise ValueError(f"dimension {dim} is not a power of two >= 2")
    return dim.bit_length() - 1


def check_square_matrix(matrix, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(matrix, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be a square 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_hermitian(matrix, name: str = "operator", atol: float = TOL.hermitian) -> np.ndarray:
    arr = check_square_matrix(matrix, name)
    dev = np.max(np.abs(arr - arr.conj().T)) if arr.size else 0.0
    if dev > atol:
        raise ValueError(f"{name} is not Hermitian (max deviation {dev:.3g})")
    return arr


def check_ket(vector, atol: float = TOL.norm) -> np.ndarray:
    arr = np.asarray(vector, dtype=complex).reshape(-1)
    n_qubits_for_dim(arr.shape[0])
    norm2 = float(np.vdot(arr, arr).real)
    if abs(norm2 - 1.0) > atol:
        raise ValueError(f"ket is not normalised (squared norm {norm2!r})")
    return arr


def check_density_matrix(matrix) -> np.ndarray:
    """Validate a density matrix: Hermitian, unit trace, positive semidefinite."""
    arr = check_hermitian(matrix, "density matrix")
    n_qubits_for_dim(arr.shape[0])
    tr = np.trace(arr)
    if abs(tr - 1.0) > TOL.trace:
        raise ValueError(f"density matrix trace is {tr.real:.12g}, expected 1")
    lam_min = np.linalg.eigvalsh((arr + arr.conj().T) / 2).min()
    if lam_min < TOL.min_eigenvalue:
        raise ValueError(f"density matrix has negative eigenvalue {lam_min:.3g}")
    return arr


def check_unitary(matrix, atol: float = TOL.unitary) -> np.ndarray:
    arr = check_square_matrix(matrix, "unitary")
    dev = np.max(np.abs(arr @ arr.conj().T - np.eye(arr.shape[0])))
    if dev > atol:
        raise ValueError(f"operator is not unitary (max deviation {dev:.3g})")
    return arr


def check_projector(matrix, atol: float = TOL.projector) -> np.ndarray:
    arr = check_hermitian(matrix, "projector", atol)
    dev = np.max(np.abs(arr @ arr - arr))
    if dev > atol:
        raise ValueError(f"operator is not idempotent (max deviation {dev:.3g})")
    return arr


def check_probability(p: float, name: str = "p") -> float:
    p = float(p)
    if not (0.0 <= p <= 1.0) or np.isnan(p):
        raise ValueError(f"{name} must lie in [0, 1], got {p!r}")
    return p


def check_counts(counts) -> np.ndarray:
    arr = np.asarray(counts)
    if arr.dtype.kind not in "iuf":
        raise ValueError("counts must be numeric")
    if np.any(arr < 0):
        raise ValueError("counts must be non-negative")
    return arr.astype(float)


def check_random_state(seed) -> np.random.Generator:
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
