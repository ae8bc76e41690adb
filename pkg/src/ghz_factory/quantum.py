"""Dense few-qubit states and operators.

Qubit ordering is big-endian throughout: in ``tensor(a, b)`` the qubits of
``a`` become the most significant bits of the basis index, and qubit 0 is the
leftmost label of a bit string such as ``|011>``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import TOL
from .validation import (
    check_density_matrix,
    check_hermitian,
    check_ket,
    check_projector,
    check_unitary,
    n_qubits_for_dim,
)

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"I": I2, "X": X, "Y": Y, "Z": Z}


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Ket:
    """Normalised pure state vector."""

    vector: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vector", _frozen(check_ket(self.vector)))

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    @property
    def n_qubits(self) -> int:
        return n_qubits_for_dim(self.dim)

    @classmethod
    def from_bits(cls, bits: str | Sequence[int]) -> "Ket":
        """Computational basis state, e.g. ``Ket.from_bits("011")``."""
        bits = [int(b) for b in bits]
        vec = np.zeros(2 ** len(bits), dtype=complex)
        vec[int("".join(map(str, bits)), 2)] = 1.0
        return cls(vec)

    @classmethod
    def from_unnormalized(cls, vector) -> "Ket":
        vec = np.asarray(vector, dtype=complex).reshape(-1)
        return cls(vec / np.linalg.norm(vec))

    def to_density_matrix(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.vector, self.vector.conj()))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.vector, dtype=dtype)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Unit-trace positive semidefinite operator on ``n_qubits`` qubits."""

    matrix: np.ndarray

    def __post_init__(self):
        arr = check_density_matrix(self.matrix)
        object.__setattr__(self, "matrix", _frozen((arr + arr.conj().T) / 2))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_qubits(self) -> int:
        return n_qubits_for_dim(self.dim)

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        d = 2**n_qubits
        return cls(np.eye(d) / d)

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal().real.copy()

    def to_dict(self) -> dict:
        flat = self.matrix.reshape(-1)
        return {"dim": self.dim, "entries": [[float(z.real), float(z.imag)] for z in flat]}

    @classmethod
    def from_dict(cls, obj: dict) -> "DensityMatrix":
        try:
            dim = int(obj["dim"])
            entries = np.asarray(obj["entries"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed density matrix object: {exc}") from exc
        if entries.shape != (dim * dim, 2):
            raise ValueError(f"expected {dim * dim} [re, im] pairs, got shape {entries.shape}")
        return cls((entries[:, 0] + 1j * entries[:, 1]).reshape(dim, dim))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DensityMatrix":
        return cls.from_dict(json.loads(text))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


@dataclass(frozen=True, eq=False)
class UnitaryOp:
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(check_unitary(self.matrix)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_qubits(self) -> int:
        return n_qubits_for_dim(self.dim)

    @property
    def dagger(self) -> "UnitaryOp":
        return UnitaryOp(self.matrix.conj().T)

    def __matmul__(self, other: "UnitaryOp") -> "UnitaryOp":
        if not isinstance(other, UnitaryOp):
            return NotImplemented
        return UnitaryOp(self.matrix @ other.matrix)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


def kron_all(*factors) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for f in factors:
        out = np.kron(out, np.asarray(f, dtype=complex))
    return out


def tensor(a, b):
    """Kronecker product of two states or operators of the same kind."""
    if type(a) is not type(b):
        raise TypeError(f"cannot tensor {type(a).__name__} with {type(b).__name__}")
    if isinstance(a, Ket):
        return Ket(np.kron(a.vector, b.vector))
    if isinstance(a, DensityMatrix):
        return DensityMatrix(np.kron(a.matrix, b.matrix))
    if isinstance(a, UnitaryOp):
        return UnitaryOp(np.kron(a.matrix, b.matrix))
    raise TypeError(f"unsupported operand type {type(a).__name__}")


def tensor_all(*items):
    out = items[0]
    for item in items[1:]:
        out = tensor(out, item)
    return out


def embed(op, targets: Sequence[int], n_qubits: int) -> np.ndarray:
    """Lift a ``len(targets)``-qubit operator onto ``n_qubits`` qubits."""
    op = np.asarray(op, dtype=complex)
    k = len(targets)
    if op.shape != (2**k, 2**k):
        raise ValueError("operator size does not match number of targets")
    rest = [q for q in range(n_qubits) if q not in targets]
    full = np.kron(op, np.eye(2 ** len(rest)))
    return permute_operator(full, list(targets) + rest, inverse=True)


def permute_operator(matrix, order: Sequence[int], inverse: bool = False) -> np.ndarray:
    """Reorder qubits so that new qubit ``i`` is old qubit ``order[i]``.

    With ``inverse=True`` the mapping goes the other way: old qubit ``i``
    moves to position ``order[i]``.
    """
    matrix = np.asarray(matrix, dtype=complex)
    n = n_qubits_for_dim(matrix.shape[0])
    order = list(order)
    if sorted(order) != list(range(n)):
        raise ValueError(f"{order} is not a permutation of {n} qubits")
    if inverse:
        order = list(np.argsort(order))
    t = matrix.reshape([2] * (2 * n))
    t = t.transpose(order + [n + q for q in order])
    return t.reshape(2**n, 2**n)


def permute_qubits(rho: DensityMatrix, order: Sequence[int]) -> DensityMatrix:
    return DensityMatrix(permute_operator(rho.matrix, order))


def apply_unitary(op, rho: DensityMatrix) -> DensityMatrix:
    u = np.asarray(op, dtype=complex)
    return DensityMatrix(u @ rho.matrix @ u.conj().T)


def partial_trace(rho: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    """Reduced state on the qubits in ``keep`` (returned in ascending order)."""
    n = rho.n_qubits
    keep = sorted(set(int(q) for q in keep))
    if not keep:
        raise ValueError("keep must name at least one qubit")
    if keep[0] < 0 or keep[-1] >= n:
        raise ValueError(f"qubit indices {keep} out of range for {n} qubits")
    if len(keep) == n:
        return rho
    drop = [q for q in range(n) if q not in keep]
    t = rho.matrix.reshape([2] * (2 * n))
    # Contract each dropped row index with its column index, highest first so
    # remaining axis numbers stay valid.
    for q in sorted(drop, reverse=True):
        cur = t.ndim // 2
        t = np.trace(t, axis1=q, axis2=q + cur)
    d = 2 ** len(keep)
    return DensityMatrix(t.reshape(d, d))


@dataclass(frozen=True)
class Projection:
    """Outcome of a projective measurement branch.

    ``state`` is ``None`` when the branch probability is below the
    zero-probability threshold, in which case the post-measurement state is
    undefined.
    """

    state: DensityMatrix | None
    probability: float

    @property
    def defined(self) -> bool:
        return self.state is not None


def project_and_normalize(rho: DensityMatrix, projector, check: bool = True) -> Projection:
    m = check_projector(projector) if check else np.asarray(projector, dtype=complex)
    if m.shape != rho.matrix.shape:
        raise ValueError("projector and state dimensions differ")
    unnorm = m @ rho.matrix @ m.conj().T
    prob = float(np.trace(unnorm).real)
    prob = min(max(prob, 0.0), 1.0)
    if prob < TOL.zero_probability:
        return Projection(None, prob)
    return Projection(DensityMatrix(unnorm / prob), prob)


def psd_sqrt(matrix) -> np.ndarray:
    """Matrix square root of a Hermitian PSD matrix, clamping tiny negatives."""
    m = np.asarray(matrix, dtype=complex)
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    if w.min() < -TOL.sqrt_clamp:
        raise ValueError(f"matrix has eigenvalue {w.min():.3g} below clamp tolerance")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def fidelity(rho: DensityMatrix, sigma) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``.

    When ``sigma`` is a :class:`Ket` this reduces to ``<psi|rho|psi>``.
    """
    if isinstance(sigma, Ket):
        if sigma.dim != rho.dim:
            raise ValueError("dimension mismatch")
        val = np.vdot(sigma.vector, rho.matrix @ sigma.vector).real
        return float(min(max(val, 0.0), 1.0))
    if sigma.dim != rho.dim:
        raise ValueError("dimension mismatch")
    # sqrt of round-off eigenvalues would cost ~1e-8 accuracy for rank-one inputs
    for pure, other in ((sigma, rho), (rho, sigma)):
        if abs(purity(pure) - 1) < TOL.norm:
            w, v = np.linalg.eigh(pure.matrix)
            return fidelity(other, Ket.from_unnormalized(v[:, -1]))
    sr = psd_sqrt(rho.matrix)
    inner = sr @ sigma.matrix @ sr
    w = np.clip(np.linalg.eigvalsh((inner + inner.conj().T) / 2), 0.0, None)
    return float(min(np.sum(np.sqrt(w)) ** 2, 1.0))


def purity(rho: DensityMatrix) -> float:
    return float(np.real(np.trace(rho.matrix @ rho.matrix)))


def sqrt_purity(rho: DensityMatrix) -> float:
    return float(np.sqrt(purity(rho)))


def expectation(rho: DensityMatrix, observable) -> float:
    obs = check_hermitian(observable, "observable")
    if obs.shape != rho.matrix.shape:
        raise ValueError("observable and state dimensions differ")
    val = np.trace(obs @ rho.matrix)
    if abs(val.imag) > TOL.imag_residue:
        raise ValueError(f"expectation has imaginary part {val.imag:.3g}")
    return float(val.real)


def random_density_matrix(n_qubits: int, rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    """Random state from the induced (Ginibre) measure."""
    d = 2**n_qubits
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m).real)


def random_ket(n_qubits: int, rng: np.random.Generator) -> Ket:
    """Haar-random pure state via normalised complex Gaussians."""
    d = 2**n_qubits
    return Ket.from_unnormalized(rng.normal(size=d) + 1j * rng.normal(size=d))
