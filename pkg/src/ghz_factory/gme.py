"""Biseparable-fidelity bounds and GME flagging for three-qubit targets."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .quantum import Ket, random_ket
from .validation import check_random_state


class Bipartition(enum.Enum):
    """Which single qubit is cut away from the other two."""

    A_BC = 0
    B_AC = 1
    C_AB = 2

    @property
    def single(self) -> int:
        return self.value

    @property
    def pair(self) -> tuple[int, int]:
        return tuple(q for q in range(3) if q != self.value)


def cut_matrix(target: Ket, cut: Bipartition) -> np.ndarray:
    """Amplitudes reshaped to (single qubit) x (remaining pair), shape 2x4."""
    if target.n_qubits != 3:
        raise ValueError("target must be a three-qubit state")
    t = target.vector.reshape(2, 2, 2)
    return t.transpose((cut.single,) + cut.pair).reshape(2, 4)


def max_schmidt_sq(target: Ket, cut: Bipartition) -> float:
    """Largest squared Schmidt coefficient across ``cut``."""
    s = np.linalg.svd(cut_matrix(target, cut), compute_uv=False)
    return float(s[0] ** 2)


@dataclass(frozen=True)
class BiseparableCandidate:
    cut: Bipartition
    single: np.ndarray
    pair: np.ndarray

    def ket(self) -> Ket:
        """Product state in the standard qubit order."""
        t = np.multiply.outer(self.single, self.pair.reshape(2, 2))
        inv = np.argsort((self.cut.single,) + self.cut.pair)
        return Ket(t.transpose(inv).reshape(8))


@dataclass(frozen=True)
class BiseparableOptimum:
    fidelity: float
    candidate: BiseparableCandidate
    converged: bool
    per_cut: dict


def _optimise_cut(m: np.ndarray, rng, restarts: int, iterations: int, tol: float):
    best = (-1.0, None, None, False)
    for _ in range(restarts):
        a = rng.normal(size=2) + 1j * rng.normal(size=2)
        a /= np.linalg.norm(a)
        value, converged = -1.0, False
        for _ in range(iterations):
            # overlap <a|<b|psi> = a^H M conj(b); each update is the exact optimum
            v = m.T @ a.conj()
            b = v / np.linalg.norm(v)
            w = m @ b.conj()
            nw = np.linalg.norm(w)
            a = w / nw
            new = nw**2
            if new - value < tol:
                value, converged = max(value, new), True
                break
            value = new
        if value > best[0]:
            best = (float(value), a, b, converged)
    return best


def max_biseparable_fidelity(
    target: Ket,
    restarts: int = 20,
    iterations: int = 200,
    tol: float = 1e-12,
    seed=None,
) -> BiseparableOptimum:
    """Maximise ``|<psi_A|<chi_BC|target>|^2`` over all cuts by alternating updates."""
    rng = check_random_state(seed)
    per_cut = {}
    best = None
    for cut in Bipartition:
        value, a, b, converged = _optimise_cut(cut_matrix(target, cut), rng, restarts, iterations, tol)
        per_cut[cut] = value
        if best is None or value > best.fidelity:
            best = BiseparableOptimum(value, BiseparableCandidate(cut, a, b), converged, per_cut)
    return best


def flag_gme(fidelity: float, sigma: float) -> tuple[bool, float]:
    """GME flag and distance above the 1/2 threshold in standard deviations."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    excess = fidelity - 0.5
    if sigma == 0:
        n = 0.0 if excess == 0 else math.copysign(math.inf, excess)
    else:
        n = excess / sigma
    return bool(fidelity > 0.5), float(n)


def random_pure_state(n_qubits: int = 3, seed=None) -> Ket:
    return random_ket(n_qubits, check_random_state(seed))
