"""Factory-node pipeline: ion-photon pairs, GHZ-basis ion readout, corrections.

Register layout of the full six-qubit state after :func:`interleave_pairs` is
``(ion1, ion2, ion3, photon1, photon2, photon3)``. Ion levels are encoded as
down=0, up=1; photon polarisations as A=0, D=1.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.linalg import expm

from .quantum import (
    PAULIS,
    X,
    DensityMatrix,
    Ket,
    Projection,
    UnitaryOp,
    apply_unitary,
    embed,
    kron_all,
    partial_trace,
    permute_qubits,
    project_and_normalize,
    tensor_all,
)
from .validation import check_probability

_ARROWS = {"d": "↓", "u": "↑"}


@dataclass(frozen=True)
class IonOutcome:
    """Readout result of the three ion qubits, e.g. ``(0, 0, 1)`` for down-down-up."""

    bits: tuple[int, int, int]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) != 3 or any(b not in (0, 1) for b in bits):
            raise ValueError(f"ion outcome needs exactly three bits in {{0, 1}}, got {self.bits!r}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_index(cls, index: int) -> "IonOutcome":
        if not 0 <= index < 8:
            raise ValueError(f"outcome index {index} out of range")
        return cls(tuple((index >> s) & 1 for s in (2, 1, 0)))

    @classmethod
    def parse(cls, label) -> "IonOutcome":
        """Accept ``"ddu"``, ``"↓↓↑"``, ``"001"``, an index or a bit tuple."""
        if isinstance(label, IonOutcome):
            return label
        if isinstance(label, (int, np.integer)):
            return cls.from_index(int(label))
        if isinstance(label, str):
            table = {"d": 0, "u": 1, "0": 0, "1": 1, _ARROWS["d"]: 0, _ARROWS["u"]: 1}
            try:
                return cls(tuple(table[c] for c in label.strip().lower()))
            except KeyError:
                raise ValueError(f"cannot parse ion outcome {label!r}") from None
        return cls(tuple(label))

    @classmethod
    def all(cls) -> list["IonOutcome"]:
        return [cls.from_index(i) for i in range(8)]

    @property
    def index(self) -> int:
        l, m, n = self.bits
        return 4 * l + 2 * m + n

    @property
    def label(self) -> str:
        return "".join("du"[b] for b in self.bits)

    @property
    def arrows(self) -> str:
        return "".join(_ARROWS["du"[b]] for b in self.bits)

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class GhzLabel:
    """GHZ basis state ``(|0jk> + sign |1 ~j ~k>)/sqrt(2)`` with ``index = 2j + k + 1``."""

    index: int
    sign: int

    def __post_init__(self):
        if self.index not in (1, 2, 3, 4):
            raise ValueError(f"GHZ index must be 1..4, got {self.index}")
        if self.sign not in (1, -1):
            raise ValueError(f"GHZ sign must be +1 or -1, got {self.sign}")

    @classmethod
    def from_pair(cls, j: int, k: int, sign: int) -> "GhzLabel":
        return cls(2 * j + k + 1, sign)

    @classmethod
    def parse(cls, name: str) -> "GhzLabel":
        """Parse ``"GHZ_2+"``, ``"2-"`` and similar."""
        s = name.strip().upper().replace("GHZ", "").strip("_ ")
        try:
            return cls(int(s[:-1]), {"+": 1, "-": -1}[s[-1]])
        except (KeyError, ValueError, IndexError):
            raise ValueError(f"cannot parse GHZ label {name!r}") from None

    @classmethod
    def all(cls) -> list["GhzLabel"]:
        return [cls(i, s) for i in (1, 2, 3, 4) for s in (1, -1)]

    @property
    def pair(self) -> tuple[int, int]:
        return divmod(self.index - 1, 2)

    @property
    def name(self) -> str:
        return f"GHZ_{self.index}{'+' if self.sign > 0 else '-'}"

    def ket(self) -> Ket:
        j, k = self.pair
        vec = np.zeros(8, dtype=complex)
        vec[2 * j + k] = 1.0
        vec[4 + 2 * (1 - j) + (1 - k)] = self.sign
        return Ket(vec / np.sqrt(2))

    def __str__(self) -> str:
        return self.name


# Photon state heralded by each ion outcome (ion outcome -> GHZ label).
OUTCOME_TO_LABEL: dict[str, GhzLabel] = {
    "ddd": GhzLabel(1, -1),
    "ddu": GhzLabel(2, +1),
    "dud": GhzLabel(3, +1),
    "duu": GhzLabel(4, -1),
    "udd": GhzLabel(4, +1),
    "udu": GhzLabel(3, -1),
    "uud": GhzLabel(2, -1),
    "uuu": GhzLabel(1, +1),
}


def label_for(outcome) -> GhzLabel:
    return OUTCOME_TO_LABEL[IonOutcome.parse(outcome).label]


def make_bell() -> DensityMatrix:
    """Ideal ion-photon pair ``(|down, D> + |up, A>)/sqrt(2)``, ion qubit first."""
    vec = np.zeros(4, dtype=complex)
    vec[0b01] = vec[0b10] = 1 / np.sqrt(2)
    return Ket(vec).to_density_matrix()


def make_werner(p: float) -> DensityMatrix:
    p = check_probability(p, "p")
    return DensityMatrix(p * make_bell().matrix + (1 - p) * np.eye(4) / 4)


def werner_p_for_fidelity(f: float) -> float:
    """Mixing weight giving Bell-state fidelity ``f``."""
    return (4 * f - 1) / 3


def make_ion_photon(measured) -> DensityMatrix:
    """Wrap a measured two-qubit density matrix (ion first, photon second)."""
    rho = measured if isinstance(measured, DensityMatrix) else DensityMatrix(measured)
    if rho.n_qubits != 2:
        raise ValueError(f"ion-photon state must have 2 qubits, got {rho.n_qubits}")
    return rho


def ms_gate() -> UnitaryOp:
    """``exp(-i pi/4 * sum_{i<j} X_i X_j)`` on three ions (each pair counted once)."""
    h = sum(embed(np.kron(X, X), [i, j], 3) for i, j in itertools.combinations(range(3), 2))
    return UnitaryOp(expm(-1j * np.pi / 4 * h))


def single_ion_rotation() -> np.ndarray:
    return expm(-1j * np.pi / 4 * X)


def collective_rotation() -> UnitaryOp:
    u = single_ion_rotation()
    return UnitaryOp(kron_all(u, u, u))


def ion_phase_reference() -> UnitaryOp:
    """Per-ion ``diag(1, -i)`` aligning the laser phase with the ion-photon pair phase.

    The printed gate and pulse fix the heralded states only up to a
    ``pi/2`` phase between the up and down levels of each ion. Inserting this
    frame change before the MS gate is equivalent to driving both the gate
    and the final pulse about ``Y`` instead of ``X``, and makes the eight
    heralded photon states carry real relative signs.
    """
    s_dag = np.diag([1, -1j])
    return UnitaryOp(kron_all(s_dag, s_dag, s_dag))


def ghz_readout_unitary() -> UnitaryOp:
    """Ion operation preceding the computational-basis readout."""
    return collective_rotation() @ ms_gate() @ ion_phase_reference()


def interleave_pairs(pairs: Sequence[DensityMatrix]) -> DensityMatrix:
    """Tensor three ion-photon pairs and reorder to (ions | photons)."""
    if len(pairs) != 3:
        raise ValueError(f"need exactly three ion-photon pairs, got {len(pairs)}")
    rho = tensor_all(*[make_ion_photon(p) for p in pairs])
    return permute_qubits(rho, [0, 2, 4, 1, 3, 5])


@dataclass(frozen=True)
class ConditionalStateSet:
    """Photon state and probability for each of the eight ion outcomes."""

    branches: tuple[Projection, ...]

    def __post_init__(self):
        if len(self.branches) != 8:
            raise ValueError("expected eight branches")
        total = sum(b.probability for b in self.branches)
        if abs(total - 1) > 1e-10:
            raise ValueError(f"branch probabilities sum to {total!r}")

    def __getitem__(self, outcome) -> Projection:
        return self.branches[IonOutcome.parse(outcome).index]

    def __iter__(self) -> Iterator[tuple[IonOutcome, Projection]]:
        return iter(zip(IonOutcome.all(), self.branches))

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([b.probability for b in self.branches])

    def to_dict(self) -> dict:
        out = {}
        for outcome, branch in self:
            out[outcome.label] = {
                "probability": branch.probability,
                "density_matrix": None if branch.state is None else branch.state.to_dict(),
            }
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ConditionalStateSet":
        branches = []
        for outcome in IonOutcome.all():
            entry = obj[outcome.label]
            dm = entry["density_matrix"]
            state = None if dm is None else DensityMatrix.from_dict(dm)
            branches.append(Projection(state, float(entry["probability"])))
        return cls(tuple(branches))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def ghz_projection_table(pairs: Sequence[DensityMatrix]) -> ConditionalStateSet:
    """Herald the three photons on each ion outcome.

    Builds the six-qubit state, applies the readout unitary to the ions,
    projects onto each ``|lmn>``, and traces out the ions.
    """
    rho = interleave_pairs(pairs)
    v = np.kron(ghz_readout_unitary().matrix, np.eye(8))
    rho_tot = apply_unitary(v, rho)
    branches = []
    for outcome in IonOutcome.all():
        proj = np.zeros((64, 64), dtype=complex)
        idx = outcome.index * 8 + np.arange(8)
        proj[idx, idx] = 1.0
        branch = project_and_normalize(rho_tot, proj, check=False)
        if branch.state is not None:
            branch = Projection(partial_trace(branch.state, [3, 4, 5]), branch.probability)
        branches.append(branch)
    return ConditionalStateSet(tuple(branches))


def rsp_correction(outcome, target: GhzLabel) -> tuple[str, str, str]:
    """Pauli corrections taking the heralded state of ``outcome`` to ``target``.

    Bit flips on photons 2 and 3 move between the four GHZ subspaces without
    touching the relative sign; a Z on photon 1 flips the sign.
    """
    source = label_for(outcome)
    (j, k), (tj, tk) = source.pair, target.pair
    return (
        "Z" if source.sign != target.sign else "I",
        "X" if j != tj else "I",
        "X" if k != tk else "I",
    )


def pauli_string(labels: Sequence[str]) -> np.ndarray:
    return kron_all(*[PAULIS[s] for s in labels])


def apply_paulis(state, labels: Sequence[str]):
    op = pauli_string(labels)
    if isinstance(state, Ket):
        return Ket(op @ state.vector)
    return apply_unitary(op, state)
