"""Jones-calculus model of the polarisation analysis and detection.

Jones vectors are written in the (H, V) basis; the polarising beam splitter
transmits H and reflects V. Photon states elsewhere in the package use the
logical basis A=|0>, D=|1>, and :data:`LOGICAL_TO_JONES` maps logical
coordinates into the Jones frame behind the first quarter-wave plate, the
frame in which tomographic ion-photon states are usually reported.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .quantum import DensityMatrix, UnitaryOp, apply_unitary, embed, kron_all

PATTERNS: tuple[str, ...] = tuple("".join(p) for p in itertools.product("tr", repeat=3))
"""Port patterns in index order: ttt, ttr, trt, trr, rtt, rtr, rrt, rrr."""


def pattern_index(pattern: str) -> int:
    return PATTERNS.index(pattern)


def negate_pattern(pattern: str) -> str:
    return pattern.translate(str.maketrans("tr", "rt"))


def halfwave(phi_deg: float) -> np.ndarray:
    """Half-wave plate with its optical axis at ``phi_deg`` degrees."""
    phi = np.deg2rad(phi_deg)
    c, s = np.cos(phi), np.sin(phi)
    m = np.array([[c**2 - s**2, 2 * c * s], [2 * c * s, s**2 - c**2]], dtype=complex)
    return np.exp(-1j * np.pi / 2) * m


def quarterwave(varphi_deg: float) -> np.ndarray:
    """Quarter-wave plate with its optical axis at ``varphi_deg`` degrees."""
    v = np.deg2rad(varphi_deg)
    c, s = np.cos(v), np.sin(v)
    m = np.array(
        [[c**2 + 1j * s**2, (1 - 1j) * s * c], [(1 - 1j) * s * c, s**2 + 1j * c**2]],
        dtype=complex,
    )
    return np.exp(-1j * np.pi / 4) * m


FIRST_QUARTERWAVE = quarterwave(0.0)

# Logical A/D as linear polarisations before the first quarter-wave plate ...
LOGICAL_TO_JONES_PRE_Q1 = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
# ... and their images behind it.
LOGICAL_TO_JONES = FIRST_QUARTERWAVE @ LOGICAL_TO_JONES_PRE_Q1

FRAMES = ("logical", "jones_post_q1", "jones_pre_q1")


def to_logical_frame(rho: DensityMatrix, frame: str, photon_qubits: Sequence[int]) -> DensityMatrix:
    """Re-express photon qubits given in a Jones frame in the logical A/D basis.

    ``frame`` is one of ``"logical"`` (no change), ``"jones_post_q1"`` (H/V
    coordinates behind the first quarter-wave plate) or ``"jones_pre_q1"``
    (H/V coordinates in front of it).
    """
    if frame == "logical":
        return rho
    if frame == "jones_post_q1":
        w = LOGICAL_TO_JONES
    elif frame == "jones_pre_q1":
        w = LOGICAL_TO_JONES_PRE_Q1
    else:
        raise ValueError(f"unknown frame {frame!r}; expected one of {FRAMES}")
    out = rho
    for q in photon_qubits:
        out = apply_unitary(embed(w.conj().T, [q], rho.n_qubits), out)
    return out


@dataclass(frozen=True)
class MeasurementSetting:
    phi_deg: float
    varphi_deg: float
    label: str = ""

    @property
    def theta(self) -> float:
        """Phase angle (radians) of the X-type observable for ``varphi = 0`` settings."""
        return float(np.deg2rad(4 * self.phi_deg))

    @property
    def is_parity(self) -> bool:
        return self.varphi_deg == 0

    @property
    def key(self) -> str:
        return f"phi{self.phi_deg:g}_varphi{self.varphi_deg:+g}"

    def to_dict(self) -> dict:
        return {"phi_deg": self.phi_deg, "varphi_deg": self.varphi_deg, "label": self.label}

    @classmethod
    def from_dict(cls, obj: dict) -> "MeasurementSetting":
        try:
            return cls(float(obj["phi_deg"]), float(obj["varphi_deg"]), str(obj.get("label", "")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed measurement setting {obj!r}") from exc


LOGICAL_PLUS = MeasurementSetting(0.0, 45.0, "D/A")
LOGICAL_MINUS = MeasurementSetting(0.0, -45.0, "A/D")
PARITY_SETTINGS = tuple(MeasurementSetting(22.5 * k / 4, 0.0, f"pm_theta{22.5 * k:g}") for k in range(6))
STANDARD_SETTINGS: tuple[MeasurementSetting, ...] = (LOGICAL_PLUS, LOGICAL_MINUS) + PARITY_SETTINGS


def load_settings(path) -> list[MeasurementSetting]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise ValueError("settings file must hold a JSON array")
    return [MeasurementSetting.from_dict(d) for d in data]


def save_settings(settings: Sequence[MeasurementSetting], path) -> None:
    Path(path).write_text(json.dumps([s.to_dict() for s in settings], indent=1))


@dataclass(frozen=True)
class DetectorModel:
    """Path efficiencies behind the transmitted and reflected PBS ports.

    ``beta`` is the ratio ``eta_r / eta_t``. Dark counts are given as the
    mean number of spurious clicks per detector per time window.
    """

    eta_t: float = 1.0
    eta_r: float = 1.0
    dark_counts_per_window: float = 0.0

    def __post_init__(self):
        for name in ("eta_t", "eta_r"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v!r}")
        if self.dark_counts_per_window < 0:
            raise ValueError("dark count rate must be non-negative")

    @classmethod
    def from_beta(cls, beta: float, eta_r: float = 1.0, **kwargs) -> "DetectorModel":
        if beta <= 0:
            raise ValueError("beta must be positive")
        if beta >= 1:
            return cls(eta_t=eta_r / beta, eta_r=eta_r, **kwargs)
        return cls(eta_t=eta_r, eta_r=eta_r * beta, **kwargs)

    @property
    def beta(self) -> float:
        return self.eta_r / self.eta_t

    @property
    def port_efficiency(self) -> np.ndarray:
        return np.array([self.eta_t, self.eta_r])


def analysis_unitary(setting: MeasurementSetting) -> UnitaryOp:
    """Wave-plate action ``Q2(varphi) H(phi)`` on a Jones vector."""
    return UnitaryOp(quarterwave(setting.varphi_deg) @ halfwave(setting.phi_deg))


def logical_analysis(setting: MeasurementSetting) -> np.ndarray:
    """Map from a logical-basis photon to the Jones vector at the PBS."""
    return analysis_unitary(setting).matrix @ LOGICAL_TO_JONES


def port_states(setting: MeasurementSetting) -> tuple[np.ndarray, np.ndarray]:
    """Logical-basis states sent to the transmitted and reflected ports."""
    m = logical_analysis(setting)
    return m.conj().T[:, 0], m.conj().T[:, 1]


@dataclass(frozen=True)
class PortDistribution:
    """Port-pattern statistics for one setting.

    ``ideal`` are Born-rule probabilities with perfect detectors,
    ``conditional`` the pattern distribution given a triple detection and
    ``triple_probability`` the chance that all three photons register.
    """

    ideal: np.ndarray
    conditional: np.ndarray
    triple_probability: float
    patterns: tuple[str, ...] = field(default=PATTERNS)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.patterns, map(float, self.conditional)))


def pattern_probabilities(rho: DensityMatrix, setting: MeasurementSetting) -> np.ndarray:
    """Born-rule probabilities of the eight port patterns (index order of PATTERNS)."""
    m = logical_analysis(setting)
    p = apply_unitary(kron_all(m, m, m), rho).diagonal()
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def detection_weights(det: DetectorModel, efficiencies=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Probability that every photon of each pattern is detected."""
    eff = np.asarray(efficiencies, dtype=float)
    port = det.port_efficiency
    return np.array([np.prod([eff[k] * port["tr".index(c)] for k, c in enumerate(pat)]) for pat in PATTERNS])


def port_distribution(
    rho: DensityMatrix,
    setting: MeasurementSetting,
    det: DetectorModel | None = None,
    efficiencies=(1.0, 1.0, 1.0),
) -> PortDistribution:
    det = det or DetectorModel()
    ideal = pattern_probabilities(rho, setting)
    weighted = ideal * detection_weights(det, efficiencies)
    triple = float(weighted.sum())
    conditional = weighted / triple if triple > 0 else np.full(8, np.nan)
    return PortDistribution(ideal, conditional, triple)


def x_theta(theta: float) -> np.ndarray:
    """``R_theta X R_theta^dagger`` in the logical basis."""
    return np.array([[0, np.exp(-1j * theta)], [np.exp(1j * theta), 0]])


def pbs_observable(setting: MeasurementSetting) -> np.ndarray:
    """Single-photon observable (+1 on the transmitted port, -1 on the reflected one)."""
    m = logical_analysis(setting)
    return m.conj().T @ np.diag([1.0, -1.0]) @ m
