"""From coincidence counts to populations, parities, fidelities and witness bounds.

Count arrays have shape ``(..., 8, 8)`` indexed ``[lmn, opq]`` (ion outcome,
port pattern); every estimator broadcasts over the leading axes so the
bootstrap can evaluate all resamples in one call. Logical photon indices
``ijk`` use A=0, D=1.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit
from sklearn.base import BaseEstimator

from .gme import flag_gme
from .optics import PATTERNS, MeasurementSetting, x_theta
from .protocol import OUTCOME_TO_LABEL, GhzLabel, IonOutcome
from .quantum import DensityMatrix, expectation, kron_all
from .timetags import CountTable
from .validation import check_random_state

_N_T = np.array([p.count("t") for p in PATTERNS])
_N_R = 3 - _N_T
_PARITY_SIGN = (-1.0) ** _N_R


class Estimate(NamedTuple):
    value: float
    sigma: float


def _counts(x) -> np.ndarray:
    if isinstance(x, CountTable):
        return x.counts.astype(float)
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1] != 8:
        raise ValueError(f"count arrays need a trailing pattern axis of length 8, got {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("counts must be non-negative")
    return arr


# ---------------------------------------------------------------- populations


def logical_probabilities(counts_plus45, counts_minus45) -> np.ndarray:
    """Logical-basis populations ``P[..., lmn, ijk]`` from the two flipped settings.

    At (0, +45) D goes to the transmitted port, at (0, -45) to the reflected
    one, so pattern ``opq`` at +45 and its negation at -45 both witness the
    same logical string. Rows with no coincidences in either table are NaN.
    """
    n_plus, n_minus = _counts(counts_plus45), _counts(counts_minus45)
    if n_plus.shape != n_minus.shape:
        raise ValueError("the two count tables differ in shape")
    # pattern bits are 1 for r; D (=1) maps to t (=0) at +45, hence the reversal
    num = n_plus[..., ::-1] + n_minus
    total = n_plus.sum(-1) + n_minus.sum(-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / total[..., None]
    return np.where(total[..., None] > 0, out, np.nan)


def beta_from_totals(s_r, s_t):
    """Ratio of reflected to transmitted singles; broadcasts."""
    s_r, s_t = np.asarray(s_r, dtype=float), np.asarray(s_t, dtype=float)
    if np.any(s_t <= 0):
        raise ValueError("transmitted-port singles must be positive")
    return s_r / s_t


def estimate_beta(*tables: CountTable) -> Estimate:
    """Detection-efficiency ratio from the singles of the given tables.

    Typically called with the (0, +45) and (0, -45) tables, whose combined
    port statistics are balanced for any photon state.
    """
    if not tables:
        raise ValueError("need at least one count table")
    s_r = sum(t.singles_total("r") for t in tables)
    s_t = sum(t.singles_total("t") for t in tables)
    if s_r <= 0 or s_t <= 0:
        raise ValueError("singles totals must be positive on both ports")
    beta = float(beta_from_totals(s_r, s_t))
    return Estimate(beta, beta * math.sqrt(1 / s_r + 1 / s_t))


# -------------------------------------------------------------------- parities


def parity(counts, beta=1.0) -> np.ndarray:
    """Efficiency-corrected parity per ion outcome, shape ``(..., 8)``.

    Each pattern count is weighted by ``beta ** (number of t ports)``; the sign
    is + for an even number of r ports. ``beta`` broadcasts against the
    leading axes of ``counts`` (without the two table axes). NaN where an
    outcome has no coincidences.
    """
    n = _counts(counts)
    b = np.asarray(beta, dtype=float)
    if np.any(b <= 0):
        raise ValueError("beta must be positive")
    w = b[..., None, None] ** _N_T if n.ndim >= 2 else b[..., None] ** _N_T
    weighted = w * n
    num = (weighted * _PARITY_SIGN).sum(-1)
    den = weighted.sum(-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    return np.where(den > 0, out, np.nan)


def exact_parity(rho: DensityMatrix, theta: float) -> float:
    """``Tr[rho X_theta^(x3)]`` for a three-photon state in the logical basis."""
    x = x_theta(theta)
    return expectation(rho, kron_all(x, x, x))


@dataclass(frozen=True)
class ParityComponents:
    """Fourier content of the parity curve of a state.

    ``parity(theta) = C cos(3 theta + alpha) + sum_k c_k cos(theta + phi_k)``.
    """

    C: float
    alpha: float
    single_amplitudes: tuple[float, float, float]
    single_phases: tuple[float, float, float]

    def predict(self, theta) -> np.ndarray:
        return full_parity_model(theta, self.C, self.alpha, self.single_amplitudes, self.single_phases)


def parity_components(rho: DensityMatrix) -> ParityComponents:
    m = rho.matrix
    c3 = m[0b000, 0b111]
    amps, phases = [], []
    for a in (0b001, 0b010, 0b011):
        z = m[a, 7 - a]
        # strings with more 0s than 1s rotate as e^{+i theta}, the others as e^{-i theta}
        z = z if bin(a).count("1") == 1 else np.conj(z)
        amps.append(float(2 * abs(z)))
        phases.append(float(np.angle(z)))
    return ParityComponents(float(2 * abs(c3)), float(np.angle(c3)), tuple(amps), tuple(phases))


def full_parity_model(theta, C, alpha, single_amplitudes=(0, 0, 0), single_phases=(0, 0, 0)) -> np.ndarray:
    """Diagnostic predictor including the single-frequency terms; never fitted."""
    theta = np.asarray(theta, dtype=float)
    out = C * np.cos(3 * theta + alpha)
    for c, ph in zip(single_amplitudes, single_phases):
        out = out + c * np.cos(theta + ph)
    return out


# ------------------------------------------------------------------ curve fit


def wrap_angle(a):
    """Wrap into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class ParityCurve:
    theta: np.ndarray
    parity: np.ndarray
    sigma: np.ndarray | None = None

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        p = np.asarray(self.parity, dtype=float)
        if th.shape != p.shape or th.ndim != 1:
            raise ValueError("theta and parity must be 1-D arrays of equal length")
        if len(np.unique(th)) != len(th):
            raise ValueError("theta values must be distinct")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "parity", p)
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=float)
            if s.shape != th.shape or np.any(s < 0):
                raise ValueError("sigma must be non-negative with the shape of theta")
            object.__setattr__(self, "sigma", s)


@dataclass(frozen=True)
class FitResult:
    C: float
    alpha: float
    covariance: np.ndarray
    residual_norm: float

    @property
    def sigma_C(self) -> float:
        return float(np.sqrt(max(self.covariance[0, 0], 0.0)))

    @property
    def sigma_alpha(self) -> float:
        return float(np.sqrt(max(self.covariance[1, 1], 0.0)))

    def predict(self, theta) -> np.ndarray:
        return self.C * np.cos(3 * np.asarray(theta, dtype=float) + self.alpha)


def _three_theta(theta, c, alpha):
    return c * np.cos(3 * theta + alpha)


def _three_theta_jac(theta, c, alpha):
    # finite differences stall near alpha = 0 on the six-point grid
    phase = 3 * theta + alpha
    return np.stack([np.cos(phase), -c * np.sin(phase)], axis=-1)


class ParityCurveFit(BaseEstimator):
    """Least-squares fit of ``C cos(3 theta + alpha)``.

    ``weighted=True`` uses the per-point sigma with absolute scaling of the
    covariance; ``weighted=False`` fits unweighted and scales the covariance
    by the residual variance.
    """

    def __init__(self, weighted: bool = True):
        self.weighted = weighted

    def fit(self, theta, parity, sigma=None) -> "ParityCurveFit":
        th = np.asarray(theta, dtype=float).reshape(-1)
        y = np.asarray(parity, dtype=float).reshape(-1)
        if th.shape != y.shape:
            raise ValueError("theta and parity lengths differ")
        ok = np.isfinite(y)
        th, y = th[ok], y[ok]
        if len(np.unique(th)) < 3:
            raise ValueError("need at least three distinct theta values")
        s = None
        if self.weighted and sigma is not None:
            s = np.asarray(sigma, dtype=float).reshape(-1)[ok]
            if np.any(~np.isfinite(s)) or np.any(s < 0):
                raise ValueError("sigma must be finite and non-negative")
            # points pinned at |parity| = 1 can show zero resampling spread
            pos = s[s > 0]
            s = np.maximum(s, pos.min() if pos.size else 1.0)

        # frequency-3 Fourier component as starting point
        a = 2 * np.mean(y * np.cos(3 * th))
        b = 2 * np.mean(y * np.sin(3 * th))
        p0 = (float(np.hypot(a, b)) or 1e-3, float(np.arctan2(-b, a)))
        with warnings.catch_warnings():
            # C = 0 leaves alpha undetermined; the covariance then carries inf
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(
                _three_theta, th, y, p0=p0, jac=_three_theta_jac, sigma=s, absolute_sigma=s is not None,
                xtol=1e-14, ftol=1e-14, gtol=1e-14, maxfev=10_000,
            )
        c, alpha = float(popt[0]), float(popt[1])
        if c < 0:
            c, alpha = -c, alpha + np.pi
            pcov = pcov * np.array([[1, -1], [-1, 1]])
        self.C_ = c
        self.alpha_ = wrap_angle(alpha)
        self.covariance_ = pcov
        self.residual_norm_ = float(np.linalg.norm(y - _three_theta(th, c, alpha)))
        return self

    def predict(self, theta) -> np.ndarray:
        return _three_theta(np.asarray(theta, dtype=float), self.C_, self.alpha_)

    @property
    def result_(self) -> FitResult:
        return FitResult(self.C_, self.alpha_, self.covariance_, self.residual_norm_)


def fit_parity(curve: ParityCurve, weighted: bool = True) -> FitResult:
    return ParityCurveFit(weighted=weighted).fit(curve.theta, curve.parity, curve.sigma).result_


# --------------------------------------------------------- fidelity, witness


def fidelity_from_parity(p_000: float, p_111: float, C: float, sigmas=(0.0, 0.0, 0.0)) -> Estimate:
    """GHZ fidelity from the two target populations and the fitted amplitude."""
    value = 0.5 * (p_000 + p_111) + C / 2
    sigma = 0.5 * math.sqrt(sum(s * s for s in sigmas))
    return Estimate(value, sigma)


def _label_indices(label: GhzLabel) -> tuple[int, int]:
    j, k = label.pair
    return 2 * j + k, 4 + 2 * (1 - j) + (1 - k)


def witness_lower_bound(populations, parity0, label: GhzLabel):
    """Lower bound on the fidelity to ``label`` from populations and the theta=0 parity.

    Broadcasts over leading axes of ``populations`` (trailing length 8) and
    ``parity0``. Tiny negative products from sampling noise are clipped.
    """
    p = np.asarray(populations, dtype=float)
    lo, hi = _label_indices(label)
    value = 0.5 * (p[..., lo] + p[..., hi]) + label.sign * 0.5 * np.asarray(parity0, dtype=float)
    for other in range(4):
        if other == lo:
            continue
        value = value - np.sqrt(np.clip(p[..., other] * p[..., 7 - other], 0.0, None))
    return value


# ------------------------------------------------------------------ bootstrap


def poisson_resample(counts, n_resamples: int, rng: np.random.Generator) -> np.ndarray:
    n = np.asarray(counts, dtype=float)
    return rng.poisson(n, size=(n_resamples,) + n.shape).astype(float)


def propagate_errors(
    counts,
    estimator: Callable,
    n_resamples: int = 1000,
    seed=None,
    batched: bool = True,
) -> np.ndarray:
    """Poisson parametric bootstrap standard deviation of ``estimator(counts)``.

    ``counts`` is one array or a tuple of arrays passed positionally. With
    ``batched=True`` the estimator receives arrays with a leading resample
    axis; otherwise it is called once per resample. NaN resamples are ignored.
    """
    if n_resamples < 2:
        raise ValueError("need at least two resamples")
    rng = check_random_state(seed)
    arrays = counts if isinstance(counts, tuple) else (counts,)
    arrays = tuple(np.asarray(a, dtype=float) for a in arrays)
    if any(np.any(a < 0) for a in arrays):
        raise ValueError("counts must be non-negative")
    samples = [poisson_resample(a, n_resamples, rng) for a in arrays]
    if batched:
        values = np.asarray(estimator(*samples), dtype=float)
    else:
        values = np.stack([np.asarray(estimator(*[s[b] for s in samples]), dtype=float) for b in range(n_resamples)])
    return _nanstd(values)


def _nanstd(values: np.ndarray) -> np.ndarray:
    # columns with fewer than two finite draws are masked below
    with np.errstate(invalid="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        finite = np.isfinite(values).sum(axis=0)
        out = np.nanstd(np.where(np.isfinite(values), values, np.nan), axis=0, ddof=1) if values.size else values
    return np.where(finite >= 2, out, np.nan)


# -------------------------------------------------------------------- reports


def _setting_close(a: MeasurementSetting, phi: float, varphi: float) -> bool:
    return abs(a.phi_deg - phi) < 1e-6 and abs(a.varphi_deg - varphi) < 1e-6


@dataclass
class SettingGroups:
    plus45: CountTable | None
    minus45: CountTable | None
    parity_tables: list[CountTable]

    @property
    def thetas(self) -> np.ndarray:
        return np.array([t.setting.theta for t in self.parity_tables])

    @property
    def theta0(self) -> CountTable | None:
        for t in self.parity_tables:
            if abs(t.setting.theta) < 1e-9:
                return t
        return None


def group_tables(tables: Sequence[CountTable]) -> SettingGroups:
    """Sort tables into the two logical-basis settings and the parity scan."""
    plus = minus = None
    parity_tables = []
    for t in tables:
        if t.setting is None:
            raise ValueError("every count table must carry its measurement setting")
        if _setting_close(t.setting, 0, 45):
            plus = t
        elif _setting_close(t.setting, 0, -45):
            minus = t
        elif t.setting.is_parity:
            parity_tables.append(t)
        else:
            raise ValueError(f"unsupported setting {t.setting.key}")
    thetas = [t.setting.theta for t in parity_tables]
    if len(set(np.round(thetas, 12))) != len(thetas):
        raise ValueError("duplicate parity settings")
    parity_tables.sort(key=lambda t: t.setting.theta)
    return SettingGroups(plus, minus, parity_tables)


def _f(x) -> float | None:
    return None if x is None or not np.isfinite(x) else float(x)


@dataclass
class WitnessReport:
    outcome: IonOutcome
    label: GhzLabel
    populations: np.ndarray | None
    population_sigma: np.ndarray | None
    parity0: float | None
    parity0_sigma: float | None
    parities: np.ndarray | None
    parity_sigma: np.ndarray | None
    fit: FitResult | None
    fidelity_exact: Estimate | None
    lower_bound: Estimate | None
    gme_flag: bool | None
    sigmas_above_half: float | None
    fidelity_model: float | None = None

    def to_dict(self) -> dict:
        vec = lambda a: None if a is None else [_f(v) for v in a]  # noqa: E731
        return {
            "outcome": self.outcome.label,
            "label": self.label.name,
            "populations": vec(self.populations),
            "population_sigma": vec(self.population_sigma),
            "parity0": _f(self.parity0),
            "parity0_sigma": _f(self.parity0_sigma),
            "parities": vec(self.parities),
            "parity_sigma": vec(self.parity_sigma),
            "fit": None if self.fit is None else {
                "C": self.fit.C, "alpha": self.fit.alpha,
                "sigma_C": self.fit.sigma_C, "sigma_alpha": self.fit.sigma_alpha,
                "covariance": self.fit.covariance.tolist(), "residual_norm": self.fit.residual_norm,
            },
            "fidelity_exact": None if self.fidelity_exact is None else list(map(_f, self.fidelity_exact)),
            "lower_bound": None if self.lower_bound is None else list(map(_f, self.lower_bound)),
            "gme_flag": self.gme_flag,
            "sigmas_above_half": _f(self.sigmas_above_half) if self.sigmas_above_half not in (math.inf, -math.inf)
            else ("inf" if self.sigmas_above_half > 0 else "-inf"),
            "fidelity_model": _f(self.fidelity_model),
        }


@dataclass
class AnalysisReport:
    beta: float
    beta_sigma: float
    beta_corrected: bool
    thetas: np.ndarray
    outcomes: list[WitnessReport]
    alpha_difference: Estimate | None
    gaps: list[str] = field(default_factory=list)

    def __getitem__(self, outcome) -> WitnessReport:
        return self.outcomes[IonOutcome.parse(outcome).index]

    @property
    def alpha_difference_sigmas_from_pi(self) -> float | None:
        if self.alpha_difference is None or self.alpha_difference.sigma == 0:
            return None
        return (math.pi - abs(self.alpha_difference.value)) / self.alpha_difference.sigma

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "beta_sigma": self.beta_sigma,
            "beta_corrected": self.beta_corrected,
            "thetas": [float(t) for t in self.thetas],
            "alpha_difference": None if self.alpha_difference is None else list(self.alpha_difference),
            "alpha_difference_sigmas_from_pi": self.alpha_difference_sigmas_from_pi,
            "gaps": list(self.gaps),
            "outcomes": [r.to_dict() for r in self.outcomes],
        }

    def csv_rows(self) -> list[dict]:
        rows = []
        for r in self.outcomes:
            row = {
                "beta_corrected": int(self.beta_corrected),
                "outcome": r.outcome.label,
                "label": r.label.name,
                "parity0": _f(r.parity0),
                "parity0_sigma": _f(r.parity0_sigma),
                "C": None if r.fit is None else r.fit.C,
                "C_sigma": None if r.fit is None else r.fit.sigma_C,
                "alpha": None if r.fit is None else r.fit.alpha,
                "alpha_sigma": None if r.fit is None else r.fit.sigma_alpha,
                "fidelity_parity": None if r.fidelity_exact is None else r.fidelity_exact.value,
                "fidelity_parity_sigma": None if r.fidelity_exact is None else r.fidelity_exact.sigma,
                "lower_bound": None if r.lower_bound is None else _f(r.lower_bound.value),
                "lower_bound_sigma": None if r.lower_bound is None else _f(r.lower_bound.sigma),
                "gme": r.gme_flag,
                "sigmas_above_half": r.sigmas_above_half,
            }
            for i in range(8):
                name = "".join("AD"[b] for b in IonOutcome.from_index(i).bits)
                row[f"P_{name}"] = None if r.populations is None else _f(r.populations[i])
            rows.append(row)
        return rows


def _fmt(est: Estimate | None, digits: int = 2) -> str:
    if est is None or est.value is None or not np.isfinite(est.value):
        return "-"
    if not np.isfinite(est.sigma) or est.sigma <= 0:
        return f"{est.value:.{digits}f}"
    # uncertainty in units of the last printed digit
    return f"{est.value:.{digits}f}({max(1, round(est.sigma * 10**digits))})"


@dataclass
class AnalysisResult:
    """The efficiency-corrected result set next to the uncorrected (beta = 1) one."""

    corrected: AnalysisReport
    uncorrected: AnalysisReport

    def to_dict(self) -> dict:
        return {"beta_corrected": self.corrected.to_dict(), "beta_one": self.uncorrected.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_csv(self) -> str:
        rows = self.corrected.csv_rows() + self.uncorrected.csv_rows()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: "" if v is None else v for k, v in row.items()})
        return buf.getvalue()

    def to_text(self) -> str:
        c, u = self.corrected, self.uncorrected
        head = ["Ion outcome"] + [r.outcome.arrows for r in c.outcomes]
        rows = [
            head,
            ["Three-photon state"] + [r.label.name for r in c.outcomes],
            ["Fidelity model"] + [_fmt(Estimate(r.fidelity_model, 0.0)) if r.fidelity_model is not None else "-"
                                  for r in c.outcomes],
            ["Fidelity parity"] + [_fmt(r.fidelity_exact) for r in c.outcomes],
            [f"Lower bound beta={c.beta:.2f}"] + [_fmt(r.lower_bound) for r in c.outcomes],
            ["Lower bound beta=1"] + [_fmt(r.lower_bound) for r in u.outcomes],
            ["GME sigmas above 0.5"] + ["-" if r.sigmas_above_half is None else f"{r.sigmas_above_half:.1f}"
                                        for r in c.outcomes],
        ]
        widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
        lines = []
        for n, row in enumerate(rows):
            lines.append(" | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            if n == 0:
                lines.append("-+-".join("-" * w for w in widths))
        lines.append("")
        lines.append(f"beta = {c.beta:.4f} +/- {c.beta_sigma:.4f}")
        if c.alpha_difference is not None:
            lines.append(
                f"alpha(uuu) - alpha(ddd) = {c.alpha_difference.value:.3f} +/- {c.alpha_difference.sigma:.3f} rad"
            )
        for gap in c.gaps:
            lines.append(f"missing: {gap}")
        return "\n".join(lines) + "\n"


class WitnessAnalyzer(BaseEstimator):
    """Full per-outcome analysis of a set of count tables.

    ``beta=None`` estimates the efficiency ratio from the singles of the two
    logical-basis tables; a supplied value is used with width ``beta_sigma``
    in the bootstrap. ``correct_beta=False`` forces ``beta = 1``.
    """

    def __init__(
        self,
        beta: float | None = None,
        beta_sigma: float = 0.01,
        correct_beta: bool = True,
        n_resamples: int = 1000,
        weighted_fit: bool = True,
        random_state=0,
    ):
        self.beta = beta
        self.beta_sigma = beta_sigma
        self.correct_beta = correct_beta
        self.n_resamples = n_resamples
        self.weighted_fit = weighted_fit
        self.random_state = random_state

    def _beta_draws(self, groups: SettingGroups, rng, gaps: list[str]):
        B = self.n_resamples
        if not self.correct_beta:
            return 1.0, 0.0, np.ones(B)
        if self.beta is not None:
            if self.beta <= 0:
                raise ValueError("beta must be positive")
            draws = rng.normal(self.beta, self.beta_sigma, size=B)
            return float(self.beta), float(self.beta_sigma), np.clip(draws, 1e-6, None)
        if groups.plus45 is None or groups.minus45 is None:
            gaps.append("beta: logical-basis settings (0,+45) and (0,-45) required; using beta = 1")
            return 1.0, 0.0, np.ones(B)
        est = estimate_beta(groups.plus45, groups.minus45)
        s_r = groups.plus45.singles_total("r") + groups.minus45.singles_total("r")
        s_t = groups.plus45.singles_total("t") + groups.minus45.singles_total("t")
        draws = rng.poisson(s_r, size=B) / np.maximum(rng.poisson(s_t, size=B), 1)
        return est.value, est.sigma, draws

    def fit(self, tables: Sequence[CountTable], model_fidelities: Mapping[str, float] | None = None):
        groups = group_tables(tables)
        rng = check_random_state(self.random_state)
        gaps: list[str] = []
        beta, beta_sigma, beta_draws = self._beta_draws(groups, rng, gaps)
        B = self.n_resamples

        pops = pops_sigma = pops_draws = None
        if groups.plus45 is not None and groups.minus45 is not None:
            plus, minus = groups.plus45.counts, groups.minus45.counts
            pops = logical_probabilities(plus, minus)
            pops_draws = logical_probabilities(poisson_resample(plus, B, rng), poisson_resample(minus, B, rng))
            pops_sigma = _nanstd(pops_draws)
        else:
            gaps.append("populations: logical-basis settings (0,+45) and (0,-45) required")

        thetas = groups.thetas
        par = par_sigma = None
        par0_draws = None
        if groups.parity_tables:
            par = np.stack([parity(t.counts, beta) for t in groups.parity_tables], axis=1)  # (8 lmn, n_theta)
            draws = []
            for t in groups.parity_tables:
                d = parity(poisson_resample(t.counts, B, rng), beta_draws)
                draws.append(d)
                if t is groups.theta0:
                    par0_draws = d
            par_sigma = np.stack([_nanstd(d) for d in draws], axis=1)
        else:
            gaps.append("parities: no parity settings (varphi = 0)")
        i0 = None
        if groups.theta0 is None:
            gaps.append("witness bounds: parity setting at theta = 0 required")
        else:
            i0 = groups.parity_tables.index(groups.theta0)
        n_distinct = len(thetas)
        if 0 < n_distinct < 3:
            gaps.append(f"parity fits: need at least 3 parity settings, got {n_distinct}")

        reports = []
        for outcome in IonOutcome.all():
            l = outcome.index
            label = OUTCOME_TO_LABEL[outcome.label]
            fit = None
            if par is not None and n_distinct >= 3 and np.isfinite(par[l]).sum() >= 3:
                fit = ParityCurveFit(self.weighted_fit).fit(thetas, par[l], par_sigma[l]).result_
            fid = None
            if fit is not None and pops is not None and label.index == 1:
                fid = fidelity_from_parity(
                    pops[l, 0], pops[l, 7], fit.C, (pops_sigma[l, 0], pops_sigma[l, 7], fit.sigma_C)
                )
            bound = flag = nsig = None
            if pops is not None and i0 is not None:
                value = float(witness_lower_bound(pops[l], par[l, i0], label))
                sigma = float(_nanstd(witness_lower_bound(pops_draws[:, l], par0_draws[:, l], label)))
                bound = Estimate(value, sigma)
                if np.isfinite(value) and np.isfinite(sigma):
                    flag, nsig = flag_gme(value, sigma)
            model = None if model_fidelities is None else model_fidelities.get(outcome.label)
            reports.append(
                WitnessReport(
                    outcome=outcome,
                    label=label,
                    populations=None if pops is None else pops[l],
                    population_sigma=None if pops is None else pops_sigma[l],
                    parity0=None if i0 is None else float(par[l, i0]),
                    parity0_sigma=None if i0 is None else float(par_sigma[l, i0]),
                    parities=None if par is None else par[l],
                    parity_sigma=None if par is None else par_sigma[l],
                    fit=fit,
                    fidelity_exact=fid,
                    lower_bound=bound,
                    gme_flag=flag,
                    sigmas_above_half=nsig,
                    fidelity_model=model,
                )
            )

        alpha_diff = None
        f_down, f_up = reports[0].fit, reports[7].fit
        if f_down is not None and f_up is not None:
            alpha_diff = Estimate(
                wrap_angle(f_up.alpha - f_down.alpha), math.hypot(f_up.sigma_alpha, f_down.sigma_alpha)
            )
        self.report_ = AnalysisReport(beta, beta_sigma, self.correct_beta, thetas, reports, alpha_diff, gaps)
        return self


def analyze_tables(
    tables: Sequence[CountTable],
    beta: float | None = None,
    beta_sigma: float = 0.01,
    n_resamples: int = 1000,
    weighted_fit: bool = True,
    seed=0,
    model_fidelities: Mapping[str, float] | None = None,
) -> AnalysisResult:
    """Run the analysis with and without the efficiency correction."""
    ss = np.random.SeedSequence(seed if isinstance(seed, (int, np.integer)) else None)
    s_corr, s_one = ss.spawn(2)
    common = dict(beta=beta, beta_sigma=beta_sigma, n_resamples=n_resamples, weighted_fit=weighted_fit)
    corrected = WitnessAnalyzer(**common, correct_beta=True, random_state=np.random.default_rng(s_corr))
    uncorrected = WitnessAnalyzer(**common, correct_beta=False, random_state=np.random.default_rng(s_one))
    return AnalysisResult(
        corrected.fit(tables, model_fidelities).report_,
        uncorrected.fit(tables, model_fidelities).report_,
    )
