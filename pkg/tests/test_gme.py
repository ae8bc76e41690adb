import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ghz_factory.gme import (
    BiseparableCandidate,
    Bipartition,
    cut_matrix,
    flag_gme,
    max_biseparable_fidelity,
    max_schmidt_sq,
    random_pure_state,
)
from ghz_factory.protocol import GhzLabel
from ghz_factory.quantum import DensityMatrix, Ket, fidelity, partial_trace, random_ket

seeds = st.integers(0, 2**32 - 1)
W_STATE = Ket(np.array([0, 1, 1, 0, 1, 0, 0, 0]) / np.sqrt(3))


def reduced_top_eigenvalue(target: Ket, cut: Bipartition) -> float:
    rho = partial_trace(target.to_density_matrix(), [cut.single])
    return float(np.linalg.eigvalsh(rho.matrix)[-1])


def random_product_candidate(rng) -> BiseparableCandidate:
    cut = Bipartition(int(rng.integers(3)))
    a, b = random_ket(1, rng).vector, random_ket(2, rng).vector
    return BiseparableCandidate(cut, a, b)


class TestSchmidt:
    @pytest.mark.parametrize("cut", list(Bipartition))
    def test_ghz(self, cut):
        assert max_schmidt_sq(GhzLabel(1, 1).ket(), cut) == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("cut", list(Bipartition))
    def test_product(self, cut):
        assert max_schmidt_sq(Ket.from_bits("000"), cut) == pytest.approx(1.0, abs=1e-15)

    @given(seeds, st.sampled_from(list(Bipartition)))
    def test_matches_reduced_state(self, seed, cut):
        target = random_pure_state(seed=seed)
        assert max_schmidt_sq(target, cut) == pytest.approx(reduced_top_eigenvalue(target, cut), abs=1e-12)

    def test_cut_matrix_layout(self):
        # |011>: qubit 0 is 0, the pair (1, 2) reads 11
        m = cut_matrix(Ket.from_bits("011"), Bipartition.A_BC)
        assert m[0, 3] == 1
        m = cut_matrix(Ket.from_bits("011"), Bipartition.C_AB)
        assert m[1, 1] == 1

    def test_rejects_wrong_size(self):
        with pytest.raises(ValueError):
            cut_matrix(Ket.from_bits("01"), Bipartition.A_BC)


class TestOptimiser:
    @pytest.mark.parametrize("label", GhzLabel.all(), ids=str)
    def test_ghz_targets(self, label):
        assert max_biseparable_fidelity(label.ket(), seed=0).fidelity == pytest.approx(0.5, abs=1e-6)

    def test_product_target(self):
        opt = max_biseparable_fidelity(Ket.from_bits("000"), seed=1)
        assert opt.fidelity == pytest.approx(1.0, abs=1e-9) and opt.converged

    def test_w_state(self):
        opt = max_biseparable_fidelity(W_STATE, seed=2)
        svd = max(max_schmidt_sq(W_STATE, c) for c in Bipartition)
        assert svd == pytest.approx(2 / 3, abs=1e-12)
        assert opt.fidelity == pytest.approx(svd, abs=1e-6)

    def test_random_targets_attain_svd_value(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            target = random_ket(3, rng)
            opt = max_biseparable_fidelity(target, seed=rng)
            for cut in Bipartition:
                assert opt.per_cut[cut] <= max_schmidt_sq(target, cut) + 1e-9
            svd = max(max_schmidt_sq(target, c) for c in Bipartition)
            assert opt.fidelity == pytest.approx(svd, abs=1e-6)

    @given(seeds)
    def test_candidate_reproduces_reported_fidelity(self, seed):
        target = random_pure_state(seed=seed)
        opt = max_biseparable_fidelity(target, restarts=3, seed=seed)
        cand = opt.candidate
        assert np.linalg.norm(cand.single) == pytest.approx(1.0) and np.linalg.norm(cand.pair) == pytest.approx(1.0)
        overlap = abs(np.vdot(cand.ket().vector, target.vector)) ** 2
        assert overlap == pytest.approx(opt.fidelity, abs=1e-12)

    def test_iteration_cap_reports_non_convergence(self):
        opt = max_biseparable_fidelity(random_pure_state(seed=3), restarts=1, iterations=1, seed=0)
        assert not opt.converged and 0 < opt.fidelity <= 1

    def test_deterministic(self):
        t = random_pure_state(seed=5)
        assert max_biseparable_fidelity(t, seed=9).fidelity == max_biseparable_fidelity(t, seed=9).fidelity


class TestBiseparableMixtures:
    @given(seeds, st.integers(1, 12), st.sampled_from(GhzLabel.all()))
    def test_random_mixture_below_half(self, seed, k, label):
        rng = np.random.default_rng(seed)
        weights = rng.dirichlet(np.ones(k))
        kets = [random_product_candidate(rng).ket().vector for _ in range(k)]
        rho = DensityMatrix(sum(w * np.outer(v, v.conj()) for w, v in zip(weights, kets)))
        assert fidelity(rho, label.ket()) <= 0.5 + 1e-9

    @given(seeds, st.sampled_from(GhzLabel.all()))
    def test_mixture_of_optimised_candidates_below_half(self, seed, label):
        rng = np.random.default_rng(seed)
        # candidates optimised against the label itself are the hardest case
        kets = [max_biseparable_fidelity(label.ket(), restarts=2, seed=rng).candidate.ket().vector for _ in range(3)]
        kets.append(max_biseparable_fidelity(random_pure_state(seed=rng), restarts=2, seed=rng).candidate.ket().vector)
        weights = rng.dirichlet(np.ones(len(kets)))
        rho = DensityMatrix(sum(w * np.outer(v, v.conj()) for w, v in zip(weights, kets)))
        assert fidelity(rho, label.ket()) <= 0.5 + 1e-9


class TestFlag:
    def test_seven_sigma(self):
        flag, n = flag_gme(0.78, 0.04)
        assert flag and n == pytest.approx(7.0, abs=1e-12)

    def test_three_and_a_quarter(self):
        assert flag_gme(0.63, 0.04)[1] == pytest.approx(3.25, abs=1e-12)

    def test_threshold_is_strict(self):
        assert flag_gme(0.5, 0.04) == (False, 0.0)
        assert flag_gme(0.5, 0.0) == (False, 0.0)

    def test_zero_sigma(self):
        assert flag_gme(0.6, 0.0) == (True, float("inf"))
        assert flag_gme(0.4, 0.0) == (False, float("-inf"))

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            flag_gme(0.7, -0.01)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-4, 1))
    def test_monotone(self, f1, f2, sigma):
        lo, hi = sorted((f1, f2))
        assert flag_gme(lo, sigma)[1] <= flag_gme(hi, sigma)[1]
        assert flag_gme(lo, sigma)[0] <= flag_gme(hi, sigma)[0]
