import numpy as np
import pytest

from relumhe.neighborhood import ObservableNeighborhood, k_matrix, membership, retract
from relumhe.pe_design import design_pe_input
from relumhe.relu_net import Architecture, WeightState, observability_jacobian


def make_neighborhood(seed=0, m=2, n=4):
    from relumhe.orthant_geo import observability_certificate

    rng = np.random.default_rng(seed)
    while True:
        W = rng.standard_normal((m, n))
        if observability_certificate(W).observable:
            break
    plan = design_pe_input(W, rng=rng)
    anchor = WeightState.from_parts(Architecture.fixed_output(m, n), W)
    return ObservableNeighborhood.build(anchor, plan.U), anchor, rng


class TestConstruction:
    def test_requires_pe_input(self):
        rng = np.random.default_rng(1)
        arch = Architecture.fixed_output(2, 3)
        anchor = WeightState(rng.standard_normal(6), arch)
        U = np.tile(rng.standard_normal(2), (6, 1))  # repeated row: not exciting
        with pytest.raises(ValueError):
            ObservableNeighborhood.build(anchor, U)

    def test_general_architecture_rejected(self):
        arch = Architecture.general(2, 2)
        anchor = WeightState(np.ones(arch.state_dim), arch)
        with pytest.raises(ValueError):
            ObservableNeighborhood.build(anchor, np.eye(2))


class TestKMatrix:
    def test_anchor_gives_zero(self):
        neigh, anchor, _ = make_neighborhood()
        np.testing.assert_allclose(k_matrix(neigh, anchor.W), 0.0, atol=1e-12)

    def test_doubling_gives_ones(self):
        neigh, anchor, _ = make_neighborhood()
        np.testing.assert_allclose(k_matrix(neigh, 2.0 * anchor.W), 1.0, atol=1e-12)

    def test_negation_gives_minus_two(self):
        neigh, anchor, _ = make_neighborhood()
        np.testing.assert_allclose(k_matrix(neigh, -anchor.W), -2.0, atol=1e-12)


class TestMembership:
    def test_halved_weights_are_members(self):
        neigh, anchor, _ = make_neighborhood()
        assert membership(neigh, 0.5 * anchor.W)

    def test_negated_weights_are_not(self):
        neigh, anchor, _ = make_neighborhood()
        assert not membership(neigh, -anchor.W)

    def test_small_perturbations_are_members(self):
        neigh, anchor, rng = make_neighborhood(seed=2)
        pre_min = np.abs(neigh.ref_pre).min()
        for _ in range(20):
            D = rng.standard_normal(anchor.W.shape)
            D *= 0.1 * pre_min / np.abs(neigh.U @ D).max()
            assert membership(neigh, anchor.W + D)

    def test_convex_combinations_of_members(self):
        neigh, anchor, rng = make_neighborhood(seed=3)

        def random_member():
            while True:
                D = rng.standard_normal(anchor.W.shape)
                scale = 0.8 / np.abs((neigh.U @ D) / neigh.ref_pre).max()
                cand = anchor.W + scale * D
                if membership(neigh, cand):
                    return cand

        for _ in range(50):
            W1, W2 = random_member(), random_member()
            for a in np.linspace(0.1, 0.9, 9):
                assert membership(neigh, a * W1 + (1 - a) * W2)

    def test_members_share_the_jacobian(self):
        neigh, anchor, rng = make_neighborhood(seed=4)
        jac0 = observability_jacobian(anchor, neigh.U).DH
        for _ in range(10):
            D = rng.standard_normal(anchor.W.shape)
            D *= 0.2 * np.abs(neigh.ref_pre).min() / np.abs(neigh.U @ D).max()
            other = anchor.replace_w(
                anchor.w + WeightState.from_parts(anchor.arch, D).w
            )
            assert membership(neigh, other)
            np.testing.assert_array_equal(
                observability_jacobian(other, neigh.U).DH, jac0
            )


class TestRetract:
    def test_member_target_returned_unchanged(self):
        neigh, anchor, _ = make_neighborhood(seed=5)
        target = anchor.replace_w(anchor.w * 1.01)
        assert retract(neigh, anchor, target) is target

    def test_bisection_against_analytic_threshold(self):
        # the segment from W0 toward -W0 stays a member up to step 1/2
        neigh, anchor, _ = make_neighborhood(seed=6)
        target = anchor.replace_w(-anchor.w)
        out = retract(neigh, anchor, target)
        alpha = np.linalg.norm(out.w - anchor.w) / np.linalg.norm(target.w - anchor.w)
        assert 0.0 < alpha < 0.5
        assert alpha == pytest.approx(0.5, abs=1e-6)
        assert membership(neigh, out)

    def test_output_is_always_a_member(self):
        neigh, anchor, rng = make_neighborhood(seed=7)
        for _ in range(20):
            target = anchor.replace_w(anchor.w + rng.standard_normal(anchor.w.size))
            out = retract(neigh, anchor, target)
            assert membership(neigh, out)

    def test_nonmember_start_rejected(self):
        neigh, anchor, _ = make_neighborhood(seed=8)
        bad = anchor.replace_w(-anchor.w)
        with pytest.raises(ValueError):
            retract(neigh, bad, anchor)


class TestBiasVariant:
    def test_bias_membership_machinery(self):
        from relumhe.orthant_geo import RankDeficientW, observability_certificate
        from relumhe.pe_design import design_pe_input_bias

        rng = np.random.default_rng(9)
        while True:
            W1 = rng.standard_normal((2, 4))
            b = rng.standard_normal(4)
            try:
                if observability_certificate(W1, b).observable:
                    break
            except RankDeficientW:
                continue
        plan = design_pe_input_bias(W1, b)
        anchor = WeightState.from_parts(Architecture.bias(2, 4), W1, b=b)
        neigh = ObservableNeighborhood.build(anchor, plan.U)
        assert membership(neigh, anchor)
        # stacked-matrix interface: last row is the bias row
        stacked = np.vstack([W1, b])
        np.testing.assert_allclose(k_matrix(neigh, stacked), 0.0, atol=1e-12)
        assert membership(neigh, 1.001 * stacked)
