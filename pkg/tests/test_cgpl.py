import numpy as np
import pytest
import torch

from tabimg.cgpl import (ConsensusCase, cross_entropy, determine_case,
                         make_pseudo_label, select_update_targets,
                         unlabeled_loss)


def P(*rows):
    return torch.tensor(rows, dtype=torch.double)


class TestDetermineCase:
    def test_all_agree(self):
        cases = determine_case(P([.7, .3]), P([.6, .4]), P([.8, .2]))
        assert cases == [ConsensusCase.CASE1]

    def test_image_agrees(self):
        cases = determine_case(P([.7, .3]), P([.6, .4]), P([.2, .8]))
        assert cases == [ConsensusCase.CASE2I]

    def test_tabular_agrees(self):
        cases = determine_case(P([.7, .3]), P([.2, .8]), P([.8, .2]))
        assert cases == [ConsensusCase.CASE2T]

    def test_tie_break_gives_case3(self):
        # m argmax 1; i argmax 0; t ties at .5 -> lowest index 0
        cases = determine_case(P([.4, .6]), P([.6, .4]), P([.5, .5]))
        assert cases == [ConsensusCase.CASE3]

    def test_exhaustive_and_exclusive(self):
        rng = np.random.default_rng(0)
        n, c = 100_000, 4
        probs = [torch.tensor(rng.dirichlet(np.ones(c), size=n))
                 for _ in range(3)]
        cases = determine_case(*probs)
        assert len(cases) == n
        a_m, a_i, a_t = (p.argmax(dim=1) for p in probs)
        for i, case in enumerate(cases):
            m, im, t = int(a_m[i]), int(a_i[i]), int(a_t[i])
            predicates = [m == im and m == t,
                          m == im and m != t,
                          m == t and m != im,
                          m != im and m != t]
            assert sum(predicates) == 1
            assert predicates[case.index]


class TestMakePseudoLabel:
    def test_case1_mean_of_three(self):
        cases = [ConsensusCase.CASE1]
        out = make_pseudo_label(cases, P([.7, .3]), P([.6, .4]), P([.8, .2]))
        assert torch.allclose(out, P([.7, .3]))

    def test_case2t_mean_of_m_and_t(self):
        cases = [ConsensusCase.CASE2T]
        out = make_pseudo_label(cases, P([.6, .4]), P([.1, .9]), P([.8, .2]))
        assert torch.allclose(out, P([.7, .3]))

    def test_case2i_mean_of_m_and_i(self):
        cases = [ConsensusCase.CASE2I]
        out = make_pseudo_label(cases, P([.6, .4]), P([.8, .2]), P([.1, .9]))
        assert torch.allclose(out, P([.7, .3]))

    def test_case3_returns_multimodal_verbatim(self):
        cases = [ConsensusCase.CASE3]
        p_m = P([.5, .3, .2])
        out = make_pseudo_label(cases, p_m, P([.1, .8, .1]), P([.1, .1, .8]))
        assert torch.equal(out[0], p_m[0])

    def test_consensus_argmax_preserved(self):
        rng = np.random.default_rng(1)
        probs = [torch.tensor(rng.dirichlet(np.ones(5), size=2000))
                 for _ in range(3)]
        cases = determine_case(*probs)
        pl = make_pseudo_label(cases, *probs)
        a_m = probs[0].argmax(dim=1)
        for i, case in enumerate(cases):
            if case in (ConsensusCase.CASE1, ConsensusCase.CASE2I,
                        ConsensusCase.CASE2T):
                assert int(pl[i].argmax()) == int(a_m[i])


class TestSelectUpdateTargets:
    def test_case_masks(self):
        rng = np.random.default_rng(0)
        masks = select_update_targets(
            [ConsensusCase.CASE1, ConsensusCase.CASE2I, ConsensusCase.CASE2T],
            rng)
        assert masks[0] == {"m", "i", "t"}
        assert masks[1] == {"t"}
        assert masks[2] == {"i"}

    def test_case3_random_choice_balanced(self):
        rng = np.random.default_rng(123)
        masks = select_update_targets([ConsensusCase.CASE3] * 10_000, rng)
        assert all(m in ({"i"}, {"t"}) for m in masks)
        i_frac = sum(1 for m in masks if m == {"i"}) / len(masks)
        assert 0.47 <= i_frac <= 0.53

    def test_case3_deterministic_for_seed(self):
        a = select_update_targets([ConsensusCase.CASE3] * 50,
                                  np.random.default_rng(7))
        b = select_update_targets([ConsensusCase.CASE3] * 50,
                                  np.random.default_rng(7))
        assert a == b


class TestUnlabeledLoss:
    def test_below_threshold_contributes_zero(self):
        p = P([.85, .15])
        masks = [frozenset({"m", "i", "t"})]
        loss = unlabeled_loss(p, p, p, p, P([.85, .15]), masks, tau=0.9)
        assert float(loss) == 0.0

    def test_case2i_contribution_is_tabular_ce_only(self):
        p_m, p_i, p_t = P([.9, .1]), P([.8, .2]), P([.3, .7])
        target = P([.85, .15])
        masks = [frozenset({"t"})]
        loss = unlabeled_loss(p_m, p_i, p_t, target, P([.95, .05]), masks,
                              tau=0.9)
        expected = float(cross_entropy(p_t[0], target[0]))
        assert float(loss) == pytest.approx(expected, rel=1e-9)

    def test_one_hot_match_contributes_zero(self):
        p = P([1.0, 0.0])
        loss = unlabeled_loss(p, p, p, p, p, [frozenset({"m", "i", "t"})],
                              tau=0.5)
        assert float(loss) == pytest.approx(0.0, abs=1e-9)

    def test_gate_tau_above_one_zeroes_loss(self):
        rng = np.random.default_rng(3)
        probs = [torch.tensor(rng.dirichlet(np.ones(3), size=16))
                 for _ in range(5)]
        masks = [frozenset({"m", "i", "t"})] * 16
        loss = unlabeled_loss(probs[0], probs[1], probs[2], probs[3],
                              probs[4], masks, tau=1.0 + 1e-9)
        assert float(loss) == 0.0

    def test_averaged_over_full_batch(self):
        # one confident sample out of two: denominator is still 2
        p_m = P([.9, .1], [.5, .5])
        target = P([1.0, 0.0], [.5, .5])
        target_m = P([.95, .05], [.5, .5])
        masks = [frozenset({"m"}), frozenset({"m"})]
        loss = unlabeled_loss(p_m, p_m, p_m, target, target_m, masks, tau=0.9)
        expected = float(cross_entropy(p_m[0], target[0])) / 2
        assert float(loss) == pytest.approx(expected, rel=1e-9)

    def test_gradient_isolation_case2i(self):
        # CASE2I mask {t}: no gradient reaches the m/i predictions
        logits = torch.randn(3, 1, 4, dtype=torch.double, requires_grad=True)
        p_m, p_i, p_t = (torch.softmax(logits[k], dim=-1) for k in range(3))
        target = torch.softmax(torch.randn(1, 4, dtype=torch.double), dim=-1)
        masks = [frozenset({"t"})]
        loss = unlabeled_loss(p_m, p_i, p_t, target, target, masks, tau=0.0)
        loss.backward()
        grad = logits.grad
        assert torch.allclose(grad[0], torch.zeros_like(grad[0]), atol=1e-12)
        assert torch.allclose(grad[1], torch.zeros_like(grad[1]), atol=1e-12)
        assert grad[2].abs().max() > 0
