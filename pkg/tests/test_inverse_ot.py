import math

import numpy as np
import pytest
import torch

from otalign.affinity import AffinityBundle, assemble_affinity, build_extractor
from otalign.core import AlignmentLabels, TrainConfig, uniform_problem
from otalign.data import SyntheticConfig, generate_synthetic_corpus
from otalign.inverse_ot import (
    Stage1Losses,
    grad_alignment_wrt_cost,
    loss_alignment,
    loss_rationale,
    train_extractor,
    type_agreement_mask,
)
from otalign.sinkhorn import NonConvergence, solve_entropic_ot


def tensor(data):
    return torch.as_tensor(np.asarray(data, dtype=np.float64))


def solved_bundle(cost, gamma):
    """Solve the OT problem for a given cost and wrap the cost as the
    affinity bundle the alignment loss consumes (epsilon folded to 0)."""
    cost = np.asarray(cost, dtype=np.float64)
    plan = solve_entropic_ot(uniform_problem(cost, gamma))
    c_total = tensor(cost)
    bundle = assemble_affinity(torch.zeros_like(c_total), c_total, epsilon=0.0)
    return plan, bundle


def labels_from_positives(shape, positives):
    values = np.zeros(shape, dtype=np.int8)
    for m, n in positives:
        values[m, n] = 1
    return AlignmentLabels(values=values, observed=values.copy())


class TestLossRationale:
    def test_perfect_predictions_cost_nothing(self):
        logits = tensor([[50.0, 0.0, 0.0, 0.0], [0.0, 50.0, 0.0, 0.0]])
        loss = loss_rationale(logits, logits, np.array([0, 1]), np.array([0, 1]))
        assert float(loss) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_logits_cost_log_num_classes(self):
        logits = torch.zeros((3, 4), dtype=torch.float64)
        loss = loss_rationale(logits, logits, np.array([0, 1, 2]), np.array([3, 3, 3]))
        assert float(loss) == pytest.approx(math.log(4.0), abs=1e-12)

    def test_hand_built_probabilities(self):
        """Probability 0.7 on the correct class costs -log 0.7 per sentence."""
        probs = np.array([[0.7, 0.1, 0.1, 0.1], [0.1, 0.7, 0.1, 0.1]])
        logits = tensor(np.log(probs))
        loss = loss_rationale(logits, logits, np.array([0, 1]), np.array([0, 1]))
        assert float(loss) == pytest.approx(-math.log(0.7), abs=1e-12)
        assert float(loss) == pytest.approx(0.3567, abs=1e-4)

    def test_mean_over_both_cases(self):
        logits_x = tensor([[0.0, 0.0, 0.0, 0.0]])
        logits_y = tensor([np.log([0.7, 0.1, 0.1, 0.1])])
        loss = loss_rationale(logits_x, logits_y, np.array([0]), np.array([0]))
        expected = (math.log(4.0) - math.log(0.7)) / 2.0
        assert float(loss) == pytest.approx(expected, abs=1e-12)

    def test_missing_labels_rejected(self):
        logits = torch.zeros((1, 4), dtype=torch.float64)
        with pytest.raises(ValueError):
            loss_rationale(logits, logits, None, np.array([0]))


class TestLossAlignment:
    def test_near_permutation_plan_costs_log_m(self):
        """A cost that forces the diagonal gives diagonal mass 1/M, so each
        positive contributes -log(1/M) = log M."""
        m = 4
        cost = np.full((m, m), 40.0)
        np.fill_diagonal(cost, 0.0)
        plan, bundle = solved_bundle(cost, gamma=1.0)
        labels = labels_from_positives((m, m), [(i, i) for i in range(m)])
        r_hat = np.zeros(m, dtype=np.int64)
        loss = loss_alignment(plan, labels, bundle, r_hat, r_hat, gamma2=0.0)
        assert float(loss) == pytest.approx(math.log(m), abs=1e-9)

    def test_two_by_two_closed_form(self):
        """Symmetric 2x2 cost at gamma=1: diagonal mass 0.5/(1+e^-1), so a
        single positive there costs log(2(1+e^-1)) ~ 1.0066."""
        plan, bundle = solved_bundle([[0.0, 1.0], [1.0, 0.0]], gamma=1.0)
        labels = labels_from_positives((2, 2), [(0, 0)])
        r_hat = np.zeros(2, dtype=np.int64)
        loss = float(loss_alignment(plan, labels, bundle, r_hat, r_hat, gamma2=0.0))
        assert loss == pytest.approx(math.log(2.0 * (1.0 + math.exp(-1.0))), abs=1e-9)
        assert loss == pytest.approx(1.0066, abs=1e-3)

    def test_no_observations_and_zero_gamma2_is_zero(self):
        plan, bundle = solved_bundle(np.zeros((2, 3)), gamma=1.0)
        r_hat_x = np.array([1, 2])
        r_hat_y = np.array([1, 0, 1])
        for labels in (None, labels_from_positives((2, 3), [])):
            loss = loss_alignment(plan, labels, bundle, r_hat_x, r_hat_y, gamma2=0.0)
            assert float(loss) == 0.0

    def test_unsupervised_term_sums_cost_on_type_agreements(self):
        cost = np.arange(6.0).reshape(2, 3)
        plan, bundle = solved_bundle(cost, gamma=1.0)
        r_hat_x = np.array([1, 2])
        r_hat_y = np.array([1, 0, 1])
        loss = loss_alignment(plan, None, bundle, r_hat_x, r_hat_y, gamma2=0.25)
        # agreements at (0,0) and (0,2): costs 0 and 2
        assert float(loss) == pytest.approx(0.25 * (cost[0, 0] + cost[0, 2]), abs=1e-12)

    def test_type_agreement_mask_ignores_class_zero(self):
        mask = type_agreement_mask(np.array([0, 1, 3]), np.array([0, 3]))
        np.testing.assert_array_equal(mask, [[0, 0], [0, 0], [0, 1]])

    def test_shape_mismatch_rejected(self):
        plan, _ = solved_bundle(np.zeros((2, 2)), gamma=1.0)
        _, bundle = solved_bundle(np.zeros((2, 3)), gamma=1.0)
        with pytest.raises(ValueError):
            loss_alignment(plan, None, bundle, np.zeros(2), np.zeros(3), gamma2=0.0)


class TestGradAlignment:
    def test_single_positive_unit_gradient(self):
        plan, _ = solved_bundle([[0.0, 1.0], [1.0, 0.0]], gamma=1.0)
        labels = labels_from_positives((2, 2), [(0, 0)])
        grad = grad_alignment_wrt_cost(plan, labels, 1.0, 0.0, np.zeros(2), np.zeros(2))
        np.testing.assert_array_equal(grad, [[1.0, 0.0], [0.0, 0.0]])

    def test_inverse_gamma_scaling(self):
        plan, _ = solved_bundle([[0.0, 1.0], [1.0, 0.0]], gamma=0.5)
        labels = labels_from_positives((2, 2), [(0, 0)])
        grad = grad_alignment_wrt_cost(plan, labels, 0.5, 0.0, np.zeros(2), np.zeros(2))
        np.testing.assert_array_equal(grad, [[2.0, 0.0], [0.0, 0.0]])

    def test_autograd_through_loss_matches_closed_form(self):
        """loss_alignment's torch graph and the closed-form rule are two
        implementations of the same derivative and must agree exactly."""
        rng = np.random.default_rng(3)
        cost = rng.uniform(0.0, 3.0, size=(4, 5))
        plan = solve_entropic_ot(uniform_problem(cost, 0.7))
        c_total = tensor(cost).requires_grad_(True)
        bundle = AffinityBundle(
            c_semantic=c_total,
            c_rationale=torch.zeros_like(c_total),
            mask=None,
            epsilon=0.0,
            c_total=c_total,
        )
        labels = labels_from_positives((4, 5), [(0, 1), (2, 2), (3, 0)])
        r_hat_x = np.array([1, 0, 2, 1])
        r_hat_y = np.array([2, 1, 2, 0, 1])
        loss = loss_alignment(plan, labels, bundle, r_hat_x, r_hat_y, gamma2=0.3)
        loss.backward()
        closed_form = grad_alignment_wrt_cost(plan, labels, 0.7, 0.3, r_hat_x, r_hat_y)
        np.testing.assert_allclose(c_total.grad.numpy(), closed_form, atol=1e-12)

    def test_matches_frozen_potentials_finite_differences(self):
        """Central differences of the loss with the potentials pinned at
        their converged values — the function whose exact derivative the
        closed form is."""
        rng = np.random.default_rng(4)
        cost = rng.uniform(0.0, 3.0, size=(4, 5))
        gamma = 0.7
        plan = solve_entropic_ot(uniform_problem(cost, gamma))
        labels = labels_from_positives((4, 5), [(0, 1), (2, 2)])
        positive = labels.positive_mask().astype(np.float64)
        count = positive.sum()

        def frozen_loss(c):
            log_plan = plan.log_u[:, None] - c / gamma + plan.log_v[None, :]
            return -(positive * log_plan).sum() / count

        step = 1e-6
        numeric = np.zeros_like(cost)
        for m in range(4):
            for n in range(5):
                up, down = cost.copy(), cost.copy()
                up[m, n] += step
                down[m, n] -= step
                numeric[m, n] = (frozen_loss(up) - frozen_loss(down)) / (2 * step)
        closed_form = grad_alignment_wrt_cost(
            plan, labels, gamma, 0.0, np.zeros(4), np.zeros(5)
        )
        np.testing.assert_allclose(closed_form, numeric, atol=1e-8)

    @pytest.mark.xfail(
        strict=True,
        reason=(
            "The fixed-potentials rule is not the total derivative of the loss "
            "through a re-solved plan: re-solving moves the potentials, whose "
            "cost-sensitivity is the same order (1/gamma) as the direct term. "
            "Measured relative error is ~0.8 on random 4x5 instances (and 7.4x "
            "on the symmetric 2x2, where the total derivative at the positive "
            "entry is 0.5 - a_00 ~ 0.1345 against the rule's 1.0), far outside "
            "the 1e-3 documented target, which is therefore unattainable."
        ),
    )
    def test_resolve_finite_differences_disagree(self):
        rng = np.random.default_rng(5)
        cost = rng.uniform(0.0, 3.0, size=(4, 5))
        gamma = 0.5
        labels = labels_from_positives((4, 5), [(0, 1), (2, 2), (3, 0)])
        positive = labels.positive_mask().astype(np.float64)
        count = positive.sum()

        def resolved_loss(c):
            new_plan = solve_entropic_ot(uniform_problem(c, gamma), tol=1e-12)
            return -(positive * np.log(new_plan.plan)).sum() / count

        step = 1e-5
        numeric = np.zeros_like(cost)
        for m in range(4):
            for n in range(5):
                up, down = cost.copy(), cost.copy()
                up[m, n] += step
                down[m, n] -= step
                numeric[m, n] = (resolved_loss(up) - resolved_loss(down)) / (2 * step)
        plan = solve_entropic_ot(uniform_problem(cost, gamma), tol=1e-12)
        closed_form = grad_alignment_wrt_cost(
            plan, labels, gamma, 0.0, np.zeros(4), np.zeros(5)
        )
        relative = np.linalg.norm(closed_form - numeric) / np.linalg.norm(numeric)
        assert relative <= 1e-3


def tiny_corpus(pairs=12, seed=0):
    return generate_synthetic_corpus(
        SyntheticConfig(
            pairs=pairs,
            d=8,
            sentence_range=(8, 10),
            max_aligned=6,
            match_thresholds=(2, 4),
            seed=seed,
        )
    )


def tiny_train_config(**kwargs):
    base = dict(
        d=8,
        h=16,
        conv_layers=2,
        dilations=(1, 2),
        scorer_hidden=8,
        gamma=0.5,
        gamma1=1.0,
        gamma2=0.05,
        epsilon=-1.0,
        epochs=2,
        n1=6,
        eta1=1e-3,
        seed=0,
    )
    base.update(kwargs)
    return TrainConfig(**base)


class TestTrainExtractor:
    def test_zero_learning_rate_leaves_params_bit_identical(self):
        config = tiny_train_config(eta1=0.0, epochs=1)
        reference = build_extractor(config)
        trained, _ = train_extractor(tiny_corpus(pairs=4), config)
        for p_ref, p_new in zip(reference.parameters(), trained.parameters()):
            assert torch.equal(p_ref, p_new)

    def test_seeded_runs_reproduce_traces_exactly(self):
        config = tiny_train_config()
        corpus = tiny_corpus(pairs=6)
        _, trace_a = train_extractor(corpus, config)
        _, trace_b = train_extractor(corpus, config)
        assert trace_a == trace_b

    def test_gamma1_zero_keeps_projection_untouched(self):
        """Without the alignment loss the semantic projection receives no
        gradient, so Adam leaves it exactly at its initialization."""
        config = tiny_train_config(gamma1=0.0, epochs=1)
        reference = build_extractor(config)
        trained, _ = train_extractor(tiny_corpus(pairs=4), config)
        assert torch.equal(trained.proj1.weight, reference.proj1.weight)
        assert torch.equal(trained.proj2.weight, reference.proj2.weight)
        assert not torch.equal(trained.head.weight, reference.head.weight)

    def test_loss_decreases_on_planted_data(self):
        config = tiny_train_config(epochs=6, eta1=5e-3)
        _, trace = train_extractor(tiny_corpus(pairs=12), config)
        assert trace[-1].total < trace[0].total

    def test_trace_totals_decompose(self):
        _, trace = train_extractor(tiny_corpus(pairs=4), tiny_train_config(epochs=1))
        for entry in trace:
            assert entry.total == pytest.approx(
                entry.l_rationale + 1.0 * entry.l_alignment, abs=1e-12
            )

    def test_nonconvergence_carries_pair_id(self):
        config = tiny_train_config(sinkhorn_max_iter=1, gamma=0.01)
        with pytest.raises(NonConvergence) as excinfo:
            train_extractor(tiny_corpus(pairs=3), config)
        assert str(excinfo.value.pair_id).startswith("pair-")

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_extractor([], tiny_train_config())

    def test_losses_must_be_finite(self):
        with pytest.raises(ValueError):
            Stage1Losses(l_rationale=float("nan"), l_alignment=0.0, total=0.0)
