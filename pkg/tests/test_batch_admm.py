import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from modules.baseline.backprop import BaselineConfig, sgd_adam_baseline_train
from modules.block_admm.batch import (
    BatchAdmmConfig,
    CouplingState,
    augmented_objective,
    batch_admm_train,
    coupling_penalty,
    coupling_residuals,
    init_coupling,
    minibatches,
    update_duals,
    update_theta_minibatch,
    update_z_inner,
    update_z_terminal,
)
from modules.blocks.block import Block, block_forward
from modules.blocks.layers import Linear, build_mlp
from modules.data.synth import SynthSpec, synth_gen, train_test_split
from modules.tensor.ops import Rng, finite_diff_grad

TOY_CONFIG = dict(
    beta=1.0,
    z_lr=0.5,
    theta_lr=0.1,
    primal_steps=10,
    batch_size=32,
    z_optimizer="sgd",
    theta_optimizer="sgd",
    epochs=200,
)


class TestCouplingPenalty:
    def test_gradients_match_finite_differences(self, make_blocks):
        block = make_blocks([3, 5, 4], seed=1, bias=True)[1]
        gen = np.random.default_rng(2)
        Z_prev = gen.normal(size=(5, 6)) + 2.0
        Z_t = gen.normal(size=(4, 6))
        U_t = gen.normal(size=(4, 6))
        penalty = coupling_penalty(Z_t, Z_prev, U_t, block, beta=1.7, scale=0.5)

        def value(z=Z_t, prev=Z_prev):
            return coupling_penalty(z, prev, U_t, block, 1.7, 0.5).value

        assert_allclose(penalty.grad_z, finite_diff_grad(lambda z: value(z=z), Z_t), atol=1e-8)
        assert_allclose(
            penalty.grad_prev,
            finite_diff_grad(lambda p: value(prev=p), Z_prev),
            rtol=1e-5,
            atol=1e-8,
        )

    def test_value(self, identity_chain):
        block = identity_chain(2, 1)[0]
        Z_t = np.array([[3.0], [0.0]])
        penalty = coupling_penalty(Z_t, np.zeros((2, 1)), np.array([[1.0], [0.0]]), block, 2.0)
        # beta/2 * ||(3 + 1)||^2
        assert penalty.value == pytest.approx(16.0)

    def test_single_column_draws_average_to_full_gradient(self, make_blocks):
        block = make_blocks([3, 4, 2], seed=5)[0]
        gen = np.random.default_rng(0)
        n = 6
        Z_prev, Z_t, U_t = gen.normal(size=(3, n)), gen.normal(size=(4, n)), gen.normal(size=(4, n))
        full = coupling_penalty(Z_t, Z_prev, U_t, block, 1.0, scale=1.0 / n).grad_params
        per_column = [
            coupling_penalty(
                Z_t[:, [j]], Z_prev[:, [j]], U_t[:, [j]], block, 1.0
            ).grad_params
            for j in range(n)
        ]
        for k, grad in enumerate(full):
            assert_allclose(np.mean([g[k] for g in per_column], axis=0), grad, atol=1e-10)


class TestUpdates:
    def test_dual_update_is_exact(self, make_blocks, rng):
        blocks = make_blocks([4, 6, 3], seed=3)
        X = np.random.default_rng(1).normal(size=(4, 10))
        state = init_coupling(blocks, X, BatchAdmmConfig(), rng)
        state.Z[0] = state.Z[0] + 0.25
        before = [u.copy() for u in state.U]
        residuals = coupling_residuals(state, blocks)
        update_duals(state, blocks)
        for u_old, u_new, r in zip(before, state.U, residuals):
            assert_allclose(u_new, u_old + r, atol=1e-12)

    def test_forward_init_has_zero_residual(self, make_blocks, rng):
        blocks = make_blocks([4, 6, 3], seed=3)
        X = np.random.default_rng(1).normal(size=(4, 10))
        state = init_coupling(blocks, X, BatchAdmmConfig(), rng)
        for r in coupling_residuals(state, blocks):
            assert_array_equal(r, 0.0)
        assert state.element_count() == 2 * (6 + 3) * 10

    def test_inner_update_refuses_factorized_coupling(self, make_blocks, rng):
        blocks = make_blocks([4, 6, 3], seed=3)
        state = init_coupling(blocks, np.ones((4, 2)), BatchAdmmConfig(), rng)
        state.inputs_override[2] = np.ones((6, 2))
        with pytest.raises(ValueError, match="factorized"):
            update_z_inner(state, blocks, 1, 0.1)

    def test_inner_update_range(self, make_blocks, rng):
        blocks = make_blocks([4, 6, 3], seed=3)
        state = init_coupling(blocks, np.ones((4, 2)), BatchAdmmConfig(), rng)
        with pytest.raises(ValueError):
            update_z_inner(state, blocks, 2, 0.1)

    def test_empty_minibatch(self, make_blocks, rng):
        blocks = make_blocks([4, 3], seed=3)
        state = init_coupling(blocks, np.ones((4, 2)), BatchAdmmConfig(), rng)
        with pytest.raises(ValueError, match="empty"):
            update_theta_minibatch(state, blocks, 1, 0.1, np.array([], dtype=int))

    def test_only_the_updated_block_changes(self, make_blocks, rng):
        blocks = make_blocks([4, 6, 3], seed=3)
        X = np.random.default_rng(4).normal(size=(4, 8))
        state = init_coupling(blocks, X, BatchAdmmConfig(), rng)
        state.Z[1] = state.Z[1] + 1.0
        untouched = blocks[0].layers[0].weight.copy()
        update_theta_minibatch(state, blocks, 2, 0.1, np.arange(8))
        assert_array_equal(blocks[0].layers[0].weight, untouched)


class TestMinibatches:
    def test_shuffled_pass_covers_every_column_once(self, rng):
        batches = minibatches(70, 32, rng)
        assert [b.size for b in batches] == [32, 32, 6]
        assert_array_equal(np.sort(np.concatenate(batches)), np.arange(70))

    def test_draw_count(self, rng):
        batches = minibatches(10, 64, rng, count=3)
        assert len(batches) == 3
        assert all(b.size == 10 and np.unique(b).size == 10 for b in batches)


class TestTraining:
    def test_linear_toy_residual_converges(self, linear_toy):
        blocks, data = linear_toy
        state, records = batch_admm_train(blocks, data, BatchAdmmConfig(**TOY_CONFIG), Rng(0))
        assert len(records) == 200
        assert records[-1].total_coupling_residual < 1e-3
        residual = sum(np.linalg.norm(r) for r in coupling_residuals(state, blocks))
        assert residual == pytest.approx(records[-1].total_coupling_residual)

    def test_same_seed_same_run(self, make_blocks, toy_data):
        config = BatchAdmmConfig(epochs=3, batch_size=8)
        runs = []
        for _ in range(2):
            blocks = make_blocks([4, 8, 4], seed=9)
            state, records = batch_admm_train(blocks, toy_data, config, Rng(11))
            runs.append((blocks[0].layers[0].weight, state.Z[1], records[-1].train_loss))
        assert_array_equal(runs[0][0], runs[1][0])
        assert_array_equal(runs[0][1], runs[1][1])
        assert runs[0][2] == runs[1][2]

    def test_cross_entropy_run_is_finite(self, make_blocks):
        data = synth_gen(SynthSpec("two-moons-like", 2, 40, 2), Rng(3))
        blocks = make_blocks([2, 8, 2], seed=1)
        config = BatchAdmmConfig(loss="ce", epochs=5, batch_size=16, theta_batches=2)
        _, records = batch_admm_train(blocks, data, config, Rng(2))
        assert all(np.isfinite(r.train_loss) for r in records)
        assert 0.0 <= records[-1].test_accuracy <= 1.0

    def test_per_block_list_length_checked(self, make_blocks, toy_data):
        with pytest.raises(ValueError, match="beta"):
            batch_admm_train(
                make_blocks([4, 4, 4]), toy_data, BatchAdmmConfig(beta=[1.0]), Rng(0)
            )

    def test_block_outputs_follow_training(self, linear_toy):
        blocks, data = linear_toy
        config = BatchAdmmConfig(**{**TOY_CONFIG, "epochs": 2})
        state, _ = batch_admm_train(blocks, data, config, Rng(0))
        assert block_forward(blocks[0], data.X)[0].shape == state.Z[0].shape


def _scalar_state(w1, w2, z1, z2, u1, u2, betas):
    blocks = [Block([Linear([[w1]])], index=1), Block([Linear([[w2]])], index=2)]
    state = CouplingState(
        np.array([[1.0]]),
        [np.array([[z1]]), np.array([[z2]])],
        [np.array([[u1]]), np.array([[u2]])],
        list(betas),
        [None, None],
    )
    return blocks, state


class TestZSteps:
    @pytest.mark.parametrize("beta", [0.5, 1.0, 4.0])
    def test_terminal_step_by_hand(self, beta):
        blocks, state = _scalar_state(0.5, 2.0, 0.7, 1.1, 0.1, -0.2, [1.0, beta])
        y, zeta = 3.0, 0.5
        update_z_terminal(state, blocks, np.array([[y]]), "mse", zeta)
        grad = (1.1 - y) + beta * (1.1 - 2.0 * 0.7 - 0.2)
        assert state.Z[1][0, 0] == pytest.approx(1.1 - zeta / (1.0 + beta) * grad, abs=1e-14)

    def test_full_terminal_step_solves_mse_exactly(self):
        blocks, state = _scalar_state(0.5, 2.0, 0.7, 1.1, 0.1, -0.2, [1.0, 3.0])
        update_z_terminal(state, blocks, np.array([[3.0]]), "mse", 1.0)
        # argmin (z - y)^2 / 2 + beta/2 (z - f + u)^2
        expected = (3.0 + 3.0 * (2.0 * 0.7 + 0.2)) / 4.0
        assert state.Z[1][0, 0] == pytest.approx(expected, abs=1e-14)

    @pytest.mark.parametrize(
        "w1, w2, b1, b2",
        [(1.0, 1.0, 1.0, 1.0), (0.5, 2.0, 1.0, 0.5), (-1.5, 0.3, 2.0, 4.0)],
    )
    def test_inner_step_by_hand(self, w1, w2, b1, b2):
        z1, z2, u1, u2, zeta = 0.7, 1.1, 0.1, -0.2, 0.5
        blocks, state = _scalar_state(w1, w2, z1, z2, u1, u2, [b1, b2])
        update_z_inner(state, blocks, 1, zeta)
        grad = b1 * (z1 - w1 + u1) - b2 * w2 * (z2 - w2 * z1 + u2)
        expected = z1 - zeta / (b1 + b2 * w2 * w2) * grad
        assert state.Z[0][0, 0] == pytest.approx(expected, abs=1e-14)

    def test_identity_inner_step_averages_the_neighbours(self):
        blocks, state = _scalar_state(1.0, 1.0, 0.7, 1.1, 0.1, -0.2, [1.0, 1.0])
        update_z_inner(state, blocks, 1, 0.5)
        own = 0.7 - 1.0 + 0.1
        downstream = 1.1 - 0.7 - 0.2
        assert state.Z[0][0, 0] == pytest.approx(0.7 - 0.25 * (own - downstream), abs=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_small_steps_descend_the_augmented_objective(self, make_blocks, seed):
        blocks = make_blocks([3, 5, 4, 2], seed=seed, bias=True)
        gen = np.random.default_rng(seed)
        X, Y = gen.normal(size=(3, 12)), gen.normal(size=(2, 12))
        state = init_coupling(blocks, X, BatchAdmmConfig(), Rng(seed))
        # off the forward init every coupling term has a gradient
        state.Z = [z + 0.1 * gen.normal(size=z.shape) for z in state.Z]

        values = [augmented_objective(state, blocks, Y, "mse")]
        update_z_terminal(state, blocks, Y, "mse", 1e-3)
        values.append(augmented_objective(state, blocks, Y, "mse"))
        for t in (2, 1):
            update_z_inner(state, blocks, t, 1e-3)
            values.append(augmented_objective(state, blocks, Y, "mse"))
        for t in (1, 2, 3):
            update_theta_minibatch(state, blocks, t, 1e-3, np.arange(12), "sgd")
            values.append(augmented_objective(state, blocks, Y, "mse"))

        assert all(after < before for before, after in zip(values, values[1:]))


def _teacher_split():
    data = synth_gen(SynthSpec("linear-teacher", 10, 500, 3, margin=0.5), Rng(4))
    return train_test_split(data, 100, Rng(5))


class TestLearning:
    def test_single_block_follows_the_reference_trace(self):
        data = synth_gen(SynthSpec("linear-teacher", 3, 10, 2), Rng(6))
        W0 = np.random.default_rng(6).normal(size=(2, 3))
        beta, zeta, eta, n = 2.0, 0.5, 0.1, 10
        blocks = [Block([Linear(W0.copy())], index=1)]
        config = BatchAdmmConfig(
            beta=beta,
            z_lr=zeta,
            theta_lr=eta,
            primal_steps=1,
            batch_size=n,
            z_optimizer="sgd",
            theta_optimizer="sgd",
            dual_init="zeros",
            epochs=3,
        )
        state, records = batch_admm_train(blocks, data, config, Rng(0))

        X, Y = data.X, data.Y
        W, U = W0.copy(), np.zeros((2, n))
        Z = W @ X
        losses = []
        for _ in range(3):
            Z = Z - zeta / (1.0 + beta) * ((Z - Y) + beta * (Z - W @ X + U))
            W = W + eta * beta / n * (Z - W @ X + U) @ X.T
            U = U + Z - W @ X
            losses.append(0.5 * np.sum((W @ X - Y) ** 2) / n)

        assert_allclose(blocks[0].layers[0].weight, W, atol=1e-12)
        assert_allclose(state.Z[0], Z, atol=1e-12)
        assert_allclose(state.U[0], U, atol=1e-12)
        assert_allclose([r.train_loss for r in records], losses, atol=1e-12)

    def test_larger_beta_tightens_the_coupling(self, make_blocks, toy_data):
        finals = []
        for beta in (0.1, 1.0, 10.0):
            blocks = make_blocks([4, 4, 4], seed=2, activation="linear")
            config = BatchAdmmConfig(
                beta=beta,
                z_lr=1.0,
                theta_lr=0.01,
                primal_steps=3,
                batch_size=32,
                theta_optimizer="sgd",
                dual_init="zeros",
                epochs=40,
            )
            _, records = batch_admm_train(blocks, toy_data, config, Rng(0))
            finals.append(records[-1].total_coupling_residual)
        assert finals[0] > finals[1] > finals[2]

    def test_default_config_learns_like_backprop(self, make_blocks):
        train, test = _teacher_split()
        sizes = [10, 32, 3]
        _, records = batch_admm_train(
            make_blocks(sizes, seed=0), train, BatchAdmmConfig(epochs=60), Rng(0), test
        )
        _, baseline = sgd_adam_baseline_train(
            build_mlp(sizes, Rng(0)), train, BaselineConfig(epochs=60), Rng(0), test
        )

        residuals = [r.total_coupling_residual for r in records]
        assert records[-1].train_loss < records[0].train_loss
        assert residuals[-1] < 0.5 * max(residuals)
        assert records[-1].test_accuracy >= 0.7
        assert records[-1].test_accuracy >= baseline[-1].test_accuracy - 0.15
