"""Operation-level checks of the tensor engine against independent oracles."""

import numpy as np
import numpy.testing as npt
import pytest

from meshpose import autodiff as ad
from meshpose.gradcheck import REL_TOL, check_scalar_graph, finite_difference, max_rel_error


def rand(rng, *shape):
    return ad.Tensor(rng.uniform(-1.0, 1.0, shape))


class TestPerVertexLinear:
    def test_identity_weight_passes_input_through(self):
        x = rand(np.random.default_rng(0), 3, 7)
        w = ad.Tensor(np.eye(3))
        b = ad.Tensor(np.zeros(3))
        out = ad.per_vertex_linear(x, w, b)
        npt.assert_array_equal(out.data, x.data)

    def test_zero_weight_broadcasts_bias(self):
        x = rand(np.random.default_rng(1), 3, 5)
        w = ad.Tensor(np.zeros((3, 3)))
        b = ad.Tensor(np.array([1.0, 2.0, 3.0]))
        out = ad.per_vertex_linear(x, w, b)
        npt.assert_array_equal(out.data, np.tile([[1.0], [2.0], [3.0]], 5))

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rand(rng, 3, 5)
        w = rand(rng, 4, 3)
        b = rand(rng, 4)
        out = ad.per_vertex_linear(x, w, b)
        expected = np.zeros((4, 5))
        for c in range(4):
            for v in range(5):
                for i in range(3):
                    expected[c, v] += w.data[c, i] * x.data[i, v]
                expected[c, v] += b.data[c]
        npt.assert_allclose(out.data, expected, rtol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        x = rand(np.random.default_rng(0), 3, 5)
        w = rand(np.random.default_rng(0), 4, 2)
        b = ad.Tensor(np.zeros(4))
        with pytest.raises(ad.DimensionError, match=r"\(4, 2\).*\(3, 5\)"):
            ad.per_vertex_linear(x, w, b)


class TestInstanceNorm:
    def test_constant_row_collapses_to_zero(self):
        x = ad.Tensor([[5.0, 5.0, 5.0, 5.0]])
        npt.assert_array_equal(ad.instance_norm(x).data, np.zeros((1, 4)))

    def test_two_point_row_closed_form(self):
        # mean 0, population variance 1: output is +/-1 shrunk by eps
        x = ad.Tensor([[-1.0, 1.0]])
        out = ad.instance_norm(x, eps=1e-5)
        expected = 1.0 / np.sqrt(1.0 + 1e-5)
        npt.assert_allclose(out.data, [[-expected, expected]], rtol=1e-12)

    def test_output_mean_is_zero(self):
        x = rand(np.random.default_rng(3), 4, 50)
        out = ad.instance_norm(x)
        npt.assert_allclose(out.data.mean(axis=1), 0.0, atol=1e-6)

    def test_too_few_vertices(self):
        with pytest.raises(ad.DegenerateStatisticsError):
            ad.instance_norm(ad.Tensor([[1.0]]))


class TestSoftmaxOverKeys:
    def test_equal_scores_are_uniform(self):
        out = ad.softmax_over_keys(ad.Tensor([[2.0, 2.0, 2.0, 2.0]]))
        npt.assert_allclose(out.data, np.full((1, 4), 0.25), rtol=1e-12)

    def test_log_three_hand_case(self):
        out = ad.softmax_over_keys(ad.Tensor([[0.0, np.log(3.0)]]))
        npt.assert_allclose(out.data, [[0.25, 0.75]], rtol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(4)
        s = rng.uniform(-1, 1, (3, 6))
        a = ad.softmax_over_keys(ad.Tensor(s)).data
        b = ad.softmax_over_keys(ad.Tensor(s + 17.25)).data
        npt.assert_allclose(a, b, atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        out = ad.softmax_over_keys(rand(rng, 20, 30))
        npt.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-9)

    def test_non_finite_input(self):
        with pytest.raises(ad.NumericError):
            ad.softmax_over_keys(ad.Tensor([[np.nan, 1.0]]))


class TestBatchedMatmul:
    def test_identity_right_factor(self):
        a = rand(np.random.default_rng(6), 3, 4)
        out = ad.batched_matmul(a, ad.Tensor(np.eye(4)))
        npt.assert_array_equal(out.data, a.data)

    def test_two_by_two_hand_case(self):
        a = ad.Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = ad.Tensor([[5.0, 6.0], [7.0, 8.0]])
        npt.assert_array_equal(
            ad.batched_matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]]
        )

    def test_gradient_of_sum_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        a, b = rand(rng, 3, 4), rand(rng, 4, 2)
        tape = ad.Tape()
        with tape:
            loss = ad.sum_all(ad.batched_matmul(a, b))
        ad.backward(loss)
        (fd,) = finite_difference(
            lambda: ad.batched_matmul(a, b).data.sum(), [a]
        )
        assert max_rel_error(a.grad, fd) < REL_TOL

    def test_inner_dim_mismatch(self):
        with pytest.raises(ad.DimensionError):
            ad.batched_matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))


class TestActivation:
    def test_relu_values(self):
        out = ad.activation(ad.Tensor([-2.0, 0.0, 3.0]), "relu")
        npt.assert_array_equal(out.data, [0.0, 0.0, 3.0])

    def test_tanh_at_zero(self):
        assert ad.activation(ad.Tensor([0.0]), "tanh").data[0] == 0.0

    def test_tanh_gradient_at_zero_is_one(self):
        x = ad.Tensor([0.0])
        tape = ad.Tape()
        with tape:
            loss = ad.sum_all(ad.activation(x, "tanh"))
        ad.backward(loss)
        (fd,) = finite_difference(
            lambda: ad.activation(x, "tanh").data.sum(), [x]
        )
        npt.assert_allclose(x.grad, [1.0], atol=1e-12)
        npt.assert_allclose(x.grad, fd, atol=1e-6)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ad.activation(ad.Tensor([1.0]), "gelu")


class TestScaleAndAdd:
    def test_zero_gate_returns_residual_bits(self):
        rng = np.random.default_rng(8)
        att, res = rand(rng, 3, 4), rand(rng, 3, 4)
        out = ad.scale_and_add(att, ad.Tensor(np.zeros(())), res)
        assert (out.data == res.data).all()

    def test_unit_gate_zero_residual(self):
        att = rand(np.random.default_rng(9), 3, 4)
        res = ad.Tensor(np.zeros((3, 4)))
        out = ad.scale_and_add(att, ad.Tensor(np.ones(())), res)
        npt.assert_array_equal(out.data, att.data)

    def test_gate_gradient_is_attention_output(self):
        rng = np.random.default_rng(10)
        att, res = rand(rng, 3, 4), rand(rng, 3, 4)
        gamma = ad.Tensor(np.asarray(0.37))
        tape = ad.Tape()
        with tape:
            loss = ad.sum_all(ad.scale_and_add(att, gamma, res))
        ad.backward(loss)
        npt.assert_allclose(gamma.grad, att.data.sum(), rtol=1e-12)
        (fd,) = finite_difference(
            lambda: float(
                (float(gamma.data) * att.data + res.data).sum()
            ),
            [gamma],
        )
        assert max_rel_error(gamma.grad, fd) < REL_TOL

    def test_shape_mismatch(self):
        with pytest.raises(ad.DimensionError):
            ad.scale_and_add(
                ad.Tensor(np.ones((2, 2))), ad.Tensor(np.zeros(())), ad.Tensor(np.ones((2, 3)))
            )


class TestMaxOverVertices:
    def test_identity_when_target_equals_input(self):
        x = rand(np.random.default_rng(11), 3, 6)
        npt.assert_array_equal(ad.max_over_vertices(x, 6).data, x.data)

    def test_window_hand_case(self):
        x = ad.Tensor([[1.0, 5.0, 2.0, 4.0]])
        npt.assert_array_equal(ad.max_over_vertices(x, 2).data, [[5.0, 4.0]])

    def test_gradient_flows_only_to_winners(self):
        x = ad.Tensor([[1.0, 5.0, 2.0, 4.0]])
        tape = ad.Tape()
        with tape:
            loss = ad.sum_all(ad.max_over_vertices(x, 2))
        ad.backward(loss)
        npt.assert_array_equal(x.grad, [[0.0, 1.0, 0.0, 1.0]])
        (fd,) = finite_difference(
            lambda: ad.max_over_vertices(x, 2).data.sum(), [x]
        )
        npt.assert_allclose(x.grad, fd, atol=1e-9)

    def test_cannot_grow_vertex_axis(self):
        with pytest.raises(ad.DimensionError):
            ad.max_over_vertices(ad.Tensor(np.ones((2, 3))), 4)


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = rand(np.random.default_rng(12), 4, 3)
        tape = ad.Tape()
        with tape:
            loss = ad.sum_all(x)
        ad.backward(loss)
        npt.assert_array_equal(x.grad, np.ones((4, 3)))

    def test_square_sum_gradient_is_two_x(self):
        x = rand(np.random.default_rng(13), 4, 3)
        tape = ad.Tape()
        with tape:
            loss = ad.sum_all(ad.multiply(x, x))
        ad.backward(loss)
        npt.assert_allclose(x.grad, 2.0 * x.data, rtol=1e-12)

    def test_composite_graph_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        x = rand(rng, 3, 6)
        w = rand(rng, 4, 3)
        b = rand(rng, 4)

        def build():
            h = ad.per_vertex_linear(x, w, b)
            h = ad.activation(ad.instance_norm(h), "tanh")
            return ad.sum_all(ad.multiply(h, h))

        assert check_scalar_graph(build, [x, w, b]) < REL_TOL

    def test_non_scalar_loss_rejected(self):
        x = rand(np.random.default_rng(15), 2, 2)
        tape = ad.Tape()
        with tape:
            y = ad.multiply(x, x)
        with pytest.raises(ad.DimensionError):
            ad.backward(y)

    def test_repeated_backward_accumulates(self):
        x = rand(np.random.default_rng(16), 3)
        tape = ad.Tape()
        with tape:
            loss = ad.sum_all(x)
        ad.backward(loss)
        ad.backward(loss)
        npt.assert_array_equal(x.grad, 2.0 * np.ones(3))

    def test_unrecorded_loss_rejected(self):
        with pytest.raises(ValueError):
            ad.backward(ad.Tensor(1.0))


class TestTape:
    def test_parents_precede_children(self):
        rng = np.random.default_rng(17)
        x = rand(rng, 2, 3)
        tape = ad.Tape()
        with tape:
            y = ad.multiply(x, x)
            z = ad.sum_all(y)
        for node in tape.nodes:
            for parent in node.parents:
                if parent._tape is tape:
                    assert parent.graph_id < node.out.graph_id

    def test_frozen_tape_stops_recording(self):
        x = rand(np.random.default_rng(18), 2, 2)
        tape = ad.Tape()
        with tape:
            y = ad.multiply(x, x)
            tape.freeze()
            z = ad.multiply(y, y)
        assert y.graph_id is not None
        assert z.graph_id is None

    def test_forward_identical_with_and_without_recording(self):
        rng = np.random.default_rng(19)
        x = rand(rng, 4, 6)
        w = rand(rng, 4, 4)
        b = rand(rng, 4)

        def run():
            h = ad.per_vertex_linear(x, w, b)
            h = ad.instance_norm(h)
            h = ad.softmax_over_keys(h)
            return ad.sum_all(h).item()

        plain = run()
        tape = ad.Tape()
        with tape:
            recorded = run()
        assert plain == recorded

    def test_replay_is_bit_identical(self):
        def run(seed):
            rng = np.random.default_rng(seed)
            x = rand(rng, 5, 7)
            w = rand(rng, 5, 5)
            b = rand(rng, 5)
            tape = ad.Tape()
            with tape:
                h = ad.activation(ad.per_vertex_linear(x, w, b), "relu")
                loss = ad.sum_all(ad.multiply(h, h))
            ad.backward(loss)
            return loss.item(), x.grad.copy(), w.grad.copy()

        first = run(20)
        second = run(20)
        assert first[0] == second[0]
        npt.assert_array_equal(first[1], second[1])
        npt.assert_array_equal(first[2], second[2])
