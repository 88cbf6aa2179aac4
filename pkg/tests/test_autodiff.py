import math

import numpy as np
import pytest

from lorapair import autodiff as ad
from lorapair.autodiff import Tape, Tensor
from lorapair.errors import ContractError, ShapeError, ValidationError

from gradnets import check_net, random_net, rel_error


def leaf(values, shape=None):
    return Tensor(values, shape, requires_grad=True)


class TestTensor:
    def test_values_match_shape(self):
        t = Tensor([1, 2, 3, 4, 5, 6], shape=(2, 3))
        assert t.shape == (2, 3)
        assert t.values.tolist() == [1, 2, 3, 4, 5, 6]

    def test_wrong_length_for_shape(self):
        with pytest.raises(ValueError):
            Tensor([1, 2, 3], shape=(2, 2))

    def test_empty_dimension_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((0, 3)))

    def test_item_needs_one_element(self):
        assert Tensor([2.5]).item() == 2.5
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()


class TestOps:
    def test_matmul_identity(self):
        x = Tensor([[1, 2], [3, 4]])
        assert ad.matmul(x, Tensor(np.eye(2))).data.tolist() == [[1, 2], [3, 4]]

    def test_matmul_hand_value(self):
        assert ad.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11]]

    def test_matmul_zero_annihilates(self):
        rng = np.random.default_rng(0)
        out = ad.matmul(Tensor(np.zeros((2, 3))), Tensor(rng.normal(size=(3, 4))))
        assert np.array_equal(out.data, np.zeros((2, 4)))

    def test_matmul_shape_error_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_elementwise_examples(self):
        assert ad.add(Tensor([1, 2]), Tensor([0, 0])).data.tolist() == [1, 2]
        assert ad.relu(Tensor([-1, 0, 2])).data.tolist() == [0, 0, 2]
        assert ad.mul(Tensor([2, 3]), Tensor([4, 5])).data.tolist() == [8, 15]
        assert ad.elementwise("mul", Tensor([2, 3]), Tensor([4, 5])).data.tolist() == [8, 15]

    def test_no_broadcasting(self):
        with pytest.raises(ShapeError):
            ad.add(Tensor(np.ones((2, 2))), Tensor(np.ones(2)))

    def test_softmax_examples(self):
        s = ad.softmax_rows(Tensor([[0.0, 0.0], [1000.0, 1000.0], [0.0, math.log(3)]])).data
        assert np.allclose(s, [[0.5, 0.5], [0.5, 0.5], [0.25, 0.75]], atol=1e-12)
        assert np.all(np.isfinite(s))

    @pytest.mark.parametrize("seed", range(20))
    def test_softmax_rows_are_distributions(self, seed):
        x = np.random.default_rng(seed).normal(scale=50, size=(5, 7))
        s = ad.softmax_rows(Tensor(x)).data
        assert np.all((s >= 0) & (s <= 1))
        assert np.allclose(s.sum(axis=1), 1.0, atol=1e-9)

    def test_cross_entropy_examples(self):
        confident = ad.cross_entropy_loss(Tensor([[-10.0, 10.0], [10.0, -10.0]]), [1, 0])
        assert confident.item() < 0.01
        uniform = ad.cross_entropy_loss(Tensor(np.zeros((3, 2))), [1, 0, 1])
        assert uniform.item() == pytest.approx(math.log(2), abs=1e-12)

    def test_cross_entropy_errors(self):
        with pytest.raises(ValidationError):
            ad.cross_entropy_loss(Tensor(np.zeros((2, 2))), [0, 1, 1])
        with pytest.raises(ValidationError):
            ad.cross_entropy_loss(Tensor(np.zeros((2, 2))), [0, 2])

    def test_matmul_associative(self):
        rng = np.random.default_rng(7)
        a, b, c = (Tensor(rng.normal(size=(8, 8))) for _ in range(3))
        left = ad.matmul(ad.matmul(a, b), c).data
        right = ad.matmul(a, ad.matmul(b, c)).data
        assert np.max(np.abs(left - right)) < 1e-9


class TestBackward:
    def test_linear_map_gradient(self):
        x = np.array([1.0, -2.0, 3.0])
        w = leaf([0.5, 0.5, 0.5])
        with Tape() as tape:
            loss = ad.sum_all(ad.mul(w, Tensor(x)))
        ad.backward(loss, tape)
        assert np.array_equal(w.grad, x)

    def test_unreachable_parameter_gets_zero(self):
        w, u = leaf([1.0, 2.0]), leaf([3.0])
        with Tape() as tape:
            loss = ad.sum_all(ad.mul(u, u))
        grads = ad.backward(loss, tape, wrt=[w, u])
        assert np.array_equal(grads[w], np.zeros(2))
        assert grads[u].tolist() == [6.0]

    def test_non_scalar_loss(self):
        w = leaf([1.0, 2.0])
        with Tape() as tape:
            y = ad.scale(w, 2.0)
        with pytest.raises(ContractError):
            ad.backward(y, tape)

    def test_loss_from_another_tape(self):
        w = leaf([1.0])
        with Tape():
            loss = ad.sum_all(w)
        with pytest.raises(ContractError):
            ad.backward(loss, Tape())

    def test_replay_is_bitwise_identical(self):
        params, loss_fn = random_net(3)
        with Tape() as tape:
            loss = loss_fn(params)
        first = {id(k): v.copy() for k, v in ad.backward(loss, tape).items()}
        second = {id(k): v for k, v in ad.backward(loss, tape).items()}
        assert first.keys() == second.keys()
        assert all(np.array_equal(first[k], second[k]) for k in first)

    def test_no_tape_no_recording(self):
        w = leaf([1.0])
        y = ad.scale(w, 3.0)
        assert y.node_id is None


class TestFiniteDifferences:
    def test_square(self):
        g = ad.finite_diff_grad(lambda t: ad.sum_all(ad.mul(t, t)), Tensor([3.0]))
        assert g.item() == pytest.approx(6.0, abs=1e-4)

    def test_constant(self):
        g = ad.finite_diff_grad(lambda t: 4.0, Tensor([1.0, 2.0]))
        assert np.allclose(g.data, 0.0, atol=1e-9)

    def test_sum(self):
        x = Tensor(np.random.default_rng(1).normal(size=(3, 2)))
        g = ad.finite_diff_grad(ad.sum_all, x)
        assert np.allclose(g.data, 1.0, atol=1e-6)

    def test_step_must_be_positive(self):
        with pytest.raises(ValidationError):
            ad.finite_diff_grad(ad.sum_all, Tensor([1.0]), h=0.0)


@pytest.mark.parametrize("op", ["tanh", "relu", "softmax", "layer_norm", "transpose", "reshape", "concat", "gather", "mean"])
def test_single_op_gradients(op):
    rng = np.random.default_rng(11)
    x0 = rng.normal(size=(3, 4)) + 0.05  # keeps relu inputs away from its kink
    w = Tensor(rng.normal(size=(3, 4)))

    def f(t):
        if op == "tanh":
            y = ad.tanh(t)
        elif op == "relu":
            y = ad.relu(t)
        elif op == "softmax":
            y = ad.softmax_rows(t)
        elif op == "layer_norm":
            y = ad.layer_norm(t, Tensor(np.full(4, 1.3)), Tensor(np.full(4, 0.2)))
        elif op == "transpose":
            y = ad.transpose(ad.transpose(t))
        elif op == "reshape":
            y = ad.reshape(ad.reshape(t, (4, 3)), (3, 4))
        elif op == "concat":
            y = ad.reshape(ad.concat_cols([t, t]), (3, 8))
            return ad.sum_all(ad.mul(y, Tensor(np.hstack([w.data, 2 * w.data]))))
        elif op == "gather":
            return ad.sum_all(ad.mul(ad.gather_rows(t, [2, 0, 2]), w))
        else:
            return ad.mean_all(ad.mul(t, w))
        return ad.sum_all(ad.mul(y, w))

    x = leaf(x0)
    with Tape() as tape:
        loss = f(x)
    ad.backward(loss, tape)
    fd = ad.finite_diff_grad(f, Tensor(x0))
    assert rel_error(x.grad, fd.data) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_random_network_gradients(seed):
    assert check_net(seed) < 1e-4
