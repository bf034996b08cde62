import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from multires import numerics as nx
from multires.numerics import AdamState, Tensor, adam_step, backward, lr_schedule


def test_softmax_of_zeros_is_uniform():
    assert np.allclose(nx.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_tanh_of_zero_tensor():
    assert np.array_equal(nx.tanh(Tensor(np.zeros((2, 3)))).data, np.zeros((2, 3)))


def test_matmul_of_ones():
    out = Tensor(np.ones((2, 3))) @ Tensor(np.ones((3, 1)))
    assert out.shape == (2, 1)
    assert np.array_equal(out.data, [[3.0], [3.0]])


def test_matmul_shape_error_names_dims():
    with pytest.raises(nx.ShapeError, match=r"\(2, 3\) @ \(2, 1\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 1)))


def test_add_shape_error():
    with pytest.raises(nx.ShapeError, match="add"):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_backward_square_sum():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(nx.sum(x * x))
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_backward_sigmoid_at_zero():
    x = np.array([0.5, -1.5, 2.0])
    w = Tensor(np.zeros(3), requires_grad=True)
    backward(nx.sum(nx.sigmoid(nx.reshape(w, (1, 3)) @ Tensor(x.reshape(3, 1)))))
    assert np.allclose(w.grad, 0.25 * x, atol=1e-15)


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(nx.ShapeError, match="scalar"):
        backward(x * 2.0)


def test_shared_node_gets_summed_gradient():
    x = Tensor([3.0], requires_grad=True)
    y = x * x
    backward(nx.sum(y * y))  # x^4
    assert np.allclose(x.grad, 4 * 27.0)


def _mlp_params(seed):
    rng = np.random.default_rng(seed)
    dims = [4, 6, 5, 3]
    return [Tensor(rng.normal(size=(a, b)), requires_grad=True) for a, b in zip(dims, dims[1:])] + \
           [Tensor(rng.normal(size=b), requires_grad=True) for b in dims[1:]], rng.normal(size=(2, 4))


@pytest.mark.parametrize("seed", range(5))
def test_three_layer_mlp_matches_finite_differences(seed):
    params, x = _mlp_params(seed)
    Ws, bs = params[:3], params[3:]

    def loss():
        h = Tensor(x)
        h = nx.tanh(h @ Ws[0] + bs[0])
        h = nx.sigmoid(h @ Ws[1] + bs[1])
        return nx.mean(nx.softmax(h @ Ws[2] + bs[2]) * Tensor(np.arange(6.0).reshape(2, 3)))

    assert nx.grad_check(loss, params) < 1e-4


@pytest.mark.parametrize("op", ["layer_norm", "log_softmax", "gru_step", "scores", "pool", "slice", "concat"])
def test_primitive_gradients(op):
    rng = np.random.default_rng(3)
    R = None

    def t(*shape):
        return Tensor(rng.normal(size=shape), requires_grad=True)

    if op == "layer_norm":
        ins = [t(2, 3, 5), t(5), t(5)]
        f = lambda: nx.layer_norm(*ins)  # noqa: E731
    elif op == "log_softmax":
        ins = [t(3, 4)]
        f = lambda: nx.log_softmax(ins[0], axis=-1)  # noqa: E731
    elif op == "gru_step":
        ins = [t(2, 3), t(2, 3), t(2, 3), t(2, 3), t(3, 3), t(3, 3), t(3, 3)]
        f = lambda: nx.gru_step(*ins)  # noqa: E731
    elif op == "scores":
        ins = [t(2, 4, 3), t(2, 3), t(3)]
        f = lambda: nx.additive_scores(*ins)  # noqa: E731
    elif op == "pool":
        ins = [t(2, 4), t(2, 4, 3)]
        f = lambda: nx.attention_pool(*ins)  # noqa: E731
    elif op == "slice":
        ins = [t(3, 4)]
        f = lambda: nx.take_last(ins[0][1:], np.array([0, 3]))  # noqa: E731
    else:
        ins = [t(2, 3), t(2, 1)]
        f = lambda: nx.concat(ins, axis=1)  # noqa: E731
    R = rng.normal(size=f().shape)
    assert nx.grad_check(lambda: nx.sum(f() * R), ins) < 1e-4


def test_non_participating_parameter_gets_zero_grad_after_zero_grad():
    from multires.layers import Linear
    lin = Linear(2, 2, np.random.default_rng(0))
    unused = Linear(2, 2, np.random.default_rng(1))
    for m in (lin, unused):
        m.zero_grad()
    backward(nx.sum(lin(Tensor(np.ones((1, 2))))))
    assert np.array_equal(unused.W.grad, np.zeros((2, 2)))
    assert np.abs(lin.W.grad).sum() > 0


def test_no_grad_builds_no_graph():
    w = Tensor(np.ones(2), requires_grad=True)
    with nx.no_grad():
        y = w * 2.0
    assert not y.requires_grad and y.parents == ()


def test_graph_is_topological():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = nx.tanh(x) * x
    loss = nx.sum(y + nx.sigmoid(y))
    order = nx.Graph.from_output(loss).nodes
    pos = {id(n): i for i, n in enumerate(order)}
    assert len(pos) == len(order)
    for n in order:
        for p in n.parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(n)]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one_and_sigmoid_in_range(x):
    s = nx.softmax(Tensor(x), axis=-1).data
    assert np.all(np.abs(s.sum(-1) - 1.0) < 1e-12)
    sg = nx.sigmoid(Tensor(np.clip(x, -30, 30))).data
    assert np.all((sg > 0) & (sg < 1))


def test_dropout_eval_is_identity_and_train_preserves_mean():
    x = Tensor(np.ones((200, 500)))
    assert nx.dropout(x, 0.4, np.random.default_rng(0), training=False) is x
    y = nx.dropout(x, 0.4, np.random.default_rng(0), training=True).data
    assert abs(y.mean() - 1.0) < 0.01
    assert set(np.unique(y)) == {0.0, 1.0 / 0.6}


def test_determinism_bit_identical():
    def run():
        params, x = _mlp_params(11)
        out = nx.sum(nx.tanh(Tensor(x) @ params[0]))
        backward(out)
        return out.data.tobytes(), params[0].grad.tobytes()

    assert run() == run()


# ----------------------------------------------------------------- Adam

def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    st_ = AdamState.for_params([p])
    adam_step([p], st_)
    assert np.array_equal(p.data, [1.0, -2.0])
    assert st_.step == 1


def test_adam_single_scalar_step():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([1.0])
    adam_step([p], AdamState.for_params([p], lr=0.001))
    # m_hat = v_hat = 1 after bias correction
    assert p.data[0] == pytest.approx(1.0 - 0.001 / (1.0 + 1e-8), abs=1e-15)
    assert p.grad[0] == 1.0


def test_adam_two_steps_match_reference_trace():
    def reference(p, grads, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
        m = v = 0.0
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            p = p - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        return p

    p = Tensor(np.array([1.0]), requires_grad=True)
    state = AdamState.for_params([p], lr=0.001)
    for _ in range(2):
        p.grad = np.array([1.0])
        adam_step([p], state)
    assert abs(p.data[0] - reference(1.0, [1.0, 1.0])) < 1e-12
    assert state.step == 2


def test_adam_missing_grad_names_parameter():
    p = Tensor(np.ones(1), requires_grad=True)
    with pytest.raises(ValueError, match="enc.W"):
        adam_step([p], AdamState.for_params([p]), names=["enc.W"])


def test_adam_state_validates_hyperparameters():
    with pytest.raises(ValueError):
        AdamState(lr=0.0)
    with pytest.raises(ValueError):
        AdamState(beta1=1.0)


@pytest.mark.parametrize("epoch, expected", [(0, 0.001), (80, 0.0005), (299, 0.000125)])
def test_lr_schedule(epoch, expected):
    assert lr_schedule(0.001, epoch, 80) == pytest.approx(expected, rel=1e-15)


def test_lr_schedule_rejects_bad_period():
    with pytest.raises(ValueError):
        lr_schedule(0.001, 1, 0)


# ------------------------------------------------------------ checkpoints

def test_checkpoint_round_trip_and_determinism(tmp_path):
    rng = np.random.default_rng(0)
    params = {"encoder.gru_fwd.W_z": rng.normal(size=(3, 4)), "out.b": rng.normal(size=5)}
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    nx.save_checkpoint(a, params, {"kind": "test"})
    nx.save_checkpoint(b, dict(reversed(list(params.items()))), {"kind": "test"})
    assert a.read_bytes() == b.read_bytes()
    loaded, meta = nx.load_checkpoint(a)
    assert meta == {"kind": "test"}
    for k, v in params.items():
        assert np.array_equal(loaded[k], v)


def test_checkpoint_rejects_foreign_file(tmp_path):
    f = tmp_path / "x.ckpt"
    f.write_bytes(b"hello\n")
    with pytest.raises(ValueError, match="not a checkpoint"):
        nx.load_checkpoint(f)
