import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from povbias import numerics as nx
from povbias.numerics import Tape, Tensor

from oracles import central_differences, relative_error


def test_sigmoid_zero():
    assert nx.sigmoid(Tensor([0.0])).data[0] == 0.5


@pytest.mark.parametrize("n", [1, 2, 7])
def test_softmax_constant_vector_is_uniform(n):
    y = nx.softmax(Tensor(np.full(n, 3.25))).data
    np.testing.assert_allclose(y, np.full(n, 1.0 / n), rtol=0, atol=1e-15)


def test_matmul_hand_multiplied():
    a = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = Tensor([[7.0, 8.0], [9.0, 10.0], [11.0, 12.0]])
    # 1*7+2*9+3*11 = 58, 1*8+2*10+3*12 = 64, 4*7+5*9+6*11 = 139, 4*8+5*10+6*12 = 154
    assert nx.matmul(a, b).data.tolist() == [[58.0, 64.0], [139.0, 154.0]]


def test_shape_errors_name_the_operation():
    with pytest.raises(nx.ShapeError, match="matmul"):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(nx.ShapeError, match="hadamard"):
        nx.hadamard(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(nx.ShapeError, match="add"):
        nx.add(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))


def test_bias_broadcast_only_over_last_axis():
    out = nx.add(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0, 3.0]))
    assert out.data.tolist() == [[1.0, 2.0, 3.0]] * 2


def test_gather_bounds():
    table = Tensor(np.arange(6.0).reshape(3, 2))
    assert nx.gather(table, [2, 0]).data.tolist() == [[4.0, 5.0], [0.0, 1.0]]
    with pytest.raises(nx.BoundsError):
        nx.gather(table, [3])
    with pytest.raises(nx.BoundsError):
        nx.gather(table, [-1])


def test_numeric_fault_on_overflow():
    with pytest.raises(nx.NumericFault):
        with np.errstate(over="ignore"):
            nx.hadamard(Tensor([1e200]), Tensor([1e200]))


def test_masked_softmax_exact_zeros():
    y = nx.softmax(Tensor([[0.3, 9.0, -2.0, 100.0]]), mask=[[True, True, True, False]]).data
    assert y[0, 3] == 0.0
    assert abs(y.sum() - 1.0) < 1e-12


def test_backward_sum_is_all_ones():
    w = nx.parameter(np.random.default_rng(0).normal(size=(3, 4)))
    with Tape() as tape:
        loss = nx.total(w)
    (g,) = tape.gradient(loss, [w])
    assert np.array_equal(g, np.ones((3, 4)))


@pytest.mark.parametrize("x", [-2.0, 0.5, 3.0])
def test_backward_sigmoid_at_zero(x):
    w = nx.parameter([0.0])
    with Tape() as tape:
        loss = nx.total(nx.hadamard(nx.sigmoid(w), Tensor([x])))
    (g,) = tape.gradient(loss, [w])
    assert g[0] == pytest.approx(0.25 * x, abs=1e-15)


def test_backward_before_forward_is_state_error():
    tape = Tape()
    with pytest.raises(nx.TapeStateError):
        tape.gradient(Tensor(0.0), [])


def test_tape_cannot_be_replayed():
    w = nx.parameter([1.0, 2.0])
    with Tape() as tape:
        loss = nx.total(nx.tanh(w))
    tape.gradient(loss, [w])
    with pytest.raises(nx.TapeStateError):
        tape.gradient(loss, [w])


def test_nodes_are_topologically_ordered():
    w = nx.parameter(np.ones((2, 2)))
    with Tape() as tape:
        a = nx.tanh(w)
        b = nx.matmul(a, w)
        nx.total(nx.add(a, b))
    seen = {id(w)}
    for node in tape.nodes:
        assert all(id(t) in seen for t in node.inputs)
        seen.add(id(node.output))


def _random_graph(params, ids, mask, target):
    """A small graph touching every primitive."""
    E, W, b, c = params
    x = nx.gather(E, ids)  # (2, 3, 4)
    h = nx.tanh(nx.add(nx.matmul(x, W), b))  # (2, 3, 4)
    steps = [nx.take(h, t, axis=1) for t in range(3)]
    carried = [steps[0]]
    for t in range(1, 3):
        mixed = nx.hadamard(nx.sigmoid(steps[t]), nx.one_minus(carried[-1]))
        carried.append(nx.where(mask[:, t], nx.sub(mixed, steps[t]), carried[-1]))
    hs = nx.stack(carried, axis=-2)
    scores = nx.matmul(hs, c)  # (2, 3)
    alpha = nx.softmax(scores, mask=mask)
    pooled = nx.weighted_sum(alpha, hs)  # (2, 4)
    joined = nx.concat([pooled, nx.tanh(pooled)], axis=-1)  # (2, 8)
    logits = nx.matmul(joined, nx.transpose(nx.reshape(nx.concat([c, c]), (1, 8))))
    prob = nx.sigmoid(nx.reshape(logits, (2,)))
    return nx.bce_loss(prob, target)


def test_random_graph_matches_finite_differences():
    rng = np.random.default_rng(7)
    params = [
        nx.parameter(rng.uniform(-1, 1, size=(5, 4))),
        nx.parameter(rng.uniform(-1, 1, size=(4, 4))),
        nx.parameter(rng.uniform(-1, 1, size=4)),
        nx.parameter(rng.uniform(-1, 1, size=4)),
    ]
    ids = np.array([[1, 4, 0], [2, 2, 3]])
    mask = np.array([[True, True, False], [True, True, True]])
    target = np.array([1.0, 0.0])
    with Tape() as tape:
        loss = _random_graph(params, ids, mask, target)
    analytic = tape.gradient(loss, params)
    numeric = central_differences(
        lambda: float(_random_graph(params, ids, mask, target).data), [p.data for p in params]
    )
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n) < 1e-4


def _unfused_gru(xz, xr, xh, h, Uz, Ur, Uh, b_h):
    z = nx.sigmoid(nx.add(xz, nx.matmul(h, nx.transpose(Uz))))
    r = nx.sigmoid(nx.add(xr, nx.matmul(h, nx.transpose(Ur))))
    ht = nx.tanh(nx.add(xh, nx.hadamard(r, nx.add(nx.matmul(h, nx.transpose(Uh)), b_h))))
    return nx.add(nx.hadamard(nx.one_minus(z), h), nx.hadamard(z, ht))


@pytest.mark.parametrize("lead", [(), (3,), (2, 3)])
def test_gru_cell_matches_composed_ops_and_differences(lead):
    rng = np.random.default_rng(5)
    H = 4
    args = [nx.parameter(rng.uniform(-1, 1, size=lead + (H,))) for _ in range(4)]
    args += [nx.parameter(rng.uniform(-1, 1, size=(H, H))) for _ in range(3)]
    args.append(nx.parameter(rng.uniform(-1, 1, size=H)))
    w = rng.uniform(-1, 1, size=lead + (H,))

    def loss(cell):
        return nx.total(nx.hadamard(cell(*args), nx.constant(w)))

    assert np.allclose(nx.gru_cell(*args).data, _unfused_gru(*args).data, rtol=0, atol=1e-14)
    with Tape() as tape:
        out = loss(nx.gru_cell)
    analytic = tape.gradient(out, args)
    numeric = central_differences(lambda: float(loss(nx.gru_cell).data), [a.data for a in args])
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n) < 1e-6


def test_gru_cell_shape_error():
    h = nx.constant(np.zeros((2, 3)))
    U = nx.constant(np.zeros((3, 3)))
    with pytest.raises(nx.ShapeError, match="gru_cell"):
        nx.gru_cell(h, h, nx.constant(np.zeros((2, 4))), h, U, U, U, nx.constant(np.zeros(3)))


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=st.floats(-50, 50)),
    st.data(),
)
def test_softmax_properties(x, data):
    mask = data.draw(arrays(bool, x.shape))
    mask[:, 0] = True
    y = nx.softmax(Tensor(x), mask=mask).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(y[~mask] == 0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-30, 30)))
def test_activation_ranges(x):
    t = nx.tanh(Tensor(x)).data
    s = nx.sigmoid(Tensor(x)).data
    assert np.all((t >= -1) & (t <= 1))
    assert np.all((s >= 0) & (s <= 1))
    small = np.abs(x) < 15
    assert np.all(np.abs(t[small]) < 1) and np.all((s[small] > 0) & (s[small] < 1))


def test_adam_zero_gradient_leaves_params():
    p = nx.parameter([1.5, -2.0])
    state = nx.AdamState()
    nx.adam_step([p], [np.zeros(2)], state)
    assert p.data.tolist() == [1.5, -2.0]
    assert state.step_count == 1
    nx.adam_step([p], [np.zeros(2)], state)
    assert state.step_count == 2


def test_adam_first_step_hand_evaluated():
    p = nx.parameter([0.0])
    nx.adam_step([p], [np.array([1.0])], nx.AdamState())
    # m = 0.1, v = 0.001; m_hat = 0.1/0.1 = 1, v_hat = 0.001/0.001 = 1
    assert p.data[0] == pytest.approx(-1e-3 / (1.0 + 1e-8), rel=1e-12)


@pytest.mark.parametrize("g", [0.3, -7.0])
def test_adam_sign_limit(g):
    p = nx.parameter([0.0])
    state = nx.AdamState()
    prev = 0.0
    for _ in range(500):
        nx.adam_step([p], [np.array([g])], state)
        step = p.data[0] - prev
        prev = p.data[0]
    assert math.copysign(1.0, step) == -math.copysign(1.0, g)
    assert abs(step) == pytest.approx(1e-3, rel=1e-6)


def test_adam_rejects_non_finite_gradient():
    p = nx.parameter([1.0])
    with pytest.raises(nx.NumericFault):
        nx.adam_step([p], [np.array([np.nan])], nx.AdamState())
    assert p.data[0] == 1.0


def test_adam_bit_deterministic():
    rng = np.random.default_rng(3)
    init = rng.normal(size=(3, 3))
    grads = [rng.normal(size=(3, 3)) for _ in range(5)]
    outs = []
    for _ in range(2):
        p = nx.parameter(init)
        state = nx.AdamState()
        for g in grads:
            nx.adam_step([p], [g], state)
        outs.append(p.data.tobytes())
    assert outs[0] == outs[1]


def test_bce_values():
    assert float(nx.bce_loss(Tensor([0.5]), [1.0]).data) == pytest.approx(math.log(2), abs=1e-12)
    assert float(nx.bce_loss(Tensor([1 - 1e-7]), [1.0]).data) < 1e-6
    assert float(nx.bce_loss(Tensor([0.9]), [0.0]).data) == pytest.approx(2.302585092994046, rel=1e-9)
    # clamping prevents log(0)
    assert math.isfinite(float(nx.bce_loss(Tensor([0.0, 1.0]), [1.0, 0.0]).data))


def test_bce_batched_mean():
    p = Tensor([0.5, 0.9])
    loss = float(nx.bce_loss(p, [1.0, 0.0]).data)
    assert loss == pytest.approx((math.log(2) - math.log(0.1)) / 2, rel=1e-12)


def test_container_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    arrays_in = [("a", rng.normal(size=(3, 4))), ("b", rng.normal(size=7)), ("c", np.array(2.5))]
    path = tmp_path / "x.blc"
    nx.write_container(path, arrays_in, {"hello": [1, 2]})
    out, meta = nx.read_container(path)
    assert meta == {"hello": [1, 2]}
    for name, arr in arrays_in:
        assert out[name].tobytes() == arr.tobytes()
        assert out[name].shape == arr.shape


def test_container_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "x.blc"
    nx.write_container(path, [("a", np.ones(10))])
    blob = path.read_bytes()
    (tmp_path / "bad.blc").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(nx.CheckpointFormatError):
        nx.read_container(tmp_path / "bad.blc")
    (tmp_path / "short.blc").write_bytes(blob[:-8])
    with pytest.raises(nx.CheckpointIntegrityError):
        nx.read_container(tmp_path / "short.blc")
