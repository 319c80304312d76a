import json

import numpy as np
import pytest

from metriflow import autodiff as ad


def central_diff(fn, arr, rel_step=1e-5):
    """Central finite differences with magnitude-scaled steps."""
    flat = arr.ravel()
    out = np.zeros_like(flat)
    for i in range(flat.size):
        h = rel_step * max(1.0, abs(flat[i]))
        old = flat[i]
        flat[i] = old + h
        fp = fn()
        flat[i] = old - h
        fm = fn()
        flat[i] = old
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(arr.shape)


def assert_close_grad(got, want, rel=1e-5, floor=1e-8):
    diff = np.abs(got - want)
    scale = np.maximum(np.abs(got), np.abs(want))
    assert np.all(diff <= np.maximum(rel * scale, floor)), (
        f"max abs diff {diff.max()}, max rel {(diff / np.maximum(scale, 1e-300)).max()}"
    )


def make_mlp(store, prefix, sizes, rng):
    for i, (din, dout) in enumerate(zip(sizes[:-1], sizes[1:])):
        store.add(f"{prefix}w{i}", rng.uniform(-1, 1, (din, dout)) / np.sqrt(din))
        store.add(f"{prefix}b{i}", rng.normal(size=(1, dout)) * 0.1)


def apply_mlp(store, prefix, x, n_layers):
    h = x
    ones = ad.constant(np.ones((x.shape[0], 1)))
    for i in range(n_layers):
        z = ad.add(
            ad.matmul(h, ad.parameter(store, f"{prefix}w{i}")),
            ad.matmul(ones, ad.parameter(store, f"{prefix}b{i}")),
        )
        h = ad.tanh(z) if i < n_layers - 1 else z
    return h


class TestForward:
    def test_tanh_at_zero(self):
        x = ad.input_node("x", (1,))
        assert ad.forward(ad.tanh(x), {x: np.array([0.0])}) == np.array([0.0])

    def test_identity_matmul(self):
        x = ad.input_node("x", (2,))
        out = ad.forward(ad.matmul(ad.constant(np.eye(2)), x), {x: np.array([3.0, -1.0])})
        np.testing.assert_array_equal(out, [3.0, -1.0])

    def test_sum_of_squares(self):
        x = ad.input_node("x", (3,))
        val = ad.forward(ad.sum_all(ad.square(x)), {x: np.array([1.0, 2.0, 2.0])})
        assert val == 9.0

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        store = ad.ParameterStore()
        make_mlp(store, "m", [3, 5, 1], rng)
        x = ad.input_node("x", (2, 3))
        out = apply_mlp(store, "m", x, 2)
        xv = rng.normal(size=(2, 3))
        a = ad.forward(out, {x: xv})
        b = ad.forward(out, {x: xv})
        np.testing.assert_array_equal(a, b)

    def test_shape_mismatch_names_node(self):
        a = ad.input_node("lhs", (2, 3))
        b = ad.input_node("rhs", (2, 3))
        with pytest.raises(ad.GraphError, match="matmul"):
            ad.matmul(a, b)
        with pytest.raises(ad.GraphError, match="lhs"):
            ad.add(a, ad.input_node("other", (3, 2)))

    def test_unbound_input(self):
        x = ad.input_node("x", (1,))
        with pytest.raises(ad.GraphError, match="unbound input 'x'"):
            ad.forward(ad.tanh(x), {})


class TestInputGradient:
    def test_grad_of_sum_of_squares(self):
        x = ad.input_node("x", (2,))
        g = ad.input_gradient(ad.sum_all(ad.square(x)), x)
        np.testing.assert_allclose(
            ad.forward(g, {x: np.array([1.0, -2.0])}), [2.0, -4.0], atol=1e-15
        )

    def test_tanh_linear_unit(self):
        store = ad.ParameterStore()
        store.add("w", np.array([1.0]))
        x = ad.input_node("x", (1,))
        out = ad.tanh(ad.mul(ad.parameter(store, "w"), x))
        g = ad.input_gradient(out, x)
        np.testing.assert_allclose(ad.forward(g, {x: np.array([0.0])}), [1.0], atol=1e-15)

    def test_two_layer_mlp_matches_fd(self):
        rng = np.random.default_rng(7)
        store = ad.ParameterStore()
        make_mlp(store, "m", [4, 8, 1], rng)
        x = ad.input_node("x", (1, 4))
        out = apply_mlp(store, "m", x, 2)
        g = ad.input_gradient(out, x)
        xv = rng.normal(size=(1, 4))
        got = ad.forward(g, {x: xv})
        fd = central_diff(lambda: float(ad.forward(out, {x: xv})[0, 0]), xv)
        assert_close_grad(got, fd, rel=1e-5)

    def test_requires_scalar_output(self):
        x = ad.input_node("x", (3,))
        with pytest.raises(ad.GraphError, match="scalar"):
            ad.input_gradient(ad.square(x), x)


class TestBackward:
    def test_square_param(self):
        store = ad.ParameterStore()
        store.add("w", np.array(3.0))
        loss = ad.square(ad.parameter(store, "w"))
        grads = ad.backward(loss)
        assert grads["w"] == 6.0
        assert store.grads["w"] == 6.0

    def test_second_order_matches_fd(self):
        rng = np.random.default_rng(11)
        store = ad.ParameterStore()
        make_mlp(store, "m", [3, 6, 1], rng)
        x = ad.input_node("x", (1, 3))
        out = apply_mlp(store, "m", x, 2)
        loss = ad.sum_all(ad.square(ad.input_gradient(out, x)))
        xv = rng.normal(size=(1, 3))
        env = {x: xv}
        store.zero_grads()
        ad.backward(loss, bindings=env)
        for name in store.values:
            fd = central_diff(lambda: float(ad.forward(loss, env)), store.values[name])
            assert_close_grad(store.grads[name], fd, rel=1e-4)

    def test_unused_param_gets_zero(self):
        store = ad.ParameterStore()
        store.add("w", np.array(2.0))
        store.add("unused", np.array([1.0, 1.0]))
        loss = ad.square(ad.parameter(store, "w"))
        node = ad.gradients(loss, [ad.parameter(store, "unused")])[0]
        np.testing.assert_array_equal(ad.forward(node), [0.0, 0.0])

    def test_rejects_nonscalar(self):
        store = ad.ParameterStore()
        store.add("w", np.array([1.0, 2.0]))
        with pytest.raises(ad.GraphError, match="scalar"):
            ad.backward(ad.square(ad.parameter(store, "w")))

    def test_repeated_calls_accumulate_identically(self):
        store = ad.ParameterStore()
        store.add("w", np.array(1.5))
        loss = ad.square(ad.parameter(store, "w"))
        ad.backward(loss)
        first = store.grads["w"].copy()
        store.zero_grads()
        ad.backward(loss)
        np.testing.assert_array_equal(store.grads["w"], first)


def random_small_graph(rng):
    """Random MLP-like scalar graph: <= 3 layers, widths <= 16."""
    store = ad.ParameterStore()
    n_layers = int(rng.integers(1, 4))
    sizes = [int(rng.integers(2, 6))] + [int(rng.integers(2, 17)) for _ in range(n_layers - 1)] + [1]
    make_mlp(store, "g", sizes, rng)
    batch = int(rng.integers(1, 4))
    x = ad.input_node("x", (batch, sizes[0]))
    out = apply_mlp(store, "g", x, n_layers)
    extras = [ad.sum_all(ad.square(out))]
    if rng.random() < 0.5:
        extras.append(ad.sum_all(ad.square(ad.sin(out))))
    if rng.random() < 0.5:
        extras.append(ad.sum_all(ad.softplus(out)))
    loss = extras[0]
    for e in extras[1:]:
        loss = ad.add(loss, e)
    xv = rng.normal(size=(batch, sizes[0]))
    return store, loss, {x: xv}


class TestGradientProperties:
    def test_hundred_random_graphs_match_fd(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            store, loss, env = random_small_graph(rng)
            store.zero_grads()
            ad.backward(loss, bindings=env)
            for name in store.values:
                fd = central_diff(lambda: float(ad.forward(loss, env)), store.values[name])
                assert_close_grad(store.grads[name], fd, rel=1e-5, floor=1e-8)

    def test_second_order_property(self):
        rng = np.random.default_rng(99)
        for _ in range(10):
            store = ad.ParameterStore()
            width = int(rng.integers(3, 9))
            make_mlp(store, "g", [3, width, 1], rng)
            x = ad.input_node("x", (2, 3))
            out = apply_mlp(store, "g", x, 2)
            loss = ad.sum_all(ad.square(ad.input_gradient(ad.sum_all(out), x)))
            env = {x: rng.normal(size=(2, 3))}
            store.zero_grads()
            ad.backward(loss, bindings=env)
            for name in store.values:
                fd = central_diff(lambda: float(ad.forward(loss, env)), store.values[name])
                assert_close_grad(store.grads[name], fd, rel=1e-4, floor=1e-8)

    def test_seed_determinism_bit_identical(self):
        outs = []
        for _ in range(2):
            rng = np.random.default_rng(5)
            store, loss, env = random_small_graph(rng)
            store.zero_grads()
            ad.backward(loss, bindings=env)
            outs.append({k: v.copy() for k, v in store.grads.items()})
        for name in outs[0]:
            np.testing.assert_array_equal(outs[0][name], outs[1][name])


class TestParameterStore:
    def test_checkpoint_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        store = ad.ParameterStore()
        store.add("a", rng.normal(size=(4, 3)) * 1e-7)
        store.add("b", rng.normal(size=(2,)) * 1e9)
        store.add("c", np.array(np.pi))
        path = tmp_path / "params.json"
        store.save_json(path)
        loaded = ad.ParameterStore.load_json(path)
        for name in store.values:
            np.testing.assert_array_equal(store.values[name], loaded.values[name])

    def test_state_dict_schema(self):
        store = ad.ParameterStore()
        store.add("w", np.arange(6.0).reshape(2, 3))
        state = json.loads(json.dumps(store.state_dict()))
        assert state["w"]["shape"] == [2, 3]
        assert state["w"]["data"] == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]

    def test_duplicate_name_rejected(self):
        store = ad.ParameterStore()
        store.add("w", np.zeros(2))
        with pytest.raises(ad.GraphError, match="duplicate"):
            store.add("w", np.zeros(2))

    def test_total_count(self):
        store = ad.ParameterStore()
        store.add("a", np.zeros((2, 3)))
        store.add("b", np.zeros(4))
        assert store.total_count == 10
