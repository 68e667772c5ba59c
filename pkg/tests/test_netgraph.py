import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drain import autodiff as ad
from drain.netgraph import (
    LayerSpec, NetSchema, ParamVector, flatten, forward, init_params, layer_shapes,
    load_param_vector, param_count, predict, prefix_param_count, save_param_vector, unflatten,
)
from oracles import central_diff, grad_rel_error, np_mlp

MOONS = NetSchema.mlp(2, [50, 50], 1, "relu", "sigmoid")


@st.composite
def schemas(draw, max_layers=4, max_width=16):
    n_layers = draw(st.integers(1, max_layers))
    layers = tuple(
        LayerSpec(draw(st.integers(1, max_width)), draw(st.sampled_from(["relu", "tanh", "identity"])),
                  draw(st.booleans()))
        for _ in range(n_layers)
    )
    suffix = draw(st.integers(1, n_layers))
    return NetSchema(draw(st.integers(1, max_width)), layers,
                     draw(st.sampled_from(["sigmoid", "identity"])), suffix)


def test_param_count_examples():
    assert param_count(MOONS) == 2 * 50 + 50 + 50 * 50 + 50 + 50 * 1 + 1 == 2751
    assert param_count(NetSchema(5, (LayerSpec(1, "identity", False),), "identity")) == 5
    last_only = NetSchema.mlp(2, [50, 50], 1, generated_suffix_len=1)
    assert param_count(last_only) == 51
    assert prefix_param_count(last_only) == 2751 - 51


def test_schema_validation():
    with pytest.raises(ValueError):
        NetSchema(2, (LayerSpec(0),))
    with pytest.raises(ValueError):
        NetSchema(2, (LayerSpec(3), LayerSpec(1)), generated_suffix_len=0)
    with pytest.raises(ValueError):
        NetSchema(2, (LayerSpec(3), LayerSpec(1)), generated_suffix_len=3)
    with pytest.raises(ValueError):
        NetSchema(2, (LayerSpec(3, "gelu"),))
    with pytest.raises(ValueError):
        NetSchema(2, (LayerSpec(3),), output_activation="softmax")


@settings(max_examples=1000, deadline=None)
@given(schemas(), st.integers(0, 2**32 - 1))
def test_flatten_unflatten_bijection(schema, seed):
    rng = np.random.default_rng(seed)
    vec = rng.normal(size=param_count(schema))
    layers = unflatten(schema, vec)
    back = flatten(layers, schema)
    assert back.values.tobytes() == vec.tobytes()
    # and the other direction
    again = unflatten(schema, back)
    for (w1, b1), (w2, b2) in zip(layers, again):
        assert w1.tobytes() == w2.tobytes()
        assert (b1 is None and b2 is None) or b1.tobytes() == b2.tobytes()


def test_roundtrip_moons_schema_100_vectors():
    rng = np.random.default_rng(0)
    for _ in range(100):
        vec = rng.normal(size=2751)
        assert flatten(unflatten(MOONS, vec)).values.tobytes() == vec.tobytes()


def test_layout_is_weight_row_major_then_bias():
    schema = NetSchema(2, (LayerSpec(3, "relu", True), LayerSpec(1, "identity", True)), "identity")
    vec = np.arange(param_count(schema), dtype=float)
    (w1, b1), (w2, b2) = unflatten(schema, vec)
    np.testing.assert_array_equal(w1, [[0, 1, 2], [3, 4, 5]])
    np.testing.assert_array_equal(b1, [6, 7, 8])
    np.testing.assert_array_equal(w2, [[9], [10], [11]])
    np.testing.assert_array_equal(b2, [12])


def test_unflatten_length_mismatch_names_both_lengths():
    with pytest.raises(ValueError, match="2751.*2750"):
        unflatten(MOONS, np.zeros(2750))


def test_flatten_zero_layers():
    layers = [(np.zeros((i, o)), np.zeros(o) if b else None) for i, o, b in layer_shapes(MOONS)]
    vec = flatten(layers, MOONS)
    assert len(vec) == param_count(MOONS)
    assert not vec.values.any()


def test_param_vector_rejects_nonfinite():
    with pytest.raises(ValueError):
        ParamVector(np.array([1.0, np.nan]))


def test_zero_params_sigmoid_gives_half():
    x = np.random.default_rng(0).normal(size=(9, 2))
    out = predict(MOONS, np.zeros(2751), None, x)
    np.testing.assert_array_equal(out, np.full(9, 0.5))


def test_identity_net_returns_input():
    schema = NetSchema(3, (LayerSpec(3, "identity", True),), "identity")
    vec = flatten([(np.eye(3), np.zeros(3))], schema)
    tape = ad.Tape()
    x = np.random.default_rng(1).normal(size=(5, 3))
    out = forward(schema, tape.var(vec.values), None, x)
    np.testing.assert_array_equal(out.value, x)


@settings(max_examples=100, deadline=None)
@given(schemas(max_width=6), st.integers(0, 2**32 - 1))
def test_forward_matches_numpy_reference(schema, seed):
    rng = np.random.default_rng(seed)
    omega = rng.normal(size=param_count(schema))
    prefix = rng.normal(size=prefix_param_count(schema))
    x = rng.normal(size=(4, schema.input_dim))
    layers = unflatten(schema, prefix, "prefix") + unflatten(schema, omega)
    # hidden activations differ per layer here, so run the reference layer by layer
    h = x
    acts = {"relu": lambda v: np.maximum(v, 0), "tanh": np.tanh, "identity": lambda v: v}
    for spec, (w, b) in zip(schema.layers, layers):
        h = acts[spec.activation](h @ w + (0 if b is None else b))
    if schema.output_activation == "sigmoid":
        h = 1 / (1 + np.exp(-h))
    if schema.output_dim == 1:
        h = h[:, 0]
    got = predict(schema, omega, prefix, x)
    np.testing.assert_allclose(got, h, rtol=1e-12, atol=1e-12)


def test_forward_dimension_mismatch():
    tape = ad.Tape()
    with pytest.raises(ad.ShapeError, match="input"):
        forward(MOONS, tape.var(np.zeros(2751)), None, np.zeros((3, 4)))
    with pytest.raises(ad.ShapeError):
        forward(MOONS, tape.var(np.zeros(2750)), None, np.zeros((3, 2)))


def _loss(schema, omega, prefix, x, y):
    tape = ad.Tape()
    pv = tape.var(prefix) if prefix is not None and prefix.size else None
    return float(ad.loss_bce(forward(schema, tape.var(omega), pv, x), y).value)


def test_gradient_2_3_1_net_matches_finite_differences():
    schema = NetSchema.mlp(2, [3], 1, "tanh", "sigmoid")
    for seed in range(100):
        rng = np.random.default_rng(seed)
        omega = rng.normal(size=param_count(schema))
        x, y = rng.normal(size=(4, 2)), rng.integers(0, 2, 4).astype(float)
        tape = ad.Tape()
        ov = tape.var(omega)
        g = ad.backward(ad.loss_bce(forward(schema, ov, None, x), y))[ov]
        num = central_diff(lambda w: _loss(schema, w, None, x, y), omega)
        assert grad_rel_error(g, num) < 1e-5


def test_gradient_reaches_prefix_and_generated_segments():
    schema = NetSchema.mlp(2, [4, 3], 1, "tanh", "sigmoid", generated_suffix_len=1)
    rng = np.random.default_rng(5)
    omega, prefix = rng.normal(size=param_count(schema)), rng.normal(size=prefix_param_count(schema))
    x, y = rng.normal(size=(6, 2)), rng.integers(0, 2, 6).astype(float)
    tape = ad.Tape()
    ov, pv = tape.var(omega), tape.var(prefix)
    g = ad.backward(ad.loss_bce(forward(schema, ov, pv, x), y))
    assert grad_rel_error(g[ov], central_diff(lambda w: _loss(schema, w, prefix, x, y), omega)) < 1e-5
    assert grad_rel_error(g[pv], central_diff(lambda p: _loss(schema, omega, p, x, y), prefix)) < 1e-5


def test_directional_derivative_richardson():
    # L(w + d) - L(w - d) = 2 g.d + O(|d|^3); Richardson on two step sizes removes the cubic term
    schema = NetSchema.mlp(3, [5, 4], 1, "tanh", "sigmoid")
    for seed in range(20):
        rng = np.random.default_rng(seed)
        omega = rng.normal(size=param_count(schema)) * 0.5
        x, y = rng.normal(size=(8, 3)), rng.integers(0, 2, 8).astype(float)
        d = rng.normal(size=omega.shape)
        d /= np.linalg.norm(d)
        tape = ad.Tape()
        ov = tape.var(omega)
        gd = float(ad.backward(ad.loss_bce(forward(schema, ov, None, x), y))[ov] @ d)

        def D(h):
            return (_loss(schema, omega + h * d, None, x, y) - _loss(schema, omega - h * d, None, x, y)) / (2 * h)

        h = 1e-3
        rich = (4 * D(h / 2) - D(h)) / 3
        assert abs(rich - gd) <= 1e-7 * max(1.0, abs(gd))


def test_forward_is_deterministic():
    rng = np.random.default_rng(2)
    omega, x = rng.normal(size=2751), rng.normal(size=(10, 2))
    assert predict(MOONS, omega, None, x).tobytes() == predict(MOONS, omega, None, x).tobytes()


def test_numpy_reference_agrees_on_moons_schema():
    rng = np.random.default_rng(3)
    omega, x = rng.normal(size=2751) * 0.3, rng.normal(size=(10, 2))
    ref = np_mlp(x, unflatten(MOONS, omega), "relu", "sigmoid")[:, 0]
    np.testing.assert_allclose(predict(MOONS, omega, None, x), ref, rtol=1e-12)


def test_init_params_bounds():
    vec = init_params(MOONS, np.random.default_rng(0), "generated")
    (w1, b1), (w2, b2), (w3, b3) = unflatten(MOONS, vec)
    assert np.abs(w1).max() <= 1 / np.sqrt(2) and np.abs(w2).max() <= 1 / np.sqrt(50)
    assert init_params(MOONS, np.random.default_rng(0), "prefix").size == 0


@settings(max_examples=50, deadline=None)
@given(schemas(), st.integers(0, 2**32 - 1))
def test_param_vector_file_roundtrip(tmp_path_factory, schema, seed):
    vec = ParamVector(np.random.default_rng(seed).normal(size=param_count(schema)), schema.hash())
    path = tmp_path_factory.mktemp("pv") / "w.pv"
    save_param_vector(path, vec)
    raw = path.read_bytes()
    assert raw[:4] == b"DRPV" and len(raw) == 16 + 8 * len(vec)
    back = load_param_vector(path)
    assert back.values.tobytes() == vec.values.tobytes()
    assert back.owner_schema_hash == schema.hash()


def test_param_vector_file_rejects_garbage(tmp_path):
    p = tmp_path / "bad.pv"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError, match="magic"):
        load_param_vector(p)
    p.write_bytes(b"DRP")
    with pytest.raises(ValueError, match="truncated"):
        load_param_vector(p)


def test_schema_hash_and_dict_roundtrip():
    s2 = NetSchema.from_dict(MOONS.to_dict())
    assert s2 == MOONS and s2.hash() == MOONS.hash()
    assert NetSchema.mlp(2, [50, 49]).hash() != MOONS.hash()
