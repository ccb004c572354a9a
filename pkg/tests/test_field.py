import numpy as np
import pytest

from strata_nerf import autodiff as ad
from strata_nerf.encoding import (
    FrequencyBands,
    GaussianSegment,
    contract_segment,
    ipe,
    level_encode,
    segment_gaussians,
)
from strata_nerf.errors import ConfigError, ShapeError
from strata_nerf.field import (
    ModelConfig,
    decode_latent,
    encode_latent,
    init_params,
    model_forward,
    parameter_count,
    parameter_ledger,
    parameter_shapes,
    quantize,
    route_latent,
    vq_loss,
)
from strata_nerf.selfcheck import brute_force_nearest, check_zero_router, quantizer_case, straight_through_error

CODEBOOK = np.array([[0.0, 0.0], [1.0, 1.0]])


def _inputs(rng, count=20):
    origins = rng.normal(size=(count, 3))
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    edges = np.sort(rng.uniform(0.5, 3.0, size=(count, 2)), axis=1)
    return segment_gaussians(origins, directions, edges, np.full(count, 0.01)), directions


@pytest.mark.parametrize(
    "z, index",
    [((0.2, 0.1), 0), ((0.6, 0.6), 1), ((0.5, 0.5), 0)],
)
def test_quantize_examples(z, index):
    q = quantize(np.array(z), CODEBOOK)
    assert int(q.index) == index
    np.testing.assert_array_equal(q.z_e.data, CODEBOOK[index])
    np.testing.assert_array_equal(q.z_st.data, CODEBOOK[index])


def test_quantize_rejects_empty_codebook():
    with pytest.raises(ShapeError, match="empty"):
        quantize(np.zeros(2), np.zeros((0, 2)))


def test_quantize_matches_brute_force():
    rng = np.random.default_rng(3)
    for case in range(1000):
        z, codebook = quantizer_case(rng, case)
        np.testing.assert_array_equal(quantize(z, codebook).index, brute_force_nearest(z, codebook))


def test_duplicate_rows_resolve_to_lowest_index():
    codebook = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    assert int(quantize(np.array([0.1, 0.0]), codebook).index) == 1


def test_straight_through_identity(rng):
    assert straight_through_error(rng) < 1e-10


def test_vq_loss_values():
    assert vq_loss([1.0, 0.0], [1.0, 0.0], [0.3, 0.2], [0.3, 0.2], 1.0).item() == 0.0
    assert vq_loss([1.0, 0.0], [0.0, 0.0], [0.3, 0.2], [0.3, 0.2], 1.0).item() == 1.0
    assert vq_loss([0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0], 1.0).item() == 2.0


def test_vq_loss_gradient_routing():
    graph = ad.Graph()
    z = graph.leaf([0.0, 0.0])
    z_e = graph.leaf([1.0, 0.0])
    grads = ad.backward(graph, vq_loss([0.0, 0.0], [0.0, 0.0], z, z_e, beta=0.25))
    # commitment pulls z toward z_e; the beta term pulls the code toward z
    np.testing.assert_allclose(grads[z], [-2.0, 0.0])
    np.testing.assert_allclose(grads[z_e], [0.5, 0.0])


def test_vq_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        vq_loss([0.0, 0.0], [0.0], [0.0], [0.0], 1.0)


def test_encode_and_decode_with_zero_weights(tiny_config, rng):
    config = tiny_config("full")
    params = {k: np.zeros_like(v) for k, v in init_params(config, rng).items()}
    params["encoder/1/b"] = rng.normal(size=config.latent_dim)
    params["decoder/out/b"] = rng.normal(size=config.ipe_dim)
    z = encode_latent(rng.normal(size=(4, config.ipe_dim)), None, params, config)
    np.testing.assert_array_equal(z.data, np.tile(params["encoder/1/b"], (4, 1)))
    y = decode_latent(z, params, config)
    np.testing.assert_array_equal(y.data, np.tile(params["decoder/out/b"], (4, 1)))


def test_decode_identity_configuration(tiny_config, rng):
    config = tiny_config("full", position_bands=1, latent_dim=6, decoder_layers=0)
    params = {"decoder/out/w": np.eye(6), "decoder/out/b": np.zeros(6)}
    z_e = rng.normal(size=(3, 6))
    np.testing.assert_array_equal(decode_latent(z_e, params, config).data, z_e)


def test_encode_latent_checks_dimensions(tiny_config, rng):
    config = tiny_config("full")
    params = init_params(config, rng)
    with pytest.raises(ShapeError):
        encode_latent(np.zeros(config.ipe_dim + 1), None, params, config)
    with pytest.raises(ShapeError):
        decode_latent(np.zeros(config.latent_dim + 1), params, config)


def test_encode_latent_separates_points_and_levels(tiny_config, rng):
    config = tiny_config("full", use_level_encoding=True)
    params = init_params(config, rng)
    gamma = ipe(rng.normal(size=(10, 3)), np.zeros((10, 3)), FrequencyBands(config.position_bands))
    level_bands = FrequencyBands(config.level_bands)
    z0 = encode_latent(gamma, level_encode(np.zeros(10), level_bands, 2), params, config)
    z1 = encode_latent(gamma, level_encode(np.ones(10), level_bands, 2), params, config)
    assert len({tuple(row) for row in np.round(z0.data, 12)}) == 10
    assert not np.allclose(z0.data, z1.data)
    with pytest.raises(ShapeError):
        encode_latent(gamma, None, params, config)


def test_route_latent_per_variant(tiny_config, rng):
    z = rng.normal(size=(5, 8))
    for variant, present in [("full", (True, True)), ("D1", (True, False)), ("D2", (False, True)),
                             ("D3", (False, False))]:
        config = tiny_config(variant)
        cond1, cond2 = route_latent(z, init_params(config, rng), config)
        assert (cond1 is not None, cond2 is not None) == present
    config = tiny_config("full")
    params = init_params(tiny_config("D1"), rng)
    with pytest.raises(ShapeError):
        route_latent(z, params, config)


def test_zero_router_matches_baseline(rng):
    assert check_zero_router(rng)


def test_baseline_constant_field(tiny_config, rng):
    config = tiny_config("baseline")
    params = init_params(config, rng)
    for name in ("density/w", "color/out/w"):
        params[name] = np.zeros_like(params[name])
    params["density/b"] = np.array([0.3])
    params["color/out/b"] = np.array([-1.0, 0.0, 2.0])
    seg, dirs = _inputs(rng)
    out = model_forward(seg, dirs[:, None, :], 0, params, config)
    np.testing.assert_allclose(out.sigma.data, np.log1p(np.exp(0.3)))
    np.testing.assert_allclose(out.rgb.data, np.broadcast_to(1.0 / (1.0 + np.exp([1.0, 0.0, -2.0])), (20, 1, 3)))


@pytest.mark.parametrize("variant", ["full", "D1", "D2", "D3", "D4_vae", "baseline"])
def test_forward_ranges(tiny_config, rng, variant):
    config = tiny_config(variant)
    params = init_params(config, rng)
    seg, dirs = _inputs(rng)
    out = model_forward(seg, dirs[:, None, :], rng.integers(0, 2, size=(20, 1)), params, config, rng)
    assert out.sigma.shape == (20, 1)
    assert out.rgb.shape == (20, 1, 3)
    assert np.all(out.sigma.data >= 0)
    assert np.all((out.rgb.data >= 0) & (out.rgb.data <= 1))
    if config.has_latent:
        assert np.all(np.isfinite(out.aux.loss.data))
    if config.uses_codebook:
        assert out.aux.index.shape == (20,)


@pytest.mark.parametrize("variant", ["full", "D3", "baseline"])
def test_unbounded_contracts_before_encoding(tiny_config, rng, variant):
    bounded = tiny_config(variant)
    unbounded = tiny_config(variant, unbounded=True)
    params = init_params(bounded, rng)
    seg, dirs = _inputs(rng)
    levels = rng.integers(0, 2, size=(20, 1))
    assert np.any(np.linalg.norm(seg.mu, axis=-1) > 1.0)

    out = model_forward(seg, dirs[:, None, :], levels, params, unbounded)
    expected = model_forward(contract_segment(seg), dirs[:, None, :], levels, params, bounded)
    np.testing.assert_allclose(out.sigma.data, expected.sigma.data, atol=1e-12)
    np.testing.assert_allclose(out.rgb.data, expected.rgb.data, atol=1e-12)


@pytest.mark.parametrize("variant", ["full", "D4_vae", "baseline"])
def test_unbounded_handles_far_points(tiny_config, rng, variant):
    config = tiny_config(variant, unbounded=True)
    params = init_params(config, rng)
    directions = rng.normal(size=(10, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    seg = GaussianSegment(1e6 * directions, np.full((10, 3), 1e-2))
    contracted = contract_segment(seg)
    assert np.all(np.linalg.norm(contracted.mu, axis=-1) <= 2.0)

    out = model_forward(seg, directions, 0, params, config, rng)
    assert np.all(np.isfinite(out.sigma.data)) and np.all(out.sigma.data >= 0)
    assert np.all((out.rgb.data >= 0) & (out.rgb.data <= 1))
    if config.has_latent:
        assert np.all(np.isfinite(out.aux.loss.data))


def test_per_level_codebooks(tiny_config, rng):
    config = tiny_config("full", shared_codebook=False)
    params = init_params(config, rng)
    assert "codebook/1" in params
    seg, dirs = _inputs(rng, 1)
    ids = [model_forward(seg, dirs[:, None, :], level, params, config).aux.codebook_id for level in (0, 1)]
    assert int(ids[0][0]) == 0 and int(ids[1][0]) == 1


def test_codebook_gets_no_gradient_without_vq_term(tiny_config, rng):
    config = tiny_config("full")
    values = init_params(config, rng)
    values = {k: (v + rng.normal(scale=0.1, size=v.shape) if k.startswith("router/") else v)
              for k, v in values.items()}
    graph = ad.Graph()
    params = graph.leaves(values)
    seg, dirs = _inputs(rng)
    out = model_forward(seg, dirs[:, None, :], 0, params, config)
    grads = ad.backward(graph, ad.sum(out.rgb) + ad.sum(out.sigma))
    np.testing.assert_array_equal(grads[params["codebook/0"]], 0.0)
    assert np.any(grads[params["router/1/w"]] != 0.0)


def test_parameter_ledger_identity():
    config = ModelConfig(num_levels=3)
    ledger = parameter_ledger(config)
    extras = ledger["codebook"] + ledger["encoder"] + ledger["decoder"] + ledger["router"]
    assert ledger["model"] - ledger["baseline"] == extras
    assert ledger["codebook"] == 1024 * 48
    assert ledger["model"] < 1.2 * ledger["baseline"]
    assert ledger["levelwise_baseline"] == 3 * ledger["baseline"]


def test_one_network_for_all_levels():
    counts = {parameter_count(ModelConfig(num_levels=n)) for n in (1, 2, 6)}
    assert len(counts) == 1


def test_parameter_names_per_variant():
    assert not any(n.startswith("router/") for n in parameter_shapes(ModelConfig(variant="D3")))
    assert not any(n.startswith("codebook/") for n in parameter_shapes(ModelConfig(variant="D4_vae")))
    assert parameter_shapes(ModelConfig(variant="D4_vae"))["encoder/1/w"] == (48, 96)


def test_model_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(variant="D5")
    with pytest.raises(ConfigError):
        ModelConfig(codebook_size=0)
