"""
Strata-NeRF - Self Check
========================

Numerical oracles run by ``strata-nerf selfcheck``:

- central-difference gradient checks for every autodiff primitive and for
  ``mse(render_ray(...))`` on a two-segment toy field
- quantizer vs. a brute-force nearest-row scan, constructed ties included,
  and the straight-through identity Jacobian
- homogeneous-medium rendering vs. its closed form, and weight normalization
- zero-router equivalence of the full model with the baseline
- the parameter ledger identity
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .field import (
    FieldOutput,
    LatentAux,
    ModelConfig,
    init_params,
    model_forward,
    parameter_ledger,
    parameter_shapes,
    quantize,
)
from .encoding import segment_gaussians
from .rendering import Ray, RayBatch, render_ray, render_rays, stratified_sample, stratified_samples

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-5
COMPOSITE_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


# ------------------------------------------------------------
# Primitive gradient cases
# ------------------------------------------------------------

_W6 = np.array([0.7, -1.3, 0.4, 1.1, -0.6, 0.9])
_W3x2 = np.array([[0.5, -1.0], [1.5, 0.25], [-0.75, 2.0]])
_W2x2 = np.array([[1.2, -0.4], [0.3, 0.8]])


def _normal(rng: np.random.Generator, n: int = 6) -> np.ndarray:
    return rng.normal(size=n)


def _positive(rng: np.random.Generator, n: int = 6) -> np.ndarray:
    return rng.uniform(0.5, 2.0, size=n)


def _away_from_zero(rng: np.random.Generator, n: int = 6) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=n) * rng.uniform(1e-3 + 0.05, 2.0, size=n)


def _separated_pairs(rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=3)
    return np.concatenate([a, a + _away_from_zero(rng, 3)])


def _halves(x: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    return ad.take(x, [0, 1, 2]), ad.take(x, [3, 4, 5])


def _weighted(y: ad.Tensor) -> ad.Tensor:
    return ad.sum(y * _W6[: y.shape[-1]] if y.ndim == 1 else y)


def _binary_case(op: Callable[[ad.Tensor, ad.Tensor], ad.Tensor]) -> Callable[[ad.Tensor], ad.Tensor]:
    def f(x: ad.Tensor) -> ad.Tensor:
        a, b = _halves(x)
        return _weighted(op(a, b))
    return f


def _unary_case(op: Callable[[ad.Tensor], ad.Tensor]) -> Callable[[ad.Tensor], ad.Tensor]:
    return lambda x: _weighted(op(x))


PointFn = Callable[[np.random.Generator], np.ndarray]

# op kind -> (scalar function of a 6-vector, point sampler)
PRIMITIVE_CASES: dict[str, tuple[Callable[[ad.Tensor], ad.Tensor], PointFn]] = {
    "add": (_binary_case(ad.add), _normal),
    "subtract": (_binary_case(ad.subtract), _normal),
    "multiply": (_binary_case(ad.multiply), _normal),
    "divide": (_binary_case(ad.divide), lambda rng: np.concatenate([rng.normal(size=3), _positive(rng, 3)])),
    "maximum": (_binary_case(ad.maximum), _separated_pairs),
    "negate": (_unary_case(lambda x: -x), _normal),
    "relu": (_unary_case(ad.relu), _away_from_zero),
    "softplus": (_unary_case(ad.softplus), _normal),
    "sigmoid": (_unary_case(ad.sigmoid), _normal),
    "exp": (_unary_case(ad.exp), _normal),
    "log": (_unary_case(ad.log), _positive),
    "sin": (_unary_case(ad.sin), _normal),
    "cos": (_unary_case(ad.cos), _normal),
    "square": (_unary_case(ad.square), _normal),
    "sqrt": (_unary_case(ad.sqrt), _positive),
    "abs": (_unary_case(ad.abs), _away_from_zero),
    "matmul": (lambda x: ad.sum(ad.matmul(ad.reshape(x, (2, 3)), _W3x2) * _W2x2), _normal),
    "sum": (lambda x: ad.sum(ad.square(ad.sum(ad.reshape(x, (2, 3)), axis=0))), _normal),
    "mean": (lambda x: ad.sum(ad.square(ad.mean(ad.reshape(x, (2, 3)), axis=1, keepdims=True))), _normal),
    "broadcast": (lambda x: ad.sum(ad.broadcast_to(ad.reshape(x, (2, 1, 3)), (2, 2, 3)) * _W3x2.T), _normal),
    "reshape": (lambda x: ad.sum(ad.reshape(x, (3, 2)) * _W3x2), _normal),
    "concat": (lambda x: _weighted(ad.concat(list(_halves(ad.square(x)))[::-1], axis=0)), _normal),
    "gather_rows": (lambda x: ad.sum(ad.gather_rows(ad.reshape(x, (3, 2)), [2, 0, 2]) * _W3x2), _normal),
    "take": (lambda x: _weighted(ad.take(ad.square(x), [5, 0, 3, 3, 1, 2])), _normal),
    "cumsum": (lambda x: _weighted(ad.cumsum(x, exclusive=True)) + ad.sum(ad.square(ad.cumsum(x))), _normal),
}


def check_primitive(kind: str, rng: np.random.Generator, points: int = 20, h: float = 1e-5) -> float:
    """Worst relative gradient error of ``kind`` over ``points`` random points."""
    f, sample = PRIMITIVE_CASES[kind]
    return max(ad.gradient_check(f, sample(rng), h) for _ in range(points))


def check_stop_gradient(rng: np.random.Generator) -> float:
    """Largest gradient magnitude through stop_gradient; must be exactly 0."""
    graph = ad.Graph()
    x = graph.leaf(rng.normal(size=6))
    grads = ad.backward(graph, ad.sum(ad.stop_gradient(x) * _W6))
    return float(np.max(np.abs(grads[x])))


# ------------------------------------------------------------
# Rendering oracles
# ------------------------------------------------------------

def constant_field(sigma: float, color) -> Callable:
    """Homogeneous medium: the same density and colour everywhere."""
    color = np.asarray(color, dtype=np.float64)

    def field(seg, view_dirs, levels):
        shape = seg.batch_shape
        return FieldOutput(
            ad.Tensor(np.broadcast_to(color, (*shape, 3)).copy()),
            ad.Tensor(np.full(shape, float(sigma))),
            LatentAux(),
        )

    return field


def homogeneous_closed_form(sigma: float, color, background, length: float) -> np.ndarray:
    t = math.exp(-sigma * length)
    return np.asarray(color) * (1.0 - t) + t * np.asarray(background)


def check_homogeneous(rng: np.random.Generator, configs: int = 3, num_samples: int = 256) -> float:
    worst = 0.0
    ray = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), 1.0, 3.0, 0.01)
    for _ in range(configs):
        sigma = rng.uniform(0.1, 3.0)
        color = rng.uniform(size=3)
        background = rng.uniform(size=3)
        samples = stratified_sample(ray, num_samples)
        rendered, _, _ = render_ray(ray, samples, constant_field(sigma, color), background)
        expected = homogeneous_closed_form(sigma, color, background, ray.far - ray.near)
        worst = max(worst, float(np.max(np.abs(rendered.data - expected))))
    return worst


def check_weight_normalization(rng: np.random.Generator, rays: int = 10_000, num_samples: int = 32) -> float:
    directions = rng.normal(size=(rays, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    near = rng.uniform(0.1, 1.0, size=rays)
    batch = RayBatch(rng.normal(size=(rays, 3)), directions, near, near + rng.uniform(0.5, 4.0, size=rays),
                     np.full(rays, 0.01), np.zeros(rays, dtype=np.int64))
    sigma = rng.uniform(0.0, 5.0, size=(rays, num_samples))

    def field(seg, view_dirs, levels):
        return FieldOutput(ad.Tensor(np.full((*seg.batch_shape, 3), 0.5)), ad.Tensor(sigma), LatentAux())

    samples = stratified_samples(batch.near, batch.far, num_samples, rng, jittered=True)
    result = render_rays(batch, samples, field, np.zeros(3))
    total = result.weights.data.sum(axis=-1) + result.transmittance_final
    return float(np.max(np.abs(total - 1.0)))


def composite_render_error(rng: np.random.Generator) -> float:
    """Gradient check of mse(render_ray(...)) w.r.t. a two-segment toy field's raw outputs."""
    ray = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), 1.0, 3.0, 0.01)
    samples = stratified_sample(ray, 2)
    target = rng.uniform(size=3)
    background = rng.uniform(size=3)

    def f(x: ad.Tensor) -> ad.Tensor:
        sigma = ad.softplus(ad.reshape(ad.take(x, [0, 1]), (1, 2)))
        rgb = ad.sigmoid(ad.reshape(ad.take(x, [2, 3, 4, 5, 6, 7]), (1, 2, 3)))
        color, _, _ = render_ray(ray, samples, lambda seg, d, lv: FieldOutput(rgb, sigma, LatentAux()), background)
        return ad.mse(color, target)

    return ad.gradient_check(f, rng.normal(size=8))


# ------------------------------------------------------------
# Quantizer and field oracles
# ------------------------------------------------------------

def brute_force_nearest(z: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    out = np.empty(len(z), dtype=np.int64)
    for i, row in enumerate(z):
        best, best_index = math.inf, -1
        for j, code in enumerate(codebook):
            d = float(np.sum((row - code) ** 2))
            if d < best:
                best, best_index = d, j
        out[i] = best_index
    return out


def quantizer_case(rng: np.random.Generator, case: int) -> tuple[np.ndarray, np.ndarray]:
    n = int(rng.integers(1, 17))
    d = int(rng.integers(1, 6))
    codebook = rng.normal(size=(n, d))
    z = rng.normal(size=(int(rng.integers(1, 9)), d))
    if case % 4 == 0 and n > 1:
        # duplicated rows: ties resolve to the lowest index
        codebook[rng.integers(0, n)] = codebook[rng.integers(0, n)]
        z[0] = codebook[int(rng.integers(0, n))]
    elif case % 4 == 1:
        # midpoint between two codes
        codebook = np.round(codebook)
        z = np.round(z * 2.0) / 2.0
    return z, codebook


def check_quantizer(rng: np.random.Generator, cases: int = 1000) -> int:
    """Number of cases where quantize disagrees with the brute-force scan."""
    mismatches = 0
    for case in range(cases):
        z, codebook = quantizer_case(rng, case)
        if not np.array_equal(quantize(z, codebook).index, brute_force_nearest(z, codebook)):
            mismatches += 1
    return mismatches


def straight_through_error(rng: np.random.Generator) -> float:
    graph = ad.Graph()
    z = graph.leaf(rng.normal(size=(5, 4)))
    weights = rng.normal(size=(5, 4))
    q = quantize(z, rng.normal(size=(7, 4)))
    grads = ad.backward(graph, ad.sum(q.z_st * weights))
    return float(np.max(np.abs(grads[z] - weights)))


def tiny_model(variant: str = "full", **overrides) -> ModelConfig:
    values = dict(variant=variant, codebook_size=16, latent_dim=8, trunk_depth=4, trunk_width=32,
                  trunk_skip=2, color_width=16, encoder_hidden=16, decoder_hidden=16,
                  position_bands=4, direction_bands=2, num_levels=2)
    values.update(overrides)
    return ModelConfig(**values)


def check_zero_router(rng: np.random.Generator, inputs: int = 100) -> bool:
    full = tiny_model("full")
    baseline = tiny_model("baseline")
    params = init_params(full, rng)
    base_params = {name: params[name] for name in parameter_shapes(baseline)}
    origins = rng.normal(size=(inputs, 3))
    directions = rng.normal(size=(inputs, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    edges = np.sort(rng.uniform(0.5, 3.0, size=(inputs, 2)), axis=1)
    seg = segment_gaussians(origins, directions, edges, np.full(inputs, 0.01))
    levels = rng.integers(0, 2, size=(inputs, 1))
    a = model_forward(seg, directions[:, None, :], levels, params, full)
    b = model_forward(seg, directions[:, None, :], levels, base_params, baseline)
    return np.array_equal(a.rgb.data, b.rgb.data) and np.array_equal(a.sigma.data, b.sigma.data)


def check_ledger(config: ModelConfig) -> bool:
    ledger = parameter_ledger(config)
    extra = ledger["codebook"] + ledger["encoder"] + ledger["decoder"] + ledger["router"]
    return ledger["model"] - ledger["baseline"] == extra


# ------------------------------------------------------------
# Runner
# ------------------------------------------------------------

def run_selfcheck(seed: int = 0, points: int = 20) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []

    for kind in sorted(PRIMITIVE_CASES):
        error = check_primitive(kind, rng, points)
        results.append(CheckResult(f"grad/{kind}", error < GRADIENT_TOLERANCE, f"max rel err {error:.2e}"))
    leak = check_stop_gradient(rng)
    results.append(CheckResult("grad/stop_gradient", leak == 0.0, f"max |grad| {leak:.1e}"))
    error = composite_render_error(rng)
    results.append(CheckResult("grad/mse_render_ray", error < COMPOSITE_TOLERANCE, f"max rel err {error:.2e}"))

    mismatches = check_quantizer(rng)
    results.append(CheckResult("quantize/brute_force", mismatches == 0, f"{mismatches} mismatches in 1000 cases"))
    error = straight_through_error(rng)
    results.append(CheckResult("quantize/straight_through", error < 1e-10, f"max err {error:.1e}"))

    error = check_homogeneous(rng)
    results.append(CheckResult("render/homogeneous", error < 1e-3, f"max err {error:.2e}"))
    error = check_weight_normalization(rng)
    results.append(CheckResult("render/weight_sum", error < 1e-12, f"max err {error:.1e}"))

    results.append(CheckResult("field/zero_router", check_zero_router(rng), "full == baseline on 100 inputs"))
    results.append(CheckResult("field/ledger", check_ledger(ModelConfig(num_levels=3)), "N=1024, D=48"))

    failed = [r.name for r in results if not r.passed]
    logger.info("selfcheck: %d checks, %d failed%s", len(results), len(failed),
                f" ({', '.join(failed)})" if failed else "")
    return results
