import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mrsrgan.errors import ConfigError, ShapeError
from mrsrgan.model import (
    DiscriminatorConfig,
    GeneratorConfig,
    UpscaleStage,
    build_discriminator,
    build_generator,
    count_parameters,
    discriminator_forward,
    generator_forward,
    pixel_shuffle_aniso,
    pixel_unshuffle_aniso,
    upscale_parameter_count,
)

TINY = dict(base_channels=4, num_residual_blocks=1)


def shuffle_oracle(x, rh, rw):
    n, ch, h, w = x.shape
    c = ch // (rh * rw)
    out = np.empty((n, c, h * rh, w * rw), dtype=x.dtype)
    for b, k, y, z, i, j in itertools.product(range(n), range(c), range(h), range(w), range(rh), range(rw)):
        out[b, k, y * rh + i, z * rw + j] = x[b, k * rh * rw + i * rw + j, y, z]
    return out


# -- pixel shuffle -----------------------------------------------------------


def test_shuffle_identity(rng):
    x = rng.random((2, 3, 4, 5))
    assert np.array_equal(pixel_shuffle_aniso(x, 1, 1), x)


def test_shuffle_height_only_example():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    x = np.array([[[[a, b]], [[c, d]]]])
    assert x.shape == (1, 2, 1, 2)
    out = pixel_shuffle_aniso(x, 2, 1)
    assert out.tolist() == [[[[a, b], [c, d]]]]


def test_shuffle_iso_multiset(rng):
    x = rng.random((1, 4, 3, 3))
    out = pixel_shuffle_aniso(x, 2, 2)
    assert out.shape == (1, 1, 6, 6)
    assert np.array_equal(np.sort(out.ravel()), np.sort(x.ravel()))
    assert np.array_equal(out, shuffle_oracle(x, 2, 2))


@pytest.mark.parametrize("rh,rw", [(2, 1), (1, 2), (2, 3), (4, 2)])
def test_shuffle_matches_oracle_torch_and_numpy(rng, rh, rw):
    x = rng.random((2, 2 * rh * rw, 3, 4))
    expected = shuffle_oracle(x, rh, rw)
    assert np.array_equal(pixel_shuffle_aniso(x, rh, rw), expected)
    assert np.array_equal(pixel_shuffle_aniso(torch.from_numpy(x), rh, rw).numpy(), expected)


def test_shuffle_matches_torch_builtin_when_isotropic(rng):
    x = torch.from_numpy(rng.random((2, 12, 3, 4)))
    assert torch.equal(pixel_shuffle_aniso(x, 2, 2), torch.nn.functional.pixel_shuffle(x, 2))


def test_shuffle_bad_channels(rng):
    with pytest.raises(ShapeError):
        pixel_shuffle_aniso(rng.random((1, 3, 2, 2)), 2, 1)
    with pytest.raises(ShapeError):
        pixel_unshuffle_aniso(rng.random((1, 1, 3, 2)), 2, 1)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31)
)
def test_shuffle_bijection(rh, rw, c, h, w, seed):
    x = np.random.default_rng(seed).random((2, c * rh * rw, h, w))
    assert np.array_equal(pixel_unshuffle_aniso(pixel_shuffle_aniso(x, rh, rw), rh, rw), x)
    t = torch.from_numpy(x)
    assert torch.equal(pixel_unshuffle_aniso(pixel_shuffle_aniso(t, rh, rw), rh, rw), t)


# -- config ------------------------------------------------------------------


def test_stage_validation():
    with pytest.raises(ConfigError):
        UpscaleStage(1, 1)
    with pytest.raises(ConfigError):
        UpscaleStage(0, 2)
    with pytest.raises(ConfigError):
        GeneratorConfig(stages=((2, 2), (2, 2), (2, 2), (2, 1)))  # 16 on height
    with pytest.raises(ConfigError):
        GeneratorConfig(stages=((3, 1),))
    with pytest.raises(ConfigError):
        GeneratorConfig.for_factors(16, 1)


def test_for_factors():
    assert GeneratorConfig.for_factors(8, 1).stages == (UpscaleStage(2, 1),) * 3
    assert GeneratorConfig.for_factors(4, 4).stages == (UpscaleStage(2, 2),) * 2
    assert GeneratorConfig.for_factors(8, 2).scale == (8, 2)


def test_config_dict_roundtrip():
    cfg = GeneratorConfig.for_factors(8, 1, **TINY)
    assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg


def test_discriminator_config_validation():
    with pytest.raises(ConfigError):
        DiscriminatorConfig(image_size=100)


# -- generator ---------------------------------------------------------------


@pytest.mark.parametrize(
    "stages,inp",
    [
        (((2, 2), (2, 2)), (56, 56)),
        (((2, 1), (2, 1), (2, 1)), (28, 224)),
        (((2, 2), (2, 2), (2, 2)), (28, 28)),
    ],
)
def test_full_size_generator_shapes(torch_threads, stages, inp):
    g = build_generator(GeneratorConfig(stages=stages), seed=0)
    out = generator_forward(g, np.random.default_rng(0).random((1, 1, *inp)).astype(np.float32))
    assert out.shape == (1, 1, 224, 224)
    assert np.all(np.isfinite(out)) and out.min() >= 0 and out.max() <= 1


def test_full_size_batch_iso8(torch_threads):
    g = build_generator(GeneratorConfig.for_factors(8, 8), seed=0)
    out = generator_forward(g, np.random.default_rng(1).random((16, 1, 28, 28)).astype(np.float32))
    assert out.shape == (16, 1, 224, 224)


def test_zero_input_bounded():
    g = build_generator(GeneratorConfig.for_factors(4, 4, **TINY), seed=0)
    out = generator_forward(g, np.zeros((2, 1, 8, 8), dtype=np.float32))
    assert np.all(np.isfinite(out)) and out.min() >= 0 and out.max() <= 1


def test_generator_deterministic_init():
    cfg = GeneratorConfig.for_factors(2, 2, **TINY)
    a, b, c = build_generator(cfg, 5), build_generator(cfg, 5), build_generator(cfg, 6)
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert not all(torch.equal(sa[k], sc[k]) for k in sa)


def test_generator_init_does_not_touch_global_rng():
    torch.manual_seed(123)
    before = torch.rand(1)
    torch.manual_seed(123)
    build_generator(GeneratorConfig.for_factors(2, 2, **TINY), 9)
    assert torch.equal(torch.rand(1), before)


def test_generator_shape_errors():
    g = build_generator(GeneratorConfig.for_factors(2, 2, **TINY))
    with pytest.raises(ShapeError):
        g(torch.zeros(1, 3, 8, 8))
    with pytest.raises(ShapeError):
        g(torch.zeros(8, 8))


def test_parameters_finite_and_consistent():
    cfg = GeneratorConfig.for_factors(8, 1, base_channels=8, num_residual_blocks=2)
    g = build_generator(cfg)
    assert all(torch.isfinite(p).all() for p in g.parameters())
    assert g.head[0].weight.shape == (8, 1, 9, 9)
    assert g.tail.weight.shape == (1, 8, 9, 9)
    assert [blk[0].weight.shape[0] for blk in g.upscale] == [16, 16, 16]


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from([(2, 1), (4, 1), (8, 1), (2, 2), (4, 4), (8, 8), (1, 2), (4, 2), (8, 4), (2, 8)]),
    st.integers(1, 12),
    st.integers(1, 12),
    st.booleans(),
)
def test_generator_shape_law(factors, h, w, shuffled):
    cfg = GeneratorConfig.for_factors(*factors, base_channels=2, num_residual_blocks=1)
    if shuffled:
        cfg = GeneratorConfig(base_channels=2, num_residual_blocks=1, stages=tuple(reversed(cfg.stages)))
    g = build_generator(cfg)
    out = generator_forward(g, np.random.default_rng(h * w).random((1, 1, h, w)).astype(np.float32))
    assert out.shape == (1, 1, h * factors[0], w * factors[1])


def test_parameter_count_difference():
    iso = build_generator(GeneratorConfig.for_factors(8, 8))
    aniso = build_generator(GeneratorConfig.for_factors(8, 1))
    for g in (iso, aniso):
        assert upscale_parameter_count(g.cfg) == count_parameters(g.upscale)
    c = 64
    # each of three stages: conv C -> 4C vs C -> 2C
    expected_diff = 3 * (9 * c * c * 2 + c * 2)
    assert count_parameters(iso) - count_parameters(aniso) == expected_diff
    assert count_parameters(iso.head) + count_parameters(iso.trunk) + count_parameters(iso.tail) == (
        count_parameters(aniso.head) + count_parameters(aniso.trunk) + count_parameters(aniso.tail)
    )


def _relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def test_generator_gradient_check():
    g = build_generator(GeneratorConfig.for_factors(2, 2, **TINY), seed=0).double()
    g.train()
    gen = torch.Generator().manual_seed(0)
    x = torch.rand(2, 1, 8, 8, generator=gen, dtype=torch.float64)
    target = torch.rand(2, 1, 16, 16, generator=gen, dtype=torch.float64)

    def loss():
        return torch.mean((g(x) - target) ** 2)

    loss().backward()
    eps = 1e-6
    for name, p in [("head", g.head[0].weight), ("up", g.upscale[0][0].weight), ("tail", g.tail.bias)]:
        flat = p.data.view(-1)
        idx = torch.randperm(flat.numel(), generator=gen)[:10]
        numeric = []
        with torch.no_grad():
            for i in idx:
                old = flat[i].item()
                flat[i] = old + eps
                plus = loss().item()
                flat[i] = old - eps
                minus = loss().item()
                flat[i] = old
                numeric.append((plus - minus) / (2 * eps))
        analytic = p.grad.view(-1)[idx].numpy()
        assert _relative_error(analytic, np.array(numeric)) < 1e-3, name


# -- discriminator -----------------------------------------------------------


def test_discriminator_full_size_batch(torch_threads):
    d = build_discriminator(DiscriminatorConfig(), seed=0)
    x = np.random.default_rng(2).random((16, 1, 224, 224)).astype(np.float32)
    p = discriminator_forward(d, x)
    assert p.shape == (16,)
    assert np.all((p > 0) & (p < 1))


def test_discriminator_duplicates_identical():
    d = build_discriminator(DiscriminatorConfig(base_channels=4, image_size=32, dense_units=8), seed=1)
    one = np.random.default_rng(3).random((1, 1, 32, 32)).astype(np.float32)
    p = discriminator_forward(d, np.concatenate([one, one, one]))
    assert p[0] == p[1] == p[2]


def test_discriminator_wrong_size():
    d = build_discriminator(DiscriminatorConfig(base_channels=4, image_size=32, dense_units=8))
    with pytest.raises(ShapeError):
        d(torch.zeros(1, 1, 224, 224))
    with pytest.raises(ShapeError):
        d(torch.zeros(1, 1, 32, 16))


def test_discriminator_saturated_output_stays_open():
    d = build_discriminator(DiscriminatorConfig(base_channels=4, image_size=16, dense_units=8))
    with torch.no_grad():
        d.classifier[-1].bias.fill_(1e4)
    d.eval()
    p = d(torch.rand(2, 1, 16, 16))
    assert torch.all(p < 1) and torch.all(p > 0)
