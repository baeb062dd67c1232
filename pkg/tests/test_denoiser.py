import math

import pytest
import torch

from labeldiff.exceptions import ShapeError, TimestepError
from labeldiff.models.denoiser import ConditionalDenoiser, DenoiserConfig, ImageEmbedder, sinusoidal_embedding


@pytest.fixture
def denoiser() -> ConditionalDenoiser:
    torch.manual_seed(0)
    return ConditionalDenoiser(DenoiserConfig(num_classes=3, latent_dim=8, num_timesteps=50)).eval()


def inputs(batch_size: int = 4, num_classes: int = 3, latent_dim: int = 8):
    generator = torch.Generator().manual_seed(0)
    return (
        torch.randn(batch_size, latent_dim, generator=generator),
        torch.randn(batch_size, num_classes, generator=generator),
        torch.softmax(torch.randn(batch_size, num_classes, generator=generator), dim=1),
        torch.softmax(torch.randn(batch_size, num_classes, generator=generator), dim=1),
    )


@pytest.mark.parametrize('num_classes, latent_dim', [(4, 256), (2, 16), (7, 6144)])
def test_parameter_count(num_classes: int, latent_dim: int):
    config = DenoiserConfig(num_classes=num_classes, latent_dim=latent_dim)
    if latent_dim <= 256:
        model = ConditionalDenoiser(config)
        assert sum(parameter.numel() for parameter in model.parameters()) == config.parameter_count()
    d, k = latent_dim, num_classes
    assert config.parameter_count() == 5 * d * d + 4 * k * d + 10 * d + k


def test_parameter_count_desk():
    assert DenoiserConfig(num_classes=4, latent_dim=256).parameter_count() == 334340


def test_sinusoid_pairs_have_unit_norm():
    embedding = sinusoidal_embedding(torch.tensor([1, 17, 1000]), 16)
    pairs = embedding[:, :8] ** 2 + embedding[:, 8:] ** 2
    assert torch.allclose(pairs, torch.ones_like(pairs), atol=1e-12)


def test_sinusoid_distinguishes_endpoints():
    embedding = sinusoidal_embedding(torch.tensor([1, 1000]), 256)
    cosine = torch.nn.functional.cosine_similarity(embedding[:1], embedding[1:]).item()
    assert cosine < 1.0


def test_embed_timestep_is_a_function_of_t(denoiser: ConditionalDenoiser):
    assert torch.equal(denoiser.embed_timestep(7), denoiser.embed_timestep(7))
    assert not torch.equal(denoiser.embed_timestep(7), denoiser.embed_timestep(8))
    assert denoiser.embed_timestep(7).shape == (1, 8)


def test_forward_shapes(denoiser: ConditionalDenoiser):
    rho, y_t, y_g, y_l = inputs()
    assert denoiser(rho, y_t, y_g, y_l, 10).shape == (4, 3)
    assert denoiser(rho, y_t, y_g, y_l, torch.tensor([1, 2, 3, 50])).shape == (4, 3)


def test_zero_output_weights_give_bias(denoiser: ConditionalDenoiser):
    with torch.no_grad():
        denoiser.output.weight.zero_()
        denoiser.output.bias.copy_(torch.tensor([0.1, -0.2, 0.3]))
    rho, y_t, y_g, y_l = inputs()
    assert torch.allclose(denoiser(rho, y_t, y_g, y_l, 5), torch.tensor([0.1, -0.2, 0.3]).expand(4, 3))


def test_image_embedding_scales_hidden_state(denoiser: ConditionalDenoiser):
    rho, y_t, y_g, y_l = inputs()
    # A zero image embedding wipes out the label input before the hidden blocks.
    first = denoiser(torch.zeros_like(rho), y_t, y_g, y_l, 5)
    second = denoiser(torch.zeros_like(rho), -y_t, y_l, y_g, 5)
    assert torch.allclose(first, second)


def test_forward_rejects(denoiser: ConditionalDenoiser):
    rho, y_t, y_g, y_l = inputs()
    with pytest.raises(ShapeError):
        denoiser(rho, y_t[:, :2], y_g, y_l, 5)
    with pytest.raises(ShapeError):
        denoiser(rho[:, :4], y_t, y_g, y_l, 5)
    with pytest.raises(TimestepError):
        denoiser(rho, y_t, y_g, y_l, 51)
    with pytest.raises(TimestepError):
        denoiser(rho, y_t, y_g, y_l, 0)


def test_image_embedder():
    torch.manual_seed(0)
    embedder = ImageEmbedder(in_channels=1, latent_dim=12).eval()
    with torch.no_grad():
        embedder.projection.bias.zero_()
    first = embedder(torch.zeros(2, 1, 64, 64))
    assert first.shape == (2, 12)
    assert torch.all(torch.isfinite(first))
    assert torch.equal(first, embedder(torch.zeros(2, 1, 64, 64)))
    with pytest.raises(ShapeError):
        embedder(torch.zeros(2, 3, 64, 64))


def test_hidden_blocks_use_softplus_and_batch_norm(denoiser: ConditionalDenoiser):
    assert len(denoiser.hidden) == len(denoiser.norms) == len(denoiser.hidden_times) == 2
    assert all(isinstance(norm, torch.nn.BatchNorm1d) for norm in denoiser.norms)
    assert denoiser.output.out_features == 3
    assert math.prod(denoiser.output.weight.shape) == 3 * 8


def test_parameter_gradients_match_central_differences(denoiser: ConditionalDenoiser):
    denoiser = denoiser.double()
    rho, y_t, y_g, y_l = (tensor.double() for tensor in inputs())
    t = torch.tensor([3, 11, 27, 50])

    def loss() -> torch.Tensor:
        return denoiser(rho, y_t, y_g, y_l, t).pow(2).sum()

    denoiser.zero_grad()
    loss().backward()
    parameters = list(denoiser.parameters())
    generator = torch.Generator().manual_seed(1)
    h = 1e-6
    for _ in range(10):
        parameter = parameters[torch.randint(len(parameters), (), generator=generator).item()]
        index = torch.randint(parameter.numel(), (), generator=generator).item()
        flat = parameter.data.view(-1)
        original = flat[index].item()
        with torch.no_grad():
            flat[index] = original + h
            upper = loss().item()
            flat[index] = original - h
            lower = loss().item()
            flat[index] = original
        numeric = (upper - lower) / (2 * h)
        analytic = parameter.grad.view(-1)[index].item()
        assert analytic == pytest.approx(numeric, rel=1e-5, abs=1e-8)


def test_rows_are_independent_in_eval_mode(denoiser: ConditionalDenoiser):
    rho, y_t, y_g, y_l = inputs(batch_size=6)
    t = torch.tensor([1, 5, 9, 20, 33, 50])
    with torch.no_grad():
        alone = denoiser(rho[:2], y_t[:2], y_g[:2], y_l[:2], t[:2])
        padded = denoiser(rho, y_t, y_g, y_l, t)[:2]
        shuffled = denoiser(rho.flip(0), y_t.flip(0), y_g.flip(0), y_l.flip(0), t.flip(0)).flip(0)[:2]
    torch.testing.assert_close(padded, alone)
    torch.testing.assert_close(shuffled, alone)
