import numpy as np
import pytest
import torch

from labeldiff.enums import ChannelCollapse
from labeldiff.exceptions import ConfigError, ShapeError
from labeldiff.models.dcg import (
    DualGuidance,
    GatedAttention,
    PriorPair,
    SaliencyMap,
    greedy_centers,
    grid_centers,
    select_rois,
)


@pytest.fixture
def guidance() -> DualGuidance:
    torch.manual_seed(0)
    return DualGuidance(num_classes=3, in_channels=1, attention_dim=8, roi_count=3, roi_size=8).eval()


def spike_map(height: int, width: int, *spikes) -> SaliencyMap:
    responses = torch.zeros(1, 2, height, width)
    for row, col, value in spikes:
        responses[0, 1, row, col] = value
    return SaliencyMap(responses=responses, stride=1)


@pytest.mark.parametrize('count', [1, 3, 6])
def test_gated_attention_weights_on_simplex(count: int):
    torch.manual_seed(0)
    attention = GatedAttention(feature_dim=5, attention_dim=4)
    fused, weights = attention(torch.randn(2, count, 5))
    assert weights.shape == (2, count)
    assert torch.all(weights >= 0)
    assert torch.allclose(weights.sum(dim=1), torch.ones(2))
    assert fused.shape == (2, 5)


def test_gated_attention_identical_instances():
    attention = GatedAttention(feature_dim=4, attention_dim=3)
    h = torch.randn(1, 1, 4).repeat(1, 6, 1)
    fused, weights = attention(h)
    assert torch.allclose(weights, torch.full((1, 6), 1 / 6))
    assert torch.allclose(fused, h[:, 0], atol=1e-6)


def test_gated_attention_single_instance():
    attention = GatedAttention(feature_dim=4, attention_dim=3)
    h = torch.randn(2, 1, 4)
    fused, weights = attention(h)
    assert torch.equal(weights, torch.ones(2, 1))
    assert torch.allclose(fused, h[:, 0])


def test_global_logits_are_spatial_means(guidance: DualGuidance):
    images = torch.rand(2, 1, 32, 32, generator=torch.Generator().manual_seed(0))
    saliency, logits = guidance.global_forward(images)
    assert saliency.responses.shape == (2, 3, 2, 2)
    brute = np.array([[channel.numpy().mean() for channel in sample] for sample in saliency.responses.detach()])
    np.testing.assert_allclose(logits.detach().numpy(), brute, atol=1e-5)


def test_global_forward_zero_weights(guidance: DualGuidance):
    with torch.no_grad():
        guidance.saliency.weight.zero_()
        guidance.saliency.bias.zero_()
    saliency, logits = guidance.global_forward(torch.rand(1, 1, 32, 32))
    assert torch.count_nonzero(saliency.responses) == 0
    assert torch.count_nonzero(logits) == 0


def test_global_forward_rejects_channels(guidance: DualGuidance):
    with pytest.raises(ShapeError):
        guidance.global_forward(torch.rand(1, 3, 32, 32))


def test_grid_centers():
    assert grid_centers(6, 64, 64) == [(16, 10), (16, 32), (16, 53), (48, 10), (48, 32), (48, 53)]
    assert grid_centers(1, 64, 64) == [(32, 32)]


def test_select_rois_single_spike():
    rois = select_rois(spike_map(64, 64, (40, 20, 5.0)), torch.rand(1, 1, 64, 64), n=1, size=32)
    assert rois.centers[0, 0].tolist() == [40, 20]
    assert rois.scores[0, 0].item() == 5.0


@pytest.mark.parametrize('row, col', [(0, 0), (0, 63), (63, 0), (63, 63)])
def test_select_rois_corners_in_bounds(row: int, col: int):
    images = torch.rand(1, 1, 64, 64)
    rois = select_rois(spike_map(64, 64, (row, col, 1.0)), images, n=1, size=32)
    top, left, bottom, right = rois.boxes()[0, 0].tolist()
    assert 0 <= top and bottom <= 64 and 0 <= left and right <= 64
    assert torch.equal(rois.patches[0, 0], images[0, :, top:bottom, left:right])


def test_select_rois_constant_saliency_uses_grid():
    responses = SaliencyMap(responses=torch.ones(1, 2, 4, 4), stride=16)
    first = select_rois(responses, torch.rand(1, 1, 64, 64), n=6, size=16)
    second = select_rois(responses, torch.rand(1, 1, 64, 64), n=6, size=16)
    assert [tuple(center) for center in first.centers[0].tolist()] == grid_centers(6, 64, 64)
    assert torch.equal(first.centers, second.centers)
    assert torch.all(first.scores == 1.0)


def test_select_rois_suppresses_neighbours():
    saliency = spike_map(64, 64, (32, 20, 5.0), (32, 30, 4.0), (10, 50, 3.0))
    rois = select_rois(saliency, torch.rand(1, 1, 64, 64), n=2, size=32)
    centers = [tuple(center) for center in rois.centers[0].tolist()]
    assert centers[0] == (32, 20)
    assert (32, 30) not in centers
    assert rois.scores[0].tolist() == [5.0, 3.0]


def test_select_rois_scores_non_increasing():
    generator = torch.Generator().manual_seed(3)
    saliency = SaliencyMap(responses=torch.rand(2, 3, 8, 8, generator=generator), stride=8)
    rois = select_rois(saliency, torch.rand(2, 1, 64, 64), n=6, size=16, collapse=ChannelCollapse.SUM)
    assert rois.patches.shape == (2, 6, 1, 16, 16)
    assert torch.all(rois.scores[:, 1:] <= rois.scores[:, :-1])


def test_greedy_centers_first_maximum_wins():
    scores = np.zeros((4, 4))
    scores[1, 2] = scores[3, 0] = 1.0
    picks, _ = greedy_centers(scores, 1, 2)
    assert picks == [(1, 2)]


@pytest.mark.parametrize('n, size', [(0, 8), (2, 65)])
def test_select_rois_rejects(n: int, size: int):
    with pytest.raises(ConfigError):
        select_rois(spike_map(64, 64), torch.rand(1, 1, 64, 64), n=n, size=size)


def test_priors_are_distributions(guidance: DualGuidance):
    priors = guidance.priors(torch.rand(4, 1, 32, 32))
    for prior in (priors.y_g, priors.y_l):
        assert prior.shape == (4, 3)
        assert torch.allclose(prior.sum(dim=1), torch.ones(4))
        assert torch.all(prior >= 0)


def test_uniform_priors():
    priors = PriorPair.uniform(2, 4, like=torch.zeros(1))
    assert torch.allclose(priors.y_g, torch.full((2, 4), 0.25))
    assert torch.equal(priors.y_g, priors.y_l)
