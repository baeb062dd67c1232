import math

import pytest
import torch

from labeldiff.diffusion.schedule import NoiseSchedule, forward_sample
from labeldiff.enums import MMDEstimator
from labeldiff.exceptions import ConfigError, LabelError, ShapeError
from labeldiff.objectives import (
    MMDConfig,
    branch_noisy_sample,
    dcg_ce_loss,
    kernel_mean,
    mmd_loss,
    noise_loss,
    total_loss,
)


def brute_force_mmd(n: torch.Tensor, m: torch.Tensor, bandwidth_sq, unbiased: bool = False) -> float:
    def k(a, b):
        distance = sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))
        return sum(math.exp(-distance / (2 * sigma_sq)) for sigma_sq in bandwidth_sq) / len(bandwidth_sq)

    def mean(a, b, skip_diagonal):
        total, count = 0.0, 0
        for i in range(len(a)):
            for j in range(len(b)):
                if skip_diagonal and i == j:
                    continue
                total += k(a[i], b[j])
                count += 1
        return total / count

    return mean(n, n, unbiased) - 2 * mean(m, n, False) + mean(m, m, unbiased)


def test_noise_loss():
    assert noise_loss(torch.tensor([[1.0, 0.0]]), torch.zeros(1, 2)).item() == 1.0
    eps = torch.randn(5, 3)
    assert noise_loss(eps, eps.clone()).item() == 0.0


def test_noise_loss_matches_double_loop():
    generator = torch.Generator().manual_seed(5)
    eps = torch.randn(9, 4, generator=generator, dtype=torch.float64)
    eps_hat = torch.randn(9, 4, generator=generator, dtype=torch.float64)
    total = 0.0
    for i in range(9):
        for k in range(4):
            total += (float(eps[i, k]) - float(eps_hat[i, k])) ** 2
    assert noise_loss(eps, eps_hat).item() == pytest.approx(total / 9, rel=1e-12)


@pytest.mark.parametrize('batch_size', [2, 8, 32])
@pytest.mark.parametrize('num_classes', [2, 7])
@pytest.mark.parametrize('estimator', list(MMDEstimator))
def test_mmd_matches_brute_force(batch_size: int, num_classes: int, estimator: MMDEstimator):
    generator = torch.Generator().manual_seed(batch_size * num_classes)
    n = torch.randn(batch_size, num_classes, generator=generator, dtype=torch.float64)
    m = 0.5 + torch.randn(batch_size, num_classes, generator=generator, dtype=torch.float64)
    cfg = MMDConfig(estimator=estimator)
    expected = brute_force_mmd(n, m, cfg.bandwidth_sq, unbiased=estimator == MMDEstimator.UNBIASED)
    assert mmd_loss(n, m, cfg).item() == pytest.approx(expected, abs=1e-6)


def test_mmd_of_identical_batches_is_zero():
    a = torch.randn(8, 4, dtype=torch.float64)
    assert mmd_loss(a, a.clone()).item() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize('estimator', list(MMDEstimator))
def test_mmd_ignores_row_order(estimator: MMDEstimator):
    generator = torch.Generator().manual_seed(2)
    n = torch.randn(10, 3, generator=generator, dtype=torch.float64)
    m = 0.3 + torch.randn(10, 3, generator=generator, dtype=torch.float64)
    cfg = MMDConfig(estimator=estimator)
    expected = mmd_loss(n, m, cfg).item()
    for _ in range(3):
        shuffled_n = n[torch.randperm(10, generator=generator)]
        shuffled_m = m[torch.randperm(10, generator=generator)]
        assert mmd_loss(shuffled_n, shuffled_m, cfg).item() == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_mmd_non_negative():
    generator = torch.Generator().manual_seed(5)
    for _ in range(20):
        n, m = torch.randn(2, 6, 3, generator=generator, dtype=torch.float64)
        assert mmd_loss(n, m).item() >= -1e-9


def test_kernel_mean_singletons():
    x = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
    y = torch.tensor([[1.0, 1.0]], dtype=torch.float64)
    value = kernel_mean(x, x, (2.0,)) - 2 * kernel_mean(y, x, (2.0,)) + kernel_mean(y, y, (2.0,))
    assert value.item() == pytest.approx(2 - 2 * math.exp(-1 / 4))


def test_mmd_gradient_matches_finite_differences():
    generator = torch.Generator().manual_seed(11)
    n = torch.randn(6, 3, generator=generator, dtype=torch.float64)
    m = torch.randn(6, 3, generator=generator, dtype=torch.float64, requires_grad=True)
    mmd_loss(n, m).backward()
    step = 1e-6
    for index in [(0, 0), (2, 1), (5, 2)]:
        shifted_up, shifted_down = m.detach().clone(), m.detach().clone()
        shifted_up[index] += step
        shifted_down[index] -= step
        numeric = (mmd_loss(n, shifted_up) - mmd_loss(n, shifted_down)).item() / (2 * step)
        analytic = m.grad[index].item()
        assert abs(numeric - analytic) <= 1e-2 * max(abs(analytic), 1e-8)


def test_mmd_rejects():
    with pytest.raises(ShapeError):
        mmd_loss(torch.zeros(1, 3), torch.zeros(1, 3))
    with pytest.raises(ShapeError):
        mmd_loss(torch.zeros(4, 3), torch.zeros(4, 2))


@pytest.mark.parametrize('cfg', [MMDConfig(weight=-1.0), MMDConfig(bandwidth_sq=()), MMDConfig(bandwidth_sq=(1.0, 0.0))])
def test_mmd_config_validate(cfg: MMDConfig):
    with pytest.raises(ConfigError):
        cfg.validate()


def test_branch_noisy_sample(short_schedule: NoiseSchedule):
    generator = torch.Generator().manual_seed(0)
    y0 = torch.eye(3, dtype=torch.float64)
    prior = torch.softmax(torch.randn(3, 3, generator=generator, dtype=torch.float64), dim=1)
    eps = torch.randn(3, 3, generator=generator, dtype=torch.float64)
    t = torch.tensor([1, 4, 10])
    assert torch.equal(branch_noisy_sample(y0, prior, t, eps, short_schedule), forward_sample(y0, prior, t, eps, short_schedule))
    assert torch.allclose(branch_noisy_sample(y0, y0, t, torch.zeros_like(eps), short_schedule), y0)


@pytest.mark.parametrize('args, expected', [
    ((1.0, 0.2, 0.4, 0.5), 1.3),
    ((1.0, 0.2, 0.4, 0.0), 1.0),
])
def test_total_loss(args, expected: float):
    loss_eps, g, l, weight = args
    assert total_loss(torch.tensor(loss_eps), torch.tensor(g), torch.tensor(l), weight).item() == pytest.approx(expected)


def test_total_loss_rejects_negative_weight():
    with pytest.raises(ConfigError):
        total_loss(torch.tensor(1.0), torch.tensor(0.0), torch.tensor(0.0), -0.1)


def test_default_mmd_weight():
    assert MMDConfig().weight == 0.5


@pytest.mark.parametrize('num_classes', [2, 4, 7])
def test_dcg_ce_loss_uniform(num_classes: int):
    logits = torch.zeros(3, num_classes)
    loss = dcg_ce_loss(logits, logits, torch.tensor([0, 1, 1]))
    assert loss.item() == pytest.approx(2 * math.log(num_classes), rel=1e-6)


def test_dcg_ce_loss_saturated():
    logits = torch.nn.functional.one_hot(torch.tensor([2, 0]), 3).float() * 1e6
    assert dcg_ce_loss(logits, logits, torch.tensor([2, 0])).item() == pytest.approx(0.0, abs=1e-6)


def test_dcg_ce_loss_matches_softmax_oracle():
    generator = torch.Generator().manual_seed(8)
    y_g = 3 * torch.randn(6, 5, generator=generator, dtype=torch.float64)
    y_l = 3 * torch.randn(6, 5, generator=generator, dtype=torch.float64)
    labels = torch.randint(0, 5, (6,), generator=generator)

    def cross_entropy(logits: torch.Tensor) -> float:
        total = 0.0
        for row, label in zip(logits.tolist(), labels.tolist()):
            top = max(row)
            log_partition = top + math.log(sum(math.exp(value - top) for value in row))
            total += log_partition - row[label]
        return total / len(labels)

    expected = cross_entropy(y_g) + cross_entropy(y_l)
    assert dcg_ce_loss(y_g, y_l, labels).item() == pytest.approx(expected, rel=1e-10)


def test_dcg_ce_loss_rejects_labels():
    with pytest.raises(LabelError):
        dcg_ce_loss(torch.zeros(2, 3), torch.zeros(2, 3), torch.tensor([0, 3]))
