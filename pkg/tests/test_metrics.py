import numpy as np
import pytest

from layersplat.metrics import (
    PSNR_CAP_DB,
    masked_metrics,
    metrics,
    psnr,
    shift_image,
    shift_sensitivity,
    ssim,
)
from layersplat.synthetic import natural_image


def test_identical_images_hit_caps():
    img = natural_image(64, seed=1)
    p, s = metrics(img, img)
    assert p == PSNR_CAP_DB
    assert s == pytest.approx(1.0)


def test_constant_offset_psnr():
    rng = np.random.default_rng(0)
    img = rng.uniform(0.2, 0.8, (32, 32, 3))
    assert psnr(img + 0.1, img) == pytest.approx(20.0)


def _reference_psnr(a, b):
    mse = np.mean((np.asarray(a) - np.asarray(b)) ** 2)
    return 10.0 * np.log10(1.0 / mse)


def _reference_ssim(a, b):
    """Direct double-loop SSIM over valid 11x11 windows."""
    r = np.arange(11) - 5.0
    g = np.exp(-(r**2) / (2 * 1.5**2))
    g /= g.sum()
    win = np.outer(g, g)
    c1, c2 = 0.01**2, 0.03**2
    h, w = a.shape[:2]
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        for rr in range(h - 10):
            for cc in range(w - 10):
                px = x[rr : rr + 11, cc : cc + 11]
                py = y[rr : rr + 11, cc : cc + 11]
                mx = (win * px).sum()
                my = (win * py).sum()
                vx = (win * px * px).sum() - mx * mx
                vy = (win * py * py).sum() - my * my
                cxy = (win * px * py).sum() - mx * my
                vals.append(
                    ((2 * mx * my + c1) * (2 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2))
                )
    return float(np.mean(vals))


def test_metrics_match_direct_formula_oracle():
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 1, (16, 16, 3))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    p, s = metrics(a, b)
    assert p == pytest.approx(_reference_psnr(a, b), rel=1e-12)
    assert s == pytest.approx(_reference_ssim(a, b), rel=1e-9)


def test_shift_image_edge_replication():
    img = np.arange(12, dtype=float).reshape(2, 6, 1)
    out = shift_image(img, 2)
    assert np.array_equal(out[:, 2:], img[:, :4])
    assert np.array_equal(out[:, 0], img[:, 0])
    assert np.array_equal(out[:, 1], img[:, 0])


def test_shift_zero_is_cap():
    img = natural_image(64, seed=2)
    rows = shift_sensitivity(img, [0.0])
    assert rows[0].shift_pixels == 0
    assert rows[0].psnr == PSNR_CAP_DB
    assert rows[0].ssim == pytest.approx(1.0)


def test_sensitivity_monotone_on_natural_fixture():
    img = natural_image()
    rows = shift_sensitivity(img, [0.001, 0.01, 0.05])
    assert rows[0].psnr >= rows[1].psnr >= rows[2].psnr
    assert rows[0].ssim >= rows[1].ssim >= rows[2].ssim


def test_one_percent_shift_close_to_mean_image():
    img = natural_image()
    rows = shift_sensitivity(img, [0.01])
    assert abs(rows[0].psnr - rows[1].psnr) <= 3.0


def test_masked_metrics_empty_mask_not_applicable():
    img = natural_image(32, seed=3)
    p, s = masked_metrics(img, img, np.zeros((32, 32)))
    assert p is None and s is None


def test_masked_metrics_restrict_to_mask():
    rng = np.random.default_rng(4)
    a = rng.uniform(0, 1, (32, 32, 3))
    b = a.copy()
    b[:, 16:] = rng.uniform(0, 1, (32, 16, 3))  # corrupt the right half
    mask = np.zeros((32, 32))
    mask[:, :16] = 1.0
    p, s = masked_metrics(a, b, mask)
    assert p == PSNR_CAP_DB  # left half is identical
    full_p = psnr(a, b)
    assert full_p < p
