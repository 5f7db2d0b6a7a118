"""Regenerates metric_reference.txt with scikit-image.

Pairs are rebuilt on the Rust side from the same 64-bit LCG, so only the
scores are stored. Run: python3 metric_reference.py > metric_reference.txt
"""
import numpy as np
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

MASK = (1 << 64) - 1


def lcg(seed, n):
    state = (seed * 0x9E3779B97F4A7C15 + 1) & MASK
    out = np.empty(n)
    for i in range(n):
        state = (state * 6364136223846793005 + 1442695040888963407) & MASK
        out[i] = (state >> 11) / float(1 << 53) * 2.0 - 1.0
    return out


def pair(k):
    h, w = 16 + (7 * k) % 25, 16 + (11 * k) % 25
    n = 3 * h * w
    a = ((lcg(1000 + k, n) + 1.0) / 2.0).astype(np.float32)
    b = np.clip(a.astype(np.float64) + 0.15 * lcg(2000 + k, n), 0.0, 1.0).astype(np.float32)
    return h, w, a.reshape(3, h, w).astype(np.float64), b.reshape(3, h, w).astype(np.float64)


def luma(img):
    c = np.clip(img, 0.0, 1.0)
    return (65.481 * c[0] + 128.553 * c[1] + 24.966 * c[2] + 16.0) / 255.0


def scores(a, b, channel_axis):
    p = peak_signal_noise_ratio(a, b, data_range=1.0)
    s = structural_similarity(
        a, b, channel_axis=channel_axis, gaussian_weights=True, sigma=1.5,
        use_sample_covariance=False, data_range=1.0,
    )
    return p, s


print("# k h w psnr_rgb ssim_rgb psnr_y ssim_y")
for k in range(20):
    h, w, a, b = pair(k)
    pr, sr = scores(a, b, 0)
    py, sy = scores(luma(a), luma(b), None)
    print(f"{k} {h} {w} {float(pr)!r} {float(sr)!r} {float(py)!r} {float(sy)!r}")
