#!/usr/bin/env python3
"""Generates the frozen PSNR/SSIM reference values used by the Rust tests.

Images are produced by a SplitMix64 generator so the Rust side can rebuild
bit-identical inputs without shipping binary fixtures. SSIM follows Wang et
al. 2004 defaults: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
dynamic range 1.0, population covariance, mean over fully valid windows,
channels averaged. scikit-image is the reference; an independent direct
implementation cross-checks it before any value is emitted.
"""

import json
import sys

import numpy as np
from skimage.metrics import structural_similarity

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def next_f64(self):
        return (self.next_u64() >> 11) / float(1 << 53)


def image(seed, height, width, channels):
    gen = SplitMix64(seed)
    flat = np.array(
        [gen.next_f64() for _ in range(height * width * channels)], dtype=np.float64
    )
    return flat.reshape(height, width, channels)


def gaussian_kernel(radius=5, sigma=1.5):
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def valid_filter(plane, kernel):
    radius = len(kernel) // 2
    h, w = plane.shape
    horizontal = np.zeros((h, w - 2 * radius))
    for i, k in enumerate(kernel):
        horizontal += k * plane[:, i : i + w - 2 * radius]
    out = np.zeros((h - 2 * radius, w - 2 * radius))
    for i, k in enumerate(kernel):
        out += k * horizontal[i : i + h - 2 * radius, :]
    return out


def direct_ssim(a, b):
    kernel = gaussian_kernel()
    c1 = (0.01 * 1.0) ** 2
    c2 = (0.03 * 1.0) ** 2
    values = []
    for c in range(a.shape[2]):
        x = a[:, :, c]
        y = b[:, :, c]
        ux = valid_filter(x, kernel)
        uy = valid_filter(y, kernel)
        uxx = valid_filter(x * x, kernel)
        uyy = valid_filter(y * y, kernel)
        uxy = valid_filter(x * y, kernel)
        vx = uxx - ux * ux
        vy = uyy - uy * uy
        vxy = uxy - ux * uy
        ssim_map = ((2 * ux * uy + c1) * (2 * vxy + c2)) / (
            (ux * ux + uy * uy + c1) * (vx + vy + c2)
        )
        values.append(ssim_map.mean())
    return float(np.mean(values))


def reference_ssim(a, b):
    if a.shape[2] == 1:
        return float(
            structural_similarity(
                a[:, :, 0],
                b[:, :, 0],
                data_range=1.0,
                gaussian_weights=True,
                sigma=1.5,
                use_sample_covariance=False,
            )
        )
    return float(
        structural_similarity(
            a,
            b,
            data_range=1.0,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            channel_axis=2,
        )
    )


def psnr(a, b):
    mse = float(np.mean((a - b) ** 2))
    return 10.0 * np.log10(1.0 / mse)


def main():
    size = 64
    cases = []
    for index in range(20):
        channels = 3 if index < 10 else 1
        mixed = index % 10 >= 5
        seed_a = 0xA000 + index
        a = image(seed_a, size, size, channels)
        if mixed:
            seed_b = 0xC000 + index
            noise = image(seed_b, size, size, channels)
            b = (a + 0.1 * noise) / 1.1
        else:
            seed_b = 0xB000 + index
            b = image(seed_b, size, size, channels)
        ssim_ref = reference_ssim(a, b)
        ssim_direct = direct_ssim(a, b)
        if abs(ssim_ref - ssim_direct) > 1e-10:
            sys.exit(
                f"pair {index}: reference {ssim_ref!r} and direct {ssim_direct!r} disagree"
            )
        cases.append(
            {
                "index": index,
                "channels": channels,
                "mixed": mixed,
                "seed_a": seed_a,
                "seed_b": seed_b,
                "psnr_db": psnr(a, b),
                "ssim": ssim_ref,
            }
        )
    json.dump({"size": size, "cases": cases}, sys.stdout, indent=2)
    print()


if __name__ == "__main__":
    main()
