"""Freeze reference L1/PSNR/SSIM values for the metric oracle test.

Image pairs come from a splitmix64 stream that the Rust side reproduces
exactly, so only the scores are stored.

    python3 python/metric_reference.py > crates/core/fixtures/metric_reference.json
"""

import json

import numpy as np
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

MASK = (1 << 64) - 1
PAIRS = 100


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def uniform(self):
        return (self.next() >> 11) * 2.0**-53


def pair(i):
    rng = SplitMix64(i)
    h = 11 + rng.next() % 22
    w = 11 + rng.next() % 22
    c = 1 if rng.next() % 2 == 0 else 3
    alpha = rng.uniform()
    a = np.empty(c * h * w)
    b = np.empty(c * h * w)
    for j in range(c * h * w):
        u = rng.uniform()
        v = rng.uniform()
        a[j] = u
        b[j] = alpha * u + (1.0 - alpha) * v
    return a.reshape(c, h, w), b.reshape(c, h, w)


def main():
    rows = []
    for i in range(PAIRS):
        a, b = pair(i)
        c, h, w = a.shape
        kw = dict(gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0)
        if c == 1:
            s = structural_similarity(a[0], b[0], **kw)
        else:
            s = structural_similarity(np.moveaxis(a, 0, -1), np.moveaxis(b, 0, -1), channel_axis=-1, **kw)
        rows.append(
            dict(
                index=i,
                channels=int(c),
                height=int(h),
                width=int(w),
                l1=float(np.mean(np.abs(a - b))),
                psnr=float(peak_signal_noise_ratio(a, b, data_range=1.0)),
                ssim=float(s),
            )
        )
    import skimage

    out = dict(
        reference="scikit-image " + skimage.__version__,
        ssim=dict(gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0),
        pairs=rows,
    )
    print(json.dumps(out, indent=1))


if __name__ == "__main__":
    main()
