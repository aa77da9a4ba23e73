"""Full-reference image similarity metrics.

MSE and PSNR are computed over all channels on the 8-bit scale (values
multiplied by 255).  The windowed metrics (SSIM, UQI, SCC) work on Rec.601
luma in ``[0, 1]``; VIFP works on 8-bit-scale luma because its noise
variance of 2 is calibrated to that range.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .image import check_same_shape, luma

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
UQI_WINDOW = 8
VIF_SCALES = 4
VIF_NOISE_VAR = 2.0
VIF_EPS = 1e-10
LAPLACIAN = np.array([[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]])


class MetricError(ValueError):
    """A metric is undefined for the given inputs (too small, degenerate)."""


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    check_same_shape(x, y)
    return x, y


def _min_size(img, n, name):
    if min(img.shape[:2]) < n:
        raise MetricError(f"{name} needs images of at least {n}x{n}, got {img.shape[0]}x{img.shape[1]}")


def mse(x, y) -> float:
    """Mean of ``(255 * (x - y))**2`` over every pixel and channel (correctly rounded sum)."""
    x, y = _pair(x, y)
    d = 255.0 * (x - y)
    return math.fsum((d * d).ravel()) / d.size


def psnr(x, y) -> float:
    """``10 log10(255^2 / mse)`` in dB; ``inf`` for identical images."""
    err = mse(x, y)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / err)


def gaussian_kernel(n: int, sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian of odd length ``n``."""
    t = np.arange(n) - (n - 1) / 2.0
    g = np.exp(-(t**2) / (2.0 * sigma**2))
    return g / g.sum()


def filter_valid(img, kernel) -> np.ndarray:
    """Correlate a 2-D array with ``outer(kernel, kernel)``, keeping only unpadded positions."""
    n = len(kernel)
    h, w = img.shape
    rows = sum(k * img[i : h - n + 1 + i] for i, k in enumerate(kernel))
    return sum(k * rows[:, j : w - n + 1 + j] for j, k in enumerate(kernel))


def _local_moments(x, y, kernel):
    mu_x = filter_valid(x, kernel)
    mu_y = filter_valid(y, kernel)
    var_x = filter_valid(x * x, kernel) - mu_x * mu_x
    var_y = filter_valid(y * y, kernel) - mu_y * mu_y
    cov = filter_valid(x * y, kernel) - mu_x * mu_y
    return mu_x, mu_y, var_x, var_y, cov


def ssim_maps(x, y):
    """Luminance and contrast-structure SSIM maps over valid window positions."""
    x, y = _pair(x, y)
    _min_size(x, SSIM_WINDOW, "SSIM")
    a, b = luma(x), luma(y)
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_x, mu_y, var_x, var_y, cov = _local_moments(a, b, gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA))
    lum = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    cs = (2 * cov + c2) / (var_x + var_y + c2)
    return lum, cs


def ssim(x, y) -> float:
    """Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, L=1."""
    lum, cs = ssim_maps(x, y)
    return float(np.mean(lum * cs))


def _window_sums(a, n):
    """Sum over every n x n window, accumulated offset by offset in row-major order."""
    h, w = a.shape
    total = np.zeros((h - n + 1, w - n + 1))
    for i in range(n):
        for j in range(n):
            total = total + a[i : h - n + 1 + i, j : w - n + 1 + j]
    return total


def _window_means(a, n):
    """Window means; a constant window's mean is pinned to its value so its variance is exactly 0."""
    mu = _window_sums(a, n) / (n * n)
    win = np.lib.stride_tricks.sliding_window_view(a, (n, n))
    lo, hi = win.min(axis=(2, 3)), win.max(axis=(2, 3))
    return np.where(lo == hi, lo, mu)


def uqi(x, y) -> float:
    """Universal quality index over sliding 8x8 uniform windows.

    Windows whose denominator is zero are skipped.

    Raises
    ------
    MetricError
        If the images are smaller than 8x8 or every window is degenerate.
    """
    x, y = _pair(x, y)
    _min_size(x, UQI_WINDOW, "UQI")
    a, b = luma(x), luma(y)
    n = UQI_WINDOW
    count = n * n
    mu_a = _window_means(a, n)
    mu_b = _window_means(b, n)
    h, w = a.shape
    var_a = np.zeros_like(mu_a)
    var_b = np.zeros_like(mu_a)
    cov = np.zeros_like(mu_a)
    for i in range(n):
        for j in range(n):
            da = a[i : h - n + 1 + i, j : w - n + 1 + j] - mu_a
            db = b[i : h - n + 1 + i, j : w - n + 1 + j] - mu_b
            var_a = var_a + da * da
            var_b = var_b + db * db
            cov = cov + da * db
    var_a, var_b, cov = var_a / count, var_b / count, cov / count
    den = (var_a + var_b) * (mu_a * mu_a + mu_b * mu_b)
    ok = den != 0
    if not ok.any():
        raise MetricError("UQI: all windows degenerate")
    q = 4.0 * cov[ok] * (mu_a[ok] * mu_b[ok]) / den[ok]
    return math.fsum(q.tolist()) / q.size


def _laplacian_valid(a):
    h, w = a.shape
    return sum(
        LAPLACIAN[i, j] * a[i : h - 2 + i, j : w - 2 + j] for i in range(3) for j in range(3) if LAPLACIAN[i, j]
    )


def scc(x, y) -> float:
    """Pearson correlation of the Laplacian high-pass responses (0 if either is flat)."""
    x, y = _pair(x, y)
    _min_size(x, 3, "SCC")
    fa = _laplacian_valid(luma(x)).ravel()
    fb = _laplacian_valid(luma(y)).ravel()
    da = fa - fa.mean()
    db = fb - fb.mean()
    saa, sbb = np.dot(da, da), np.dot(db, db)
    if saa == 0.0 or sbb == 0.0:
        return 0.0
    return float(np.dot(da, db) / math.sqrt(saa * sbb))


def vifp(ref, dist) -> float:
    """Pixel-domain visual information fidelity of ``dist`` against ``ref``.

    Four scales; scale ``s`` uses a Gaussian window of size ``2**(5-s)+1``
    (sigma a fifth of that), and coarser scales are low-passed and decimated
    by two.  Scales whose image is smaller than the window are skipped.
    """
    ref, dist = _pair(ref, dist)
    _min_size(ref, 32, "VIFP")
    a = 255.0 * luma(ref)
    b = 255.0 * luma(dist)
    num = den = 0.0
    for scale in range(1, VIF_SCALES + 1):
        n = 2 ** (VIF_SCALES + 1 - scale) + 1
        kernel = gaussian_kernel(n, n / 5.0)
        if scale > 1:
            if min(a.shape) < n:
                break
            a = filter_valid(a, kernel)[::2, ::2]
            b = filter_valid(b, kernel)[::2, ::2]
        if min(a.shape) < n:
            break
        _, _, var_a, var_b, cov = _local_moments(a, b, kernel)
        var_a = np.maximum(var_a, 0.0)
        var_b = np.maximum(var_b, 0.0)
        live = var_a >= VIF_EPS
        # flat reference windows carry no signal: gain 0, all distortion variance is noise
        g = np.where(live, cov / np.where(live, var_a, 1.0), 0.0)
        sv2 = np.maximum(var_b - g * cov, 0.0)
        num += float(np.sum(np.log2(1.0 + g * g * var_a / (sv2 + VIF_NOISE_VAR))))
        den += float(np.sum(np.log2(1.0 + var_a / VIF_NOISE_VAR)))
    if den == 0.0:
        raise MetricError("VIFP: reference has no variance at any scale")
    return num / den


METRICS = {"mse": mse, "psnr": psnr, "ssim": ssim, "uqi": uqi, "scc": scc, "vifp": vifp}
IDEAL = {"mse": 0.0, "psnr": math.inf, "ssim": 1.0, "uqi": 1.0, "scc": 1.0, "vifp": 1.0}
LOWER_IS_BETTER = {"mse"}


@dataclass
class MetricReport:
    """Metric values for one image pair; ``None`` where a metric is undefined."""

    mse: float | None = None
    psnr: float | None = None
    ssim: float | None = None
    uqi: float | None = None
    scc: float | None = None
    vifp: float | None = None
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON-ready mapping; infinite PSNR becomes ``None``."""
        out = asdict(self)
        if out["psnr"] is not None and math.isinf(out["psnr"]):
            out["psnr"] = None
        return out

    def values(self) -> dict:
        return {k: getattr(self, k) for k in METRICS}


def metric_report(ref, test) -> MetricReport:
    """Run every metric; undefined ones are left ``None`` with the reason in ``errors``."""
    ref, test = _pair(ref, test)
    report = MetricReport()
    for name, fn in METRICS.items():
        try:
            setattr(report, name, fn(ref, test))
        except MetricError as exc:
            report.errors[name] = str(exc)
    return report
