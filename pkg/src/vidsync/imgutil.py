"""Small image helpers: luma conversion, bilinear resize, Gaussian taps."""

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    r, g, b = LUMA_WEIGHTS
    return r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]


def gaussian_kernel1d(sigma: float, radius: int | None = None) -> np.ndarray:
    if radius is None:
        radius = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-center aligned bilinear resize of (H,W) or (H,W,C) arrays.

    Identity when the size already matches (source coordinates reduce to
    the integer grid).
    """
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    sy = h / out_h
    sx = w / out_w
    fy = np.clip((np.arange(out_h) + 0.5) * sy - 0.5, 0, h - 1)
    fx = np.clip((np.arange(out_w) + 0.5) * sx - 0.5, 0, w - 1)
    y0 = np.minimum(fy.astype(np.intp), h - 2) if h > 1 else np.zeros(out_h, np.intp)
    x0 = np.minimum(fx.astype(np.intp), w - 2) if w > 1 else np.zeros(out_w, np.intp)
    ty = (fy - y0)[:, None]
    tx = (fx - x0)[None, :]
    if img.ndim == 3:
        ty = ty[..., None]
        tx = tx[..., None]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    top = img[np.ix_(y0, x0)] * (1 - tx) + img[np.ix_(y0, x1)] * tx
    bot = img[np.ix_(y1, x0)] * (1 - tx) + img[np.ix_(y1, x1)] * tx
    return top * (1 - ty) + bot * ty
