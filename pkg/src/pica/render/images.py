"""Image file I/O: binary PPM/PGM and 8-bit PNG, plus image metrics."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _quantize(img: np.ndarray, maxval: int) -> np.ndarray:
    q = np.clip(np.rint(np.asarray(img, dtype=np.float64) * maxval), 0, maxval)
    return q.astype(">u2" if maxval > 255 else np.uint8)


def _write_pnm(path, img: np.ndarray, magic: str, channels: int, maxval: int) -> None:
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    data = _quantize(img, maxval)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(data.reshape(h, w, channels).tobytes())


def write_ppm(path: str | os.PathLike, rgb: np.ndarray, maxval: int = 255) -> None:
    """Binary PPM; ``maxval=65535`` writes 16-bit big-endian samples."""
    _write_pnm(path, rgb, "P6", 3, maxval)


def write_pgm(path: str | os.PathLike, gray: np.ndarray, maxval: int = 255) -> None:
    _write_pnm(path, gray, "P5", 1, maxval)


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    """Binary PPM/PGM with 8- or 16-bit samples, as float64 in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: only binary PGM/PPM supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    ch = 3 if magic == b"P6" else 1
    dt = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    n = w * h * ch
    if len(raw) - pos < n * dt.itemsize:
        raise ValueError(f"{path}: truncated pixel data")
    arr = np.frombuffer(raw, dtype=dt, count=n, offset=pos).astype(np.float64) / maxval
    return arr.reshape(h, w, ch) if ch == 3 else arr.reshape(h, w)


def write_png(path: str | os.PathLike, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def write_image(path: str | os.PathLike, img: np.ndarray) -> None:
    ext = Path(path).suffix.lower()
    if ext == ".ppm":
        write_ppm(path, img)
    elif ext == ".pgm":
        write_pgm(path, img)
    elif ext == ".png":
        write_png(path, img)
    else:
        raise ValueError(f"unsupported image extension {ext!r}")


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read PPM/PGM/PNG as float64 in [0, 1] ((H,W,3) color or (H,W) gray)."""
    if Path(path).suffix.lower() in (".ppm", ".pgm"):
        return read_pnm(path)
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[..., :3]
    scale = 65535.0 if arr.dtype == np.uint16 or arr.max(initial=0) > 255 else 255.0
    return arr.astype(np.float64) / scale


def read_binary_mask(path: str | os.PathLike, threshold: int = 128) -> np.ndarray:
    """Mask image thresholded at ``threshold`` on the 8-bit scale."""
    img = read_image(path)
    if img.ndim == 3:
        img = img.mean(axis=2)
    return (img >= threshold / 255.0).astype(np.float64)


# ---------------------------------------------------------------- metrics


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def _gauss_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03.

    Statistics are taken over the window positions fully inside the image;
    multi-channel inputs average the per-channel maps. Images smaller than
    the window use the largest odd window that fits.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("ssim: shape mismatch")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    size = min(11, min(a.shape[:2]) - (1 - min(a.shape[:2]) % 2))
    if size < 1:
        raise ValueError("ssim: empty image")
    win = _gauss_window(size)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    pad = win.shape[0] // 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        f = lambda z: ndimage.correlate(z, win, mode="reflect")[pad:z.shape[0] - pad, pad:z.shape[1] - pad]
        mx, my = f(x), f(y)
        sxx = f(x * x) - mx * mx
        syy = f(y * y) - my * my
        sxy = f(x * y) - mx * my
        m = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        vals.append(m.mean())
    return float(np.mean(vals))


def iou(a: np.ndarray, b: np.ndarray, threshold: float = 0.5) -> float:
    pa = np.asarray(a) >= threshold
    pb = np.asarray(b) >= threshold
    union = np.logical_or(pa, pb).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pa, pb).sum() / union)
