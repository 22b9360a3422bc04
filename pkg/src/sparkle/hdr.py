"""Multi-exposure fusion and background handling for linear sensor images."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_WINDOW = (0.1, 0.7)

# fallback codes recorded per pixel by hdr_merge
MERGED = 0
ALL_ABOVE = 1
ALL_BELOW = 2
STRADDLED = 3


@dataclass
class ExposureStack:
    """Registered exposures ``images[k]`` taken with ``times[k]`` seconds.

    A sample is trusted when ``low < I < high``; intensities at or outside
    the window bounds are discarded.
    """

    times: Sequence[float]
    images: Sequence[np.ndarray]
    window: tuple = DEFAULT_WINDOW

    def __post_init__(self):
        if len(self.times) == 0:
            raise ValueError("exposure stack is empty")
        if len(self.times) != len(self.images):
            raise ValueError("need one exposure time per image")
        t = np.asarray(self.times, dtype=float)
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("exposure times must be positive and strictly increasing")
        shapes = {np.shape(im) for im in self.images}
        if len(shapes) != 1:
            raise ValueError(f"images differ in shape: {sorted(shapes)}")
        low, high = self.window
        if not 0 <= low < high <= 1:
            raise ValueError("window must satisfy 0 <= low < high <= 1")
        self.times = t
        self.images = [np.asarray(im, dtype=float) for im in self.images]

    @property
    def shape(self):
        return self.images[0].shape


def hdr_merge(stack: ExposureStack, return_fallback: bool = False):
    """Per-pixel least-squares radiance ``s`` minimising ``sum_k (s t_k - I_k)^2``.

    Only in-window samples enter the fit, giving ``sum t_k I_k / sum t_k^2``.
    A pixel without any in-window sample falls back to a single-exposure
    rate: the shortest exposure when every sample is saturated high, the
    longest when every sample is too dark, and the longest too-dark sample
    when samples straddle the window. ``return_fallback=True`` additionally
    returns a per-pixel code array (``MERGED``, ``ALL_ABOVE``, ``ALL_BELOW``,
    ``STRADDLED``).
    """
    t = stack.times.reshape(-1, *([1] * len(stack.shape)))
    imgs = np.stack(stack.images)
    low, high = stack.window
    valid = (imgs > low) & (imgs < high)
    num = np.sum(np.where(valid, t * imgs, 0.0), axis=0)
    den = np.sum(np.where(valid, t * t, 0.0), axis=0)
    n_valid = valid.sum(axis=0)

    out = np.divide(num, den, out=np.zeros_like(num), where=n_valid > 0)
    code = np.full(stack.shape, MERGED, dtype=np.uint8)

    above = imgs >= high
    below = imgs <= low
    rates = imgs / t
    empty = n_valid == 0
    all_above = empty & above.all(axis=0)
    all_below = empty & below.all(axis=0)
    straddled = empty & ~all_above & ~all_below
    out[all_above] = rates[0][all_above]
    out[all_below] = rates[-1][all_below]
    code[all_above] = ALL_ABOVE
    code[all_below] = ALL_BELOW
    if straddled.any():
        # index of the longest exposure that is below the window
        k = len(stack.times) - 1 - np.argmax(below[::-1], axis=0)
        pick = np.take_along_axis(rates, k[None], axis=0)[0]
        out[straddled] = pick[straddled]
        code[straddled] = STRADDLED
    if return_fallback:
        return out, code
    return out


@dataclass
class BackgroundFrame:
    image: np.ndarray
    count: int = 1

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=float)
        if np.any(self.image < 0):
            raise ValueError("background frame must be non-negative")


def subtract_background(y, bg: BackgroundFrame) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != bg.image.shape:
        raise ValueError(f"image shape {y.shape} != background shape {bg.image.shape}")
    return np.maximum(y - bg.image, 0.0)


def average_backgrounds(frames) -> BackgroundFrame:
    """Mean of repeated dark-screen captures."""
    frames = [np.asarray(f, dtype=float) for f in frames]
    if not frames:
        raise ValueError("no background frames given")
    if len({f.shape for f in frames}) != 1:
        raise ValueError("background frames differ in shape")
    return BackgroundFrame(np.mean(frames, axis=0), count=len(frames))
