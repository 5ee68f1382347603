"""Shared test helpers."""

import numpy as np

from regstrain import GrayImage


def smooth_image(shape=(48, 48), seed=0):
    """A band-limited random image, handy for derivative checks."""
    from scipy import ndimage

    noise = np.random.default_rng(seed).standard_normal(shape)
    img = ndimage.gaussian_filter(noise, 3.0)
    img = (img - img.min()) / (img.max() - img.min())
    return GrayImage(0.1 + 0.8 * img)


# Verdict lines from the acceptance suite, printed in the pytest summary.
ACCEPTANCE_LINES = {}


def record(key, ok, title, detail, info=False):
    tag = "INFO" if info else ("PASS" if ok else "FAIL")
    ACCEPTANCE_LINES[key] = f"{tag} {key}: {title} | {detail}"
    return ok
