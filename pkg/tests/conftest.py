import numpy as np
import pytest

from adnn import addist


def uniform_hist(lo, hi, width=201):
    c = addist.bin_centers(width)
    h = ((c >= lo - 1e-9) & (c <= hi + 1e-9)).astype(float)
    return h / h.sum()


def triangle_hist(mode, half_width, width=201):
    c = addist.bin_centers(width)
    h = np.maximum(0.0, 1.0 - np.abs(c - mode) / half_width)
    return h / h.sum()


def two_point_hist(p, q, weight=0.5, width=201):
    h = np.zeros(width)
    h[addist.nearest_bin(p, width)] += weight
    h[addist.nearest_bin(q, width)] += 1.0 - weight
    return h


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
