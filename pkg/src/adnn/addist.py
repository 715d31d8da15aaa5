"""Product and sum distribution operators over fixed-grid histograms.

A histogram of width ``W`` (odd) has bin ``b`` centred at ``(b - h) / h`` with
``h = W // 2``, so the default 201 bins cover [-1, 1] in steps of 0.01.  All
entries are treated as probability masses.

Two flavours are provided:

* reference functions (``product_forward`` ...) that accumulate over kernel
  bins in a fixed order; these define the operators exactly,
* matrix operators (``product_matrix`` ...) used by the network, where the
  layer output is ``x @ M(kernel)`` for a batch of inputs.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

DEFAULT_WIDTH = 201


def bin_centers(width: int = DEFAULT_WIDTH) -> np.ndarray:
    _check_width(width)
    half = width // 2
    return (np.arange(width) - half) / half


def nearest_bin(values, width: int = DEFAULT_WIDTH) -> np.ndarray:
    """Index of the nearest bin centre; exact ties go to the lower index.

    Values outside [-1, 1] are not clipped; callers check the range.
    """
    half = width // 2
    v = np.asarray(values, dtype=np.float64)
    return (np.ceil(v * half - 0.5) + half).astype(np.int64)


def _check_width(width: int) -> None:
    if width < 3 or width % 2 == 0:
        raise ValueError(f"histogram width must be odd and >= 3, got {width}")


def _check_pair(a: np.ndarray, b: np.ndarray) -> int:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(
            f"length mismatch: input has {a.shape[-1]} bins, kernel has {b.shape[-1]}"
        )
    _check_width(a.shape[-1])
    return a.shape[-1]


@lru_cache(maxsize=8)
def product_index_map(width: int = DEFAULT_WIDTH):
    """Lookup table for ``x[nbin(c_j / c_i)]``.

    Returns ``(index, valid)``, both ``(width, width)`` arrays indexed by
    ``[i, j]``.  Ratios are formed from integer offsets so that exact ties
    are detected without floating point error.  Row ``h`` (the zero-valued
    kernel bin) is never valid, nor is any ``|c_j / c_i| > 1``.
    """
    _check_width(width)
    half = width // 2
    off = np.arange(width, dtype=np.int64) - half
    i_off = off[:, None]
    j_off = off[None, :]
    sign = np.where(i_off < 0, -1, 1)
    num = j_off * sign
    den = np.abs(i_off)
    valid = (den > 0) & (np.abs(j_off) <= den)
    safe_den = np.where(den > 0, den, 1)
    # ceil(half * num / den - 1/2) in integer arithmetic
    rounded = -((safe_den - 2 * half * num) // (2 * safe_den))
    index = np.where(valid, rounded + half, 0)
    index.setflags(write=False)
    valid.setflags(write=False)
    return index, valid


@lru_cache(maxsize=8)
def _inv_abs_centers(width: int) -> np.ndarray:
    # 1/|c_i| with the zero bin mapped to 0; bounded by width // 2
    half = width // 2
    off = np.abs(np.arange(width) - half).astype(np.float64)
    out = np.zeros(width)
    np.divide(half, off, out=out, where=off > 0)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=8)
def _product_triples(width: int):
    index, valid = product_index_map(width)
    i, j = np.nonzero(valid)
    n = index[i, j]
    return i, j, n


# ---------------------------------------------------------------------------
# reference operators


def product_forward(x, w) -> np.ndarray:
    """Density of the product of the input and kernel variables.

    ``z_j = sum_i w_i * x[nbin(c_j / c_i)] / |c_i|``, skipping the zero
    kernel bin and ratios outside [-1, 1].  ``x`` may carry leading batch
    dimensions.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    width = _check_pair(x, w)
    index, valid = product_index_map(width)
    absc = np.abs(bin_centers(width))
    z = np.zeros(np.broadcast_shapes(x.shape, w.shape[:-1] + (width,)),
                 dtype=np.result_type(x, w))
    for i in range(width):
        cols = np.flatnonzero(valid[i])
        if cols.size == 0:
            continue
        z[..., cols] += w[..., i, None] * x[..., index[i, cols]] / absc[i]
    return z


def product_backward(x, w, dz):
    """Gradients of a scalar loss w.r.t. kernel and input of ``product_forward``.

    Returns ``(kernel_grad, input_grad)`` for single histograms.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    dz = np.asarray(dz, dtype=np.float64)
    width = _check_pair(x, w)
    _check_pair(x, dz)
    i, j, n = _product_triples(width)
    inv = _inv_abs_centers(width)
    kernel_grad = np.bincount(i, weights=dz[j] * x[n] * inv[i], minlength=width)
    input_grad = np.bincount(n, weights=dz[j] * w[i] * inv[i], minlength=width)
    return kernel_grad, input_grad


def sum_forward(x, b) -> np.ndarray:
    """Density of the sum of the input and kernel variables.

    ``z_j = sum_i b_i * x[j - (i - h)]``; lookups outside the grid contribute
    nothing.
    """
    x = np.asarray(x)
    b = np.asarray(b)
    width = _check_pair(x, b)
    half = width // 2
    z = np.zeros(np.broadcast_shapes(x.shape, b.shape[:-1] + (width,)),
                 dtype=np.result_type(x, b))
    for i in range(width):
        shift = i - half
        lo, hi = max(0, shift), min(width, width + shift)
        z[..., lo:hi] += b[..., i, None] * x[..., lo - shift:hi - shift]
    return z


def sum_backward(x, b, dz):
    """Gradients of a scalar loss w.r.t. kernel and input of ``sum_forward``."""
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dz = np.asarray(dz, dtype=np.float64)
    width = _check_pair(x, b)
    _check_pair(x, dz)
    half = width // 2
    kernel_grad = np.zeros(width)
    input_grad = np.zeros(width)
    for k in range(width):
        shift = k - half
        lo, hi = max(0, shift), min(width, width + shift)
        kernel_grad[k] = np.dot(dz[lo:hi], x[lo - shift:hi - shift])
        input_grad[lo - shift:hi - shift] += b[k] * dz[lo:hi]
    return kernel_grad, input_grad


# ---------------------------------------------------------------------------
# matrix form used by the network


def product_matrix(w) -> np.ndarray:
    """Matrix ``A`` with ``product_forward(x, w) == x @ A`` (up to rounding).

    ``w`` may have leading dimensions; the result has shape ``w.shape + (W,)``.
    """
    w = np.asarray(w)
    width = w.shape[-1]
    i, j, n = _product_triples(width)
    inv = _inv_abs_centers(width).astype(w.dtype)
    lead = w.shape[:-1]
    flat = w.reshape(-1, width)
    out = np.empty((flat.shape[0], width * width), dtype=w.dtype)
    target = n * width + j
    scaled = flat * inv
    for r in range(flat.shape[0]):
        out[r] = np.bincount(target, weights=scaled[r, i], minlength=width * width)
    return out.reshape(lead + (width, width))


def product_matrix_grad(grad_matrix) -> np.ndarray:
    """Pull a gradient w.r.t. ``product_matrix(w)`` back to ``w``."""
    g = np.asarray(grad_matrix)
    width = g.shape[-1]
    i, j, n = _product_triples(width)
    inv = _inv_abs_centers(width)
    lead = g.shape[:-2]
    flat = g.reshape(-1, width, width)
    out = np.empty((flat.shape[0], width), dtype=g.dtype)
    for r in range(flat.shape[0]):
        out[r] = np.bincount(i, weights=flat[r][n, j], minlength=width) * inv
    return out.reshape(lead + (width,))


@lru_cache(maxsize=8)
def _sum_index(width: int):
    half = width // 2
    n = np.arange(width)[:, None]
    j = np.arange(width)[None, :]
    k = j - n + half
    valid = (k >= 0) & (k < width)
    nn, jj = np.nonzero(valid)
    return nn, jj, k[nn, jj]


def sum_matrix(b) -> np.ndarray:
    """Matrix ``S`` with ``sum_forward(x, b) == x @ S`` (banded Toeplitz)."""
    b = np.asarray(b)
    width = b.shape[-1]
    nn, jj, kk = _sum_index(width)
    out = np.zeros(b.shape[:-1] + (width, width), dtype=b.dtype)
    out[..., nn, jj] = b[..., kk]
    return out


def sum_matrix_grad(grad_matrix) -> np.ndarray:
    """Pull a gradient w.r.t. ``sum_matrix(b)`` back to ``b``."""
    g = np.asarray(grad_matrix)
    width = g.shape[-1]
    nn, jj, kk = _sum_index(width)
    lead = g.shape[:-2]
    flat = g.reshape(-1, width, width)
    out = np.empty((flat.shape[0], width), dtype=g.dtype)
    for r in range(flat.shape[0]):
        out[r] = np.bincount(kk, weights=flat[r][nn, jj], minlength=width)
    return out.reshape(lead + (width,))


def identity_kernel(kind: str, width: int = DEFAULT_WIDTH) -> np.ndarray:
    """Delta at the operator's identity element: +1 for product, 0 for sum."""
    _check_width(width)
    k = np.zeros(width)
    if kind == "product":
        k[-1] = 1.0
    elif kind == "sum":
        k[width // 2] = 1.0
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    return k


# ---------------------------------------------------------------------------
# Monte Carlo oracles (validation only)


def _sample_centers(hist, samples, rng, jitter=False):
    hist = np.asarray(hist, dtype=np.float64)
    if np.any(hist < 0) or not np.isclose(hist.sum(), 1.0, atol=1e-6):
        raise ValueError("oracle inputs must be normalized non-negative histograms")
    width = hist.shape[-1]
    values = bin_centers(width)[rng.choice(width, size=samples, p=hist / hist.sum())]
    if jitter:
        step = 1.0 / (width // 2)
        values = values + rng.uniform(-step / 2, step / 2, size=samples)
    return values


def _bin_samples(values, width):
    keep = np.abs(values) <= 1.0
    idx = nearest_bin(values[keep], width)
    counts = np.bincount(idx, minlength=width).astype(np.float64)
    retained = counts.sum()
    return counts / retained if retained else counts


def mc_product_oracle(x, w, samples: int = 1_000_000, seed: int = 0) -> np.ndarray:
    """Histogram of sampled products, normalized over the retained mass.

    Samples are spread uniformly within their bin: products of bin centres
    do not fall on the grid, and sampling centres only leaves a comb pattern
    after re-binning.
    """
    if samples < 100_000:
        raise ValueError("use at least 1e5 samples")
    rng = np.random.default_rng(seed)
    width = _check_pair(np.asarray(x), np.asarray(w))
    a = _sample_centers(x, samples, rng, jitter=True)
    b = _sample_centers(w, samples, rng, jitter=True)
    return _bin_samples(a * b, width)


def mc_sum_oracle(x, b, samples: int = 1_000_000, seed: int = 0) -> np.ndarray:
    """Histogram of sampled sums, normalized over the retained mass."""
    if samples < 100_000:
        raise ValueError("use at least 1e5 samples")
    rng = np.random.default_rng(seed)
    width = _check_pair(np.asarray(x), np.asarray(b))
    a = _sample_centers(x, samples, rng)
    c = _sample_centers(b, samples, rng)
    return _bin_samples(a + c, width)


def mc_retained_mass(x, b, samples: int = 1_000_000, seed: int = 0, op: str = "sum") -> float:
    """Fraction of sampled sums (or products) that land inside [-1, 1]."""
    rng = np.random.default_rng(seed)
    a = _sample_centers(x, samples, rng)
    c = _sample_centers(b, samples, rng)
    v = a + c if op == "sum" else a * c
    return float(np.mean(np.abs(v) <= 1.0))
