"""Local appearance descriptors sampled around landmark positions.

Images are 2D float arrays (rows = v, columns = u) with intensities in [0, 1].
Pixels outside the image read as 0.

The ``grad-hist`` descriptor is a dense SIFT-style grid of orientation
histograms.  The patch ``[-r, r]^2`` around the center is split into
``cells x cells`` cells, each holding ``4 x 4`` gradient samples placed
symmetrically about the center.  A sample's gradient is the central
difference, one sample spacing wide, of the bilinearly interpolated image, so
every output depends only on pixels strictly within ``r + 1`` (max-norm) of
the center.  Magnitudes vote bilinearly in orientation and in space into a
``cells x cells x bins`` histogram, which is L2-normalized, clipped at 0.2 and
renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, OracleUnavailableError

KINDS = ("grad-hist", "raw-patch", "oracle")
NORM_EPS = 1e-6
CLIP = 0.2
_CHUNK = 256
SAMPLES_PER_CELL = 4


@dataclass(frozen=True)
class DescriptorSpec:
    kind: str = "grad-hist"
    patch_radius: int = 16
    cells: int = 4
    bins: int = 8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown descriptor kind {self.kind!r}; expected one of {KINDS}")
        if self.patch_radius < 1 or self.cells < 1 or self.bins < 1:
            raise InvalidInputError("patch_radius, cells and bins must be >= 1")

    @property
    def length(self) -> int:
        if self.kind == "grad-hist":
            return self.cells**2 * self.bins
        if self.kind == "raw-patch":
            return (2 * self.patch_radius + 1) ** 2
        return 4


def check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim != 2 or img.size == 0:
        raise InvalidInputError(f"image must be a non-empty 2D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise InvalidInputError("image intensities must lie in [0, 1]")
    return img


def _windows(padded, centers, r):
    """Integer windows of side ``2r + 4`` anchored at ``floor(center) - r - 1``.

    ``padded`` carries a one-pixel zero border; clipping indices into it makes
    every out-of-image read return 0.
    """
    S = 2 * r + 4
    base = np.floor(centers).astype(np.int64) - r - 1
    frac = centers - np.floor(centers)
    off = np.arange(S)
    rows = np.clip(base[:, 1, None] + off + 1, 0, padded.shape[0] - 1)
    cols = np.clip(base[:, 0, None] + off + 1, 0, padded.shape[1] - 1)
    P = padded[rows[:, :, None], cols[:, None, :]]
    return P, frac


def _interp_matrix(frac, offsets, r):
    """Linear-interpolation weights ``(n, len(offsets), 2r + 4)`` for samples at ``center + offsets``.

    ``frac`` is the fractional part of the center along one axis; offsets must
    lie in ``[-r, r]``.
    """
    S = 2 * r + 4
    pos = (r + 1) + frac[:, None] + np.asarray(offsets, dtype=float)[None, :]
    i0 = np.floor(pos).astype(np.intp)
    w = pos - i0
    n, m = pos.shape
    out = np.zeros((n, m, S))
    nn, mm = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    out[nn, mm, i0] = 1.0 - w
    out[nn, mm, i0 + 1] += w
    return out


def _sample(P, frac, row_offsets, col_offsets, r):
    Wy = _interp_matrix(frac[:, 1], row_offsets, r)
    Wx = _interp_matrix(frac[:, 0], col_offsets, r)
    return Wy @ P @ Wx.transpose(0, 2, 1)


def sample_grid(spec: DescriptorSpec):
    """Gradient sample offsets along one axis: ``SAMPLES_PER_CELL`` per cell, centered."""
    n = SAMPLES_PER_CELL * spec.cells
    step = 2.0 * spec.patch_radius / n
    return (np.arange(n) - n / 2 + 0.5) * step, step


def _spatial_weights(spec: DescriptorSpec):
    n = SAMPLES_PER_CELL * spec.cells
    q = (np.arange(n) + 0.5) / SAMPLES_PER_CELL - 0.5
    return np.clip(1.0 - np.abs(q[:, None] - np.arange(spec.cells)[None, :]), 0.0, None)


def _normalize(v):
    return v / (np.linalg.norm(v, axis=-1, keepdims=True) + NORM_EPS)


def _grad_hist(padded, centers, spec: DescriptorSpec):
    r, bins = spec.patch_radius, spec.bins
    P, frac = _windows(padded, centers, r)
    mid, step = sample_grid(spec)
    edges = np.append(mid - step / 2.0, mid[-1] + step / 2.0)
    Hx = _sample(P, frac, mid, edges, r)
    gx = (Hx[:, :, 1:] - Hx[:, :, :-1]) / step
    Hy = _sample(P, frac, edges, mid, r)
    gy = (Hy[:, 1:, :] - Hy[:, :-1, :]) / step
    mag = np.sqrt(gx * gx + gy * gy)
    o = np.mod(np.arctan2(gy, gx) * (bins / (2.0 * np.pi)), bins)
    lo = np.floor(o).astype(np.intp)
    up = o - lo
    lo %= bins
    w_up = up * mag
    O = np.zeros((mag.size, bins))
    rows = np.arange(mag.size)
    O[rows, lo.ravel()] = (mag - w_up).ravel()
    O[rows, (lo.ravel() + 1) % bins] += w_up.ravel()
    ws = _spatial_weights(spec)
    n, ns = mag.shape[0], mag.shape[1]
    A = np.matmul(ws.T, O.reshape(n, ns, ns * bins)).reshape(n, spec.cells, ns, bins)
    hist = np.einsum("xd,ncxb->ncdb", ws, A)
    v = _normalize(hist.reshape(n, -1))
    return _normalize(np.minimum(v, CLIP))


def _raw_patch(padded, centers, spec: DescriptorSpec):
    r = spec.patch_radius
    P, frac = _windows(padded, centers, r)
    offsets = np.arange(-r, r + 1)
    patch = _sample(P, frac, offsets, offsets, r)
    return _normalize(patch.reshape(len(centers), -1))


def describe_points(img, centers, spec: DescriptorSpec) -> np.ndarray:
    """Descriptors for many ``(u, v)`` centers in one image; returns ``(n, L)``."""
    if spec.kind == "oracle":
        raise OracleUnavailableError("the oracle descriptor needs ground truth; use synth.oracle_descriptor")
    img = check_image(img)
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(centers)):
        raise InvalidInputError("landmark centers must be finite")
    padded = np.pad(img, 1)
    fn = _grad_hist if spec.kind == "grad-hist" else _raw_patch
    out = np.empty((len(centers), spec.length))
    for i in range(0, len(centers), _CHUNK):
        out[i:i + _CHUNK] = fn(padded, centers[i:i + _CHUNK], spec)
    return out


def extract_patch_descriptor(img, center, spec: DescriptorSpec) -> np.ndarray:
    """Descriptor of the patch around one ``(u, v)`` center."""
    return describe_points(img, np.asarray(center, dtype=float).reshape(1, 2), spec)[0]


def extract_shape_features(img, x, spec: DescriptorSpec, sample=None) -> np.ndarray:
    """Concatenated per-landmark descriptors for a ``(D, 2)`` shape.

    For ``spec.kind == "oracle"`` the ground-truth ``sample`` is required and the
    work is delegated to :func:`jointface.synth.oracle_descriptor`.
    """
    if spec.kind == "oracle":
        if sample is None:
            raise OracleUnavailableError("oracle features require the ground-truth sample")
        from .synth import oracle_descriptor
        return oracle_descriptor(sample, x, spec)
    pts = np.asarray(x, dtype=float).reshape(-1, 2)
    return describe_points(img, pts, spec).ravel()
