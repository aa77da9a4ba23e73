"""Differentiable flow-field warping confined to a mask.

A flow field is a float array of shape ``(2, H, W)``: ``flow[0]`` is the
horizontal displacement (columns, ``u``) and ``flow[1]`` the vertical one
(rows, ``v``), both in pixels with the origin at the top-left.  Output pixel
``(v, u)`` samples the source at ``(v + dv, u + du)`` by bilinear
interpolation, with sampling coordinates clamped to the image grid.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .saliency import Mask

FLOW_MAGIC = b"SSTAFLO1"


def zero_flow(h: int, w: int) -> np.ndarray:
    return np.zeros((2, h, w), dtype=np.float64)


def _check_flow(x: np.ndarray, flow: np.ndarray) -> None:
    if flow.shape != (2,) + x.shape[:2]:
        raise ValueError(f"flow shape {flow.shape} does not match image spatial shape {x.shape[:2]}")


class _Sampler:
    """Bilinear sampling geometry for one flow field, shared by warp and its gradient."""

    def __init__(self, flow: np.ndarray):
        _, h, w = flow.shape
        rows, cols = np.mgrid[0:h, 0:w]
        u = cols + flow[0]
        v = rows + flow[1]
        uc = np.clip(u, 0.0, w - 1)
        vc = np.clip(v, 0.0, h - 1)
        u0 = np.floor(uc).astype(np.intp)
        v0 = np.floor(vc).astype(np.intp)
        u1 = np.minimum(u0 + 1, w - 1)
        v1 = np.minimum(v0 + 1, h - 1)
        self.index = [(v0 * w + u0).ravel(), (v0 * w + u1).ravel(), (v1 * w + u0).ravel(), (v1 * w + u1).ravel()]
        self.shape = (h, w)
        self.au = (uc - u0)[:, :, None]
        self.av = (vc - v0)[:, :, None]
        # clamped coordinates carry no gradient
        self.live_u = (u >= 0.0) & (u <= w - 1)
        self.live_v = (v >= 0.0) & (v <= h - 1)

    def corners(self, x):
        """Top-left, top-right, bottom-left, bottom-right source values."""
        flat = x.reshape(-1, x.shape[2])
        return [flat.take(idx, axis=0).reshape(x.shape) for idx in self.index]

    def interpolate(self, corners):
        tl, tr, bl, br = corners
        au, av = self.au, self.av
        return tl * (1 - au) * (1 - av) + tr * au * (1 - av) + bl * (1 - au) * av + br * au * av

    def gradient(self, corners, warped, mask, grad_out):
        tl, tr, bl, br = corners
        au, av = self.au, self.av
        passing = mask[:, :, None] & (warped >= 0.0) & (warped <= 1.0)
        g = np.where(passing, grad_out, 0.0)
        d_u = (1 - av) * (tr - tl) + av * (br - bl)
        d_v = (1 - au) * (bl - tl) + au * (br - tr)
        grad = np.empty((2,) + self.shape)
        grad[0] = np.where(self.live_u, (g * d_u).sum(axis=2), 0.0)
        grad[1] = np.where(self.live_v, (g * d_v).sum(axis=2), 0.0)
        return grad


def warp(x, flow) -> np.ndarray:
    """Resample ``x`` at the flow-displaced locations (bilinear, border-clamped)."""
    x = np.asarray(x, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    _check_flow(x, flow)
    s = _Sampler(flow)
    return s.interpolate(s.corners(x))


def composite(x, warped, mask: Mask) -> np.ndarray:
    """Clipped warped pixels inside ``mask``, original pixels everywhere else."""
    x = np.asarray(x, dtype=np.float64)
    warped = np.asarray(warped, dtype=np.float64)
    if x.shape != warped.shape or mask.shape != x.shape[:2]:
        raise ValueError(f"shape mismatch: image {x.shape}, warped {warped.shape}, mask {mask.shape}")
    return np.where(mask.inside[:, :, None], np.clip(warped, 0.0, 1.0), x)


def apply_flow(x, flow, mask: Mask) -> np.ndarray:
    """``composite(x, warp(x, flow), mask)``."""
    return composite(x, warp(x, flow), mask)


def flow_gradient(x, flow, mask: Mask, grad_out) -> np.ndarray:
    """Gradient of a scalar loss with respect to ``flow``.

    ``grad_out`` is the loss gradient with respect to the composited image.
    Pixels outside the mask, and pixels whose warped value is clipped, pass no
    gradient; the clip's sub-gradient is taken as 1 on the closed interval
    ``[0, 1]``.
    """
    x = np.asarray(x, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    _check_flow(x, flow)
    if grad_out.shape != x.shape or mask.shape != x.shape[:2]:
        raise ValueError(f"shape mismatch: image {x.shape}, grad {grad_out.shape}, mask {mask.shape}")
    s = _Sampler(flow)
    corners = s.corners(x)
    return s.gradient(corners, s.interpolate(corners), mask.inside, grad_out)


class MaskedWarp:
    """Forward composite and flow gradient for one ``(x, flow, mask)``, sharing the sampling work."""

    def __init__(self, x, flow, mask: Mask):
        self.x = np.asarray(x, dtype=np.float64)
        _check_flow(self.x, flow)
        self.mask = mask
        self._s = _Sampler(np.asarray(flow, dtype=np.float64))
        self._corners = self._s.corners(self.x)
        self._warped = self._s.interpolate(self._corners)
        self.output = composite(self.x, self._warped, mask)

    def flow_gradient(self, grad_out) -> np.ndarray:
        return self._s.gradient(self._corners, self._warped, self.mask.inside, grad_out)


def project_flow(flow, xi: float) -> np.ndarray:
    """Clamp every displacement component to ``[-xi, xi]``."""
    if xi < 0:
        raise ValueError(f"flow budget must be non-negative, got {xi}")
    return np.clip(flow, -xi, xi)


def save_flow(flow, path) -> None:
    """Write ``flow`` in the SSTAFLO1 format (components stored as float32)."""
    flow = np.asarray(flow)
    _, h, w = flow.shape
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(flow.astype("<f4").tobytes(order="C"))


def load_flow(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != FLOW_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}, expected {FLOW_MAGIC!r}")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    h, w = struct.unpack("<II", raw[8:16])
    expected = 16 + 2 * h * w * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw) - 16} bytes, expected {expected - 16}")
    data = np.frombuffer(raw, dtype="<f4", offset=16).reshape(2, h, w)
    return data.astype(np.float64)
