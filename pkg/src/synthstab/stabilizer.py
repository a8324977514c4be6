"""Warping, cropping, and the end-to-end stabilization pipeline.

The stabilizer accumulates per-pair motion estimates into a camera
trajectory, smooths it, and warps every frame by the similarity taking
its raw pose to the smoothed pose.  A centered crop hides the border
that warping exposes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affine import AffineParams, invert, params_to_matrix
from .errors import InvalidSpecError, LengthMismatchError, SingularTransformError
from .kernels import affine_bilinear
from .smoothing import SmoothingResult, Trajectory, accumulate, smooth_trajectory


@dataclass(frozen=True)
class CropWindow:
    """Axis-aligned crop rectangle in pixel coordinates."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InvalidSpecError("crop window must be at least 1x1")
        if self.x0 < 0 or self.y0 < 0:
            raise InvalidSpecError("crop window origin must be non-negative")

    @staticmethod
    def centered(frame_width: int, frame_height: int, ratio: float) -> "CropWindow":
        """Centered window of the given side ratio, floored to even sizes."""
        if not 0.0 < ratio <= 1.0:
            raise InvalidSpecError(f"crop ratio must lie in (0, 1], got {ratio}")
        w = int(frame_width * ratio) // 2 * 2
        h = int(frame_height * ratio) // 2 * 2
        w = max(w, 2)
        h = max(h, 2)
        return CropWindow((frame_width - w) // 2, (frame_height - h) // 2, w, h)

    def apply(self, frame: np.ndarray) -> np.ndarray:
        if self.y0 + self.height > frame.shape[0] or self.x0 + self.width > frame.shape[1]:
            raise InvalidSpecError(
                f"crop {self} exceeds frame of shape {frame.shape}"
            )
        return frame[
            self.y0 : self.y0 + self.height, self.x0 : self.x0 + self.width
        ].copy()

    @property
    def area(self) -> int:
        return self.width * self.height


def _warp_arrays(
    frame: np.ndarray, params: AffineParams, fill: int
) -> tuple[np.ndarray, np.ndarray]:
    """Warped uint8 frame and the boolean in-bounds mask."""
    arr = np.asarray(frame)
    if arr.ndim != 2:
        raise InvalidSpecError("warp_frame expects a 2D grayscale frame")
    fwd = params_to_matrix(params)
    det = fwd[0, 0] * fwd[1, 1] - fwd[0, 1] * fwd[1, 0]
    if abs(det) < 1e-12:
        raise SingularTransformError(f"transform {params} is not invertible")
    sampling = invert(fwd)
    vals, inside = affine_bilinear(
        arr.astype(np.float64), sampling, arr.shape[0], arr.shape[1]
    )
    out = np.where(
        inside,
        np.clip(np.rint(vals), 0, 255),
        float(fill),
    ).astype(np.uint8)
    return out, inside


def warp_frame(
    frame: np.ndarray, params: AffineParams, fill: int = 0
) -> tuple[np.ndarray, float]:
    """Apply a similarity to a frame; returns it and the valid fraction.

    ``params`` is the forward map: output pixel ``q`` shows the input at
    the preimage of ``q``.  Pixels mapping outside the input get
    ``fill``.
    """
    out, inside = _warp_arrays(frame, params, fill)
    return out, float(inside.mean())


@dataclass
class StabilizationResult:
    """Everything the stabilize pipeline produced for one video."""

    frames: list[np.ndarray]
    applied: list[AffineParams]
    valid_fractions: list[float]
    crop: CropWindow
    raw_trajectory: Trajectory
    smoothing: SmoothingResult
    warnings: list[str]


def stabilize_video(
    frames: list[np.ndarray],
    estimates: list[AffineParams],
    window: int = 51,
    polyorder: int = 1,
    crop_ratio: float = 0.8,
    fill: int = 0,
) -> StabilizationResult:
    """Smooth the estimated trajectory and warp every frame onto it.

    Frame 0 is never warped; frame ``i`` (i >= 1) is warped by the
    correction taking its accumulated raw pose to the smoothed pose.
    Valid fractions are measured inside the crop window.
    """
    if len(frames) < 2:
        raise InvalidSpecError("need at least two frames to stabilize")
    if len(estimates) != len(frames) - 1:
        raise LengthMismatchError(
            f"{len(estimates)} estimates for {len(frames)} frames"
        )
    h, w = frames[0].shape[:2]
    for i, f in enumerate(frames):
        if f.shape[:2] != (h, w):
            raise LengthMismatchError(
                f"frame {i} has shape {f.shape}, expected {(h, w)}"
            )
    raw = accumulate(estimates)
    smoothing = smooth_trajectory(raw, window=window, polyorder=polyorder)
    crop = CropWindow.centered(w, h, crop_ratio)

    applied: list[AffineParams] = [AffineParams.identity()]
    applied.extend(smoothing.corrections)

    out_frames: list[np.ndarray] = []
    fractions: list[float] = []
    warnings: list[str] = []
    for i, frame in enumerate(frames):
        warped, inside = _warp_arrays(frame, applied[i], fill)
        window_mask = crop.apply(inside.astype(np.uint8))
        fraction = float(window_mask.mean())
        out_frames.append(crop.apply(warped))
        fractions.append(fraction)
        if fraction < 1.0:
            warnings.append(
                f"frame {i}: {100.0 * (1.0 - fraction):.2f}% of the crop "
                "window fell outside the source frame"
            )
    return StabilizationResult(
        frames=out_frames,
        applied=applied,
        valid_fractions=fractions,
        crop=crop,
        raw_trajectory=raw,
        smoothing=smoothing,
        warnings=warnings,
    )
