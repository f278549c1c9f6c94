"""Segmentation of a frame stream into history/target/look-ahead blocks.

Blocks hop by ``n_center`` so that target ranges tile the stream exactly.
Block ``b`` (1-based) covers absolute frames
``[offset + (b-1)*n_center - n_left, offset + b*n_center + n_right)``;
frames outside ``[0, T)`` are zero-padded and flagged invalid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import AttentionMask
from .errors import ContractError, EmptyInputError, ParseError


@dataclass(frozen=True)
class BlockSpec:
    n_left: int
    n_center: int
    n_right: int
    frame_ms: int = 32

    def __post_init__(self):
        if self.n_center < 1:
            raise ContractError("n_center must be >= 1")
        if self.n_left < 0 or self.n_right < 0:
            raise ContractError("n_left/n_right must be >= 0")
        if self.frame_ms <= 0:
            raise ContractError("frame_ms must be positive")

    @property
    def width(self):
        return self.n_left + self.n_center + self.n_right

    @classmethod
    def parse(cls, text, frame_ms=32):
        """Parse the ``"N_l-N_c-N_r"`` config string, e.g. ``"8-4-4"``."""
        parts = text.strip().split("-")
        if len(parts) != 3:
            raise ParseError(f"bad block setting {text!r}, expected 'L-C-R'")
        try:
            left, center, right = (int(p) for p in parts)
        except ValueError as exc:
            raise ParseError(f"bad block setting {text!r}") from exc
        return cls(left, center, right, frame_ms=frame_ms)

    def __str__(self):
        return f"{self.n_left}-{self.n_center}-{self.n_right}"


@dataclass
class Block:
    """One materialized input block (zero-padded at stream edges)."""

    index: int
    frames: np.ndarray  # [width x d_feat]
    valid: np.ndarray  # [width] bool, False on padding
    center_range: tuple  # absolute [start, end) covered by target frames
    start: int  # absolute index of frames[0] (may be negative)
    spec: BlockSpec
    is_last: bool = False

    @property
    def center_slice(self):
        """Positions of the (real) target frames inside ``frames``."""
        lo = self.spec.n_left
        return slice(lo, lo + self.center_range[1] - self.center_range[0])

    @property
    def lookahead_slice(self):
        lo = self.spec.n_left + self.spec.n_center
        return slice(lo, self.spec.width)


def _gather(frames, start, width):
    T, d = frames.shape
    out = np.zeros((width, d), dtype=np.float64)
    valid = np.zeros(width, dtype=bool)
    lo = max(start, 0)
    hi = min(start + width, T)
    if hi > lo:
        out[lo - start : hi - start] = frames[lo:hi]
        valid[lo - start : hi - start] = True
    return out, valid


def segment(frames, spec, offset=0):
    """Split ``frames`` [T x d_feat] into the ordered block list.

    ``offset`` shifts the target-range tiling to start at that absolute
    frame (frames before it still appear as real history context).
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise EmptyInputError("segment: need a non-empty [T x d_feat] stream")
    T = frames.shape[0]
    if not 0 <= offset < T:
        raise ContractError(f"segment: offset {offset} outside [0, {T})")
    span = T - offset
    n_blocks = -(-span // spec.n_center)
    blocks = []
    for b in range(1, n_blocks + 1):
        start = offset + (b - 1) * spec.n_center - spec.n_left
        data, valid = _gather(frames, start, spec.width)
        center = (offset + (b - 1) * spec.n_center, min(offset + b * spec.n_center, T))
        blocks.append(
            Block(
                index=b,
                frames=data,
                valid=valid,
                center_range=center,
                start=start,
                spec=spec,
                is_last=(b == n_blocks),
            )
        )
    return blocks


def delay_ms(spec):
    """Structural delay induced by the look-ahead frames."""
    return spec.n_right * spec.frame_ms


def suffix_mask(spec, k):
    """Mask forbidding attention to the last ``k * n_center`` block positions.

    ``k = 0`` allows everything; ``k = n_right / n_center`` hides the whole
    look-ahead region.
    """
    if k < 0 or k * spec.n_center > spec.n_right:
        raise ContractError(f"suffix_mask: k={k} out of range for {spec}")
    width = spec.width
    allowed = np.ones((width, width), dtype=bool)
    if k > 0:
        allowed[:, width - k * spec.n_center :] = False
    return AttentionMask(allowed)
