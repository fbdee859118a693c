"""Bit-exact model of the convolution engine datapath.

Conventions pinned by this model:

* cross-correlation (no kernel flip), valid-only output;
* weights are split into four 4-bit slices, the three low ones unsigned and
  the top one signed; in 8-bit mode two filters share a location
  (``filter1:filter0``), in 4-bit mode four (``filter3..filter0``);
* results are normalized by ``q_shift = q_x + q_w - q_out`` with
  round-half-up and saturated to 16 bits.
"""

from __future__ import annotations

import json
import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    ImageSmallerThanFilter,
    UnsupportedFilterSize,
    WeightOutOfRange,
)

PIX_MIN = -(1 << 15)
PIX_MAX = (1 << 15) - 1
ACC_BITS = 40
# y_in << q_shift must stay inside the accumulator
MAX_Q_SHIFT = ACC_BITS - 17
FILTERS_PER_PRECISION = {16: 1, 8: 2, 4: 4}
FILTER_SIZES = (3, 5)


@dataclass
class FeatureMap:
    width: int
    height: int
    pixels: np.ndarray  # shape (height, width), int64 holding 16-bit values
    q: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.int64).reshape(self.height, self.width)
        if not 0 <= self.q <= 15:
            raise ValueError("q must be in 0..15")
        if self.pixels.size and (self.pixels.min() < PIX_MIN or self.pixels.max() > PIX_MAX):
            raise ValueError("pixel outside 16-bit signed range")

    @classmethod
    def zeros(cls, width: int, height: int, q: int = 0) -> "FeatureMap":
        return cls(width, height, np.zeros((height, width), dtype=np.int64), q)


@dataclass
class WeightSet:
    filter_size: int
    precision: int
    filters: np.ndarray  # shape (n_filters, filter_size**2)
    q_w: int = 0

    def __post_init__(self):
        if self.filter_size not in FILTER_SIZES:
            raise UnsupportedFilterSize(f"filter size {self.filter_size} not in {FILTER_SIZES}")
        if self.precision not in FILTERS_PER_PRECISION:
            raise ValueError(f"precision must be one of {tuple(FILTERS_PER_PRECISION)}")
        self.filters = np.asarray(self.filters, dtype=np.int64).reshape(
            FILTERS_PER_PRECISION[self.precision], self.filter_size ** 2
        )
        lo, hi = -(1 << (self.precision - 1)), (1 << (self.precision - 1)) - 1
        if self.filters.min() < lo or self.filters.max() > hi:
            raise WeightOutOfRange(f"weights must be within [{lo}, {hi}] at {self.precision} bits")

    @property
    def n_filters(self) -> int:
        return FILTERS_PER_PRECISION[self.precision]


@dataclass
class HwceJob:
    input: FeatureMap
    weights: WeightSet
    q_out: int = 0
    y_in: Optional[List[FeatureMap]] = None

    @property
    def out_width(self) -> int:
        return self.input.width - self.weights.filter_size + 1

    @property
    def out_height(self) -> int:
        return self.input.height - self.weights.filter_size + 1

    @property
    def q_shift(self) -> int:
        return self.input.q + self.weights.q_w - self.q_out


def interleave_weights(ws: WeightSet) -> List[int]:
    """Pack a weight set into filter_size**2 16-bit buffer locations."""
    bits = ws.precision
    mask = (1 << bits) - 1
    out = []
    for k in range(ws.filter_size ** 2):
        word = 0
        for f in range(ws.n_filters):
            word |= (int(ws.filters[f, k]) & mask) << (bits * f)
        out.append(word)
    return out


def _sext(v: int, bits: int) -> int:
    return v - (1 << bits) if v & (1 << (bits - 1)) else v


def deinterleave_weights(buf: Sequence[int], filter_size: int, precision: int, q_w: int = 0) -> WeightSet:
    n = FILTERS_PER_PRECISION[precision]
    mask = (1 << precision) - 1
    filters = [[_sext((word >> (precision * f)) & mask, precision) for word in buf] for f in range(n)]
    return WeightSet(filter_size, precision, np.array(filters), q_w)


class LineBuffer:
    """Chain of ``fs`` row FIFOs; a window is the last ``fs`` entries of each.

    Pixels enter the newest FIFO; when a FIFO holds a full row its oldest
    pixel moves on to the next older FIFO.
    """

    def __init__(self, width: int, fs: int):
        self.width = width
        self.fs = fs
        self.fifos = [deque() for _ in range(fs)]  # index 0 is the oldest row
        self.count = 0

    def push(self, px: int) -> Optional[List[int]]:
        carry = px
        for fifo in reversed(self.fifos):
            fifo.append(carry)
            if len(fifo) <= self.width:
                carry = None
                break
            carry = fifo.popleft()
        r, c = divmod(self.count, self.width)
        self.count += 1
        if r >= self.fs - 1 and c >= self.fs - 1:
            fs = self.fs
            return [v for fifo in self.fifos for v in list(fifo)[len(fifo) - fs:]]
        return None


def extract_windows(fm: FeatureMap, fs: int) -> np.ndarray:
    """All valid fs x fs windows in raster order, shape (n_windows, fs*fs)."""
    if fm.width < fs or fm.height < fs:
        raise ImageSmallerThanFilter(f"{fm.width}x{fm.height} image smaller than {fs}x{fs} filter")
    lb = LineBuffer(fm.width, fs)
    wins = []
    for px in fm.pixels.ravel().tolist():
        w = lb.push(px)
        if w is not None:
            wins.append(w)
    return np.array(wins, dtype=np.int64).reshape(-1, fs * fs)


def sop_slice(window, digits, slice_index: int, top_is_signed: bool):
    """Sum of products of a window with one 4-bit weight slice.

    Works on a single window (1-D) or a stack of windows (2-D). The caller
    applies the ``<< 4*slice_index`` weighting.
    """
    if not 0 <= slice_index < 4:
        raise ValueError("slice_index must be in 0..3")
    d = np.asarray(digits, dtype=np.int64) & 0xF
    if top_is_signed:
        d = np.where(d >= 8, d - 16, d)
    res = np.asarray(window, dtype=np.int64) @ d
    return int(res) if np.ndim(res) == 0 else res


def normalize_saturate(acc, q_shift: int):
    """Round-half-up arithmetic right shift by ``q_shift``, clamped to 16 bits."""
    if q_shift < 0:
        raise ValueError("q_shift must be >= 0")
    a = np.asarray(acc, dtype=np.int64)
    if q_shift:
        a = (a + (1 << (q_shift - 1))) >> q_shift
    a = np.clip(a, PIX_MIN, PIX_MAX)
    return int(a) if a.ndim == 0 else a


def _slice_products(windows: np.ndarray, buf: List[int]) -> List[np.ndarray]:
    words = np.array(buf, dtype=np.int64)
    return [sop_slice(windows, (words >> (4 * j)) & 0xF, j, top_is_signed=False) for j in range(4)] + [
        sop_slice(windows, (words >> (4 * j)) & 0xF, j, top_is_signed=True) for j in range(4)
    ]


def _combine(prods: List[np.ndarray], precision: int) -> List[np.ndarray]:
    u, s = prods[:4], prods[4:]
    if precision == 16:
        return [u[0] + (u[1] << 4) + (u[2] << 8) + (s[3] << 12)]
    if precision == 8:
        return [u[0] + (s[1] << 4), u[2] + (s[3] << 4)]
    return [s[0], s[1], s[2], s[3]]


def hwce_convolve(job: HwceJob) -> List[FeatureMap]:
    """Run one accumulation-of-convolutions job; returns 1, 2 or 4 output maps."""
    ws = job.weights
    fs = ws.filter_size
    if fs not in FILTER_SIZES:
        raise UnsupportedFilterSize(f"filter size {fs} not supported")
    if job.input.width < fs or job.input.height < fs:
        raise ImageSmallerThanFilter("input smaller than filter")
    ow, oh = job.out_width, job.out_height
    q_shift = job.q_shift
    if not 0 <= q_shift <= MAX_Q_SHIFT:
        raise DimensionMismatch(f"q_shift={q_shift} outside 0..{MAX_Q_SHIFT}")
    y_in = job.y_in
    if y_in is None:
        y_in = [FeatureMap.zeros(ow, oh, job.q_out) for _ in range(ws.n_filters)]
    if len(y_in) != ws.n_filters:
        raise DimensionMismatch(f"expected {ws.n_filters} y_in maps, got {len(y_in)}")
    for m in y_in:
        if (m.width, m.height) != (ow, oh):
            raise DimensionMismatch(f"y_in is {m.width}x{m.height}, output is {ow}x{oh}")

    windows = extract_windows(job.input, fs)
    sums = _combine(_slice_products(windows, interleave_weights(ws)), ws.precision)
    out = []
    for m, conv in enumerate(sums):
        acc = (y_in[m].pixels.ravel() << q_shift) + conv
        assert np.all(np.abs(acc) < (1 << (ACC_BITS - 1))), "accumulator overflow"
        out.append(FeatureMap(ow, oh, normalize_saturate(acc, q_shift).reshape(oh, ow), job.q_out))
    return out


# -- blob serialization ---------------------------------------------------

_HDR = struct.Struct("<3i")


def feature_map_to_bytes(fm: FeatureMap) -> bytes:
    return _HDR.pack(fm.width, fm.height, fm.q) + fm.pixels.astype("<i2").tobytes()


def feature_map_from_bytes(data: bytes) -> FeatureMap:
    w, h, q = _HDR.unpack_from(data)
    px = np.frombuffer(data, dtype="<i2", offset=_HDR.size)
    if px.size != w * h:
        raise DimensionMismatch(f"blob holds {px.size} pixels, header says {w}x{h}")
    return FeatureMap(w, h, px.astype(np.int64).reshape(h, w), q)


def weights_to_bytes(ws: WeightSet) -> bytes:
    """Header {filter_size, precision, q_w} followed by the interleaved buffer."""
    words = np.array(interleave_weights(ws), dtype=np.uint16)
    return _HDR.pack(ws.filter_size, ws.precision, ws.q_w) + words.astype("<u2").tobytes()


def weights_from_bytes(data: bytes) -> WeightSet:
    fs, prec, q_w = _HDR.unpack_from(data)
    words = np.frombuffer(data, dtype="<u2", offset=_HDR.size)
    if words.size != fs * fs:
        raise DimensionMismatch("weight blob size does not match filter size")
    return deinterleave_weights([int(w) for w in words], fs, prec, q_w)


def load_job_manifest(path) -> HwceJob:
    """Load a JSON manifest {input, weights, q_out, y_in?} of blob paths."""
    path = Path(path)
    spec = json.loads(path.read_text())
    base = path.parent
    fm = feature_map_from_bytes((base / spec["input"]).read_bytes())
    ws = weights_from_bytes((base / spec["weights"]).read_bytes())
    y_in = None
    if spec.get("y_in"):
        y_in = [feature_map_from_bytes((base / p).read_bytes()) for p in spec["y_in"]]
    return HwceJob(fm, ws, int(spec.get("q_out", 0)), y_in)
