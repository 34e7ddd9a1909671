"""Infrastructure-to-vehicle link: byte-exact encoding, compression, latency.

Wire formats (little-endian throughout):

* box record: 7 x float32 (x, y, z, w, l, h, yaw) + uint8 category code +
  float32 score = 33 bytes
* point record: 4 x float32 (x, y, z, intensity) = 16 bytes
* raw grid: C-order float32 values only (the spec travels in the run
  config), so a rows x cols x channels grid costs exactly rows*cols*channels*4
* compressed grid: 28-byte spec header (5 x int32: cols, rows, channels,
  x0 in millimeters, y0 in millimeters; 2 x float32: cell size, timestamp),
  1 payload-kind byte, then per block: per-channel (min, max) float32 pairs,
  a uint32 run count, alternating zero/nonzero run lengths (uint32, starting
  with a zero run), and the nonzero cells' channel values quantized to 8 bits
  between the channel min and max

Compression is per-channel linear 8-bit quantization plus run-length coding
of all-zero cells; zero cells decode to exactly 0 and constant channels
decode exactly. A message's ``content`` holds the decoded payload, i.e.
what the receiver would reconstruct, including quantization loss.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CapacityError, ConfigurationError, DecodeError
from .geometry import CATEGORY_ORDER, Box3D
from .sensing import FeatureFlow, FeatureGrid, GridSpec, PointCloud

BOX_RECORD_BYTES = 33
POINT_RECORD_BYTES = 16
GRID_HEADER = struct.Struct("<5i2f")
CHANNEL_RANGE = struct.Struct("<2f")

_KIND_GRID = 0
_KIND_FLOW = 1
_KIND_GRID_WITH_FLOW = 2


class MessageKind(Enum):
    RAW_POINTS = "raw_points"
    DETECTIONS = "detections"
    FEATURE = "feature"
    FEATURE_WITH_FLOW = "feature_with_flow"


@dataclass(frozen=True)
class ChannelMessage:
    """A timestamped payload with exact byte accounting.

    ``payload_bytes`` is the size actually sent; ``raw_bytes`` is what the
    same content would cost uncompressed (equal when compression is off).
    ``t_arrive`` is None until the message passes through a latency model.
    """

    kind: MessageKind
    payload_bytes: int
    t_send: float
    t_arrive: Optional[float]
    content: object
    raw_bytes: int

    def arrived_by(self, t_now: float) -> bool:
        return self.t_arrive is not None and self.t_arrive <= t_now


@dataclass(frozen=True)
class LatencyModel:
    """Transport delay: constant, or constant plus uniform jitter."""

    kind: str = "constant"  # "constant" | "uniform"
    base_ms: float = 0.0
    jitter_ms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("constant", "uniform"):
            raise ConfigurationError(f"unknown latency model kind {self.kind!r}")
        if self.base_ms < 0 or self.jitter_ms < 0:
            raise ConfigurationError("latency parameters must be non-negative")

    def delay_s(self, message_index: int) -> float:
        if self.kind == "constant" or self.jitter_ms == 0.0:
            return self.base_ms / 1000.0
        rng = np.random.default_rng([self.seed, message_index])
        return (self.base_ms + rng.uniform(0.0, self.jitter_ms)) / 1000.0


@dataclass(frozen=True)
class CompressionConfig:
    enabled: bool = True
    mtu_bytes: Optional[int] = None


def _spec_header_bytes(spec: GridSpec, timestamp: float) -> bytes:
    x0_mm = int(round(spec.x0 * 1000.0))
    y0_mm = int(round(spec.y0 * 1000.0))
    return GRID_HEADER.pack(spec.cols, spec.rows, spec.channels, x0_mm, y0_mm,
                            spec.cell_size, timestamp)


def _parse_spec_header(data: bytes):
    if len(data) < GRID_HEADER.size:
        raise DecodeError("truncated grid header")
    cols, rows, channels, x0_mm, y0_mm, cell, timestamp = GRID_HEADER.unpack_from(data, 0)
    if cols <= 0 or rows <= 0 or channels <= 0 or cell <= 0:
        raise DecodeError("malformed grid header")
    spec = GridSpec(x0=x0_mm / 1000.0, y0=y0_mm / 1000.0, cell_size=float(cell),
                    cols=cols, rows=rows, channels=channels)
    return spec, float(timestamp), GRID_HEADER.size


def _compress_values(values: np.ndarray) -> bytes:
    """One block: channel ranges, zero-cell runs, quantized nonzero cells."""
    rows, cols, channels = values.shape
    flat = values.reshape(-1, channels)
    nonzero = ~np.all(flat == 0.0, axis=1)

    mins = flat.min(axis=0)
    maxs = flat.max(axis=0)
    spans = maxs - mins
    codes = np.zeros_like(flat, dtype=np.uint8)
    for ch in range(channels):
        if spans[ch] > 0:
            codes[:, ch] = np.round((flat[:, ch] - mins[ch]) / spans[ch] * 255.0).astype(np.uint8)

    # Alternating run lengths over flattened cells, starting with a zero run.
    n = len(flat)
    if n:
        change = np.flatnonzero(np.diff(nonzero))
        bounds = np.concatenate([[0], change + 1, [n]])
        runs = np.diff(bounds).astype(np.uint32)
        if nonzero[0]:
            runs = np.concatenate([[np.uint32(0)], runs])
    else:
        runs = np.zeros(0, dtype=np.uint32)

    parts = [CHANNEL_RANGE.pack(float(mins[ch]), float(maxs[ch])) for ch in range(channels)]
    parts.append(struct.pack("<I", len(runs)))
    parts.append(runs.astype("<u4").tobytes())
    parts.append(codes[nonzero].tobytes())
    return b"".join(parts)


def _decompress_values(data: bytes, offset: int, spec: GridSpec):
    channels = spec.channels
    need = channels * CHANNEL_RANGE.size + 4
    if len(data) < offset + need:
        raise DecodeError("truncated channel table")
    mins = np.empty(channels)
    maxs = np.empty(channels)
    for ch in range(channels):
        mins[ch], maxs[ch] = CHANNEL_RANGE.unpack_from(data, offset)
        offset += CHANNEL_RANGE.size
    (n_runs,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if len(data) < offset + 4 * n_runs:
        raise DecodeError("truncated run table")
    runs = np.frombuffer(data, dtype="<u4", count=n_runs, offset=offset).astype(np.int64)
    offset += 4 * n_runs

    n_cells = spec.rows * spec.cols
    if runs.sum() != n_cells:
        raise DecodeError(f"run lengths cover {runs.sum()} cells, expected {n_cells}")
    zero_flags = np.zeros(len(runs), dtype=bool)
    zero_flags[::2] = True
    mask_nonzero = np.repeat(~zero_flags, runs)

    n_nz = int(mask_nonzero.sum())
    if len(data) < offset + n_nz * spec.channels:
        raise DecodeError("truncated value stream")
    codes = np.frombuffer(data, dtype=np.uint8, count=n_nz * channels, offset=offset)
    codes = codes.reshape(n_nz, channels).astype(float)
    offset += n_nz * channels

    flat = np.zeros((n_cells, channels))
    spans = maxs - mins
    decoded = np.where(spans > 0, mins + codes / 255.0 * spans, mins)
    flat[mask_nonzero] = decoded
    return flat.reshape(spec.rows, spec.cols, channels), offset


def compress_grid(g: Union[FeatureGrid, FeatureFlow]) -> bytes:
    """Serialize one grid or flow with quantization and zero-cell RLE."""
    kind = _KIND_FLOW if isinstance(g, FeatureFlow) else _KIND_GRID
    frame = getattr(g, "frame", "")
    header = _spec_header_bytes(g.spec, g.timestamp)
    return header + bytes([kind]) + _compress_values(g.values) + _frame_tag(frame)


def compress_grid_pair(f0: FeatureGrid, f1: FeatureFlow) -> bytes:
    """Serialize a grid and its flow sharing one spec header."""
    if f0.spec != f1.spec:
        raise ValueError("grid and flow must share a spec")
    header = _spec_header_bytes(f0.spec, f0.timestamp)
    return (header + bytes([_KIND_GRID_WITH_FLOW]) + _compress_values(f0.values)
            + _compress_values(f1.values) + _frame_tag(f0.frame))


def _frame_tag(frame: str) -> bytes:
    raw = frame.encode("utf-8")[:255]
    return bytes([len(raw)]) + raw


def _parse_frame_tag(data: bytes, offset: int) -> Tuple[str, int]:
    if len(data) < offset + 1:
        raise DecodeError("missing frame tag")
    n = data[offset]
    if len(data) < offset + 1 + n:
        raise DecodeError("truncated frame tag")
    return data[offset + 1 : offset + 1 + n].decode("utf-8"), offset + 1 + n


def decompress_grid(data: bytes):
    """Inverse of compress_grid / compress_grid_pair.

    Returns a FeatureGrid, a FeatureFlow, or a (FeatureGrid, FeatureFlow)
    tuple depending on what was encoded.
    """
    spec, timestamp, offset = _parse_spec_header(data)
    if len(data) < offset + 1:
        raise DecodeError("missing payload kind byte")
    kind = data[offset]
    offset += 1
    if kind == _KIND_GRID:
        values, offset = _decompress_values(data, offset, spec)
        frame, _ = _parse_frame_tag(data, offset)
        return FeatureGrid(spec=spec, values=values, timestamp=timestamp, frame=frame)
    if kind == _KIND_FLOW:
        values, offset = _decompress_values(data, offset, spec)
        return FeatureFlow(spec=spec, values=values, timestamp=timestamp)
    if kind == _KIND_GRID_WITH_FLOW:
        v0, offset = _decompress_values(data, offset, spec)
        v1, offset = _decompress_values(data, offset, spec)
        frame, _ = _parse_frame_tag(data, offset)
        return (
            FeatureGrid(spec=spec, values=v0, timestamp=timestamp, frame=frame),
            FeatureFlow(spec=spec, values=v1, timestamp=timestamp),
        )
    raise DecodeError(f"unknown payload kind byte {kind}")


def _encode_points(pc: PointCloud) -> Tuple[bytes, PointCloud]:
    data = pc.points.astype("<f4").tobytes()
    decoded = PointCloud(
        points=pc.points.astype(np.float32).astype(float),
        frame=pc.frame,
        timestamp=pc.timestamp,
    )
    return data, decoded


def _encode_detections(dets: Sequence) -> Tuple[bytes, list]:
    from .detector import Detection  # local import avoids a cycle at module load

    parts = []
    decoded = []
    for d in dets:
        b = d.box
        code = CATEGORY_ORDER.index(b.category)
        parts.append(struct.pack("<7fBf", b.x, b.y, b.z, b.w, b.l, b.h, b.yaw, code, d.score))
        f32 = [float(np.float32(v)) for v in (b.x, b.y, b.z, b.w, b.l, b.h, b.yaw)]
        decoded.append(
            Detection(
                box=Box3D(*f32, category=b.category),
                score=float(np.float32(d.score)),
            )
        )
    return b"".join(parts), decoded


def _grid_raw_bytes(g: Union[FeatureGrid, FeatureFlow]) -> int:
    rows, cols, channels = g.values.shape
    return rows * cols * channels * 4


def _f32_grid(g: FeatureGrid) -> FeatureGrid:
    return FeatureGrid(spec=g.spec, values=g.values.astype(np.float32).astype(float),
                       timestamp=g.timestamp, frame=g.frame)


def _f32_flow(f: FeatureFlow) -> FeatureFlow:
    return FeatureFlow(spec=f.spec, values=f.values.astype(np.float32).astype(float),
                       timestamp=f.timestamp)


def encode_message(
    kind: MessageKind,
    content,
    compression: CompressionConfig,
    t_send: float,
) -> ChannelMessage:
    """Serialize content for transmission and account bytes exactly.

    The message's ``content`` is the payload as decoded by the receiver:
    float32-rounded for raw encodings, quantization-rounded for compressed
    grids. Raises CapacityError if the payload exceeds the configured MTU.
    """
    if kind is MessageKind.RAW_POINTS:
        if not isinstance(content, PointCloud):
            raise ValueError("raw_points content must be a PointCloud")
        data, decoded = _encode_points(content)
        raw = len(data)
    elif kind is MessageKind.DETECTIONS:
        data, decoded = _encode_detections(content)
        raw = len(data)
    elif kind is MessageKind.FEATURE:
        if not isinstance(content, FeatureGrid):
            raise ValueError("feature content must be a FeatureGrid")
        raw = _grid_raw_bytes(content)
        if compression.enabled:
            data = compress_grid(content)
            decoded = decompress_grid(data)
        else:
            data = content.values.astype("<f4").tobytes()
            decoded = _f32_grid(content)
    elif kind is MessageKind.FEATURE_WITH_FLOW:
        f0, f1 = content
        if f0.spec != f1.spec:
            raise ValueError("feature and flow must share a spec")
        raw = _grid_raw_bytes(f0) + _grid_raw_bytes(f1)
        if compression.enabled:
            data = compress_grid_pair(f0, f1)
            decoded = decompress_grid(data)
        else:
            data = f0.values.astype("<f4").tobytes() + f1.values.astype("<f4").tobytes()
            decoded = (_f32_grid(f0), _f32_flow(f1))
    else:
        raise ValueError(f"unknown message kind {kind}")

    payload = len(data)
    if compression.mtu_bytes is not None and payload > compression.mtu_bytes:
        raise CapacityError(
            f"payload of {payload} bytes exceeds MTU cap {compression.mtu_bytes}"
        )
    return ChannelMessage(kind=kind, payload_bytes=payload, t_send=t_send,
                          t_arrive=None, content=decoded, raw_bytes=raw)


def transmit(m: ChannelMessage, lm: LatencyModel, message_index: int = 0) -> ChannelMessage:
    """Stamp the arrival time from the latency model."""
    return replace(m, t_arrive=m.t_send + lm.delay_s(message_index))


def latest_available(messages: Sequence[ChannelMessage], t_now: float) -> Optional[ChannelMessage]:
    """Most recently captured message that has arrived by ``t_now``.

    ``messages`` must be sorted by send time. Among equal arrival times the
    larger send time wins, which the reverse scan gives for free.
    """
    for m in reversed(messages):
        if m.arrived_by(t_now):
            return m
    return None


def bps(messages: Sequence[ChannelMessage], duration_s: float) -> float:
    """Transmitted bytes per second over a window starting at time zero."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    total = sum(m.payload_bytes for m in messages if m.t_send <= duration_s)
    return total / duration_s


def bps_raw(messages: Sequence[ChannelMessage], duration_s: float) -> float:
    """Pre-compression bytes per second over the same window as bps()."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    total = sum(m.raw_bytes for m in messages if m.t_send <= duration_s)
    return total / duration_s


@dataclass
class Channel:
    """Single-writer event log of transmitted messages for one run."""

    latency: LatencyModel
    compression: CompressionConfig = CompressionConfig()
    messages: List[ChannelMessage] = field(default_factory=list)

    def send(self, kind: MessageKind, content, t_send: float) -> ChannelMessage:
        msg = encode_message(kind, content, self.compression, t_send)
        msg = transmit(msg, self.latency, message_index=len(self.messages))
        self.messages.append(msg)
        return msg

    def latest(self, t_now: float) -> Optional[ChannelMessage]:
        return latest_available(self.messages, t_now)

    def export_jsonl(self, path) -> None:
        """Audit log: one line per message with times, kind and sizes."""
        with open(path, "w", encoding="utf-8") as fh:
            for m in self.messages:
                fh.write(json.dumps({
                    "t_send": m.t_send,
                    "t_arrive": m.t_arrive,
                    "kind": m.kind.value,
                    "payload_bytes": m.payload_bytes,
                    "raw_bytes": m.raw_bytes,
                }) + "\n")
