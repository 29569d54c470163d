"""Single-file tensor container IO and flat top-k selection.

The container layout is the common one: an unsigned 64-bit little-endian
header length, a UTF-8 JSON header mapping tensor names to dtype/shape/offsets
(plus an optional "__metadata__" string map), followed by raw little-endian
tensor data. Writes are canonical (lexicographic tensor order, contiguous
offsets, sorted+compact JSON) so equal TensorMaps produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

_DTYPE_TO_NUMPY = {"F32": np.dtype("<f4"), "U8": np.dtype("|u1")}
_NUMPY_TO_DTYPE = {np.dtype(np.float32): "F32", np.dtype(np.uint8): "U8"}

_HEADER_LEN_FMT = "<Q"
_METADATA_KEY = "__metadata__"


def _check_tensor(name: str, arr: np.ndarray) -> np.ndarray:
    if not isinstance(name, str) or not name:
        raise ValidationError("tensor name must be a non-empty string")
    if name == _METADATA_KEY:
        raise ValidationError(f"tensor name {name!r} is reserved")
    if any(ord(c) < 0x20 or ord(c) == 0x7F for c in name):
        raise ValidationError(f"tensor name {name!r} contains control characters")
    arr = np.asarray(arr)
    if arr.dtype not in _NUMPY_TO_DTYPE:
        raise ValidationError(
            f"tensor {name!r} has unsupported dtype {arr.dtype}; only F32/U8 are stored"
        )
    return np.ascontiguousarray(arr)


@dataclass
class TensorMap:
    """Ordered name -> ndarray mapping plus string metadata.

    Iteration is always lexicographic by tensor name regardless of
    insertion order.
    """

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def put(self, name: str, arr: np.ndarray) -> None:
        self.tensors[name] = _check_tensor(name, arr)

    def get(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def items(self):
        for name in self.names():
            yield name, self.tensors[name]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorMap):
            return NotImplemented
        if self.metadata != other.metadata or self.names() != other.names():
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and np.array_equal(a, b)
            for (_, a), (_, b) in zip(self.items(), other.items())
        )


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of a flat top-k selection.

    kept_indices is sorted ascending and has exactly k entries.
    threshold_value is the smallest kept value (+inf when k == 0).
    tie_count_at_threshold counts all entries equal to the threshold,
    kept or not.
    """

    kept_indices: np.ndarray
    threshold_value: float
    tie_count_at_threshold: int


def select_topk(values: np.ndarray, k: int) -> SelectionResult:
    """Pick the k largest entries of a flat array, deterministically.

    Ties at the cut are broken by ascending flat index, so the result is a
    pure function of (values, k).
    """
    v = np.ascontiguousarray(values).reshape(-1)
    n = v.size
    if not 0 <= k <= n:
        raise ValidationError(f"k={k} out of range for {n} values")
    if v.size and not np.isfinite(v).all():
        raise ValidationError("select_topk requires finite values")
    if k == 0:
        return SelectionResult(np.empty(0, dtype=np.int64), float("inf"), 0)
    threshold = np.partition(v, n - k)[n - k]
    above = np.flatnonzero(v > threshold)
    at = np.flatnonzero(v == threshold)
    need = k - above.size
    kept = np.concatenate([above, at[:need]]).astype(np.int64, copy=False)
    kept.sort()
    return SelectionResult(kept, float(threshold), int(at.size))


def _encode_header(tm: TensorMap) -> tuple[bytes, list[tuple[str, np.ndarray]]]:
    header: dict[str, object] = {}
    ordered = list(tm.items())
    offset = 0
    for name, arr in ordered:
        arr = _check_tensor(name, arr)
        nbytes = arr.nbytes
        header[name] = {
            "dtype": _NUMPY_TO_DTYPE[arr.dtype],
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + nbytes],
        }
        offset += nbytes
    if tm.metadata:
        for key, value in tm.metadata.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise ValidationError("metadata must map strings to strings")
        header[_METADATA_KEY] = dict(sorted(tm.metadata.items()))
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return blob, ordered


def write_container(tm: TensorMap, path) -> None:
    """Write a TensorMap in canonical layout (deterministic bytes)."""
    blob, ordered = _encode_header(tm)
    try:
        with open(path, "wb") as f:
            f.write(struct.pack(_HEADER_LEN_FMT, len(blob)))
            f.write(blob)
            for _, arr in ordered:
                f.write(np.ascontiguousarray(arr).tobytes(order="C"))
    except OSError as exc:
        raise FormatError(f"cannot write container {path}: {exc}") from exc


def read_container(path) -> TensorMap:
    """Read a container file, validating the header against the data region."""
    try:
        f = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot open container {path}: {exc}") from exc
    with f:
        prefix = f.read(8)
        if len(prefix) != 8:
            raise FormatError(f"{path}: truncated header length")
        (header_len,) = struct.unpack(_HEADER_LEN_FMT, prefix)
        raw_header = f.read(header_len)
        if len(raw_header) != header_len:
            raise FormatError(f"{path}: truncated header")
        try:
            header = json.loads(raw_header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: malformed header JSON: {exc}") from exc
        if not isinstance(header, dict):
            raise FormatError(f"{path}: header is not a JSON object")

        data_start = 8 + header_len
        f.seek(0, 2)
        data_len = f.tell() - data_start

        metadata = header.pop(_METADATA_KEY, {})
        if not isinstance(metadata, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
        ):
            raise FormatError(f"{path}: __metadata__ must map strings to strings")

        entries = []
        for name, info in header.items():
            if not isinstance(info, dict):
                raise FormatError(f"{path}: entry {name!r} is not an object")
            dtype = info.get("dtype")
            if dtype not in _DTYPE_TO_NUMPY:
                raise FormatError(f"{path}: tensor {name!r} has unsupported dtype {dtype!r}")
            shape = info.get("shape")
            if not isinstance(shape, list) or not all(
                isinstance(d, int) and d >= 0 for d in shape
            ):
                raise FormatError(f"{path}: tensor {name!r} has invalid shape {shape!r}")
            offsets = info.get("data_offsets")
            if (
                not isinstance(offsets, list)
                or len(offsets) != 2
                or not all(isinstance(o, int) for o in offsets)
            ):
                raise FormatError(f"{path}: tensor {name!r} has invalid data_offsets")
            begin, end = offsets
            np_dtype = _DTYPE_TO_NUMPY[dtype]
            expected = int(np.prod(shape, dtype=np.int64)) * np_dtype.itemsize
            if not 0 <= begin <= end <= data_len:
                raise FormatError(f"{path}: tensor {name!r} offsets out of bounds")
            if end - begin != expected:
                raise FormatError(
                    f"{path}: tensor {name!r} size mismatch: "
                    f"shape {shape} wants {expected} bytes, offsets give {end - begin}"
                )
            entries.append((name, np_dtype, tuple(shape), begin, end))

        entries.sort(key=lambda e: (e[3], e[0]))
        prev_end = 0
        for name, _, _, begin, end in entries:
            if begin < prev_end:
                raise FormatError(f"{path}: tensor {name!r} overlaps the previous tensor")
            prev_end = max(prev_end, end)

        tm = TensorMap(metadata=dict(metadata))
        for name, np_dtype, shape, begin, end in entries:
            f.seek(data_start + begin)
            buf = bytearray(end - begin)
            if f.readinto(buf) != len(buf):
                raise FormatError(f"{path}: truncated data for tensor {name!r}")
            tm.put(name, np.frombuffer(buf, dtype=np_dtype).reshape(shape))
        return tm
