"""Core data types and on-disk formats.

Three kinds of files live here:

* feature files -- binary ``.cbvf`` or text ``.cbvt``, one or more
  fixed-dimension float32 vectors per item,
* relevance / prediction lists -- ``.rel`` / ``.pred``, one
  ``query<TAB>id1,id2,...`` line per query (the two formats are identical,
  so an evaluation run can consume the prediction writer's output),
* candidate lists -- ``.cand``, one id per line.

Binary ``.cbvf`` layout: magic ``CBVF``, u8 version (1), u8 flags (bit 0 =
pooled), two reserved zero bytes, u32 LE item count, u32 LE dimension, then
per record: u16 LE id byte length, UTF-8 id bytes, u32 LE frame count F
(must be 1 when the pooled flag is set), F x dim little-endian float32.

All loaders reject malformed input with :class:`FormatError` carrying the
record index and byte offset (or line number for text formats); they never
let struct/unicode/index errors escape.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

FEATURE_MAGIC = b"CBVF"
FORMAT_VERSION = 1
MAX_ID_BYTES = 255

_RESERVED_CHARS = ("\t", ",", "\n", "\r")
_HEADER = struct.Struct("<4sBBHII")  # magic, version, flags, reserved, N, dim


class FormatError(ValueError):
    """A file does not conform to its format; message carries the position."""


def item_id_problem(item_id: str) -> str | None:
    """Return a description of why ``item_id`` is invalid, or None if it is fine."""
    if not item_id:
        return "empty id"
    if len(item_id.encode("utf-8")) > MAX_ID_BYTES:
        return f"id longer than {MAX_ID_BYTES} bytes"
    for ch in _RESERVED_CHARS:
        if ch in item_id:
            return f"id contains reserved character {ch!r}"
    return None


def validate_item_id(item_id: str) -> str:
    problem = item_id_problem(item_id)
    if problem is not None:
        raise ValueError(f"invalid item id {item_id!r}: {problem}")
    return item_id


@dataclass(eq=False)
class FeatureSet:
    """Fixed-dimension feature vectors keyed by item id.

    ``items`` maps each id to a float32 array of shape (n_frames, dim);
    iteration order is the insertion order of the source file.  ``pooled``
    asserts that every item holds exactly one vector (pass None to derive
    it).  Vectors are rounded to float32 once, on construction, and are
    immutable afterwards.
    """

    dim: int
    items: dict[str, np.ndarray]
    pooled: bool | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.dim, int) or self.dim < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dim!r}")
        normalized: dict[str, np.ndarray] = {}
        all_single = True
        for item_id, vectors in self.items.items():
            validate_item_id(item_id)
            arr = np.array(vectors, dtype=np.float32)
            if arr.ndim == 1:
                arr = arr.reshape(1, -1)
            if arr.ndim != 2 or arr.shape[1] != self.dim:
                raise ValueError(
                    f"item {item_id!r}: expected vectors of dimension {self.dim}, "
                    f"got array of shape {arr.shape}"
                )
            if arr.shape[0] < 1:
                raise ValueError(f"item {item_id!r} has no vectors")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"item {item_id!r} contains a non-finite value")
            arr.flags.writeable = False
            all_single = all_single and arr.shape[0] == 1
            normalized[item_id] = arr
        if self.pooled is None:
            self.pooled = all_single
        elif self.pooled and not all_single:
            raise ValueError("pooled feature set has an item with more than one vector")
        self.items = normalized

    def __len__(self) -> int:
        return len(self.items)

    @property
    def ids(self) -> list[str]:
        return list(self.items.keys())

    def vector(self, item_id: str) -> np.ndarray:
        """The single pooled vector of ``item_id`` (requires a pooled set)."""
        if not self.pooled:
            raise ValueError("vector() requires a pooled feature set")
        return self.items[item_id][0]

    def matrix(self, ids: Sequence[str] | None = None) -> np.ndarray:
        """Stack pooled vectors into an (n_items, dim) float32 matrix."""
        if not self.pooled:
            raise ValueError("matrix() requires a pooled feature set")
        keys = self.ids if ids is None else list(ids)
        if not keys:
            return np.empty((0, self.dim), dtype=np.float32)
        return np.stack([self.items[k][0] for k in keys])

    def subset(self, ids: Sequence[str]) -> "FeatureSet":
        """A new set holding ``ids`` in the given order."""
        missing = [i for i in ids if i not in self.items]
        if missing:
            raise ValueError(f"ids not present in feature set: {missing[:10]}")
        return FeatureSet(self.dim, {i: self.items[i] for i in ids}, pooled=None)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        if self.dim != other.dim or self.pooled != other.pooled:
            return False
        if list(self.items) != list(other.items):
            return False
        for key, arr in self.items.items():
            brr = other.items[key]
            # bitwise payload comparison: distinguishes -0.0 from 0.0
            if arr.shape != brr.shape or arr.tobytes() != brr.tobytes():
                return False
        return True


@dataclass
class RelevanceTable:
    """Ground truth: per query, the ordered list of its most relevant items.

    ``candidate_ids`` is the pool the lists draw from.  Lists never contain
    their own query or duplicates.
    """

    entries: dict[str, list[str]]
    candidate_ids: list[str]

    def __post_init__(self) -> None:
        candidates = list(self.candidate_ids)
        seen: set[str] = set()
        for cid in candidates:
            validate_item_id(cid)
            if cid in seen:
                raise ValueError(f"duplicate candidate id {cid!r}")
            seen.add(cid)
        entries: dict[str, list[str]] = {}
        for query, members in self.entries.items():
            validate_item_id(query)
            members = list(members)
            in_list: set[str] = set()
            for member in members:
                validate_item_id(member)
                if member == query:
                    raise ValueError(f"self-reference in relevance list of {query!r}")
                if member in in_list:
                    raise ValueError(f"duplicate id {member!r} in list of {query!r}")
                if member not in seen:
                    raise ValueError(
                        f"id {member!r} in list of {query!r} is not in the candidate set"
                    )
                in_list.add(member)
            entries[query] = members
        self.entries = entries
        self.candidate_ids = candidates


@dataclass
class PredictionTable:
    """Predicted top-K lists, one ordered list per query (best first)."""

    entries: dict[str, list[str]]

    def __post_init__(self) -> None:
        entries: dict[str, list[str]] = {}
        for query, members in self.entries.items():
            validate_item_id(query)
            members = list(members)
            in_list: set[str] = set()
            for member in members:
                validate_item_id(member)
                if member == query:
                    raise ValueError(f"self-reference in prediction list of {query!r}")
                if member in in_list:
                    raise ValueError(f"duplicate id {member!r} in prediction of {query!r}")
                in_list.add(member)
            entries[query] = members
        self.entries = entries


def mean_pool(feature_set: FeatureSet) -> FeatureSet:
    """Collapse each item's frames to their component-wise arithmetic mean.

    Frames are summed in file order with float64 accumulation, divided once,
    and rounded back to float32, so the result is bit-deterministic for a
    given file.  Already-pooled sets pass through unchanged; the result
    always has ``pooled=True``.
    """
    if feature_set.pooled:
        return feature_set
    pooled_items: dict[str, np.ndarray] = {}
    for item_id, frames in feature_set.items.items():
        acc = np.zeros(feature_set.dim, dtype=np.float64)
        for frame in frames:
            acc += frame
        pooled_items[item_id] = (acc / frames.shape[0]).astype(np.float32)
    return FeatureSet(feature_set.dim, pooled_items, pooled=True)


# ---------------------------------------------------------------------------
# feature file I/O
# ---------------------------------------------------------------------------


def infer_feature_format(path: str | Path) -> str:
    """Map a file extension to a feature format (``.cbvt`` is text, else binary)."""
    return "text" if Path(path).suffix == ".cbvt" else "binary"


def load_features(path: str | Path, format: str | None = None) -> FeatureSet:
    """Load a feature file; ``format`` is 'binary', 'text', or None to infer."""
    if format is None:
        format = infer_feature_format(path)
    if format == "binary":
        return _load_features_binary(path)
    if format == "text":
        return _load_features_text(path)
    raise ValueError(f"unknown feature format {format!r}")


def save_features(feature_set: FeatureSet, path: str | Path, format: str | None = None) -> None:
    """Write a feature file.  Serialization happens fully in memory, so no
    bytes reach disk if the set fails validation mid-way."""
    if format is None:
        format = infer_feature_format(path)
    if format == "binary":
        payload = _dump_features_binary(feature_set)
    elif format == "text":
        payload = _dump_features_text(feature_set)
    else:
        raise ValueError(f"unknown feature format {format!r}")
    Path(path).write_bytes(payload)


def _dump_features_binary(feature_set: FeatureSet) -> bytes:
    flags = 1 if feature_set.pooled else 0
    buf = bytearray(
        _HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION, flags, 0, len(feature_set.items), feature_set.dim)
    )
    for item_id, frames in feature_set.items.items():
        validate_item_id(item_id)
        id_bytes = item_id.encode("utf-8")
        buf += struct.pack("<H", len(id_bytes))
        buf += id_bytes
        buf += struct.pack("<I", frames.shape[0])
        buf += frames.astype("<f4", copy=False).tobytes()
    return bytes(buf)


def _dump_features_text(feature_set: FeatureSet) -> bytes:
    if not feature_set.items:
        raise ValueError("cannot save an empty feature set as text (dimension would be lost)")
    lines = []
    for item_id, frames in feature_set.items.items():
        validate_item_id(item_id)
        for frame_index, frame in enumerate(frames):
            values = ",".join(repr(float(v)) for v in frame)
            lines.append(f"{item_id}\t{frame_index}\t{values}\n")
    return "".join(lines).encode("utf-8")


class _Cursor:
    """Byte cursor over an in-memory buffer with positioned failures."""

    def __init__(self, data: bytes, path: str | Path):
        self.data = data
        self.path = str(path)
        self.offset = 0
        self.record = 0  # 1-based; 0 means header

    def fail(self, problem: str, offset: int | None = None):
        where = f"record {self.record}, " if self.record else "header, "
        off = self.offset if offset is None else offset
        raise FormatError(f"{self.path}: {where}byte offset {off}: {problem}")

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            self.fail(f"truncated file while reading {what}")
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def _load_features_binary(path: str | Path) -> FeatureSet:
    cur = _Cursor(Path(path).read_bytes(), path)
    magic = cur.take(4, "magic")
    if magic != FEATURE_MAGIC:
        cur.fail(f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}", offset=0)
    version = cur.take(1, "version")[0]
    if version != FORMAT_VERSION:
        cur.fail(f"unsupported version {version}", offset=4)
    flags = cur.take(1, "flags")[0]
    if flags & ~1:
        cur.fail(f"unknown flag bits 0x{flags:02x}", offset=5)
    pooled = bool(flags & 1)
    reserved = cur.take(2, "reserved bytes")
    if reserved != b"\x00\x00":
        cur.fail("reserved bytes must be zero", offset=6)
    count = cur.u32("item count")
    dim = cur.u32("dimension")
    if dim < 1:
        cur.fail("dimension must be positive", offset=12)

    items: dict[str, np.ndarray] = {}
    for i in range(count):
        cur.record = i + 1
        record_start = cur.offset
        id_len = cur.u16("id length")
        if id_len == 0:
            cur.fail("empty item id", offset=record_start)
        if id_len > MAX_ID_BYTES:
            cur.fail(f"id length {id_len} exceeds {MAX_ID_BYTES} bytes", offset=record_start)
        raw_id = cur.take(id_len, "item id")
        try:
            item_id = raw_id.decode("utf-8")
        except UnicodeDecodeError:
            cur.fail("item id is not valid UTF-8", offset=record_start + 2)
        problem = item_id_problem(item_id)
        if problem is not None:
            cur.fail(problem, offset=record_start + 2)
        if item_id in items:
            cur.fail(f"duplicate item id {item_id!r}", offset=record_start + 2)
        frame_count = cur.u32("frame count")
        if frame_count < 1:
            cur.fail("frame count must be at least 1")
        if pooled and frame_count != 1:
            cur.fail(f"frame count {frame_count} in a pooled file")
        payload_start = cur.offset
        payload = cur.take(frame_count * dim * 4, "vector payload")
        vectors = np.frombuffer(payload, dtype="<f4").reshape(frame_count, dim)
        finite = np.isfinite(vectors.ravel())
        if not finite.all():
            bad = int(np.argmin(finite))
            cur.fail("non-finite value", offset=payload_start + 4 * bad)
        items[item_id] = vectors
    cur.record = count
    if cur.offset != len(cur.data):
        cur.fail(f"{len(cur.data) - cur.offset} bytes of trailing data after last record")
    return FeatureSet(dim, items, pooled=pooled)


def _decoded_lines(path: str | Path) -> list[tuple[int, int, str]]:
    """Split a text file into (line_number, byte_offset, text) triples."""
    data = Path(path).read_bytes()
    out: list[tuple[int, int, str]] = []
    offset = 0
    for number, raw in enumerate(data.split(b"\n"), start=1):
        if offset < len(data) or raw:  # drop the phantom line after a trailing newline
            try:
                out.append((number, offset, raw.decode("utf-8")))
            except UnicodeDecodeError:
                raise FormatError(f"{path}: line {number}, byte offset {offset}: not valid UTF-8")
        offset += len(raw) + 1
    return out


def _load_features_text(path: str | Path) -> FeatureSet:
    items: dict[str, np.ndarray] = {}
    frames: dict[str, list[np.ndarray]] = {}
    finished: set[str] = set()
    current: str | None = None
    dim: int | None = None
    record = 0
    for number, offset, line in _decoded_lines(path):
        record += 1

        def fail(problem: str):
            raise FormatError(
                f"{path}: record {record} (line {number}), byte offset {offset}: {problem}"
            )

        parts = line.split("\t")
        if len(parts) != 3:
            fail(f"expected 3 tab-separated fields, got {len(parts)}")
        item_id, index_text, values_text = parts
        problem = item_id_problem(item_id)
        if problem is not None:
            fail(problem)
        try:
            frame_index = int(index_text)
        except ValueError:
            fail(f"invalid frame index {index_text!r}")
        tokens = values_text.split(",")
        try:
            values = [float(t) for t in tokens]
        except ValueError:
            fail("invalid float value")
        if dim is None:
            dim = len(tokens)
        elif len(tokens) != dim:
            fail(f"dimension mismatch at record {record}: expected {dim}, got {len(tokens)}")
        if not all(np.isfinite(values)):
            fail("non-finite value")
        if item_id != current:
            if item_id in finished:
                fail(f"duplicate item id {item_id!r}")
            if current is not None:
                finished.add(current)
            current = item_id
            frames[item_id] = []
        expected = len(frames[item_id])
        if frame_index != expected:
            fail(f"frame index {frame_index} out of order, expected {expected}")
        frames[item_id].append(np.asarray(values, dtype=np.float32))
    if dim is None:
        raise FormatError(f"{path}: empty text feature file (no dimension information)")
    for item_id, vecs in frames.items():
        items[item_id] = np.stack(vecs)
    return FeatureSet(dim, items, pooled=None)


# ---------------------------------------------------------------------------
# relevance / prediction / candidate list I/O
# ---------------------------------------------------------------------------


def _parse_ranking_lines(path: str | Path) -> dict[str, list[str]]:
    entries: dict[str, list[str]] = {}
    for number, offset, line in _decoded_lines(path):

        def fail(problem: str):
            raise FormatError(f"{path}: line {number}, byte offset {offset}: {problem}")

        if "\t" not in line:
            fail("missing tab separator")
        query, rest = line.split("\t", 1)
        problem = item_id_problem(query)
        if problem is not None:
            fail(f"query: {problem}")
        if query in entries:
            fail(f"duplicate query {query!r}")
        members = rest.split(",") if rest else []
        seen: set[str] = set()
        for member in members:
            problem = item_id_problem(member)
            if problem is not None:
                fail(f"list member: {problem}")
            if member == query:
                fail(f"self-reference in relevance list of {query!r}")
            if member in seen:
                fail(f"duplicate id {member!r} in list of {query!r}")
            seen.add(member)
        entries[query] = members
    return entries


def load_relevance(path: str | Path, candidate_ids: Sequence[str] | None = None) -> RelevanceTable:
    """Load a ``.rel``/``.pred`` file into a RelevanceTable.

    The candidate set defaults to the union of all ids appearing anywhere in
    the file, in first-appearance order; pass ``candidate_ids`` (e.g. from a
    ``.cand`` file) to override, in which case every listed id must belong
    to it.
    """
    entries = _parse_ranking_lines(path)
    if candidate_ids is None:
        union: dict[str, None] = {}
        for query, members in entries.items():
            union.setdefault(query)
            for member in members:
                union.setdefault(member)
        candidates = list(union)
    else:
        candidates = list(candidate_ids)
        pool = set(candidates)
        for query, members in entries.items():
            for member in members:
                if member not in pool:
                    raise FormatError(
                        f"{path}: id {member!r} in list of {query!r} is not in the candidate set"
                    )
    return RelevanceTable(entries, candidates)


def load_predictions(path: str | Path) -> PredictionTable:
    """Load a ``.pred`` file (same line format as ``.rel``)."""
    return PredictionTable(_parse_ranking_lines(path))


def _dump_ranking(entries: Mapping[str, Sequence[str]]) -> bytes:
    lines = []
    for query, members in entries.items():
        validate_item_id(query)
        for member in members:
            validate_item_id(member)
        lines.append(f"{query}\t{','.join(members)}\n")
    return "".join(lines).encode("utf-8")


def save_relevance(table: RelevanceTable, path: str | Path) -> None:
    Path(path).write_bytes(_dump_ranking(table.entries))


def save_predictions(table: PredictionTable, path: str | Path) -> None:
    Path(path).write_bytes(_dump_ranking(table.entries))


def load_candidates(path: str | Path) -> list[str]:
    """Load a ``.cand`` file: one id per line, order preserved."""
    ids: list[str] = []
    seen: set[str] = set()
    for number, offset, line in _decoded_lines(path):
        problem = item_id_problem(line)
        if problem is not None:
            raise FormatError(f"{path}: line {number}, byte offset {offset}: {problem}")
        if line in seen:
            raise FormatError(
                f"{path}: line {number}, byte offset {offset}: duplicate id {line!r}"
            )
        seen.add(line)
        ids.append(line)
    return ids


def save_candidates(ids: Iterable[str], path: str | Path) -> None:
    out = []
    for item_id in ids:
        validate_item_id(item_id)
        out.append(item_id + "\n")
    Path(path).write_bytes("".join(out).encode("utf-8"))
