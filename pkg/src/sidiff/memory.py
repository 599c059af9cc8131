"""Persistent experience memory: two trajectory stores plus a vector index.

Layout under the knowledge-base directory:
  trajectories.db   SQLite file holding both model-specific tables
  gen.vec, edit.vec vector sidecars (magic "SDVX", dim u32, count u64,
                    then repeated (id u64, dim x f32), all little-endian)

Vector search is exact: every query scans all stored vectors and ranks by
inner product (== cosine, vectors are unit-norm at the boundary), ties
broken by ascending id. The sidecar is rewritten atomically on each
mutation and reloaded on open; flat exact search needs no ANN structure at
these scales.
"""

from __future__ import annotations

import json
import os
import sqlite3
import struct
import threading
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path

import numpy as np

from .backends.types import EmbeddingVector
from .errors import (
    CorruptStore,
    DimensionMismatch,
    InvariantViolation,
    StorageError,
    UnknownId,
)

DB_FILENAME = "trajectories.db"
_VEC_MAGIC = b"SDVX"
_UNIT_NORM_TOL = 1e-6

DEFAULT_MAX_REGENERATIONS = 2


class StoreId(Enum):
    GEN = "gen"
    EDIT = "edit"


# Bit-exact column lists for the two stores; EDIT adds reference_image
# directly after regeneration_count.
_COMMON_HEAD = (
    ("timestamp", "TEXT NOT NULL"),
    ("image_index", "TEXT"),
    ("original_prompt", "TEXT"),
    ("refined_prompt", "TEXT"),
    ("evaluation_score", "REAL"),
    ("confidence_score", "REAL"),
    ("regeneration_count", "INTEGER"),
)
_COMMON_TAIL = (
    ("trajectory_reasoning", "TEXT"),
    ("step_scores", "TEXT"),
    ("successes", "TEXT"),
    ("pitfalls", "TEXT"),
    ("overall_rating", "REAL"),
    ("config_data", "TEXT"),
    ("process_summary", "TEXT"),
)

_COLUMNS: dict[StoreId, tuple[tuple[str, str], ...]] = {
    StoreId.GEN: _COMMON_HEAD + _COMMON_TAIL,
    StoreId.EDIT: _COMMON_HEAD + (("reference_image", "TEXT"),) + _COMMON_TAIL,
}

_TABLES = {StoreId.GEN: "trajectories_gen", StoreId.EDIT: "trajectories_edit"}

_JSON_FIELDS = ("step_scores", "successes", "pitfalls", "config_data")


@dataclass
class TrajectoryRecord:
    """One condensed workflow execution; the unit of memory."""

    timestamp: str
    image_index: str
    original_prompt: str
    refined_prompt: str
    evaluation_score: float
    confidence_score: float
    regeneration_count: int
    trajectory_reasoning: str
    step_scores: dict = field(default_factory=dict)
    successes: dict = field(default_factory=dict)
    pitfalls: dict = field(default_factory=dict)
    overall_rating: float = 5.0
    config_data: dict = field(default_factory=dict)
    process_summary: str = ""
    reference_image: str | None = None
    id: int | None = None

    def validate(self, max_regenerations: int) -> None:
        try:
            datetime.fromisoformat(self.timestamp.replace("Z", "+00:00"))
        except ValueError:
            raise InvariantViolation(f"timestamp not ISO-8601: {self.timestamp!r}")
        if self.regeneration_count < 0:
            raise InvariantViolation("regeneration_count must be >= 0")
        if self.regeneration_count > max_regenerations:
            raise InvariantViolation(
                f"regeneration_count {self.regeneration_count} exceeds the "
                f"configured maximum of {max_regenerations}"
            )
        if not 1.0 <= float(self.overall_rating) <= 10.0:
            raise InvariantViolation("overall_rating must be within [1, 10]")
        for name in ("step_scores", "successes", "pitfalls", "config_data"):
            value = getattr(self, name)
            if not isinstance(value, dict):
                raise InvariantViolation(f"{name} must decode to a map")


@dataclass(frozen=True)
class RankedHit:
    record: TrajectoryRecord
    similarity: float


class _VectorIndex:
    """Exact inner-product index persisted as a sidecar file."""

    def __init__(self, path: Path, dim: int):
        self.path = path
        self.dim = dim
        self._vectors: dict[int, np.ndarray] = {}
        if path.exists():
            self._load()

    def _load(self) -> None:
        data = self.path.read_bytes()
        if len(data) < 16 or data[:4] != _VEC_MAGIC:
            raise CorruptStore(f"{self.path} is not a vector sidecar")
        dim = struct.unpack_from("<I", data, 4)[0]
        count = struct.unpack_from("<Q", data, 8)[0]
        if dim != self.dim:
            raise DimensionMismatch(
                f"sidecar {self.path} has dim {dim}, knowledge base expects {self.dim}"
            )
        offset = 16
        entry = 8 + 4 * dim
        if len(data) != offset + entry * count:
            raise CorruptStore(f"{self.path} is truncated")
        for _ in range(count):
            rec_id = struct.unpack_from("<Q", data, offset)[0]
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset + 8)
            self._vectors[int(rec_id)] = vec.astype(np.float32)
            offset += entry

    def _flush(self) -> None:
        header = _VEC_MAGIC + struct.pack("<I", self.dim) + struct.pack("<Q", len(self._vectors))
        entries = np.zeros(
            len(self._vectors), dtype=[("id", "<u8"), ("vec", "<f4", (self.dim,))]
        )
        for i, rec_id in enumerate(sorted(self._vectors)):
            entries[i] = (rec_id, self._vectors[rec_id])
        tmp = self.path.with_suffix(".vec.tmp")
        tmp.write_bytes(header + entries.tobytes())
        os.replace(tmp, self.path)

    def put(self, rec_id: int, values: tuple[float, ...]) -> None:
        self._vectors[rec_id] = np.asarray(values, dtype=np.float32)
        self._flush()

    def search(self, query: np.ndarray, k: int) -> list[tuple[int, float]]:
        if not self._vectors:
            return []
        ids = np.array(sorted(self._vectors), dtype=np.int64)
        matrix = np.stack([self._vectors[int(i)] for i in ids]).astype(np.float64)
        sims = matrix @ query.astype(np.float64)
        # lexsort's last key dominates: descending similarity, then ascending id.
        order = np.lexsort((ids, -sims))[:k]
        return [(int(ids[i]), float(sims[i])) for i in order]

    def __contains__(self, rec_id: int) -> bool:
        return rec_id in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)


def _check_unit(v: EmbeddingVector, dim: int) -> np.ndarray:
    if v.dim != dim:
        raise DimensionMismatch(f"vector dim {v.dim} != knowledge base dim {dim}")
    arr = np.asarray(v.values, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if abs(norm - 1.0) > _UNIT_NORM_TOL:
        raise ValueError(f"vector must be unit-norm, got |v| = {norm:.8f}")
    return arr


class KnowledgeBase:
    """Single-writer, multi-reader store pair; all access is serialized."""

    def __init__(
        self,
        path: str | Path,
        dim: int,
        max_regenerations: int = DEFAULT_MAX_REGENERATIONS,
    ):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.path = Path(path)
        self.dim = dim
        self.max_regenerations = max_regenerations
        self._lock = threading.RLock()
        try:
            self.path.mkdir(parents=True, exist_ok=True)
            self._conn = sqlite3.connect(
                self.path / DB_FILENAME, check_same_thread=False
            )
        except (OSError, sqlite3.Error) as exc:
            raise StorageError(f"cannot open knowledge base at {self.path}: {exc}")
        self._conn.row_factory = sqlite3.Row
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA synchronous=NORMAL")
        self._init_tables()
        self._indexes = {
            store: _VectorIndex(self.path / f"{store.value}.vec", dim)
            for store in StoreId
        }

    def _init_tables(self) -> None:
        for store, columns in _COLUMNS.items():
            table = _TABLES[store]
            row = self._conn.execute(
                "SELECT name FROM sqlite_master WHERE type='table' AND name=?",
                (table,),
            ).fetchone()
            if row is None:
                ddl = ",\n    ".join(f"{name} {sqltype}" for name, sqltype in columns)
                self._conn.execute(
                    f"CREATE TABLE {table} (\n"
                    f"    id INTEGER PRIMARY KEY AUTOINCREMENT,\n    {ddl}\n)"
                )
                self._conn.commit()
            else:
                existing = [
                    r["name"]
                    for r in self._conn.execute(f"PRAGMA table_info({table})")
                ]
                expected = ["id"] + [name for name, _ in columns]
                if existing != expected:
                    raise CorruptStore(
                        f"table {table} has columns {existing}, expected {expected}"
                    )

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def __enter__(self) -> "KnowledgeBase":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- rows --------------------------------------------------------------

    def _record_to_row(self, store: StoreId, rec: TrajectoryRecord) -> dict:
        row = {}
        for name, _ in _COLUMNS[store]:
            value = getattr(rec, name)
            if name in _JSON_FIELDS:
                value = json.dumps(value, sort_keys=True, ensure_ascii=False)
            row[name] = value
        return row

    def _row_to_record(self, store: StoreId, row: sqlite3.Row) -> TrajectoryRecord:
        kwargs = {"id": row["id"]}
        for name, _ in _COLUMNS[store]:
            value = row[name]
            if name in _JSON_FIELDS:
                value = json.loads(value) if value else {}
            kwargs[name] = value
        return TrajectoryRecord(**kwargs)

    # -- operations ----------------------------------------------------------

    def append_trajectory(self, store: StoreId, rec: TrajectoryRecord) -> int:
        rec.validate(self.max_regenerations)
        if store is StoreId.EDIT and rec.reference_image is None:
            raise InvariantViolation("EDIT-store records require reference_image")
        if store is StoreId.GEN and rec.reference_image is not None:
            raise InvariantViolation("GEN-store records must not carry reference_image")
        row = self._record_to_row(store, rec)
        columns = ", ".join(row)
        holes = ", ".join("?" for _ in row)
        with self._lock:
            try:
                with self._conn:
                    cur = self._conn.execute(
                        f"INSERT INTO {_TABLES[store]} ({columns}) VALUES ({holes})",
                        tuple(row.values()),
                    )
            except sqlite3.Error as exc:
                raise StorageError(f"append failed: {exc}")
            return int(cur.lastrowid)

    def index_embedding(self, store: StoreId, rec_id: int, v: EmbeddingVector) -> None:
        arr = _check_unit(v, self.dim)
        with self._lock:
            row = self._conn.execute(
                f"SELECT id FROM {_TABLES[store]} WHERE id=?", (rec_id,)
            ).fetchone()
            if row is None:
                raise UnknownId(f"id {rec_id} not present in {store.value} store")
            self._indexes[store].put(rec_id, tuple(arr))

    def retrieve_similar(
        self, store: StoreId, q: EmbeddingVector, k: int
    ) -> list[RankedHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        arr = _check_unit(q, self.dim)
        with self._lock:
            ranked = self._indexes[store].search(arr, k)
            hits = []
            for rec_id, sim in ranked:
                row = self._conn.execute(
                    f"SELECT * FROM {_TABLES[store]} WHERE id=?", (rec_id,)
                ).fetchone()
                if row is None:
                    raise CorruptStore(
                        f"indexed id {rec_id} missing from {store.value} store"
                    )
                hits.append(
                    RankedHit(
                        record=self._row_to_record(store, row),
                        similarity=max(-1.0, min(1.0, sim)),
                    )
                )
            return hits

    def trajectory_count(self, store: StoreId) -> int:
        with self._lock:
            try:
                row = self._conn.execute(
                    f"SELECT COUNT(*) AS n FROM {_TABLES[store]}"
                ).fetchone()
            except sqlite3.Error as exc:
                raise StorageError(f"count failed: {exc}")
            return int(row["n"])

    def export_trajectories(self, store: StoreId, out: str | Path) -> int:
        """Write one JSON object per line ordered by id; returns line count."""
        out = Path(out)
        with self._lock:
            rows = self._conn.execute(
                f"SELECT * FROM {_TABLES[store]} ORDER BY id"
            ).fetchall()
            try:
                with out.open("w", encoding="utf-8") as fh:
                    for row in rows:
                        rec = self._row_to_record(store, row)
                        obj = {"id": rec.id}
                        for name, _ in _COLUMNS[store]:
                            obj[name] = getattr(rec, name)
                        fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
            except OSError as exc:
                raise StorageError(f"export to {out} failed: {exc}")
        return len(rows)

    def get_record(self, store: StoreId, rec_id: int) -> TrajectoryRecord:
        with self._lock:
            row = self._conn.execute(
                f"SELECT * FROM {_TABLES[store]} WHERE id=?", (rec_id,)
            ).fetchone()
        if row is None:
            raise UnknownId(f"id {rec_id} not present in {store.value} store")
        return self._row_to_record(store, row)


def open_kb(
    path: str | Path, dim: int, max_regenerations: int = DEFAULT_MAX_REGENERATIONS
) -> KnowledgeBase:
    """Open (creating if absent) the knowledge base rooted at `path`."""
    return KnowledgeBase(path, dim, max_regenerations)


def import_trajectories(
    kb: KnowledgeBase, store: StoreId, source: str | Path
) -> list[int]:
    """Inverse of export_trajectories; returns the newly assigned ids."""
    ids = []
    with Path(source).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            obj.pop("id", None)
            ids.append(kb.append_trajectory(store, TrajectoryRecord(**obj)))
    return ids


__all__ = [
    "DEFAULT_MAX_REGENERATIONS",
    "KnowledgeBase",
    "RankedHit",
    "StoreId",
    "TrajectoryRecord",
    "import_trajectories",
    "open_kb",
]
