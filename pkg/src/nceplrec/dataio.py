"""Ratings ingestion, index maps, model files and JSON reports."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import warnings
import logging
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .eval import EvalSplit, Interactions, binarize
from .models import Hyperparameters, Kind, TrainedModel
from .numkit import from_triples

log = logging.getLogger(__name__)

FIELDS = ("user", "item", "rating", "timestamp")


class FormatError(ValueError):
    """A ratings file line does not match its format descriptor."""


class ModelFileError(ValueError):
    """Model file is truncated or written by an incompatible version."""


@dataclass(frozen=True)
class RatingsFormat:
    """How to read a delimited ratings file.

    ``columns`` names each field in file order; use ``"-"`` for columns to
    ignore. ``timestamp`` may be omitted.
    """

    delimiter: str = ","
    columns: tuple[str, ...] = FIELDS
    header: bool = False

    @classmethod
    def parse(cls, spec: str) -> RatingsFormat:
        """Parse ``"name"`` presets or ``"delim=tab,columns=user:item:rating,header"``."""
        if spec in PRESETS:
            return PRESETS[spec]
        kwargs = {}
        for part in spec.split(","):
            key, _, value = part.partition("=")
            if key == "delim":
                kwargs["delimiter"] = {"tab": "\t", "comma": ",", "space": " ", "pipe": "|"}.get(value, value)
            elif key == "columns":
                kwargs["columns"] = tuple(value.split(":"))
            elif key == "header":
                kwargs["header"] = value.lower() not in ("0", "false", "no")
            else:
                raise ValueError(f"unknown format key {key!r}")
        return cls(**kwargs)


PRESETS = {
    "csv": RatingsFormat(",", FIELDS, header=False),
    "movielens-csv": RatingsFormat(",", FIELDS, header=True),
    "ml100k": RatingsFormat("\t", FIELDS, header=False),
    "recbole": RatingsFormat("\t", FIELDS, header=True),
}


@dataclass
class RatingsTable:
    users: list[str]
    items: list[str]
    ratings: np.ndarray
    timestamps: np.ndarray | None = None

    def __len__(self):
        return len(self.users)


@dataclass
class IndexMaps:
    user_ids: list[str]
    item_ids: list[str]

    def __post_init__(self):
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.item_index = {u: i for i, u in enumerate(self.item_ids)}
        if len(self.user_index) != len(self.user_ids) or len(self.item_index) != len(self.item_ids):
            raise ValueError("index maps must be bijective")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.user_ids), len(self.item_ids)


def load_ratings(path, fmt: RatingsFormat = RatingsFormat(), require_timestamps: bool = False) -> RatingsTable:
    cols = {name: pos for pos, name in enumerate(fmt.columns) if name != "-"}
    missing = {"user", "item", "rating"} - set(cols)
    if missing:
        raise ValueError(f"format lacks columns {sorted(missing)}")
    has_ts = "timestamp" in cols
    if require_timestamps and not has_ts:
        raise FormatError("chronological split requested but the format has no timestamp column")
    users, items, ratings, stamps = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=fmt.delimiter, skipinitialspace=fmt.delimiter == " ")
        for lineno, row in enumerate(reader, start=1):
            if fmt.header and lineno == 1:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(fmt.columns):
                raise FormatError(f"{path}:{lineno}: expected {len(fmt.columns)} fields, got {len(row)}")
            try:
                rating = float(row[cols["rating"]])
                stamp = int(float(row[cols["timestamp"]])) if has_ts else None
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if math.isnan(rating):
                raise FormatError(f"{path}:{lineno}: rating is NaN")
            users.append(row[cols["user"]].strip())
            items.append(row[cols["item"]].strip())
            ratings.append(rating)
            stamps.append(stamp)
    return RatingsTable(
        users, items, np.asarray(ratings, dtype=np.float64),
        np.asarray(stamps, dtype=np.int64) if has_ts else None,
    )


def build_matrix(table: RatingsTable, threshold: float, maps: IndexMaps | None = None) -> tuple[Interactions, IndexMaps]:
    """Binarize ``table`` and index it.

    New maps are built in first-appearance order over the surviving rows.
    With existing ``maps``, rows with unknown ids are dropped and counted.
    Repeated (user, item) pairs keep their earliest timestamp.
    """
    keep = np.flatnonzero(binarize(table.ratings, threshold))
    if maps is None:
        maps = IndexMaps(
            list(dict.fromkeys(table.users[i] for i in keep)),
            list(dict.fromkeys(table.items[i] for i in keep)),
        )
    u_idx, i_idx, rows = [], [], []
    dropped = 0
    for i in keep:
        u = maps.user_index.get(table.users[i])
        it = maps.item_index.get(table.items[i])
        if u is None or it is None:
            dropped += 1
            continue
        u_idx.append(u)
        i_idx.append(it)
        rows.append(i)
    if dropped:
        log.warning("dropped %d interactions with ids unknown to the index maps", dropped)
    if not rows:
        raise ValueError("no interactions survive binarization")
    users = np.asarray(u_idx, dtype=np.int64)
    items = np.asarray(i_idx, dtype=np.int64)
    stamps = None if table.timestamps is None else table.timestamps[np.asarray(rows)]
    # dedupe (user, item), keeping the earliest timestamp
    order = np.lexsort((stamps if stamps is not None else np.zeros_like(users), items, users))
    users, items = users[order], items[order]
    first = np.ones(users.shape[0], dtype=bool)
    first[1:] = (users[1:] != users[:-1]) | (items[1:] != items[:-1])
    stamps = None if stamps is None else stamps[order][first]
    return Interactions(users[first], items[first], maps.shape, stamps, dropped), maps


# -- model files -------------------------------------------------------------

MAGIC = b"NCEPLRM\0"
VERSION = 1
KIND_CODES = {kind: code for code, kind in enumerate(Kind, start=1)}
_HEADER = struct.Struct("<8sIIQQQ")
_HYPER = struct.Struct("<qdddqq")
_FLAGS = struct.Struct("<I")
_LEN = struct.Struct("<Q")


def save_model(model: TrainedModel, path) -> None:
    """Write ``model`` as a little-endian binary file.

    Layout: magic (8 bytes), version u32, kind u32, users/items/k u64,
    hyperparameters (k i64, beta/alpha/lambda f64, power iterations i64,
    seed i64), presence flags u32, then float64 arrays (popularity n,
    item embedding n*k, weights n*k, user factor m*k) for the flags set,
    then a u64-length-prefixed UTF-8 JSON block with external ids.
    """
    n = model.n_items
    m = model.n_users or 0
    k = 0 if model.item_embedding is None else model.item_embedding.shape[1]
    h = model.hyper
    arrays = [
        np.asarray(model.pop_counts, dtype="<f8"),
        model.item_embedding,
        model.weights,
        model.user_factor,
    ]
    flags = sum(1 << bit for bit, a in enumerate(arrays) if a is not None)
    meta = json.dumps(
        {"user_ids": model.user_ids, "item_ids": model.item_ids, "extra": model.extra},
        sort_keys=True,
    ).encode()
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, KIND_CODES[model.kind], m, n, k))
    buf.write(_HYPER.pack(h.k, h.beta, h.alpha, h.lam, h.power_iterations, h.seed))
    buf.write(_FLAGS.pack(flags))
    for a in arrays:
        if a is not None:
            buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    buf.write(_LEN.pack(len(meta)))
    buf.write(meta)
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise ModelFileError("model file is truncated")
        out = self.data[self.pos:self.pos + size]
        self.pos += size
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def array(self, *shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def load_model(path) -> TrainedModel:
    r = _Reader(Path(path).read_bytes())
    magic, version, code, m, n, k = r.unpack(_HEADER)
    if magic != MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    if version != VERSION:
        raise ModelFileError(f"{path}: format version {version} unsupported (expected {VERSION})")
    kinds = {c: kind for kind, c in KIND_CODES.items()}
    if code not in kinds:
        raise ModelFileError(f"{path}: unknown model kind {code}")
    hk, beta, alpha, lam, power, seed = r.unpack(_HYPER)
    (flags,) = r.unpack(_FLAGS)
    shapes = [(n,), (n, k), (n, k), (m, k)]
    arrays = [r.array(*s) if flags & (1 << bit) else None for bit, s in enumerate(shapes)]
    (meta_len,) = r.unpack(_LEN)
    meta = json.loads(r.take(meta_len).decode())
    if r.pos != len(r.data):
        raise ModelFileError(f"{path}: trailing bytes after model payload")
    return TrainedModel(
        kind=kinds[code],
        hyper=Hyperparameters(hk, beta, alpha, lam, power, seed),
        pop_counts=arrays[0].astype(np.int64),
        item_embedding=arrays[1],
        weights=arrays[2],
        user_factor=arrays[3],
        user_ids=meta.get("user_ids"),
        item_ids=meta.get("item_ids"),
        extra=meta.get("extra") or {},
    )


# -- splits --------------------------------------------------------------------

def _write_pairs(matrix: sp.csr_matrix, path: Path) -> None:
    rows, cols = matrix.nonzero()
    with open(path, "w") as fh:
        fh.write("user\titem\n")
        for u, i in zip(rows.tolist(), cols.tolist()):
            fh.write(f"{u}\t{i}\n")


def _read_pairs(path: Path, shape) -> sp.csr_matrix:
    with warnings.catch_warnings():
        # a split part may legitimately hold no pairs
        warnings.simplefilter("ignore", UserWarning)
        data = np.loadtxt(path, dtype=np.int64, delimiter="\t", skiprows=1, ndmin=2).reshape(-1, 2)
    return from_triples(data[:, 0], data[:, 1], np.ones(data.shape[0]), shape)


def save_split(split: EvalSplit, maps: IndexMaps, directory) -> None:
    """Write ``train.tsv``, ``valid.tsv``, ``test.tsv`` (index pairs) and ``maps.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        _write_pairs(getattr(split, name), directory / f"{name}.tsv")
    doc = {
        "mode": split.mode,
        "ratios": list(split.ratios),
        "shape": list(maps.shape),
        "user_ids": maps.user_ids,
        "item_ids": maps.item_ids,
    }
    (directory / "maps.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_split(directory) -> tuple[EvalSplit, IndexMaps]:
    directory = Path(directory)
    doc = json.loads((directory / "maps.json").read_text())
    shape = tuple(doc["shape"])
    mats = {name: _read_pairs(directory / f"{name}.tsv", shape) for name in ("train", "valid", "test")}
    split = EvalSplit(mats["train"], mats["valid"], mats["test"], doc["mode"], tuple(doc["ratios"]))
    return split, IndexMaps(doc["user_ids"], doc["item_ids"])


# -- reports ---------------------------------------------------------------------

def to_document(obj):
    """Convert report objects to plain JSON-compatible values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_document(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_document(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_document(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_document(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    if isinstance(obj, Kind):
        return obj.value
    return obj


def dumps_report(report) -> str:
    return json.dumps(to_document(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(report, path=None) -> str:
    """Serialize ``report`` as sorted-key JSON to ``path`` (stdout when ``None`` or ``-``)."""
    text = dumps_report(report)
    if path is None or str(path) == "-":
        print(text, end="")
    else:
        path = Path(path)
        if path.parent and not path.parent.exists():
            os.makedirs(path.parent, exist_ok=True)
        path.write_text(text)
    return text
