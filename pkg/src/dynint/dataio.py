"""Tabular ingestion: schemas, vocabularies, equal-frequency bins, splits, caches.

Raw CSV columns are turned into one integer index per field.  Categorical
tokens go through a frequency-thresholded :class:`Vocabulary`; continuous
values are either bucketized with :func:`fit_bins` or, when the field sets
``log_square_transform``, discretized with :func:`log_square` and then
treated as categorical tokens.  Every field reserves its last index for
out-of-vocabulary / missing values so that encoding is total.
"""

import csv
import io
import json
import math
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .ndcore import ConfigurationError

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
LOG_EPS = 1e-12

CACHE_MAGIC = b"DYNI"
CACHE_VERSION = 1
SPLIT_NAMES = ("train", "valid", "test")
_BLOCK_ROWS = 65536


class DataError(ValueError):
    """Malformed input data (bad CSV row, bad label, corrupt cache)."""


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str = CATEGORICAL
    min_count: int = 20
    num_bins: int = 10
    log_square_transform: bool = False

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, CONTINUOUS):
            raise ConfigurationError(f"field {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CONTINUOUS and self.num_bins < 1:
            raise ConfigurationError(f"field {self.name!r}: num_bins must be >= 1")
        if self.min_count < 1:
            raise ConfigurationError(f"field {self.name!r}: min_count must be >= 1")

    @property
    def uses_bins(self):
        return self.kind == CONTINUOUS and not self.log_square_transform


@dataclass
class Vocabulary:
    """Token to index map; index ``oov_index == cardinality - 1`` absorbs the rest."""

    tokens: list

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.tokens)}

    @property
    def oov_index(self):
        return len(self.tokens)

    @property
    def cardinality(self):
        return len(self.tokens) + 1

    def encode(self, token):
        return self._index.get(token, self.oov_index)

    def __contains__(self, token):
        return token in self._index


@dataclass
class BinEdges:
    """Sorted cut points; bucket ``b`` holds values in ``[edges[b-1], edges[b])``."""

    edges: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def num_buckets(self):
        return len(self.edges) + 1

    def bucketize(self, values):
        # values outside the fitted range clamp into the first/last bucket
        return np.searchsorted(self.edges, np.asarray(values, dtype=np.float64), side="right")


def fit_bins(values, num_bins):
    """Equal-frequency cut points at the ``k/num_bins`` empirical quantiles.

    Each edge is the midpoint between the two order statistics that straddle
    the quantile position.  Positions that fall inside a run of tied values
    cannot separate anything and are dropped, so constant input yields a
    single bucket.
    """
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = v.size
    if n == 0:
        raise ConfigurationError("fit_bins: empty input")
    if not np.all(np.isfinite(v)):
        raise ConfigurationError("fit_bins: non-finite values")
    if num_bins < 1:
        raise ConfigurationError("fit_bins: num_bins must be >= 1")
    edges = []
    for k in range(1, num_bins):
        m = (k * n) // num_bins
        if 0 < m < n and v[m - 1] < v[m]:
            edges.append(0.5 * (v[m - 1] + v[m]))
    return BinEdges(np.unique(np.asarray(edges, dtype=np.float64)))


def log_square(v):
    """``floor(ln(v**2 + 1e-12))``; the epsilon keeps ``v == 0`` finite."""
    return math.floor(math.log(float(v) ** 2 + LOG_EPS))


def build_vocab(tokens, min_count):
    """Keep tokens seen at least ``min_count`` times, in first-seen order."""
    counts = Counter()
    order = []
    for t in tokens:
        if t not in counts:
            order.append(t)
        counts[t] += 1
    return Vocabulary([t for t in order if counts[t] >= min_count])


def split_sizes(n, fractions):
    """Largest-remainder apportionment of ``n`` rows over ``fractions``."""
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must be >= 0 and sum to 1, got {fractions}")
    raw = [f * n for f in fractions]
    sizes = [math.floor(r) for r in raw]
    rest = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return sizes


def split_indices(n, fractions, rng):
    """Random disjoint partition of ``range(n)``; deterministic given ``rng`` state."""
    sizes = split_sizes(n, fractions)
    perm = rng.permutation(n)
    out, start = [], 0
    for s in sizes:
        out.append(np.sort(perm[start:start + s]))
        start += s
    return tuple(out)


@dataclass
class Dataset:
    """Encoded rows: ``X[i, f]`` is the index of field ``f``; ``y`` in {0, 1}."""

    X: np.ndarray
    y: np.ndarray
    cardinalities: tuple

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.int64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int8)
        self.cardinalities = tuple(int(c) for c in self.cardinalities)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"inconsistent dataset shapes {self.X.shape} / {self.y.shape}")
        if self.X.shape[1] != len(self.cardinalities):
            raise DataError("one cardinality per field required")
        if self.X.size and (self.X.min() < 0 or np.any(self.X.max(axis=0) >= self.cardinalities)):
            raise DataError("index out of range for its field cardinality")

    @property
    def n_fields(self):
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx], self.cardinalities)


def split(dataset, fractions=(0.7, 0.1, 0.2), rng=None):
    """Split a :class:`Dataset` into train/valid/test parts."""
    if rng is None:
        raise ConfigurationError("split requires an explicit rng")
    return tuple(dataset.subset(i) for i in split_indices(len(dataset), fractions, rng))


# -- schema and CSV -----------------------------------------------------------

@dataclass
class Schema:
    label: str
    fields: list

    @property
    def names(self):
        return [f.name for f in self.fields]


_FIELD_OPTS = {"min_count": int, "num_bins": int, "log_square": bool}


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


def parse_schema(text):
    """Parse a schema file.

    One declaration per line, ``#`` starts a comment::

        label = clicked
        I1 = continuous num_bins=16
        I2 = continuous log_square=true min_count=20
        C1 = categorical min_count=20
    """
    label = None
    fields = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"schema line {lineno}: expected 'name = kind ...'")
        name, rhs = (s.strip() for s in line.split("=", 1))
        if name == "label":
            label = rhs
            continue
        if name in seen:
            raise ConfigurationError(f"schema line {lineno}: duplicate field {name!r}")
        seen.add(name)
        parts = rhs.split()
        if not parts:
            raise ConfigurationError(f"schema line {lineno}: missing kind for {name!r}")
        kwargs = {}
        for opt in parts[1:]:
            key, _, val = opt.partition("=")
            if key not in _FIELD_OPTS or not val:
                raise ConfigurationError(f"schema line {lineno}: unknown option {opt!r}")
            if _FIELD_OPTS[key] is bool:
                kwargs["log_square_transform"] = _parse_bool(val)
            else:
                kwargs[key] = int(val)
        fields.append(FieldSpec(name, parts[0], **kwargs))
    if label is None:
        raise ConfigurationError("schema declares no label column")
    if not fields:
        raise ConfigurationError("schema declares no fields")
    return Schema(label, fields)


def load_schema(path):
    return parse_schema(Path(path).read_text(encoding="utf-8"))


def read_csv(path_or_buffer, schema):
    """Read a headed CSV into ``(raw, y)``; ``raw`` is an object array ``(n, F)``."""
    if isinstance(path_or_buffer, (str, Path)):
        with open(path_or_buffer, newline="", encoding="utf-8") as fh:
            return read_csv(fh, schema)
    reader = csv.reader(path_or_buffer)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty CSV: header row required") from None
    header = [h.strip() for h in header]
    col = {h: i for i, h in enumerate(header)}
    missing = [n for n in [schema.label] + schema.names if n not in col]
    if missing:
        raise ConfigurationError(f"schema names not in CSV header: {missing}")
    take = [col[n] for n in schema.names]
    lab = col[schema.label]
    rows, labels = [], []
    for row in reader:
        lineno = reader.line_num
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} columns, got {len(row)}")
        y = row[lab].strip()
        if y not in ("0", "1"):
            raise DataError(f"line {lineno}: label must be 0 or 1, got {y!r}")
        labels.append(int(y))
        rows.append([row[i] for i in take])
    raw = np.empty((len(rows), len(take)), dtype=object)
    for i, r in enumerate(rows):
        raw[i, :] = r
    return raw, np.asarray(labels, dtype=np.int8)


def _to_float(token):
    try:
        v = float(token)
    except (TypeError, ValueError):
        return math.nan
    return v if math.isfinite(v) else math.nan


class CTREncoder(TransformerMixin, BaseEstimator):
    """Fit per-field vocabularies/bins on raw columns, transform to index matrix.

    Parameters
    ----------
    fields : list of FieldSpec
        One spec per input column, in column order.
    """

    def __init__(self, fields=None):
        self.fields = fields

    def _field_tokens(self, spec, column):
        if spec.kind == CATEGORICAL:
            return [str(t).strip() for t in column]
        out = []
        for t in column:
            v = _to_float(t)
            out.append(None if math.isnan(v) else str(log_square(v)))
        return out

    def fit(self, X, y=None):
        X = self._check_raw(X)
        self.vocabs_ = []
        self.bins_ = []
        for f, spec in enumerate(self.fields):
            if spec.uses_bins:
                vals = np.array([_to_float(t) for t in X[:, f]])
                vals = vals[np.isfinite(vals)]
                edges = fit_bins(vals, spec.num_bins) if vals.size else BinEdges()
                self.bins_.append(edges)
                self.vocabs_.append(None)
            else:
                toks = [t for t in self._field_tokens(spec, X[:, f]) if t is not None]
                self.vocabs_.append(build_vocab(toks, spec.min_count))
                self.bins_.append(None)
        self.cardinalities_ = tuple(self._cardinality(f) for f in range(len(self.fields)))
        self.n_features_in_ = len(self.fields)
        return self

    def _cardinality(self, f):
        if self.bins_[f] is not None:
            return self.bins_[f].num_buckets + 1  # +1 for missing values
        return self.vocabs_[f].cardinality

    def transform(self, X):
        check_is_fitted(self, "cardinalities_")
        X = self._check_raw(X)
        out = np.empty(X.shape, dtype=np.int64)
        for f, spec in enumerate(self.fields):
            if self.bins_[f] is not None:
                vals = np.array([_to_float(t) for t in X[:, f]], dtype=np.float64)
                idx = self.bins_[f].bucketize(np.nan_to_num(vals))
                idx[np.isnan(vals)] = self.cardinalities_[f] - 1
                out[:, f] = idx
            else:
                vocab = self.vocabs_[f]
                out[:, f] = [vocab.oov_index if t is None else vocab.encode(t)
                             for t in self._field_tokens(spec, X[:, f])]
        return out

    def _check_raw(self, X):
        if self.fields is None:
            raise ConfigurationError("CTREncoder needs field specs")
        X = np.asarray(X, dtype=object)
        if X.ndim != 2 or X.shape[1] != len(self.fields):
            raise DataError(f"expected raw array with {len(self.fields)} columns, got {X.shape}")
        return X

    def to_state(self):
        """JSON-serializable description of the fitted encoder."""
        check_is_fitted(self, "cardinalities_")
        return {
            "fields": [asdict(s) for s in self.fields],
            "vocabs": [None if v is None else list(v.tokens) for v in self.vocabs_],
            "bins": [None if b is None else [float(e) for e in b.edges] for b in self.bins_],
            "cardinalities": list(self.cardinalities_),
        }

    @classmethod
    def from_state(cls, state):
        enc = cls([FieldSpec(**s) for s in state["fields"]])
        enc.vocabs_ = [None if v is None else Vocabulary(list(v)) for v in state["vocabs"]]
        enc.bins_ = [None if b is None else BinEdges(np.asarray(b, dtype=np.float64))
                     for b in state["bins"]]
        enc.cardinalities_ = tuple(state["cardinalities"])
        enc.n_features_in_ = len(enc.fields)
        return enc


# -- encoded dataset cache ------------------------------------------------------
#
# Layout (all integers little-endian):
#   magic    4 bytes  b"DYNI"
#   version  u16
#   meta_len u32, then meta_len bytes of UTF-8 JSON (sorted keys)
#   for each split in (train, valid, test):
#     n_blocks u32
#     per block: n_rows u32, n_fields u32,
#                n_rows*n_fields int32 indices (row-major), n_rows u8 labels

def write_cache(path, datasets, meta=None):
    """Write ``{"train": Dataset, "valid": ..., "test": ...}`` to a cache file."""
    meta = dict(meta or {})
    cards = datasets["train"].cardinalities
    meta["cardinalities"] = list(cards)
    meta["sizes"] = {k: len(datasets[k]) for k in SPLIT_NAMES}
    buf = io.BytesIO()
    payload = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(CACHE_MAGIC)
    buf.write(struct.pack("<HI", CACHE_VERSION, len(payload)))
    buf.write(payload)
    for name in SPLIT_NAMES:
        ds = datasets[name]
        n = len(ds)
        starts = range(0, n, _BLOCK_ROWS)
        buf.write(struct.pack("<I", len(starts)))
        for s in starts:
            xb = ds.X[s:s + _BLOCK_ROWS]
            buf.write(struct.pack("<II", xb.shape[0], xb.shape[1]))
            buf.write(xb.astype("<i4").tobytes())
            buf.write(ds.y[s:s + _BLOCK_ROWS].astype("u1").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_cache(path):
    """Inverse of :func:`write_cache`; returns ``(datasets, meta)``."""
    data = Path(path).read_bytes()
    if data[:4] != CACHE_MAGIC:
        raise DataError(f"{path}: not a DYNI cache (bad magic)")
    version, meta_len = struct.unpack_from("<HI", data, 4)
    if version != CACHE_VERSION:
        raise DataError(f"{path}: unsupported cache version {version}")
    off = 10
    meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    off += meta_len
    cards = tuple(meta["cardinalities"])
    out = {}
    for name in SPLIT_NAMES:
        (n_blocks,) = struct.unpack_from("<I", data, off)
        off += 4
        xs, ys = [], []
        for _ in range(n_blocks):
            n, F = struct.unpack_from("<II", data, off)
            off += 8
            xs.append(np.frombuffer(data, "<i4", n * F, off).reshape(n, F))
            off += 4 * n * F
            ys.append(np.frombuffer(data, "u1", n, off))
            off += n
        X = np.concatenate(xs) if xs else np.empty((0, len(cards)), dtype=np.int64)
        y = np.concatenate(ys) if ys else np.empty(0, dtype=np.int8)
        out[name] = Dataset(X, y, cards)
    return out, meta
