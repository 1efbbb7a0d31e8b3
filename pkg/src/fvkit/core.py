"""Numerical containers and on-disk formats.

Features are stored as little-endian float32 and promoted to float64 for
computation. Models are stored as float64 so that they round-trip bit-exactly.

Feature file layout::

    bytes 0-3   magic b"FVK1"
    u32         format version
    u64         T (number of features)
    u64         d (feature dimension)
    T*d f32     row-major payload

Model file layout::

    bytes 0-3   magic b"FVKM"
    u32         format version
    u32         type tag (see ``MODEL_TAGS``)
    u32         number of arrays
    per array:  u8 dtype code ('d' float64, 'q' int64), u8 ndim, ndim * u64 shape, payload
    u32         CRC-32 of everything after the 16 byte header
"""
from __future__ import annotations

import io
import math
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptPayloadError, DataError, DimensionError, FormatError, TruncatedFileError

FEATURE_MAGIC = b"FVK1"
MODEL_MAGIC = b"FVKM"
FORMAT_VERSION = 1
FEATURE_HEADER = struct.Struct("<4sIQQ")
MODEL_HEADER = struct.Struct("<4sIII")

COLUMN_NORM_SLACK = 1e-9


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _require_finite(name, a):
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite values")


def _bits_equal(a, b):
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """T local features of dimension d, one per row, stored as float32."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2:
            raise DimensionError(f"feature data must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise DataError("empty feature set")
        data = data.astype("<f4", copy=False)
        _require_finite("feature data", data)
        object.__setattr__(self, "data", _frozen(data))

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def as_float64(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return _bits_equal(self.data, other.data)

    def __len__(self):
        return self.T


def as_matrix(X) -> np.ndarray:
    """Return a float64 (T, d) view of a FeatureSet or array-like."""
    if isinstance(X, FeatureSet):
        return X.as_float64()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D feature matrix, got shape {X.shape}")
    return X


@dataclass(frozen=True, eq=False)
class Dictionary:
    """d x K basis matrix whose columns span the subspace of Gaussian means.

    ``lam`` and ``sigma2`` optionally record the coding parameters the basis
    was trained with, so that encoders can reuse them.
    """

    B: np.ndarray
    lam: float | None = None
    sigma2: float = 1.0

    def __post_init__(self):
        if self.lam is not None and not (math.isfinite(self.lam) and self.lam >= 0):
            raise DataError(f"recorded lambda must be finite and >= 0, got {self.lam}")
        if not (math.isfinite(self.sigma2) and self.sigma2 > 0):
            raise DataError(f"recorded sigma2 must be finite and > 0, got {self.sigma2}")
        B = np.asarray(self.B, dtype=np.float64)
        if B.ndim != 2 or B.shape[0] < 1 or B.shape[1] < 1:
            raise DimensionError(f"dictionary must be a non-empty 2-D matrix, got shape {B.shape}")
        _require_finite("dictionary", B)
        norms = np.linalg.norm(B, axis=0)
        if np.any(norms > 1.0 + COLUMN_NORM_SLACK):
            k = int(np.argmax(norms))
            raise DataError(f"dictionary column {k} has norm {norms[k]:.12g} > 1")
        object.__setattr__(self, "B", _frozen(B))

    @property
    def d(self) -> int:
        return self.B.shape[0]

    @property
    def K(self) -> int:
        return self.B.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Dictionary):
            return NotImplemented
        return _bits_equal(self.B, other.B) and _bits_equal(self._params(), other._params())

    def _params(self) -> np.ndarray:
        if self.lam is None:
            return np.zeros(0)
        return np.array([self.lam, self.sigma2], dtype=np.float64)


def as_basis(B) -> np.ndarray:
    if isinstance(B, Dictionary):
        return B.B
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2:
        raise DimensionError(f"expected a 2-D basis matrix, got shape {B.shape}")
    return B


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Diagonal-covariance Gaussian mixture with m components in d dimensions."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        mu = np.asarray(self.means, dtype=np.float64)
        var = np.asarray(self.variances, dtype=np.float64)
        if mu.ndim != 2 or var.shape != mu.shape or w.shape != (mu.shape[0],):
            raise DimensionError(
                f"inconsistent GMM shapes: weights {w.shape}, means {mu.shape}, variances {var.shape}"
            )
        for name, a in (("weights", w), ("means", mu), ("variances", var)):
            _require_finite(f"GMM {name}", a)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DataError(f"GMM weights must be positive and sum to 1 (sum={w.sum():.15g})")
        if np.any(var <= 0):
            raise DataError("GMM variances must be positive")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "means", _frozen(mu))
        object.__setattr__(self, "variances", _frozen(var))

    @property
    def m(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GmmModel):
            return NotImplemented
        return (
            _bits_equal(self.weights, other.weights)
            and _bits_equal(self.means, other.means)
            and _bits_equal(self.variances, other.variances)
        )


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Mean vector plus a d x out_dim projection onto the leading eigenvectors."""

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    whiten: bool = False
    effective_rank: int = -1

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        comps = np.asarray(self.components, dtype=np.float64)
        ev = np.asarray(self.eigenvalues, dtype=np.float64).ravel()
        if comps.ndim != 2 or comps.shape[0] != mean.shape[0] or ev.shape != (comps.shape[1],):
            raise DimensionError(
                f"inconsistent PCA shapes: mean {mean.shape}, components {comps.shape}, eigenvalues {ev.shape}"
            )
        for name, a in (("mean", mean), ("components", comps), ("eigenvalues", ev)):
            _require_finite(f"PCA {name}", a)
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "components", _frozen(comps))
        object.__setattr__(self, "eigenvalues", _frozen(ev))
        object.__setattr__(self, "whiten", bool(self.whiten))
        rank = int(self.effective_rank)
        object.__setattr__(self, "effective_rank", comps.shape[1] if rank < 0 else rank)

    @property
    def d(self) -> int:
        return self.components.shape[0]

    @property
    def out_dim(self) -> int:
        return self.components.shape[1]

    def __eq__(self, other):
        if not isinstance(other, PcaModel):
            return NotImplemented
        return (
            _bits_equal(self.mean, other.mean)
            and _bits_equal(self.components, other.components)
            and _bits_equal(self.eigenvalues, other.eigenvalues)
            and self.whiten == other.whiten
            and self.effective_rank == other.effective_rank
        )


@dataclass(frozen=True, eq=False)
class SvmModel:
    """One-vs-rest linear SVMs. Row c of ``weights`` is ``[w_c, bias_c]``."""

    weights: np.ndarray
    classes: np.ndarray
    duality_gaps: np.ndarray = field(default=None)

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=np.float64)
        classes = np.asarray(self.classes, dtype=np.int64).ravel()
        if W.ndim != 2 or W.shape[0] != classes.shape[0] or W.shape[1] < 2:
            raise DimensionError(f"inconsistent SVM shapes: weights {W.shape}, classes {classes.shape}")
        _require_finite("SVM weights", W)
        gaps = np.zeros(W.shape[0]) if self.duality_gaps is None else np.asarray(self.duality_gaps, dtype=np.float64)
        object.__setattr__(self, "weights", _frozen(W))
        object.__setattr__(self, "classes", _frozen(classes))
        object.__setattr__(self, "duality_gaps", _frozen(gaps.ravel()))

    @property
    def n_features(self) -> int:
        return self.weights.shape[1] - 1

    def __eq__(self, other):
        if not isinstance(other, SvmModel):
            return NotImplemented
        return (
            _bits_equal(self.weights, other.weights)
            and _bits_equal(self.classes, other.classes)
            and _bits_equal(self.duality_gaps, other.duality_gaps)
        )


@dataclass(frozen=True, eq=False)
class FisherVector:
    """Flat encoded image representation.

    ``layout`` is ``"scfvc"`` (length d*K, K contiguous sub-vectors of length d)
    or ``"gmmfvc"`` (length 2*d*m, mean block then variance block, each grouped
    per component). ``n_sub`` is K or m. A mean-only GMM vector has length d*m
    and ``layout == "gmmfvc-mean"``.
    """

    values: np.ndarray
    layout: str
    d: int
    n_sub: int
    n_nonconverged: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        expected = {"scfvc": 1, "gmmfvc": 2, "gmmfvc-mean": 1}.get(self.layout)
        if expected is None:
            raise FormatError(f"unknown Fisher vector layout {self.layout!r}")
        if v.size != expected * self.d * self.n_sub:
            raise DimensionError(
                f"{self.layout} vector with d={self.d}, n_sub={self.n_sub} must have length "
                f"{expected * self.d * self.n_sub}, got {v.size}"
            )
        object.__setattr__(self, "values", _frozen(v))

    def subvectors(self) -> np.ndarray:
        """View as (number of sub-vectors, d)."""
        return self.values.reshape(-1, self.d)

    def __len__(self):
        return self.values.size


# -- feature files ----------------------------------------------------------


def write_features(fs: FeatureSet, path) -> None:
    if not isinstance(fs, FeatureSet):
        fs = FeatureSet(fs)
    header = FEATURE_HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION, fs.T, fs.d)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(fs.data, dtype="<f4").tobytes())


def read_features(path) -> FeatureSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < FEATURE_HEADER.size:
        raise FormatError(f"{path}: file shorter than the {FEATURE_HEADER.size} byte header")
    magic, version, T, d = FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported feature file version {version}")
    if T == 0 or d == 0:
        raise FormatError(f"{path}: empty feature set (T={T}, d={d})")
    payload = raw[FEATURE_HEADER.size:]
    expected = T * d * 4
    if len(payload) != expected:
        raise TruncatedFileError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(T, d)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: payload contains non-finite values")
    return FeatureSet(data)


def read_features_csv(path) -> FeatureSet:
    """Import one feature per line, comma separated."""
    data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if data.size == 0:
        raise DataError(f"{path}: empty feature set")
    return FeatureSet(data)


# -- model files ------------------------------------------------------------

MODEL_TAGS = {Dictionary: 1, GmmModel: 2, PcaModel: 3, SvmModel: 4}
_TAG_TO_TYPE = {v: k for k, v in MODEL_TAGS.items()}
_DTYPES = {b"d": np.dtype("<f8"), b"q": np.dtype("<i8")}


def _model_arrays(model):
    if isinstance(model, Dictionary):
        return [model.B, model._params()]
    if isinstance(model, GmmModel):
        return [model.weights, model.means, model.variances]
    if isinstance(model, PcaModel):
        return [
            model.mean,
            model.components,
            model.eigenvalues,
            np.array([int(model.whiten), model.effective_rank], dtype=np.int64),
        ]
    if isinstance(model, SvmModel):
        return [model.weights, model.classes, model.duality_gaps]
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _model_from_arrays(cls, arrays):
    try:
        if cls is Dictionary:
            B, params = arrays
            if params.shape == (2,):
                return Dictionary(B, lam=float(params[0]), sigma2=float(params[1]))
            if params.shape != (0,):
                raise ValueError(f"coding parameters have shape {params.shape}")
            return Dictionary(B)
        if cls is GmmModel:
            w, mu, var = arrays
            return GmmModel(w, mu, var)
        if cls is PcaModel:
            mean, comps, ev, flags = arrays
            return PcaModel(mean, comps, ev, whiten=bool(flags[0]), effective_rank=int(flags[1]))
        if cls is SvmModel:
            W, classes, gaps = arrays
            return SvmModel(W, classes, gaps)
    except ValueError as exc:
        raise CorruptPayloadError(f"model payload does not unpack as {cls.__name__}: {exc}") from exc
    raise FormatError(f"unknown model type {cls}")


def dump_model(model) -> bytes:
    arrays = _model_arrays(model)
    body = io.BytesIO()
    for a in arrays:
        a = np.asarray(a)
        if a.dtype.kind == "f":
            code, a = b"d", a.astype("<f8", copy=False)
        else:
            code, a = b"q", a.astype("<i8", copy=False)
        body.write(struct.pack("<cB", code, a.ndim))
        body.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        body.write(np.ascontiguousarray(a).tobytes())
    body = body.getvalue()
    header = MODEL_HEADER.pack(MODEL_MAGIC, FORMAT_VERSION, MODEL_TAGS[type(model)], len(arrays))
    return header + body + struct.pack("<I", zlib.crc32(body))


def parse_model(raw: bytes, expected=None):
    if len(raw) < MODEL_HEADER.size + 4:
        raise FormatError("model file shorter than its header")
    magic, version, tag, n_arrays = MODEL_HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad model magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model file version {version}")
    cls = _TAG_TO_TYPE.get(tag)
    if cls is None:
        raise FormatError(f"unknown model type tag {tag}")
    if expected is not None and cls is not expected:
        raise FormatError(f"expected a {expected.__name__} model file, found {cls.__name__}")
    body = raw[MODEL_HEADER.size:-4]
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptPayloadError("model payload checksum mismatch")
    arrays = []
    pos = 0
    try:
        for _ in range(n_arrays):
            code, ndim = struct.unpack_from("<cB", body, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            dtype = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(body):
                raise CorruptPayloadError("model payload truncated")
            arrays.append(np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape))
            pos += nbytes
    except (struct.error, KeyError) as exc:
        raise CorruptPayloadError(f"model payload is malformed: {exc}") from exc
    if pos != len(body):
        raise CorruptPayloadError("trailing bytes in model payload")
    return _model_from_arrays(cls, arrays)


def save_model(model, path) -> None:
    data = dump_model(model)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_model(path, expected=None):
    """Load any model file; ``expected`` optionally pins the model class."""
    with open(path, "rb") as fh:
        raw = fh.read()
    return parse_model(raw, expected)
