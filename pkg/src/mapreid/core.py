"""Domain types and shared linear-algebra primitives.

Embedding matrices are plain ``float64`` numpy arrays of shape ``(N, D)``;
:func:`as_embeddings` is the single validation point.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionMismatch, NonFiniteInput, NotNormalized, ZeroNormRow

NORM_EPS = 1e-12
UNIT_TOL = 1e-6


class Role(str, enum.Enum):
    TRAIN = "train"
    QUERY = "query"
    GALLERY = "gallery"


def as_embeddings(x, name="embeddings"):
    """Return ``x`` as a C-contiguous float64 ``(N, D)`` array, validating shape and finiteness."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        r, c = np.argwhere(~np.isfinite(arr))[0]
        raise NonFiniteInput(f"{name} has a non-finite entry at ({r}, {c})")
    return arr


def _as_labels(v, n, name):
    arr = np.asarray(v, dtype=np.int64).reshape(-1)
    if arr.shape[0] != n:
        raise DimensionMismatch(f"{name} has {arr.shape[0]} entries, expected {n}")
    if arr.size and arr.min() < 0:
        raise ValueError(f"{name} must be non-negative")
    return arr


def dense_remap(labels):
    """Map arbitrary non-negative labels to ``0..C-1`` (sorted order).

    Returns ``(dense, originals)`` with ``originals[dense] == labels``.
    """
    originals, dense = np.unique(np.asarray(labels, dtype=np.int64), return_inverse=True)
    return dense.astype(np.int64), originals


@dataclass(frozen=True, eq=False)
class LabeledSet:
    """Embeddings plus per-row identity, camera and clothing labels.

    ``identity`` is what losses and evaluation compare. For train-role sets it
    is dense (``0..C-1``) and ``original_identity`` keeps the ingested ids; for
    query/gallery sets the two are equal so query and gallery files stay
    comparable.
    """

    embeddings: np.ndarray
    identity: np.ndarray
    camera: np.ndarray
    clothing: np.ndarray
    role: Role = Role.TRAIN
    original_identity: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        emb = as_embeddings(self.embeddings)
        n = emb.shape[0]
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "role", Role(self.role))
        for name in ("identity", "camera", "clothing"):
            object.__setattr__(self, name, _as_labels(getattr(self, name), n, name))
        orig = self.identity if self.original_identity is None else self.original_identity
        object.__setattr__(self, "original_identity", _as_labels(orig, n, "original_identity"))
        for arr in (self.embeddings, self.identity, self.camera, self.clothing, self.original_identity):
            arr.setflags(write=False)

    @classmethod
    def from_raw(cls, embeddings, identity, camera=None, clothing=None, role=Role.TRAIN, provenance=None):
        """Build a set from ingested labels, densely remapping identities for train role."""
        emb = as_embeddings(embeddings)
        n = emb.shape[0]
        identity = _as_labels(identity, n, "identity")
        camera = np.zeros(n, dtype=np.int64) if camera is None else camera
        clothing = np.zeros(n, dtype=np.int64) if clothing is None else clothing
        if Role(role) is Role.TRAIN:
            dense, _ = dense_remap(identity)
        else:
            dense = identity
        return cls(emb, dense, camera, clothing, role, original_identity=identity,
                   provenance=dict(provenance or {}))

    @property
    def n(self):
        return self.embeddings.shape[0]

    @property
    def d(self):
        return self.embeddings.shape[1]

    @property
    def num_identities(self):
        return int(np.unique(self.identity).size)

    def identity_table(self):
        """Sorted ``(dense_id, original_id)`` pairs."""
        pairs = np.unique(np.stack([self.identity, self.original_identity], axis=1), axis=0)
        return [(int(a), int(b)) for a, b in pairs]

    def subset(self, rows, role=None):
        rows = np.asarray(rows, dtype=np.int64)
        role = self.role if role is None else Role(role)
        return LabeledSet.from_raw(self.embeddings[rows], self.original_identity[rows],
                                   self.camera[rows], self.clothing[rows], role,
                                   provenance=self.provenance)

    def with_embeddings(self, embeddings):
        """Same labels, new feature vectors (e.g. after a model forward pass)."""
        return LabeledSet(embeddings, self.identity, self.camera, self.clothing, self.role,
                          self.original_identity, dict(self.provenance))


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Query x gallery cosine similarities with identity-match and self-match masks."""

    values: np.ndarray
    match: np.ndarray
    self_mask: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    @property
    def valid(self):
        return ~self.self_mask

    def transpose(self):
        return SimilarityMatrix(self.values.T.copy(), self.match.T.copy(), self.self_mask.T.copy())


def l2_normalize(e):
    """Divide every row by its Euclidean norm; rows with norm <= 1e-12 raise :class:`ZeroNormRow`."""
    x = as_embeddings(e)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    bad = np.flatnonzero(norms <= NORM_EPS)
    if bad.size:
        raise ZeroNormRow(bad[0])
    return x / norms[:, None]


def _check_unit(x, name):
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    off = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
    if off.size:
        raise NotNormalized(f"{name} row {off[0]} has norm {norms[off[0]]:.9g}")


def cosine_similarity(q, g, q_labels, g_labels, q_index=None, g_index=None):
    """Cosine similarity of L2-normalized query and gallery rows.

    ``q_index``/``g_index`` are sample ids (provenance). When both are given,
    entries where they coincide are flagged in ``self_mask``; otherwise the
    query and gallery are treated as disjoint.
    """
    q = as_embeddings(q, "query")
    g = as_embeddings(g, "gallery")
    if q.shape[1] != g.shape[1]:
        raise DimensionMismatch(f"query dim {q.shape[1]} != gallery dim {g.shape[1]}")
    _check_unit(q, "query")
    _check_unit(g, "gallery")
    ql = _as_labels(q_labels, q.shape[0], "query labels")
    gl = _as_labels(g_labels, g.shape[0], "gallery labels")
    values = q @ g.T
    match = ql[:, None] == gl[None, :]
    if q_index is not None and g_index is not None:
        qi = np.asarray(q_index).reshape(-1)
        gi = np.asarray(g_index).reshape(-1)
        if qi.shape[0] != q.shape[0] or gi.shape[0] != g.shape[0]:
            raise DimensionMismatch("provenance index length does not match row count")
        self_mask = qi[:, None] == gi[None, :]
    else:
        self_mask = np.zeros(values.shape, dtype=bool)
    return SimilarityMatrix(values, match, self_mask)


def batch_similarity(x_unit, labels):
    """Within-batch mode: every row queries the whole batch with itself masked out."""
    idx = np.arange(np.asarray(x_unit).shape[0])
    return cosine_similarity(x_unit, x_unit, labels, labels, idx, idx)


def euclidean_distance_matrix(a, b):
    """``out[i, j] = ||a_i - b_j||``, accumulated from coordinate differences."""
    a = as_embeddings(a, "a")
    b = as_embeddings(b, "b")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"dim {a.shape[1]} != dim {b.shape[1]}")
    return kernels.pairwise_euclidean(a, b)
