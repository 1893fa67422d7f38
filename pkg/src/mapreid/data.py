"""Datasets: synthetic generation, P x K sampling, clothing relabeling, file I/O and split manifests.

CSV schema: header ``id,camera,clothing,f0,...,f{D-1}``; ``clothing`` may be
omitted (read as 0). Identities are written as their original ids.

Binary schema (little-endian)::

    magic    8 bytes  b"MAPRLSET"
    version  u32      1
    n, d     u64, u64
    payload  n*d f64, row-major
    identity n u32, camera n u32, clothing n u32
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import LabeledSet, Role, dense_remap
from .errors import (FormatError, InvalidSpec, LabelColumnMissing, ManifestMismatch,
                     MissingClothingLabels, NonFiniteValue, ParseError, TooFewIdentities)

BINARY_MAGIC = b"MAPRLSET"
BINARY_VERSION = 1


# -- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Clustered identities whose clothing changes shift them off-center.

    The first ``dim // 2`` coordinates carry the identity center; clothing
    sub-centers are offset in the remaining coordinates, so a learned
    projection can discard clothing while raw cosine similarity cannot.
    """

    num_identities: int = 400
    instances_per_identity: int = 8
    dim: int = 32
    intra_sigma: float = 0.3
    inter_scale: float = 1.5
    clothing_clusters_per_identity: int = 4
    clothing_shift_sigma: float = 2.0
    seed: int = 0

    def validate(self):
        for name in ("num_identities", "instances_per_identity", "clothing_clusters_per_identity"):
            if int(getattr(self, name)) < 1:
                raise InvalidSpec(f"{name} must be >= 1")
        if self.dim < 2:
            raise InvalidSpec("dim must be >= 2 (identity and clothing blocks)")
        for name in ("intra_sigma", "inter_scale", "clothing_shift_sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidSpec(f"{name} must be a finite value >= 0, got {v}")
        if self.seed < 0:
            raise InvalidSpec("seed must be >= 0")


def generate_synthetic(spec: SyntheticSpec, role=Role.TRAIN):
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_id, n_inst, d = spec.num_identities, spec.instances_per_identity, spec.dim
    n_cloth = spec.clothing_clusters_per_identity
    id_dim = d // 2

    centers = np.zeros((n_id, d))
    centers[:, :id_dim] = rng.normal(0.0, spec.inter_scale, size=(n_id, id_dim))
    shifts = np.zeros((n_id, n_cloth, d))
    shifts[:, :, id_dim:] = rng.normal(0.0, spec.clothing_shift_sigma, size=(n_id, n_cloth, d - id_dim))
    noise = rng.normal(0.0, spec.intra_sigma, size=(n_id, n_inst, d))

    inst = np.arange(n_inst)
    # consecutive blocks of frames share an outfit
    cloth_of_inst = inst * n_cloth // n_inst
    x = centers[:, None, :] + shifts[:, cloth_of_inst, :] + noise
    identity = np.repeat(np.arange(n_id), n_inst)
    clothing = np.tile(cloth_of_inst, n_id)
    camera = np.tile(inst, n_id)
    return LabeledSet.from_raw(x.reshape(n_id * n_inst, d), identity, camera, clothing, role,
                               provenance={"synthetic": asdict(spec), "has_clothing": True})


def split_by_identity(data: LabeledSet, fractions=(0.5, 0.1, 0.4), seed=0, queries_per_identity=1):
    """Disjoint identity split into train / validation / test; eval splits become query + gallery.

    The first ``queries_per_identity`` rows (in file order) of each evaluation
    identity go to the query side, the rest to the gallery.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise InvalidSpec(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    ids = np.unique(data.original_identity)
    rng = np.random.default_rng(seed)
    ids = ids[rng.permutation(ids.size)]
    n_train = int(round(fractions[0] * ids.size))
    n_val = int(round(fractions[1] * ids.size))
    groups = {"train": ids[:n_train], "validation": ids[n_train:n_train + n_val],
              "test": ids[n_train + n_val:]}
    out = {"train": data.subset(np.flatnonzero(np.isin(data.original_identity, groups["train"])), Role.TRAIN)}
    for name in ("validation", "test"):
        q_rows, g_rows = [], []
        for pid in np.sort(groups[name]):
            rows = np.flatnonzero(data.original_identity == pid)
            q_rows.extend(rows[:queries_per_identity])
            g_rows.extend(rows[queries_per_identity:])
        if q_rows and g_rows:
            out[f"{name}.query"] = data.subset(np.sort(q_rows), Role.QUERY)
            out[f"{name}.gallery"] = data.subset(np.sort(g_rows), Role.GALLERY)
    return out


# -- P x K sampling ------------------------------------------------------------

@dataclass(frozen=True)
class PkBatch:
    indices: np.ndarray
    p: int
    k: int

    @property
    def size(self):
        return self.indices.size


def pk_sampler(data: LabeledSet, p=16, k=4, seed=0, epoch=0):
    """One epoch of P x K batches, deterministic in ``(seed, epoch)``.

    Identities are visited in a shuffled order so every identity appears once
    before any repeats; the final short group is topped up with identities
    drawn from the rest. Identities with fewer than ``k`` rows are sampled with
    replacement.
    """
    if p < 1 or k < 1:
        raise ValueError("p and k must be >= 1")
    ids = np.unique(data.identity)
    if ids.size < p:
        raise TooFewIdentities(f"need {p} identities per batch, dataset has {ids.size}")
    rng = np.random.default_rng([int(seed), int(epoch)])
    rows_of = {int(i): np.flatnonzero(data.identity == i) for i in ids}
    order = ids[rng.permutation(ids.size)]
    batches = []
    for start in range(0, order.size, p):
        group = list(order[start:start + p])
        if len(group) < p:
            rest = np.setdiff1d(ids, group)
            group += list(rng.choice(rest, size=p - len(group), replace=False))
        idx = []
        for pid in group:
            rows = rows_of[int(pid)]
            idx.append(rng.choice(rows, size=k, replace=rows.size < k))
        batches.append(PkBatch(np.concatenate(idx).astype(np.int64), p, k))
    return batches


# -- clothing relabel -----------------------------------------------------------

def relabel_by_clothing(data: LabeledSet):
    """Treat each (identity, clothing) pair as its own class.

    The person ids before relabeling are kept in ``provenance["person_identity"]``
    and the pair table in ``provenance["clothing_pairs"]``.
    """
    if not data.provenance.get("has_clothing", True):
        raise MissingClothingLabels("set was ingested without a clothing column")
    pairs = np.stack([data.original_identity, data.clothing], axis=1)
    table, dense = np.unique(pairs, axis=0, return_inverse=True)
    dense = dense.reshape(-1).astype(np.int64)
    prov = dict(data.provenance)
    prov["person_identity"] = data.original_identity.copy()
    prov["clothing_pairs"] = [(int(a), int(b)) for a, b in table]
    return LabeledSet(data.embeddings, dense, data.camera, data.clothing, data.role,
                      original_identity=dense, provenance=prov)


# -- file I/O ---------------------------------------------------------------------

def _csv_text(data: LabeledSet):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["id", "camera", "clothing"] + [f"f{j}" for j in range(data.d)])
    for i in range(data.n):
        w.writerow([int(data.original_identity[i]), int(data.camera[i]), int(data.clothing[i])]
                   + [repr(float(v)) for v in data.embeddings[i]])
    return out.getvalue()


def _binary_bytes(data: LabeledSet):
    out = io.BytesIO()
    out.write(BINARY_MAGIC)
    out.write(struct.pack("<IQQ", BINARY_VERSION, data.n, data.d))
    out.write(np.ascontiguousarray(data.embeddings, dtype="<f8").tobytes())
    for labels in (data.original_identity, data.camera, data.clothing):
        if labels.size and labels.max() > 0xFFFFFFFF:
            raise FormatError("label does not fit in u32")
        out.write(labels.astype("<u4").tobytes())
    return out.getvalue()


def _format_of(path, fmt):
    if fmt is not None:
        return fmt
    return "csv" if str(path).lower().endswith(".csv") else "bin"


def save_labeled_set(data: LabeledSet, path, fmt=None):
    path = Path(path)
    if _format_of(path, fmt) == "csv":
        path.write_text(_csv_text(data))
    else:
        path.write_bytes(_binary_bytes(data))


def _parse_csv(text, role):
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError(1, "empty file") from None
    for required in ("id", "camera"):
        if required not in header:
            raise LabelColumnMissing(f"header lacks the '{required}' column")
    has_clothing = "clothing" in header
    feat_cols = [h for h in header if h.startswith("f") and h[1:].isdigit()]
    d = len(feat_cols)
    if d == 0 or feat_cols != [f"f{j}" for j in range(d)]:
        raise ParseError(1, "feature columns must be f0..f{D-1}")
    col = {h: i for i, h in enumerate(header)}
    feat_idx = [col[f"f{j}"] for j in range(d)]
    ids, cams, cloth, rows = [], [], [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            raise ParseError(lineno, f"expected {len(header)} fields, got {len(rec)}")
        try:
            ids.append(int(rec[col["id"]]))
            cams.append(int(rec[col["camera"]]))
            cloth.append(int(rec[col["clothing"]]) if has_clothing else 0)
            rows.append([float(rec[c]) for c in feat_idx])
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
    if not rows:
        raise ParseError(2, "no data rows")
    x = np.array(rows, dtype=np.float64)
    return x, ids, cams, cloth, has_clothing


def _parse_binary(raw):
    if raw[:8] != BINARY_MAGIC:
        raise FormatError("not a labeled-set file (bad magic)")
    head = struct.calcsize("<IQQ")
    version, n, d = struct.unpack("<IQQ", raw[8:8 + head])
    if version != BINARY_VERSION:
        raise FormatError(f"unsupported labeled-set version {version}")
    off = 8 + head
    expected = off + 8 * n * d + 3 * 4 * n
    if len(raw) != expected:
        raise FormatError(f"expected {expected} bytes, file has {len(raw)}")
    x = np.frombuffer(raw, dtype="<f8", count=n * d, offset=off).astype(np.float64).reshape(n, d)
    off += 8 * n * d
    labels = []
    for _ in range(3):
        labels.append(np.frombuffer(raw, dtype="<u4", count=n, offset=off).astype(np.int64))
        off += 4 * n
    return x, labels[0], labels[1], labels[2], True


def load_labeled_set(path, fmt=None, role=Role.TRAIN):
    path = Path(path)
    if _format_of(path, fmt) == "csv":
        x, ids, cams, cloth, has_cloth = _parse_csv(path.read_text(), role)
    else:
        x, ids, cams, cloth, has_cloth = _parse_binary(path.read_bytes())
    bad = np.argwhere(~np.isfinite(x))
    if bad.size:
        raise NonFiniteValue(*bad[0])
    return LabeledSet.from_raw(x, ids, cams, cloth, role,
                               provenance={"source": str(path), "has_clothing": has_cloth})


# -- split manifests ----------------------------------------------------------------

SUBSETS = ("train", "validation.query", "validation.gallery", "test.query", "test.gallery")


@dataclass
class SplitManifest:
    """Declared identity/image counts per subset (and optional file names)."""

    counts: dict = field(default_factory=dict)  # subset -> {"identities": int, "images": int}
    files: dict = field(default_factory=dict)  # subset -> relative path
    extra: dict = field(default_factory=dict)

    def to_text(self):
        lines = ["# split manifest: <subset>.<field> = value"]
        for name in SUBSETS:
            if name in self.counts:
                c = self.counts[name]
                lines.append(f"{name}.identities = {c['identities']}")
                lines.append(f"{name}.images = {c['images']}")
            if name in self.files:
                lines.append(f"{name}.file = {self.files[name]}")
        for k, v in self.extra.items():
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        m = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(lineno, "expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            subset, _, fld = key.rpartition(".")
            if subset in SUBSETS and fld in ("identities", "images"):
                try:
                    m.counts.setdefault(subset, {})[fld] = int(value)
                except ValueError:
                    raise ParseError(lineno, f"count must be an integer: {value!r}") from None
            elif subset in SUBSETS and fld == "file":
                m.files[subset] = value
            else:
                m.extra[key] = value
        return m

    @classmethod
    def from_sets(cls, sets, files=None):
        m = cls(files=dict(files or {}))
        for name, s in sets.items():
            m.counts[name] = {"identities": int(np.unique(s.original_identity).size), "images": s.n}
        return m


def validate_manifest(manifest: SplitManifest, sets, strict=True):
    """Recount identities/images per subset and check train/non-train identity disjointness.

    Returns a list of ``(field, declared, actual, ok)`` rows; with ``strict``
    the first failing row raises :class:`ManifestMismatch`.
    """
    report = []
    for name, declared in manifest.counts.items():
        if name not in sets:
            report.append((f"{name}.file", "present", "missing", False))
            continue
        s = sets[name]
        actual = {"identities": int(np.unique(s.original_identity).size), "images": s.n}
        for fld in ("identities", "images"):
            if fld in declared:
                report.append((f"{name}.{fld}", declared[fld], actual[fld], declared[fld] == actual[fld]))
    if "train" in sets:
        train_ids = set(np.unique(sets["train"].original_identity).tolist())
        for name, s in sets.items():
            if name == "train":
                continue
            overlap = train_ids & set(np.unique(s.original_identity).tolist())
            report.append((f"disjoint.train/{name}", 0, len(overlap), not overlap))
    if strict:
        for fld, dec, act, ok in report:
            if not ok:
                raise ManifestMismatch(fld, dec, act)
    return report


def load_split(directory, manifest_name="manifest.txt"):
    """Read a manifest and every file it lists; returns ``(manifest, sets)``."""
    directory = Path(directory)
    manifest = SplitManifest.from_text((directory / manifest_name).read_text())
    roles = {"train": Role.TRAIN}
    sets = {}
    for name, rel in manifest.files.items():
        role = roles.get(name, Role.QUERY if name.endswith("query") else Role.GALLERY)
        sets[name] = load_labeled_set(directory / rel, role=role)
    return manifest, sets
