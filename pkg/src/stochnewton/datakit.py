"""Dataset ingestion, feature scaling and synthetic problem generation.

Datasets are immutable once built: a CSR feature matrix paired with +-1
labels. All randomness is funneled through explicit seeds so that repeated
construction is bit-identical.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class SparseDataset:
    """Row-sparse feature matrix with labels in {-1, +1}.

    Parameters
    ----------
    matrix : scipy.sparse.csr_matrix
        N x n feature matrix; row i is the feature vector a_i.
    labels : np.ndarray
        Shape (N,), float entries, each exactly -1.0 or +1.0.
    """

    matrix: sp.csr_matrix
    labels: np.ndarray

    def __post_init__(self):
        if self.matrix.shape[0] != self.labels.shape[0]:
            raise ValueError("matrix rows and labels length differ")
        lab = np.unique(self.labels)
        if not np.all(np.isin(lab, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")

    @property
    def n_points(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]

    def row(self, i: int) -> dict:
        """Row i as an index->value dict (0-based indices)."""
        start, end = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return dict(zip(self.matrix.indices[start:end].tolist(),
                        self.matrix.data[start:end].tolist()))

    def content_hash(self) -> str:
        """Stable hex digest of the full content; used to key reference caches."""
        h = hashlib.sha256()
        m = self.matrix
        h.update(np.asarray(m.shape, dtype=np.int64).tobytes())
        h.update(np.asarray(m.indptr, dtype=np.int64).tobytes())
        h.update(np.asarray(m.indices, dtype=np.int64).tobytes())
        h.update(np.asarray(m.data, dtype=np.float64).tobytes())
        h.update(np.asarray(self.labels, dtype=np.float64).tobytes())
        return h.hexdigest()


def _dataset_from_rows(rows, labels, n_features):
    indptr = [0]
    indices = []
    data = []
    for r in rows:
        for j in sorted(r):
            indices.append(j)
            data.append(r[j])
        indptr.append(len(indices))
    mat = sp.csr_matrix(
        (np.asarray(data, dtype=np.float64),
         np.asarray(indices, dtype=np.int64),
         np.asarray(indptr, dtype=np.int64)),
        shape=(len(rows), n_features),
    )
    return SparseDataset(mat, np.asarray(labels, dtype=np.float64))


def load_libsvm(path, n_features: int | None = None) -> SparseDataset:
    """Parse a LIBSVM-format text file.

    Each non-empty line is ``<label> <idx>:<val> ...`` with 1-based feature
    indices. Exactly two distinct raw labels are required; the numerically
    smaller one maps to -1, the other to +1. Malformed lines raise with
    ``path:line_no`` context.
    """
    rows = []
    raw_labels = []
    max_index = -1
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise ValueError(f"{path}:{line_no}: bad label {parts[0]!r}")
            row = {}
            for tok in parts[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise ValueError(f"{path}:{line_no}: expected idx:val, got {tok!r}")
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise ValueError(f"{path}:{line_no}: bad feature token {tok!r}")
                if idx < 1:
                    raise ValueError(f"{path}:{line_no}: feature index {idx} is not 1-based")
                if idx - 1 in row:
                    raise ValueError(f"{path}:{line_no}: duplicate feature index {idx}")
                row[idx - 1] = val
                max_index = max(max_index, idx - 1)
            rows.append(row)
            raw_labels.append(label)
    if not rows:
        raise ValueError(f"{path}: empty dataset")
    classes = sorted(set(raw_labels))
    if len(classes) != 2:
        raise ValueError(
            f"{path}: need exactly 2 label classes, found {len(classes)}: {classes[:6]}")
    lo = classes[0]
    labels = [-1.0 if lab == lo else 1.0 for lab in raw_labels]
    if n_features is None:
        n_features = max_index + 1
    elif n_features < max_index + 1:
        raise ValueError(f"{path}: n_features={n_features} below max seen index {max_index + 1}")
    return _dataset_from_rows(rows, labels, n_features)


def dump_libsvm(ds: SparseDataset, path) -> None:
    """Write a dataset back out in LIBSVM text format (1-based indices)."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(ds.n_points):
            start, end = ds.matrix.indptr[i], ds.matrix.indptr[i + 1]
            toks = [f"{int(ds.labels[i]):+d}"]
            for j, v in zip(ds.matrix.indices[start:end], ds.matrix.data[start:end]):
                # float() first: repr of a numpy scalar is not parseable text
                toks.append(f"{j + 1}:{float(v)!r}")
            fh.write(" ".join(toks) + "\n")


def scale_features(ds: SparseDataset, per_feature: bool = True) -> SparseDataset:
    """Min-max scale stored entries to [0, 1].

    Implicit zeros count toward the per-feature minimum and maximum (a column
    with any absent entry has 0 inside its value range), and the affine map is
    applied to stored entries only, so the sparsity pattern is preserved.
    Features whose range degenerates to a point map to 0. Idempotent: a second
    application changes nothing beyond 1e-15.

    per_feature=False applies one global min-max over all stored entries
    (and 0, when any entry is implicit) instead.
    """
    if ds.n_points < 1:
        raise ValueError("empty dataset")
    csc = ds.matrix.tocsc(copy=True)
    n = ds.n_features
    N = ds.n_points
    if per_feature:
        for j in range(n):
            start, end = csc.indptr[j], csc.indptr[j + 1]
            if start == end:
                continue
            col = csc.data[start:end]
            lo = col.min()
            hi = col.max()
            if end - start < N:  # implicit zeros exist in this column
                lo = min(lo, 0.0)
                hi = max(hi, 0.0)
            if hi - lo <= 0.0:
                csc.data[start:end] = 0.0
            else:
                csc.data[start:end] = (col - lo) / (hi - lo)
    else:
        if csc.nnz:
            lo = csc.data.min()
            hi = csc.data.max()
            if csc.nnz < N * n:
                lo = min(lo, 0.0)
                hi = max(hi, 0.0)
            if hi - lo <= 0.0:
                csc.data[:] = 0.0
            else:
                csc.data[:] = (csc.data - lo) / (hi - lo)
    out = csc.tocsr()
    out.sort_indices()
    return SparseDataset(out, ds.labels.copy())


def synth_binary(n_points: int, n_features: int, density: float, seed: int,
                 noise: float = 0.0) -> SparseDataset:
    """Seeded synthetic binary classification dataset.

    Features are uniform in [0, 1] on a Bernoulli(density) sparsity pattern.
    Labels are the sign of <a_i, w> - median over a sparse ground-truth w,
    then flipped independently at rate ``noise``. Deterministic per seed.
    Generation is dense in memory (n_points * n_features), intended for
    desk-scale problems.
    """
    if not (0.0 < density <= 1.0):
        raise ValueError(f"density must be in (0, 1], got {density}")
    if not (0.0 <= noise < 0.5):
        raise ValueError(f"noise must be in [0, 0.5), got {noise}")
    if n_points < 1 or n_features < 1:
        raise ValueError("n_points and n_features must be positive")
    rng = np.random.default_rng(seed)
    support = max(1, n_features // 10)
    w = np.zeros(n_features)
    idx = rng.choice(n_features, size=support, replace=False)
    w[idx] = rng.normal(size=support)
    pattern = rng.random((n_points, n_features)) < density
    vals = rng.random((n_points, n_features))
    dense = np.where(pattern, vals, 0.0)
    scores = dense @ w
    labels = np.where(scores - np.median(scores) >= 0.0, 1.0, -1.0)
    if noise > 0.0:
        flips = rng.random(n_points) < noise
        labels = np.where(flips, -labels, labels)
    mat = sp.csr_matrix(dense)
    mat.sort_indices()
    return SparseDataset(mat, labels)


def truncate(ds: SparseDataset, max_points: int | None = None,
             max_features: int | None = None) -> SparseDataset:
    """Desk-scale subset: keep the first rows/columns. No-op when caps cover the data."""
    mat = ds.matrix
    labels = ds.labels
    if max_points is not None and max_points < ds.n_points:
        mat = mat[:max_points]
        labels = labels[:max_points]
    if max_features is not None and max_features < ds.n_features:
        mat = mat[:, :max_features]
    mat = sp.csr_matrix(mat)
    mat.sort_indices()
    # truncating features can leave a label class empty; caller beware
    return SparseDataset(mat, np.asarray(labels, dtype=np.float64).copy())
