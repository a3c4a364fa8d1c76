"""Tabular samples: loading, standardization, response rescaling, splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

RESPONSE_COLUMN = "z"
WEIGHT_COLUMN = "beta"


class DataError(ValueError):
    """Raised for malformed or invalid tabular input."""


@dataclass(frozen=True)
class Sample:
    """Covariate matrix with an optional response in [0, 1].

    ``weights`` optionally carries importance weights attached to the rows
    (written as a ``beta`` column on disk).
    """

    covariates: np.ndarray
    response: np.ndarray | None = None
    covariate_names: tuple[str, ...] = ()
    standardization: tuple[tuple[float, float], ...] | None = None
    response_rescale: tuple[float, float] | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DataError("covariates must be a 2-D matrix")
        if not np.all(np.isfinite(X)):
            r, c = np.argwhere(~np.isfinite(X))[0]
            raise DataError(f"non-finite covariate at row {r}, column {c}")
        X = X.copy()
        X.setflags(write=False)
        object.__setattr__(self, "covariates", X)
        names = tuple(self.covariate_names) or tuple(f"x{i}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} covariate names for {X.shape[1]} columns")
        object.__setattr__(self, "covariate_names", names)
        if self.response is not None:
            z = np.asarray(self.response, dtype=np.float64).ravel().copy()
            if z.shape[0] != X.shape[0]:
                raise DataError("response length does not match covariate rows")
            if not np.all(np.isfinite(z)):
                raise DataError(f"non-finite response at row {int(np.argmax(~np.isfinite(z)))}")
            if np.any((z < 0) | (z > 1)):
                raise DataError("response values must lie in [0, 1]; rescale first")
            z.setflags(write=False)
            object.__setattr__(self, "response", z)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64).ravel().copy()
            if w.shape[0] != X.shape[0]:
                raise DataError("weights length does not match covariate rows")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise DataError("weights must be finite and nonnegative")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
        if self.standardization is not None:
            stats = tuple((float(m), float(s)) for m, s in self.standardization)
            if len(stats) != X.shape[1]:
                raise DataError("standardization needs one (mean, sd) pair per column")
            if any(not s > 0 for _, s in stats):
                raise DataError("standardization sd must be strictly positive")
            object.__setattr__(self, "standardization", stats)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def labeled(self) -> bool:
        return self.response is not None

    def take(self, rows) -> "Sample":
        """Row subset preserving all metadata."""
        rows = np.asarray(rows, dtype=np.int64)
        return replace(
            self,
            covariates=self.covariates[rows],
            response=None if self.response is None else self.response[rows],
            weights=None if self.weights is None else self.weights[rows],
        )

    def with_weights(self, weights) -> "Sample":
        return replace(self, weights=weights)

    def unlabeled(self) -> "Sample":
        return replace(self, response=None)

    def columns(self, subset) -> np.ndarray:
        return self.covariates[:, list(subset)]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    validation_fraction: float
    test_fraction: float
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.validation_fraction, self.test_fraction)
        if any(not 0 < f < 1 for f in fr):
            raise DataError(f"split fractions must lie in (0, 1), got {fr}")
        if abs(sum(fr) - 1.0) > 1e-12:
            raise DataError(f"split fractions must sum to 1, got {sum(fr)!r}")
        if int(self.seed) < 0:
            raise DataError("seed must be unsigned")


def load_table(path, has_response: bool = False, response_range=None) -> Sample:
    """Read a comma-delimited table with one header row.

    The response is the column named ``z`` when present, otherwise the last
    column.  A ``beta`` column, if any, becomes the sample's weights.  When
    ``response_range`` is given the response is rescaled to [0, 1] with it.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {i}, column {header[j]!r}: cannot parse {cell!r}") from None
            if not np.isfinite(v):
                raise DataError(f"{path}: row {i}, column {header[j]!r}: non-finite value {cell!r}")
            body[i, j] = v

    cols = list(range(len(header)))
    response = weights = None
    if WEIGHT_COLUMN in header:
        j = header.index(WEIGHT_COLUMN)
        weights = body[:, j]
        cols.remove(j)
    if has_response:
        j = header.index(RESPONSE_COLUMN) if RESPONSE_COLUMN in header else cols[-1]
        response = body[:, j]
        cols.remove(j)
    if not cols:
        raise DataError(f"{path}: no covariate columns")
    rescale = None
    if response is not None and response_range is not None:
        r = rescale_response(response, response_range)
        response, rescale = r.z, r.range
    return Sample(
        covariates=body[:, cols].reshape(body.shape[0], len(cols)),
        response=response,
        covariate_names=tuple(header[j] for j in cols),
        response_rescale=rescale,
        weights=weights,
    )


def save_table(sample: Sample, path, include_weights: bool = True) -> None:
    """Write a sample in the same format ``load_table`` reads."""
    header = list(sample.covariate_names)
    cols = [sample.covariates]
    if sample.response is not None:
        header.append(RESPONSE_COLUMN)
        cols.append(sample.response[:, None])
    if include_weights and sample.weights is not None:
        header.append(WEIGHT_COLUMN)
        cols.append(sample.weights[:, None])
    body = np.hstack(cols) if cols else np.empty((0, 0))
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in body:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def column_stats(X) -> tuple[tuple[float, float], ...]:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise DataError("need at least two rows to compute a standard deviation")
    return tuple((float(m), float(s)) for m, s in zip(X.mean(axis=0), X.std(axis=0, ddof=1)))


def standardize(sample: Sample, stats=None) -> Sample:
    """Center and scale every covariate column.

    Uses ``stats`` (one ``(mean, sd)`` per column) when given, otherwise the
    sample's own means and sample standard deviations (divisor n - 1).
    """
    if stats is None:
        stats = column_stats(sample.covariates)
        for name, (_, s) in zip(sample.covariate_names, stats):
            if not s > 0:
                raise DataError(f"column {name!r} has zero variance; supply stats")
    stats = tuple((float(m), float(s)) for m, s in stats)
    if len(stats) != sample.d:
        raise DataError(f"{len(stats)} stats for {sample.d} columns")
    mean = np.array([m for m, _ in stats])
    sd = np.array([s for _, s in stats])
    return replace(sample, covariates=(sample.covariates - mean) / sd, standardization=stats)


@dataclass(frozen=True)
class Rescaled:
    z: np.ndarray
    range: tuple[float, float]
    n_clipped: int = 0

    def inverse(self, z=None):
        lo, hi = self.range
        z = self.z if z is None else np.asarray(z, dtype=np.float64)
        return z * (hi - lo) + lo


def rescale_response(z_raw, range=None) -> Rescaled:
    """Map responses to [0, 1] via ``(z - min) / (max - min)``.

    With an explicit ``range``, values falling outside it are clipped and
    counted in ``n_clipped``.
    """
    z_raw = np.asarray(z_raw, dtype=np.float64).ravel()
    if not np.all(np.isfinite(z_raw)):
        raise DataError("non-finite response")
    if range is None:
        if z_raw.size == 0 or z_raw.min() == z_raw.max():
            raise DataError("constant response cannot be rescaled without an explicit range")
        lo, hi = float(z_raw.min()), float(z_raw.max())
    else:
        lo, hi = float(range[0]), float(range[1])
        if not lo < hi:
            raise DataError(f"invalid response range ({lo}, {hi})")
    z = (z_raw - lo) / (hi - lo)
    outside = (z < 0) | (z > 1)
    return Rescaled(np.clip(z, 0.0, 1.0), (lo, hi), int(outside.sum()))


def split_indices(n: int, spec: SplitSpec):
    """Seeded disjoint partition of ``range(n)`` into train/validation/test."""
    if n < 3:
        raise DataError("need at least 3 rows to split")
    n_train = int(round(spec.train_fraction * n))
    n_val = int(round(spec.validation_fraction * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise DataError(f"split of n={n} leaves an empty part ({n_train}, {n_val}, {n_test})")
    perm = np.random.default_rng(int(spec.seed)).permutation(n)
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split(sample: Sample, spec: SplitSpec):
    """Return ``(train, validation, test)`` samples."""
    return tuple(sample.take(np.sort(ix)) for ix in split_indices(sample.n, spec))
