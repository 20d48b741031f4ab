"""CSV ingestion, domain splits, and the synthetic domain-shift generator.

The split object is deliberately lopsided: source rows keep their labels,
target training rows do not.  ``DomainDataset`` physically lacks a
target-train label field, so adaptation code cannot use those labels even
by accident; the supervised target baseline goes through the separate
:func:`make_target_baseline` door, which needs the raw table back.

Normalization statistics come from the source training split only and are
applied to every partition — the target is supposed to look shifted.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Input data cannot support the requested operation."""


@dataclass(frozen=True)
class LabeledSplit:
    features: np.ndarray  # (n, d)
    labels: np.ndarray    # (n,) in {0, 1}

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DataError(
                f"split shapes inconsistent: {self.features.shape} vs {self.labels.shape}")

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class RawTable:
    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    dropped_rows: int = 0

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class DomainDataset:
    source_train: LabeledSplit
    target_train: np.ndarray        # features only; labels are withheld by construction
    target_test: LabeledSplit
    feature_names: list[str]
    norm_mean: np.ndarray
    norm_sd: np.ndarray
    manifest: dict = field(repr=False)

    @property
    def n_features(self) -> int:
        return self.source_train.features.shape[1]


@dataclass(frozen=True)
class ShiftSpec:
    """Parametric two-domain generator: Gaussian mixtures per class.

    Each mixture component's mean moves by exactly ``shift`` in the target
    domain along its own fixed random unit direction; component covariance
    is scaled by ``cov_scale``.  Three knobs shape those directions:

    * ``shift_coherence`` — cosine between the off-axis part of every
      per-component direction and one shared random axis.  At 1.0 the
      mixture translates rigidly (a scorer's ranking largely shrugs that
      off); at 0.0 components scatter independently, which scrambles a
      frozen source model but stays fixable by re-aligning features.
    * ``shift_class_align`` — half-range of the per-component cosine onto
      the class-separation axis: each component draws a fixed cosine
      uniformly from [-A, A], so sub-populations drift up or down the
      discriminative direction by different amounts.  This is the part of
      the shift that actually corrupts a frozen scorer's ranking.
    * ``shift_minority_align`` — extra systematic cosine added for
      minority-class components (negative slides target positives toward
      the majority, starving a fixed 0.5 threshold of recall).
    """

    d: int = 38
    pi_source: float = 0.10
    pi_target: float = 0.05
    shift: float = 2.0
    cov_scale: float = 1.0
    components: int = 2
    seed: int = 0
    class_sep: float = 2.4
    component_spread: float = 0.9
    shift_class_align: float = 0.4
    shift_minority_align: float = 0.0
    shift_coherence: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.pi_source < 1.0 and 0.0 < self.pi_target < 1.0):
            raise DataError("class priors must lie in (0, 1)")
        if self.shift < 0:
            raise DataError(f"shift must be >= 0, got {self.shift}")
        if self.cov_scale <= 0:
            raise DataError("cov_scale must be positive")
        if self.components < 1 or self.d < 2:
            raise DataError("need components >= 1 and d >= 2")
        for name in ("shift_class_align", "shift_minority_align"):
            if not -1.0 <= getattr(self, name) <= 1.0:
                raise DataError(f"{name} is a cosine, must be in [-1, 1]")
        if not 0.0 <= self.shift_coherence <= 1.0:
            raise DataError("shift_coherence must be in [0, 1]")


def load_csv(path, label_column: str, positive_label: str,
             feature_columns: list[str] | None = None,
             delimiter: str = ",") -> RawTable:
    """Parse a pre-featurized CSV; unparseable rows are dropped and counted.

    ``positive_label`` is compared against the stripped label cell; matching
    rows get label 1, everything else 0.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
        if feature_columns is None:
            feature_columns = [h for h in header if h != label_column]
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise DataError(f"{path}: feature columns missing from header: {missing}")
        feat_idx = [header.index(c) for c in feature_columns]

        rows, labels, dropped = [], [], 0
        for cells in reader:
            if len(cells) != len(header):
                dropped += 1
                continue
            try:
                rows.append([float(cells[i]) for i in feat_idx])
            except ValueError:
                dropped += 1
                continue
            labels.append(1.0 if cells[label_idx].strip() == positive_label else 0.0)

    if not rows:
        raise DataError(f"{path}: no parseable data rows")
    return RawTable(
        features=np.asarray(rows, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.float64),
        feature_names=list(feature_columns),
        dropped_rows=dropped,
    )


def _unit(v):
    return v / np.linalg.norm(v)


def _orthogonal_unit(rng, d, against):
    v = rng.normal(size=d)
    v = v - against * (v @ against)
    return _unit(v)


def _mixture(spec: ShiftSpec, rng: np.random.Generator):
    """Fixed geometry shared by both domains: means and per-component shifts.

    A component's shift direction decomposes orthogonally as
    ``a * class_axis + sqrt(1-a^2) * (c * shared + sqrt(1-c^2) * own)``
    with a = per-class alignment, c = coherence, and ``shared`` / ``own``
    random axes orthogonal to the class axis.  All three pieces are unit and
    mutually orthogonal, so the direction is exactly unit length and the
    component moves by exactly ``shift``.
    """
    class_axis = _unit(rng.normal(size=spec.d))
    shared = _orthogonal_unit(rng, spec.d, class_axis)

    means = np.empty((2, spec.components, spec.d))
    shifts = np.empty((2, spec.components, spec.d))
    c = spec.shift_coherence
    # jitter scaled so the component offset VECTOR has norm ~ component_spread,
    # independent of d; per-coordinate noise would blow up as sqrt(d)
    jitter_sd = spec.component_spread / np.sqrt(spec.d)
    for cls in (0, 1):
        offset = (cls - 0.5) * spec.class_sep * class_axis
        for j in range(spec.components):
            means[cls, j] = offset + rng.normal(size=spec.d) * jitter_sd
            a = rng.uniform(-spec.shift_class_align, spec.shift_class_align)
            if cls == 1:
                a = np.clip(a + spec.shift_minority_align, -1.0, 1.0)
            own = rng.normal(size=spec.d)
            own -= class_axis * (own @ class_axis)
            own -= shared * (own @ shared)
            own = _unit(own)
            off_axis = c * shared + np.sqrt(max(0.0, 1.0 - c * c)) * own
            direction = a * class_axis + np.sqrt(max(0.0, 1.0 - a * a)) * off_axis
            shifts[cls, j] = spec.shift * direction
    return means, shifts


def _sample_domain(n, prior, means, rng, shifts, cov_scale):
    labels = rng.binomial(1, prior, size=n).astype(np.float64)
    comp = rng.integers(0, means.shape[1], size=n)
    noise = rng.normal(size=(n, means.shape[2]))
    cls = labels.astype(int)
    x = means[cls, comp] + noise * cov_scale
    if shifts is not None:
        x = x + shifts[cls, comp]
    return x, labels


def generate_shifted_domains(spec: ShiftSpec, n_source: int = 25_000,
                             n_target: int = 4_000) -> tuple[RawTable, RawTable]:
    """Draw source and target tables from the same mixture, target shifted."""
    rng = np.random.default_rng(spec.seed)
    means, shifts = _mixture(spec, rng)
    xs, ys = _sample_domain(n_source, spec.pi_source, means, rng, None, 1.0)
    xt, yt = _sample_domain(n_target, spec.pi_target, means, rng,
                            shifts, spec.cov_scale)
    names = [f"f{i:02d}" for i in range(spec.d)]
    return (RawTable(xs, ys, names), RawTable(xt, yt, names))


def bayes_scores(spec: ShiftSpec, x: np.ndarray, domain: str = "source") -> np.ndarray:
    """Posterior P(y=1 | x) under the generating mixture — an oracle for tests."""
    rng = np.random.default_rng(spec.seed)
    means, shifts = _mixture(spec, rng)
    if domain == "target":
        means = means + shifts
        sigma = spec.cov_scale
        prior = spec.pi_target
    else:
        sigma = 1.0
        prior = spec.pi_source
    x = np.asarray(x, dtype=np.float64)

    def class_density(cls):
        # spherical components, uniform component weights
        d2 = ((x[:, None, :] - means[cls][None, :, :]) ** 2).sum(axis=2)
        logs = -d2 / (2.0 * sigma * sigma)
        m = logs.max(axis=1, keepdims=True)
        return np.exp(m).ravel() * np.exp(logs - m).mean(axis=1)

    p1 = prior * class_density(1)
    p0 = (1.0 - prior) * class_density(0)
    return p1 / (p1 + p0)


def make_splits(source_raw: RawTable, target_raw: RawTable,
                source_sample: int = 20_000, target_sample: int = 2_000,
                train_frac: float = 0.8, seed: int = 0) -> DomainDataset:
    """Subsample both domains and build the three-way adaptation dataset.

    The target sample is split ``train_frac`` / rest into unlabeled training
    features and a labeled test set.  Everything is z-scored with statistics
    of the sampled source rows.
    """
    if source_sample > source_raw.n:
        raise DataError(f"source sample {source_sample} exceeds population {source_raw.n}")
    if target_sample > target_raw.n:
        raise DataError(f"target sample {target_sample} exceeds population {target_raw.n}")
    if not 0.0 < train_frac < 1.0:
        raise DataError("train_frac must be in (0, 1)")
    if source_raw.features.shape[1] != target_raw.features.shape[1]:
        raise DataError("source and target feature dimensions differ")

    rng = np.random.default_rng(seed)
    src_idx = np.sort(rng.choice(source_raw.n, size=source_sample, replace=False))
    tgt_idx = rng.choice(target_raw.n, size=target_sample, replace=False)
    n_train = int(round(target_sample * train_frac))
    tgt_train_idx = np.sort(tgt_idx[:n_train])
    tgt_test_idx = np.sort(tgt_idx[n_train:])

    src_x = source_raw.features[src_idx]
    mean = src_x.mean(axis=0)
    sd = src_x.std(axis=0)
    sd = np.where(sd == 0.0, 1.0, sd)

    def norm(x):
        return (x - mean) / sd

    manifest = {
        "seed": seed,
        "source_sample": source_sample,
        "target_sample": target_sample,
        "train_frac": train_frac,
        "source_indices": src_idx.tolist(),
        "target_train_indices": tgt_train_idx.tolist(),
        "target_test_indices": tgt_test_idx.tolist(),
        "normalization": {"mean": mean.tolist(), "sd": sd.tolist()},
    }
    return DomainDataset(
        source_train=LabeledSplit(norm(src_x), source_raw.labels[src_idx]),
        target_train=norm(target_raw.features[tgt_train_idx]),
        target_test=LabeledSplit(norm(target_raw.features[tgt_test_idx]),
                                 target_raw.labels[tgt_test_idx]),
        feature_names=list(source_raw.feature_names),
        norm_mean=mean,
        norm_sd=sd,
        manifest=manifest,
    )


def make_target_baseline(target_raw: RawTable, dataset: DomainDataset) -> LabeledSplit:
    """Labeled view of the target training rows, for the supervised baseline only.

    Uses the indices recorded in the dataset manifest, so the rows are exactly
    the ones adaptation modes see unlabeled, under the same normalization.
    """
    idx = np.asarray(dataset.manifest["target_train_indices"], dtype=np.int64)
    feats = (target_raw.features[idx] - dataset.norm_mean) / dataset.norm_sd
    return LabeledSplit(feats, target_raw.labels[idx])


def save_manifest(dataset: DomainDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataset.manifest, fh, sort_keys=True)
        fh.write("\n")


def rebuild_splits(source_raw: RawTable, target_raw: RawTable, manifest: dict) -> DomainDataset:
    """Reconstruct a dataset bit-exactly from its manifest."""
    rebuilt = make_splits(
        source_raw, target_raw,
        source_sample=manifest["source_sample"],
        target_sample=manifest["target_sample"],
        train_frac=manifest["train_frac"],
        seed=manifest["seed"],
    )
    if rebuilt.manifest["source_indices"] != manifest["source_indices"]:
        raise DataError("manifest does not match the provided raw tables")
    return rebuilt


def batch_iter(partition, batch_size: int, seed: int, epoch: int):
    """Deterministic shuffled minibatches; a trailing batch of 1 is dropped.

    ``partition`` is a LabeledSplit (yields LabeledSplit batches) or a bare
    feature array (yields arrays).  Order depends only on (seed, epoch).
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if isinstance(partition, LabeledSplit):
        n = partition.n
    else:
        n = partition.shape[0]
    order = np.random.default_rng([seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if idx.size < 2:
            continue
        if isinstance(partition, LabeledSplit):
            yield LabeledSplit(partition.features[idx], partition.labels[idx])
        else:
            yield partition[idx]


def write_csv(table: RawTable, path, label_column: str = "label") -> None:
    """Write a raw table back out; floats use repr for exact round-trips."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(table.feature_names + [label_column]) + "\n")
        for row, label in zip(table.features, table.labels):
            cells = [repr(float(v)) for v in row] + [str(int(label))]
            fh.write(",".join(cells) + "\n")


__all__ = [
    "DataError", "LabeledSplit", "RawTable", "DomainDataset", "ShiftSpec",
    "load_csv", "generate_shifted_domains", "bayes_scores", "make_splits",
    "make_target_baseline", "save_manifest", "rebuild_splits", "batch_iter",
    "write_csv",
]
