"""Dataset ingestion, synthetic benchmarks and text serialization.

AVA metadata layout (one image per line, 15 whitespace-separated integers)::

    index  image_id  c1 c2 ... c10  semantic_tag_1  semantic_tag_2  challenge_id

where ``c_k`` is the number of votes for score k.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .histogram import (
    DEFAULT_SCALE,
    RatingScale,
    RatingSet,
    ScoreHistogram,
    distribution_stats,
    histogram_from_ratings,
)
from .predictor import PredictorConfig, PredictorParams

AVA_FIELDS = 15
SAMPLES_HEADER = "# scoredist-samples v1"
CHECKPOINT_MAGIC = "scoredist-checkpoint"
CHECKPOINT_VERSION = 1


class DataFormatError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# AVA metadata


@dataclass(frozen=True)
class AvaRecord:
    record_id: int
    image_id: int
    rating_counts: tuple[int, ...]
    semantic_tag_ids: tuple[int, int]
    challenge_id: int

    @property
    def num_ratings(self) -> int:
        return sum(self.rating_counts)


@dataclass
class AvaParseResult:
    records: list[AvaRecord] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)


def _open_text(source) -> tuple[TextIO, bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8"), True
    return source, False


def parse_ava_line(line: str) -> AvaRecord:
    fields = line.split()
    if len(fields) != AVA_FIELDS:
        raise DataFormatError(f"expected {AVA_FIELDS} fields, found {len(fields)}")
    try:
        values = [int(f) for f in fields]
    except ValueError:
        raise DataFormatError("non-integer field") from None
    counts = tuple(values[2:12])
    if any(c < 0 for c in counts):
        raise DataFormatError("negative vote count")
    return AvaRecord(values[0], values[1], counts, (values[12], values[13]), values[14])


def iter_ava_metadata(source, strict: bool = False, errors: list | None = None):
    """Yield records one line at a time; bad lines go to ``errors`` unless strict."""
    stream, owned = _open_text(source)
    try:
        for lineno, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            try:
                yield parse_ava_line(line)
            except DataFormatError as exc:
                if strict:
                    raise DataFormatError(f"line {lineno}: {exc}") from None
                if errors is not None:
                    errors.append((lineno, str(exc)))
    finally:
        if owned:
            stream.close()


def parse_ava_metadata(source, strict: bool = False) -> AvaParseResult:
    result = AvaParseResult()
    result.records = list(iter_ava_metadata(source, strict=strict, errors=result.errors))
    return result


# ---------------------------------------------------------------------------
# samples


@dataclass(eq=False)
class Sample:
    features: np.ndarray
    target: ScoreHistogram
    rating_count: int
    source_id: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.rating_count < 1:
            raise ValueError("rating count must be at least 1")

    @property
    def degenerate(self) -> bool:
        return self.target.is_degenerate


def stats_features(hist: ScoreHistogram, rating_count: int) -> np.ndarray:
    """Features computed from the label itself. Leaks the target: smoke tests only."""
    st = distribution_stats(hist)
    skew = st.skewness if st.skewness is not None else 0.0
    kurt = st.kurtosis - 3.0 if st.kurtosis is not None else 0.0
    return np.array([st.mean, st.std, skew, kurt, rating_count / 210.0])


def records_to_samples(
    records: Iterable[AvaRecord],
    feature_source: Mapping[int, Sequence[float]] | str = "stats",
    strict: bool = False,
) -> tuple[list[Sample], int]:
    """Turn AVA records into samples; returns the samples and the number skipped.

    ``feature_source`` is a mapping from image id to feature vector, or the
    string ``"stats"`` for label-derived features.
    """
    samples, skipped = [], 0
    for rec in records:
        if rec.num_ratings == 0:
            skipped += 1
            continue
        target = histogram_from_ratings(RatingSet(rec.rating_counts))
        if isinstance(feature_source, str):
            if feature_source != "stats":
                raise ValueError(f"unknown feature source {feature_source!r}")
            feats = stats_features(target, rec.num_ratings)
        else:
            feats = feature_source.get(rec.image_id)
            if feats is None:
                if strict:
                    raise KeyError(f"no features for image {rec.image_id}")
                skipped += 1
                continue
        samples.append(Sample(np.asarray(feats, dtype=np.float64), target, rec.num_ratings, rec.image_id))
    return samples, skipped


def load_feature_table(path) -> dict[int, np.ndarray]:
    """Whitespace table: image_id followed by the feature values."""
    table = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                table[int(parts[0])] = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise DataFormatError(f"line {lineno}: malformed feature row") from None
    return table


def load_id_list(path) -> set[int]:
    with open(path, "r", encoding="utf-8") as fh:
        return {int(tok) for line in fh for tok in line.split()[:1]}


def split_by_ids(samples: Sequence[Sample], train_ids: set[int], test_ids: set[int]):
    train = [s for s in samples if s.source_id in train_ids]
    test = [s for s in samples if s.source_id in test_ids]
    return train, test


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def format_sample(sample: Sample, index: int) -> str:
    sid = sample.source_id if sample.source_id is not None else index
    return " ".join(
        [str(sid), str(sample.rating_count)]
        + [_fmt(p) for p in sample.target.probs]
        + [str(sample.features.size)]
        + [_fmt(f) for f in sample.features]
    )


def write_samples(path_or_stream, samples: Sequence[Sample]) -> None:
    num_bins = samples[0].target.scale.num_levels if samples else DEFAULT_SCALE.num_levels
    lines = [f"{SAMPLES_HEADER} bins={num_bins}"]
    lines += [format_sample(s, i) for i, s in enumerate(samples)]
    text = "\n".join(lines) + "\n"
    if isinstance(path_or_stream, (str, os.PathLike)):
        with open(path_or_stream, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        path_or_stream.write(text)


def read_samples(source) -> list[Sample]:
    stream, owned = _open_text(source)
    try:
        header = stream.readline().strip()
        if not header.startswith(SAMPLES_HEADER):
            raise DataFormatError("not a scoredist sample file (bad header)")
        try:
            num_bins = int(header.split("bins=")[1])
        except (IndexError, ValueError):
            raise DataFormatError("sample header lacks bins=<Z>") from None
        scale = DEFAULT_SCALE if num_bins == DEFAULT_SCALE.num_levels else RatingScale.integer(num_bins)
        samples = []
        for lineno, line in enumerate(stream, start=2):
            parts = line.split()
            if not parts:
                continue
            try:
                sid, count = int(parts[0]), int(parts[1])
                probs = [float(v) for v in parts[2 : 2 + num_bins]]
                dim = int(parts[2 + num_bins])
                feats = [float(v) for v in parts[3 + num_bins :]]
            except (ValueError, IndexError):
                raise DataFormatError(f"line {lineno}: malformed sample") from None
            if len(probs) != num_bins or len(feats) != dim:
                raise DataFormatError(f"line {lineno}: field count does not match header")
            samples.append(Sample(np.array(feats), ScoreHistogram(np.array(probs), scale), count, sid))
        return samples
    finally:
        if owned:
            stream.close()


def dataset_digest(samples: Sequence[Sample]) -> str:
    buf = io.StringIO()
    write_samples(buf, samples)
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()


def save_dataset(directory, train: Sequence[Sample], test: Sequence[Sample]) -> None:
    os.makedirs(directory, exist_ok=True)
    write_samples(os.path.join(directory, "train.txt"), train)
    write_samples(os.path.join(directory, "test.txt"), test)


def load_dataset(directory) -> tuple[list[Sample], list[Sample]]:
    return (
        read_samples(os.path.join(directory, "train.txt")),
        read_samples(os.path.join(directory, "test.txt")),
    )


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Synthetic benchmark settings.

    ``corrupt_fraction`` replaces that share of *training* targets with
    heavy-tailed histograms (see :func:`heavy_tailed_corruption`); test
    targets are never corrupted.
    """

    n_samples: int = 2000
    feature_dim: int = 16
    fraction_skewed: float = 0.38
    rating_count_range: tuple[int, int] = (78, 549)
    label_noise: float = 0.0
    corrupt_fraction: float = 0.0
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rating_count_range", tuple(int(v) for v in self.rating_count_range))
        lo, hi = self.rating_count_range
        if self.n_samples < 2:
            raise ValueError("need at least 2 samples for a train/test split")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if not 0.0 <= self.fraction_skewed <= 1.0:
            raise ValueError("fraction_skewed must lie in [0, 1]")
        if not 1 <= lo <= hi:
            raise ValueError("rating_count_range must satisfy 1 <= low <= high")
        if self.label_noise < 0:
            raise ValueError("label_noise must be non-negative")
        if not 0.0 <= self.corrupt_fraction <= 1.0:
            raise ValueError("corrupt_fraction must lie in [0, 1]")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "feature_dim": self.feature_dim,
            "fraction_skewed": self.fraction_skewed,
            "rating_count_range": list(self.rating_count_range),
            "label_noise": self.label_noise,
            "corrupt_fraction": self.corrupt_fraction,
            "test_fraction": self.test_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticSpec":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        extra = set(d) - set(known)
        if extra:
            raise ValueError(f"unknown synthetic spec fields: {sorted(extra)}")
        return cls(**known)


_GRID = 64  # quadrature points per unit of rating


def discretized_distribution(loc, spread, skew, num_bins: int = 10) -> np.ndarray:
    """Bin a unimodal density with given mean, std and skewness onto levels 1..Z.

    ``skew == 0`` gives a Gaussian; otherwise a (possibly mirrored) Gamma with
    shape ``(2 / skew)**2``. Mass beyond the scale is folded into the end bins.
    Arguments broadcast; the result has a trailing axis of length ``num_bins``.
    """
    loc, spread, skew = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (loc, spread, skew))
    )
    half_width = 8.0
    # cell midpoints: symmetric about 0 and clear of the half-integer bin edges
    n_cells = int(2 * half_width * _GRID)
    t = -half_width + (np.arange(n_cells) + 0.5) / _GRID
    z = t[(None,) * loc.ndim]
    s = np.abs(skew)[..., None]
    sign = np.where(skew < 0, -1.0, 1.0)[..., None]

    gauss = np.exp(-0.5 * z * z)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        k = np.where(s > 0, 4.0 / np.maximum(s, 1e-12) ** 2, 1.0)
        # standardized gamma: x = k + sqrt(k) * z must be positive
        x = k + np.sqrt(k) * (sign * z)
        log_pdf = (k - 1.0) * np.log(np.where(x > 0, x, 1.0)) - x
        log_pdf = np.where(x > 0, log_pdf, -np.inf)
        log_pdf -= np.max(log_pdf, axis=-1, keepdims=True)
        gamma = np.exp(log_pdf)
    dens = np.where(s > 1e-6, gamma, gauss)

    values = loc[..., None] + spread[..., None] * z
    bins = np.clip(np.rint(values), 1, num_bins).astype(int) - 1
    out = np.zeros(loc.shape + (num_bins,))
    flat_out = out.reshape(-1, num_bins)
    flat_bins = bins.reshape(-1, t.size)
    flat_dens = dens.reshape(-1, t.size)
    for row in range(flat_out.shape[0]):
        flat_out[row] = np.bincount(flat_bins[row], weights=flat_dens[row], minlength=num_bins)
    out = flat_out.reshape(out.shape)
    return out / out.sum(axis=-1, keepdims=True)


def heavy_tailed_corruption(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """A misplaced spike over a flat floor: kurtosis well away from 3.

    The spike lands at least 3 bins from the true mode, so the corrupted
    label disagrees with what the features predict.
    """
    z = probs.size
    mode = int(np.argmax(probs))
    far = [i for i in range(z) if abs(i - mode) >= 3]
    w = rng.uniform(0.6, 0.85)
    out = np.full(z, (1.0 - w) / z)
    out[far[rng.integers(len(far))]] += w
    return out


def _sample_histogram(probs: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    votes = rng.multinomial(count, probs / probs.sum())
    return votes / count


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[Sample], list[Sample]]:
    """Draw a learnable benchmark: features are a fixed embedding of the latent shape.

    Returns (train, test) split by a seeded shuffle.
    """
    rng = np.random.default_rng(spec.seed)
    n, num_bins = spec.n_samples, DEFAULT_SCALE.num_levels
    loc = rng.uniform(3.0, 8.0, n)
    spread = rng.uniform(1.0, 2.0, n)
    skewed = rng.random(n) < spec.fraction_skewed
    magnitude = rng.uniform(0.4, 1.2, n)
    # right tails for low means, left tails for high means
    direction = np.where(loc < 5.5, 1.0, -1.0)
    skew = np.where(skewed, direction * magnitude, 0.0)
    true_probs = discretized_distribution(loc, spread, skew, num_bins)

    lo, hi = spec.rating_count_range
    counts = rng.integers(lo, hi + 1, n)

    latents = np.stack([(loc - 5.5) / 1.5, (spread - 1.5) / 0.3, skew / 0.8], axis=1)
    embed = rng.normal(0.0, 1.0 / np.sqrt(latents.shape[1]), (latents.shape[1], spec.feature_dim))
    features = latents @ embed + spec.label_noise * rng.standard_normal((n, spec.feature_dim))

    order = rng.permutation(n)
    n_test = max(1, int(round(spec.test_fraction * n)))
    test_idx = set(order[:n_test].tolist())

    train, test = [], []
    for i in range(n):
        probs = true_probs[i]
        is_test = i in test_idx
        if not is_test and spec.corrupt_fraction > 0 and rng.random() < spec.corrupt_fraction:
            probs = heavy_tailed_corruption(probs, rng)
        target = ScoreHistogram(_sample_histogram(probs, int(counts[i]), rng))
        s = Sample(features[i], target, int(counts[i]), i)
        (test if is_test else train).append(s)
    # keep the shuffled order so that file order carries no latent structure
    rank = {int(idx): r for r, idx in enumerate(order)}
    train.sort(key=lambda s: rank[s.source_id])
    test.sort(key=lambda s: rank[s.source_id])
    return train, test


def generate_population_counts(
    n: int = 5000, seed: int = 0, skew_slope: float = 0.35, count_range=(78, 549)
) -> np.ndarray:
    """Vote counts (n, 10) whose skewness falls as the mean rises.

    Low-mean histograms lean right, high-mean ones lean left, with the
    crossover at the scale midpoint.
    """
    rng = np.random.default_rng(seed)
    # keep means clear of the scale ends, where folding
    # mass into the end levels flattens the injected skew
    loc = rng.uniform(2.5, 8.5, n)
    spread = rng.uniform(0.9, 1.8, n)
    skew = np.clip(skew_slope * (5.5 - loc) + rng.normal(0.0, 0.1, n), -1.6, 1.6)
    probs = discretized_distribution(loc, spread, skew)
    counts = rng.integers(count_range[0], count_range[1] + 1, n)
    return np.stack([rng.multinomial(int(c), p / p.sum()) for c, p in zip(counts, probs)])


def generate_population(n: int = 5000, seed: int = 0, **kwargs) -> list[ScoreHistogram]:
    return [
        histogram_from_ratings(RatingSet(tuple(row)))
        for row in generate_population_counts(n, seed, **kwargs).tolist()
    ]


def format_ava_line(record_id: int, image_id: int, counts: Sequence[int], tags=(0, 0), challenge: int = 0) -> str:
    return " ".join(str(int(v)) for v in [record_id, image_id, *counts, *tags, challenge])


def write_ava_metadata(path, count_rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(count_rows, start=1):
            fh.write(format_ava_line(i, 100000 + i, row) + "\n")


# ---------------------------------------------------------------------------
# checkpoints


def _checkpoint_body(params: PredictorParams) -> list[str]:
    lines = [f"layers {len(params.weights)}"]
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"W {k} {w.shape[0]} {w.shape[1]}")
        lines += [" ".join(_fmt(v) for v in row) for row in w.tolist()]
        lines.append(f"b {k} {b.size}")
        lines.append(" ".join(_fmt(v) for v in b.tolist()))
    lines.append("end")
    return lines


def _digest(lines: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def save_checkpoint(path, params: PredictorParams, manifest: Mapping | None = None) -> None:
    head = [
        f"config {json.dumps(params.config.to_dict(), sort_keys=True)}",
        f"seed {params.config.seed}",
        f"manifest {json.dumps(dict(manifest or {}), sort_keys=True)}",
    ]
    body = _checkpoint_body(params)
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", *head, f"digest {_digest(head + body)}", *body]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path, expected_config: PredictorConfig | None = None, with_manifest: bool = False):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises :class:`CheckpointError` on a version, digest or shape problem.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a scoredist checkpoint")
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise CheckpointError("unreadable checkpoint version") from None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported")
    if len(lines) < 6 or not lines[4].startswith("digest "):
        raise CheckpointError("truncated checkpoint header")
    head, digest, body = lines[1:4], lines[4].split()[1], lines[5:]
    if not body or body[-1] != "end":
        raise CheckpointError("truncated checkpoint: missing end marker")
    if _digest(head + body) != digest:
        raise CheckpointError("digest check failed: checkpoint is corrupted")

    config = PredictorConfig.from_dict(json.loads(head[0].split(" ", 1)[1]))
    manifest = json.loads(head[2].split(" ", 1)[1])
    if expected_config is not None and expected_config.layer_dims != config.layer_dims:
        raise CheckpointError(
            f"shape mismatch: checkpoint layers {config.layer_dims} vs expected {expected_config.layer_dims}"
        )

    weights, biases = [], []
    pos = 1
    try:
        n_layers = int(body[0].split()[1])
        for k in range(n_layers):
            _, _, rows, cols = body[pos].split()
            rows, cols = int(rows), int(cols)
            w = np.array([[float(v) for v in body[pos + 1 + r].split()] for r in range(rows)])
            pos += 1 + rows
            size = int(body[pos].split()[2])
            b = np.array([float(v) for v in body[pos + 1].split()])
            pos += 2
            if w.shape != (rows, cols) or b.shape != (size,):
                raise CheckpointError(f"layer {k}: stored values do not match declared shape")
            weights.append(w)
            biases.append(b)
    except (IndexError, ValueError) as exc:
        raise CheckpointError(f"truncated or malformed layer block: {exc}") from None

    expected = config.layer_dims
    shapes = [w.shape for w in weights]
    if shapes != list(zip(expected[:-1], expected[1:])):
        raise CheckpointError(f"shape mismatch: layers {shapes} do not match config {expected}")
    params = PredictorParams(config, weights, biases)
    return (params, manifest) if with_manifest else params
