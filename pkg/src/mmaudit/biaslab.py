"""Synthetic bias laboratory.

Generates multimodal toy worlds with a planted underperforming group, the
three training-set bias injectors (spurious correlation, rare slice, label
noise) with their realized-strength metrics, and the validity filter that
decides whether a simulated failure model is usable.

Convention: the planted group is ``label == target_class`` and ``attr == 1``.
For spurious correlation the attribute is correlated with the *other* class,
which is what makes target-class samples carrying it fail.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import Dataset

KINDS = ("spurious_correlation", "rare_slice", "noisy_label")

FILLER_TOKENS = (
    "chest radiograph lungs heart mediastinum silhouette contour pleural "
    "hilar vascular markings osseous structures interval stable unchanged "
    "size upper lower zone basilar atelectasis costophrenic angle aorta "
    "trachea midline diaphragm soft tissue"
).split()
CLASS_TOKENS = {0: "clear", 1: "opacity"}
# sprinkled into report text so tokenization has something to drop
_GLUE = ("the", "is", "of", "and", "there", "with")


class InfeasibleError(ValueError):
    pass


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


@dataclass(frozen=True)
class BiasSpec:
    kind: str = "spurious_correlation"
    target_class: int = 1
    attr: str = "device"
    strength: float = 0.7
    train_size: int = 1000
    test_size: int = 300
    test_underperforming_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown bias kind {self.kind!r}")
        if self.target_class not in (0, 1):
            raise ValueError("target_class must be 0 or 1")
        s = self.strength
        ok = {
            "spurious_correlation": -1 < s < 1,
            "noisy_label": 0 <= s <= 1,
            "rare_slice": 0 < s <= 1,
        }[self.kind]
        if not ok:
            raise ValueError(f"strength {s} out of range for {self.kind}")
        if not 0 < self.test_underperforming_fraction < 1:
            raise ValueError("test_underperforming_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class SynthWorldSpec:
    n_attrs: int = 3
    dims: dict = field(default_factory=lambda: {"img": 32, "txt": 16, "meta": 8})
    cluster_separation: float = 3.0
    marker_tokens: dict = field(
        default_factory=lambda: {"device": "tube", "lateral": "lateral", "portable": "portable"}
    )
    base_error: float = 0.05
    group_error: float = 0.6
    # modalities whose embedding carries the class signal; others see attributes only
    class_modalities: tuple = ("img", "txt")
    n_filler: int = 6
    pool_factor: int = 4

    def __post_init__(self):
        object.__setattr__(self, "class_modalities", tuple(self.class_modalities))
        if not (0 <= self.base_error <= 1 and 0 <= self.group_error <= 1):
            raise ValueError("error rates must lie in [0, 1]")
        # equality is allowed so a no-gap control world can be built
        if self.group_error < self.base_error:
            raise ValueError("group_error must not be below base_error")
        if self.n_attrs < len(self.marker_tokens):
            raise ValueError("n_attrs smaller than the number of named markers")

    @property
    def attr_names(self) -> list[str]:
        names = list(self.marker_tokens)
        return names + [f"attr{i}" for i in range(len(names), self.n_attrs)]

    def marker(self, attr: str) -> str:
        return self.marker_tokens.get(attr, f"marker{self.attr_names.index(attr)}")


def to_config(spec) -> dict:
    d = asdict(spec)
    if "class_modalities" in d:
        d["class_modalities"] = list(d["class_modalities"])
    return d


# --------------------------------------------------------------------------
# bias metrics


def phi_correlation(y, attr) -> float:
    """Pearson correlation of two binary vectors (the phi coefficient)."""
    y = np.asarray(y, dtype=np.int64)
    a = np.asarray(attr, dtype=np.int64)
    if y.min() == y.max() or a.min() == a.max():
        raise ValueError("zero variance")
    n11 = int(np.sum((y == 1) & (a == 1)))
    n10 = int(np.sum((y == 1) & (a == 0)))
    n01 = int(np.sum((y == 0) & (a == 1)))
    n00 = int(np.sum((y == 0) & (a == 0)))
    return _phi_from_cells(n11, n10, n01, n00)


def _phi_from_cells(n11, n10, n01, n00) -> float:
    denom = math.sqrt((n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00))
    return (n11 * n00 - n10 * n01) / denom


def noise_rate(dataset: Dataset, spec: BiasSpec) -> float:
    """Flipped share of the (target_class, attr) group, judged on pre-flip labels."""
    flipped = dataset.tag("flipped")
    original = dataset.labels ^ flipped
    group = (original == spec.target_class) & (dataset.tag(spec.attr) == 1)
    return float(flipped[group].sum() / group.sum())


def rarity(dataset: Dataset, spec: BiasSpec) -> float:
    in_class = dataset.labels == spec.target_class
    return float((in_class & (dataset.tag(spec.attr) == 1)).sum() / in_class.sum())


def realized_strength(train: Dataset, spec: BiasSpec) -> float:
    if spec.kind == "spurious_correlation":
        return phi_correlation((train.labels != spec.target_class).astype(int), train.tag(spec.attr))
    if spec.kind == "rare_slice":
        return rarity(train, spec)
    return noise_rate(train, spec)


# --------------------------------------------------------------------------
# injectors


def _cells(labels, tag):
    return {(c, a): np.flatnonzero((labels == c) & (tag == a)) for c in (0, 1) for a in (0, 1)}


def _draw(rng, cells, counts) -> np.ndarray:
    picks = []
    for key in sorted(counts):
        pool = cells[key]
        if counts[key] > len(pool):
            raise InfeasibleError(f"cell {key} needs {counts[key]} samples, pool has {len(pool)}")
        picks.append(rng.choice(pool, size=counts[key], replace=False))
    return rng.permutation(np.concatenate(picks).astype(np.int64))


def inject_spurious_correlation(pool: Dataset, spec: BiasSpec, seed: int) -> Dataset:
    """Subsample ``pool`` so that phi(label != target_class, attr) hits ``spec.strength``.

    Both marginals are balanced. Under balanced marginals
    phi = 4 * n11 / n - 1, so the exact solution is rounded and the nearest
    feasible integer table (given pool cell sizes) is used.
    """
    n = spec.train_size
    corr = (pool.labels != spec.target_class).astype(np.int64)
    cells = _cells(corr, pool.tag(spec.attr))
    n_c1 = n // 2
    n_a1 = n // 2
    lo, hi = max(0, n_c1 + n_a1 - n), min(n_c1, n_a1)
    ideal = n * (1 + spec.strength) / 4
    best = None
    for n11 in sorted(range(lo, hi + 1), key=lambda v: (abs(v - ideal), v)):
        counts = {(1, 1): n11, (1, 0): n_c1 - n11, (0, 1): n_a1 - n11, (0, 0): n - n_c1 - n_a1 + n11}
        if all(counts[k] <= len(cells[k]) for k in counts) and min(counts.values()) >= 0:
            best = counts
            break
    if best is None:
        raise InfeasibleError("no feasible cell table in pool")
    try:
        realized = _phi_from_cells(best[1, 1], best[1, 0], best[0, 1], best[0, 0])
    except ZeroDivisionError:
        raise InfeasibleError("degenerate cell table") from None
    if abs(realized - spec.strength) > 0.05:
        raise InfeasibleError(f"closest feasible phi {realized:.3f} misses target {spec.strength}")
    return pool.subset(_draw(np.random.default_rng(seed), cells, best))


def inject_rare_slice(pool: Dataset, spec: BiasSpec, seed: int) -> Dataset:
    """Subsample with the target cell holding round(R * |D_Y|) of the target class.

    Classes are balanced; the other class keeps the pool's attribute mix.
    """
    tag = pool.tag(spec.attr)
    cells = _cells(pool.labels, tag)
    t = spec.target_class
    n_t = spec.train_size // 2
    n_o = spec.train_size - n_t
    if len(cells[t, 1]) == 0:
        raise InfeasibleError("pool has no samples in the target cell")
    n_rare = round_half_up(spec.strength * n_t)
    other = pool.labels == 1 - t
    share = tag[other].mean() if other.any() else 0.0
    n_o1 = round_half_up(n_o * share)
    counts = {(t, 1): n_rare, (t, 0): n_t - n_rare, (1 - t, 1): n_o1, (1 - t, 0): n_o - n_o1}
    return pool.subset(_draw(np.random.default_rng(seed), cells, counts))


def inject_label_noise(dataset: Dataset, spec: BiasSpec, seed: int) -> Dataset:
    """Flip exactly round(rate * |group|) labels inside the (target_class, attr) group.

    The flip set is recorded as group tag ``flipped``.
    """
    group = np.flatnonzero((dataset.labels == spec.target_class) & (dataset.tag(spec.attr) == 1))
    n_flip = round_half_up(spec.strength * len(group))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(group, size=n_flip, replace=False)) if n_flip else np.array([], dtype=int)
    flipped = np.zeros(len(dataset), dtype=np.int64)
    flipped[chosen] = 1
    tags = dict(dataset.group_tags)
    tags["flipped"] = flipped
    return dataset.replace(labels=dataset.labels ^ flipped, group_tags=tags)


def balanced_subsample(pool: Dataset, size: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    n1 = size // 2
    idx = np.concatenate(
        [
            rng.choice(np.flatnonzero(pool.labels == 1), n1, replace=False),
            rng.choice(np.flatnonzero(pool.labels == 0), size - n1, replace=False),
        ]
    )
    return pool.subset(rng.permutation(idx))


def inject(pool: Dataset, spec: BiasSpec, seed: int) -> Dataset:
    if spec.kind == "spurious_correlation":
        return inject_spurious_correlation(pool, spec, seed)
    if spec.kind == "rare_slice":
        return inject_rare_slice(pool, spec, seed)
    return inject_label_noise(balanced_subsample(pool, spec.train_size, seed), spec, seed)


# --------------------------------------------------------------------------
# world generation


def _directions(world: SynthWorldSpec, seed: int) -> dict[str, dict[str, np.ndarray]]:
    """Per modality: a unit class direction (or zeros) and one unit direction per attribute."""
    rng = np.random.default_rng([seed, 1])
    out = {}
    for m, d in world.dims.items():
        vecs = rng.standard_normal((world.n_attrs + 1, d))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        dirs = {"__class__": vecs[0] if m in world.class_modalities else np.zeros(d)}
        dirs.update({a: vecs[i + 1] for i, a in enumerate(world.attr_names)})
        out[m] = dirs
    return out


def _texts(rng, world, labels, attr_mat) -> tuple[list[str], list[dict]]:
    """Report text and metadata record for every sample."""
    n = len(labels)
    markers = [world.marker(a) for a in world.attr_names]
    filler = np.array(FILLER_TOKENS)[rng.integers(len(FILLER_TOKENS), size=(n, world.n_filler))].tolist()
    has_class = (rng.random(n) < 0.8).tolist()
    keys = rng.random((n, world.n_filler + 1 + len(markers))).argsort(axis=1).tolist()
    glue = np.array(_GLUE)[rng.integers(len(_GLUE), size=(n, world.n_filler + 1 + len(markers)))].tolist()
    sites = np.array(["north", "south", "east"])[rng.integers(3, size=n)].tolist()
    flags = attr_mat.tolist()
    reports, metas = [], []
    for i in range(n):
        words = filler[i] + ([CLASS_TOKENS[int(labels[i])]] if has_class[i] else [])
        words += [m for m, on in zip(markers, flags[i]) if on]
        order = [k for k in keys[i] if k < len(words)]
        reports.append(" ".join(f"{glue[i][j]} {words[k]}" for j, k in enumerate(order)).capitalize() + ".")
        # keys are anonymous so they never collide with marker tokens
        meta = {f"Tag{j}": "present" if on else "absent" for j, on in enumerate(flags[i])}
        meta["Site"] = sites[i]
        metas.append(meta)
    return reports, metas


def _make(world, dirs, rng, labels, attr_mat, prefix, err_prob=None) -> Dataset:
    n = len(labels)
    names = world.attr_names
    sep = world.cluster_separation
    views = {}
    for m, d in world.dims.items():
        shift = labels[:, None] * dirs[m]["__class__"][None, :]
        for j, a in enumerate(names):
            shift = shift + attr_mat[:, j : j + 1] * dirs[m][a][None, :]
        views[m] = sep * shift + rng.standard_normal((n, d))
    if err_prob is None:
        preds = labels.copy()
    else:
        preds = labels ^ (rng.random(n) < err_prob).astype(np.int64)
    reports, metas = _texts(rng, world, labels, attr_mat)
    return Dataset(
        ids=tuple(f"{prefix}{i:05d}" for i in range(n)),
        views=views,
        labels=labels,
        predictions=preds,
        reports=tuple(reports),
        metadata=tuple(metas),
        group_tags={a: attr_mat[:, j] for j, a in enumerate(names)},
    )


def _attr_matrix(rng, world, bias_attr, attr_values):
    mat = (rng.random((len(attr_values), world.n_attrs)) < 0.5).astype(np.int64)
    mat[:, world.attr_names.index(bias_attr)] = attr_values
    return mat


def _cell_layout(counts: dict, rng) -> tuple[np.ndarray, np.ndarray]:
    labels = np.concatenate([np.full(n, c) for (c, a), n in sorted(counts.items())]).astype(np.int64)
    attrs = np.concatenate([np.full(n, a) for (c, a), n in sorted(counts.items())]).astype(np.int64)
    order = rng.permutation(len(labels))
    return labels[order], attrs[order]


def test_cell_counts(bias: BiasSpec) -> dict:
    """Planted cell gets round(fraction * test_size); the rest is split evenly."""
    t = bias.target_class
    n_planted = round_half_up(bias.test_underperforming_fraction * bias.test_size)
    rest = bias.test_size - n_planted
    others = [(t, 0), (1 - t, 1), (1 - t, 0)]
    counts = {(t, 1): n_planted}
    for i, key in enumerate(others):
        counts[key] = rest // 3 + (1 if i < rest % 3 else 0)
    return counts


def synth_world(world: SynthWorldSpec, bias: BiasSpec, seed: int) -> tuple[Dataset, Dataset]:
    """Biased training set plus a test set scored by a simulated classifier.

    The test classifier errs with probability ``group_error`` on the planted
    group and ``base_error`` elsewhere.
    """
    if bias.attr not in world.attr_names:
        raise ValueError(f"bias attribute {bias.attr!r} not among world attributes {world.attr_names}")
    if bias.test_size < 4 or bias.train_size < 4:
        raise InfeasibleError("train and test sizes must be at least 4")
    dirs = _directions(world, seed)
    rng = np.random.default_rng([seed, 3])

    per_cell = world.pool_factor * bias.train_size // 4
    labels, a = _cell_layout({(c, v): per_cell for c in (0, 1) for v in (0, 1)}, rng)
    pool = _make(world, dirs, rng, labels, _attr_matrix(rng, world, bias.attr, a), "tr")
    train = inject(pool, bias, seed)

    labels, a = _cell_layout(test_cell_counts(bias), rng)
    planted = (labels == bias.target_class) & (a == 1)
    err_prob = np.where(planted, world.group_error, world.base_error)
    test = _make(world, dirs, rng, labels, _attr_matrix(rng, world, bias.attr, a), "te", err_prob)
    return train, test


def token_table(world: SynthWorldSpec, seed: int, modality: str = "img") -> dict[str, np.ndarray]:
    """Text-side embeddings aligned with ``modality`` of the world built from ``seed``.

    Marker tokens point (noisily) along their attribute's direction; every
    other token gets a random vector.
    """
    dirs = _directions(world, seed)[modality]
    rng = np.random.default_rng([seed, 2])
    d = world.dims[modality]
    table = {}
    for a in world.attr_names:
        v = dirs[a] + 0.3 * rng.standard_normal(d) / math.sqrt(d)
        table[world.marker(a)] = v
    for tok in list(FILLER_TOKENS) + list(CLASS_TOKENS.values()):
        table.setdefault(tok, rng.standard_normal(d))
    return table


def planted_mask(dataset: Dataset, bias: BiasSpec) -> np.ndarray:
    return ((dataset.labels == bias.target_class) & (dataset.tag(bias.attr) == 1)).astype(np.int64)


def accuracy_gap(dataset: Dataset, attr: str) -> float:
    """accuracy(attr = 0) - accuracy(attr = 1)."""
    tag = dataset.tag(attr)
    correct = dataset.labels == dataset.predictions
    if tag.all() or not tag.any():
        return 0.0
    return float(correct[tag == 0].mean() - correct[tag == 1].mean())


def validity_check(dataset: Dataset, attr: str, min_gap: float = 0.10) -> bool:
    """True when samples with ``attr`` trail the rest by at least ``min_gap`` accuracy."""
    return accuracy_gap(dataset, attr) >= min_gap - 1e-12
