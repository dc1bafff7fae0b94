"""Dataset loading, report tokenization and metadata textualization.

A dataset is held column-wise: one embedding matrix per modality, label and
prediction vectors, optional report text and metadata per sample, and
optional binary ground-truth attribute tags used by the benchmark code.
"""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

# Compact English list; callers extend it through the `stopwords` config key.
STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because
    been before being below between both but by can could did do does doing
    down during each few for from further had has have having he her here hers
    herself him himself his how i if in into is it its itself just me more most
    my myself no nor not now of off on once only or other our ours ourselves
    out over own same she should so some such than that the their theirs them
    themselves then there these they this those through to too under until up
    very was we were what when where which while who whom why will with would
    you your yours yourself yourselves
    """.split()
)

_NON_TOKEN = re.compile(r"[^a-z0-9-]+")
_CAMEL_1 = re.compile(r"(.)([A-Z][a-z]+)")
_CAMEL_2 = re.compile(r"([a-z0-9])([A-Z])")


class DatasetError(ValueError):
    """Raised when dataset files are missing or inconsistent."""


@dataclass(frozen=True)
class Sample:
    id: str
    views: Mapping[str, np.ndarray]
    label: int
    prediction: int
    report_text: str | None = None
    metadata: Mapping[str, str] | None = None
    group_tags: Mapping[str, int] | None = None


@dataclass(frozen=True)
class TokenDoc:
    sample_id: str
    tokens: list[str]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented, immutable collection of samples.

    ``views`` maps modality name to an ``(N, d)`` float array; ``group_tags``
    maps attribute name to an ``(N,)`` 0/1 array.
    """

    ids: tuple[str, ...]
    views: Mapping[str, np.ndarray]
    labels: np.ndarray
    predictions: np.ndarray
    reports: tuple[str | None, ...] = ()
    metadata: tuple[Mapping[str, str] | None, ...] = ()
    group_tags: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.ids)
        if n == 0:
            raise DatasetError("dataset is empty")
        if len(set(self.ids)) != n:
            seen = set()
            dup = next(i for i in self.ids if i in seen or seen.add(i))
            raise DatasetError(f"duplicate sample id {dup!r}")
        views = {}
        for name, mat in self.views.items():
            mat = np.array(mat, dtype=np.float64)
            if mat.ndim != 2 or mat.shape[0] != n:
                raise DatasetError(
                    f"dimension mismatch: modality {name!r} has shape {mat.shape}, expected ({n}, d)"
                )
            mat.setflags(write=False)
            views[name] = mat
        object.__setattr__(self, "views", views)
        for attr in ("labels", "predictions"):
            vec = np.asarray(getattr(self, attr))
            if vec.shape != (n,) or not np.isin(vec, (0, 1)).all():
                raise DatasetError(f"{attr} must be a length-{n} vector of 0/1 values")
            vec = vec.astype(np.int64)
            vec.setflags(write=False)
            object.__setattr__(self, attr, vec)
        object.__setattr__(self, "reports", tuple(self.reports) or (None,) * n)
        object.__setattr__(self, "metadata", tuple(self.metadata) or (None,) * n)
        if len(self.reports) != n or len(self.metadata) != n:
            raise DatasetError("reports/metadata length does not match sample count")
        tags = {}
        for name, vec in self.group_tags.items():
            vec = np.asarray(vec)
            if vec.shape != (n,) or not np.isin(vec, (0, 1)).all():
                raise DatasetError(f"group tag {name!r} must be a length-{n} vector of 0/1 values")
            vec = vec.astype(np.int64)
            vec.setflags(write=False)
            tags[name] = vec
        object.__setattr__(self, "group_tags", tags)

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.views.keys() == other.views.keys()
            and all(np.array_equal(self.views[k], other.views[k]) for k in self.views)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.predictions, other.predictions)
            and self.reports == other.reports
            and tuple(_plain(m) for m in self.metadata) == tuple(_plain(m) for m in other.metadata)
            and self.group_tags.keys() == other.group_tags.keys()
            and all(np.array_equal(self.group_tags[k], other.group_tags[k]) for k in self.group_tags)
        )

    __hash__ = None

    @property
    def modality_dims(self) -> dict[str, int]:
        return {name: mat.shape[1] for name, mat in self.views.items()}

    @property
    def samples(self) -> list[Sample]:
        return [self.sample(i) for i in range(len(self))]

    def sample(self, i: int) -> Sample:
        return Sample(
            id=self.ids[i],
            views={k: v[i] for k, v in self.views.items()},
            label=int(self.labels[i]),
            prediction=int(self.predictions[i]),
            report_text=self.reports[i],
            metadata=self.metadata[i],
            group_tags={k: int(v[i]) for k, v in self.group_tags.items()} or None,
        )

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Dataset":
        if not samples:
            raise DatasetError("dataset is empty")
        names = list(samples[0].views)
        for s in samples:
            if list(s.views) != names:
                raise DatasetError(f"sample {s.id!r} exposes modalities {list(s.views)}, expected {names}")
        tag_names = list(samples[0].group_tags or {})
        return cls(
            ids=tuple(s.id for s in samples),
            views={m: np.vstack([np.asarray(s.views[m], dtype=float) for s in samples]) for m in names},
            labels=np.array([s.label for s in samples]),
            predictions=np.array([s.prediction for s in samples]),
            reports=tuple(s.report_text for s in samples),
            metadata=tuple(s.metadata for s in samples),
            group_tags={t: np.array([(s.group_tags or {})[t] for s in samples]) for t in tag_names},
        )

    def index_of(self, ids: Iterable[str]) -> np.ndarray:
        lookup = {sid: i for i, sid in enumerate(self.ids)}
        try:
            return np.array(sorted(lookup[s] for s in ids), dtype=np.int64)
        except KeyError as exc:
            raise DatasetError(f"unknown sample id {exc.args[0]!r}") from None

    def subset(self, index: Sequence[int]) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            ids=tuple(self.ids[i] for i in index),
            views={k: v[index] for k, v in self.views.items()},
            labels=self.labels[index],
            predictions=self.predictions[index],
            reports=tuple(self.reports[i] for i in index),
            metadata=tuple(self.metadata[i] for i in index),
            group_tags={k: v[index] for k, v in self.group_tags.items()},
        )

    def replace(self, **changes) -> "Dataset":
        fields = dict(
            ids=self.ids,
            views=self.views,
            labels=self.labels,
            predictions=self.predictions,
            reports=self.reports,
            metadata=self.metadata,
            group_tags=self.group_tags,
        )
        fields.update(changes)
        return Dataset(**fields)

    def tag(self, attr: str) -> np.ndarray:
        if attr not in self.group_tags:
            raise DatasetError(f"attribute {attr!r} missing from group tags")
        return self.group_tags[attr]


def _plain(record):
    return None if record is None else dict(sorted(record.items()))


def tokenize(text: str | None, stopwords: Iterable[str] = STOPWORDS) -> list[str]:
    """Lowercase, split on anything outside ``[a-z0-9-]``, drop stopwords and 1-char tokens."""
    if not text:
        return []
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    return [t for t in _NON_TOKEN.split(text.lower()) if len(t) >= 2 and t not in stop]


def _decamel(key: str) -> str:
    key = _CAMEL_2.sub(r"\1 \2", _CAMEL_1.sub(r"\1 \2", key))
    return " ".join(key.replace("_", " ").split()).lower()


def metadata_to_text(record: Mapping[str, str] | None) -> str:
    """Render a metadata record as ``"key is value"`` phrases, sorted by key.

    >>> metadata_to_text({"ViewPosition": "LATERAL"})
    'view position is lateral'
    """
    if not record:
        return ""
    return "; ".join(f"{_decamel(k)} is {str(record[k]).lower()}" for k in sorted(record))


def build_docs(
    dataset: Dataset,
    doc_source: str = "both",
    stopwords: Iterable[str] = STOPWORDS,
) -> list[TokenDoc]:
    """One token document per sample from report text, metadata, or both."""
    if doc_source not in ("report", "metadata", "both"):
        raise ValueError(f"doc_source must be report, metadata or both, got {doc_source!r}")
    stop = frozenset(stopwords)
    docs = []
    for sid, report, meta in zip(dataset.ids, dataset.reports, dataset.metadata):
        tokens = []
        if doc_source in ("report", "both"):
            tokens += tokenize(report, stop)
        if doc_source in ("metadata", "both"):
            tokens += tokenize(metadata_to_text(meta), stop)
        docs.append(TokenDoc(sid, tokens))
    return docs


# --------------------------------------------------------------------------
# file I/O


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    return rows[0], rows[1:]


def _binary(value: str, path: Path, row, column: str) -> int:
    if value.strip() not in ("0", "1"):
        raise DatasetError(f"{path}, row {row}: non-binary {column} value {value!r}")
    return int(value)


def _rows_by_id(path: Path, header: list[str], rows: list[list[str]]) -> dict[str, list[str]]:
    if not header or header[0] != "id":
        raise DatasetError(f"{path}: first column must be 'id'")
    out = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DatasetError(f"{path}, row {lineno}: expected {len(header)} columns, got {len(row)}")
        if row[0] in out:
            raise DatasetError(f"{path}, row {lineno}: duplicate id {row[0]!r}")
        out[row[0]] = row[1:]
    return out


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load a dataset described by a JSON manifest (see README for the layout).

    Relative paths inside the manifest resolve against the manifest's folder.
    Sample order follows the ids+labels CSV.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DatasetError(f"missing file: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent

    def resolve(p):
        return None if p is None else base / p

    samples_path = resolve(manifest["samples"])
    header, rows = _read_csv(samples_path)
    if header[:3] != ["id", "label", "prediction"]:
        raise DatasetError(f"{samples_path}: header must be id,label,prediction")
    ids, labels, preds = [], [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) < 3:
            raise DatasetError(f"{samples_path}, row {lineno}: expected 3 columns")
        ids.append(row[0])
        labels.append(_binary(row[1], samples_path, lineno, "label"))
        preds.append(_binary(row[2], samples_path, lineno, "prediction"))
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise DatasetError(f"{samples_path}: duplicate id {dup!r}")

    views = {}
    for modality, rel in manifest.get("embeddings", {}).items():
        path = resolve(rel)
        header, rows = _read_csv(path)
        by_id = _rows_by_id(path, header, rows)
        if len(by_id) != len(ids):
            raise DatasetError(
                f"{path}: dimension mismatch, {len(by_id)} embedding rows for {len(ids)} sample ids"
            )
        try:
            views[modality] = np.array([[float(v) for v in by_id[sid]] for sid in ids])
        except KeyError as exc:
            raise DatasetError(f"{path}: no embedding for id {exc.args[0]!r}") from None
        except ValueError as exc:
            raise DatasetError(f"{path}: {exc}") from None

    reports = None
    if manifest.get("reports"):
        path = resolve(manifest["reports"])
        header, rows = _read_csv(path)
        if header != ["id", "text"]:
            raise DatasetError(f"{path}: header must be id,text")
        by_id = _rows_by_id(path, header, rows)
        reports = tuple(by_id[sid][0] if sid in by_id else None for sid in ids)

    metadata = None
    if manifest.get("metadata"):
        path = resolve(manifest["metadata"])
        header, rows = _read_csv(path)
        by_id = _rows_by_id(path, header, rows)
        metadata = tuple(
            {k: v for k, v in zip(header[1:], by_id[sid]) if v != ""} if sid in by_id else None
            for sid in ids
        )

    tags = {}
    if manifest.get("groups"):
        path = resolve(manifest["groups"])
        header, rows = _read_csv(path)
        by_id = _rows_by_id(path, header, rows)
        for j, name in enumerate(header[1:]):
            col = []
            for sid in ids:
                if sid not in by_id:
                    raise DatasetError(f"{path}: no group row for id {sid!r}")
                col.append(_binary(by_id[sid][j], path, f"id {sid!r}", name))
            tags[name] = np.array(col)

    return Dataset(
        ids=tuple(ids),
        views=views,
        labels=np.array(labels),
        predictions=np.array(preds),
        reports=reports or (),
        metadata=metadata or (),
        group_tags=tags,
    )


def emit_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write ``dataset`` as a manifest plus CSV files; returns the manifest path.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"samples": "samples.csv", "embeddings": {}, "reports": None, "metadata": None, "groups": None}

    with open(out / "samples.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "prediction"])
        for sid, y, p in zip(dataset.ids, dataset.labels, dataset.predictions):
            w.writerow([sid, int(y), int(p)])

    for name, mat in dataset.views.items():
        fname = f"emb_{name}.csv"
        with open(out / fname, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id"] + [f"v{j}" for j in range(mat.shape[1])])
            for sid, row in zip(dataset.ids, mat):
                w.writerow([sid] + [repr(float(v)) for v in row])
        manifest["embeddings"][name] = fname

    if any(r is not None for r in dataset.reports):
        with open(out / "reports.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "text"])
            for sid, text in zip(dataset.ids, dataset.reports):
                if text is not None:
                    w.writerow([sid, text])
        manifest["reports"] = "reports.csv"

    if any(m is not None for m in dataset.metadata):
        keys = sorted({k for m in dataset.metadata if m for k in m})
        with open(out / "metadata.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id"] + keys)
            for sid, meta in zip(dataset.ids, dataset.metadata):
                if meta is not None:
                    w.writerow([sid] + [meta.get(k, "") for k in keys])
        manifest["metadata"] = "metadata.csv"

    if dataset.group_tags:
        names = list(dataset.group_tags)
        with open(out / "groups.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id"] + names)
            for i, sid in enumerate(dataset.ids):
                w.writerow([sid] + [int(dataset.group_tags[n][i]) for n in names])
        manifest["groups"] = "groups.csv"

    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
