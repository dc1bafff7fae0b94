"""Token-level explanations for error slices.

Slices are explained by contrasting mean TF-IDF weights between the error
slice and a reference slice of correctly predicted same-class samples, then
checking each candidate token against the image embeddings of both slices.
"""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .ingest import Dataset, TokenDoc


class ExplainError(ValueError):
    pass


@dataclass(frozen=True)
class TfidfModel:
    vocabulary: list[str]
    idf: np.ndarray
    doc_vectors: sparse.csr_matrix  # (N, V)
    doc_ids: list[str]

    def rows(self, ids: Iterable[str]) -> np.ndarray:
        lookup = {d: i for i, d in enumerate(self.doc_ids)}
        try:
            return np.array([lookup[i] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise ExplainError(f"id {exc.args[0]!r} not in the TF-IDF corpus") from None


@dataclass(frozen=True)
class TokenEntry:
    token: str
    ds: float
    r_attr: float | None = None


@dataclass(frozen=True)
class TokenReport:
    entries: list[TokenEntry]
    error_slice_id: int
    reference_size: int
    error_size: int = 0

    @property
    def tokens(self) -> list[str]:
        return [e.token for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "slice_id": self.error_slice_id,
            "tokens": [{"token": e.token, "ds": e.ds, "r_attr": e.r_attr} for e in self.entries],
            "reference_size": self.reference_size,
            "error_size": self.error_size,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TokenReport":
        return cls(
            entries=[TokenEntry(t["token"], t["ds"], t.get("r_attr")) for t in d["tokens"]],
            error_slice_id=d["slice_id"],
            reference_size=d["reference_size"],
            error_size=d.get("error_size", 0),
        )


def fit_tfidf(docs: Sequence[TokenDoc]) -> TfidfModel:
    """tf = count / doc length, idf = ln((1 + N) / (1 + df)) + 1."""
    if not docs:
        raise ExplainError("need at least one document")
    vocab = sorted({t for d in docs for t in d.tokens})
    index = {t: j for j, t in enumerate(vocab)}
    rows, cols, vals = [], [], []
    df = np.zeros(len(vocab))
    for i, doc in enumerate(docs):
        counts = Counter(doc.tokens)
        n_tok = len(doc.tokens)
        for tok, c in counts.items():
            rows.append(i)
            cols.append(index[tok])
            vals.append(c / n_tok)
            df[index[tok]] += 1
    idf = np.log((1.0 + len(docs)) / (1.0 + df)) + 1.0
    tf = sparse.csr_matrix((vals, (rows, cols)), shape=(len(docs), len(vocab)))
    return TfidfModel(
        vocabulary=vocab,
        idf=idf,
        doc_vectors=sparse.csr_matrix(tf.multiply(idf[None, :])),
        doc_ids=[d.sample_id for d in docs],
    )


def build_reference_slice(dataset: Dataset, error_slice: Iterable[str]) -> list[str]:
    """Correctly predicted samples with the error slice's majority label (ties -> 1)."""
    err = set(error_slice)
    if not err:
        raise ExplainError("error slice is empty")
    idx = dataset.index_of(err)
    majority = 1 if 2 * dataset.labels[idx].sum() >= len(idx) else 0
    ref = [
        sid
        for sid, y, p in zip(dataset.ids, dataset.labels, dataset.predictions)
        if y == p == majority and sid not in err
    ]
    if not ref:
        raise ExplainError("no reference samples")
    return ref


def distinctiveness(
    model: TfidfModel,
    err_ids: Iterable[str],
    ref_ids: Iterable[str],
    top_n: int = 5,
    slice_id: int = -1,
) -> TokenReport:
    """Rank tokens by mean TF-IDF in the error slice minus mean in the reference slice."""
    err_rows = model.rows(err_ids)
    ref_rows = model.rows(ref_ids)
    if len(err_rows) == 0 or len(ref_rows) == 0:
        raise ExplainError("empty slice")
    ds = ds_scores(model, err_rows, ref_rows)
    order = sorted(range(len(model.vocabulary)), key=lambda j: (-ds[j], model.vocabulary[j]))
    entries = [TokenEntry(model.vocabulary[j], float(ds[j])) for j in order[:top_n]]
    return TokenReport(entries, slice_id, len(ref_rows), len(err_rows))


def ds_scores(model: TfidfModel, err_rows, ref_rows) -> np.ndarray:
    X = model.doc_vectors
    mu_err = np.asarray(X[err_rows].mean(axis=0)).ravel()
    mu_ref = np.asarray(X[ref_rows].mean(axis=0)).ravel()
    return mu_err - mu_ref


def _unit(v, what):
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ExplainError(f"zero-norm {what}")
    return v / norm


def validate_attribute(
    token: str,
    token_vec,
    img_vecs: Mapping[str, np.ndarray],
    err_ids: Iterable[str],
    ref_ids: Iterable[str],
) -> float:
    """Mean cosine(image, token) over the error slice minus the same over the reference slice."""
    t = _unit(token_vec, f"embedding for token {token!r}")

    def sim(ids):
        ids = list(ids)
        if not ids:
            raise ExplainError("empty slice")
        missing = [i for i in ids if i not in img_vecs]
        if missing:
            raise ExplainError(f"no image vector for slice member {missing[0]!r}")
        mat = _unit(np.vstack([img_vecs[i] for i in ids]), "image vector")
        if mat.shape[1] != t.shape[0]:
            raise ExplainError("token and image vectors differ in dimension")
        return float((mat @ t).mean())

    return sim(err_ids) - sim(ref_ids)


def attach_r_attr(
    report: TokenReport,
    token_table: Mapping[str, np.ndarray],
    img_vecs: Mapping[str, np.ndarray],
    err_ids: Sequence[str],
    ref_ids: Sequence[str],
) -> TokenReport:
    """Fill ``r_attr`` for each report token present in ``token_table``."""
    entries = [
        TokenEntry(
            e.token,
            e.ds,
            validate_attribute(e.token, token_table[e.token], img_vecs, err_ids, ref_ids)
            if e.token in token_table
            else None,
        )
        for e in report.entries
    ]
    return TokenReport(entries, report.error_slice_id, report.reference_size, report.error_size)


def global_baseline(dataset: Dataset, docs: Sequence[TokenDoc], top_n: int = 5) -> TokenReport:
    """All misclassified samples against all correct ones, no clustering."""
    wrong = dataset.labels != dataset.predictions
    if wrong.all() or not wrong.any():
        raise ExplainError("baseline needs both misclassified and correct samples")
    ids = np.array(dataset.ids, dtype=object)
    return distinctiveness(fit_tfidf(docs), ids[wrong], ids[~wrong], top_n, slice_id=-1)


def global_attr_precision(dataset: Dataset, attr: str) -> float:
    """Share of misclassified samples that carry ``attr``."""
    tag = dataset.tag(attr)
    wrong = dataset.labels != dataset.predictions
    if not wrong.any():
        raise ExplainError("no misclassified samples")
    return float(tag[wrong].sum() / wrong.sum())


def load_token_table(path: str | Path) -> dict[str, np.ndarray]:
    """Read a ``token,v0,...`` CSV into a dict of vectors."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "token":
            raise ExplainError(f"{path}: first column must be 'token'")
        return {row[0]: np.array([float(v) for v in row[1:]]) for row in reader}


def write_token_table(table: Mapping[str, np.ndarray], path: str | Path) -> None:
    dim = len(next(iter(table.values()))) if table else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["token"] + [f"v{j}" for j in range(dim)])
        for tok in sorted(table):
            w.writerow([tok] + [repr(float(v)) for v in table[tok]])
