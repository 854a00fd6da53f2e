"""Unsupervised same-identity pair mining with a mutual top-k filter."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class MinedPair:
    query_index: int
    match_index: int
    is_self_pair: bool
    distance: float


@dataclass
class MiningReport:
    total_queries: int
    kept_pairs: int
    self_pairs: int
    kept_fraction: float
    precision: Optional[float] = None
    correct_pairs: Optional[int] = None

    def to_text(self) -> str:
        lines = [
            f"total_queries: {self.total_queries}",
            f"kept_pairs: {self.kept_pairs}",
            f"self_pairs: {self.self_pairs}",
            f"kept_fraction: {self.kept_fraction:.6f}",
        ]
        if self.precision is not None:
            lines.append(f"precision: {self.precision:.6f}")
            lines.append(f"correct_pairs: {self.correct_pairs}")
        else:
            lines.append("precision: n/a")
        return "\n".join(lines) + "\n"


def _as_unit_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0) or not np.all(np.isfinite(x)):
        raise ValueError("re-identification distance is undefined for zero or non-finite vectors")
    return x / norms


def reid_distance(a, b) -> float:
    """Euclidean distance between the L2-normalised vectors (in [0, 2])."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    ua, ub = _as_unit_rows(a)[0], _as_unit_rows(b)[0]
    return float(np.sqrt(np.sum((ua - ub) ** 2)))


# Distances are rounded to this many decimals so that exact duplicates tie
# regardless of BLAS summation order; ties then fall to the smaller index.
TIE_DECIMALS = 12


def _unit_distances(ua, ub):
    return np.round(np.sqrt(np.clip(2.0 - 2.0 * ua @ ub.T, 0.0, None)), TIE_DECIMALS)


def distance_matrix(a, b=None) -> np.ndarray:
    """Pairwise :func:`reid_distance` between the rows of ``a`` and ``b``."""
    ua = _as_unit_rows(a)
    ub = ua if b is None else _as_unit_rows(b)
    d = _unit_distances(ua, ub)
    if b is None:
        np.fill_diagonal(d, 0.0)
    return d


def _ranked(dist: np.ndarray, limit: Optional[int] = None) -> np.ndarray:
    dist = dist.copy()
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    m = dist.shape[0]
    return order[:, : (m - 1 if limit is None else min(limit, m - 1))]


def rank_all(embeddings) -> np.ndarray:
    """``[M, M-1]`` neighbour indices per row, nearest first, ties to the smaller index."""
    emb = np.asarray(embeddings)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ValueError("rank_all needs at least two embeddings")
    return _ranked(distance_matrix(emb))


def _top_k(unit: np.ndarray, k: int, chunk: int = 2048):
    """Top-k neighbours and their distances without materialising the full ranking."""
    m = unit.shape[0]
    k = min(k, m - 1)
    idx = np.empty((m, k), dtype=np.int64)
    dist = np.empty((m, k))
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        d = _unit_distances(unit[start:stop], unit)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        idx[start:stop] = order
        dist[start:stop] = np.take_along_axis(d, order, axis=1)
    return idx, dist


def mine_pairs(embeddings, k: int = 5):
    """One pair per query: its top-1 match when mutual within top-k, else itself.

    A query ``q`` with nearest neighbour ``m`` keeps ``(q, m)`` only if ``q``
    is among the ``k`` nearest neighbours of ``m``; otherwise it is paired
    with itself. Camera ids are deliberately not consulted.
    """
    emb = np.asarray(embeddings)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ValueError("mine_pairs needs at least two embeddings")
    if k < 1:
        raise ValueError("k must be >= 1")
    unit = _as_unit_rows(emb)
    idx, dist = _top_k(unit, k)
    pairs = []
    for q in range(unit.shape[0]):
        m = int(idx[q, 0])
        if q in idx[m]:
            pairs.append(MinedPair(q, m, False, float(dist[q, 0])))
        else:
            pairs.append(MinedPair(q, q, True, 0.0))
    return pairs, make_report(pairs)


def make_report(pairs: Sequence[MinedPair]) -> MiningReport:
    total = len(pairs)
    self_pairs = sum(p.is_self_pair for p in pairs)
    kept = total - self_pairs
    return MiningReport(total, kept, self_pairs, kept / total if total else 0.0)


def validate_mining(pairs: Sequence[MinedPair], true_labels) -> MiningReport:
    """Report with the fraction of non-self pairs whose two images share a label."""
    labels = list(true_labels)
    report = make_report(pairs)
    correct = 0
    for p in pairs:
        for i in (p.query_index, p.match_index):
            if not 0 <= i < len(labels) or labels[i] is None:
                raise ValueError(f"no ground-truth label for index {i}")
        if not p.is_self_pair and labels[p.query_index] == labels[p.match_index]:
            correct += 1
    if report.kept_pairs:
        report.precision = correct / report.kept_pairs
        report.correct_pairs = correct
    return report


def top1_precision(embeddings, true_labels) -> float:
    """Precision of unfiltered nearest-neighbour pairing."""
    unit = _as_unit_rows(embeddings)
    idx, _ = _top_k(unit, 1)
    labels = np.asarray(true_labels)
    return float(np.mean(labels == labels[idx[:, 0]]))


PAIR_HEADER = ["query_path", "match_path", "is_self_pair", "distance"]


def write_pairs_csv(path, pairs: Sequence[MinedPair], paths: Sequence[str]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PAIR_HEADER)
        for p in pairs:
            w.writerow([paths[p.query_index], paths[p.match_index], int(p.is_self_pair),
                        repr(p.distance)])


def read_pairs_csv(path, paths: Sequence[str]) -> List[MinedPair]:
    lookup = {p: i for i, p in enumerate(paths)}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PAIR_HEADER:
            raise ValueError(f"{path}: expected header {','.join(PAIR_HEADER)}")
        for row in reader:
            try:
                q, m = lookup[row["query_path"]], lookup[row["match_path"]]
            except KeyError as exc:
                raise ValueError(f"{path}: unknown image {exc.args[0]}") from None
            out.append(MinedPair(q, m, bool(int(row["is_self_pair"])), float(row["distance"])))
    return out


def write_report(path, report: MiningReport):
    Path(path).write_text(report.to_text())
