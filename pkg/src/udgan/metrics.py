"""Cross-camera retrieval evaluation: CMC and mAP."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .mining import distance_matrix

REPORT_HEADER = ["tag", "rank1", "rank5", "rank10", "mAP", "num_valid_queries"]
PER_QUERY_HEADER = ["query_index", "ap", "first_match_rank"]


@dataclass
class QueryResult:
    query_index: int
    ap: float
    first_match_rank: int


@dataclass
class EvalReport:
    cmc: np.ndarray
    map: float
    num_valid_queries: int
    per_query: List[QueryResult] = field(default_factory=list)

    def rank(self, k: int) -> float:
        if k < 1:
            raise ValueError("rank k starts at 1")
        return float(self.cmc[min(k, len(self.cmc)) - 1])

    def row(self, tag="eval") -> dict:
        return {"tag": tag, "rank1": self.rank(1), "rank5": self.rank(5),
                "rank10": self.rank(10), "mAP": self.map,
                "num_valid_queries": self.num_valid_queries}


def valid_gallery_mask(query: Tuple[int, int], gallery: Sequence[Tuple[int, int]]) -> np.ndarray:
    """Drop gallery items sharing both identity and camera with the query."""
    qid, qcam = query
    g = np.asarray(gallery, dtype=np.int64).reshape(-1, 2)
    return ~((g[:, 0] == qid) & (g[:, 1] == qcam))


def rank_gallery(distances, mask=None) -> np.ndarray:
    """Unmasked gallery indices by ascending distance, ties to the smaller index."""
    distances = np.asarray(distances, dtype=np.float64)
    idx = np.arange(len(distances)) if mask is None else np.flatnonzero(mask)
    if len(idx) == 0:
        raise ValueError("no gallery items left after masking")
    return idx[np.argsort(distances[idx], kind="stable")]


def cmc_at_k(flag_lists: Sequence[Sequence[bool]], k: int) -> float:
    """Fraction of queries with a true match within the first ``k`` results."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(flag_lists) == 0:
        raise ValueError("cmc needs at least one valid query")
    return float(np.mean([bool(np.any(np.asarray(f[:k], dtype=bool))) for f in flag_lists]))


def average_precision(flags: Sequence[bool]) -> float:
    """Mean of precision@k over the ranks k that hold a true match."""
    flags = np.asarray(flags, dtype=bool)
    hits = np.flatnonzero(flags)
    if len(hits) == 0:
        raise ValueError("average precision is undefined without a true match")
    precision_at_hits = np.arange(1, len(hits) + 1) / (hits + 1)
    return float(precision_at_hits.mean())


def evaluate_embeddings(query_feats, query_ids, query_cams,
                        gallery_feats, gallery_ids, gallery_cams) -> EvalReport:
    """CMC over ranks 1..G and mAP, skipping queries with no cross-camera match.

    Gallery distractors (identity < 0) stay in the ranking as negatives.
    """
    qf, gf = np.asarray(query_feats), np.asarray(gallery_feats)
    qids, qcams = np.asarray(query_ids), np.asarray(query_cams)
    gids, gcams = np.asarray(gallery_ids), np.asarray(gallery_cams)
    if len(qf) == 0 or len(gf) == 0:
        raise ValueError("evaluation needs non-empty query and gallery sets")
    if np.any(qids < 0):
        raise ValueError("distractor images (identity < 0) cannot be queries")
    dist = distance_matrix(qf, gf)
    gallery = np.stack([gids, gcams], axis=1)
    num_gallery = len(gf)
    hits_at = np.zeros(num_gallery)
    per_query = []
    for q in range(len(qf)):
        mask = valid_gallery_mask((qids[q], qcams[q]), gallery)
        if not mask.any():
            continue
        order = rank_gallery(dist[q], mask)
        flags = gids[order] == qids[q]
        if not flags.any():
            continue
        first = int(np.argmax(flags)) + 1
        hits_at[first - 1:] += 1
        per_query.append(QueryResult(q, average_precision(flags), first))
    if not per_query:
        raise ValueError("no valid queries: every query lacks a cross-camera true match")
    n = len(per_query)
    return EvalReport(cmc=hits_at / n, map=float(np.mean([r.ap for r in per_query])),
                      num_valid_queries=n, per_query=per_query)


@torch.no_grad()
def embed(encoder: Callable[[torch.Tensor], torch.Tensor], images: torch.Tensor,
          batch_size: int = 128, device=None) -> np.ndarray:
    chunks = [encoder(images[i:i + batch_size].to(device)).detach().cpu().double()
              for i in range(0, len(images), batch_size)]
    return torch.cat(chunks).numpy()


def evaluate(query_images, query_ids, query_cams, gallery_images, gallery_ids, gallery_cams,
             encoder: Callable[[torch.Tensor], torch.Tensor], batch_size: int = 128,
             device=None) -> EvalReport:
    """Embed both sets with ``encoder`` (already in eval mode) and score retrieval."""
    if len(query_images) == 0 or len(gallery_images) == 0:
        raise ValueError("evaluation needs non-empty query and gallery sets")
    qf = embed(encoder, query_images, batch_size, device)
    gf = embed(encoder, gallery_images, batch_size, device)
    return evaluate_embeddings(qf, np.asarray(query_ids), np.asarray(query_cams),
                               gf, np.asarray(gallery_ids), np.asarray(gallery_cams))


def write_report_csv(path, report: EvalReport, tag="eval", per_query_path: Optional[str] = None):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_HEADER)
        w.writeheader()
        w.writerow(report.row(tag))
    if per_query_path is not None:
        with open(per_query_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PER_QUERY_HEADER)
            for r in report.per_query:
                w.writerow([r.query_index, repr(r.ap), r.first_match_rank])


def read_report_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("rank1", "rank5", "rank10", "mAP"):
            r[k] = float(r[k])
        r["num_valid_queries"] = int(r["num_valid_queries"])
    return rows
