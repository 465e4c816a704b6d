"""PCA projections, cosine-similarity matrices and top/worst separation summaries."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class RankWarning(UserWarning):
    pass


class UndefinedSimilarityError(ValueError):
    pass


def pca_project(points, dims: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project centered points onto the leading principal components.

    Returns (projections, explained_variance_ratio, components). Components are
    ordered by decreasing eigenvalue and each is signed so that its largest
    magnitude loading is positive.
    """
    X = np.asarray(points, dtype=np.float64)
    if dims < 1:
        raise ValueError("dims must be at least 1")
    if X.ndim != 2 or X.shape[0] < dims + 1:
        raise ValueError(f"need at least {dims + 1} points of equal dimension")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    total = vals.sum()
    tol = max(vals[0], 1.0) * 1e-12 * X.shape[1] if vals.size else 0.0
    rank = int(np.sum(vals > tol))
    if rank < dims:
        warnings.warn(f"data has rank {rank} < {dims}; returning {rank} components", RankWarning)
        dims = rank
    vecs = vecs[:, :dims]
    flip = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(dims)])
    vecs = vecs * np.where(flip == 0, 1.0, flip)
    ratio = vals[:dims] / total if total > 0 else np.zeros(dims)
    return Xc @ vecs, ratio, vecs


def cosine_similarity_matrix(A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    return np.clip((A / na[:, None]) @ (B / nb[:, None]).T, -1.0, 1.0)


@dataclass
class SeparationReport:
    within_top: float
    top_vs_worst: float
    top_index: np.ndarray
    worst_index: np.ndarray

    @property
    def delta(self) -> float:
        return self.within_top - self.top_vs_worst


def separation_report(latents, scores, top_n: int, worst_n: int) -> SeparationReport:
    """Mean cosine similarity among the best ``top_n`` (off-diagonal) versus best-against-worst."""
    Z = np.asarray(latents, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if top_n < 2 or worst_n < 1:
        raise ValueError("need top_n >= 2 and worst_n >= 1")
    if top_n + worst_n > s.size:
        raise ValueError(f"top_n + worst_n = {top_n + worst_n} exceeds the population of {s.size}")
    order = np.lexsort((np.arange(s.size), -s))
    top, worst = order[:top_n], order[::-1][:worst_n]
    tt = cosine_similarity_matrix(Z[top], Z[top])
    within = (tt.sum() - np.trace(tt)) / (top_n * (top_n - 1))
    across = cosine_similarity_matrix(Z[top], Z[worst]).mean()
    return SeparationReport(float(within), float(across), top, worst)


def _rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _f(x: float) -> str:
    return repr(float(x))


def write_pca_csv(path: str | Path, proj: np.ndarray, scores, ranks) -> None:
    pc2 = proj[:, 1] if proj.shape[1] > 1 else np.zeros(proj.shape[0])
    _rows(path, ["point_id", "pc1", "pc2", "score", "rank"],
          ([i, _f(proj[i, 0]), _f(pc2[i]), _f(scores[i]), int(ranks[i])] for i in range(proj.shape[0])))


def write_cossim_csv(path: str | Path, M: np.ndarray) -> None:
    _rows(path, ["row", "col", "value"],
          ([i, j, _f(M[i, j])] for i in range(M.shape[0]) for j in range(M.shape[1])))


def write_separation_csv(path: str | Path, reports: dict[str, SeparationReport]) -> None:
    _rows(path, ["mode", "within_top", "top_vs_worst", "delta"],
          ([m, _f(r.within_top), _f(r.top_vs_worst), _f(r.delta)] for m, r in reports.items()))
