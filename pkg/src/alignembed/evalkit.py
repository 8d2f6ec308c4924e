"""Post-hoc evaluation: similarity statistics, Pearson correlation, PCA projection."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .data import PairDataset

logger = logging.getLogger(__name__)

HIST_BINS = 32
HIST_EDGES = np.linspace(-1.0, 1.0, HIST_BINS + 1)


class UndefinedCorrelationError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation, two-pass, clamped into [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"pearson needs equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("pearson needs at least two observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("zero variance: correlation undefined")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def histogram(values: np.ndarray) -> list[int]:
    """Counts over 32 equal bins on [-1, 1]; bins are left-closed, the last also includes 1."""
    counts, _ = np.histogram(np.clip(values, -1.0, 1.0), bins=HIST_EDGES)
    return counts.astype(int).tolist()


def pair_cosines(encoder, ds: PairDataset) -> np.ndarray:
    a = encoder.encode([p[0] for p in ds.pairs])
    b = encoder.encode([p[1] for p in ds.pairs])
    return np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)


@dataclass
class SimilarityReport:
    n_same: int
    n_random: int
    mean_same: float
    mean_random: float
    margin: float
    hist_same: list[int]
    hist_random: list[int]

    def to_dict(self) -> dict:
        return {**asdict(self), "hist_edges": HIST_EDGES.tolist()}


def summarize_similarities(same: np.ndarray, rand: np.ndarray) -> SimilarityReport:
    if same.size == 0 or rand.size == 0:
        raise ValueError("both pair groups must be non-empty")
    # sorted fixed-order sums keep the means independent of pair order
    mean_same = math.fsum(np.sort(same)) / same.size
    mean_random = math.fsum(np.sort(rand)) / rand.size
    return SimilarityReport(int(same.size), int(rand.size), mean_same, mean_random,
                            mean_same - mean_random, histogram(same), histogram(rand))


def similarity_report(encoder, same_pairs: PairDataset, random_pairs: PairDataset) -> SimilarityReport:
    """Mean cosine for matched pairs versus random pairings, with histograms."""
    if not len(same_pairs) or not len(random_pairs):
        raise ValueError("both pair groups must be non-empty")
    return summarize_similarities(pair_cosines(encoder, same_pairs),
                                  pair_cosines(encoder, random_pairs))


@dataclass
class PcaResult:
    coordinates: np.ndarray         # [n, k]
    components: np.ndarray          # [k, d]
    explained_variance: np.ndarray  # eigenvalues of the covariance
    explained_variance_ratio: np.ndarray
    total_variance: float
    iterations: list[int]

    def to_dict(self) -> dict:
        return {
            "coordinates": self.coordinates.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "total_variance": self.total_variance,
            "iterations": self.iterations,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index"] + ["xyzw"[i] if i < 4 else f"c{i}"
                                    for i in range(self.coordinates.shape[1])])
            for i, row in enumerate(self.coordinates):
                w.writerow([i, *(repr(float(v)) for v in row)])


def _sign_fix(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12 * max(1.0, np.abs(v).max()))
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def _polish(cov: np.ndarray, v: np.ndarray, lam: float, comps: list[np.ndarray],
            steps: int = 2) -> tuple[np.ndarray, float]:
    """Shifted inverse iteration on the undeflated covariance.

    The residual test leaves an eigenvector error of about residual / eigengap;
    two solves against ``C - lambda I`` remove it without loosening the test.
    """
    # a shift exactly at lambda can be singular to working precision; nudge it off
    offset = 1e-10 * max(float(np.linalg.norm(cov)), np.finfo(float).tiny)
    shifted = cov - (lam + offset) * np.eye(len(cov))
    for _ in range(steps):
        try:
            y = np.linalg.solve(shifted, v)
        except np.linalg.LinAlgError:
            break
        for c in comps:
            y -= (y @ c) * c
        norm = float(np.linalg.norm(y))
        if not np.isfinite(norm) or norm == 0.0:
            break
        v = y / norm
    return v, float(v @ cov @ v)


def pca_project(x, k: int = 2, seed: int = 0, tol: float = 1e-10,
                max_iter: int = 10_000) -> PcaResult:
    """Top-``k`` principal components via power iteration with deflation.

    Each direction is iterated on the deflated covariance until the eigen-residual
    ``||C v - lambda v||`` drops below ``tol * ||C||_F``, then polished by
    inverse iteration. Components are signed so their first nonzero entry is
    positive.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("pca_project expects a matrix")
    n, d = x.shape
    if n < 2:
        raise ValueError("need at least two rows")
    if not 1 <= k <= min(n, d):
        raise ValueError(f"k={k} must be in [1, {min(n, d)}]")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    total = float(np.trace(cov))
    if total <= 0.0:
        raise ValueError("data has zero total variance")

    rng = np.random.default_rng(seed)
    scale = float(np.linalg.norm(cov))
    work = cov.copy()
    comps: list[np.ndarray] = []
    eigvals: list[float] = []
    iters: list[int] = []
    for _ in range(k):
        v = rng.standard_normal(d)
        for c in comps:
            v -= (v @ c) * c
        v /= np.linalg.norm(v)
        lam, residual = 0.0, math.inf
        for it in range(1, max_iter + 1):
            w = work @ v
            for c in comps:
                w -= (w @ c) * c
            norm = float(np.linalg.norm(w))
            if norm <= tol * scale:
                # remaining spectrum is numerically zero; any orthogonal direction will do
                lam, residual = 0.0, norm
                break
            lam = float(v @ w)
            residual = float(np.linalg.norm(w - lam * v))
            v = w / norm
            if residual <= tol * scale:
                break
        else:
            raise ConvergenceError(f"power iteration did not converge in {max_iter} "
                                   f"iterations (residual {residual:.3e})")
        if lam > 0.0:
            v, lam = _polish(cov, v, lam, comps)
        v = _sign_fix(v)
        comps.append(v)
        eigvals.append(max(lam, 0.0))
        iters.append(it)
        work = work - lam * np.outer(v, v)

    components = np.vstack(comps)
    eig = np.array(eigvals)
    return PcaResult(centered @ components.T, components, eig, eig / total, total, iters)


def embed_file(encoder, input_path, output_path, chunk_size: int = 256) -> int:
    """Write ``index,v0..v{d-1}`` rows for every non-empty line; returns rows written."""
    with open(input_path, encoding="utf-8") as fh:
        lines = [line.rstrip("\r\n") for line in fh]
    sentences = [s for s in lines if s.strip()]
    skipped = len(lines) - len(sentences)
    if skipped:
        logger.warning("%s: skipped %d empty lines", input_path, skipped)
    vectors = encoder.encode(sentences, chunk_size=chunk_size)
    d = vectors.shape[1] if vectors.size else encoder.params.config.d_model
    with open(output_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"v{j}" for j in range(d)])
        for i, vec in enumerate(vectors):
            w.writerow([i, *(repr(float(v)) for v in vec)])
    return len(sentences)


def read_embedding_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]])


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
