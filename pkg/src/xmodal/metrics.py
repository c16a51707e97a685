"""Verification pairs, pair scoring, EER and Top-1 accuracy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ProtocolError, ShapeError
from .store import EmbeddingRecord, stack_vectors
from .twobranch import TwoBranchModel


@dataclass(frozen=True)
class Pairs:
    """Trial list: ``(left[i], right[i])`` index pairs into two record lists."""

    a: tuple[EmbeddingRecord, ...]
    b: tuple[EmbeddingRecord, ...]
    left: np.ndarray
    right: np.ndarray
    same: np.ndarray

    def __len__(self) -> int:
        return len(self.left)

    @property
    def n_positive(self) -> int:
        return int(self.same.sum())

    @property
    def n_negative(self) -> int:
        return len(self) - self.n_positive


def make_pairs(
    a_records: Sequence[EmbeddingRecord],
    b_records: Sequence[EmbeddingRecord],
    policy: str = "exhaustive",
    seed: Optional[int] = None,
) -> Pairs:
    """Build labelled trials between two record lists.

    ``exhaustive`` keeps every cross pair. When both lists hold the same
    samples (voice-voice verification) each unordered pair is kept once and
    self-pairs are dropped. ``balanced`` keeps all positives plus an equal
    number of negatives drawn uniformly without replacement using ``seed``.

    Raises:
        ProtocolError: no same-identity pair exists.
    """
    a, b = tuple(a_records), tuple(b_records)
    ia = np.array([r.identity for r in a], dtype=object)
    ib = np.array([r.identity for r in b], dtype=object)
    left, right = np.meshgrid(np.arange(len(a)), np.arange(len(b)), indexing="ij")
    left, right = left.ravel(), right.ravel()
    if [r.sample_id for r in a] == [r.sample_id for r in b]:
        keep = left < right
        left, right = left[keep], right[keep]
    same = ia[left] == ib[right] if len(left) else np.zeros(0, dtype=bool)
    same = same.astype(bool)
    if not same.any():
        raise ProtocolError("no same-identity pairs can be formed")
    if policy == "balanced":
        pos = np.flatnonzero(same)
        neg = np.flatnonzero(~same)
        rng = np.random.default_rng(seed)
        if len(neg) > len(pos):
            neg = np.sort(rng.choice(neg, size=len(pos), replace=False))
        sel = np.concatenate([pos, neg])
        left, right, same = left[sel], right[sel], same[sel]
    elif policy != "exhaustive":
        raise ValueError(f"unknown pair policy {policy!r}")
    return Pairs(a, b, left, right, same)


@dataclass(frozen=True)
class ScoredPairs:
    """Higher score means more likely the same identity."""

    positive: np.ndarray
    negative: np.ndarray

    def to_csv(self) -> str:
        lines = ["label,score"]
        lines += [f"1,{s:.17g}" for s in self.positive]
        lines += [f"0,{s:.17g}" for s in self.negative]
        return "\n".join(lines) + "\n"


def _embed(records: Sequence[EmbeddingRecord], model: Optional[TwoBranchModel]) -> np.ndarray:
    if not records:
        return np.zeros((0, 0))
    modalities = {r.modality for r in records}
    if len(modalities) != 1:
        raise ShapeError("a pair side must hold a single modality")
    X = stack_vectors(records)
    if model is None:
        return X
    (modality,) = modalities
    expected = model.face_in_dim if modality == "face" else model.voice_in_dim
    if X.shape[1] != expected:
        raise ShapeError(f"{modality} records have dim {X.shape[1]}, model expects {expected}")
    return model.project(modality, X)


def score_pairs(model: Optional[TwoBranchModel], pairs: Pairs) -> ScoredPairs:
    """Score each trial by the negative Euclidean distance of its two sides.

    With a model, each side is projected through its modality's branch (scores
    then lie in [-2, 0]); with ``model=None`` raw embeddings are compared.
    """
    A = _embed(pairs.a, model)
    B = _embed(pairs.b, model)
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"pair sides live in different spaces: {A.shape[1]} vs {B.shape[1]}")
    diff = A[pairs.left] - B[pairs.right]
    scores = -np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return ScoredPairs(scores[pairs.same], scores[~pairs.same])


def operating_points(positive, negative) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """FAR and FRR at every distinct score plus -inf and +inf (ascending).

    A trial is accepted when ``score >= t``.
    """
    pos = np.sort(np.asarray(positive, dtype=np.float64))
    neg = np.sort(np.asarray(negative, dtype=np.float64))
    thresholds = np.concatenate([[-np.inf], np.unique(np.concatenate([pos, neg])), [np.inf]])
    far = (len(neg) - np.searchsorted(neg, thresholds, side="left")) / len(neg)
    frr = np.searchsorted(pos, thresholds, side="left") / len(pos)
    return thresholds, far, frr


def compute_eer(s: ScoredPairs) -> tuple[float, float]:
    """Equal error rate and the threshold where FAR and FRR cross.

    FAR - FRR is nonincreasing in the threshold. The crossing is located at
    the first operating point where it is <= 0 and linearly interpolated with
    the preceding point; an exact zero is returned as-is.
    """
    if len(s.positive) == 0 or len(s.negative) == 0:
        raise ValueError("EER needs at least one positive and one negative score")
    if not (np.all(np.isfinite(s.positive)) and np.all(np.isfinite(s.negative))):
        raise ValueError("scores must be finite")
    t, far, frr = operating_points(s.positive, s.negative)
    diff = far - frr
    k = int(np.argmax(diff <= 0))
    if diff[k] == 0:
        return float(far[k]), float(t[k])
    # k >= 2 here: the two lowest operating points always have FAR=1, FRR=0
    d0, d1 = diff[k - 1], diff[k]
    alpha = d0 / (d0 - d1)
    eer = far[k - 1] + alpha * (far[k] - far[k - 1])
    threshold = t[k - 1] + alpha * (t[k] - t[k - 1])
    return float(eer), float(threshold)


def top1_accuracy(predicted: Sequence, truth: Sequence) -> float:
    if len(predicted) != len(truth):
        raise ValueError(f"length mismatch: {len(predicted)} predictions for {len(truth)} labels")
    if len(truth) == 0:
        raise ValueError("top-1 accuracy of an empty set is undefined")
    hits = sum(1 for p, t in zip(predicted, truth) if p == t)
    return hits / len(truth)
