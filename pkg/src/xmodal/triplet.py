"""In-batch triplet mining and the four-term cross-modal hinge objective.

The objective over a mini-batch of projected faces ``F`` and voices ``V`` is::

    L = T1 + lambda1 * T2 + lambda2 * T3 + lambda3 * T4

with each term aggregating ``max(0, m + d(anchor, pos) - d(anchor, neg))``:

    T1  face anchor,  voice positive, voice negative
    T2  voice anchor, face positive,  face negative
    T3  face anchor,  face positive,  face negative
    T4  voice anchor, voice positive, voice negative

``d`` is the Euclidean distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError

REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class LossWeights:
    margin: float = 1.0
    lambda1: float = 2.0
    lambda2: float = 0.1
    lambda3: float = 0.2
    reduction: str = "mean"

    def __post_init__(self):
        for name in ("margin", "lambda1", "lambda2", "lambda3"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a finite nonnegative number, got {value!r}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}, got {self.reduction!r}")

    @property
    def term_weights(self) -> tuple[float, float, float, float]:
        return (1.0, self.lambda1, self.lambda2, self.lambda3)


def _empty() -> np.ndarray:
    return np.zeros((0, 3), dtype=np.int64)


@dataclass(frozen=True)
class TripletSet:
    """Index triples per loss term.

    ``face_voice`` (term 1) indexes (face, voice, voice); ``voice_face``
    (term 2) indexes (voice, face, face); ``face_face`` and ``voice_voice``
    (terms 3 and 4) index rows of a single modality.
    """

    face_voice: np.ndarray
    voice_face: np.ndarray
    face_face: np.ndarray
    voice_voice: np.ndarray

    @property
    def terms(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.face_voice, self.voice_face, self.face_face, self.voice_voice)

    def counts(self) -> tuple[int, int, int, int]:
        return tuple(len(t) for t in self.terms)

    @property
    def total(self) -> int:
        return sum(self.counts())


def euclidean_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError(f"length mismatch: {u.shape} vs {v.shape}")
    return float(np.sqrt(np.sum((u - v) ** 2)))


def pairwise_distances(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix ``D[i, j] = ||U[i] - V[j]||``.

    Differences are formed explicitly rather than through the Gram expansion
    so that small distances keep full precision.
    """
    diff = U[:, None, :] - V[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _enumerate(anchor_labels: np.ndarray, cand_labels: np.ndarray, exclude_self: bool) -> np.ndarray:
    same = anchor_labels[:, None] == cand_labels[None, :]
    pos = same.copy()
    if exclude_self:
        np.fill_diagonal(pos, False)
    # valid[a, p, n]: p shares a's identity, n does not
    valid = pos[:, :, None] & ~same[:, None, :]
    if not valid.any():
        return _empty()
    return np.stack(np.nonzero(valid), axis=1).astype(np.int64)


def mine_triplets(face_labels: Sequence[str], voice_labels: Sequence[str]) -> TripletSet:
    """Enumerate every valid triplet of each term within the batch.

    Triplets are ordered lexicographically by (anchor, positive, negative).
    Intra-modal terms never use the anchor sample as its own positive.
    """
    f = np.asarray(list(face_labels), dtype=str)
    v = np.asarray(list(voice_labels), dtype=str)
    return TripletSet(
        face_voice=_enumerate(f, v, exclude_self=False),
        voice_face=_enumerate(v, f, exclude_self=False),
        face_face=_enumerate(f, f, exclude_self=True),
        voice_voice=_enumerate(v, v, exclude_self=True),
    )


@dataclass(frozen=True)
class LossResult:
    loss: float
    grad_face: np.ndarray
    grad_voice: np.ndarray
    term_values: tuple[float, float, float, float]
    n_active: int
    n_triplets: int

    def __iter__(self):
        # lets callers unpack ``loss, grad_face, grad_voice = batch_loss(...)``
        return iter((self.loss, self.grad_face, self.grad_voice))

    @property
    def active_fraction(self) -> float:
        return self.n_active / self.n_triplets if self.n_triplets else 0.0


def _check_triplets(t: np.ndarray, n_anchor: int, n_cand: int, name: str) -> None:
    if len(t) == 0:
        return
    if t.ndim != 2 or t.shape[1] != 3:
        raise ShapeError(f"{name} triplets must have shape (n, 3)")
    if t.min() < 0 or t[:, 0].max() >= n_anchor or t[:, 1:].max() >= n_cand:
        raise ShapeError(f"{name} triplet index out of batch range")


def _chain_cross(W: np.ndarray, U: np.ndarray, V: np.ndarray):
    """Gradients of sum(W * D(U, V)) w.r.t. U and V given W = dL/dD / D."""
    gU = W.sum(axis=1)[:, None] * U - W @ V
    gV = W.sum(axis=0)[:, None] * V - W.T @ U
    return gU, gV


def batch_loss(
    face_out,
    voice_out,
    triplets: TripletSet,
    w: LossWeights = LossWeights(),
    backend: str = None,
) -> LossResult:
    """Four-term hinge loss with exact subgradients w.r.t. both embedding batches.

    With ``reduction="mean"`` each term is averaged over its triplet list
    (an empty list contributes 0); with ``"sum"`` the raw sums are used.
    The distance gradient at ``d = 0`` is taken as zero.
    """
    F = np.asarray(face_out, dtype=np.float64)
    V = np.asarray(voice_out, dtype=np.float64)
    if F.ndim != 2 or V.ndim != 2 or F.shape[1] != V.shape[1]:
        raise ShapeError(f"face/voice batches must be (n, d) with a shared d, got {F.shape}, {V.shape}")
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(V))):
        raise NumericError("non-finite embeddings in batch_loss")
    nf, nv = len(F), len(V)
    _check_triplets(triplets.face_voice, nf, nv, "face-voice")
    _check_triplets(triplets.voice_face, nv, nf, "voice-face")
    _check_triplets(triplets.face_face, nf, nf, "face-face")
    _check_triplets(triplets.voice_voice, nv, nv, "voice-voice")

    D_fv = pairwise_distances(F, V)
    D_ff = pairwise_distances(F, F)
    D_vv = pairwise_distances(V, V)
    # each term's distance matrix, oriented anchor rows x candidate columns
    oriented = (D_fv, D_fv.T, D_ff, D_vv)
    terms = []
    coeff_grads = []
    n_active = 0
    for trip, D, weight in zip(triplets.terms, oriented, w.term_weights):
        if len(trip) == 0:
            terms.append(0.0)
            coeff_grads.append(None)
            continue
        h, G, active = kernels.hinge_scatter(D, trip, w.margin, backend=backend)
        n_active += active
        scale = 1.0 / len(trip) if w.reduction == "mean" else 1.0
        terms.append(math.fsum(h) * scale)
        coeff_grads.append(G * (weight * scale) if active else None)
    G1, G2, G3, G4 = coeff_grads
    M_fv = np.zeros_like(D_fv)
    if G1 is not None:
        M_fv += G1
    if G2 is not None:
        M_fv += G2.T
    M_ff = G3 if G3 is not None else np.zeros_like(D_ff)
    M_vv = G4 if G4 is not None else np.zeros_like(D_vv)
    loss = math.fsum(c * t for c, t in zip(w.term_weights, terms))

    def _ratio(M, D):
        out = np.zeros_like(M)
        nz = (M != 0) & (D > 0)
        out[nz] = M[nz] / D[nz]
        return out

    W_fv, W_ff, W_vv = _ratio(M_fv, D_fv), _ratio(M_ff, D_ff), _ratio(M_vv, D_vv)
    gF, gV = _chain_cross(W_fv, F, V)
    a, b = _chain_cross(W_ff, F, F)
    gF += a + b
    a, b = _chain_cross(W_vv, V, V)
    gV += a + b
    if not (math.isfinite(loss) and np.all(np.isfinite(gF)) and np.all(np.isfinite(gV))):
        raise NumericError("non-finite loss or gradient")
    return LossResult(loss, gF, gV, tuple(terms), n_active, triplets.total)
