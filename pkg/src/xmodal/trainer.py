"""Seeded P x K mini-batch sampling and SGD-with-momentum training."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CapacityError, NumericError
from .store import Corpus, EmbeddingRecord, stack_vectors
from .triplet import LossResult, LossWeights, batch_loss, mine_triplets
from .twobranch import TwoBranchModel, branch_backward, branch_forward, init_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    P: int = 8
    K: int = 4
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 20
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    hidden_dim: int = 1024
    out_dim: int = 256

    def __post_init__(self):
        if self.P < 2:
            raise ValueError("P must be >= 2 so that negatives exist")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


@dataclass
class Batch:
    face_x: np.ndarray
    face_labels: list[str]
    voice_x: np.ndarray
    voice_labels: list[str]


@dataclass
class TrainHistory:
    mean_loss: list[float] = field(default_factory=list)
    active_fraction: list[float] = field(default_factory=list)
    degenerate_outputs: int = 0

    def to_csv(self) -> str:
        lines = ["epoch,mean_loss,active_fraction"]
        for i, (loss, frac) in enumerate(zip(self.mean_loss, self.active_fraction)):
            lines.append(f"{i + 1},{loss:.17g},{frac:.17g}")
        return "\n".join(lines) + "\n"


class _BatchIndex:
    """Per-identity face/voice record lists, in corpus order."""

    def __init__(self, corpus: Corpus):
        self.faces: dict[str, list[EmbeddingRecord]] = {}
        self.voices: dict[str, list[EmbeddingRecord]] = {}
        for r in corpus.records:
            bucket = self.faces if r.modality == "face" else self.voices
            bucket.setdefault(r.identity, []).append(r)
        self.identities = sorted(set(self.faces) | set(self.voices))
        self.face_dim = corpus.face_dim
        self.voice_dim = corpus.voice_dim

    def eligible(self, K: int) -> list[str]:
        return [
            i for i in self.identities
            if len(self.faces.get(i, ())) >= K and len(self.voices.get(i, ())) >= K
        ]

    def sample(self, P: int, K: int, rng: np.random.Generator) -> Batch:
        eligible = self.eligible(K)
        if len(eligible) < P:
            deficient = [i for i in self.identities if i not in eligible]
            detail = f"; {deficient[0]} has fewer than {K} face or voice records" if deficient else ""
            raise CapacityError(f"need {P} identities with >= {K} records per modality, found {len(eligible)}{detail}")
        chosen = [eligible[j] for j in rng.choice(len(eligible), size=P, replace=False)]
        faces, voices = [], []
        for ident in chosen:
            fs, vs = self.faces[ident], self.voices[ident]
            faces.extend(fs[j] for j in rng.choice(len(fs), size=K, replace=False))
            voices.extend(vs[j] for j in rng.choice(len(vs), size=K, replace=False))
        return Batch(
            stack_vectors(faces, self.face_dim),
            [r.identity for r in faces],
            stack_vectors(voices, self.voice_dim),
            [r.identity for r in voices],
        )


def sample_minibatch(corpus: Corpus, cfg: TrainConfig, rng: np.random.Generator) -> Batch:
    """Draw P identities without replacement, then K faces and K voices of each.

    ``rng`` is advanced; two generators in the same state yield the same batch.
    """
    return _BatchIndex(corpus).sample(cfg.P, cfg.K, rng)


def _zeros_like(model: TwoBranchModel) -> TwoBranchModel:
    return TwoBranchModel(model.face.zeros_like(), model.voice.zeros_like())


@dataclass
class StepResult:
    loss: float
    active_fraction: float
    degenerate: int


def train_step(
    model: TwoBranchModel,
    batch: Batch,
    cfg: TrainConfig,
    velocity: Optional[TwoBranchModel] = None,
) -> tuple[TwoBranchModel, TwoBranchModel, StepResult]:
    """One SGD-with-momentum update; ``model`` and ``velocity`` are updated in place.

    The reported loss is the pre-update value. If the loss or any gradient is
    non-finite a NumericError is raised before anything is modified.
    """
    if velocity is None:
        velocity = _zeros_like(model)
    F, f_cache = branch_forward(model.face, batch.face_x)
    V, v_cache = branch_forward(model.voice, batch.voice_x)
    triplets = mine_triplets(batch.face_labels, batch.voice_labels)
    res: LossResult = batch_loss(F, V, triplets, cfg.loss_weights)
    g_face, _ = branch_backward(model.face, f_cache, res.grad_face)
    g_voice, _ = branch_backward(model.voice, v_cache, res.grad_voice)
    grads = (*g_face.arrays(), *g_voice.arrays())
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise NumericError("non-finite parameter gradient")
    params = (*model.face.arrays(), *model.voice.arrays())
    vel = (*velocity.face.arrays(), *velocity.voice.arrays())
    for p, v, g in zip(params, vel, grads):
        v *= cfg.momentum
        v -= cfg.learning_rate * g
        p += v
    degenerate = int(f_cache.degenerate.sum() + v_cache.degenerate.sum())
    return model, velocity, StepResult(res.loss, res.active_fraction, degenerate)


def steps_per_epoch(corpus: Corpus, cfg: TrainConfig) -> int:
    return max(1, math.ceil(len(corpus) / (cfg.P * cfg.K)))


def train(
    corpus: Corpus,
    cfg: TrainConfig,
    on_epoch_end: Optional[Callable[[int, TwoBranchModel, TrainHistory], None]] = None,
) -> tuple[TwoBranchModel, TrainHistory]:
    """Train a fresh model on ``corpus``.

    The caller restricts ``corpus`` to the training language and identities.
    The model is ``init_model(..., seed=cfg.seed)``; batches come from a
    separate stream keyed on ``(cfg.seed, 1)``. ``on_epoch_end`` can be used
    for checkpointing.
    """
    if corpus.face_dim is None or corpus.voice_dim is None:
        raise CapacityError("training corpus needs both face and voice records")
    if cfg.K == 1:
        log.warning("K=1: intra-modal (face-face, voice-voice) terms have no positives")
    model = init_model(corpus.face_dim, corpus.voice_dim, cfg.hidden_dim, cfg.out_dim, seed=cfg.seed)
    history = TrainHistory()
    if cfg.epochs == 0:
        return model, history
    rng = np.random.default_rng([cfg.seed, 1])
    index = _BatchIndex(corpus)
    velocity = _zeros_like(model)
    n_steps = steps_per_epoch(corpus, cfg)
    for epoch in range(cfg.epochs):
        losses, fractions = [], []
        for _ in range(n_steps):
            batch = index.sample(cfg.P, cfg.K, rng)
            _, _, step = train_step(model, batch, cfg, velocity)
            losses.append(step.loss)
            fractions.append(step.active_fraction)
            history.degenerate_outputs += step.degenerate
        history.mean_loss.append(math.fsum(losses) / n_steps)
        history.active_fraction.append(math.fsum(fractions) / n_steps)
        log.debug("epoch %d loss %.6f active %.3f", epoch + 1, history.mean_loss[-1], history.active_fraction[-1])
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, model, history)
    return model, history
