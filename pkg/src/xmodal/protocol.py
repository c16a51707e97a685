"""Heard/unheard-language evaluation protocols.

Three split kinds are supported:

``cross_modal_verification``
    Disjoint train/test identities; a face-voice model trained on one
    language is scored on face-voice trials in every test language.
``speaker_verification``
    Disjoint train/test identities; voice-voice trials.
``speaker_identification``
    Same identities on both sides; voice samples of the training language are
    partitioned into train/test, and all other-language samples are test.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ProtocolError
from .metrics import ScoredPairs, compute_eer, make_pairs, score_pairs, top1_accuracy
from .store import Corpus, EmbeddingRecord, filter_corpus, stack_vectors
from .twobranch import TwoBranchModel

KINDS = ("cross_modal_verification", "speaker_identification", "speaker_verification")
REPORT_HEADER = ("kind", "train_lang", "test_lang", "heard", "metric", "value", "seed")


@dataclass(frozen=True)
class SplitSpec:
    kind: str
    train_identities: frozenset[str]
    test_identities: frozenset[str]
    train_language: str
    test_languages: tuple[str, ...]
    # identification only: identity -> sample ids
    train_samples: dict[str, frozenset[str]] = field(default_factory=dict)
    test_samples: dict[str, dict[str, frozenset[str]]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProtocolError(f"unknown split kind {self.kind!r}")
        if self.kind == "speaker_identification":
            if self.train_identities != self.test_identities:
                raise ProtocolError("identification splits use the same identities for train and test")
            for ident, ids in self.train_samples.items():
                for lang, test_ids in self.test_samples.get(ident, {}).items():
                    if ids & test_ids:
                        raise ProtocolError(f"{ident}: train and test samples overlap in {lang}")
        elif self.train_identities & self.test_identities:
            raise ProtocolError("verification splits need disjoint train and test identities")

    def validate_against(self, corpus: Corpus) -> None:
        known = corpus.identities
        missing = (self.train_identities | self.test_identities) - known
        if missing:
            raise ProtocolError(f"split references unknown identities: {sorted(missing)[:5]}")
        sample_ids = {r.sample_id for r in corpus.records}
        for ident, ids in self.train_samples.items():
            referenced = set(ids).union(*self.test_samples.get(ident, {}).values())
            if not referenced <= sample_ids:
                raise ProtocolError(f"{ident}: split references unknown sample ids")

    def to_json(self) -> str:
        payload = {
            "kind": self.kind,
            "train_language": self.train_language,
            "test_languages": list(self.test_languages),
            "train_identities": sorted(self.train_identities),
            "test_identities": sorted(self.test_identities),
            "train_samples": {k: sorted(v) for k, v in sorted(self.train_samples.items())},
            "test_samples": {
                k: {lang: sorted(ids) for lang, ids in sorted(v.items())}
                for k, v in sorted(self.test_samples.items())
            },
        }
        return json.dumps(payload, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SplitSpec":
        try:
            d = json.loads(text)
            return cls(
                kind=d["kind"],
                train_identities=frozenset(d["train_identities"]),
                test_identities=frozenset(d["test_identities"]),
                train_language=d["train_language"],
                test_languages=tuple(d["test_languages"]),
                train_samples={k: frozenset(v) for k, v in d.get("train_samples", {}).items()},
                test_samples={
                    k: {lang: frozenset(ids) for lang, ids in v.items()}
                    for k, v in d.get("test_samples", {}).items()
                },
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"malformed split file: {exc}") from None


def _test_languages(corpus: Corpus, train_language: str, test_languages: Optional[Sequence[str]]):
    if test_languages is None:
        return (train_language, *sorted(corpus.languages - {train_language}))
    return tuple(test_languages)


def make_identity_split(
    corpus: Corpus,
    n_test_identities: int,
    train_language: str,
    seed: int,
    kind: str = "cross_modal_verification",
    test_languages: Optional[Sequence[str]] = None,
) -> SplitSpec:
    """Seeded identity-disjoint split for the verification kinds.

    Test identities are drawn uniformly among those having every modality the
    protocol needs (face and voice for cross-modal, voice for speaker
    verification) in every test language; the rest of the corpus is train.
    """
    if kind == "speaker_identification":
        raise ProtocolError("use make_identification_split for identification")
    if n_test_identities < 1:
        raise ProtocolError("n_test_identities must be positive")
    langs = _test_languages(corpus, train_language, test_languages)
    identities = sorted(corpus.identities)
    if len(identities) < n_test_identities + 2:
        raise ProtocolError(
            f"corpus has {len(identities)} identities; need at least {n_test_identities + 2}"
        )
    needed = {"face", "voice"} if kind == "cross_modal_verification" else {"voice"}
    have: dict[str, set[tuple[str, str]]] = {}
    for r in corpus.records:
        have.setdefault(r.identity, set()).add((r.modality, r.language))
    eligible = [
        i for i in identities if all((m, lang) in have[i] for m in needed for lang in langs)
    ]
    if len(eligible) < n_test_identities:
        raise ProtocolError(
            f"only {len(eligible)} identities have {sorted(needed)} records in all of {list(langs)}"
        )
    rng = np.random.default_rng(seed)
    test = frozenset(eligible[j] for j in rng.choice(len(eligible), size=n_test_identities, replace=False))
    train = frozenset(identities) - test
    return SplitSpec(kind, train, test, train_language, langs)


def make_cross_modal_split(
    corpus: Corpus,
    n_test_identities: int,
    train_language: str,
    seed: int,
    test_languages: Optional[Sequence[str]] = None,
) -> SplitSpec:
    return make_identity_split(
        corpus, n_test_identities, train_language, seed, "cross_modal_verification", test_languages
    )


def make_identification_split(
    corpus: Corpus,
    test_fraction: float,
    seed: int,
    train_language: str,
    test_languages: Optional[Sequence[str]] = None,
) -> SplitSpec:
    """Per-identity split of training-language voice tracks.

    Each identity keeps ``round(test_fraction * n)`` of its ``n``
    training-language voice samples for test (clamped so both sides are
    non-empty); every voice sample in the other test languages is test data.
    """
    if not 0 < test_fraction < 1:
        raise ProtocolError("test_fraction must lie in (0, 1)")
    langs = _test_languages(corpus, train_language, test_languages)
    voices: dict[str, dict[str, list[str]]] = {}
    for r in corpus.records:
        if r.modality == "voice":
            voices.setdefault(r.identity, {}).setdefault(r.language, []).append(r.sample_id)
    if not voices:
        raise ProtocolError("corpus has no voice records")
    rng = np.random.default_rng(seed)
    train_samples, test_samples = {}, {}
    for ident in sorted(voices):
        by_lang = voices[ident]
        heard = sorted(by_lang.get(train_language, []))
        if len(heard) < 2:
            raise ProtocolError(f"{ident} has {len(heard)} voice samples in {train_language}; need 2")
        for lang in langs:
            if lang != train_language and not by_lang.get(lang):
                raise ProtocolError(f"{ident} has no voice samples in {lang}")
        n_test = min(max(int(round(test_fraction * len(heard))), 1), len(heard) - 1)
        order = rng.permutation(len(heard))
        test_ids = frozenset(heard[j] for j in order[:n_test])
        train_samples[ident] = frozenset(heard) - test_ids
        test_samples[ident] = {
            lang: test_ids if lang == train_language else frozenset(by_lang[lang]) for lang in langs
        }
    identities = frozenset(voices)
    return SplitSpec(
        "speaker_identification", identities, identities, train_language, langs,
        train_samples, test_samples,
    )


# -- reports -------------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    kind: str
    train_lang: str
    test_lang: str
    heard: bool
    metric: str
    value: float
    seed: int


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)

    def value(self, metric: str, test_lang: str) -> float:
        for r in self.rows:
            if r.metric == metric and r.test_lang == test_lang:
                return r.value
        raise KeyError((metric, test_lang))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in self.rows:
            w.writerow([r.kind, r.train_lang, r.test_lang, int(r.heard), r.metric, format(r.value, ".17g"), r.seed])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != REPORT_HEADER:
            raise ProtocolError(f"bad report header {header!r}")
        rows = []
        for line in reader:
            if not line:
                continue
            if len(line) != len(REPORT_HEADER):
                raise ProtocolError(f"report line {reader.line_num}: expected {len(REPORT_HEADER)} fields")
            kind, tr, te, heard, metric, value, seed = line
            rows.append(ReportRow(kind, tr, te, heard == "1", metric, float(value), int(seed)))
        return cls(rows)


def _heard_rows(split: SplitSpec, metric: str, values: dict[str, float], seed: int) -> list[ReportRow]:
    return [
        ReportRow(split.kind, split.train_language, lang, lang == split.train_language, metric, values[lang], seed)
        for lang in split.test_languages
    ]


def percentage_change_rows(report: EvalReport) -> list[ReportRow]:
    """Heard-vs-unheard change for every unheard row.

    Top-1 yields ``top1_pct_decrease = 100 (heard - unheard) / heard``; EER
    yields ``eer_pct_increase = 100 (unheard - heard) / heard``. Positive
    values mean the unheard language is worse. A zero heard value gives nan.
    """
    direction = {"top1": ("top1_pct_decrease", 1.0), "eer": ("eer_pct_increase", -1.0)}
    heard = {
        (r.kind, r.train_lang, r.metric, r.seed): r.value
        for r in report.rows
        if r.heard and r.metric in direction
    }
    out = []
    for r in report.rows:
        if r.heard or r.metric not in direction:
            continue
        base = heard.get((r.kind, r.train_lang, r.metric, r.seed))
        if base is None:
            continue
        name, sign = direction[r.metric]
        pct = sign * 100.0 * (base - r.value) / base if base != 0 else math.nan
        out.append(ReportRow(r.kind, r.train_lang, r.test_lang, False, name, pct, r.seed))
    return out


def merge_reports(reports: Iterable[EvalReport]) -> EvalReport:
    rows = [r for rep in reports for r in rep.rows if r.metric in ("eer", "top1")]
    merged = EvalReport(rows)
    merged.rows.extend(percentage_change_rows(merged))
    return merged


# -- evaluations ---------------------------------------------------------------


def _require(split: SplitSpec, kind: str) -> None:
    if split.kind != kind:
        raise ProtocolError(f"expected a {kind} split, got {split.kind}")


def cross_modal_scores(
    model: TwoBranchModel,
    corpus: Corpus,
    split: SplitSpec,
    test_language: str,
    pair_policy: str = "exhaustive",
    seed: int = 0,
) -> ScoredPairs:
    test = filter_corpus(corpus, by_language=test_language, by_identities=split.test_identities)
    pairs = make_pairs(test.select("face"), test.select("voice"), pair_policy, seed)
    return score_pairs(model, pairs)


def evaluate_cross_modal(
    model: TwoBranchModel,
    corpus: Corpus,
    split: SplitSpec,
    pair_policy: str = "exhaustive",
    seed: int = 0,
) -> EvalReport:
    """Face-voice EER over the test identities, one row per test language."""
    _require(split, "cross_modal_verification")
    values = {
        lang: compute_eer(cross_modal_scores(model, corpus, split, lang, pair_policy, seed))[0]
        for lang in split.test_languages
    }
    return EvalReport(_heard_rows(split, "eer", values, seed))


def speaker_verification_scores(
    corpus: Corpus,
    split: SplitSpec,
    test_language: str,
    model: Optional[TwoBranchModel] = None,
    pair_policy: str = "exhaustive",
    seed: int = 0,
) -> ScoredPairs:
    """Voice-voice trials: training-language enrollment vs test-language probes.

    For the heard language both sides come from the same voice pool and each
    unordered pair is used once.
    """
    test = filter_corpus(corpus, by_modality="voice", by_identities=split.test_identities)
    enroll = [r for r in test.records if r.language == split.train_language]
    probe = [r for r in test.records if r.language == test_language]
    pairs = make_pairs(enroll, probe, pair_policy, seed)
    return score_pairs(model, pairs)


def evaluate_speaker_verification(
    corpus: Corpus,
    split: SplitSpec,
    model: Optional[TwoBranchModel] = None,
    pair_policy: str = "exhaustive",
    seed: int = 0,
) -> EvalReport:
    """Voice-voice EER per test language, scored on raw embeddings unless a
    model is given (then its voice branch is used)."""
    _require(split, "speaker_verification")
    values = {
        lang: compute_eer(speaker_verification_scores(corpus, split, lang, model, pair_policy, seed))[0]
        for lang in split.test_languages
    }
    return EvalReport(_heard_rows(split, "eer", values, seed))


@dataclass
class LinearClassifier:
    """Multinomial logistic regression over raw voice embeddings."""

    W: np.ndarray  # (n_classes, dim)
    b: np.ndarray  # (n_classes,)
    classes: tuple[str, ...]

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.W.T + self.b

    def predict(self, X: np.ndarray) -> list[str]:
        return [self.classes[j] for j in np.argmax(self.logits(X), axis=1)]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_linear_classifier(
    voice_records: Sequence[EmbeddingRecord],
    identities: Iterable[str],
    epochs: int = 100,
    lr: float = 0.5,
    seed: int = 0,
    batch_size: int = 32,
) -> LinearClassifier:
    """Cross-entropy minibatch gradient descent from zero weights.

    Minibatch order is shuffled each epoch with ``seed``.
    """
    classes = tuple(sorted(set(identities)))
    if not classes:
        raise ProtocolError("no identities to classify")
    records = [r for r in voice_records if r.identity in set(classes)]
    counts = {c: 0 for c in classes}
    for r in records:
        counts[r.identity] += 1
    empty = [c for c, n in counts.items() if n == 0]
    if empty:
        raise ProtocolError(f"identity {empty[0]} has no training records")
    X = stack_vectors(records)
    col = {c: j for j, c in enumerate(classes)}
    y = np.array([col[r.identity] for r in records])
    Y = np.eye(len(classes))[y]
    W = np.zeros((len(classes), X.shape[1]))
    b = np.zeros(len(classes))
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), batch_size):
            idx = order[start:start + batch_size]
            G = (_softmax(X[idx] @ W.T + b) - Y[idx]) / len(idx)
            W -= lr * (G.T @ X[idx])
            b -= lr * G.sum(axis=0)
    return LinearClassifier(W, b, classes)


def evaluate_identification(
    classifier: LinearClassifier,
    corpus: Corpus,
    split: SplitSpec,
    seed: int = 0,
) -> EvalReport:
    """Top-1 accuracy on the split's test samples, one row per test language."""
    _require(split, "speaker_identification")
    by_id = {r.sample_id: r for r in corpus.records}
    values = {}
    for lang in split.test_languages:
        recs = [
            by_id[sid]
            for ident in sorted(split.test_samples)
            for sid in sorted(split.test_samples[ident].get(lang, ()))
        ]
        if not recs:
            raise ProtocolError(f"no test samples in {lang}")
        values[lang] = top1_accuracy(classifier.predict(stack_vectors(recs)), [r.identity for r in recs])
    return EvalReport(_heard_rows(split, "top1", values, seed))


def identification_training_records(corpus: Corpus, split: SplitSpec) -> list[EmbeddingRecord]:
    _require(split, "speaker_identification")
    wanted = frozenset().union(*split.train_samples.values()) if split.train_samples else frozenset()
    return [r for r in corpus.records if r.sample_id in wanted]
