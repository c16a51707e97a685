"""Language-annotated face/voice embedding corpora and their CSV format.

A corpus file looks like::

    sample_id,identity,modality,language,dim
    u1,alice,face,E,0.6,0.8

The header is fixed. Every data row carries the four metadata fields followed
by the embedding coordinates; the dimension is inferred per modality from the
first row of that modality and enforced afterwards.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence, TextIO, Union

import numpy as np

from .errors import CorpusFormatError, CorpusRowError, DuplicateSampleError

HEADER = ("sample_id", "identity", "modality", "language", "dim")
MODALITIES = ("face", "voice")

_LABEL_RE = re.compile(r"^[A-Za-z0-9_-]+$")


def _fmt(x: float) -> str:
    return format(x, ".17g")


@dataclass(frozen=True)
class EmbeddingRecord:
    sample_id: str
    identity: str
    modality: str
    language: str
    vector: tuple[float, ...]

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise CorpusFormatError(f"unknown modality {self.modality!r}")
        for name in ("sample_id", "identity", "language"):
            value = getattr(self, name)
            if not _LABEL_RE.match(value):
                raise CorpusFormatError(f"invalid {name} label {value!r}")

    @property
    def dim(self) -> int:
        return len(self.vector)


@dataclass(frozen=True)
class Corpus:
    """An immutable collection of embedding records.

    ``face_dim``/``voice_dim`` are ``None`` until a record of that modality
    has been seen. ``languages`` is the set of labels present in the records.
    """

    records: tuple[EmbeddingRecord, ...] = ()
    face_dim: Optional[int] = None
    voice_dim: Optional[int] = None
    languages: frozenset[str] = field(default_factory=frozenset)

    @classmethod
    def from_records(
        cls,
        records: Iterable[EmbeddingRecord],
        face_dim: Optional[int] = None,
        voice_dim: Optional[int] = None,
    ) -> "Corpus":
        """Validate records and build a corpus, inferring unset dimensions."""
        records = tuple(records)
        dims = {"face": face_dim, "voice": voice_dim}
        seen: set[str] = set()
        for i, rec in enumerate(records):
            if rec.sample_id in seen:
                raise DuplicateSampleError(i + 1, f"duplicate sample_id {rec.sample_id!r}")
            seen.add(rec.sample_id)
            expected = dims[rec.modality]
            if expected is None:
                if rec.dim < 1:
                    raise CorpusRowError(i + 1, "empty vector")
                dims[rec.modality] = rec.dim
            elif rec.dim != expected:
                raise CorpusRowError(
                    i + 1, f"{rec.modality} vector has {rec.dim} coordinates, expected {expected}"
                )
        languages = frozenset(r.language for r in records)
        return cls(records, dims["face"], dims["voice"], languages)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[EmbeddingRecord]:
        return iter(self.records)

    @property
    def identities(self) -> frozenset[str]:
        return frozenset(r.identity for r in self.records)

    def dim(self, modality: str) -> Optional[int]:
        return self.face_dim if modality == "face" else self.voice_dim

    def select(self, modality: str) -> list[EmbeddingRecord]:
        return [r for r in self.records if r.modality == modality]


def stack_vectors(records: Sequence[EmbeddingRecord], dim: Optional[int] = None) -> np.ndarray:
    """Stack record vectors into a float64 ``(n, dim)`` matrix."""
    if not records:
        return np.zeros((0, dim or 0))
    return np.array([r.vector for r in records], dtype=np.float64)


def _lines(source: Union[str, TextIO, Iterable[str]]) -> Iterable[str]:
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def parse_corpus(source: Union[str, TextIO, Iterable[str]]) -> Corpus:
    """Parse corpus CSV text (a string, an open text file or an iterable of lines).

    Raises:
        CorpusFormatError: the header is missing or wrong.
        CorpusRowError: a row has the wrong field count, a bad label or a
            non-numeric/non-finite coordinate. The error carries the line number.
        DuplicateSampleError: a sample_id repeats.
    """
    reader = csv.reader(_lines(source))
    try:
        header = next(reader)
    except StopIteration:
        raise CorpusFormatError("missing header") from None
    if tuple(h.strip() for h in header) != HEADER:
        raise CorpusFormatError(f"bad header {','.join(header)!r}, expected {','.join(HEADER)!r}")

    dims: dict[str, Optional[int]] = {"face": None, "voice": None}
    seen: set[str] = set()
    records = []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) < 5:
            raise CorpusRowError(line, f"expected metadata plus coordinates, got {len(row)} fields")
        sample_id, identity, modality, language = row[:4]
        if modality not in MODALITIES:
            raise CorpusRowError(line, f"unknown modality {modality!r}")
        for name, value in (("sample_id", sample_id), ("identity", identity), ("language", language)):
            if not _LABEL_RE.match(value):
                raise CorpusRowError(line, f"invalid {name} label {value!r}")
        n = len(row) - 4
        if dims[modality] is None:
            dims[modality] = n
        elif n != dims[modality]:
            raise CorpusRowError(line, f"expected {dims[modality]} coordinates for {modality}, got {n}")
        try:
            vector = tuple(float(x) for x in row[4:])
        except ValueError:
            raise CorpusRowError(line, "non-numeric coordinate") from None
        if not all(math.isfinite(x) for x in vector):
            raise CorpusRowError(line, "non-finite coordinate")
        if sample_id in seen:
            raise DuplicateSampleError(line, f"duplicate sample_id {sample_id!r}")
        seen.add(sample_id)
        records.append(EmbeddingRecord(sample_id, identity, modality, language, vector))
    return Corpus(tuple(records), dims["face"], dims["voice"], frozenset(r.language for r in records))


def read_corpus(path) -> Corpus:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_corpus(fh)


def write_corpus(corpus: Corpus) -> str:
    """Serialize a corpus; ``parse_corpus`` of the result reproduces it exactly."""
    out = [",".join(HEADER)]
    for r in corpus.records:
        out.append(",".join([r.sample_id, r.identity, r.modality, r.language, *map(_fmt, r.vector)]))
    return "\n".join(out) + "\n"


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(write_corpus(corpus))


def filter_corpus(
    corpus: Corpus,
    by_language: Optional[str] = None,
    by_modality: Optional[str] = None,
    by_identities: Optional[Iterable[str]] = None,
) -> Corpus:
    """Conjunctive filter. Dimensions of the input corpus are kept."""
    ids = None if by_identities is None else frozenset(by_identities)
    kept = tuple(
        r
        for r in corpus.records
        if (by_language is None or r.language == by_language)
        and (by_modality is None or r.modality == by_modality)
        and (ids is None or r.identity in ids)
    )
    return Corpus(kept, corpus.face_dim, corpus.voice_dim, frozenset(r.language for r in kept))
