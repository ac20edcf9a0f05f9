"""Query-log feature extraction.

Turns per-user search histories into the classifier's input space: symptom
mention counts against a layperson-phrase lexicon, prevalence-filtered word
and word-pair counts, plus age and sex.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .rules import Sex

PREVALENCE_THRESHOLD = 0.05
MIN_HISTORY_DAYS = 14

SEX_ENCODING = {Sex.FEMALE: 1.0, Sex.MALE: 0.0, Sex.UNSPECIFIED: 0.5}

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class QueryRecord:
    user_id: str
    timestamp: datetime
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("query text empty after trim")


@dataclass
class UserHistory:
    user_id: str
    records: list[QueryRecord]
    anchor: datetime
    age: int
    sex: Sex
    label: str | None = None  # "HIGH" | "LOW" when known

    def span(self) -> timedelta:
        if not self.records:
            return timedelta(0)
        return self.records[-1].timestamp - self.records[0].timestamp


@dataclass(frozen=True)
class SymptomLexicon:
    # phrase tuples are pre-normalized token sequences
    symptom_ids: tuple[str, ...]
    phrases: tuple[tuple[str, tuple[str, ...]], ...]  # (symptom_id, tokens)

    @classmethod
    def from_entries(cls, entries: Iterable[dict]) -> "SymptomLexicon":
        ids: list[str] = []
        phrases: list[tuple[str, tuple[str, ...]]] = []
        for entry in entries:
            sid = entry["symptom_id"]
            if sid in ids:
                raise ValueError(f"duplicate symptom id {sid!r}")
            ids.append(sid)
            for phrase in entry["phrases"]:
                toks = tuple(normalize(phrase))
                if not toks:
                    raise ValueError(f"symptom {sid!r}: empty phrase {phrase!r}")
                phrases.append((sid, toks))
        return cls(symptom_ids=tuple(ids), phrases=tuple(phrases))

    @classmethod
    def from_file(cls, path: str | Path) -> "SymptomLexicon":
        doc = json.loads(Path(path).read_text())
        return cls.from_entries(doc["entries"])


@dataclass(frozen=True)
class Vocabulary:
    # ordered: descending user prevalence, ties broken lexicographically
    terms: tuple[str, ...]
    prevalences: tuple[float, ...]
    built_from_n_users: int

    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.terms)}


@dataclass
class FeatureVector:
    symptom_counts: dict[str, int]
    term_counts: dict[str, int]
    age: int
    sex: float
    label: str | None = None


def default_lexicon_path() -> Path:
    return Path(__file__).parent / "data" / "lexicon.json"


def default_stopwords_path() -> Path:
    return Path(__file__).parent / "data" / "stopwords.txt"


def load_stopwords(path: str | Path) -> frozenset[str]:
    words = set()
    for line in Path(path).read_text().splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


def normalize(text: str) -> list[str]:
    """Lowercase, split on any non-alphanumeric run, drop empty tokens."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def _contains_subsequence(tokens: Sequence[str], phrase: Sequence[str]) -> bool:
    n, m = len(tokens), len(phrase)
    for i in range(n - m + 1):
        if tuple(tokens[i : i + m]) == tuple(phrase):
            return True
    return False


def count_symptoms(h: UserHistory, lex: SymptomLexicon) -> dict[str, int]:
    """Symptom mention counts over a history.

    A symptom counts once per query in which any of its phrases appears as a
    contiguous normalized-token subsequence; counts are summed over queries.
    """
    counts = {sid: 0 for sid in lex.symptom_ids}
    for rec in h.records:
        tokens = normalize(rec.text)
        seen: set[str] = set()
        for sid, phrase in lex.phrases:
            if sid not in seen and _contains_subsequence(tokens, phrase):
                seen.add(sid)
        for sid in seen:
            counts[sid] += 1
    return counts


def _query_terms(tokens: Sequence[str], stopwords: frozenset[str]) -> list[str]:
    """Unigrams (stopwords removed) plus bigrams of originally-adjacent
    non-stopword tokens."""
    keep = [t not in stopwords for t in tokens]
    terms = [t for t, k in zip(tokens, keep) if k]
    for i in range(len(tokens) - 1):
        if keep[i] and keep[i + 1]:
            terms.append(f"{tokens[i]} {tokens[i + 1]}")
    return terms


def build_vocabulary(
    histories: Sequence[UserHistory], stopwords: frozenset[str]
) -> Vocabulary:
    """Prevalence-filtered unigram/bigram vocabulary.

    Prevalence is the fraction of distinct users whose histories contain the
    term at least once; terms at or above the 5% threshold are retained.
    """
    if not histories:
        raise ValueError("no users: cannot build a vocabulary from an empty corpus")
    n_users = len(histories)
    user_counts: dict[str, int] = {}
    for h in histories:
        seen: set[str] = set()
        for rec in h.records:
            seen.update(_query_terms(normalize(rec.text), stopwords))
        for term in seen:
            user_counts[term] = user_counts.get(term, 0) + 1
    kept = [
        (term, c / n_users)
        for term, c in user_counts.items()
        if c / n_users >= PREVALENCE_THRESHOLD
    ]
    kept.sort(key=lambda tp: (-tp[1], tp[0]))
    return Vocabulary(
        terms=tuple(t for t, _ in kept),
        prevalences=tuple(p for _, p in kept),
        built_from_n_users=n_users,
    )


def filter_eligible(histories: Sequence[UserHistory]) -> list[UserHistory]:
    """Keep histories spanning at least 14 days (first to last record)."""
    floor = timedelta(days=MIN_HISTORY_DAYS)
    return [h for h in histories if h.span() >= floor]


def vectorize(h: UserHistory, lex: SymptomLexicon, v: Vocabulary) -> FeatureVector:
    """Raw count totals over the history window plus age and encoded sex."""
    vocab = set(v.terms)
    term_counts = {t: 0 for t in v.terms}
    for rec in h.records:
        for term in _query_terms(normalize(rec.text), frozenset()):
            if term in vocab:
                term_counts[term] += 1
    # unigram occurrences above include stopword tokens; recount against the
    # vocabulary only, so stopword filtering is irrelevant (stopwords were
    # already excluded at vocabulary build time)
    return FeatureVector(
        symptom_counts=count_symptoms(h, lex),
        term_counts=term_counts,
        age=h.age,
        sex=SEX_ENCODING[h.sex],
        label=h.label,
    )


def feature_names(lex: SymptomLexicon, v: Vocabulary) -> list[str]:
    """Fixed dense column ordering shared by vectorize and the learner."""
    names = [f"symptom:{sid}" for sid in lex.symptom_ids]
    names += [f"term:{t}" for t in v.terms]
    names += ["age", "sex"]
    return names


def to_dense(fv: FeatureVector, lex: SymptomLexicon, v: Vocabulary) -> list[float]:
    row = [float(fv.symptom_counts[sid]) for sid in lex.symptom_ids]
    row += [float(fv.term_counts[t]) for t in v.terms]
    row += [float(fv.age), fv.sex]
    return row


def load_query_logs(
    logs_path: str | Path, profiles_path: str | Path
) -> list[UserHistory]:
    """Load JSON-Lines query logs plus the sidecar profile file.

    Log records: ``{user_id, ts, text}`` (RFC 3339 timestamps); profiles:
    ``{user_id, age, sex, anchor_ts, label?}``.  Records outside the
    90-days-before-anchor window are rejected.
    """
    profiles: dict[str, dict] = {}
    for lineno, line in enumerate(Path(profiles_path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            p = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValueError(f"{profiles_path}:{lineno}: {e}") from None
        profiles[p["user_id"]] = p

    records: dict[str, list[QueryRecord]] = {}
    for lineno, line in enumerate(Path(logs_path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            rec = QueryRecord(
                user_id=obj["user_id"],
                timestamp=datetime.fromisoformat(obj["ts"].replace("Z", "+00:00")),
                text=obj["text"],
            )
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise ValueError(f"{logs_path}:{lineno}: {e}") from None
        records.setdefault(rec.user_id, []).append(rec)

    histories = []
    for user_id, profile in sorted(profiles.items()):
        recs = sorted(records.get(user_id, []), key=lambda r: r.timestamp)
        anchor = datetime.fromisoformat(profile["anchor_ts"].replace("Z", "+00:00"))
        window_start = anchor - timedelta(days=90)
        for r in recs:
            if not window_start <= r.timestamp <= anchor:
                raise ValueError(
                    f"user {user_id!r}: record at {r.timestamp.isoformat()} outside "
                    f"the 90-day window ending at the anchor"
                )
        histories.append(
            UserHistory(
                user_id=user_id,
                records=recs,
                anchor=anchor,
                age=int(profile["age"]),
                sex=Sex(profile["sex"]),
                label=profile.get("label"),
            )
        )
    return histories


def utc(y: int, mo: int, d: int, h: int = 0, mi: int = 0, s: int = 0) -> datetime:
    return datetime(y, mo, d, h, mi, s, tzinfo=timezone.utc)
