"""Questionnaire rule engine.

Evaluates questionnaire responses against a declarative referral ruleset and
produces a binary suspected-cancer score (HIGH/LOW) with advice text.  The
engine is fully data-driven; rule content lives in JSON documents (see
``data/rulesets/``).  Everything here is immutable after load and safe for
concurrent use.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

HIGH_ADVICE = (
    "Your answers suggest symptoms that warrant attention. "
    "Please consult with a doctor immediately."
)
LOW_ADVICE = (
    "Your symptoms are not commonly associated with cancer. "
    "If they are persistent or worrying, please see a medical doctor."
)

CANCER_TYPES = ("breast", "colon", "lung")


class RulesetError(ValueError):
    """Malformed or internally inconsistent ruleset document."""


class ResponseError(ValueError):
    """Response does not validate against its questionnaire."""


class Scs(str, Enum):
    HIGH = "HIGH"
    LOW = "LOW"


class Sex(str, Enum):
    FEMALE = "female"
    MALE = "male"
    UNSPECIFIED = "unspecified"


@dataclass(frozen=True)
class Question:
    id: str
    prompt: str
    kind: str  # "boolean" | "integer-range" | "choice"
    allowed: Any = None  # [min, max] for integer-range, option list for choice

    def validate(self) -> None:
        if self.kind not in ("boolean", "integer-range", "choice"):
            raise RulesetError(f"question {self.id!r}: unknown kind {self.kind!r}")
        if self.kind == "integer-range":
            if (
                not isinstance(self.allowed, (list, tuple))
                or len(self.allowed) != 2
                or self.allowed[0] > self.allowed[1]
            ):
                raise RulesetError(f"question {self.id!r}: bad integer-range bounds")
        if self.kind == "choice":
            if not self.allowed or len(set(self.allowed)) != len(self.allowed):
                raise RulesetError(f"question {self.id!r}: choice options empty or duplicated")

    def accepts(self, value: Any) -> bool:
        if self.kind == "boolean":
            return isinstance(value, bool)
        if self.kind == "integer-range":
            return (
                isinstance(value, int)
                and not isinstance(value, bool)
                and self.allowed[0] <= value <= self.allowed[1]
            )
        return value in self.allowed


@dataclass(frozen=True)
class ReferralRule:
    id: str
    all_of: Mapping[str, Any] = field(default_factory=dict)
    any_of: Mapping[str, Any] = field(default_factory=dict)
    min_age: int | None = None
    max_age: int | None = None
    sex: str = "any"  # "female" | "male" | "any"

    def validate(self) -> None:
        if not self.all_of and not self.any_of:
            raise RulesetError(f"rule {self.id!r}: all_of and any_of both empty")
        if self.min_age is not None and self.max_age is not None and self.min_age > self.max_age:
            raise RulesetError(f"rule {self.id!r}: min_age > max_age")
        if self.sex not in ("female", "male", "any"):
            raise RulesetError(f"rule {self.id!r}: bad sex {self.sex!r}")

    def referenced_questions(self) -> set[str]:
        return set(self.all_of) | set(self.any_of)


@dataclass(frozen=True)
class Response:
    questionnaire_version: str
    answers: Mapping[str, Any]
    age: int
    sex: Sex = Sex.UNSPECIFIED


@dataclass(frozen=True)
class SCSResult:
    scs: Scs
    fired_rules: tuple[str, ...]
    advice: str


@dataclass(frozen=True)
class Questionnaire:
    cancer_type: str
    version: str
    questions: tuple[Question, ...]
    rules: tuple[ReferralRule, ...]

    def question(self, qid: str) -> Question:
        for q in self.questions:
            if q.id == qid:
                return q
        raise KeyError(qid)

    @property
    def question_ids(self) -> tuple[str, ...]:
        return tuple(q.id for q in self.questions)

    def rule_referenced_questions(self) -> set[str]:
        refs: set[str] = set()
        for rule in self.rules:
            refs |= rule.referenced_questions()
        return refs


_TOP_KEYS = {"cancer_type", "version", "questions", "rules"}
_QUESTION_KEYS = {"id", "prompt", "kind", "allowed"}
_RULE_KEYS = {"id", "all_of", "any_of", "min_age", "max_age", "sex"}


def _check_keys(obj: Mapping[str, Any], allowed: set[str], ctx: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise RulesetError(f"{ctx}: unknown keys {sorted(unknown)}")


def load_ruleset(source: str | Path | Mapping[str, Any]) -> Questionnaire:
    """Parse and validate a ruleset document (path, JSON text, or parsed dict).

    Strict mode: unknown keys anywhere in the document are an error.
    """
    if isinstance(source, Path):
        doc = json.loads(source.read_text())
    elif isinstance(source, str):
        p = Path(source)
        text = p.read_text() if p.exists() else source
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise RulesetError(f"ruleset parse error: {e}") from None
    else:
        doc = source
    if not isinstance(doc, dict):
        raise RulesetError("ruleset document must be a JSON object")

    _check_keys(doc, _TOP_KEYS, "ruleset")
    for key in ("cancer_type", "version", "questions", "rules"):
        if key not in doc:
            raise RulesetError(f"ruleset: missing key {key!r}")

    questions = []
    for qdoc in doc["questions"]:
        _check_keys(qdoc, _QUESTION_KEYS, f"question {qdoc.get('id')!r}")
        q = Question(
            id=qdoc["id"],
            prompt=qdoc["prompt"],
            kind=qdoc["kind"],
            allowed=qdoc.get("allowed"),
        )
        q.validate()
        questions.append(q)
    qids = [q.id for q in questions]
    dupes = {qid for qid in qids if qids.count(qid) > 1}
    if dupes:
        raise RulesetError(f"duplicate question ids {sorted(dupes)}")

    rules = []
    for rdoc in doc["rules"]:
        _check_keys(rdoc, _RULE_KEYS, f"rule {rdoc.get('id')!r}")
        rule = ReferralRule(
            id=rdoc["id"],
            all_of=dict(rdoc.get("all_of") or {}),
            any_of=dict(rdoc.get("any_of") or {}),
            min_age=rdoc.get("min_age"),
            max_age=rdoc.get("max_age"),
            sex=rdoc.get("sex", "any"),
        )
        rule.validate()
        rules.append(rule)
    rids = [r.id for r in rules]
    dupes = {rid for rid in rids if rids.count(rid) > 1}
    if dupes:
        raise RulesetError(f"duplicate rule ids {sorted(dupes)}")

    known = set(qids)
    for rule in rules:
        for qid in sorted(rule.referenced_questions()):
            if qid not in known:
                raise RulesetError(f"rule {rule.id!r} references unknown question {qid!r}")

    return Questionnaire(
        cancer_type=doc["cancer_type"],
        version=doc["version"],
        questions=tuple(questions),
        rules=tuple(rules),
    )


def _predicate_holds(question: Question, answer: Any, required: Any) -> bool:
    # Threshold semantics for integer questions: answer >= required.
    if question.kind == "integer-range":
        return answer >= required
    return answer == required


def _rule_fires(q: Questionnaire, rule: ReferralRule, r: Response) -> bool:
    if rule.min_age is not None and r.age < rule.min_age:
        return False
    if rule.max_age is not None and r.age > rule.max_age:
        return False
    # A sex-restricted rule requires an explicit match; unspecified never matches.
    if rule.sex != "any" and r.sex.value != rule.sex:
        return False
    for qid, required in rule.all_of.items():
        if not _predicate_holds(q.question(qid), r.answers[qid], required):
            return False
    if rule.any_of:
        if not any(
            _predicate_holds(q.question(qid), r.answers[qid], required)
            for qid, required in rule.any_of.items()
        ):
            return False
    return True


def validate_response(q: Questionnaire, r: Response) -> None:
    if r.questionnaire_version != q.version:
        raise ResponseError(
            f"version mismatch: response {r.questionnaire_version!r} vs "
            f"questionnaire {q.version!r}"
        )
    if not 0 <= r.age <= 130:
        raise ResponseError(f"age {r.age} out of range [0, 130]")
    for qid, value in r.answers.items():
        try:
            question = q.question(qid)
        except KeyError:
            raise ResponseError(f"answer for unknown question {qid!r}") from None
        if not question.accepts(value):
            raise ResponseError(f"answer for {qid!r} outside its domain: {value!r}")
    missing = sorted(q.rule_referenced_questions() - set(r.answers))
    if missing:
        raise ResponseError(f"missing answers for rule-referenced questions {missing}")


def score(q: Questionnaire, r: Response) -> SCSResult:
    """Score a validated response.  Pure and deterministic.

    HIGH iff at least one rule fires; unanswered questions not referenced by
    any rule are permitted.
    """
    validate_response(q, r)
    fired = tuple(rule.id for rule in q.rules if _rule_fires(q, rule, r))
    if fired:
        return SCSResult(scs=Scs.HIGH, fired_rules=fired, advice=HIGH_ADVICE)
    return SCSResult(scs=Scs.LOW, fired_rules=(), advice=LOW_ADVICE)
