"""Answer accuracy and rationale metrics (BLEU-1, ROUGE-L, TF-cosine similarity).

Text is tokenized by lowercasing, deleting ASCII punctuation and splitting on
whitespace. Rationale metrics are averaged sentence-level over scored pairs.
"""
from __future__ import annotations

import json
import math
import string
from collections import Counter
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Sequence

from .errors import DatasetParseError, InvalidInputError

FORMAT_VERSION = "1"
COLUMNS = ("A-Acc", "BLEU-1", "ROUGE-L", "Similarity")
_PUNCT = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list:
    return text.lower().translate(_PUNCT).split()


def _tokens(x) -> list:
    return tokenize(x) if isinstance(x, str) else list(x)


def bleu1(candidate, reference) -> float:
    cand, ref = _tokens(candidate), _tokens(reference)
    if not ref:
        raise InvalidInputError("BLEU-1 reference is empty")
    if not cand:
        return 0.0
    ref_counts = Counter(ref)
    clipped = sum(min(n, ref_counts[w]) for w, n in Counter(cand).items())
    precision = clipped / len(cand)
    bp = min(1.0, math.exp(1.0 - len(ref) / len(cand)))
    return precision * bp


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> float:
    cand, ref = _tokens(candidate), _tokens(reference)
    if not ref:
        raise InvalidInputError("ROUGE-L reference is empty")
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    r, p = lcs / len(ref), lcs / len(cand)
    return 2 * p * r / (p + r)


def similarity(candidate, reference) -> float:
    """Cosine of term-frequency vectors, clamped to [0, 1]."""
    a, b = Counter(_tokens(candidate)), Counter(_tokens(reference))
    if not a or not b:
        raise InvalidInputError("similarity needs two non-empty texts")
    dot = sum(n * b[w] for w, n in a.items())
    # one sqrt of an integer product: exact when the vectors are parallel
    norm = math.sqrt(sum(n * n for n in a.values()) * sum(n * n for n in b.values()))
    return min(1.0, max(0.0, dot / norm))


@dataclass(frozen=True)
class PredictionRecord:
    question_id: str
    predicted_answer: int | None
    generated_rationale: str = ""
    raw_answer: str | None = None

    def to_dict(self) -> dict:
        d = {"question_id": self.question_id, "answer": self.predicted_answer, "rationale": self.generated_rationale}
        if self.raw_answer is not None:
            d["raw_answer"] = self.raw_answer
        return d

    @classmethod
    def from_dict(cls, d: dict, line: int | None = None) -> "PredictionRecord":
        if "question_id" not in d:
            raise DatasetParseError("missing required field", field="question_id", line=line)
        ans = d.get("answer")
        if ans is not None and (not isinstance(ans, int) or isinstance(ans, bool)):
            raise DatasetParseError("answer must be an integer or null", record_id=d["question_id"],
                                    field="answer", line=line)
        return cls(d["question_id"], ans, d.get("rationale") or "", d.get("raw_answer"))


def write_predictions(preds: Sequence[PredictionRecord], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for p in preds:
            f.write(json.dumps(p.to_dict(), ensure_ascii=False) + "\n")


def read_predictions(path) -> list:
    out = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"malformed JSON: {exc.msg}", line=n) from exc
            out.append(PredictionRecord.from_dict(d, line=n))
    return out


def _check_unique(preds: Sequence[PredictionRecord]) -> dict:
    by_id = {}
    for p in preds:
        if p.question_id in by_id:
            raise InvalidInputError(f"duplicate prediction for question {p.question_id}")
        by_id[p.question_id] = p
    return by_id


def answer_accuracy(predictions: Sequence[PredictionRecord], gold: dict) -> float:
    """``gold`` maps question id to answer index. Missing or unparsed predictions count as wrong."""
    if not gold:
        raise InvalidInputError("no gold answers to score")
    by_id = _check_unique(predictions)
    correct = sum(1 for qid, ans in gold.items()
                  if qid in by_id and by_id[qid].predicted_answer is not None and by_id[qid].predicted_answer == ans)
    return correct / len(gold)


@dataclass(frozen=True)
class MetricReport:
    a_acc: float
    bleu1: float
    rouge_l: float
    similarity: float
    n_evaluated: int
    n_extraction_failures: int
    n_rationales_scored: int = 0
    n_missing: int = 0
    issues: list = field(default_factory=list)
    label: str = ""
    format_version: str = FORMAT_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


def evaluate(predictions: Sequence[PredictionRecord], gold_questions: Sequence, label: str = "") -> MetricReport:
    """Score predictions against gold questions (objects with ``id``, ``answer``, ``rationale``)."""
    by_id = _check_unique(predictions)
    gold_ids = {q.id for q in gold_questions}
    issues = [f"prediction {pid} has no gold question" for pid in sorted(by_id) if pid not in gold_ids]
    gold = {q.id: q.answer for q in gold_questions}
    a_acc = answer_accuracy(predictions, gold)
    missing = [q.id for q in gold_questions if q.id not in by_id]
    issues += [f"no prediction for question {qid}" for qid in missing]
    failures = sum(1 for q in gold_questions if q.id in by_id and by_id[q.id].predicted_answer is None)

    sums = [0.0, 0.0, 0.0]
    scored = 0
    for q in gold_questions:
        ref = q.rationale or ""
        if not tokenize(ref):
            continue
        cand = by_id[q.id].generated_rationale if q.id in by_id else ""
        scored += 1
        if not tokenize(cand):
            continue
        sums[0] += bleu1(cand, ref)
        sums[1] += rouge_l(cand, ref)
        sums[2] += similarity(cand, ref)
    means = [s / scored if scored else 0.0 for s in sums]
    return MetricReport(a_acc, *means, n_evaluated=len(gold_questions), n_extraction_failures=failures,
                        n_rationales_scored=scored, n_missing=len(missing), issues=issues, label=label)


def percent(x: float) -> str:
    """Percentage with two decimals, ties rounded half-to-even on the decimal value."""
    return str((Decimal(repr(float(x))) * 100).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


def report_rows(reports: Sequence[MetricReport], labels: Sequence[str] | None = None) -> list:
    if not reports:
        raise InvalidInputError("need at least one report")
    labels = list(labels) if labels is not None else [r.label or f"run{i}" for i, r in enumerate(reports)]
    return [[lab, percent(r.a_acc), percent(r.bleu1), percent(r.rouge_l), percent(r.similarity)]
            for lab, r in zip(labels, reports)]


def report_table(reports: Sequence[MetricReport], labels: Sequence[str] | None = None,
                 fmt: str = "markdown") -> str:
    rows = report_rows(reports, labels)
    header = ["Model", *COLUMNS]
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] + ["---:"] * len(COLUMNS)) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        return "\n".join(",".join(r) for r in [header, *rows]) + "\n"
    if fmt == "text":
        widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
        return "\n".join("  ".join(str(c).rjust(w) if i else str(c).ljust(w) for i, (c, w) in
                                   enumerate(zip(r, widths))) for r in [header, *rows]) + "\n"
    raise InvalidInputError(f"unknown table format {fmt!r}")
