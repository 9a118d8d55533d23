"""Benchmark scoring: per-category accuracy or F1, plus a question-weighted aggregate."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .data import SampleRecord
from .errors import MissingPrediction, SchemaError, UnknownId
from .judge import JudgeInterface
from .response_format import try_parse
from .rewards import accuracy_reward


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    raw_response: str

    @property
    def answer(self) -> str:
        return extract_answer(self.raw_response)


def extract_answer(raw_response: str) -> str:
    """Answer block of a tagged response; untagged responses pass through unchanged."""
    resp = try_parse(raw_response)
    return raw_response if resp is None else resp.answer_text


def load_predictions(path) -> list[PredictionRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_predictions(fh)


def parse_predictions(lines: Iterable[str]) -> list[PredictionRecord]:
    out = []
    for lineno, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(lineno, "<json>", exc.msg) from None
        if not isinstance(obj, dict):
            raise SchemaError(lineno, "<record>", "expected a JSON object")
        for key in ("id", "response"):
            if not isinstance(obj.get(key), str):
                raise SchemaError(lineno, key, "required string field")
        out.append(PredictionRecord(obj["id"], obj["response"]))
    return out


_METRIC = {"mc_single": "accuracy", "numeric": "accuracy", "mc_multi": "f1", "transcript": "one_minus_wer"}


@dataclass
class ScoreReport:
    per_category: dict[str, dict] = field(default_factory=dict)
    aggregate: float = 0.0
    count: int = 0
    missing: int = 0

    def to_json(self) -> dict:
        return {
            "per_category": {k: self.per_category[k] for k in sorted(self.per_category)},
            "aggregate": self.aggregate,
            "count": self.count,
            "missing": self.missing,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    def table(self) -> str:
        rows = [("category", "metric", "value", "n")]
        for name in sorted(self.per_category):
            c = self.per_category[name]
            rows.append((name, c["metric"], f"{c['value']:.4f}", str(c["count"])))
        rows.append(("ALL", "weighted", f"{self.aggregate:.4f}", str(self.count)))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
        return "\n".join(lines) + "\n"


def score_question(raw_response: str, gold_record: SampleRecord, judge: JudgeInterface | None = None) -> float:
    return accuracy_reward(extract_answer(raw_response), gold_record.gold, judge)


def score_benchmark(
    predictions: Sequence[PredictionRecord],
    gold: Sequence[SampleRecord],
    category_field: str = "category",
    judge: JudgeInterface | None = None,
    allow_missing: bool = False,
) -> ScoreReport:
    """Mean per-question score in each category and over all questions.

    Single-choice and numeric categories report accuracy, multi-answer ones
    the mean per-question F1.  Missing predictions raise unless
    ``allow_missing``, in which case they score 0 and are counted.
    """
    by_id = {r.id: r for r in gold}
    preds: dict[str, str] = {}
    for p in predictions:
        preds[p.id] = p.raw_response
    unknown = set(preds) - set(by_id)
    if unknown:
        raise UnknownId(unknown)
    missing = set(by_id) - set(preds)
    if missing and not allow_missing:
        raise MissingPrediction(missing)

    scores: dict[str, list[float]] = defaultdict(list)
    kinds: dict[str, set[str]] = defaultdict(set)
    for rec in gold:
        cat = getattr(rec, category_field, None) if category_field != "answer_type" else rec.gold.answer_type
        cat = cat if cat is not None else "uncategorized"
        value = 0.0 if rec.id in missing else score_question(preds[rec.id], rec, judge)
        scores[cat].append(value)
        kinds[cat].add(_METRIC.get(rec.gold.answer_type, "judge_similarity"))

    report = ScoreReport(missing=len(missing))
    everything = []
    for cat, vals in scores.items():
        metric = kinds[cat].pop() if len(kinds[cat]) == 1 else "mean_score"
        report.per_category[cat] = {"metric": metric, "value": math.fsum(vals) / len(vals), "count": len(vals)}
        everything.extend(vals)
    report.count = len(everything)
    report.aggregate = math.fsum(everything) / len(everything) if everything else 0.0
    return report
