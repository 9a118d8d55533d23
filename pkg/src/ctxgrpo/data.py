"""Dataset records, JSON-lines I/O, and the rollout-accuracy difficulty filter."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import stage_config  # noqa: F401  (re-exported)
from .errors import DuplicateId, SchemaError
from .judge import JudgeInterface
from .rewards import GoldSpec, measured_accuracy

logger = logging.getLogger(__name__)

STAGE_TAGS = ("cold_start", "rl_stage1", "rl_stage2")
_FIELDS = ("id", "prompt", "modality_note", "reference_context", "gold", "stage_tags", "category", "measured_accuracy")
FILTER_STREAM = 0xF117


@dataclass(frozen=True)
class SampleRecord:
    id: str
    prompt: str
    gold: GoldSpec
    stage_tags: tuple[str, ...] = ("rl_stage1", "rl_stage2")
    reference_context: str | None = None
    modality_note: str = ""
    category: str | None = None
    measured_accuracy: float | None = None

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "prompt": self.prompt,
            "modality_note": self.modality_note,
            "reference_context": self.reference_context,
            "gold": self.gold.to_json(),
            "stage_tags": list(self.stage_tags),
        }
        if self.category is not None:
            out["category"] = self.category
        if self.measured_accuracy is not None:
            out["measured_accuracy"] = self.measured_accuracy
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def record_from_json(obj, line: int | None = None) -> SampleRecord:
    if not isinstance(obj, dict):
        raise SchemaError(line, "<record>", "expected a JSON object")
    unknown = set(obj) - set(_FIELDS)
    if unknown:
        raise SchemaError(line, sorted(unknown)[0], "unknown field")

    def need(name, kind):
        if name not in obj:
            raise SchemaError(line, name, "required field missing")
        if not isinstance(obj[name], kind):
            raise SchemaError(line, name, f"expected {kind.__name__}")
        return obj[name]

    rid = need("id", str)
    if not rid:
        raise SchemaError(line, "id", "must be non-empty")
    prompt = need("prompt", str)
    gold_obj = need("gold", dict)
    try:
        gold = GoldSpec.from_json(gold_obj)
    except (TypeError, ValueError) as exc:
        raise SchemaError(line, "gold", str(exc)) from None
    tags = need("stage_tags", list)
    if not all(isinstance(t, str) and t in STAGE_TAGS for t in tags):
        raise SchemaError(line, "stage_tags", f"entries must be from {STAGE_TAGS}")
    ref = obj.get("reference_context")
    if ref is not None and not isinstance(ref, str):
        raise SchemaError(line, "reference_context", "expected str or null")
    if "rl_stage1" in tags and not ref:
        raise SchemaError(line, "reference_context", "required for rl_stage1 records")
    note = obj.get("modality_note", "")
    if not isinstance(note, str):
        raise SchemaError(line, "modality_note", "expected str")
    category = obj.get("category")
    if category is not None and not isinstance(category, str):
        raise SchemaError(line, "category", "expected str")
    acc = obj.get("measured_accuracy")
    if acc is not None and (isinstance(acc, bool) or not isinstance(acc, (int, float))):
        raise SchemaError(line, "measured_accuracy", "expected a number")
    return SampleRecord(
        id=rid,
        prompt=prompt,
        gold=gold,
        stage_tags=tuple(tags),
        reference_context=ref,
        modality_note=note,
        category=category,
        measured_accuracy=acc,
    )


def parse_dataset(lines: Iterable[str]) -> list[SampleRecord]:
    records: list[SampleRecord] = []
    seen: set[str] = set()
    for lineno, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(lineno, "<json>", exc.msg) from None
        rec = record_from_json(obj, lineno)
        if rec.id in seen:
            raise DuplicateId(rec.id, lineno)
        seen.add(rec.id)
        records.append(rec)
    return records


def load_dataset(path) -> list[SampleRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh)


def dumps_dataset(records: Sequence[SampleRecord]) -> str:
    return "".join(r.dumps() + "\n" for r in records)


def save_dataset(records: Sequence[SampleRecord], path) -> None:
    Path(path).write_text(dumps_dataset(records), encoding="utf-8")


def record_seed(seed: int, record_id: str) -> list[int]:
    """Seed material for a record, independent of its position in any pool."""
    digest = hashlib.sha256(record_id.encode("utf-8")).digest()
    return [seed, FILTER_STREAM, int.from_bytes(digest[:8], "little")]


Rollout = Callable[[SampleRecord, int, np.random.Generator], Sequence[str]]


def difficulty_filter(
    rollout: Rollout,
    records: Sequence[SampleRecord],
    group_size: int = 8,
    low: float = 0.0,
    high: float = 0.75,
    seed: int = 0,
    judge: JudgeInterface | None = None,
    workers: int = 1,
) -> list[SampleRecord]:
    """Keep records whose mean rollout accuracy lies strictly inside ``(low, high)``.

    ``rollout(record, group_size, rng)`` returns raw completions.  Returned
    records carry ``measured_accuracy``; order follows the input.
    """
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    if not 0 <= low < high <= 1:
        raise ValueError("need 0 <= low < high <= 1")

    def measure(rec: SampleRecord) -> float:
        rng = np.random.default_rng(record_seed(seed, rec.id))
        outs = rollout(rec, group_size, rng)
        return float(np.mean([measured_accuracy(raw, rec.gold, judge) for raw in outs]))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accs = list(pool.map(measure, records))
    else:
        accs = [measure(r) for r in records]

    kept = [
        dataclasses.replace(rec, measured_accuracy=acc)
        for rec, acc in zip(records, accs)
        if low < acc < high
    ]
    logger.info("difficulty filter kept %d of %d records", len(kept), len(records))
    return kept


def policy_rollout(policy, prompt_ids: dict[str, int], max_tokens: int) -> Rollout:
    """Adapter turning a :class:`~ctxgrpo.toy_policy.ToyPolicy` into a filter rollout."""

    def run(rec: SampleRecord, count: int, rng: np.random.Generator) -> list[str]:
        seqs = policy.sample_group(prompt_ids[rec.id], count, max_tokens, rng)
        return [policy.render(s)[0] for s in seqs]

    return run


def task_record(task) -> SampleRecord:
    """SampleRecord view of a synthetic task."""
    return SampleRecord(
        id=task.task_id,
        prompt=task.prompt,
        gold=task.gold,
        stage_tags=("rl_stage1", "rl_stage2"),
        reference_context=task.reference_context,
        modality_note="synthetic text-only task",
        category="tag_echo",
    )
