"""``ctxgrpo`` command line: ``train``, ``filter`` and ``eval``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 judge backend error.
Errors are also written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig, stage_config
from .data import SampleRecord, difficulty_filter, load_dataset, policy_rollout, save_dataset, task_record
from .errors import ConfigError, CtxGrpoError, DataError, JudgeError
from .evaluation import load_predictions, score_benchmark
from .judge import JudgeInterface, MockJudge, RemoteJudge
from .toy_policy import ToyPolicy, init_policy, make_task_suite
from .trainer import evaluate_policy, train

logger = logging.getLogger("ctxgrpo")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_JUDGE = 0, 1, 2, 3

DEFAULT_RUN_CONFIG = {
    "train": {},
    "policy": {"n": 1, "prior_strength": 4.0, "temperature": 1.0, "checkpoint": None},
    "data": {"train": None, "tasks": {"kind": "tag_echo", "count": 8, "seed": None}},
    "judge": {"backend": "mock", "endpoint": None, "timeout": 30.0, "retries": 3, "concurrency": 4, "backoff": 0.5},
    "output_dir": "runs/default",
    "log_level": "INFO",
    "log_wall_time": False,
    "workers": 1,
    "eval_samples": 64,
}


@dataclass
class RunConfig:
    train: TrainConfig
    policy: dict
    data: dict
    judge: dict
    output_dir: Path
    log_level: str
    log_wall_time: bool
    workers: int
    eval_samples: int

    @classmethod
    def from_json(cls, raw: dict) -> "RunConfig":
        merged = _merge(DEFAULT_RUN_CONFIG, raw)
        unknown = set(merged) - set(DEFAULT_RUN_CONFIG)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for section in ("policy", "data", "judge"):
            extra = set(merged[section]) - set(DEFAULT_RUN_CONFIG[section])
            if extra:
                raise ConfigError(f"unknown {section} settings: {sorted(extra)}")
        try:
            train_cfg = TrainConfig.from_json(merged["train"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        judge = merged["judge"]
        if judge["backend"] not in ("mock", "remote"):
            raise ConfigError("judge.backend must be 'mock' or 'remote'")
        if judge["backend"] == "remote" and not judge["endpoint"]:
            raise ConfigError("judge.endpoint is required for the remote backend")
        if merged["workers"] < 1:
            raise ConfigError("workers must be >= 1")
        if merged["log_level"] not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            raise ConfigError(f"bad log_level {merged['log_level']!r}")
        for key in ("train",):
            path = merged["data"][key]
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"data.{key}: no such file {path}")
        ckpt = merged["policy"]["checkpoint"]
        if ckpt is not None and not Path(ckpt).is_file():
            raise ConfigError(f"policy.checkpoint: no such file {ckpt}")
        return cls(
            train=train_cfg,
            policy=merged["policy"],
            data=merged["data"],
            judge=judge,
            output_dir=Path(merged["output_dir"]),
            log_level=merged["log_level"],
            log_wall_time=bool(merged["log_wall_time"]),
            workers=int(merged["workers"]),
            eval_samples=int(merged["eval_samples"]),
        )

    def make_judge(self) -> JudgeInterface:
        j = self.judge
        if j["backend"] == "mock":
            return MockJudge()
        return RemoteJudge(j["endpoint"], j["timeout"], j["retries"], j["concurrency"], j["backoff"])


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def apply_overrides(raw: dict, assignments: list[str]) -> dict:
    """Apply ``dotted.path=value`` overrides; values parse as JSON, falling back to strings."""
    out = copy.deepcopy(raw)
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        path, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        parts = path.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {path}: {part} is not a section")
        node[parts[-1]] = value
    return out


def read_config(path: str | None, overrides: list[str]) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    return RunConfig.from_json(apply_overrides(raw, overrides))


def _training_records(cfg: RunConfig, stage: str) -> list[SampleRecord]:
    if cfg.data["train"] is not None:
        records = [r for r in load_dataset(cfg.data["train"]) if stage in r.stage_tags]
        if not records:
            raise DataError(f"no records tagged {stage} in {cfg.data['train']}")
        return records
    tasks = cfg.data["tasks"]
    if tasks.get("kind") != "tag_echo":
        raise ConfigError(f"unknown task kind {tasks.get('kind')!r}")
    seed = tasks["seed"] if tasks.get("seed") is not None else cfg.train.seed
    return [task_record(t) for t in make_task_suite(int(tasks["count"]), seed)]


def _policy_for(cfg: RunConfig, num_prompts: int) -> ToyPolicy:
    ckpt = cfg.policy["checkpoint"]
    if ckpt is not None:
        policy = ToyPolicy.from_json(Path(ckpt).read_text(encoding="utf-8"))
        if policy.num_prompts < num_prompts:
            raise ConfigError(f"checkpoint has {policy.num_prompts} prompt slots, need {num_prompts}")
        return policy
    return init_policy(
        num_prompts,
        prior_strength=float(cfg.policy["prior_strength"]),
        n=int(cfg.policy["n"]),
        temperature=float(cfg.policy["temperature"]),
    )


def cmd_train(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    if args.out is not None:
        overrides.append(f"output_dir={json.dumps(str(args.out))}")
    cfg = read_config(args.config, overrides)
    streams = stage_config(args.stage)
    if args.steps < 0:
        raise ConfigError("--steps must be >= 0")
    cfg.train.streams = streams
    logging.getLogger().setLevel(cfg.log_level)

    records = _training_records(cfg, args.stage)
    policy = _policy_for(cfg, len(records))
    judge = cfg.make_judge() if {"context", "logical"} & set(streams) or _needs_judge(records) else None

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    max_tokens = cfg.train.max_completion_tokens
    before = evaluate_policy(policy, records, cfg.eval_samples, max_tokens, cfg.train.seed)
    reports = train(
        policy,
        records,
        judge,
        cfg.train,
        args.steps,
        log_path=out / "train_log.jsonl",
        log_wall_time=cfg.log_wall_time,
        workers=cfg.workers,
    )
    after = evaluate_policy(policy, records, cfg.eval_samples, max_tokens, cfg.train.seed)
    (out / "checkpoint.json").write_text(policy.to_json(), encoding="utf-8")

    tail = reports[-50:]

    def tail_mean(attr):
        vals = [getattr(r, attr) for r in tail]
        return None if not vals or vals[0] is None else float(np.mean(vals))

    summary = {
        "stage": args.stage,
        "steps": args.steps,
        "seed": cfg.train.seed,
        "streams": list(streams),
        "num_questions": len(records),
        "eval_before": before,
        "eval_after": after,
        "final_mean_r_f": tail_mean("mean_r_f"),
        "final_mean_r_a": tail_mean("mean_r_a"),
        "final_mean_r_c": tail_mean("mean_r_c"),
        "final_mean_r_l": tail_mean("mean_r_l"),
        "config": cfg.train.to_json(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps({"output_dir": str(out), "eval_after": after}))
    return EXIT_OK


def _needs_judge(records) -> bool:
    return any(r.gold.answer_type == "open_ended" for r in records)


def cmd_filter(args) -> int:
    overrides = list(args.set or [])
    if args.low is not None:
        overrides.append(f"train.filter_low={args.low}")
    if args.high is not None:
        overrides.append(f"train.filter_high={args.high}")
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    cfg = read_config(args.config, overrides)
    logging.getLogger().setLevel(cfg.log_level)
    records = load_dataset(args.inp)
    policy = _policy_for(cfg, len(records))
    judge = cfg.make_judge() if _needs_judge(records) else None
    rollout = policy_rollout(policy, {r.id: i for i, r in enumerate(records)}, cfg.train.max_completion_tokens)
    kept = difficulty_filter(
        rollout,
        records,
        cfg.train.group_size,
        cfg.train.filter_low,
        cfg.train.filter_high,
        seed=cfg.train.seed,
        judge=judge,
        workers=cfg.workers,
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(kept, args.out)
    print(json.dumps({"retained": len(kept), "dropped": len(records) - len(kept)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = read_config(args.config, list(args.set or [])) if args.config or args.set else None
    gold = load_dataset(args.gold)
    preds = load_predictions(args.pred)
    judge = cfg.make_judge() if cfg is not None else (MockJudge() if _needs_judge(gold) else None)
    report = score_benchmark(preds, gold, args.category_field, judge, allow_missing=args.allow_missing)
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(report.dumps(), encoding="utf-8")
    if args.table:
        Path(args.table).write_text(report.table(), encoding="utf-8")
    print(f"{report.aggregate:.6f}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("UsageError", message)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctxgrpo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="run RL training on the toy policy")
    p.add_argument("config", nargs="?", help="run config JSON")
    p.add_argument("--stage", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field by dotted path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("filter", help="keep records with rollout accuracy inside (low, high)")
    p.add_argument("config", nargs="?")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--low", type=float)
    p.add_argument("--high", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("eval", help="score a prediction file against gold records")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--table", help="also write an aligned text table here")
    p.add_argument("--category-field", default="category")
    p.add_argument("--allow-missing", action="store_true", help="score missing predictions as 0")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)
    return parser


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except JudgeError as exc:
        code = EXIT_JUDGE
        err = exc
    except (ConfigError, ValueError) as exc:
        code = EXIT_CONFIG
        err = exc
    except (DataError, OSError) as exc:
        code = EXIT_DATA
        err = exc
    except CtxGrpoError as exc:
        code = EXIT_DATA
        err = exc
    _emit_error(type(err).__name__, str(err))
    return code


if __name__ == "__main__":
    sys.exit(main())
