"""Command-line entry point: kb build, run, train, eval, bench."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .agents import make_task
from .benchmark import generate_benchmark, graph_from_knowledge_texts, write_benchmark
from .config import Config, load_config
from .core_math import GaussianPolicy
from .errors import DeliberantError
from .orchestrator import (
    DeliberationEnvironment,
    TraceWriter,
    deliberate,
    evaluate,
    load_tasks_jsonl,
)
from .retrieval import load_knowledge_jsonl, save_knowledge_jsonl
from .training import load_checkpoint, save_checkpoint, train

DEFAULT_POLICY_MEAN = 1.0     # identity-like modulation of the task embedding
DEFAULT_POLICY_VARIANCE = 0.25


def default_policy(dim: int) -> GaussianPolicy:
    return GaussianPolicy(np.full(dim, DEFAULT_POLICY_MEAN), np.full(dim, DEFAULT_POLICY_VARIANCE))


def _load_config_arg(path: str | None, seed: int | None) -> Config:
    config = load_config(path) if path else Config()
    if seed is not None:
        config.seed = seed
    return config


def _policy_arg(path: str | None, dim: int) -> GaussianPolicy:
    return load_checkpoint(path) if path else default_policy(dim)


def _backend_for(config: Config, kb_path: str | None):
    """Synthetic backends rebuild the traversal graph from the corpus."""
    graph = None
    if config.backend == "synthetic" and kb_path:
        with open(kb_path, encoding="utf-8") as fh:
            texts = [json.loads(line)["text"] for line in fh if line.strip()]
        graph = graph_from_knowledge_texts(texts)
    return config.make_backend(graph=graph)


def _parse_hops(value: str) -> int | tuple[int, int]:
    if "-" in value:
        lo, hi = value.split("-", 1)
        return (int(lo), int(hi))
    return int(value)


def _cmd_kb_build(args) -> int:
    config = _load_config_arg(args.config, args.seed)
    backend = config.make_backend()
    base = load_knowledge_jsonl(
        args.input, embedder=backend, alpha=config.retrieval_alpha, m=config.evidence_m
    )
    save_knowledge_jsonl(base, args.output)
    print(f"built knowledge base: {len(base)} items -> {args.output}")
    return 0


def _cmd_run(args) -> int:
    config = _load_config_arg(args.config, args.seed)
    backend = _backend_for(config, args.kb)
    base = None
    if args.kb:
        base = load_knowledge_jsonl(
            args.kb, embedder=backend, alpha=config.retrieval_alpha, m=config.evidence_m
        )
    policy = _policy_arg(args.policy, config.dim)
    task = make_task(backend, "cli-task", args.question)
    outcome = deliberate(task, base, policy, config, config.seed, backend)
    if args.trace:
        TraceWriter(args.trace).append(outcome.trace)
    print(f"answer: {outcome.conclusion.answer}")
    print(f"coherence: {outcome.conclusion.coherence:.4f}")
    print(f"degraded: {outcome.conclusion.degraded}")
    print(f"reward: {outcome.reward.total:.4f}")
    return 0


def _cmd_train(args) -> int:
    config = _load_config_arg(args.config, args.seed)
    backend = _backend_for(config, args.kb)
    if args.dataset and args.kb:
        base = load_knowledge_jsonl(
            args.kb, embedder=backend, alpha=config.retrieval_alpha, m=config.evidence_m
        )
        tasks = load_tasks_jsonl(args.dataset, backend)
    else:
        # Self-contained default: a bundled synthetic benchmark.
        bench = generate_benchmark(
            n_chains=50, hops=(2, 3), distractors_per_hop=3, seed=config.seed
        )
        backend = config.make_backend(graph=bench.graph)
        from .retrieval import build

        base = build(
            [(i["id"], i["text"]) for i in bench.kb_items],
            backend, alpha=config.retrieval_alpha, m=config.evidence_m,
        )
        tasks = [
            make_task(backend, t["id"], t["question"], gold_answer=t["answer"])
            for t in bench.tasks
        ]
    policy = _policy_arg(args.policy, config.dim)
    env = DeliberationEnvironment(tasks, base, config, backend, policy)
    result = train(
        env, config.ppo(), args.steps, policy, seed=config.seed, curve_path=args.curve
    )
    if args.checkpoint:
        save_checkpoint(result.policy, args.checkpoint)
    final = result.curve[-1]["mean_reward"] if result.curve else float("nan")
    print(f"trained {args.steps} steps ({args.steps * config.batch_size} episodes); "
          f"final mean reward {final:.4f}; curve -> {args.curve}")
    return 0


def _cmd_eval(args) -> int:
    config = _load_config_arg(args.config, args.seed)
    backend = _backend_for(config, args.kb)
    base = load_knowledge_jsonl(
        args.kb, embedder=backend, alpha=config.retrieval_alpha, m=config.evidence_m
    )
    tasks = load_tasks_jsonl(args.dataset, backend)
    policy = _policy_arg(args.policy, config.dim)
    writer = TraceWriter(args.trace) if args.trace else None
    report = evaluate(
        tasks, base, policy, config, backend,
        runs_per_task=args.runs, seed=config.seed, trace_writer=writer,
    )
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    print(f"accuracy: {report.accuracy:.4f}")
    print(f"consistency: {report.consistency:.4f}")
    print(f"mean time: {report.mean_time:.4f}s")
    print(f"report -> {args.report}")
    return 0


def _cmd_bench(args) -> int:
    bench = generate_benchmark(
        n_chains=args.chains,
        hops=_parse_hops(args.hops),
        distractors_per_hop=args.distractors,
        seed=args.seed,
    )
    kb_path, tasks_path = write_benchmark(bench, args.out)
    print(f"benchmark: {len(bench.tasks)} tasks, {len(bench.kb_items)} knowledge items")
    print(f"kb -> {kb_path}")
    print(f"tasks -> {tasks_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deliberant",
        description="Group-deliberation engine: generate, verify, arbitrate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    kb = sub.add_parser("kb", help="knowledge-base utilities")
    kb_sub = kb.add_subparsers(dest="kb_command", required=True)
    kb_build = kb_sub.add_parser("build", help="embed a raw corpus")
    kb_build.add_argument("--input", required=True, help="raw JSONL: {id, text, embedding?}")
    kb_build.add_argument("--output", required=True, help="embedded JSONL output")
    kb_build.add_argument("--config", help="config JSON file")
    kb_build.add_argument("--seed", type=int, help="override config seed")
    kb_build.set_defaults(func=_cmd_kb_build)

    run = sub.add_parser("run", help="one deliberation")
    run.add_argument("--config", help="config JSON file")
    run.add_argument("--question", required=True)
    run.add_argument("--kb", help="knowledge-base JSONL")
    run.add_argument("--trace", help="append the trace to this JSONL file")
    run.add_argument("--policy", help="policy checkpoint JSON")
    run.add_argument("--seed", type=int, help="override config seed")
    run.set_defaults(func=_cmd_run)

    tr = sub.add_parser("train", help="train the weight policy")
    tr.add_argument("--config", help="config JSON file")
    tr.add_argument("--steps", type=int, required=True, help="policy update steps")
    tr.add_argument("--curve", required=True, help="learning-curve CSV output")
    tr.add_argument("--dataset", help="tasks JSONL (with --kb); default: synthetic benchmark")
    tr.add_argument("--kb", help="knowledge-base JSONL")
    tr.add_argument("--checkpoint", help="write the final policy here")
    tr.add_argument("--policy", help="warm-start policy checkpoint")
    tr.add_argument("--seed", type=int, help="override config seed")
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="accuracy/consistency/time report")
    ev.add_argument("--config", help="config JSON file")
    ev.add_argument("--dataset", required=True, help="tasks JSONL with gold answers")
    ev.add_argument("--kb", required=True, help="knowledge-base JSONL")
    ev.add_argument("--runs", type=int, default=5, help="repeated runs per task")
    ev.add_argument("--report", required=True, help="report JSON output")
    ev.add_argument("--trace", help="append every trace to this JSONL file")
    ev.add_argument("--policy", help="policy checkpoint JSON")
    ev.add_argument("--seed", type=int, help="override config seed")
    ev.set_defaults(func=_cmd_eval)

    bench = sub.add_parser("bench", help="generate a synthetic benchmark")
    bench.add_argument("--chains", type=int, required=True)
    bench.add_argument("--hops", default="2", help="hop count, e.g. 2 or 2-3")
    bench.add_argument("--distractors", type=int, default=0)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", required=True, help="output directory")
    bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DeliberantError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
