"""Command-line surface.

Commands: run, resume, tier, pairs, diag, report, mock-worker,
synthesize. Everything is driven by one YAML config; individual flags
(--seed, --preset, --workers, --cache) override single keys, and the
QUADPIPE_SEED environment variable outranks both the flag and the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import curriculum, diagnostics, mock, preference, synthesis
from .config import ConfigError, PipelineConfig, config_from_dict
from .corpus import CorpusError, CorpusSnapshot, load_snapshot, write_snapshot
from .gateway import GatewayConfigError
from .pipeline import PipelineRunner, RunStateError

log = logging.getLogger("quadpipe")


def _parse_cache(value: str) -> str | bool:
    if value.lower() in ("on", "true", "1"):
        return True
    if value.lower() in ("off", "false", "0"):
        return False
    return value


def _load_config(args) -> PipelineConfig:
    path = Path(args.config)
    with path.open("r", encoding="utf-8") as fin:
        obj = yaml.safe_load(fin) or {}
    env_seed = os.environ.get("QUADPIPE_SEED")
    if env_seed is not None:
        obj["seed"] = int(env_seed)
    elif getattr(args, "seed", None) is not None:
        obj["seed"] = args.seed
    if getattr(args, "preset", None):
        obj["preset"] = args.preset
    if getattr(args, "workers", None):
        obj["threads"] = args.workers
    if getattr(args, "cache", None) is not None:
        obj["cache"] = _parse_cache(args.cache)
    return config_from_dict(obj, base_dir=path.parent)


def _print_summary(summary) -> None:
    print(f"run dir: {summary.run_dir}")
    print(f"config digest: {summary.config_digest[:16]}")
    for m in summary.manifests:
        ratio = "" if m.compression_ratio_vs_raw is None else f"  C.R. {m.compression_ratio_vs_raw}"
        quarantined = f"  quarantined {m.quarantined_count}" if m.quarantined_count else ""
        print(f"  {m.stage:<10} {m.input_count:>8} -> {m.output_count:<8}{ratio}{quarantined}")
    if summary.final_snapshot:
        print(f"final snapshot: {summary.final_snapshot}")
        print(f"final digest: {summary.final_digest}")
    print(f"worker calls: {summary.worker_calls}")


def cmd_run(args) -> int:
    config = _load_config(args)
    out = Path(args.out or config.output_dir or "quadpipe-run")
    runner = PipelineRunner(config, out)
    summary = runner.run(args.input, stop_after=args.stop_after)
    _print_summary(summary)
    return 0


def cmd_resume(args) -> int:
    summary = PipelineRunner.resume(args.run_dir, config_path=args.config)
    _print_summary(summary)
    return 0


def cmd_tier(args) -> int:
    config = _load_config(args)
    if config.ocl is None:
        raise ConfigError("tier command needs an 'ocl' config section")
    snapshot = load_snapshot(args.input)
    gateway = config.build_gateway()
    try:
        assignments, tiers, result = curriculum.run(
            snapshot, config.ocl, gateway, threads=config.threads)
    finally:
        gateway.close()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "assignments.jsonl").open("w", encoding="utf-8") as fout:
        for a in assignments:
            gaps = [None if g == float("-inf") else g for g in a.per_model_gaps]
            fout.write(json.dumps(
                {"sample_id": a.sample_id, "gaps": gaps, "s": a.s, "tier": a.tier},
                ensure_ascii=False) + "\n")
    for t, tier_snapshot in sorted(tiers.items()):
        write_snapshot(tier_snapshot, out / f"tier{t}.jsonl")
    stages = curriculum.emit_schedule(tiers)
    manifest = curriculum.schedule_manifest(stages)
    with (out / "schedule.json").open("w", encoding="utf-8") as fout:
        json.dump(manifest, fout, ensure_ascii=False, indent=2)
        fout.write("\n")
    for entry in manifest:
        print(f"  {entry['stage']:<8} {entry['count']:>8}")
    if result.quarantined:
        print(f"quarantined: {len(result.quarantined)}")
    return 0


def cmd_pairs(args) -> int:
    config = _load_config(args)
    if config.mpo is None:
        raise ConfigError("pairs command needs an 'mpo' config section")
    snapshot = load_snapshot(args.input)
    gateway = config.build_gateway()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    built = skipped = 0
    try:
        with (out / "pairs.jsonl").open("w", encoding="utf-8") as pairs_out, \
                (out / "skips.jsonl").open("w", encoding="utf-8") as skips_out:
            for sample in snapshot:
                if not sample.answer:
                    outcome = preference.SkippedSample(sample.id, "no-target")
                else:
                    candidates = preference.sample_candidates(
                        sample, config.mpo.count, config.mpo.temperature, gateway)
                    outcome = preference.build_pair(
                        sample, candidates, config.mpo.rule_for(sample.answer), gateway)
                if isinstance(outcome, preference.PreferencePair):
                    built += 1
                    pairs_out.write(json.dumps(outcome.to_json(), ensure_ascii=False) + "\n")
                else:
                    skipped += 1
                    skips_out.write(json.dumps(
                        {"sample_id": outcome.sample_id, "reason": outcome.reason},
                        ensure_ascii=False) + "\n")
    finally:
        gateway.close()
    print(f"pairs: {built}  skipped: {skipped}")
    return 0


def cmd_diag(args) -> int:
    records = diagnostics.load_eval_records(args.input)
    report = diagnostics.compute_report(records, by_group=args.by_group)
    text = diagnostics.render_report(report)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def cmd_report(args) -> int:
    summary_path = Path(args.run_dir) / "summary.json"
    with summary_path.open("r", encoding="utf-8") as fin:
        summary = json.load(fin)
    rows = [(stage, count, ratio) for stage, count, ratio in summary["compression"]]
    print(diagnostics.render_compression(rows, summary["raw_count"]))
    if summary.get("distribution"):
        print()
        print(summary["distribution"])
    return 0


def cmd_mock_worker(args) -> int:
    worker = mock.MockWorker(seed=args.seed, dim=args.dim, batch_limit=args.batch_limit)
    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        mock.serve_tcp_worker(worker, host or "127.0.0.1", int(port))
    else:
        mock.serve_stdio(worker)
    return 0


def cmd_synthesize(args) -> int:
    config = _load_config(args)
    job = synthesis.SynthesisJob.load(args.job)
    gateway = config.build_gateway()
    try:
        samples = synthesis.synthesize(job, gateway, threads=config.threads)
    finally:
        gateway.close()
    snapshot = CorpusSnapshot(name="synthesized", samples=samples)
    write_snapshot(snapshot, args.out)
    print(f"synthesized {len(samples)} samples -> {args.out}")
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="pipeline YAML config")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--preset", help="override config preset")
    parser.add_argument("--workers", type=int, help="parallel threads per stage")
    parser.add_argument("--cache", help="score cache: on, off, or a file path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadpipe",
        description="Deterministic curation pipeline for multimodal instruction corpora")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the configured pipeline over a corpus")
    _add_config_flags(p)
    p.add_argument("--input", required=True, help="input corpus (JSONL)")
    p.add_argument("--out", help="run directory")
    p.add_argument("--stop-after", choices=["quality", "reference", "dedup", "redist"],
                   help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("resume", help="continue an interrupted run")
    p.add_argument("run_dir")
    p.add_argument("--config", help="optional config file to verify against the run")
    p.set_defaults(fn=cmd_resume)

    p = sub.add_parser("tier", help="difficulty-tier a corpus and emit the schedule")
    _add_config_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_tier)

    p = sub.add_parser("pairs", help="build preference pairs")
    _add_config_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pairs)

    p = sub.add_parser("diag", help="compute MG/ML/VNR/VIF from eval records")
    p.add_argument("--input", required=True, help="eval records (JSONL)")
    p.add_argument("--by-group", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_diag)

    p = sub.add_parser("report", help="render compression/distribution tables for a run")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("mock-worker", help="serve the deterministic mock worker")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--batch-limit", type=int, default=64)
    p.add_argument("--tcp", help="host:port to listen on instead of stdio")
    p.set_defaults(fn=cmd_mock_worker)

    p = sub.add_parser("synthesize", help="mint (q, a) samples from media plus cues")
    _add_config_flags(p)
    p.add_argument("--job", required=True, help="synthesis job file (JSON)")
    p.add_argument("--out", required=True, help="output snapshot path (JSONL)")
    p.set_defaults(fn=cmd_synthesize)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, CorpusError, GatewayConfigError, RunStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
