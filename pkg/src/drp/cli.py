"""Command-line entry point.

Exit codes: 0 success, 2 input/validation error, 3 provider/runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from .config import RunConfig, load_config
from .corpus import all_users, load_corpus
from .errors import DrpError, InputError, RuntimeFailure
from .gateway import Gateway
from .metrics import MetricReport, average_reports, evaluate_run
from .mock import RecordingResponder, SyntheticResponder
from .pipeline import (
    Pipeline,
    load_generations,
    load_reports,
    run_pipeline,
    write_bundle,
)
from .prompts import load_prompts
from .uvq import UvqReport, compute_uvq, dedup_and_resolve, judge_user_features, pearson

log = logging.getLogger("drp")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _read_manifest(run_dir: Path) -> dict:
    path = run_dir / "manifest.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise InputError(f"cannot read {path}: {e}") from e


def _cache_dir(cfg: RunConfig) -> Path:
    return Path(cfg.cache_dir) if cfg.cache_dir else Path(cfg.output_dir) / ".cache"


def _check_paths(cfg: RunConfig, mock: bool) -> None:
    if not cfg.corpus or not Path(cfg.corpus).is_file():
        raise InputError(f"corpus file not found: {cfg.corpus}")
    if cfg.prompt_dir and not Path(cfg.prompt_dir).is_dir():
        raise InputError(f"prompt_dir not found: {cfg.prompt_dir}")
    if mock and (not cfg.fixture_dir or not Path(cfg.fixture_dir).is_dir()):
        raise InputError(f"--mock needs an existing fixture_dir, got {cfg.fixture_dir}")


# ---------------------------------------------------------------- commands

def cmd_ingest(args) -> int:
    corpus = load_corpus(args.corpus)
    users = all_users(corpus)
    print(f"users: {len(users)}, train: {len(corpus.train)}, test: {len(corpus.test)}")
    train_counts = Counter(s.user_id for s in corpus.train)
    test_counts = Counter(s.user_id for s in corpus.test)
    for u in users:
        print(f"  {u}: train={train_counts[u]} test={test_counts[u]}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    """Fit user clusters only and write them as JSON."""
    cfg = load_config(args.config)
    if not cfg.corpus or not Path(cfg.corpus).is_file():
        raise InputError(f"corpus file not found: {cfg.corpus}")
    corpus = load_corpus(cfg.corpus)
    model = Pipeline(cfg, Gateway(cache_dir=None)).fit_clusters(corpus)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "cluster.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    sizes = ", ".join(f"{c}:{len(model.members(c))}" for c in range(model.k))
    print(f"k={model.k} inertia={model.inertia:.6f} sizes {sizes}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config, mode=args.mode)
    _check_paths(cfg, args.mock)
    corpus = load_corpus(cfg.corpus)
    gateway = Gateway(cache_dir=_cache_dir(cfg), max_concurrency=cfg.max_concurrency)
    result = run_pipeline(corpus, cfg, gateway, force_mock=args.mock)
    run_dir = Path(args.run_dir) if args.run_dir else Path(cfg.output_dir) / (cfg.run_name or cfg.mode)
    manifest = write_bundle(result, run_dir)
    for t, info in manifest["per_temperature"].items():
        print(f"T={t}: generated {info['n_generated']}/{info['n_samples']}, "
              f"stage calls {info['stage_calls']}, errors {len(info['errors'])}")
    print(f"remote calls: {manifest['remote_calls']}")
    print(f"run dir: {run_dir}")
    print(f"manifest digest: {manifest['digest']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    manifest = _read_manifest(run_dir)
    corpus = load_corpus(args.corpus)
    reports: list[MetricReport] = []
    for tkey in manifest["temperatures"]:
        path = run_dir / f"generations.{tkey}.jsonl"
        if not path.exists():
            raise InputError(f"missing generations file {path}")
        rep = evaluate_run(load_generations(path), corpus)
        rep.meta = {"temperature": tkey, "mode": manifest["mode"]}
        _write_json(run_dir / f"metrics.{tkey}.json", rep.to_dict())
        reports.append(rep)
        print(_metric_line(f"T={tkey}", rep))
    if not reports:
        raise InputError(f"{run_dir} has no generations")
    avg = average_reports(reports)
    avg.meta.update({"temperatures": manifest["temperatures"], "mode": manifest["mode"]})
    _write_json(run_dir / "metrics.avg.json", avg.to_dict())
    print(_metric_line("averaged", avg))
    return EXIT_OK


def _metric_line(label: str, rep: MetricReport) -> str:
    c = rep.corpus
    return (f"{label}: n={rep.n_samples} BLEU={c.bleu:.4f} METEOR={c.meteor:.4f} "
            f"ROUGE-1={c.rouge1_f:.4f} ROUGE-L={c.rougeL_f:.4f}")


def uvq_for_reports(reports, judge, gateway, prompts, aggregation="sum") -> UvqReport:
    by_user: dict[str, list] = {}
    for v in reports:
        by_user.setdefault(v.source.target_user, []).extend(v.kept)
    sets = {}
    for user in sorted(by_user):
        judged = judge_user_features(by_user[user], judge, gateway, prompts)
        sets[user] = dedup_and_resolve(judged)
    return compute_uvq(sets, aggregation)


def cmd_uvq(args) -> int:
    run_dir = Path(args.run_dir)
    manifest = _read_manifest(run_dir)
    cfg = RunConfig.model_validate(manifest["config"])
    if args.mock_judge and (not cfg.fixture_dir or not Path(cfg.fixture_dir).is_dir()):
        raise InputError(f"--mock-judge needs an existing fixture_dir, got {cfg.fixture_dir}")
    judge = cfg.role_spec("judge", force_mock=args.mock_judge)
    gateway = Gateway(cache_dir=_cache_dir(cfg), max_concurrency=cfg.max_concurrency)
    prompts = load_prompts(cfg.prompt_dir)
    for tkey in manifest["temperatures"]:
        path = run_dir / f"reports.{tkey}.jsonl"
        if not path.exists():
            raise InputError(f"missing reports file {path}")
        report = uvq_for_reports(load_reports(path), judge, gateway, prompts, cfg.uvq_aggregation)
        _write_json(run_dir / f"uvq.{tkey}.json", report.to_dict())
        props = ", ".join(f"{k}={v:.3f}" for k, v in report.category_proportions.items()) or "-"
        print(f"T={tkey}: UVQ={report.dataset_uvq} over {len(report.per_user)} users; {props}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for d in args.run_dirs:
        run_dir = Path(d)
        manifest = _read_manifest(run_dir)
        metrics_path = run_dir / "metrics.avg.json"
        if not metrics_path.exists():
            raise InputError(f"{run_dir} has no metrics.avg.json; run `drp eval` first")
        metrics = MetricReport.from_dict(json.loads(metrics_path.read_text(encoding="utf-8")))
        uvqs = [json.loads((run_dir / f"uvq.{t}.json").read_text(encoding="utf-8"))["dataset_uvq"]
                for t in manifest["temperatures"] if (run_dir / f"uvq.{t}.json").exists()]
        uvq = sum(uvqs) / len(uvqs) if uvqs else None
        rows.append((str(run_dir), manifest["mode"], metrics, uvq))
        print(_metric_line(f"{run_dir} [{manifest['mode']}]", metrics)
              + ("" if uvq is None else f" UVQ={uvq:.2f}"))
    paired = [(m.corpus.bleu, u) for _, _, m, u in rows if u is not None]
    if len(paired) >= 2:
        try:
            r = pearson([b for b, _ in paired], [u for _, u in paired])
            print(f"pearson(BLEU, UVQ) over {len(paired)} runs: {r:.4f}")
        except InputError as e:
            print(f"pearson(BLEU, UVQ) undefined: {e}")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    """Record synthetic mock fixtures for every request a mock run would make."""
    cfg = load_config(args.config, mode=args.mode)
    if not cfg.corpus or not Path(cfg.corpus).is_file():
        raise InputError(f"corpus file not found: {cfg.corpus}")
    if not cfg.fixture_dir:
        raise InputError("config has no fixture_dir")
    recorder = RecordingResponder(SyntheticResponder(), cfg.fixture_dir)
    gateway = Gateway(cache_dir=None, max_concurrency=cfg.max_concurrency, responder=recorder)
    corpus = load_corpus(cfg.corpus)
    result = run_pipeline(corpus, cfg, gateway, force_mock=True)
    judge = cfg.role_spec("judge", force_mock=True)
    prompts = load_prompts(cfg.prompt_dir)
    for run in result.runs:
        uvq_for_reports([v for o in run.outputs for v in o.reports], judge, gateway, prompts)
    print(f"recorded {recorder.recorded} fixtures in {cfg.fixture_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drp", description="Personalized review generation from user differences.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate a corpus file and print counts")
    s.add_argument("corpus")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("cluster", help="fit user clusters and write cluster.json")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("run", help="run the pipeline and write a run bundle")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--mode", choices=("drp", "rag", "non_p"))
    s.add_argument("--mock", action="store_true", help="force every LLM role to the mock provider")
    s.add_argument("--run-dir")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="score a run's generations")
    s.add_argument("run_dir")
    s.add_argument("corpus")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("uvq", help="judge extracted features and compute UVQ")
    s.add_argument("run_dir")
    s.add_argument("--mock-judge", action="store_true")
    s.set_defaults(func=cmd_uvq)

    s = sub.add_parser("report", help="summarize evaluated runs; correlate BLEU with UVQ")
    s.add_argument("run_dirs", nargs="+")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("fixtures", help="record synthetic mock fixtures for a config")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--mode", choices=("drp", "rag", "non_p"))
    s.set_defaults(func=cmd_fixtures)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeFailure as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except DrpError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
