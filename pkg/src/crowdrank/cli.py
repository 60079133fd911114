"""Command line entry point (``crowdrank``).

Exit codes: 0 success, 1 unexpected error, 2 configuration or checkpoint
error, 3 backend error, 4 a window reranking diverged (output is still
written), 5 replay verification mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import BackendUnavailable, ConfigDrift, CorruptCheckpoint, CrowdRankError, VersionMismatch
from .persistence import RunLock, checkpoint_load
from .runs import DimensionRun, RunConfig

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_BACKEND, EXIT_DIVERGED, EXIT_MISMATCH = 0, 1, 2, 3, 4, 5

log = logging.getLogger("crowdrank")


class ConfigError(Exception):
    pass


def _emit(rows: list[dict], fields: list[str], fmt: str, out=None) -> None:
    out = out or sys.stdout
    if fmt == "machine":
        for r in rows:
            out.write(json.dumps({f: r.get(f) for f in fields}, ensure_ascii=False) + "\n")
        return
    cells = [[_fmt(r.get(f)) for f in fields] for r in rows]
    widths = [max([len(f)] + [len(c[i]) for c in cells]) for i, f in enumerate(fields)]
    out.write("  ".join(f.ljust(w) for f, w in zip(fields, widths)).rstrip() + "\n")
    for c in cells:
        out.write("  ".join(x.ljust(w) for x, w in zip(c, widths)).rstrip() + "\n")


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.2f}"
    return str(x)


def _load_config(args) -> RunConfig:
    try:
        return RunConfig.load(args.config, seed=args.seed)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{args.config}: {exc}") from exc


def _dimensions(args, cfg: RunConfig) -> list[str]:
    if args.dimensions:
        dims = [d.strip() for d in args.dimensions.split(",") if d.strip()]
        unknown = set(dims) - set(cfg.dimensions)
        if unknown:
            raise ConfigError(f"dimensions not in config: {sorted(unknown)}")
        return dims
    return list(cfg.dimensions)


def _write_config_copy(run_dir: Path, cfg: RunConfig) -> None:
    path = run_dir / "config.json"
    if not path.exists():
        run_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _state_rows(state) -> list[dict]:
    return [
        {"rank": i + 1, "model": m, "elo": state.elo.get(m), "weight": state.weights.get(m)}
        for i, m in enumerate(state.order)
    ]


def cmd_rank(args) -> int:
    cfg = _load_config(args)
    run_dir = Path(args.run_dir)
    code = EXIT_OK
    with RunLock(run_dir):
        _write_config_copy(run_dir, cfg)
        for dim in _dimensions(args, cfg):
            run = DimensionRun(cfg, run_dir, dim)
            try:
                state, ledger, report = run.run()
            finally:
                run.close()
            if args.format == "human":
                print(f"# {dim}: {len(state)} models, {ledger.pair_comparisons} pair comparisons, "
                      f"{ledger.judge_votes} judge votes")
            _emit([{"dimension": dim, **r} for r in _state_rows(state)],
                  ["dimension", "rank", "model", "elo", "weight"], args.format)
            if report.diverged:
                code = EXIT_DIVERGED
    return code


def cmd_insert(args) -> int:
    cfg = _load_config(args)
    run_dir = Path(args.run_dir)
    code = EXIT_OK
    with RunLock(run_dir):
        for dim in _dimensions(args, cfg):
            run = DimensionRun(cfg, run_dir, dim)
            if not run.has_checkpoint:
                raise ConfigError(f"no checkpointed run for dimension {dim} in {run_dir}")
            try:
                state, ledger, report = run.insert(args.model)
            finally:
                run.close()
            rec = report.insertions[-1]
            _emit([{"dimension": dim, **rec.to_dict()}],
                  ["dimension", "model", "binary_index", "final_position", "probes", "window_rounds",
                   "votes_spent", "diverged"], args.format)
            if rec.diverged:
                code = EXIT_DIVERGED
    return code


def cmd_select(args) -> int:
    from .judges import JudgeGateway
    from .persistence import ResponseStore, VoteStore
    from .selection import read_pool, select_representative, write_selection

    cfg = _load_config(args)
    probes = cfg.probe_models or cfg.models
    pool = read_pool(args.pool)
    run_dir = Path(args.run_dir)
    with RunLock(run_dir):
        sel_dir = run_dir / "_selection"
        store = VoteStore(sel_dir / "votes.jsonl")
        responses = ResponseStore(sel_dir / "responses.jsonl")
        gw = JudgeGateway(cfg.backend.build(), store, responses,
                          order_seed=int(cfg.gateway.get("order_seed", 0)),
                          position_mode=cfg.gateway.get("position_mode", "random"))
        try:
            scores = select_representative(pool, probes, args.top_k, gw, cfg.ranking)
        finally:
            store.close()
            responses.close()
    if args.output:
        write_selection(scores, args.output)
    _emit([s.to_dict() for s in scores], ["id", "dimension", "rho"], args.format)
    return EXIT_OK


def leaderboard_rows(cfg: RunConfig, run_dir: Path, dims: list[str]) -> list[dict]:
    """Per-dimension scores plus the mean rank across ``dims`` (lower is better)."""
    table: dict[str, dict] = {}
    for dim in dims:
        cp_path = run_dir / dim / "checkpoint.json"
        if not cp_path.exists():
            raise ConfigError(f"dimension {dim} has not been ranked in {run_dir}")
        cp = checkpoint_load(cp_path, expected_hash=cfg.hash())
        for i, m in enumerate(cp.state.order, start=1):
            row = table.setdefault(m, {"model": m})
            row[f"elo:{dim}"] = cp.state.elo.get(m)
            row[f"rank:{dim}"] = i
    for row in table.values():
        ranks = [row[f"rank:{d}"] for d in dims if f"rank:{d}" in row]
        row["avg_rank"] = float(np.mean(ranks))
    return sorted(table.values(), key=lambda r: (r["avg_rank"], r["model"]))


def cmd_leaderboard(args) -> int:
    cfg = _load_config(args)
    dims = _dimensions(args, cfg)
    rows = leaderboard_rows(cfg, Path(args.run_dir), dims)
    _emit(rows, ["model", *[f"elo:{d}" for d in dims], "avg_rank"], args.format)
    return EXIT_OK


def cmd_export(args) -> int:
    from .core import VoteRecord
    from .persistence import read_jsonl
    from .sim import count_concentration, export_matrices, write_grid

    cfg = _load_config(args)
    run_dir = Path(args.run_dir)
    out_dir = Path(args.out_dir) if args.out_dir else run_dir
    rows = []
    for dim in _dimensions(args, cfg):
        cp = checkpoint_load(run_dir / dim / "checkpoint.json", expected_hash=cfg.hash())
        votes = [VoteRecord.from_dict(r) for r in read_jsonl(run_dir / dim / "votes.jsonl")]
        weights = cp.state.weights if cfg.ranking.judge_weight_mode == "elo" else None
        winrate, count = export_matrices(votes, cp.state, weights)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_grid(winrate, cp.state.order, out_dir / f"{dim}.winrate.tsv")
        write_grid(count, cp.state.order, out_dir / f"{dim}.counts.tsv")
        near, overall = count_concentration(count)
        rows.append({"dimension": dim, "compared_pair_distance": near, "all_pair_distance": overall,
                     "winrate": str(out_dir / f"{dim}.winrate.tsv"), "counts": str(out_dir / f"{dim}.counts.tsv")})
    _emit(rows, ["dimension", "compared_pair_distance", "all_pair_distance", "winrate", "counts"], args.format)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .sim import ExperimentSpec, equally_spaced_population, run_experiment

    cfg = _load_config(args)
    spec_d = dict(cfg.experiment or {})
    if args.study:
        spec_d["study"] = args.study
    if "study" not in spec_d:
        raise ConfigError("simulate needs --study or experiment.study in the config")
    if args.repetitions:
        spec_d["repetitions"] = args.repetitions
        spec_d.pop("seeds", None)
    if "population" not in spec_d:
        spec_d["population"] = [p.to_dict() for p in (cfg.backend.profiles or equally_spaced_population(30))]
    try:
        spec = ExperimentSpec.from_dict(spec_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad experiment spec: {exc}") from exc
    report = run_experiment(spec)
    text = report.to_text()
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / f"simulate-{spec.study}.jsonl").write_text(text, encoding="utf-8")
    if args.format == "machine":
        sys.stdout.write(text)
    else:
        print(f"# {spec.study}: {len(report.rows)} repetitions")
        print(json.dumps(report.aggregate, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    run_dir = Path(args.run_dir)
    code = EXIT_OK
    rows = []
    with RunLock(run_dir):
        for dim in _dimensions(args, cfg):
            run = DimensionRun(cfg, run_dir, dim)
            try:
                same, _, _ = run.verify()
            finally:
                run.close()
            rows.append({"dimension": dim, "verified": same})
            if not same:
                code = EXIT_MISMATCH
    _emit(rows, ["dimension", "verified"], args.format)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdrank", description="Decentralised pairwise ranking of models.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON configuration file")
    common.add_argument("--run-dir", required=True, help="run directory")
    common.add_argument("--seed", type=int, default=None, help="override ranking/backend seeds")
    common.add_argument("--dimensions", default=None, help="comma-separated subset of dimensions")
    common.add_argument("--format", choices=("human", "machine"), default="human")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("rank", parents=[common], help="rank all configured models").set_defaults(func=cmd_rank)
    s = sub.add_parser("insert", parents=[common], help="insert one model into a finished run")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_insert)
    s = sub.add_parser("select-questions", parents=[common], help="pick representative questions")
    s.add_argument("--top-k", type=int, required=True)
    s.add_argument("--pool", required=True, help="candidate questions (JSONL)")
    s.add_argument("--output", default=None, help="where to write the selection (JSONL)")
    s.set_defaults(func=cmd_select)
    sub.add_parser("leaderboard", parents=[common], help="print scores and average rank").set_defaults(
        func=cmd_leaderboard)
    s = sub.add_parser("export-matrices", parents=[common], help="write win-rate and count grids")
    s.add_argument("--out-dir", default=None)
    s.set_defaults(func=cmd_export)
    s = sub.add_parser("simulate", parents=[common], help="run a simulation study")
    s.add_argument("--study", default=None)
    s.add_argument("--repetitions", type=int, default=None)
    s.set_defaults(func=cmd_simulate)
    sub.add_parser("replay-verify", parents=[common], help="re-derive rankings from the vote logs").set_defaults(
        func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ConfigDrift, VersionMismatch, CorruptCheckpoint) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendUnavailable as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except CrowdRankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
