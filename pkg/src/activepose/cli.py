"""Command line entry point: train, eval, compare, curve, ablate, audit."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness as H

EXIT_OK, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2

log = logging.getLogger("activepose")


def _config(args) -> H.ExperimentConfig:
    cfg = H.load_config(args.config) if args.config else H.ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seeds"] = (args.seed,)
    if args.mode is not None:
        changes["mode"] = args.mode
    if getattr(args, "episodes", None) is not None:
        changes["episodes"] = args.episodes
    if getattr(args, "test_episodes", None) is not None:
        changes["test_episodes"] = args.test_episodes
    return cfg.replace(**changes) if changes else cfg


def _views(arg: str | None) -> int | None:
    if arg is None or arg == "auto":
        return None
    try:
        k = int(arg)
    except ValueError:
        raise H.ConfigError(f"--views must be 'auto' or a positive integer, got {arg!r}") from None
    if k < 1:
        raise H.ConfigError("--views must be positive")
    return k


def _load_agents(cfg, out: Path, base_only=False) -> dict[int, dict]:
    pcfg = cfg.policy_config(base_only)
    return {s: H.load_agent(H.checkpoint_path(out, s, base_only), pcfg) for s in cfg.seeds}


def _train_missing(cfg, out: Path, scenes, base_only: bool) -> dict[int, dict]:
    agents = {}
    for s in cfg.seeds:
        path = H.checkpoint_path(out, s, base_only)
        if not path.with_suffix(".bin").exists():
            log.info("training %s seed %d", "base-only variant" if base_only else "agent", s)
            res = H.train_agent(cfg, s, scenes, base_only)
            H.save_agent(path, res, cfg, s)
            res.log.write_csv(out / f"train_{path.name}.csv")
        agents[s] = H.load_agent(path, cfg.policy_config(base_only))
    return agents


def _write_table(out: Path, records) -> None:
    H.write_records(out / "results.csv", records)
    (out / "table.txt").write_text(H.table_text(records))


def cmd_train(cfg, args, out: Path) -> int:
    scenes = H.build_scenes(cfg)
    for s in cfg.seeds:
        res = H.train_agent(cfg, s, scenes, cfg.base_only)
        path = H.checkpoint_path(out, s, cfg.base_only)
        H.save_agent(path, res, cfg, s)
        res.log.write_csv(out / f"train_{path.name}.csv")
        print(f"seed {s}: best validation error {res.best_val_error:.2f} mm at episode {res.best_step} -> {path}.bin")
    return EXIT_OK


def cmd_eval(cfg, args, out: Path) -> int:
    k = _views(args.views)
    agents = _load_agents(cfg, out, cfg.base_only)
    scenes = H.build_scenes(cfg)
    pcfg = cfg.policy_config()
    records = []
    for s, params in agents.items():
        records += H.evaluate(cfg, scenes, H.AGENT, s, k, params, pcfg)
    _write_table(out, records)
    print(H.table_text(records), end="")
    return EXIT_OK


def cmd_compare(cfg, args, out: Path) -> int:
    agents = _load_agents(cfg, out)
    records, k = H.compare(cfg, agents)
    _write_table(out, records)
    rt = [{"model": r.model, "views_mode": r.views_mode, "views": r.views, "runtime_s": r.runtime_s}
          for r in H.table_from_records(records).rows]
    H.write_rows(out / "runtime.csv", rt, ("model", "views_mode", "views", "runtime_s"))
    print(f"matched view budget k={k}")
    print(H.table_text(records), end="")
    return EXIT_OK


def cmd_curve(cfg, args, out: Path) -> int:
    agents = _load_agents(cfg, out)
    rows = H.curve(cfg, agents)
    H.write_rows(out / "curve.csv", rows, ("model", "k", "error_mm", "ci_mm", "views", "runtime_s"))
    H.write_rows(out / "runtime.csv", rows, ("model", "k", "views", "runtime_s"))
    for r in rows:
        print(f"{r['model']:<10} k={r['k']} error={r['error_mm']:.2f} runtime={r['runtime_s']:.2f}")
    return EXIT_OK


def cmd_ablate(cfg, args, out: Path) -> int:
    agents = _load_agents(cfg, out)
    scenes = H.build_scenes(cfg)
    k = _views(args.views)
    if k is None:
        auto = []
        for s, params in agents.items():
            auto += H.evaluate(cfg, scenes, H.AGENT, s, None, params, cfg.policy_config())
        k = H.matched_view_budget(H.mean_views(auto))
    base = _train_missing(cfg, out, scenes, base_only=True)
    records = H.ablate(cfg, agents, base, k, scenes)
    _write_table(out, records)
    print(f"ablations at k={k}")
    print(H.table_text(records), end="")
    return EXIT_OK


def cmd_audit(cfg, args, out: Path) -> int:
    bad = H.audit(out / "results.csv", out / "table.txt")
    if bad:
        print("\n".join(bad))
        return EXIT_CONFIG
    print("table.txt matches results.csv")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "compare": cmd_compare, "curve": cmd_curve,
            "ablate": cmd_ablate, "audit": cmd_audit}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="activepose", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value experiment config file")
        sp.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        sp.add_argument("--mode", choices=("S", "M"))
        sp.add_argument("--views", default=None, help="auto or a fixed number of views")
        sp.add_argument("--out", default="runs", help="output directory")
        sp.add_argument("--episodes", type=int, help="override training episodes")
        sp.add_argument("--test-episodes", type=int, dest="test_episodes", help="override test episodes")
    sub.add_parser("write-config").add_argument("path")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "write-config":
        Path(args.path).write_text(H.ExperimentConfig().to_text())
        return EXIT_OK
    try:
        cfg = _config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text())
        return COMMANDS[args.command](cfg, args, out)
    except H.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except H.MissingArtifact as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
