"""Command-line entry point: ingest, score, train, backtest, report.

Exit codes: 0 success, 1 user or data error, 2 internal error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
import traceback
from datetime import date
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .backtest import (load_benchmark, make_report, read_report_csv, run_backtest,
                       write_metrics_json, write_report_csv)
from .config import RunConfig
from .cppo import train_cppo
from .data import (align_calendar, compute_indicators, load_news_jsonl, load_price_csv,
                   sample_daily_news, write_news_jsonl, write_price_csv)
from .env import TradingEnv
from .errors import ConfigError, DataError, RiskAgentError
from .infusion import InfusionConfig, SignalGrid, score_grid
from .policy import load_checkpoint, save_checkpoint
from .ppo import train
from .scoring import MockTransport, load_scores_jsonl, score_news

log = logging.getLogger("riskagent")

ARTIFACT_VERSION = 1
CVAR_FLAGS = ("alpha", "beta", "lambda_init", "lambda_max", "lambda_step", "eta_step")


class UsageError(RiskAgentError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; here that is a user error
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _date(s: str) -> date:
    try:
        return date.fromisoformat(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {s!r}") from None


# --------------------------------------------------------------------------
# run directories


def _run_dir(args, command: str, seed: int) -> Path:
    if args.run_dir is not None:
        path = Path(args.run_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path(args.out_root) / f"{command}-{stamp}-{seed}"
        k = 2
        while path.exists() and any(path.iterdir()) and not args.force:
            path = Path(args.out_root) / f"{command}-{stamp}-{seed}-{k}"
            k += 1
    return path


def _prepare(path: Path, outputs: Sequence[str], force: bool) -> None:
    existing = [name for name in outputs if (path / name).exists()]
    if existing and not force:
        raise UsageError(f"{path} already holds {', '.join(existing)}; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(path: Optional[str], what: str) -> Path:
    if not path:
        raise UsageError(f"no {what} given (flag or config data section)")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


# --------------------------------------------------------------------------
# shared loading


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _panel(cfg: RunConfig, prices: Optional[str]):
    path = _require(prices or cfg.data.prices, "price CSV")
    panel = align_calendar(load_price_csv(path), cfg.data.fill_policy)
    return compute_indicators(panel, cfg.data.indicators), path


def _signals(panel, scores_path: Optional[str], infusion: InfusionConfig) -> Optional[SignalGrid]:
    if infusion.mode == "none":
        return None
    if not scores_path:
        raise UsageError(f"infusion mode '{infusion.mode}' needs a score file (--scores)")
    scores = load_scores_jsonl(_require(scores_path, "score file"))
    return score_grid(scores, panel.tickers, panel.dates, infusion.default_missing_score)


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    cfg = _config(args)
    if args.fill_policy:
        cfg = cfg.with_section("data", fill_policy=args.fill_policy)
    prices = _require(args.prices or cfg.data.prices, "price CSV")
    bars = load_price_csv(prices)
    panel = align_calendar(bars, cfg.data.fill_policy)
    news_path = args.news or cfg.data.news
    sampled = {}
    n_news = 0
    if news_path:
        records = load_news_jsonl(_require(news_path, "news JSONL"), panel.tickers)
        n_news = len(records)
        sampled = sample_daily_news(records, cfg.seed)
    out = _run_dir(args, "ingest", cfg.seed)
    _prepare(out, ("panel.csv", "news_sampled.jsonl", "manifest.json"), args.force)
    write_price_csv(panel, out / "panel.csv")
    files = {"panel.csv": _sha256(out / "panel.csv")}
    if news_path:
        write_news_jsonl([sampled[k] for k in sorted(sampled)], out / "news_sampled.jsonl")
        files["news_sampled.jsonl"] = _sha256(out / "news_sampled.jsonl")
    cfg.with_section("data", prices=str(prices), news=news_path).dump(out / "config.json")
    summary = {
        "artifact_version": ARTIFACT_VERSION,
        "tickers": list(panel.tickers),
        "days": panel.n_days,
        "first_date": panel.dates[0].isoformat(),
        "last_date": panel.dates[-1].isoformat(),
        "bars_in": len(bars),
        "cells_filled": int(panel.filled.sum()),
        "news_records": n_news,
        "news_sampled": len(sampled),
        "files": files,
    }
    _write_json(out / "manifest.json", summary)
    print(f"ingest: {len(bars)} bars -> {panel.n_days} days x {panel.n_tickers} tickers "
          f"({summary['cells_filled']} filled); {n_news} news -> {len(sampled)} sampled")
    print(f"wrote {out}")
    return 0


def cmd_score(args) -> int:
    cfg = _config(args)
    endpoint = cfg.endpoint.with_env_overrides()
    if args.max_in_flight is not None:
        endpoint = RunConfig(endpoint=endpoint).with_section("endpoint", max_in_flight=args.max_in_flight).endpoint
    transport = None
    if args.mock:
        transport = MockTransport.from_jsonl(_require(args.mock, "mock script"))
        if not endpoint.model_name:
            endpoint = RunConfig(endpoint=endpoint).with_section("endpoint", model_name="mock").endpoint
    elif not endpoint.base_url or not endpoint.model_name:
        raise UsageError("no endpoint configured (endpoint.base_url/model_name or RISKAGENT_BASE_URL/"
                         "RISKAGENT_MODEL) and no --mock script given")
    records = load_news_jsonl(_require(args.news or cfg.data.news, "news JSONL"))
    sampled = sample_daily_news(records, cfg.seed)
    out = _run_dir(args, "score", cfg.seed)
    store = out / "scores.jsonl"
    if args.force and store.exists():
        store.unlink()
    out.mkdir(parents=True, exist_ok=True)
    resumed = store.exists()
    run = score_news(endpoint, sampled, args.which, store=store, transport=transport)
    (out / "errors.jsonl").write_text("".join(json.dumps(e.to_json()) + "\n" for e in run.errors),
                                      encoding="utf-8")
    cfg.with_section("endpoint", model_name=endpoint.model_name).dump(out / "config.json")
    print(f"score: {len(sampled)} keys, {len(run.requested)} requested"
          f"{' (resumed)' if resumed else ''}, {len(run.errors)} errors, "
          f"{run.stats.retries} retries")
    print(f"wrote {store}")
    return 0


def _train_config(args) -> RunConfig:
    cfg = _config(args)
    cfg = cfg.with_section("train", epochs=args.epochs, steps_per_epoch=args.steps_per_epoch,
                           checkpoint_every=args.checkpoint_every)
    cfg = cfg.with_section("infusion", mode=args.infusion, strength=args.strength)
    cfg = cfg.with_section("data", train_start=args.start, train_end=args.end)
    cvar_flags = {name: getattr(args, name) for name in CVAR_FLAGS}
    if any(v is not None for v in cvar_flags.values()):
        if args.algo == "ppo":
            log.warning("CVaR flags (%s) are ignored with --algo ppo",
                        ", ".join(k for k, v in cvar_flags.items() if v is not None))
        else:
            cfg = cfg.with_section("cvar", **cvar_flags)
    return cfg


def cmd_train(args) -> int:
    cfg = _train_config(args)
    panel, prices = _panel(cfg, args.prices)
    if cfg.data.train_start or cfg.data.train_end:
        panel = panel.window(cfg.data.train_start, cfg.data.train_end)
    scores = args.scores or cfg.data.scores
    signals = _signals(panel, scores, cfg.infusion)
    observe = cfg.infusion.observes_signals
    out = _run_dir(args, "train", cfg.seed)
    _prepare(out, ("checkpoint.json", "train_log.csv"), args.force)
    cfg.with_section("data", prices=str(prices), scores=scores).dump(out / "config.json")

    def env_factory(seed):
        return TradingEnv(panel, cfg.env, signals, seed=seed, observe_signals=observe)

    meta = {
        "algo": args.algo,
        "tickers": list(panel.tickers),
        "indicators": list(panel.indicator_names),
        "train_window": [panel.dates[0].isoformat(), panel.dates[-1].isoformat()],
        "config": cfg.to_dict(),
    }
    ckpt_dir = out if cfg.train.checkpoint_every else None
    progress = None if args.quiet else (lambda row: print(
        f"epoch {row['epoch']}/{cfg.train.epochs} steps {row['env_steps']} "
        f"return {row['mean_episode_return']:.4g}", flush=True))
    kw = dict(checkpoint_dir=ckpt_dir, checkpoint_meta=meta, progress=progress)
    if args.algo == "cppo":
        result = train_cppo(env_factory, cfg.train, cfg.cvar, cfg.infusion, cfg.policy, **kw)
    else:
        result = train(env_factory, cfg.train, cfg.infusion, cfg.policy, **kw)
    meta["env_steps"] = result.env_steps
    save_checkpoint(out / "checkpoint.json", result.params, meta)
    result.write_log(out / "train_log.csv")
    print(f"train: {args.algo} {result.env_steps} env steps over {cfg.train.epochs} epochs")
    print(f"wrote {out}")
    return 0


def cmd_backtest(args) -> int:
    params, meta = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    cfg = _config(args)
    saved = meta.get("config", {})
    # the checkpoint fixes the agent's wiring unless flags say otherwise
    cfg = cfg.with_section("infusion", **saved.get("infusion", {}))
    cfg = cfg.with_section("infusion", mode=args.infusion, strength=args.strength)
    cfg = cfg.with_section("policy", **saved.get("policy", {}))
    if args.config is None and "env" in saved:
        cfg = cfg.with_section("env", **saved["env"])
    if "indicators" in meta:
        cfg = cfg.with_section("data", indicators=meta["indicators"])
    cfg = cfg.with_section("backtest", start=args.start, end=args.end)
    panel, prices = _panel(cfg, args.prices)
    if "tickers" in meta and list(meta["tickers"]) != list(panel.tickers):
        raise DataError(f"checkpoint trades {meta['tickers']}, price file holds {list(panel.tickers)}")
    bt = cfg.backtest
    if bt.start and bt.start > panel.dates[-1] or bt.end and bt.end < panel.dates[0]:
        raise DataError(f"backtest window {bt.start}..{bt.end} outside data "
                        f"{panel.dates[0]}..{panel.dates[-1]}")
    scores = args.scores or cfg.data.scores
    signals = _signals(panel, scores, cfg.infusion)
    trace = run_backtest(params, panel, signals, cfg.env, cfg.infusion, cfg.seed, bt.start, bt.end,
                         cfg.policy)
    bench_path = args.benchmark or cfg.data.benchmark
    bench = None
    if bench_path:
        bench = load_benchmark(_require(bench_path, "benchmark CSV"), trace.dates,
                               args.benchmark_ticker or cfg.data.benchmark_ticker)
    else:
        log.warning("no benchmark given; information_ratio will be null")
    report = make_report(trace.values, bench, trace.dates, bt.cvar_alpha, bt.rachev_tail)
    out = _run_dir(args, "backtest", cfg.seed)
    _prepare(out, ("report.csv", "metrics.json"), args.force)
    cfg.with_section("data", prices=str(prices), scores=scores, benchmark=bench_path).dump(out / "config.json")
    write_report_csv(report, out / "report.csv")
    write_metrics_json(report, out / "metrics.json", {"days": len(trace.dates)})
    _print_metrics(report.metrics())
    print(f"wrote {out}")
    return 0


def _print_metrics(m: dict, label: str = "") -> None:
    cells = [f"{k}={'null' if v is None else f'{v:.6g}'}" for k, v in m.items()]
    print((label + ": " if label else "") + " ".join(cells))


def cmd_report(args) -> int:
    for path in args.reports:
        p = Path(path)
        if p.is_dir():
            p = p / "report.csv"
        report = read_report_csv(p, args.alpha, args.tail)
        if report.benchmark_values is None:
            log.warning("%s has no benchmark column; information_ratio is null", p)
        _print_metrics(report.metrics(), str(p))
        if args.write:
            target = p.parent / "metrics.json"
            if target.exists() and not args.force:
                raise UsageError(f"{target} exists; pass --force to overwrite")
            write_metrics_json(report, target, {"days": len(report.dates)})
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="riskagent", description="risk-sensitive RL trading with LLM news signals")
    ap.add_argument("--version", action="version", version=f"riskagent {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True):
        p.add_argument("--config", help="YAML or JSON run config")
        p.add_argument("--out-root", default="runs", help="parent of stamped run directories")
        p.add_argument("--run-dir", help="exact output directory instead of a stamped one")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if seed:
            p.add_argument("--seed", type=int)

    p = sub.add_parser("ingest", help="align prices and sample one news item per stock-day")
    common(p)
    p.add_argument("--prices")
    p.add_argument("--news")
    p.add_argument("--fill-policy", choices=("ffill", "strict"))
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("score", help="score sampled news with an LLM endpoint or a mock")
    common(p)
    p.add_argument("--news")
    p.add_argument("--mock", help="JSONL script of canned responses")
    p.add_argument("--which", choices=("sentiment", "risk", "both"), default="both")
    p.add_argument("--max-in-flight", type=int)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="train a PPO or CPPO agent")
    common(p)
    p.add_argument("--prices")
    p.add_argument("--scores")
    p.add_argument("--algo", choices=("ppo", "cppo"), default="ppo")
    p.add_argument("--infusion", choices=("none", "sentiment", "risk", "both"))
    p.add_argument("--strength", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--start", type=_date, help="first training day")
    p.add_argument("--end", type=_date, help="last training day")
    for name in CVAR_FLAGS:
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("backtest", help="run a checkpoint over a window and write metrics")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prices")
    p.add_argument("--scores")
    p.add_argument("--benchmark", help="price CSV of the benchmark series")
    p.add_argument("--benchmark-ticker")
    p.add_argument("--infusion", choices=("none", "sentiment", "risk", "both"))
    p.add_argument("--strength", type=float)
    p.add_argument("--start", type=_date)
    p.add_argument("--end", type=_date)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("report", help="recompute metrics from report CSVs")
    p.add_argument("reports", nargs="+", help="report.csv files or backtest run directories")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--tail", type=float, default=0.05)
    p.add_argument("--write", action="store_true", help="write metrics.json next to each report")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    try:
        ap = build_parser()
        args = ap.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (RiskAgentError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
