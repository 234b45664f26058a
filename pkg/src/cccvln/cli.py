"""Command-line entry point: ``ccc <command> ...``.

Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import os
import sys
from pathlib import Path

from . import oracle
from .autodiff import CheckpointError, NonFiniteGradient
from .trainer import (
    ABLATION_ROWS,
    PRESETS,
    ConfigError,
    NumericError,
    RunLog,
    Trainer,
    build_data,
    evaluate,
    load_checkpoint,
    load_config,
    runlog_charts,
    save_checkpoint,
)
from .world import WorldError, format_episodes, generate_world

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
METRIC_COLUMNS = ("SR", "NE", "OR", "SPL", "Bleu-1", "Bleu-4", "CIDEr", "Rouge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _threads() -> int:
    raw = os.environ.get("CCC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CCC_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("CCC_THREADS must be >= 1")
    return n


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _banner(command: str, inputs: list[Path], cfg=None) -> None:
    lines = [f"# ccc {command}  threads={_threads()}"]
    for p in inputs:
        lines.append(f"# input {p} sha256:{_sha(p)}")
    if cfg is not None:
        lines += ["# " + ln for ln in cfg.to_text().splitlines()]
    print("\n".join(lines), file=sys.stderr)


def _parse_overrides(pairs: list[str]) -> dict:
    from .trainer.config import coerce
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = coerce(k.strip(), v)
    return out


def _config(args, **extra):
    text = None
    inputs = []
    if getattr(args, "config", None):
        p = Path(args.config)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        text = p.read_text()
        inputs.append(p)
    over = _parse_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    for k, v in extra.items():
        if v is not None:
            over[k] = v
    return load_config(text, over), inputs


def _write_metrics(path: Path, rows: list[dict], keys=("split",)) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(keys) + list(METRIC_COLUMNS))
    for r in rows:
        w.writerow([r[k] for k in keys] + [f"{r[c]:.6g}" for c in METRIC_COLUMNS])
    path.write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())


# -- commands --------------------------------------------------------------------

def cmd_gen_world(args) -> int:
    _banner("gen-world", [])
    world = generate_world(args.seed, args.width, args.height, args.density)
    Path(args.out).write_text(world.to_text())
    print(f"wrote {args.out}: {world.n_nodes} nodes, {world.n_edges()} edges")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg, inputs = _config(args)
    _banner("gen-data", inputs, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = build_data(cfg)
    worlds = list(data.worlds.values())
    (out / "worlds").mkdir(exist_ok=True)
    for w in worlds:
        (out / "worlds" / f"{w.id}.world").write_text(w.to_text())
    (out / "labeled.tsv").write_text(format_episodes(data.labeled))
    (out / "unlabeled.tsv").write_text(format_episodes(data.unlabeled))
    for name, eps in data.splits.items():
        (out / f"{name}.tsv").write_text(format_episodes(eps))
    print(f"wrote {len(worlds)} worlds, |D|={len(data.labeled)}, |U|={len(data.unlabeled)} to {out}")
    return EXIT_OK


def _train_one(cfg, out: Path, resume: Path | None = None, quiet: bool = False,
               until: int | None = None) -> Trainer:
    out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        tr = load_checkpoint(resume)
        if tr.cfg.to_dict() != cfg.to_dict():
            raise ConfigError("resumed checkpoint was written with a different config")
        log_path = out / "runlog.csv"
        if log_path.is_file():
            rows = RunLog.parse(log_path.read_text())
            tr.log = RunLog([{k: (int(v) if k == "iteration" else v) for k, v in r.items() if v is not None}
                             for r in rows if r["iteration"] <= tr.iteration])
    else:
        tr = Trainer(cfg)
    (out / "config.txt").write_text(cfg.to_text())
    total = tr.total_iterations if until is None else min(until, tr.total_iterations)
    while tr.iteration < total:
        row = tr.step()
        if not quiet and (tr.iteration % 25 == 0 or tr.iteration == total):
            shown = ", ".join(f"{k}={row[k]:.4g}" for k in ("il", "speaker", "cycle_A", "cycle_X") if row.get(k) is not None)
            print(f"iter {tr.iteration}/{total} {shown}", file=sys.stderr)
    save_checkpoint(tr, out / "checkpoint.ckpt")
    (out / "runlog.csv").write_text(tr.log.to_csv())
    return tr


def cmd_train(args) -> int:
    cfg, inputs = _config(args, preset=args.preset, mode=args.mode)
    resume = Path(args.resume) if args.resume else None
    if resume is not None and not resume.is_file():
        raise FileNotFoundError(f"checkpoint not found: {resume}")
    _banner("train", inputs + ([resume] if resume else []), cfg)
    out = Path(args.out)
    tr = _train_one(cfg, out, resume, until=args.until)
    res = evaluate(tr.models, tr.data, cfg.eval_split, cfg, threads=_threads())
    _write_metrics(out / "metrics.csv", [{"split": cfg.eval_split, **res}])
    return EXIT_OK


def cmd_eval(args) -> int:
    ck = Path(args.checkpoint)
    if not ck.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ck}")
    _banner("eval", [ck])
    tr = load_checkpoint(ck)
    rows = [{"split": s, **evaluate(tr.models, tr.data, s, tr.cfg, threads=_threads())} for s in args.split]
    _write_metrics(Path(args.out), rows)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    _banner("oracle-check", [])
    results = oracle.suite(args.seed)
    ok = True
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok &= passed
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_ablate(args) -> int:
    cfg, inputs = _config(args, preset=args.preset)
    _banner("ablate", inputs, cfg)
    out = Path(args.out)
    rows = []
    modes = args.rows or ["baseline"] + [f"ablation:{r}" for r in ABLATION_ROWS]
    for mode in modes:
        run_cfg = cfg.replace(mode=mode)
        print(f"== {mode}", file=sys.stderr)
        tr = _train_one(run_cfg, out / mode.replace(":", "_"), quiet=True)
        rows.append({"row": mode, **evaluate(tr.models, tr.data, cfg.eval_split, run_cfg, threads=_threads())})
    _write_metrics(out / "ablation.csv", rows, keys=("row",))
    return EXIT_OK


def cmd_plot(args) -> int:
    src = Path(args.runlog)
    if not src.is_file():
        raise FileNotFoundError(f"run log not found: {src}")
    _banner("plot", [src])
    rows = RunLog.parse(src.read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, svg in runlog_charts(rows).items():
        (out / f"{name}.svg").write_text(svg)
        print(f"wrote {out / (name + '.svg')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ccc", description="Counterfactual cycle-consistent speaker/follower training on grid worlds.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True, seed_required=False):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, required=seed_required)
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    sp = sub.add_parser("gen-world", help="write one generated world file")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--width", type=int, default=5)
    sp.add_argument("--height", type=int, default=5)
    sp.add_argument("--density", type=float, default=0.1)
    sp.set_defaults(fn=cmd_gen_world)

    sp = sub.add_parser("gen-data", help="write worlds and dataset splits")
    common(sp)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train", help="train one configuration")
    common(sp)
    sp.add_argument("--preset", choices=PRESETS)
    sp.add_argument("--mode", help="baseline | bt | ccc | ablation:<row>")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--until", type=int, help="stop (and checkpoint) after this iteration")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", action="append", choices=("val_seen", "val_unseen"))
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("oracle-check", help="run the exact-enumeration self checks")
    sp.add_argument("--seed", type=int, default=1)
    sp.set_defaults(fn=cmd_oracle_check)

    sp = sub.add_parser("ablate", help="train the ablation rows and write a combined table")
    common(sp)
    sp.add_argument("--preset", choices=PRESETS)
    sp.add_argument("--rows", nargs="+", help="modes to run (default: baseline and every ablation row)")
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("plot", help="render a run log to SVG charts")
    sp.add_argument("--runlog", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "command", None) == "eval" and not args.split:
            args.split = ["val_unseen"]
        _threads()
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"ccc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, WorldError, CheckpointError) as exc:
        print(f"ccc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, NonFiniteGradient, FloatingPointError) as exc:
        print(f"ccc: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
