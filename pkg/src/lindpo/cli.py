"""Command-line entry point: ``lindpo verify | gen-data | train | sample | eval | plot``.

Exit codes: 0 success, 1 check failure (or aborted training), 2 configuration
error, 3 I/O or file-format error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as rc
from .data_io import (
    METRIC_COLUMNS,
    ToyTaskSpec,
    gen_dataset,
    load_dataset,
    read_json,
    read_metrics,
    save_dataset,
    save_samples_csv,
    write_json,
)
from .dynamics import sample
from .errors import ConfigError, DomainError, ParseError, ShapeError, TrainingAborted
from .nn import model_from_dict, model_to_dict
from .objectives import PairBatch, stack_pairs
from .plotting import metrics_svg, utility_svg
from .training import (
    _prepare_out_dir,
    evaluate,
    sampler_pref_mass,
    state_from_dict,
    train_run,
    train_sft,
)
from .verify import format_table, run_checks

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("lindpo")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser():
    p = _Parser(prog="lindpo", description="Preference optimization for toy flow and diffusion models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify", help="run the built-in property checks")
    v.add_argument("--filter", default=None, help="run only checks whose name or group contains this text")

    g = sub.add_parser("gen-data", help="write a synthetic preference dataset as JSON lines")
    g.add_argument("--modes", default=rc.DEFAULTS["modes"], help="'x,y,std,pref;...' with pref 1 or 0")
    g.add_argument("--pairs", type=int, default=rc.DEFAULTS["pairs"])
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--label-flip-prob", type=float, default=0.0)
    g.add_argument("--independent-modes", action="store_true", help="draw both candidates from the full mixture")
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train with linear-dpo, dpo or sft")
    t.add_argument("--method", choices=("linear-dpo", "dpo", "sft"), default=None)
    t.add_argument("--config", default=None, help="JSON run config (defaults apply to missing keys)")
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--data", default=None, help="dataset JSONL (default: generate from the config's task)")
    t.add_argument("--init", default=None, help="checkpoint whose policy initializes training")
    t.add_argument("--resume", default=None, help="continue from a checkpoint written by an earlier run")
    t.add_argument("--paper-hparams", action="store_true", help="use the image-scale learning rate as default")

    s = sub.add_parser("sample", help="draw samples from a checkpoint; CSV on stdout")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--mode", choices=("ode", "sde"), default="ode")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--cond", default=None, help="comma-separated condition vector")

    e = sub.add_parser("eval", help="report pref_mass and implicit_acc as one JSON line")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--n", type=int, default=2000, help="number of samples for pref_mass")
    e.add_argument("--steps", type=int, default=50)
    e.add_argument("--seed", type=int, default=0)

    pl = sub.add_parser("plot", help="write an SVG of training metrics or of the utility curves")
    src = pl.add_mutually_exclusive_group(required=True)
    src.add_argument("--metrics", help="metrics CSV written by train")
    src.add_argument("--utility", action="store_true", help="plot the five normalized utilities")
    pl.add_argument("--columns", default="implicit_acc,mean_weight,pref_mass,loss")
    pl.add_argument("--out", required=True)
    return p


# -- helpers -----------------------------------------------------------------


def _read_checkpoint(path):
    try:
        return read_json(path)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None


def _checkpoint_config(doc):
    """Validated run config stored in a training checkpoint (defaults if absent)."""
    stored = doc.get("config") if isinstance(doc, dict) else None
    return rc.validate_config(stored or {})


def _checkpoint_policy(doc):
    try:
        return model_from_dict(doc["policy"] if "policy" in doc else doc)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"checkpoint lacks model field {exc}", 0) from None


def _training_data(c, task):
    if c["data"] is not None:
        pairs = load_dataset(c["data"])
        if not pairs:
            raise ConfigError(f"dataset {c['data']} is empty")
        return stack_pairs(pairs)
    if task.pairs == 0:
        raise ConfigError("pairs must be positive when no dataset file is given")
    return stack_pairs(gen_dataset(task))


def _pretrain(cfg, c, data, out):
    """SFT base model fitted to both candidates of every pair."""
    from dataclasses import replace

    x0 = np.concatenate([data.x0_w, data.x0_l])
    cond = np.concatenate([data.c, data.c])
    sft_cfg = replace(cfg, lr=c["pretrain_lr"])
    base = train_sft(sft_cfg, (x0, cond), c["pretrain_steps"])
    write_json(out / "pretrain.json", model_to_dict(base))
    return base


# -- subcommands -----------------------------------------------------------------


def cmd_verify(args):
    results = run_checks(args.filter)
    if not results:
        print(f"no checks match {args.filter!r}", file=sys.stderr)
        return EXIT_CONFIG
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_gen_data(args):
    task = rc.task_from_modes(
        args.modes,
        pairs=args.pairs,
        seed=args.seed,
        label_flip_prob=args.label_flip_prob,
        distinct_modes=not args.independent_modes,
    )
    save_dataset(gen_dataset(task), args.out)
    return EXIT_OK


def cmd_train(args):
    overrides = {"seed": args.seed}
    if args.method:
        overrides["method"] = args.method
    if args.paper_hparams:
        overrides["paper_hparams"] = True
    if args.data:
        overrides["data"] = args.data
    if args.init:
        overrides["init_ckpt"] = args.init
    c = rc.load_config(args.config, overrides)
    if args.steps < 0:
        raise ConfigError("--steps must be non-negative")
    cfg = rc.build_train_config(c)
    task = rc.build_task(c)
    out = _prepare_out_dir(args.out)
    data = _training_data(c, task)
    if data.x0_w.shape[1] != task.dim or data.c.shape[1] != task.cond_dim:
        raise ConfigError("dataset dimensions do not match the configured modes")
    init = None
    if args.resume is None:
        if c["init_ckpt"] is not None:
            init = _checkpoint_policy(_read_checkpoint(c["init_ckpt"]))
        elif c["pretrain_steps"] > 0 and c["method"] != "sft":
            init = _pretrain(cfg, c, data, out)
    result = train_run(
        cfg,
        data,
        args.steps,
        eval_every=c["eval_every"],
        out_dir=out,
        init_model=init,
        resume_from=args.resume,
        task=task,
        config_doc=c,
    )
    final = result.evals[-1] if result.evals else None
    summary = {"step": result.state.step, "out": str(out)}
    if final is not None:
        summary.update(implicit_acc=final.implicit_acc, mean_weight=final.mean_weight, pref_mass=final.pref_mass)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _condition(args_cond, c, model):
    if model.cond_dim == 0:
        if args_cond:
            raise ConfigError("this model takes no condition")
        return None
    if args_cond:
        try:
            vec = np.array([float(v) for v in args_cond.split(",")])
        except ValueError:
            raise ConfigError(f"--cond must be comma-separated numbers, got {args_cond!r}") from None
        if vec.size != model.cond_dim:
            raise ConfigError(f"--cond needs {model.cond_dim} values, got {vec.size}")
        return vec
    task = rc.build_task(c)
    if task.cond_dim != model.cond_dim:
        raise ConfigError("pass --cond: the stored task does not match the model's condition width")
    return task.condition(task.preferred_indices[0])


def cmd_sample(args):
    if args.n <= 0 or args.steps <= 0:
        raise ConfigError("--n and --steps must be positive")
    doc = _read_checkpoint(args.ckpt)
    c = _checkpoint_config(doc)
    model = _checkpoint_policy(doc)
    cfg = rc.build_train_config(c)
    cond = _condition(args.cond, c, model)
    xs = sample(model, cfg.schedule, cfg.dpo.kind, cond, steps=args.steps, mode=args.mode, seed=args.seed, n=args.n)
    save_samples_csv(xs, sys.stdout)
    return EXIT_OK


def cmd_eval(args):
    if args.n <= 0 or args.steps <= 0:
        raise ConfigError("--n and --steps must be positive")
    doc = _read_checkpoint(args.ckpt)
    c = _checkpoint_config(doc)
    pairs = load_dataset(args.data)
    if not pairs:
        raise ConfigError(f"dataset {args.data} is empty")
    data = stack_pairs(pairs)
    task = rc.build_task(c)
    cfg = rc.build_train_config({**c, "eval_pairs": len(pairs), "eval_samples": 0})
    report = {"n": args.n, "pairs": len(pairs)}
    if "policy" in doc and "ref" in doc:
        state = state_from_dict(doc, cfg)
        acc, mean_delta, mean_weight, _ = evaluate(state, data)
        report.update(implicit_acc=acc, mean_delta=mean_delta)
    else:
        report["implicit_acc"] = None
    model = _checkpoint_policy(doc)
    report["pref_mass"] = sampler_pref_mass(model, cfg, task, args.n, args.steps, seed=args.seed)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_plot(args):
    if args.utility:
        svg = utility_svg()
    else:
        columns = tuple(col.strip() for col in args.columns.split(",") if col.strip())
        unknown = [col for col in columns if col not in METRIC_COLUMNS or col == "step"]
        if unknown:
            raise ConfigError(f"cannot plot columns {unknown}; choose from {list(METRIC_COLUMNS[1:])}")
        svg = metrics_svg(read_metrics(args.metrics), columns)
    Path(args.out).write_text(svg)
    return EXIT_OK


COMMANDS = {
    "verify": cmd_verify,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ShapeError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
