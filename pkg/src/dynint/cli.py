"""``dynint`` command line: prepare, train, eval, verify, svd-report.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, checkpoint, dataio, train, verify
from .checkpoint import CheckpointError
from .dataio import DataError
from .model import DynIntModel, TrainConfig
from .ndcore import ConfigurationError, make_rng

log = logging.getLogger("dynint")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


class UsageError(Exception):
    """Bad inputs on the command line; reported with exit code 2."""


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _load_cache(path):
    if path is None:
        raise UsageError("--data-cache is required; create a cache with `dynint prepare`")
    if not Path(path).exists():
        raise UsageError(f"data cache {path} not found; create it with `dynint prepare`")
    return dataio.read_cache(path)


# -- prepare ------------------------------------------------------------------------

def cmd_prepare(args):
    for flag in ("schema", "csv", "data_cache"):
        if getattr(args, flag) is None:
            raise UsageError(f"--{flag.replace('_', '-')} is required")
    schema = dataio.load_schema(args.schema)
    raw, y = dataio.read_csv(args.csv, schema)
    parts = dataio.split_indices(raw.shape[0], SPLIT_FRACTIONS, make_rng(args.seed))
    enc = dataio.CTREncoder(schema.fields).fit(raw[parts[0]])
    cards = enc.cardinalities_
    datasets = {name: dataio.Dataset(enc.transform(raw[idx]), y[idx], cards)
                for name, idx in zip(dataio.SPLIT_NAMES, parts)}
    meta = {"encoder": enc.to_state(), "seed": args.seed, "label": schema.label,
            "source_sha256": _sha256(args.csv)}
    dataio.write_cache(args.data_cache, datasets, meta)
    splits = {name: [int(i) for i in idx] for name, idx in zip(dataio.SPLIT_NAMES, parts)}
    Path(str(args.data_cache) + ".splits.json").write_text(json.dumps(splits, sort_keys=True) + "\n")
    sizes = ", ".join(f"{k}={len(v)}" for k, v in datasets.items())
    print(f"wrote {args.data_cache}: {sizes}; cardinalities {list(cards)}")
    return EXIT_OK


# -- train ---------------------------------------------------------------------------

def load_config(path, seed=None):
    text = Path(path).read_text(encoding="utf-8") if path is not None else ""
    overrides = {"seed": seed} if seed is not None else None
    return TrainConfig.from_text(text, overrides)


def cmd_train(args):
    if args.run_dir is None:
        raise UsageError("--run-dir is required")
    cfg = load_config(args.config, args.seed)
    datasets, meta = _load_cache(args.data_cache)
    cfg.stack_config(datasets["train"].n_fields)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.to_text())
    manifest = {"config": asdict(cfg), "seed": cfg.seed, "code_version": __version__,
                "data_cache": str(args.data_cache), "data_sha256": _sha256(args.data_cache),
                "started": _now()}
    model = DynIntModel(cfg, datasets["train"].cardinalities)
    state = train.fit(model, datasets["train"], datasets["valid"], run_dir=run_dir)
    reports = {}
    with open(run_dir / "metrics.csv", "a") as fh:
        for split in ("valid", "test"):
            if len(datasets[split]):
                reports[split] = train.evaluate(model, datasets[split])
                fh.write(train._format_metric(state.best_step, f"best_{split}", reports[split]))
    manifest.update(finished=_now(), steps=state.step, best_step=state.best_step,
                    stopped_early=state.stopped_early)
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for split, rep in reports.items():
        print(f"{split}: auc={rep.auc:.6f} logloss={rep.logloss:.6f} (step {state.best_step})")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------------

def cmd_eval(args):
    if args.checkpoint is None:
        raise UsageError("--checkpoint is required")
    datasets, _ = _load_cache(args.data_cache)
    ds = datasets[args.split]
    model, _, meta = checkpoint.load_model(args.checkpoint, ds.cardinalities)
    rep = train.evaluate(model, ds)
    print("split,auc,logloss,n")
    print(f"{args.split},{rep.auc!r},{rep.logloss!r},{rep.n}")
    return EXIT_OK


# -- verify --------------------------------------------------------------------------

def cmd_verify(args):
    checks = verify.run_suite(args.suite)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"suite {args.suite}: {len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


# -- svd-report ----------------------------------------------------------------------

def static_matrices(params, variant):
    if variant == "dgp":
        raise ConfigurationError(
            "svd-report needs static F x F interaction matrices; the dgp variant stores only "
            "the low-rank factors U, V and generates its weights per instance")
    prefix = "dwp.W." if variant == "dwp" else "pin.W."
    names = sorted((k for k in params if k.startswith(prefix)), key=lambda k: int(k.rsplit(".", 1)[1]))
    return [(k, params[k]) for k in names]


def singular_value_table(params, variant):
    rows = []
    for name, W in static_matrices(params, variant):
        for i, s in enumerate(np.linalg.svd(W, compute_uv=False)):
            rows.append((name, i, float(s)))
    return rows


def cmd_svd_report(args):
    if args.checkpoint is None:
        raise UsageError("--checkpoint is required")
    model, _, _ = checkpoint.load_model(args.checkpoint)
    rows = singular_value_table(model.params, model.config.variant)
    lines = ["layer,index,singular_value"] + [f"{n},{i},{s!r}" for n, i, s in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="dynint", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dynint {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="encode a CSV into a split dataset cache")
    p.add_argument("--schema")
    p.add_argument("--csv")
    p.add_argument("--data-cache", dest="data_cache", help="output cache path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model into a run directory")
    p.add_argument("--config")
    p.add_argument("--data-cache", dest="data_cache")
    p.add_argument("--run-dir", dest="run_dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint")
    p.add_argument("--data-cache", dest="data_cache")
    p.add_argument("--split", choices=dataio.SPLIT_NAMES, default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--suite", choices=sorted(verify.SUITES), required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("svd-report", help="singular values of the static interaction matrices")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_svd_report)
    return parser


def _thread_limit():
    raw = os.environ.get("DYNINT_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"DYNINT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"DYNINT_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        with threadpool_limits(limits=_thread_limit()):
            return args.func(args)
    except (UsageError, ConfigurationError, DataError, CheckpointError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"dynint {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"dynint {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except train.TrainingAborted as exc:
        print(f"dynint {args.command}: training aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
