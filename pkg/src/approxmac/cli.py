"""Command-line driver: ``approxmac {characterize,infer,compare,adjust-bn}``.

Data artifacts go to the output directory (``--out``, overridden by the
``APPROXMAC_OUT`` environment variable); progress goes to stderr.  Every
JSON artifact embeds the tool version, a config echo, the seed and the
multiplier spec.  Wall-clock facts (timestamp, elapsed time, worker count)
live only in ``run.meta.json`` so everything else is byte-identical across
reruns.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, errstat, modelio
from .errors import (AccOverflowError, ApproxMacError, InvalidSpecError, MostNegativeError)
from .fixtures import data_dir, models_dir
from .mulkit import parse_spec
from .nncore import forward, topk

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DEFAULT_OUT = "approxmac-out"
MNIST_ALIAS = "mnist"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


# -- argument plumbing --------------------------------------------------------------

def _add_common(p, *, model=True, data=True, mul_default="exact"):
    p.add_argument("--mul", default=mul_default, help="multiplier spec, e.g. mitchw:w=6:sign=c1")
    p.add_argument("--seed", type=int, default=0, help="RNG seed, recorded in every artifact")
    p.add_argument("--out", default=DEFAULT_OUT, help="output directory (env APPROXMAC_OUT wins)")
    p.add_argument("--threads", type=int, default=1, help="worker cap; never changes results")
    if model:
        p.add_argument("--model", required=True,
                       help="manifest path or shipped fixture name (lenet, stack20, ...)")
        p.add_argument("--adjust-bn", type=float, default=None, metavar="E",
                       help="scale BN statistics for a multiplier with mean error E")
    if data:
        p.add_argument("--data", default=None,
                       help="IMAGES,LABELS (IDX), X.npy[,Y.npy], or 'mnist'; "
                            "defaults to the fixture's shipped inputs")
        p.add_argument("--limit", type=int, default=None, help="use the first N samples")
        p.add_argument("--layer-mul", action="append", default=[], metavar="NODE=SPEC",
                       help="per-layer multiplier override (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="approxmac", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"approxmac {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("characterize", help="error statistics of one multiplier")
    _add_common(p, model=False, data=False)
    p.add_argument("--n", type=int, default=10**6, help="number of random operand pairs")
    p.add_argument("--policy", choices=("uniform", "positive", "layer"), default="uniform")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--dump", action="store_true", help="also write every (a, b, err) triplet")

    p = sub.add_parser("infer", help="accuracy of a model under one multiplier")
    _add_common(p)
    p.add_argument("--topk", type=int, default=5)

    p = sub.add_parser("compare", help="exact vs approximate per-layer statistics")
    _add_common(p, mul_default="mitchw:w=6:sign=c1")
    p.add_argument("--profile", action=argparse.BooleanOptionalAction, default=True,
                   help="write the per-layer mean-deviation profile")
    p.add_argument("--channels", action=argparse.BooleanOptionalAction, default=True,
                   help="write per-channel variance reports")

    p = sub.add_parser("adjust-bn", help="rewrite BN statistics for a multiplier's mean error")
    p.add_argument("--model", required=True)
    p.add_argument("--adjust-bn", "--e", dest="adjust_bn", type=float, default=None, metavar="E",
                   help="mean error e (default: the manifest's meta.mean_error)")
    p.add_argument("--out", default=DEFAULT_OUT)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mul", default=None, help="spec recorded alongside e")
    return ap


def _config(args) -> dict:
    # threads and out never affect results, so they stay out of the echo
    skip = {"threads", "out", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _out_dir(args) -> Path:
    out = Path(os.environ.get("APPROXMAC_OUT") or args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_model_path(text) -> Path:
    p = Path(text)
    if p.exists():
        return p
    shipped = models_dir() / f"{text}.json"
    if shipped.exists():
        return shipped
    raise DataError(f"model not found: {text}")


def _load_model(args, pipeline):
    path = _resolve_model_path(args.model)
    model = modelio.load_model(path, pipeline)
    return path, model


def _load_data(args, model_path: Path):
    """Return ``(x, labels or None)``."""
    text = args.data
    if args.limit is not None and args.limit < 1:
        raise UsageError("--limit must be at least 1")
    if text is None:
        stem = model_path.stem
        stem = "paired" if stem.startswith("paired") else stem
        cand = model_path.parent / f"{stem}_inputs.npy"
        if stem == "lenet":
            text = MNIST_ALIAS
        elif cand.exists():
            text = str(cand)
        else:
            raise UsageError("--data is required for this model")
    if text == MNIST_ALIAS:
        d = data_dir() / "mnist"
        text = f"{d / 't1k-images-idx3-ubyte'},{d / 't1k-labels-idx1-ubyte'}"
    parts = text.split(",")
    if len(parts) > 2:
        raise UsageError("--data takes at most two comma-separated paths")
    for p in parts:
        if not Path(p).exists():
            raise DataError(f"data file not found: {p}")
    if parts[0].endswith(".npy"):
        x = np.load(parts[0])
        y = np.load(parts[1]).astype(np.int64) if len(parts) == 2 else None
        if y is not None and len(y) != len(x):
            raise DataError(f"{len(x)} inputs but {len(y)} labels")
        if args.limit is not None:
            x = x[:args.limit]
            y = None if y is None else y[:args.limit]
        return x, y
    if len(parts) != 2:
        raise UsageError("IDX data needs IMAGES,LABELS")
    return modelio.load_mnist_idx(parts[0], parts[1], args.limit)


def _layer_specs(args):
    out = {}
    for item in args.layer_mul:
        if "=" not in item:
            raise UsageError(f"--layer-mul expects NODE=SPEC, got {item!r}")
        name, spec = item.split("=", 1)
        out[name] = str(parse_spec(spec))
    return out


def _header(args, kind) -> dict:
    spec = getattr(args, "mul", None)
    return {"tool": "approxmac", "version": __version__, "artifact": kind,
            "spec": None if spec is None else str(parse_spec(spec)),
            "seed": args.seed, "config": _config(args)}


def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _write_sidecar(out: Path, args, started):
    _write_json(out / "run.meta.json", {
        "command": args.command,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "elapsed_s": round(time.monotonic() - started, 3),
        "threads": getattr(args, "threads", 1),
    })


def _csv_header(args) -> str:
    spec = getattr(args, "mul", None)
    spec = "" if spec is None else str(parse_spec(spec))
    return f"# approxmac {__version__} spec={spec} seed={args.seed}\n"


# -- subcommands ----------------------------------------------------------------------

def cmd_characterize(args) -> int:
    spec = parse_spec(args.mul)
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    out = _out_dir(args)
    _log(f"characterizing {spec} over {args.n} pairs (seed {args.seed})")
    ch = errstat.characterize(spec, args.n, args.seed, args.policy, bins=args.bins, dump=args.dump)
    doc = _header(args, "characterize")
    doc["summary"] = ch.summary()
    _write_json(out / "characterize.json", doc)
    (out / "histogram.csv").write_text(_csv_header(args) + errstat.histogram_csv(ch))
    if args.dump:
        (out / "samples.csv").write_text(_csv_header(args) + errstat.dump_csv(ch))
    print(f"{spec}: mean {ch.mean:+.4%}  var {ch.variance:.3e}  "
          f"min {ch.min:+.4%}  max {ch.max:+.4%}  (n={ch.n})")
    return EXIT_OK


def _prepare(args):
    spec = parse_spec(args.mul)
    pipeline = "float" if spec.is_float else "fixed"
    path, model = _load_model(args, pipeline)
    approx_model = model
    if args.adjust_bn is not None:
        approx_model = modelio.adjust_bn(model, args.adjust_bn)
    x, y = _load_data(args, path)
    if len(x) == 0:
        raise DataError("dataset is empty")
    return spec, path, model, approx_model, x, y


def _digest(arr) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def cmd_infer(args) -> int:
    spec, _, _, model, x, y = _prepare(args)
    layer_specs = _layer_specs(args)
    out = _out_dir(args)
    _log(f"infer {model.name} with {spec} on {len(x)} samples")
    res = forward(model, x, spec, layer_specs=layer_specs, threads=args.threads)
    scores = res.outputs[model.outputs[0]]
    scores = scores.reshape(scores.shape[0], -1)
    k = min(args.topk, scores.shape[1])
    top = topk(scores, k)
    doc = _header(args, "infer")
    report = {"model": model.name, "n": int(len(x)), "k": k,
              "layer_specs": layer_specs, "saturation": res.saturation,
              "scores_sha256": _digest(scores)}
    rows = ["index,label," + ",".join(f"top{i + 1}" for i in range(k))]
    for i in range(len(top)):
        lab = "" if y is None else str(int(y[i]))
        rows.append(f"{i},{lab}," + ",".join(str(int(t)) for t in top[i]))
    if y is not None:
        hit1 = top[:, 0] == y
        hitk = (top == y[:, None]).any(axis=1)
        classes = scores.shape[1]
        report.update({
            "top1": float(hit1.mean()), "topk": float(hitk.mean()),
            "correct_top1": int(hit1.sum()),
            "per_class": [{"class": c, "n": int((y == c).sum()),
                           "correct": int(hit1[y == c].sum())} for c in range(classes)],
        })
    doc["report"] = report
    _write_json(out / "infer.json", doc)
    (out / "predictions.csv").write_text(_csv_header(args) + "\n".join(rows) + "\n")
    lines = [f"model {model.name}  spec {spec}  n={len(x)}"]
    if y is not None:
        lines.append(f"top-1 {report['top1']:.4f}  top-{k} {report['topk']:.4f}")
        lines.append("class     n  correct")
        lines += [f"{r['class']:>5} {r['n']:>5} {r['correct']:>8}" for r in report["per_class"]]
    sat = sum(res.saturation.values())
    lines.append(f"saturated values: {sat}")
    table = "\n".join(lines) + "\n"
    (out / "infer.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_compare(args) -> int:
    spec, _, model, approx_model, x, _ = _prepare(args)
    layer_specs = _layer_specs(args)
    out = _out_dir(args)
    _log(f"compare {model.name}: exact vs {spec} on {len(x)} samples")
    run = errstat.paired_run(model, spec, x, approx_model=approx_model, layer_specs=layer_specs,
                             threads=args.threads)
    doc = _header(args, "compare")
    doc["model"] = model.name
    doc["n"] = int(len(x))
    lines = [f"model {model.name}  spec {spec}  n={len(x)}"]
    if args.profile:
        prof = errstat.profile_from_run(run)
        (out / "profile.csv").write_text(_csv_header(args) + errstat.profile_csv(prof))
        doc["profile"] = [{"layer": l, "mean_deviation": d}
                          for l, d in zip(prof.layers, prof.mean_deviation)]
        lines += [f"{l:>12} {d:+.4%}" for l, d in zip(prof.layers, prof.mean_deviation)]
    if args.channels:
        reports = errstat.channel_reports_from_run(run, model)
        (out / "channels.csv").write_text(_csv_header(args) + errstat.channel_csv(reports))
        doc["channels"] = errstat.channel_summary(reports)
        lines += [f"{r.layer:>12} pct {r.pct:.4f}%" for r in reports]
    _write_json(out / "compare.json", doc)
    print("\n".join(lines))
    return EXIT_OK


def cmd_adjust_bn(args) -> int:
    path, model = _load_model(args, "float")
    e = args.adjust_bn
    if e is None:
        e = model.meta.get("mean_error")
        if e is None:
            raise UsageError("give --adjust-bn E (the manifest has no meta.mean_error)")
    if not e > -1:
        raise UsageError(f"mean error must exceed -1, got {e}")
    n_bn = len(modelio.bn_nodes(model))
    if n_bn == 0:
        _log(f"warning: {model.name} has no batchnorm nodes; nothing to adjust")
    out = _out_dir(args)
    adjusted = modelio.adjust_bn(model, e)
    adjusted.meta = dict(adjusted.meta)
    adjusted.meta["bn_adjustments"] = list(model.meta.get("bn_adjustments", [])) + [
        {"e": e, "spec": None if args.mul is None else str(parse_spec(args.mul)),
         "tool": f"approxmac {__version__}"}]
    dest = modelio.save_model(adjusted, out / path.name)
    print(f"adjusted {n_bn} batchnorm node(s) with e={e}; wrote {dest}")
    return EXIT_OK


COMMANDS = {"characterize": cmd_characterize, "infer": cmd_infer,
            "compare": cmd_compare, "adjust-bn": cmd_adjust_bn}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "threads", 1) < 1:
        _log("approxmac: error: --threads must be at least 1")
        return EXIT_USAGE
    started = time.monotonic()
    try:
        code = COMMANDS[args.command](args)
    except (UsageError, InvalidSpecError) as exc:
        _log(f"approxmac {args.command}: usage error: {exc}")
        return EXIT_USAGE
    except (AccOverflowError, MostNegativeError) as exc:
        _log(f"approxmac {args.command}: internal error: {exc}")
        return EXIT_INTERNAL
    except (DataError, ApproxMacError, OSError) as exc:
        _log(f"approxmac {args.command}: data error: {exc}")
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        _log(f"approxmac {args.command}: internal error: {type(exc).__name__}: {exc}")
        return EXIT_INTERNAL
    _write_sidecar(_out_dir(args), args, started)
    return code


if __name__ == "__main__":
    sys.exit(main())
