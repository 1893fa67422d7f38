"""Command-line interface: ``train``, ``eval``, ``rank``, ``sweep-bins``, ``gen``.

Configuration precedence is flags > ``--config`` file > defaults. Every
artifact written carries the resolved configuration and seed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .core import Role, cosine_similarity, l2_normalize
from .data import (SplitManifest, generate_synthetic, load_labeled_set, load_split,
                   relabel_by_clothing, save_labeled_set, split_by_identity, validate_manifest)
from .errors import DimensionMismatch, MapReidError
from .evaluation import REPORT_RANKS, evaluate, ranking_list, valid_mask
from .model import Checkpoint, config_to_text, load_checkpoint, save_checkpoint
from .training import LOG_HEADER, TrainConfig, evaluate_model, init_model, parse_config_text, resolve_config, train

log = logging.getLogger("mapreid")


# -- helpers --------------------------------------------------------------------

def _header(pairs):
    return "".join(f"# {k} = {v}\n" for k, v in pairs)


def _write_report(path, items, config_pairs):
    lines = [f"{k} = {v}" for k, v in items]
    lines += [f"config.{k} = {v}" for k, v in config_pairs]
    Path(path).write_text("\n".join(lines) + "\n")


def _kv_list(values):
    out = {}
    for item in values or []:
        if "=" not in item:
            raise MapReidError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _train_config(args):
    file_values = parse_config_text(Path(args.config).read_text()) if args.config else {}
    overrides = _kv_list(getattr(args, "set", None))
    if args.seed is not None:
        overrides["seed"] = args.seed
    named = {"data_dir": "data_dir", "m_bins": "m_bins", "epochs": "epochs",
             "steps_per_epoch": "steps_per_epoch", "learning_rate": "lr"}
    for key, attr in named.items():
        v = getattr(args, attr, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "weights", None):
        parts = args.weights.split(",")
        if len(parts) != 3:
            raise MapReidError("--weights expects three comma-separated values (id,triplet,map)")
        overrides.update(w_id=parts[0], w_triplet=parts[1], w_map=parts[2])
    return resolve_config(file_values, overrides)


def _datasets(config: TrainConfig):
    """``(train, eval_pair, test_pair)`` from ``data_dir`` or the synthetic generator."""
    if config.data_dir:
        manifest, sets = load_split(config.data_dir)
        validate_manifest(manifest, sets)
    else:
        sets = split_by_identity(generate_synthetic(config.synthetic_spec()), seed=config.seed)
    train_set = sets["train"]
    if config.relabel_clothing:
        train_set = relabel_by_clothing(train_set)
    test = (sets["test.query"], sets["test.gallery"]) if "test.query" in sets else None
    val = (sets["validation.query"], sets["validation.gallery"]) if "validation.query" in sets else None
    return train_set, val or test, test or val


def _out_dir(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_training(config: TrainConfig, out: Path, echo=print, tag=""):
    """Train, write checkpoint/log/report under ``out``; returns the report items."""
    train_set, val_pair, test_pair = _datasets(config)
    cfg_pairs = list(config.as_text_dict().items())
    log_path = out / f"train_log{tag}.tsv"
    with open(log_path, "w") as fh:
        fh.write(_header(cfg_pairs))
        fh.write(LOG_HEADER + "\n")
        result = train(config, train_set, val_pair,
                       on_step=lambda step, report, line: fh.write(line + "\n"))
    ck = Checkpoint(result.model, result.head, result.optimizer, config.seed, result.steps_done,
                    config.as_text_dict())
    save_checkpoint(out / f"checkpoint{tag}.bin", ck)
    (out / f"idmap{tag}.txt").write_text(
        _header(cfg_pairs) + "dense_id\toriginal_id\n"
        + "".join(f"{a}\t{b}\n" for a, b in train_set.identity_table()))

    untrained, _, _ = init_model(config, train_set.d, int(train_set.identity.max()) + 1)
    items = []
    if test_pair is not None:
        final = evaluate_model(result.model, *test_pair, config=config)
        items += final.report_items()
        items.append(("untrained.map", f"{evaluate_model(untrained, *test_pair, config=config).map:.10f}"))
        echo(final.to_table())
    items.append(("train_split.map", f"{evaluate_model(result.model, train_set, config=config).map:.10f}"))
    items.append(("untrained.train_split.map",
                  f"{evaluate_model(untrained, train_set, config=config).map:.10f}"))
    for step, res in result.evals:
        items.append((f"val.step{step}.map", f"{res.map:.10f}"))
    items.append(("seed", str(config.seed)))
    items.append(("steps", str(result.steps_done)))
    _write_report(out / f"report{tag}.txt", items, cfg_pairs)
    return dict(items)


def _load_pair(args, op):
    q = load_labeled_set(args.query, role=Role.QUERY)
    g = load_labeled_set(args.gallery, role=Role.GALLERY)
    model = None
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint).model
    if q.d != g.d:
        raise DimensionMismatch(f"query dim {q.d} != gallery dim {g.d}", op=op)
    if model is not None and q.d != model.input_dim:
        raise DimensionMismatch(f"feature dim {q.d} != checkpoint input dim {model.input_dim}", op=op)
    fq = q.embeddings if model is None else model.embed(q.embeddings)
    fg = g.embeddings if model is None else model.embed(g.embeddings)
    sim = cosine_similarity(l2_normalize(fq), l2_normalize(fg), q.identity, g.identity)
    return q, g, sim


def _eval_echo(args):
    return [("query", args.query), ("gallery", args.gallery), ("checkpoint", args.checkpoint or ""),
            ("camera_filter", str(args.camera_filter).lower()), ("seed", str(args.seed or 0))]


# -- commands -------------------------------------------------------------------

def cmd_train(args):
    config = _train_config(args)
    out = _out_dir(args)
    print(_header(config.as_text_dict().items()), end="")
    (out / "config.txt").write_text(config_to_text(config.as_text_dict()))
    run_training(config, out)
    return 0


def cmd_eval(args):
    q, g, sim = _load_pair(args, "cmd_eval")
    max_rank = min(max(REPORT_RANKS), sim.shape[1])
    res = evaluate(sim, max_rank, args.camera_filter, q.camera, g.camera)
    print(res.to_table())
    report = Path(args.report) if args.report else _out_dir(args) / "eval_report.txt"
    _write_report(report, res.report_items(), _eval_echo(args))
    return 0


def cmd_rank(args):
    q, g, sim = _load_pair(args, "cmd_rank")
    valid = valid_mask(sim, args.camera_filter, q.camera, g.camera)
    rows = ranking_list(sim, args.query_index, args.top_k, valid)
    print(f"# query {args.query_index} (id {int(q.original_identity[args.query_index])})")
    print(f"{'rank':>4}  {'gallery':>7}  {'id':>6}  {'similarity':>10}  match")
    for r, (j, s, m) in enumerate(rows, start=1):
        print(f"{r:>4}  {j:>7}  {int(g.original_identity[j]):>6}  {s:>10.6f}  {'+' if m else '-'}")
    return 0


def cmd_sweep_bins(args):
    config = _train_config(args)
    out = _out_dir(args)
    bins = [int(b) for b in args.bins.split(",") if b.strip()]
    if not bins or min(bins) < 2:
        raise MapReidError("--bins needs a comma-separated list of integers >= 2")
    rows = []
    for m in bins:
        try:
            items = run_training(config.replace(m_bins=m), out, echo=lambda s: None, tag=f".M{m}")
            rows.append((m, items["cmc.1"], items["map"], ""))
            print(f"M={m:<5} R1={float(items['cmc.1']):.4f} mAP={float(items['map']):.4f}")
        except MapReidError as exc:  # keep sweeping
            rows.append((m, "nan", "nan", str(exc)))
            print(f"M={m:<5} failed: {exc}", file=sys.stderr)
    text = _header(config.as_text_dict().items()) + "M\tR1\tmAP\terror\n"
    text += "".join(f"{m}\t{r1}\t{mp}\t{err}\n" for m, r1, mp, err in rows)
    (out / "sweep.tsv").write_text(text)
    return 0 if all(not r[3] for r in rows) else 1


def cmd_gen(args):
    config = _train_config(args)
    out = _out_dir(args)
    spec = config.synthetic_spec()
    fractions = tuple(float(f) for f in args.split.split(","))
    sets = split_by_identity(generate_synthetic(spec), fractions, seed=config.seed)
    ext = "csv" if args.format == "csv" else "bin"
    files = {}
    for name, s in sets.items():
        files[name] = f"{name}.{ext}"
        save_labeled_set(s, out / files[name])
    manifest = SplitManifest.from_sets(sets, files)
    manifest.extra = {f"config.{k}": v for k, v in config.as_text_dict().items() if k == "seed" or k.startswith("syn_")}
    manifest.extra["split"] = args.split
    (out / "manifest.txt").write_text(manifest.to_text())
    _, loaded = load_split(out)
    validate_manifest(SplitManifest.from_text((out / "manifest.txt").read_text()), loaded)
    for name, s in sets.items():
        print(f"{name:<20} identities={np.unique(s.original_identity).size:<6} images={s.n}")
    return 0


# -- parser ---------------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--data-dir", dest="data_dir", help="directory with manifest.txt (default: synthetic)")
    p.add_argument("--m-bins", dest="m_bins", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weights", help="loss weights id,triplet,map (default 1,1,1)")


def _add_pair_flags(p):
    p.add_argument("--query", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--checkpoint", help="embed inputs with this model first")
    p.add_argument("--camera-filter", action="store_true", help="drop same-identity same-camera gallery entries")


def build_parser():
    parser = argparse.ArgumentParser(prog="mapreid", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out-dir", default="mapreid_out")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train with the joint loss and write checkpoint, log and report")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="mAP and CMC of query against gallery")
    _add_pair_flags(p)
    p.add_argument("--report", help="report path (default: <out-dir>/eval_report.txt)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rank", help="print one query's ranked gallery list")
    _add_pair_flags(p)
    p.add_argument("--query-index", type=int, required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("sweep-bins", help="train once per bin count and tabulate R1/mAP")
    _add_train_flags(p)
    p.add_argument("--bins", default="10,20,40,80,160")
    p.set_defaults(func=cmd_sweep_bins)

    p = sub.add_parser("gen", help="write a synthetic split and its manifest")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override syn_* config keys")
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    p.add_argument("--split", default="0.5,0.1,0.4", help="train,validation,test identity fractions")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MapReidError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__} {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
