"""``graphtrans`` command line.

Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numeric failure.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import tensor
from .checkpoint import CheckpointError, load_checkpoint
from .config import load_config
from .data import encode_pairs, make_task, read_corpus, token_batches, write_corpus
from .encoder import FusionStrategy
from .errors import ContractError
from .metrics import DEFAULT_BUCKETS, bleu, bucket_label, bucket_of
from .subgraph import compare_readings, group_order_intervals, layer_order_interval, propagate_orders, propagate_vanilla
from .train import MetricLog, NumericError, RunLock, configure_logging, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class DataError(Exception):
    pass


def _emit(report, out_path):
    text = json.dumps(report, indent=2, sort_keys=False)
    print(text)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _parse_overrides(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ContractError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load_run(args):
    run = load_config(args.config)
    overrides = _parse_overrides(getattr(args, "set", None))
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if overrides:
        run = run.replace(**overrides).validate()
    return run


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def run_training(run, out_dir, echo=None):
    os.makedirs(out_dir, exist_ok=True)
    corpus = make_task(run.task, run.n_pairs, (run.min_len, run.max_len), run.vocab_size, run.seed)
    for split in ("train", "valid", "test"):
        write_corpus(os.path.join(out_dir, f"{split}.tsv"), corpus.split(split))
    with RunLock(out_dir):
        log = MetricLog(os.path.join(out_dir, "metrics.jsonl"), echo=echo)
        try:
            return train(run, out_dir=out_dir, metric_log=log, corpus=corpus)
        finally:
            log.close()


def cmd_train(args):
    run = _load_run(args)
    out_dir = args.out or run.checkpoint_dir
    result = run_training(run, out_dir, echo=sys.stdout if args.verbose else None)
    _emit({"steps": result.step, "best_valid_token_accuracy": result.best_valid_acc,
           "checkpoint": os.path.join(out_dir, "best.ckpt")}, None)
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _read_pairs(path, vocab):
    try:
        pairs = read_corpus(path)
    except (OSError, ContractError) as exc:
        raise DataError(str(exc)) from None
    if not pairs:
        raise DataError(f"{path}: corpus is empty")
    known = set(vocab.stoi)
    for src, tgt in pairs:
        bad = (set(src) | set(tgt)) - known
        if bad:
            raise DataError(f"{path}: tokens {sorted(bad)[:5]} are not in the checkpoint vocabulary")
    return pairs


def cmd_evaluate(args):
    model, run, vocab, _ = load_checkpoint(args.checkpoint)
    pairs = _read_pairs(args.corpus, vocab)
    beam = args.beam if args.beam is not None else run.model.beam
    alpha = args.alpha if args.alpha is not None else run.model.alpha
    if args.bypass:
        refs = [t for _, t in pairs]
        report = {"bleu": bleu(refs, refs), "n": len(pairs), "bypass": True}
    else:
        report = evaluate(model, vocab, pairs, beam, alpha, by_length=args.by_length)
    _emit(report, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect-gates
# ---------------------------------------------------------------------------


def gate_report(model, vocab, pairs, buckets=DEFAULT_BUCKETS, token_budget=512):
    """Mean weight-gate value per encoder layer and source-length bucket.

    The statistic is the gate value averaged over feature dimensions and
    non-pad positions of each sentence, then over sentences in the bucket.
    ``relative`` subtracts the first non-empty bucket's value.
    """
    from scipy.stats import spearmanr

    n_layers = len(model.encoder.layers)
    per_sentence = [[] for _ in range(n_layers)]
    lengths = []
    enc = encode_pairs(pairs, vocab)
    model.eval()
    with tensor.no_grad():
        for batch in token_batches(enc, token_budget):
            model.encode(batch.src)
            keep = batch.src_mask[:, :, None]
            for li, g in enumerate(model.gate_values()):
                per_sentence[li].extend(((g * keep).sum(axis=(1, 2)) / (keep.sum(axis=(1, 2)) * g.shape[-1])).tolist())
            lengths.extend(len(pairs[i][0]) for i in batch.indices)
    lengths = np.array(lengths)
    labels = [bucket_label(b) for b in buckets]
    table, relative, spearman = [], [], []
    for li in range(n_layers):
        w = np.array(per_sentence[li])
        row = []
        for b in buckets:
            sel = np.array([bucket_of(n, buckets) == b for n in lengths])
            row.append(float(w[sel].mean()) if sel.any() else None)
        table.append(row)
        base = next((v for v in row if v is not None), None)
        relative.append([None if v is None else v - base for v in row])
        rho = spearmanr(lengths, w).statistic if len(set(lengths.tolist())) > 1 else float("nan")
        spearman.append(None if rho is None or not math.isfinite(rho) else float(rho))
    return {
        "statistic": "mean sigmoid gate value (weight on high+middle groups) over features and non-pad positions",
        "buckets": labels,
        "mean_gate": table,
        "relative_to_first_bucket": relative,
        "spearman_gate_vs_length": spearman,
        "n_sentences": int(len(lengths)),
    }


def cmd_inspect_gates(args):
    model, run, vocab, _ = load_checkpoint(args.checkpoint)
    if run.model.arch != "graph" or FusionStrategy.parse(run.model.fusion) is not FusionStrategy.WEIGHT_GATE:
        print(f"inspect-gates needs a weight_gate graph checkpoint; this one is "
              f"arch={run.model.arch}, fusion={run.model.fusion}", file=sys.stderr)
        return EXIT_USAGE
    pairs = _read_pairs(args.corpus, vocab)
    _emit(gate_report(model, vocab, pairs), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep-layers
# ---------------------------------------------------------------------------


def sweep_layers(run, layer_counts, seeds, out_dir, beam=None, alpha=None, eval_limit=None):
    """Train baseline and graph variant per layer count and seed; test BLEU table."""
    beam = run.model.beam if beam is None else beam
    alpha = run.model.alpha if alpha is None else alpha
    runs = []
    for n in layer_counts:
        for seed in seeds:
            for variant in ("baseline", "graph"):
                cfg = run.replace(n_layers=n, seed=seed, arch=variant)
                sub = os.path.join(out_dir, f"L{n}-{variant}-s{seed}")
                res = run_training(cfg, sub)
                model, _, vocab, _ = load_checkpoint(os.path.join(sub, "best.ckpt"))
                test = res.corpus.split("test")
                if eval_limit:
                    test = test[:eval_limit]
                rep = evaluate(model, vocab, test, beam, alpha)
                runs.append({"layers": n, "variant": variant, "seed": seed, "bleu": rep["bleu"]})
    rows = []
    for n in layer_counts:
        for variant in ("baseline", "graph"):
            vals = [r["bleu"] for r in runs if r["layers"] == n and r["variant"] == variant]
            rows.append({"layers": n, "variant": variant, "mean_bleu": float(np.mean(vals)),
                         "std_bleu": float(np.std(vals)), "runs": len(vals)})
    return {"rows": rows, "runs": runs}


def cmd_sweep_layers(args):
    run = _load_run(args)
    layers = [int(x) for x in args.layers.split(",") if x.strip()]
    if not layers:
        raise ContractError("--layers: need at least one layer count")
    seeds = [int(x) for x in args.seeds.split(",")] if args.seeds else [run.seed]
    out_dir = args.workdir or os.path.join(run.checkpoint_dir, "sweep")
    _emit(sweep_layers(run, layers, seeds, out_dir, args.beam, args.alpha), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect-orders
# ---------------------------------------------------------------------------


def orders_report(n_layers):
    vanilla = propagate_vanilla(n_layers)
    trace = propagate_orders(n_layers)
    return {
        "n_layers": n_layers,
        "layer_order_intervals": [layer_order_interval(i).as_list() for i in range(1, n_layers + 1)],
        "max_order": layer_order_interval(n_layers).hi,
        "group_bands": {
            str(n): dict(zip(("low", "middle", "high"), (b.as_list() for b in group_order_intervals(n))))
            for n in range(2, n_layers + 1)
        },
        "vanilla_trace": [{"layer": i + 1, "novel": nv.as_list(), "hull": h.as_list()}
                          for i, (nv, h) in enumerate(vanilla)],
        "split_trace": [rec.as_dict() for rec in trace],
        "readings": compare_readings(n_layers),
    }


def cmd_inspect_orders(args):
    if args.layers < 1:
        raise ContractError("--layers must be >= 1")
    _emit(orders_report(args.layers), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="graphtrans", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="checkpoint/output directory (default: checkpoint_dir)")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--verbose", action="store_true", help="echo metric records to stdout")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="BLEU of a checkpoint on a corpus file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--beam", type=int)
    e.add_argument("--alpha", type=float)
    e.add_argument("--by-length", action="store_true")
    e.add_argument("--bypass", action="store_true", help="score references against themselves")
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("inspect-gates", help="weight-gate values by layer and length")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--corpus", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_inspect_gates)

    o = sub.add_parser("inspect-orders", help="subgraph-order intervals per layer")
    o.add_argument("--layers", type=int, required=True)
    o.add_argument("--seed", type=int)
    o.add_argument("--out")
    o.set_defaults(func=cmd_inspect_orders)

    s = sub.add_parser("sweep-layers", help="baseline vs graph BLEU across layer counts")
    s.add_argument("--config", required=True)
    s.add_argument("--layers", required=True, help="comma-separated layer counts")
    s.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    s.add_argument("--seed", type=int)
    s.add_argument("--beam", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--workdir")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep_layers)
    return p


def main(argv=None):
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
