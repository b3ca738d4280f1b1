"""Training loop, evaluation and JSON-lines metric logging."""

import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .checkpoint import save_checkpoint
from .data import encode_pairs, make_task, token_batches
from .errors import ContractError
from .metrics import bleu, bleu_by_length, bucket_label, token_accuracy
from .model import EOS, PAD, Seq2Seq, beam_search, greedy_decode
from .nn import Adam, LrSchedule, lr_at

log = logging.getLogger("graphtrans")


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


class MetricLog:
    """Writes one JSON object per line; each record is a single write call."""

    def __init__(self, path=None, echo=None):
        self.path = path
        self.echo = echo
        self.records = []
        self._fh = open(path, "a", encoding="utf-8") if path else None

    def write(self, metric, split, value, step, **extra):
        rec = {"metric": metric, "split": split, "value": float(value), "step": int(step), **extra}
        self.records.append(rec)
        line = json.dumps(rec) + "\n"
        if self._fh:
            self._fh.write(line)
            self._fh.flush()
        if self.echo is not None:
            self.echo.write(line)
            self.echo.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


class RunLock:
    """Exclusive lock file guarding a checkpoint directory."""

    def __init__(self, directory):
        self.path = os.path.join(directory, ".lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ContractError(f"checkpoint_dir: {os.path.dirname(self.path)} is locked by another run") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass
        return False


@dataclass
class TrainResult:
    model: Seq2Seq
    vocab: object
    corpus: object
    step: int
    best_valid_acc: float
    history: list = field(default_factory=list)
    train_losses: list = field(default_factory=list)


def build_model(run, vocab):
    cfg = run.model
    cfg = type(cfg).from_dict({**cfg.to_dict(), "src_vocab": len(vocab), "tgt_vocab": len(vocab)})
    return Seq2Seq(cfg, seed=run.seed)


def teacher_forced_eval(model, encoded, token_budget):
    """Token-weighted loss and accuracy over ``encoded`` pairs, no dropout."""
    model.eval()
    total_loss = total_correct = total = 0.0
    with tensor.no_grad():
        for batch in token_batches(encoded, token_budget):
            loss, logits = model.loss(batch.src, batch.tgt_in, batch.tgt_out)
            n = batch.n_tokens
            total_loss += loss.item() * n
            total_correct += token_accuracy(logits, batch.tgt_out, PAD) * n
            total += n
    return total_loss / total, total_correct / total


def train(run, out_dir=None, metric_log=None, corpus=None):
    """Train per ``run``; writes checkpoints and metrics.jsonl into ``out_dir``.

    Returns a :class:`TrainResult` whose ``model`` holds the final weights.
    The checkpoint ``best.ckpt`` holds the weights with the best validation
    token accuracy.
    """
    run.validate()
    if corpus is None:
        corpus = make_task(run.task, run.n_pairs, (run.min_len, run.max_len), run.vocab_size, run.seed)
    vocab = corpus.vocab
    model = build_model(run, vocab)
    run = run.replace(src_vocab=model.config.src_vocab, tgt_vocab=model.config.tgt_vocab)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    own_log = metric_log is None
    if own_log:
        metric_log = MetricLog(os.path.join(out_dir, "metrics.jsonl") if out_dir else None)
    train_enc = encode_pairs(corpus.split("train"), vocab)
    valid_enc = encode_pairs(corpus.split("valid"), vocab)
    opt = Adam(model.parameters())
    sched = LrSchedule(model.config.d_model, model.config.warmup, model.config.lr_scale)
    batch_rng = np.random.default_rng(np.random.SeedSequence(run.seed).spawn(3)[2])
    symbols = vocab.content_symbols()

    def checkpoint(name, step):
        if out_dir:
            save_checkpoint(os.path.join(out_dir, name), model, run, step, symbols)

    result = TrainResult(model, vocab, corpus, 0, -1.0)
    step = 0
    checkpoint("best.ckpt", 0)
    try:
        while step < run.max_steps:
            for batch in token_batches(train_enc, run.token_budget, batch_rng):
                step += 1
                model.train()
                tensor.active_tape().reset()
                loss, logits = model.loss(batch.src, batch.tgt_in, batch.tgt_out)
                lval = loss.item()
                if not math.isfinite(lval):
                    raise NumericError(f"non-finite training loss at step {step}")
                tensor.backward(loss)
                lr = lr_at(step, sched)
                opt.step(lr)
                opt.zero_grad()
                result.train_losses.append(lval)
                if step % run.log_interval == 0:
                    metric_log.write("loss", "train", lval, step)
                    metric_log.write("token_accuracy", "train", token_accuracy(logits, batch.tgt_out, PAD), step)
                    metric_log.write("lr", "train", lr, step)
                if step % run.eval_interval == 0 or step == run.max_steps:
                    vloss, vacc = teacher_forced_eval(model, valid_enc, run.token_budget)
                    metric_log.write("loss", "valid", vloss, step)
                    metric_log.write("token_accuracy", "valid", vacc, step)
                    log.info("step %d loss %.4f valid acc %.4f", step, lval, vacc)
                    if vacc > result.best_valid_acc:
                        result.best_valid_acc = vacc
                        checkpoint("best.ckpt", step)
                if step >= run.max_steps:
                    break
    finally:
        result.step = step
        checkpoint("last.ckpt", step)
        result.history = metric_log.records
        if own_log:
            metric_log.close()
    return result


def translate(model, src_ids_list, beam=1, alpha=0.0, batch_size=64):
    """Decode each source (list of ids, EOS appended here).  beam=1 is batched greedy."""
    srcs = [list(s) + [EOS] for s in src_ids_list]
    if beam > 1:
        return [beam_search(model, np.array(s), beam, alpha).tokens for s in srcs]
    out = []
    for i in range(0, len(srcs), batch_size):
        chunk = srcs[i : i + batch_size]
        L = max(len(s) for s in chunk)
        arr = np.full((len(chunk), L), PAD, dtype=np.int64)
        for r, s in enumerate(chunk):
            arr[r, : len(s)] = s
        out.extend(greedy_decode(model, arr))
    return out


def evaluate(model, vocab, pairs, beam=1, alpha=0.0, by_length=False, n_samples=5):
    """BLEU report for ``pairs`` of token lists."""
    enc = encode_pairs(pairs, vocab)
    hyps_ids = translate(model, [s for s, _ in enc], beam, alpha)
    hyps = [vocab.decode(h) for h in hyps_ids]
    refs = [t for _, t in pairs]
    report = {"bleu": bleu(hyps, refs), "n": len(pairs), "beam": beam, "alpha": alpha}
    if by_length:
        per = bleu_by_length(hyps, refs, lengths=[len(s) for s, _ in pairs])
        report["by_length"] = {bucket_label(b): v for b, v in per.items()}
    report["samples"] = [
        {"source": "".join(s), "reference": "".join(r), "hypothesis": "".join(h)}
        for (s, r), h in list(zip(pairs, hyps))[:n_samples]
    ]
    return report


def configure_logging():
    level = os.environ.get("GT_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")

