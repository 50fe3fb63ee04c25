"""Seeded training iterations with early stopping, trials over many
iterations, and donor export from the best iteration."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import time

import numpy as np

from .nn import NonFiniteError, RMSprop, train_step
from .nn.optim import bce_from_logits
from .nn.weights import save_weights
from .patches import arrays


@dataclass(frozen=True)
class Hyper:
    """Training hyperparameters. ``lr``, ``epochs``, optimizer and iteration
    count follow the published setup; the rest are our defaults."""
    epochs: int = 30
    lr: float = 1e-4
    rho: float = 0.9
    eps: float = 1e-7
    batch_size: int = 32
    patience: int = 5
    n_iterations: int = 100

    def __post_init__(self):
        if not 1 <= self.epochs <= 30:
            raise ValueError("epochs must be in [1, 30]")
        if self.batch_size < 1 or self.patience < 1 or self.n_iterations < 1:
            raise ValueError("batch_size, patience and n_iterations must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    train_loss: float
    val_acc: float
    val_loss: float
    elapsed: float


@dataclass
class TrainRun:
    iteration: int
    seed: int
    history: list = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: int = -1
    weights: dict | None = None
    duration: float = 0.0
    error: str | None = None

    @property
    def aborted(self):
        return self.error is not None

    @property
    def best(self):
        return self.history[self.best_epoch] if self.history and self.best_epoch >= 0 else None

    @property
    def best_val_acc(self):
        return self.best.val_acc if self.best else float("nan")


class EarlyStopping:
    """Stop when the monitored loss has not improved for ``patience`` epochs."""

    def __init__(self, patience=5, delta=0.0):
        self.patience = patience
        self.delta = delta
        self.best = None
        self.wait = 0

    def __call__(self, value):
        """Feed one epoch's value; returns True when training should stop."""
        if self.best is None or value < self.best - self.delta:
            self.best = value
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def evaluate(net, x, y, batch_size=64):
    """(accuracy, mean BCE) in inference mode."""
    if len(x) == 0:
        return float("nan"), float("nan")
    logits, scores = [], []
    for i in range(0, len(x), batch_size):
        out, tape = net.forward(x[i:i + batch_size], record=True)
        logits.append(tape.logits.reshape(-1))
        scores.append(out.reshape(-1))
    z, p = np.concatenate(logits), np.concatenate(scores)
    loss, _ = bce_from_logits(z, y)
    return float(np.mean((p > 0.5) == (y == 1))), loss


def run_iteration(model_factory, corpus, hyper=Hyper(), seed=1, iteration=None, log=None):
    """Train a freshly initialised model under ``seed``.

    ``model_factory(seed)`` returns a new network. Shuffling and dropout draw
    from the same seeded generator. Early stopping watches validation loss;
    the weights of the epoch with the best validation accuracy (earliest on
    ties) are kept on the returned run.
    """
    start = time.perf_counter()
    run = TrainRun(iteration=seed if iteration is None else iteration, seed=seed)
    rng = np.random.default_rng(seed)
    net = model_factory(seed)
    opt = RMSprop(hyper.lr, hyper.rho, hyper.eps)
    x_tr, y_tr = arrays(corpus.train)
    x_va, y_va = arrays(corpus.val)
    stopper = EarlyStopping(hyper.patience)
    try:
        for epoch in range(hyper.epochs):
            order = rng.permutation(len(x_tr))
            losses, accs, sizes = [], [], []
            for i in range(0, len(order), hyper.batch_size):
                idx = order[i:i + hyper.batch_size]
                loss, acc = train_step(net, x_tr[idx], y_tr[idx], opt, rng)
                losses.append(loss)
                accs.append(acc)
                sizes.append(len(idx))
            val_acc, val_loss = evaluate(net, x_va, y_va)
            if not np.isfinite(val_loss):
                raise NonFiniteError(f"non-finite validation loss at epoch {epoch + 1}")
            rec = EpochRecord(epoch, float(np.average(accs, weights=sizes)),
                              float(np.average(losses, weights=sizes)), val_acc, val_loss,
                              time.perf_counter() - start)
            run.history.append(rec)
            if run.best is None or val_acc > run.best.val_acc:
                run.best_epoch = epoch
                run.weights = {k: v.copy() for k, v in net.params.items()}
            if log is not None:
                log(run, rec)
            if stopper(val_loss):
                run.stopped_early = epoch + 1 < hyper.epochs
                break
    except NonFiniteError as exc:
        run.error = str(exc)
    run.duration = time.perf_counter() - start
    return run


@dataclass
class TrialSummary:
    runs: list
    selected: int                     # index into runs
    avg_train_acc: float
    avg_train_loss: float
    avg_val_acc: float
    avg_val_loss: float
    duration: float = 0.0

    @property
    def best_run(self):
        return self.runs[self.selected]


def select_best(val_accs):
    """Index of the highest value; the lowest index wins ties."""
    best = None
    for i, v in enumerate(val_accs):
        if np.isnan(v):
            continue
        if best is None or v > val_accs[best]:
            best = i
    return best


def summarize(runs):
    done = [r for r in runs if not r.aborted and r.best is not None]
    if not done:
        raise RuntimeError("every iteration aborted; no run to select")
    best = select_best([r.best_val_acc if r in done else float("nan") for r in runs])
    mean = lambda attr: float(np.mean([getattr(r.best, attr) for r in done]))
    return TrialSummary(runs, best, mean("train_acc"), mean("train_loss"), mean("val_acc"),
                        mean("val_loss"), float(sum(r.duration for r in runs)))


def _run_seed(args):
    model_factory, corpus, hyper, seed = args
    return run_iteration(model_factory, corpus, hyper, seed)


def run_trial(model_factory, corpus, hyper=Hyper(), n_iterations=None, jobs=1, log=None):
    """Iterations with seeds 1..n, then averages and best-iteration selection.

    With ``jobs > 1`` iterations run in worker processes (``model_factory``
    must then be picklable); results keep seed order either way.
    """
    n = hyper.n_iterations if n_iterations is None else n_iterations
    if n < 1:
        raise ValueError("n_iterations must be >= 1")
    seeds = list(range(1, n + 1))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_seed, [(model_factory, corpus, hyper, s) for s in seeds]))
        if log is not None:
            for r in runs:
                for rec in r.history:
                    log(r, rec)
    else:
        runs = [run_iteration(model_factory, corpus, hyper, s, log=log) for s in seeds]
    return summarize(runs)


def select_donor(trial, layer_name="V_conv2d_3", path=None):
    """Export ``layer_name``'s kernel from the best iteration's weights.

    Returns the donor store ``{"<layer>/kernel": array}``; written to ``path``
    as a weights file when given.
    """
    run = trial.best_run if isinstance(trial, TrialSummary) else trial
    if run.weights is None:
        raise ValueError("selected run has no weights")
    key = f"{layer_name}/kernel"
    if key not in run.weights:
        raise KeyError(f"unknown layer {layer_name!r}")
    store = {key: run.weights[key].copy()}
    if path is not None:
        save_weights(store, path)
    return store


# -- reports -------------------------------------------------------------

def format_duration(seconds):
    if seconds is None:
        return "-"
    m, s = divmod(int(round(seconds)), 60)
    return f"{m}m {s}s"


def epoch_log_line(run, rec, timing=True):
    elapsed = f"{rec.elapsed:.2f}" if timing else "-"
    return (f"iteration={run.iteration} epoch={rec.epoch + 1} train_acc={rec.train_acc:.4f} "
            f"train_loss={rec.train_loss:.4f} val_acc={rec.val_acc:.4f} "
            f"val_loss={rec.val_loss:.4f} elapsed={elapsed}")


def trial_report(summary, model, dataset, timing=True):
    """Column table of averages over iterations plus a key=value block."""
    t = format_duration(summary.duration) if timing else "-"
    best = summary.best_run
    head = f"{'Model':<8} {'Dataset':<10} {'Train acc':>9} {'Train loss':>10} {'Val acc':>8} {'Val loss':>8} {'Time':>8}"
    row = (f"{model:<8} {dataset:<10} {summary.avg_train_acc:>9.4f} {summary.avg_train_loss:>10.4f} "
           f"{summary.avg_val_acc:>8.4f} {summary.avg_val_loss:>8.4f} {t:>8}")
    kv = [
        f"model={model}", f"dataset={dataset}", f"iterations={len(summary.runs)}",
        f"aborted={sum(r.aborted for r in summary.runs)}",
        f"avg_train_acc={summary.avg_train_acc:.6f}", f"avg_train_loss={summary.avg_train_loss:.6f}",
        f"avg_val_acc={summary.avg_val_acc:.6f}", f"avg_val_loss={summary.avg_val_loss:.6f}",
        f"selected_iteration={best.iteration}", f"selected_epoch={best.best_epoch + 1}",
        f"selected_val_acc={best.best_val_acc:.6f}",
    ]
    return "\n".join([head, row, "", *kv]) + "\n"
