"""Joint training of a carrier and secret tasks through one parameter pool."""

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .data import Dataset, permute_pixels, train_val_split
from .nn import NumericalError, forward, loss_and_grad, make_optimizer, optimizer_step
from .parampool import derive_assignment, fill, propagate, update

log = logging.getLogger(__name__)

TASK_KINDS = ("carrier", "functionality", "memorization")


class TaskError(ValueError):
    pass


@dataclass
class TaskSpec:
    task_id: str
    kind: str
    spec: object  # ModelSpec
    key: object  # SecretKey
    train: Dataset
    val: Dataset
    optimizer: dict = field(default_factory=lambda: {"kind": "sgd", "lr": 0.1})
    metric: str = "acc"
    target: float = None  # carrier only: minimum validation metric to publish
    batch_size: int = None  # overrides TrainConfig.batch_size
    weight: float = 1.0  # relative vote in the pool update
    seed: int = None  # batch-order seed; derived from the run seed and visit position if None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise TaskError(f"task {self.task_id!r}: unknown kind {self.kind!r}")
        if self.metric not in ("acc", "mse"):
            raise TaskError(f"task {self.task_id!r}: unknown metric {self.metric!r}")
        if self.key.arch_id != self.spec.arch_id:
            raise TaskError(f"task {self.task_id!r}: key names {self.key.arch_id}, spec is {self.spec.arch_id}")


@dataclass
class TrainConfig:
    max_epochs: int = 10
    batch_size: int = 64
    val_fraction: float = 0.1
    window: int = 3
    tol: float = 0.002
    seed: int = 0
    early_stop: bool = True

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("convergence window must be >= 1")
        if self.tol <= 0:
            raise ValueError("convergence tolerance must be > 0")
        if not 0 < self.val_fraction < 1:
            raise ValueError("validation fraction must be in (0, 1)")
        if self.max_epochs < 0 or self.batch_size < 1:
            raise ValueError("max_epochs must be >= 0 and batch_size >= 1")


def pool_digest(pool):
    h = hashlib.blake2b(digest_size=8)
    for arr in pool.groups.values():
        h.update(arr.tobytes())
    return h.hexdigest()


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    termination: str = ""
    snapshots: list = field(default_factory=list)  # (epoch, pool digest)

    def add(self, epoch, task_id, loss, metric):
        if self.records and epoch < self.records[-1]["epoch"]:
            raise ValueError("epochs must be logged in order")
        self.records.append({"epoch": int(epoch), "task_id": str(task_id),
                             "loss": float(loss), "metric": float(metric)})

    def history(self, task_id):
        return [r["metric"] for r in self.records if r["task_id"] == task_id]

    def final(self, task_id):
        hist = self.history(task_id)
        return hist[-1] if hist else None

    def to_jsonl(self):
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        lines += [json.dumps({"epoch": e, "pool_digest": d}) for e, d in self.snapshots]
        lines.append(json.dumps({"termination": self.termination}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        out = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if "termination" in rec:
                out.termination = rec["termination"]
            elif "pool_digest" in rec:
                out.snapshots.append((rec["epoch"], rec["pool_digest"]))
            else:
                out.add(rec["epoch"], rec["task_id"], rec["loss"], rec["metric"])
        return out


class BatchStream:
    """Endless mini-batches over one dataset, reshuffled (seeded) every pass.

    Inputs and targets are indexed together, so a memorization pairing
    ``z_i -> x_i`` is never broken.
    """

    def __init__(self, ds, batch_size, seed):
        self.ds = ds
        self.batch_size = min(int(batch_size), len(ds))
        self.seed = seed
        self._pass = 0
        self._order = None
        self._pos = 0

    def _reshuffle(self):
        self._order = rng.permutation(rng.derive(self.seed, self._pass), rng.SHUFFLE, len(self.ds))
        self._pass += 1
        self._pos = 0

    def next(self):
        if self._order is None or self._pos + self.batch_size > len(self._order):
            self._reshuffle()
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return self.ds.X[idx], self.ds.y[idx]


def task_stream_seed(seed, position):
    """Seed of the batch stream for the task at ``position`` in the visit order."""
    return rng.derive(seed, 0x7A5C, position)


def evaluate(model, ds, metric):
    """ACC (fraction of argmax hits) or per-sample ``||f(x) - y||_2 / dim(y)`` averaged."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    out = forward(model, ds.X)
    if metric == "acc":
        return float(np.mean(np.argmax(out, axis=1) == ds.y))
    if metric == "mse":
        y = np.asarray(ds.y, dtype=np.float64)
        return float(np.mean(np.linalg.norm(out - y, axis=1) / y.shape[1]))
    raise ValueError(f"unknown metric {metric!r}")


def delta_perf(hidden_metric, baseline_metric):
    return hidden_metric - baseline_metric


def _score(metric, value):
    # larger is better for the convergence test
    return value if metric == "acc" else -value


def converged(history, metric, window, tol):
    """True once the best validation score improved by less than ``tol`` over ``window`` epochs."""
    if len(history) <= window:
        return False
    scores = [_score(metric, h) for h in history]
    return max(scores) - max(scores[:-window]) < tol


def _ordered(tasks):
    carriers = [t for t in tasks if t.kind == "carrier"]
    if len(carriers) != 1:
        raise TaskError(f"exactly one carrier task is required, got {len(carriers)}")
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise TaskError(f"task ids must be unique, got {ids}")
    return [t for t in tasks if t.kind != "carrier"] + carriers


def train_joint(tasks, pool, cfg, baseline=None, on_step=None):
    """Optimise the pool across all tasks; the pool is updated in place and returned.

    Each iteration visits every task (secrets first, carrier last): fill the
    task's model from the pool, take one optimizer step on one batch,
    propagate the parameter delta into the buffers. One :func:`update` per
    iteration. An epoch is one pass over the carrier's training data; smaller
    datasets are recycled. Training stops at an epoch boundary once the
    carrier meets its target and at least one secret task has converged, or
    after ``cfg.max_epochs``. ``on_step(step, pool)`` runs after every update.
    """
    order = _ordered(tasks)
    for t in order:
        if tuple(t.key.pool_sizes) != pool.sizes:
            raise TaskError(f"task {t.task_id!r}: key pool sizes {t.key.pool_sizes} != pool {pool.sizes}")
    assignments = [derive_assignment(t.spec, t.key) for t in order]
    states = [make_optimizer(t.optimizer) for t in order]
    streams = [
        BatchStream(t.train, t.batch_size or cfg.batch_size,
                    t.seed if t.seed is not None else task_stream_seed(cfg.seed, pos))
        for pos, t in enumerate(order)
    ]
    carrier = order[-1]
    secrets = order[:-1]
    iters = -(-len(carrier.train) // min(cfg.batch_size, len(carrier.train)))

    runlog = RunLog()
    runlog.termination = "max_epochs"
    step = 0
    for epoch in range(cfg.max_epochs):
        loss_sums = np.zeros(len(order))
        for _ in range(iters):
            for pos, task in enumerate(order):
                before = fill(pool, task.spec, task.key, assignments[pos])
                X, y = streams[pos].next()
                try:
                    loss, grads = loss_and_grad(before, X, y)
                    after, states[pos] = optimizer_step(states[pos], before, grads)
                except NumericalError as exc:
                    raise NumericalError(f"task {task.task_id!r}, epoch {epoch}: {exc}") from None
                loss_sums[pos] += loss
                propagate(pool, task.task_id, assignments[pos], before, after, task.weight)
            update(pool)
            step += 1
            if on_step is not None:
                on_step(step, pool)

        for pos, task in enumerate(order):
            model = fill(pool, task.spec, task.key, assignments[pos])
            metric = evaluate(model, task.val, task.metric)
            runlog.add(epoch, task.task_id, loss_sums[pos] / iters, metric)
            log.info("epoch %d %s loss %.5f %s %.4f", epoch, task.task_id, loss_sums[pos] / iters,
                     task.metric, metric)
        runlog.snapshots.append((epoch, pool_digest(pool)))

        target = carrier.target
        if target is None and baseline is not None:
            target = baseline - 0.02
        carrier_ok = target is None or _score(carrier.metric, runlog.final(carrier.task_id)) >= _score(
            carrier.metric, target)
        secret_ok = not secrets or any(
            converged(runlog.history(t.task_id), t.metric, cfg.window, cfg.tol) for t in secrets
        )
        if cfg.early_stop and carrier_ok and secret_ok and epoch + 1 < cfg.max_epochs and (secrets or carrier.target is not None):
            runlog.termination = f"converged at epoch {epoch}"
            break
    return pool, runlog


def train_model(model, train, optimizer, epochs, batch_size, seed, iters_per_epoch=None, on_step=None):
    """Plain training of one model, the independent baseline for hidden training.

    With ``seed = task_stream_seed(cfg.seed, 0)`` the batch order equals that
    of a single-task :func:`train_joint` run.
    """
    state = make_optimizer(optimizer)
    stream = BatchStream(train, batch_size, seed)
    if iters_per_epoch is None:
        iters_per_epoch = -(-len(train) // min(batch_size, len(train)))
    for _ in range(epochs):
        for _ in range(iters_per_epoch):
            X, y = stream.next()
            _, grads = loss_and_grad(model, X, y)
            model, state = optimizer_step(state, model, grads)
            if on_step is not None:
                on_step(state.step, model)
    return model


def make_permuted_mnist_task(base, perm_seed, spec, key, task_id=None, val_fraction=0.1, split_seed=0,
                             optimizer=None, kind="functionality"):
    """Classification task on ``base`` with one fixed pixel permutation for train and val."""
    permuted = permute_pixels(base, perm_seed)
    train, val = train_val_split(permuted, val_fraction, split_seed)
    return TaskSpec(
        task_id=task_id or f"perm-{perm_seed}",
        kind=kind,
        spec=spec,
        key=key,
        train=train,
        val=val,
        optimizer=optimizer or {"kind": "sgd", "lr": 0.1},
        metric="acc",
    )
