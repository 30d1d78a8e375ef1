"""Build tasks from an :class:`ExperimentConfig`, train, and write the artifacts."""

import logging
import os
from dataclasses import dataclass

from . import io
from . import parampool as pp
from .data import load_dataset
from .nn import arch_spec, init_params
from .stealing import NoiseSpec, build_memorization_task, synthetic_targets
from .trainer import TrainConfig, make_permuted_mnist_task, train_joint

log = logging.getLogger(__name__)


@dataclass
class HideResult:
    pool: object
    carrier: object
    carrier_key: object
    keys: dict  # secret task id -> SecretKey
    tasks: list
    runlog: object
    targets: dict  # memorization task id -> StealTarget


def _optimizer(block):
    kind = block.optimizer or ("adam" if block.kind == "memorization" else "sgd")
    lr = block.lr if block.lr is not None else (0.1 if kind == "sgd" else 0.001)
    return {"kind": kind, "lr": lr}


def build_tasks(cfg):
    """Initial pool, carrier key, and task list described by ``cfg``."""
    cspec = arch_spec(cfg.carrier.arch)
    if cfg.pool_mode == "from-model":
        pool = pp.init_from_model(init_params(cspec, cfg.carrier.init_seed))
        carrier_key = pp.SecretKey(0, cspec.arch_id, pool.sizes)
    else:
        pool = pp.init_from_scratch(cfg.pool_sizes, cfg.pool_seed, cfg.sigma0)
        carrier_key = pp.SecretKey(cfg.carrier.v, cspec.arch_id, pool.sizes, permute=cfg.carrier.permute)

    needs_data = any(b.kind != "memorization" for b in cfg.tasks)
    base = load_dataset(cfg.data, cfg.n_samples, cfg.seed) if needs_data else None

    tasks, keys, targets = [], {}, {}
    for block in cfg.tasks:
        spec = arch_spec(block.arch)
        opt = _optimizer(block)
        if block.kind == "carrier":
            task = make_permuted_mnist_task(base, block.perm_seed, spec, carrier_key, "carrier",
                                            cfg.val_fraction, cfg.seed, opt, kind="carrier")
            task.target = block.target
        elif block.kind == "functionality":
            key = pp.SecretKey(block.v, spec.arch_id, pool.sizes, permute=block.permute)
            task = make_permuted_mnist_task(base, block.perm_seed, spec, key, block.task_id,
                                            cfg.val_fraction, cfg.seed, opt)
            keys[block.task_id] = key
        else:
            key = pp.SecretKey(block.v, spec.arch_id, pool.sizes, noise_seed=block.noise_seed,
                               permute=block.permute)
            target = synthetic_targets(block.count, block.side, block.target_seed)
            noise = NoiseSpec(block.noise_kind, spec.input_dim, block.count, block.noise_seed)
            task = build_memorization_task(target, noise, spec, key, block.task_id, opt, block.batch_size)
            keys[block.task_id] = key
            targets[block.task_id] = target
        if block.batch_size is not None:
            task.batch_size = block.batch_size
        task.weight = block.weight
        tasks.append(task)
    return pool, carrier_key, tasks, keys, targets


def train_config(cfg):
    return TrainConfig(max_epochs=cfg.max_epochs, batch_size=cfg.batch_size, val_fraction=cfg.val_fraction,
                       window=cfg.window, tol=cfg.tol, seed=cfg.seed, early_stop=cfg.early_stop)


def hide(cfg):
    pool, carrier_key, tasks, keys, targets = build_tasks(cfg)
    pool, runlog = train_joint(tasks, pool, train_config(cfg))
    carrier = pp.fill(pool, tasks[0].spec, carrier_key)
    return HideResult(pool, carrier, carrier_key, keys, tasks, runlog, targets)


def write_outputs(result, outdir):
    """Published carrier plus the attacker-side pool, keys, targets and run log."""
    os.makedirs(os.path.join(outdir, "keys"), exist_ok=True)
    io.save_model(os.path.join(outdir, "carrier.mtrk"), result.carrier)
    io.save_pool(os.path.join(outdir, "pool.mtrk"), result.pool)
    io.save_key(os.path.join(outdir, "keys", "carrier.key"), result.carrier_key)
    for task_id, key in result.keys.items():
        io.save_key(os.path.join(outdir, "keys", f"{task_id}.key"), key)
    for task_id, target in result.targets.items():
        io.save_tensor(os.path.join(outdir, f"targets-{task_id}.mtrk"), target.values, target.shape)
    with open(os.path.join(outdir, "runlog.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(result.runlog.to_jsonl())
