"""Experiment configuration: an INI-style file with one section per task.

Example::

    [run]
    output = out
    data = synthetic
    n_samples = 10000
    max_epochs = 20

    [pool]
    mode = from-model

    [carrier]
    arch = fcn-784-200-200-10
    perm_seed = 100

    [secret.s1]
    kind = functionality
    arch = fcn-784-150-250-10
    perm_seed = 101
    v = 12345
"""

import configparser
from dataclasses import dataclass, field, fields

RUN_KEYS = {
    "output": str, "data": str, "n_samples": int, "seed": int, "max_epochs": int,
    "batch_size": int, "val_fraction": float, "window": int, "tol": float, "early_stop": bool,
}
POOL_KEYS = {"mode": str, "sizes": str, "seed": int, "sigma0": float}
TASK_KEYS = {
    "kind": str, "arch": str, "perm_seed": int, "v": int, "permute": bool, "init_seed": int,
    "optimizer": str, "lr": float, "target": float, "weight": float, "batch_size": int,
    # memorization tasks
    "noise_seed": int, "noise_kind": str, "count": int, "side": int, "target_seed": int,
}


class ConfigError(ValueError):
    pass


@dataclass
class TaskBlock:
    task_id: str
    kind: str
    arch: str
    perm_seed: int = None
    v: int = 0
    permute: bool = False
    init_seed: int = 0
    optimizer: str = None
    lr: float = None
    target: float = None
    weight: float = 1.0
    batch_size: int = None
    noise_seed: int = None
    noise_kind: str = "gaussian"
    count: int = 16
    side: int = 8
    target_seed: int = 0


@dataclass
class ExperimentConfig:
    carrier: TaskBlock
    secrets: list = field(default_factory=list)
    pool_mode: str = "from-model"
    pool_sizes: tuple = None
    pool_seed: int = 0
    sigma0: float = 0.05
    output: str = "out"
    data: str = "synthetic"
    n_samples: int = 10000
    seed: int = 0
    max_epochs: int = 20
    batch_size: int = 64
    val_fraction: float = 0.1
    window: int = 3
    tol: float = 0.002
    early_stop: bool = True

    def __post_init__(self):
        if self.pool_mode not in ("from-model", "from-scratch"):
            raise ConfigError(f"pool mode must be from-model or from-scratch, got {self.pool_mode!r}")
        if self.pool_mode == "from-scratch" and self.pool_sizes is None:
            raise ConfigError("from-scratch pools need sizes = w,b,s")
        ids = [self.carrier.task_id] + [s.task_id for s in self.secrets]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"task ids must be unique, got {ids}")
        for block in [self.carrier] + self.secrets:
            if block.kind not in ("carrier", "functionality", "memorization"):
                raise ConfigError(f"{block.task_id}: unknown kind {block.kind!r}")
            if block.kind == "memorization" and block.noise_seed is None:
                raise ConfigError(f"{block.task_id}: memorization tasks need noise_seed")
        if self.carrier.kind != "carrier":
            raise ConfigError("the [carrier] section must have kind = carrier")

    @property
    def tasks(self):
        return [self.carrier] + list(self.secrets)

    def to_text(self):
        cp = _parser()
        cp["run"] = {k: _fmt(getattr(self, k)) for k in RUN_KEYS}
        pool = {"mode": self.pool_mode, "seed": str(self.pool_seed), "sigma0": repr(self.sigma0)}
        if self.pool_sizes is not None:
            pool["sizes"] = ",".join(str(s) for s in self.pool_sizes)
        cp["pool"] = pool
        for block in self.tasks:
            name = "carrier" if block.kind == "carrier" else f"secret.{block.task_id}"
            cp[name] = {
                f.name: _fmt(getattr(block, f.name))
                for f in fields(TaskBlock)
                if f.name != "task_id" and getattr(block, f.name) is not None
            }
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text):
        cp = _parser()
        try:
            cp.read_string(text)
        except configparser.DuplicateSectionError as exc:
            if exc.section.startswith("secret."):
                raise ConfigError(f"task id {exc.section[len('secret.'):]!r} appears twice") from None
            raise ConfigError(f"section [{exc.section}] appears twice") from None
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None

        kwargs = {}
        secrets = []
        carrier = None
        for section in cp.sections():
            items = dict(cp[section])
            if section == "run":
                kwargs.update(_typed(items, RUN_KEYS, section))
            elif section == "pool":
                pool = _typed(items, POOL_KEYS, section)
                kwargs["pool_mode"] = pool.get("mode", "from-model")
                if "sizes" in pool:
                    kwargs["pool_sizes"] = _sizes(pool["sizes"])
                if "seed" in pool:
                    kwargs["pool_seed"] = pool["seed"]
                if "sigma0" in pool:
                    kwargs["sigma0"] = pool["sigma0"]
            elif section == "carrier":
                vals = _typed(items, TASK_KEYS, section)
                vals.setdefault("kind", "carrier")
                carrier = _block("carrier", vals)
            elif section.startswith("secret."):
                task_id = section[len("secret."):]
                vals = _typed(items, TASK_KEYS, section)
                vals.setdefault("kind", "functionality")
                secrets.append(_block(task_id, vals))
            else:
                raise ConfigError(f"unknown section [{section}]")
        if carrier is None:
            raise ConfigError("missing [carrier] section")
        return cls(carrier=carrier, secrets=secrets, **kwargs)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_text(fh.read())


def _parser():
    cp = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#",))
    cp.optionxform = str
    return cp


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _typed(items, schema, section):
    unknown = set(items) - set(schema)
    if unknown:
        raise ConfigError(f"[{section}]: unknown keys {sorted(unknown)}")
    out = {}
    for k, v in items.items():
        conv = _parse_bool if schema[k] is bool else schema[k]
        try:
            out[k] = conv(v)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {k}: {exc}") from None
    return out


def _sizes(text):
    try:
        sizes = tuple(int(s) for s in text.split(","))
    except ValueError:
        raise ConfigError(f"pool sizes must be three integers, got {text!r}") from None
    if len(sizes) != 3:
        raise ConfigError(f"pool sizes must be three integers, got {text!r}")
    return sizes


def _block(task_id, vals):
    if "arch" not in vals:
        raise ConfigError(f"task {task_id!r} has no arch")
    return TaskBlock(task_id=task_id, **vals)
