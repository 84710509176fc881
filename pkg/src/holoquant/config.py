"""Experiment configuration files.

INI syntax with sections.  A minimal training config::

    [task]
    target = sum-of-sinusoids

    [model]
    dims = 1, 16, 1

    [train]
    epochs = 60

Optional keys and their defaults are listed in ``SCHEMA``.  Errors carry the
line number of the offending entry where one exists.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field

from .gsb import VQConfig
from .tasks import TARGETS, SyntheticTask
from .trainer import TrainConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "SCHEMA", "REQUIRED"]


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.key = key


def _ints(text):
    return tuple(int(v) for v in re.split(r"[,\s]+", text.strip()) if v)


def _floats(text):
    return tuple(float(v) for v in re.split(r"[,\s]+", text.strip()) if v)


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default); a default of None marks a required key
SCHEMA = {
    "task": {
        "target": (str, None),
        "input_dim": (int, 0),
        "samples": (int, 2000),
        "test_samples": (int, 2000),
        "noise": (float, 0.0),
        "seed": (int, 0),
    },
    "model": {
        "dims": (_ints, None),
        "grid_size": (int, 10),
        "domain": (_floats, (-1.0, 1.0)),
        "init_sigma": (float, 0.1),
    },
    "train": {
        "epochs": (int, None),
        "learning_rate": (float, 1e-2),
        "batch_size": (int, 32),
        "weight_decay": (float, 1e-4),
        "l21_lambda": (float, 0.0),
        "seed": (int, 0),
    },
    "compress": {
        "k": (int, 16),
        "restarts": (int, 1),
        "iters": (int, 100),
        "batch": (int, 4096),
        "seed": (int, 0),
        "int8": (_bool, False),
    },
    "analyze": {
        "mode": (str, "spectrum"),
        "sparsities": (_floats, (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0)),
        "k_list": (_ints, (4, 16, 64, 256)),
        "seeds": (_ints, (0, 1, 2)),
        "budgets": (_floats, ()),
        "restarts": (int, 3),
        "iters": (int, 100),
    },
    "bench": {
        "batch": (int, 32),
        "repeats": (int, 200),
        "warmup": (int, 20),
    },
}

REQUIRED = tuple(
    f"{sec}.{key}" for sec, keys in SCHEMA.items() for key, (_, d) in keys.items() if d is None
)


@dataclass
class RunConfig:
    values: dict
    source: str = "<defaults>"
    lines: dict = field(default_factory=dict)

    def get(self, section, key):
        return self.values[section][key]

    def task(self, input_dim: int | None = None) -> SyntheticTask:
        """The configured task; ``input_dim`` fills in when neither task nor model sets it."""
        t = self.values["task"]
        m = self.values["model"]
        dim = t["input_dim"] or (m["dims"][0] if m["dims"] else input_dim)
        if not dim:
            raise ConfigError("task.input_dim is not set and there is no model.dims", key="task.input_dim")
        return SyntheticTask(dim, t["target"], t["samples"], t["noise"], t["seed"], tuple(m["domain"]))

    def train_config(self, seed: int | None = None) -> TrainConfig:
        tr = self.values["train"]
        return TrainConfig(
            learning_rate=tr["learning_rate"],
            epochs=tr["epochs"],
            batch_size=tr["batch_size"],
            weight_decay=tr["weight_decay"],
            l21_lambda=tr["l21_lambda"],
            init_sigma=self.values["model"]["init_sigma"],
            seed=tr["seed"] if seed is None else seed,
        )

    def vq_config(self, seed=None, restarts=None) -> VQConfig:
        c = self.values["compress"]
        return VQConfig(
            iters=c["iters"],
            batch=c["batch"],
            restarts=c["restarts"] if restarts is None else restarts,
            seed=c["seed"] if seed is None else seed,
        )

    def echo(self) -> dict:
        return {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in kv.items()} for s, kv in self.values.items()}


def _line_map(text: str) -> dict:
    """(section, key) -> 1-based line number, from a plain scan of the file."""
    out, section = {}, None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            out.setdefault((section, None), n)
            continue
        m = re.match(r"([^=:]+)[=:]", line)
        if m and section is not None:
            out.setdefault((section, m.group(1).strip().lower()), n)
    return out


def parse_config(text: str, source: str = "<string>", require=("task", "model", "train")) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.ParsingError as exc:
        lineno, _ = exc.errors[0]
        raise ConfigError(f"cannot parse {source}: malformed entry", lineno) from None
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc.message}", getattr(exc, "lineno", None)) from None
    lines = _line_map(text)
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", lines.get((sec, None)))
        for key in parser[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}", lines.get((sec, key)), f"{sec}.{key}")
    values = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (conv, default) in keys.items():
            if parser.has_option(sec, key):
                raw = parser.get(sec, key)
                try:
                    values[sec][key] = conv(raw)
                except ValueError:
                    raise ConfigError(
                        f"bad value for {sec}.{key}: {raw!r}", lines.get((sec, key)), f"{sec}.{key}"
                    ) from None
            elif default is None and sec in require:
                raise ConfigError(f"missing required key {sec}.{key}", None, f"{sec}.{key}")
            else:
                values[sec][key] = default
    _check(values, lines, require)
    return RunConfig(values, source, lines)


def _check(values, lines, require):
    def fail(sec, key, msg):
        raise ConfigError(msg, lines.get((sec, key)), f"{sec}.{key}")

    if "task" in require and values["task"]["target"] not in TARGETS:
        fail("task", "target", f"unknown target {values['task']['target']!r}; known: {', '.join(sorted(TARGETS))}")
    dims = values["model"]["dims"]
    if "model" in require and (dims is None or len(dims) < 2 or min(dims) < 1):
        fail("model", "dims", f"model.dims needs at least two positive widths, got {dims}")
    if len(values["model"]["domain"]) != 2 or not values["model"]["domain"][0] < values["model"]["domain"][1]:
        fail("model", "domain", "model.domain must be two increasing numbers")
    if values["model"]["grid_size"] < 2:
        fail("model", "grid_size", "model.grid_size must be >= 2")
    if "train" in require and values["train"]["epochs"] < 1:
        fail("train", "epochs", "train.epochs must be >= 1")
    if values["compress"]["k"] < 1:
        fail("compress", "k", "compress.k must be >= 1")
    if values["compress"]["restarts"] < 1:
        fail("compress", "restarts", "compress.restarts must be >= 1")


def load_config(path, require=("task", "model", "train")) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path), require)
