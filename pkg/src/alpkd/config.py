"""Run configuration files: INI-style sections with a strict schema.

Unknown sections or keys are rejected so a typo cannot silently change an
experiment. Every run persists its effective config with all defaults
materialized; that file is itself a valid config and reproduces the run.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .data import TaskSpec
from .encoder import EncoderConfig
from .errors import ConfigError
from .trainer import GridSpec, TrainConfig

Picks = Optional[tuple[Optional[int], ...]]


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_picks(text: str) -> Picks:
    t = text.strip()
    if not t:
        return None
    return tuple(None if p.strip() == "-" else int(p)
                 for p in t.split(","))


def _parse_pick_sets(text: str):
    t = text.strip()
    if not t:
        return None
    return tuple(_parse_picks(chunk) for chunk in t.split(";"))


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):   # pick sets
            return ";".join(_fmt(v) for v in value)
        return ",".join("-" if v is None else _fmt(v) for v in value)
    return str(value)


# section -> key -> (parser, default)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "task": {
        "name": (str, "task"),
        "kind": (str, "majority"),
        "vocab_size": (int, 16),
        "seq_len": (int, 32),
        "num_classes": (int, 2),
        "train_size": (int, 2000),
        "val_size": (int, 500),
        "seed": (int, 0),
        "train_path": (str, ""),
        "val_path": (str, ""),
        "text_cols": (_parse_str_list, ("text",)),
        "label_col": (str, "label"),
    },
    "teacher": {
        "num_layers": (int, 4),
        "hidden_dim": (int, 64),
        "num_heads": (int, 4),
        "ffn_dim": (int, 128),
        "dropout_rate": (float, 0.1),
        "learning_rate": (float, 1e-3),
        "batch_size": (int, 32),
        "epochs": (int, 20),
        "seed": (int, 0),
        "optimizer": (str, "adam"),
    },
    "student": {
        "num_layers": (int, 2),
    },
    "train": {
        "learning_rate": (float, 5e-5),
        "batch_size": (int, 32),
        "epochs": (int, 10),
        "temperature": (float, 1.0),
        "eta": (float, 0.0),
        "lambda": (float, 0.0),
        "seed": (int, 0),
        "optimizer": (str, "adam"),
        "rescale_t2": (_parse_bool, False),
        "teacher_dropout": (_parse_bool, False),
        "log_steps": (_parse_bool, True),
    },
    "alignment": {
        "strategy": (str, "nkd"),
        "fusion": (str, "auto"),
        "pkd_picks": (_parse_picks, None),
        "include_last_layer": (_parse_bool, False),
    },
    "grid": {
        "strategies": (_parse_str_list, ("nkd", "rkd", "pkd", "alp-full")),
        "learning_rates": (_parse_float_list, (1e-5, 2e-5, 5e-5)),
        "temperatures": (_parse_float_list, (1.0, 5.0, 10.0, 20.0)),
        "etas": (_parse_float_list, (0.2, 0.5, 0.7)),
        "lambdas": (_parse_float_list, (0.2, 0.5, 0.7)),
        "pkd_pick_sets": (_parse_pick_sets, None),
        "final_seeds": (int, 5),
        "workers": (int, 0),
    },
    "output": {
        "root": (str, ""),
    },
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]

    def get(self, section: str, key: str):
        return self.values[section][key]

    # -- assembled objects ------------------------------------------------

    def task_spec(self) -> TaskSpec:
        v = self.values["task"]
        return TaskSpec(
            name=v["name"], kind=v["kind"], vocab_size=v["vocab_size"],
            seq_len=v["seq_len"], num_classes=v["num_classes"],
            train_size=v["train_size"], val_size=v["val_size"],
            seed=v["seed"],
            train_path=v["train_path"] or None,
            val_path=v["val_path"] or None,
            text_cols=tuple(v["text_cols"]), label_col=v["label_col"])

    def teacher_encoder_config(self, task_spec: TaskSpec) -> EncoderConfig:
        v = self.values["teacher"]
        return EncoderConfig(
            num_layers=v["num_layers"], vocab_size=task_spec.vocab_size,
            max_seq_len=task_spec.seq_len, num_classes=task_spec.num_classes,
            hidden_dim=v["hidden_dim"], num_heads=v["num_heads"],
            ffn_dim=v["ffn_dim"], dropout_rate=v["dropout_rate"])

    def teacher_train_config(self) -> TrainConfig:
        v = self.values["teacher"]
        t = self.values["train"]
        return TrainConfig(
            learning_rate=v["learning_rate"], batch_size=v["batch_size"],
            epochs=v["epochs"], seed=v["seed"], optimizer=v["optimizer"],
            strategy="nkd", log_steps=t["log_steps"])

    def train_config(self, strategy: Optional[str] = None,
                     student_layers: Optional[int] = None,
                     fusion: Optional[str] = None) -> TrainConfig:
        t = self.values["train"]
        a = self.values["alignment"]
        return TrainConfig(
            learning_rate=t["learning_rate"], batch_size=t["batch_size"],
            epochs=t["epochs"], temperature=t["temperature"], eta=t["eta"],
            lam=t["lambda"], seed=t["seed"], optimizer=t["optimizer"],
            strategy=strategy or a["strategy"],
            fusion=fusion or a["fusion"],
            student_layers=student_layers or self.values["student"]["num_layers"],
            pkd_picks=a["pkd_picks"],
            include_last_layer=a["include_last_layer"],
            rescale_t2=t["rescale_t2"],
            teacher_dropout=t["teacher_dropout"],
            log_steps=t["log_steps"])

    def grid_spec(self) -> GridSpec:
        g = self.values["grid"]
        return GridSpec(
            learning_rates=tuple(g["learning_rates"]),
            temperatures=tuple(g["temperatures"]),
            etas=tuple(g["etas"]),
            lambdas=tuple(g["lambdas"]),
            pkd_pick_sets=g["pkd_pick_sets"])

    def out_root(self) -> Path:
        configured = self.values["output"]["root"]
        if configured:
            return Path(configured)
        env = os.environ.get("ALPKD_OUT_ROOT")
        return Path(env) if env else Path("runs")

    # -- persistence -------------------------------------------------------

    def effective_text(self) -> str:
        chunks = []
        for section, keys in _SCHEMA.items():
            chunks.append(f"[{section}]")
            for key in keys:
                chunks.append(f"{key} = {_fmt(self.values[section][key])}")
            chunks.append("")
        return "\n".join(chunks)

    def config_hash(self) -> str:
        return hashlib.sha256(self.effective_text().encode()).hexdigest()[:10]


def parse_config(path) -> RunConfig:
    """Parse and validate a config file; unknown keys are rejected."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                       interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    values: dict[str, dict[str, object]] = {
        section: {key: default for key, (_, default) in keys.items()}
        for section, keys in _SCHEMA.items()}

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}] "
                              f"(valid: {', '.join(_SCHEMA)})")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(
                    f"{path}: unknown key {key!r} in [{section}] "
                    f"(valid: {', '.join(_SCHEMA[section])})")
            fn, _ = _SCHEMA[section][key]
            try:
                values[section][key] = fn(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{path}: bad value for [{section}] "
                                  f"{key} = {raw!r}: {exc}") from exc
    return RunConfig(values=values)
