"""A scaled-down BERT-style encoder usable as teacher or student.

Post-layer-norm transformer blocks over learned token + position embeddings,
CLS pooling at position 0, and a linear classifier head. The forward pass
returns every layer's full sequence state and its CLS vector, which is what
the distillation losses consume.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, FormatError, InputError
from .tensor import Tensor

_MAGIC = "MINIENC1"

_LAYER_FIELDS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                 "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b")


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    vocab_size: int
    max_seq_len: int
    num_classes: int
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by "
                              f"num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got "
                              f"{self.dropout_rate}")
        for field in ("vocab_size", "max_seq_len", "num_classes", "ffn_dim"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be positive")


@dataclass
class ForwardOutput:
    """Per-layer sequence states and CLS vectors, plus classifier logits."""
    seq_states: list[Tensor]   # each [batch, seq, hidden]
    cls_states: list[Tensor]   # each [batch, hidden]
    logits: Tensor             # [batch, num_classes]


def param_shapes(config: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Declared parameter order; checkpoints serialize exactly this order."""
    d, f = config.hidden_dim, config.ffn_dim
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (config.vocab_size, d)),
        ("pos_emb", (config.max_seq_len, d)),
    ]
    per_layer = {
        "wq": (d, d), "bq": (d,), "wk": (d, d), "bk": (d,),
        "wv": (d, d), "bv": (d,), "wo": (d, d), "bo": (d,),
        "ln1_g": (d,), "ln1_b": (d,),
        "w1": (d, f), "b1": (f,), "w2": (f, d), "b2": (d,),
        "ln2_g": (d,), "ln2_b": (d,),
    }
    for i in range(1, config.num_layers + 1):
        for field in _LAYER_FIELDS:
            shapes.append((f"layer{i}.{field}", per_layer[field]))
    shapes.append(("cls_w", (d, config.num_classes)))
    shapes.append(("cls_b", (config.num_classes,)))
    return shapes


class Encoder:
    """Transformer classifier; owns its parameters as named float64 tensors."""

    def __init__(self, config: EncoderConfig, seed: int | None = 0,
                 params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params: dict[str, Tensor] = {}
        if params is None:
            rng = np.random.default_rng(seed)
            for name, shape in param_shapes(config):
                if name.endswith("_g"):
                    data = np.ones(shape)
                elif len(shape) == 1:
                    data = np.zeros(shape)
                else:
                    data = rng.normal(0.0, 0.02, size=shape)
                self.params[name] = Tensor(data, requires_grad=True)
        else:
            for name, shape in param_shapes(config):
                arr = params[name]
                if arr.shape != shape:
                    raise ConfigError(f"parameter {name}: expected shape "
                                      f"{shape}, got {arr.shape}")
                self.params[name] = Tensor(arr, requires_grad=True)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def forward(self, token_ids: np.ndarray, mask: np.ndarray | None = None,
                train_mode: bool = False,
                rng: np.random.Generator | None = None) -> ForwardOutput:
        """Run the encoder; position 0 is the CLS token.

        ``mask`` marks valid (non-PAD) positions with 1.0. Dropout fires only
        in train mode and then needs an explicit rng.
        """
        cfg = self.config
        ids = np.asarray(token_ids)
        if ids.ndim != 2:
            raise InputError(f"token_ids must be [batch, seq], got {ids.shape}")
        batch, seq = ids.shape
        if seq > cfg.max_seq_len:
            raise InputError(f"sequence length {seq} exceeds max_seq_len "
                             f"{cfg.max_seq_len}")
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise InputError(f"token id out of range [0, {cfg.vocab_size}): "
                             f"min={ids.min()}, max={ids.max()}")
        drop = cfg.dropout_rate if train_mode else 0.0
        if drop > 0.0 and rng is None:
            raise InputError("train-mode forward with dropout needs an rng")

        p = self.params
        heads, d = cfg.num_heads, cfg.hidden_dim
        dh = d // heads

        x = T.add(T.embedding(p["tok_emb"], ids),
                  T.embedding(p["pos_emb"], np.arange(seq)))
        if drop > 0.0:
            x = T.dropout(x, drop, rng)

        if mask is not None:
            neg = np.broadcast_to(
                (1.0 - np.asarray(mask, dtype=np.float64))[:, None, None, :] * -1e9,
                (batch, heads, seq, seq))
        else:
            neg = None

        seq_states: list[Tensor] = []
        cls_states: list[Tensor] = []
        for i in range(1, cfg.num_layers + 1):
            lp = {f: p[f"layer{i}.{f}"] for f in _LAYER_FIELDS}

            def split(t: Tensor) -> Tensor:
                return T.transpose(T.reshape(t, (batch, seq, heads, dh)),
                                   (0, 2, 1, 3))

            q = split(T.add(T.matmul(x, lp["wq"]), lp["bq"]))
            k = split(T.add(T.matmul(x, lp["wk"]), lp["bk"]))
            v = split(T.add(T.matmul(x, lp["wv"]), lp["bv"]))
            scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))),
                             1.0 / np.sqrt(dh))
            if neg is not None:
                scores = T.add(scores, neg)
            attn = T.softmax(scores, axis=-1)
            if drop > 0.0:
                attn = T.dropout(attn, drop, rng)
            ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)),
                            (batch, seq, d))
            out = T.add(T.matmul(ctx, lp["wo"]), lp["bo"])
            if drop > 0.0:
                out = T.dropout(out, drop, rng)
            x = T.layer_norm(T.add(x, out), lp["ln1_g"], lp["ln1_b"])

            h = T.gelu(T.add(T.matmul(x, lp["w1"]), lp["b1"]))
            f = T.add(T.matmul(h, lp["w2"]), lp["b2"])
            if drop > 0.0:
                f = T.dropout(f, drop, rng)
            x = T.layer_norm(T.add(x, f), lp["ln2_g"], lp["ln2_b"])

            seq_states.append(x)
            cls_states.append(T.select(x, 1, 0))

        logits = T.add(T.matmul(cls_states[-1], p["cls_w"]), p["cls_b"])
        return ForwardOutput(seq_states, cls_states, logits)

    def predict(self, token_ids: np.ndarray,
                mask: np.ndarray | None = None) -> np.ndarray:
        """Argmax class predictions with no graph construction."""
        with T.no_grad():
            out = self.forward(token_ids, mask=mask, train_mode=False)
        return out.logits.data.argmax(axis=-1)

    def copy_params(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}


def init_student_from_teacher(teacher: Encoder, m: int) -> Encoder:
    """Build an m-layer student from the teacher's first m layers.

    Embeddings, the first m transformer layers, and the classifier head are
    value copies; training the student never touches the teacher.
    """
    n = teacher.config.num_layers
    if m > n:
        raise ConfigError(f"student depth {m} exceeds teacher depth {n}")
    if m < 1:
        raise ConfigError(f"student depth must be >= 1, got {m}")
    cfg = replace(teacher.config, num_layers=m)
    params = {name: teacher.params[name].data.copy()
              for name, _ in param_shapes(cfg)}
    return Encoder(cfg, params=params)


def save_checkpoint(encoder: Encoder, path) -> None:
    """Self-describing header plus raw little-endian float64 blocks."""
    cfg = encoder.config
    lines = [_MAGIC]
    for field in ("num_layers", "vocab_size", "max_seq_len", "num_classes",
                  "hidden_dim", "num_heads", "ffn_dim", "dropout_rate"):
        lines.append(f"{field}={getattr(cfg, field)!r}")
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        for name, _ in param_shapes(cfg):
            block = np.ascontiguousarray(encoder.params[name].data,
                                         dtype="<f8")
            fh.write(block.tobytes())


def load_checkpoint(path, expect_config: Optional[EncoderConfig] = None) -> Encoder:
    """Parse and fully validate a checkpoint before building the model."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header_end = blob.find(b"\nend\n")
    if header_end < 0:
        raise FormatError("checkpoint header has no end marker", offset=0)
    header_end += len(b"\nend\n")
    try:
        lines = blob[:header_end].decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise FormatError("checkpoint header is not UTF-8",
                          offset=exc.start) from exc
    if lines[0] != _MAGIC:
        raise FormatError(f"bad magic {lines[0]!r}, expected {_MAGIC!r}",
                          offset=0)
    fields: dict[str, str] = {}
    offset = len(lines[0]) + 1
    for line in lines[1:-1]:
        if "=" not in line:
            raise FormatError(f"malformed header line {line!r}", offset=offset)
        key, value = line.split("=", 1)
        fields[key] = value
        offset += len(line) + 1

    expected_keys = {"num_layers", "vocab_size", "max_seq_len", "num_classes",
                     "hidden_dim", "num_heads", "ffn_dim", "dropout_rate"}
    if set(fields) != expected_keys:
        raise FormatError(f"header keys {sorted(fields)} do not match "
                          f"{sorted(expected_keys)}", offset=offset)
    try:
        cfg = EncoderConfig(
            num_layers=int(fields["num_layers"]),
            vocab_size=int(fields["vocab_size"]),
            max_seq_len=int(fields["max_seq_len"]),
            num_classes=int(fields["num_classes"]),
            hidden_dim=int(fields["hidden_dim"]),
            num_heads=int(fields["num_heads"]),
            ffn_dim=int(fields["ffn_dim"]),
            dropout_rate=float(fields["dropout_rate"]),
        )
    except (ValueError, ConfigError) as exc:
        raise FormatError(f"invalid header values: {exc}", offset=offset) from exc

    if expect_config is not None and cfg != expect_config:
        diffs = [f for f in expected_keys
                 if getattr(cfg, f) != getattr(expect_config, f)]
        raise ConfigError(f"checkpoint config mismatch on fields: "
                          f"{sorted(diffs)}")

    shapes = param_shapes(cfg)
    total = sum(int(np.prod(s)) for _, s in shapes) * 8
    body = blob[header_end:]
    if len(body) != total:
        raise FormatError(f"parameter payload is {len(body)} bytes, expected "
                          f"{total}", offset=header_end + min(len(body), total))
    params: dict[str, np.ndarray] = {}
    pos = 0
    for name, shape in shapes:
        nbytes = int(np.prod(shape)) * 8
        params[name] = np.frombuffer(
            body[pos:pos + nbytes], dtype="<f8").reshape(shape).copy()
        pos += nbytes
    return Encoder(cfg, params=params)
