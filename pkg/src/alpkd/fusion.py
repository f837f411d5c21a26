"""Combining a set of teacher CLS states into one vector per student layer.

Three mechanisms:
  * dot-product attention: weights are a softmax over raw student/teacher
    dot products, no trainable parameters;
  * key-query-value attention: learned projections with per-head 1/sqrt(d_h)
    scaling, heads concatenated;
  * concatenation: teacher states concatenated in ascending layer order and
    pushed through a single projection matrix (no attention weights).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import tensor as T
from .alignment import AlignmentPlan
from .errors import ConfigError
from .tensor import Tensor


class FusionKind(str, Enum):
    ALP_DOT = "ALP_DOT"
    ALP_KQV = "ALP_KQV"
    CKD_CONCAT = "CKD_CONCAT"


@dataclass
class FusionResult:
    fused: Tensor                     # [batch, hidden]
    weights: np.ndarray | None = None  # [batch, |A(j)|], attention kinds only


@dataclass
class FusionMethod:
    """Fusion kind plus its trainable parameters, keyed per student layer."""

    kind: FusionKind
    num_heads: int = 1
    params: dict[str, Tensor] = field(default_factory=dict)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def layer_param(self, j: int, name: str) -> Tensor:
        return self.params[f"layer{j}.{name}"]


def make_fusion_method(kind: FusionKind, plan: AlignmentPlan, hidden_dim: int,
                       num_heads: int = 1, seed: int = 0) -> FusionMethod:
    """Allocate per-student-layer fusion parameters for a plan."""
    rng = np.random.default_rng(seed)
    method = FusionMethod(kind=kind, num_heads=num_heads)
    if kind is FusionKind.ALP_DOT:
        return method
    if kind is FusionKind.ALP_KQV:
        if hidden_dim % num_heads != 0:
            raise ConfigError(f"hidden_dim {hidden_dim} not divisible by "
                              f"{num_heads} fusion heads")
        for j in plan.participating():
            for name in ("wq", "wk", "wv"):
                method.params[f"layer{j}.{name}"] = Tensor(
                    rng.normal(0.0, 0.02, size=(hidden_dim, hidden_dim)),
                    requires_grad=True)
        return method
    if kind is FusionKind.CKD_CONCAT:
        for j in plan.participating():
            width = len(plan.layer_set(j)) * hidden_dim
            bound = 1.0 / np.sqrt(width)
            method.params[f"layer{j}.proj"] = Tensor(
                rng.uniform(-bound, bound, size=(width, hidden_dim)),
                requires_grad=True)
        return method
    raise ConfigError(f"unknown fusion kind {kind}")


def _stack(teacher_states: list[Tensor]) -> Tensor:
    batch, d = teacher_states[0].shape
    for t in teacher_states:
        if t.shape != (batch, d):
            raise ConfigError(f"teacher states disagree in shape: "
                              f"{t.shape} vs {(batch, d)}")
    return T.concat([T.reshape(t, (batch, 1, d)) for t in teacher_states],
                    axis=1)


def alp_fuse(h_s: Tensor, teacher_states: list[Tensor]) -> FusionResult:
    """Dot-product attention fusion of teacher states against one student
    state. Logits are raw dot products (no scaling)."""
    if not teacher_states:
        raise ConfigError("cannot fuse an empty teacher layer set")
    batch, d = h_s.shape
    stacked = _stack(teacher_states)                       # [B, K, d]
    k = len(teacher_states)
    logits = T.reshape(T.matmul(stacked, T.reshape(h_s, (batch, d, 1))),
                       (batch, k))
    alpha = T.softmax(logits, axis=-1)
    fused = T.reshape(
        T.matmul(T.transpose(stacked, (0, 2, 1)),
                 T.reshape(alpha, (batch, k, 1))),
        (batch, d))
    return FusionResult(fused=fused, weights=alpha.data.copy())


def kqv_fuse(h_s: Tensor, teacher_states: list[Tensor], wq: Tensor,
             wk: Tensor, wv: Tensor, num_heads: int) -> FusionResult:
    """Projected multi-head attention fusion with 1/sqrt(d_head) scaling.

    Reported weights are the head average, which still sums to one per row.
    """
    if not teacher_states:
        raise ConfigError("cannot fuse an empty teacher layer set")
    batch, d = h_s.shape
    if d % num_heads != 0:
        raise ConfigError(f"hidden_dim {d} not divisible by {num_heads} heads")
    dh = d // num_heads
    kcount = len(teacher_states)
    stacked = _stack(teacher_states)                       # [B, K, d]

    q = T.reshape(T.matmul(h_s, wq), (batch, num_heads, dh, 1))
    keys = T.transpose(T.reshape(T.matmul(stacked, wk),
                                 (batch, kcount, num_heads, dh)),
                       (0, 2, 1, 3))                       # [B, H, K, dh]
    vals = T.transpose(T.reshape(T.matmul(stacked, wv),
                                 (batch, kcount, num_heads, dh)),
                       (0, 2, 1, 3))
    scores = T.scale(T.matmul(keys, q), 1.0 / np.sqrt(dh))  # [B, H, K, 1]
    alpha = T.softmax(T.reshape(scores, (batch, num_heads, kcount)), axis=-1)
    ctx = T.matmul(T.transpose(vals, (0, 1, 3, 2)),
                   T.reshape(alpha, (batch, num_heads, kcount, 1)))
    fused = T.reshape(ctx, (batch, d))
    return FusionResult(fused=fused, weights=alpha.data.mean(axis=1))


def ckd_fuse(teacher_states: list[Tensor], projection: Tensor) -> FusionResult:
    """Concatenate teacher states (ascending layer order) and project."""
    if not teacher_states:
        raise ConfigError("cannot fuse an empty teacher layer set")
    batch, d = teacher_states[0].shape
    width = len(teacher_states) * d
    if projection.shape != (width, d):
        raise ConfigError(f"projection shape {projection.shape} does not "
                          f"match required ({width}, {d})")
    flat = T.concat(teacher_states, axis=1)
    return FusionResult(fused=T.matmul(flat, projection), weights=None)


def fuse(method: FusionMethod, j: int, h_s: Tensor,
         teacher_states: list[Tensor]) -> FusionResult:
    """Apply the configured fusion for student layer j."""
    if method.kind is FusionKind.ALP_DOT:
        return alp_fuse(h_s, teacher_states)
    if method.kind is FusionKind.ALP_KQV:
        return kqv_fuse(h_s, teacher_states,
                        method.layer_param(j, "wq"),
                        method.layer_param(j, "wk"),
                        method.layer_param(j, "wv"),
                        method.num_heads)
    if method.kind is FusionKind.CKD_CONCAT:
        return ckd_fuse(teacher_states, method.layer_param(j, "proj"))
    raise ConfigError(f"unknown fusion kind {method.kind}")


_FUSION_MAGIC = "FUSION1"


def save_fusion(method: FusionMethod, path) -> None:
    """Persist trainable fusion parameters next to a run's checkpoints."""
    lines = [_FUSION_MAGIC, f"kind={method.kind.value}",
             f"num_heads={method.num_heads}"]
    for name, p in method.parameters():
        dims = "x".join(str(s) for s in p.shape)
        lines.append(f"param={name}:{dims}")
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for _, p in method.parameters():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_fusion(path) -> FusionMethod:
    from .errors import FormatError

    with open(path, "rb") as fh:
        blob = fh.read()
    header_end = blob.find(b"\nend\n")
    if header_end < 0:
        raise FormatError("fusion file has no end marker", offset=0)
    header_end += len(b"\nend\n")
    lines = blob[:header_end].decode("utf-8").splitlines()
    if lines[0] != _FUSION_MAGIC:
        raise FormatError(f"bad magic {lines[0]!r}", offset=0)
    kind = FusionKind(lines[1].split("=", 1)[1])
    num_heads = int(lines[2].split("=", 1)[1])
    method = FusionMethod(kind=kind, num_heads=num_heads)
    pos = header_end
    for line in lines[3:-1]:
        name, dims = line.split("=", 1)[1].split(":")
        shape = tuple(int(d) for d in dims.split("x"))
        nbytes = int(np.prod(shape)) * 8
        if pos + nbytes > len(blob):
            raise FormatError(f"fusion file truncated reading {name}",
                              offset=pos)
        arr = np.frombuffer(blob[pos:pos + nbytes],
                            dtype="<f8").reshape(shape).copy()
        method.params[name] = Tensor(arr, requires_grad=True)
        pos += nbytes
    if pos != len(blob):
        raise FormatError("fusion file has trailing bytes", offset=pos)
    return method
