"""Post-training studies over frozen models: per-example fusion attention
weights, 2-D PCA projections of intermediate CLS states, and cosine-distance
curves between student and teacher layers. Everything lands in plot-ready
CSV files; rendering is left to external tools.

The PCA eigensolver is a cyclic Jacobi iteration on the covariance matrix:
deterministic, dependency-free, and exact enough at these sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .alignment import AlignmentPlan
from .encoder import Encoder
from .errors import ConfigError, InputError
from .fusion import FusionKind, FusionMethod, fuse
from .tensor import Tensor


@dataclass
class AttentionDump:
    """Rows of (example_id, student_layer, teacher_layer, alpha)."""
    rows: list[tuple[int, int, int, float]]

    def matrix(self, example_id: int, j: int) -> np.ndarray:
        vals = [(k, a) for e, jj, k, a in self.rows
                if e == example_id and jj == j]
        return np.array([a for _, a in sorted(vals)])


@dataclass
class ProjectionReport:
    coords: dict[str, np.ndarray]        # tag -> [n_examples, 2]
    explained_variance: tuple[float, float]
    components: np.ndarray               # [d, 2], orthonormal columns
    degenerate: bool = False


@dataclass
class CosineReport:
    """Per-example distances for each (student layer, teacher layer) pair."""
    rows: list[tuple[int, str, float]]   # (example_id, "s<j>:t<k>", distance)
    flagged: list[int] = field(default_factory=list)


def _cls_states(model: Encoder, token_ids: np.ndarray,
                mask: np.ndarray | None) -> list[np.ndarray]:
    with T.no_grad():
        out = model.forward(token_ids, mask=mask, train_mode=False)
    return [c.data for c in out.cls_states]


def dump_attention(student: Encoder, teacher: Encoder, plan: AlignmentPlan,
                   token_ids: np.ndarray, mask: np.ndarray | None,
                   j: int, method: FusionMethod | None = None) -> AttentionDump:
    """Fusion attention weights of student layer j over its teacher set,
    one row per (example, teacher layer)."""
    if method is None:
        method = FusionMethod(kind=FusionKind.ALP_DOT)
    if method.kind is FusionKind.CKD_CONCAT:
        raise ConfigError("no attention weights for concatenation fusion")
    layer_set = plan.layer_set(j)
    if not layer_set:
        raise ConfigError(f"student layer {j} takes no hidden-state "
                          "distillation in this plan")
    s_cls = _cls_states(student, token_ids, mask)
    t_cls = _cls_states(teacher, token_ids, mask)
    with T.no_grad():
        result = fuse(method, j, Tensor(s_cls[j - 1]),
                      [Tensor(t_cls[k - 1]) for k in layer_set])
    rows = []
    for e in range(token_ids.shape[0]):
        for pos, k in enumerate(layer_set):
            rows.append((e, j, k, float(result.weights[e, pos])))
    return AttentionDump(rows=rows)


def jacobi_eigh(matrix: np.ndarray, sweeps: int = 64,
                tol: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors-as-columns), unordered.
    """
    a = np.array(matrix, dtype=np.float64)
    d = a.shape[0]
    if a.shape != (d, d) or not np.allclose(a, a.T, atol=1e-12):
        raise InputError(f"jacobi_eigh needs a symmetric matrix, got shape "
                         f"{a.shape}")
    v = np.eye(d)
    scale = max(np.abs(a).max(), 1.0)
    for _ in range(sweeps):
        off = np.sqrt((a**2).sum() - (np.diag(a)**2).sum())
        if off <= tol * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                if abs(a[p, q]) <= tol * scale * 1e-2:
                    continue
                theta = 0.5 * np.arctan2(2.0 * a[p, q], a[q, q] - a[p, p])
                c, s = np.cos(theta), np.sin(theta)
                rot = np.eye(d)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    return np.diag(a).copy(), v


def pca_project(states: dict[str, np.ndarray]) -> ProjectionReport:
    """Fit PCA on the pooled, mean-centered states of all tags so that the
    resulting 2-D coordinates are comparable between models."""
    tags = list(states)
    pooled = np.concatenate([np.asarray(states[t], dtype=np.float64)
                             for t in tags])
    n, d = pooled.shape
    if n < 3:
        raise InputError(f"PCA needs at least 3 pooled examples, got {n}")
    if d < 2:
        raise InputError(f"PCA needs dimension >= 2, got {d}")
    mu = pooled.mean(axis=0)
    centered = pooled - mu
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = jacobi_eigh(cov)
    order = np.argsort(-eigvals)
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    total = eigvals.clip(min=0.0).sum()
    degenerate = (eigvals > max(total, 1e-300) * 1e-12).sum() < 2

    comps = eigvecs[:, :2].copy()
    for i in range(2):
        anchor = np.argmax(np.abs(comps[:, i]))
        if comps[anchor, i] < 0:
            comps[:, i] = -comps[:, i]

    ratios = ((float(eigvals[0] / total), float(eigvals[1] / total))
              if total > 0 else (0.0, 0.0))
    coords = {t: (np.asarray(states[t]) - mu) @ comps for t in tags}
    return ProjectionReport(coords=coords, explained_variance=ratios,
                            components=comps, degenerate=degenerate)


def cosine_distance(u: np.ndarray, v: np.ndarray,
                    eps: float = 1e-12) -> tuple[float, bool]:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    flagged = nu < eps or nv < eps
    return 1.0 - float(np.dot(u, v) / max(nu * nv, eps)), flagged


def cosine_distance_report(student_states: dict[int, np.ndarray],
                           teacher_states: dict[int, np.ndarray],
                           pairs: list[tuple[int, int]]) -> CosineReport:
    """Per-example cosine distance for each (student layer, teacher layer)
    pair over a matched example set."""
    rows: list[tuple[int, str, float]] = []
    flagged: list[int] = []
    for j, k in pairs:
        s = np.asarray(student_states[j])
        t = np.asarray(teacher_states[k])
        if s.shape != t.shape:
            raise InputError(f"pair s{j}:t{k}: state shapes {s.shape} vs "
                             f"{t.shape} differ")
        for e in range(s.shape[0]):
            dist, bad = cosine_distance(s[e], t[e])
            rows.append((e, f"s{j}:t{k}", dist))
            if bad:
                flagged.append(len(rows) - 1)
    return CosineReport(rows=rows, flagged=flagged)


# ---------------------------------------------------------------------------
# CSV writers


def write_attention_csv(path: Path, dump: AttentionDump) -> None:
    lines = ["example_id,j,k,alpha"]
    for e, j, k, a in dump.rows:
        lines.append(f"{e},{j},{k},{a!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_projection_csv(path: Path, report: ProjectionReport) -> None:
    lines = ["tag,example_id,pc1,pc2"]
    for tag, coords in report.coords.items():
        for e in range(coords.shape[0]):
            lines.append(f"{tag},{e},{coords[e, 0]!r},{coords[e, 1]!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_cosine_csv(path: Path, report: CosineReport) -> None:
    lines = ["example_id,pair,distance"]
    for e, pair, dist in report.rows:
        lines.append(f"{e},{pair},{dist!r}")
    Path(path).write_text("\n".join(lines) + "\n")
