"""Training orchestration: teacher fitting, student distillation runs in
every strategy (nkd / rkd / pkd / ckd-no / ckd-po / alp-no / alp-po /
alp-full), and the hyperparameter grid search.

The teacher is frozen throughout distillation; its logits and CLS states
over the training split are precomputed once per run (they cannot change),
which keeps the step loop to a single student forward/backward.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .alignment import (AlignmentPlan, default_pkd_picks, make_bucket_plan,
                        make_full_span_plan, make_pkd_plan)
from .data import Dataset, Task, TaskSpec, build_task
from .encoder import (Encoder, EncoderConfig, init_student_from_teacher,
                      load_checkpoint, save_checkpoint)
from .errors import ConfigError, DivergenceError
from .fusion import FusionKind, FusionMethod, make_fusion_method
from .losses import LossBreakdown, LossWeights, alp_loss, ce_loss, kd_loss, pkd_loss, total_loss
from .optim import make_optimizer

STRATEGIES = ("nkd", "rkd", "pkd", "ckd-no", "ckd-po",
              "alp-no", "alp-po", "alp-full")

FUSION_CHOICES = ("auto", "dot", "kqv1", "kqv4", "concat")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 32
    epochs: int = 10
    temperature: float = 1.0
    eta: float = 0.0
    lam: float = 0.0
    seed: int = 0
    optimizer: str = "adam"
    strategy: str = "nkd"
    fusion: str = "auto"
    student_layers: int = 2
    pkd_picks: Optional[tuple[Optional[int], ...]] = None
    include_last_layer: bool = False
    rescale_t2: bool = False
    teacher_dropout: bool = False
    log_steps: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r} "
                              f"(valid: {', '.join(STRATEGIES)})")
        if self.fusion not in FUSION_CHOICES:
            raise ConfigError(f"unknown fusion {self.fusion!r} "
                              f"(valid: {', '.join(FUSION_CHOICES)})")
        if self.strategy == "nkd" and (self.eta != 0 or self.lam != 0):
            raise ConfigError("nkd means no distillation: eta and lambda "
                              "must be 0")
        if self.strategy == "rkd" and self.lam != 0:
            raise ConfigError("rkd has no hidden-state loss: lambda must "
                              "be 0")
        # validates beta >= 0 and temperature >= 1
        LossWeights(eta=self.eta, lam=self.lam, temperature=self.temperature)

    @property
    def beta(self) -> float:
        return 1.0 - self.eta - self.lam

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = self.beta
        if d["pkd_picks"] is not None:
            d["pkd_picks"] = list(d["pkd_picks"])
        return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d.pop("beta", None)
    if d.get("pkd_picks") is not None:
        d["pkd_picks"] = tuple(None if p is None else int(p)
                               for p in d["pkd_picks"])
    return TrainConfig(**d)


@dataclass
class RunRecord:
    config: dict
    epochs: list[dict]
    best_epoch: int
    best_val_accuracy: float
    final_val_accuracy: float
    wall_clock_sec: float
    checkpoint_path: Optional[str] = None
    diverged: bool = False

    def metrics_dict(self) -> dict:
        """The deterministic view persisted as metrics.json."""
        return {
            "config": self.config,
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_val_accuracy": self.best_val_accuracy,
            "final_val_accuracy": self.final_val_accuracy,
        }

    def to_dict(self) -> dict:
        d = self.metrics_dict()
        d["wall_clock_sec"] = self.wall_clock_sec
        d["checkpoint_path"] = self.checkpoint_path
        d["diverged"] = self.diverged
        return d


def resolve_strategy(config: TrainConfig, n: int, m: int
                     ) -> tuple[Optional[AlignmentPlan], Optional[FusionMethod]]:
    """Total mapping from strategy + fusion flags to (plan, fusion method).

    nkd/rkd use no plan; pkd uses skip alignment and no fusion; ckd-* pairs
    buckets with concatenation; alp-* pairs buckets or the full span with
    dot-product (default) or key-query-value attention.
    """
    s, fusion = config.strategy, config.fusion
    if s in ("nkd", "rkd"):
        if fusion not in ("auto",):
            raise ConfigError(f"strategy {s} uses no fusion, got "
                              f"fusion={fusion!r}")
        return None, None
    if s == "pkd":
        if fusion != "auto":
            raise ConfigError(f"pkd matches single layers and takes no "
                              f"fusion, got fusion={fusion!r}")
        picks = (config.pkd_picks if config.pkd_picks is not None
                 else tuple(default_pkd_picks(n, m, config.include_last_layer)))
        return make_pkd_plan(n, m, picks), None

    if s in ("ckd-no", "ckd-po"):
        if fusion not in ("auto", "concat"):
            raise ConfigError(f"strategy {s} fuses by concatenation, got "
                              f"fusion={fusion!r}")
        plan = make_bucket_plan(n, m, s.split("-")[1].upper(),
                                config.include_last_layer)
        kind, heads = FusionKind.CKD_CONCAT, 1
    elif s in ("alp-no", "alp-po", "alp-full"):
        if fusion == "concat":
            raise ConfigError(f"strategy {s} is attention-based; use a ckd "
                              "strategy for concatenation")
        if s == "alp-full":
            plan = make_full_span_plan(n, m, config.include_last_layer)
        else:
            plan = make_bucket_plan(n, m, s.split("-")[1].upper(),
                                    config.include_last_layer)
        if fusion in ("auto", "dot"):
            kind, heads = FusionKind.ALP_DOT, 1
        else:
            kind, heads = FusionKind.ALP_KQV, int(fusion[3:])
    else:  # pragma: no cover - guarded by TrainConfig
        raise ConfigError(f"unknown strategy {s!r}")
    return plan, (kind, heads)


@dataclass
class TeacherCache:
    """Frozen-teacher outputs over a dataset, indexable by example."""
    logits: np.ndarray            # [n_examples, classes]
    cls: list[np.ndarray]         # per teacher layer, [n_examples, hidden]


def teacher_outputs(teacher: Encoder, dataset: Dataset,
                    batch_size: int = 256) -> TeacherCache:
    logits = []
    cls: list[list[np.ndarray]] = [[] for _ in range(teacher.config.num_layers)]
    with T.no_grad():
        for start in range(0, len(dataset), batch_size):
            ids = dataset.token_ids[start:start + batch_size]
            mask = dataset.mask[start:start + batch_size]
            out = teacher.forward(ids, mask=mask, train_mode=False)
            logits.append(out.logits.data)
            for i, c in enumerate(out.cls_states):
                cls[i].append(c.data)
    return TeacherCache(logits=np.concatenate(logits),
                        cls=[np.concatenate(layer) for layer in cls])


def evaluate(encoder: Encoder, dataset: Dataset, batch_size: int = 256) -> float:
    correct = 0
    for start in range(0, len(dataset), batch_size):
        ids = dataset.token_ids[start:start + batch_size]
        mask = dataset.mask[start:start + batch_size]
        preds = encoder.predict(ids, mask=mask)
        correct += int((preds == dataset.labels[start:start + batch_size]).sum())
    return correct / len(dataset)


def _mean_breakdowns(rows: list[LossBreakdown]) -> dict:
    keys = ("l_ce", "l_kd", "l_hidden", "total")
    out = {k: float(np.mean([getattr(r, k) for r in rows])) for k in keys}
    layers = sorted({j for r in rows for j in r.per_layer})
    out["per_layer"] = {str(j): float(np.mean([r.per_layer[j] for r in rows
                                               if j in r.per_layer]))
                        for j in layers}
    return out


def _check_finite(value: float, context: str) -> None:
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss ({value}) at {context}; "
                              "run aborted")


def train_teacher(task: Task, encoder_config: EncoderConfig,
                  config: TrainConfig,
                  out_dir: Optional[Path] = None
                  ) -> tuple[Encoder, RunRecord, list[dict]]:
    """Fit a fresh encoder on the task with plain cross entropy."""
    start_time = time.perf_counter()
    teacher = Encoder(encoder_config, seed=config.seed)
    params = [p for _, p in teacher.parameters()]
    opt = make_optimizer(config.optimizer, params, config.learning_rate)
    drop_rng = np.random.default_rng([config.seed, 17])

    epochs_out: list[dict] = []
    step_rows: list[dict] = []
    best_acc, best_epoch, best_params = -1.0, -1, None
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 1000 + epoch]).permutation(
            len(task.train))
        rows: list[LossBreakdown] = []
        for bstart in range(0, len(order), config.batch_size):
            idx = order[bstart:bstart + config.batch_size]
            opt.zero_grad()
            out = teacher.forward(task.train.token_ids[idx],
                                  mask=task.train.mask[idx],
                                  train_mode=True, rng=drop_rng)
            loss = ce_loss(out.logits, task.train.labels[idx])
            value = loss.item()
            _check_finite(value, f"epoch {epoch} step {step}")
            T.backward(loss)
            opt.step()
            bd = LossBreakdown(l_ce=value, l_kd=0.0, l_hidden=0.0, total=value)
            rows.append(bd)
            if config.log_steps:
                step_rows.append({"step": step, **bd.as_dict()})
            step += 1
        acc = evaluate(teacher, task.val, config.batch_size)
        epochs_out.append({"epoch": epoch, "train_loss": _mean_breakdowns(rows),
                           "val_accuracy": acc})
        if acc > best_acc:
            best_acc, best_epoch = acc, epoch
            best_params = teacher.copy_params()

    if best_params is not None:
        for name, arr in best_params.items():
            teacher.params[name].data = arr
    record = RunRecord(
        config={"train": config.to_dict(), "encoder": asdict(encoder_config),
                "task": asdict(task.spec), "role": "teacher"},
        epochs=epochs_out, best_epoch=best_epoch, best_val_accuracy=best_acc,
        final_val_accuracy=best_acc,
        wall_clock_sec=time.perf_counter() - start_time)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "teacher.ckpt"
        save_checkpoint(teacher, ckpt)
        record.checkpoint_path = str(ckpt)
    return teacher, record, step_rows


def distill(teacher: Encoder, config: TrainConfig, task: Task,
            cache: Optional[TeacherCache] = None,
            out_dir: Optional[Path] = None
            ) -> tuple[Encoder, RunRecord, list[dict]]:
    """Train a student initialized from the teacher's first m layers.

    The teacher stays frozen and in eval mode (a dropout-on variant exists
    behind ``teacher_dropout`` and disables output caching).
    """
    start_time = time.perf_counter()
    n, m = teacher.config.num_layers, config.student_layers
    student = init_student_from_teacher(teacher, m)
    plan, fusion_info = resolve_strategy(config, n, m)
    method: Optional[FusionMethod] = None
    if fusion_info is not None and config.lam > 0:
        kind, heads = fusion_info
        method = make_fusion_method(kind, plan, teacher.config.hidden_dim,
                                    num_heads=heads, seed=config.seed)
    weights = LossWeights(eta=config.eta, lam=config.lam,
                          temperature=config.temperature)

    needs_teacher = config.eta > 0 or config.lam > 0
    use_cache = needs_teacher and not config.teacher_dropout
    if use_cache and cache is None:
        cache = teacher_outputs(teacher, task.train, config.batch_size)
    teacher_drop_rng = np.random.default_rng([config.seed, 23])

    params = [p for _, p in student.parameters()]
    if method is not None:
        params += [p for _, p in method.parameters()]
    opt = make_optimizer(config.optimizer, params, config.learning_rate)
    drop_rng = np.random.default_rng([config.seed, 17])

    hidden_kind = None
    if plan is not None and config.lam > 0:
        hidden_kind = "pkd" if config.strategy == "pkd" else "alp"

    epochs_out: list[dict] = []
    step_rows: list[dict] = []
    best_acc, best_epoch, best_params = -1.0, -1, None
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 1000 + epoch]).permutation(
            len(task.train))
        rows: list[LossBreakdown] = []
        alpha_log: dict[int, np.ndarray] = {}
        for bstart in range(0, len(order), config.batch_size):
            idx = order[bstart:bstart + config.batch_size]
            ids = task.train.token_ids[idx]
            mask = task.train.mask[idx]
            labels = task.train.labels[idx]
            opt.zero_grad()
            out = student.forward(ids, mask=mask, train_mode=True,
                                  rng=drop_rng)
            l_ce = ce_loss(out.logits, labels)

            t_logits = t_cls = None
            if needs_teacher:
                if use_cache:
                    t_logits = cache.logits[idx]
                    t_cls = [layer[idx] for layer in cache.cls]
                else:
                    with T.no_grad():
                        tout = teacher.forward(
                            ids, mask=mask,
                            train_mode=config.teacher_dropout,
                            rng=teacher_drop_rng)
                    t_logits = tout.logits.data
                    t_cls = [c.data for c in tout.cls_states]

            l_kd = None
            if config.eta > 0:
                l_kd = kd_loss(out.logits, t_logits, config.temperature,
                               rescale_t2=config.rescale_t2)
            l_hidden, per_layer = None, None
            if hidden_kind == "pkd":
                l_hidden, per_layer = pkd_loss(out.cls_states, plan, t_cls)
            elif hidden_kind == "alp":
                l_hidden, per_layer, alphas = alp_loss(out.cls_states, plan,
                                                       t_cls, method)
                if bstart == 0:
                    alpha_log = {j: a.mean(axis=0) for j, a in alphas.items()}

            total, bd = total_loss(l_ce, weights, l_kd=l_kd,
                                   l_hidden=l_hidden, per_layer=per_layer)
            _check_finite(bd.total, f"epoch {epoch} step {step}")
            T.backward(total)
            opt.step()
            rows.append(bd)
            if config.log_steps:
                step_rows.append({"step": step, **bd.as_dict()})
            step += 1

        acc = evaluate(student, task.val, config.batch_size)
        entry = {"epoch": epoch, "train_loss": _mean_breakdowns(rows),
                 "val_accuracy": acc}
        if alpha_log:
            entry["alpha"] = {str(j): [float(v) for v in a]
                              for j, a in alpha_log.items()}
        epochs_out.append(entry)
        if acc > best_acc:
            best_acc, best_epoch = acc, epoch
            best_params = student.copy_params()

    if best_params is not None:
        for name, arr in best_params.items():
            student.params[name].data = arr
    record = RunRecord(
        config={"train": config.to_dict(),
                "encoder": asdict(student.config),
                "teacher_layers": n,
                "task": asdict(task.spec),
                "alignment": plan.to_string() if plan else None,
                "role": "student"},
        epochs=epochs_out, best_epoch=best_epoch, best_val_accuracy=best_acc,
        final_val_accuracy=best_acc,
        wall_clock_sec=time.perf_counter() - start_time)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "student.ckpt"
        save_checkpoint(student, ckpt)
        record.checkpoint_path = str(ckpt)
        if method is not None and method.params:
            save_fusion(method, out_dir / "fusion.ckpt")
            record.config["fusion_checkpoint"] = str(out_dir / "fusion.ckpt")
    return student, record, step_rows


def save_run(out_dir: Path, record: RunRecord,
             step_rows: Optional[list[dict]] = None) -> None:
    """Persist run.json (full record), metrics.json (deterministic view),
    and optional per-step loss rows."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(dumps(record.to_dict()) + "\n")
    (out_dir / "metrics.json").write_text(dumps(record.metrics_dict()) + "\n")
    if step_rows:
        with open(out_dir / "steps.jsonl", "w") as fh:
            for row in step_rows:
                fh.write(dumps(row) + "\n")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# grid search


@dataclass(frozen=True)
class GridSpec:
    learning_rates: tuple[float, ...] = (1e-5, 2e-5, 5e-5)
    temperatures: tuple[float, ...] = (1.0, 5.0, 10.0, 20.0)
    etas: tuple[float, ...] = (0.2, 0.5, 0.7)
    lambdas: tuple[float, ...] = (0.2, 0.5, 0.7)
    # pick layouts to try for pkd (None entries exclude a student layer)
    pkd_pick_sets: Optional[tuple[tuple[Optional[int], ...], ...]] = None


def enumerate_cells(strategy: str, base: TrainConfig, grid: GridSpec,
                    n: int) -> tuple[list[TrainConfig], list[dict]]:
    """All grid cells for one strategy, plus skipped (invalid) cells."""
    cells: list[TrainConfig] = []
    skipped: list[dict] = []

    def add(**kw) -> None:
        try:
            cells.append(replace(base, strategy=strategy, **kw))
        except ConfigError as exc:
            skipped.append({"strategy": strategy, **kw,
                            "reason": str(exc)})

    if strategy == "nkd":
        for lr in grid.learning_rates:
            add(learning_rate=lr, eta=0.0, lam=0.0, temperature=1.0)
    elif strategy == "rkd":
        for lr in grid.learning_rates:
            for temp in grid.temperatures:
                for eta in grid.etas:
                    add(learning_rate=lr, temperature=temp, eta=eta, lam=0.0)
    else:
        pick_sets: tuple = (None,)
        if strategy == "pkd":
            pick_sets = (grid.pkd_pick_sets if grid.pkd_pick_sets
                         else (base.pkd_picks,))
        for picks in pick_sets:
            for lr in grid.learning_rates:
                for temp in grid.temperatures:
                    for eta in grid.etas:
                        for lam in grid.lambdas:
                            add(learning_rate=lr, temperature=temp, eta=eta,
                                lam=lam, pkd_picks=picks)
    if not cells:
        raise ConfigError(f"strategy {strategy}: every grid cell is invalid")
    return cells, skipped


_WORKER_CACHE: dict = {}


def _worker_run(args: tuple) -> dict:
    """Train one grid cell; executed inside a pool worker process."""
    teacher_path, task_spec, config = args
    key = ("task", task_spec)
    if key not in _WORKER_CACHE:
        _WORKER_CACHE[key] = build_task(task_spec)
    task = _WORKER_CACHE[key]
    tkey = ("teacher", teacher_path)
    if tkey not in _WORKER_CACHE:
        _WORKER_CACHE[tkey] = load_checkpoint(teacher_path)
    teacher = _WORKER_CACHE[tkey]
    ckey = ("cache", teacher_path, task_spec, config.batch_size)
    if ckey not in _WORKER_CACHE:
        _WORKER_CACHE[ckey] = teacher_outputs(teacher, task.train,
                                              config.batch_size)
    try:
        _, record, _ = distill(teacher, config, task,
                               cache=_WORKER_CACHE[ckey])
        return {"config": config.to_dict(), "record": record.to_dict()}
    except DivergenceError as exc:
        return {"config": config.to_dict(), "diverged": str(exc)}


GRID_CSV_COLUMNS = ("strategy", "fusion", "student_layers", "learning_rate",
                    "temperature", "eta", "lambda", "beta", "pkd_picks",
                    "batch_size", "epochs", "optimizer", "seed",
                    "best_epoch", "best_val_accuracy", "final_val_accuracy",
                    "diverged")


def _row_for(config_d: dict, record_d: Optional[dict],
             diverged: Optional[str]) -> dict:
    picks = config_d.get("pkd_picks")
    row = {
        "strategy": config_d["strategy"],
        "fusion": config_d["fusion"],
        "student_layers": config_d["student_layers"],
        "learning_rate": config_d["learning_rate"],
        "temperature": config_d["temperature"],
        "eta": config_d["eta"],
        "lambda": config_d["lam"],
        "beta": config_d["beta"],
        "pkd_picks": "" if picks is None else "|".join(
            "-" if p is None else str(p) for p in picks),
        "batch_size": config_d["batch_size"],
        "epochs": config_d["epochs"],
        "optimizer": config_d["optimizer"],
        "seed": config_d["seed"],
    }
    if record_d is not None:
        row.update(best_epoch=record_d["best_epoch"],
                   best_val_accuracy=record_d["best_val_accuracy"],
                   final_val_accuracy=record_d["final_val_accuracy"],
                   diverged="")
    else:
        row.update(best_epoch="", best_val_accuracy="",
                   final_val_accuracy="", diverged=diverged or "")
    return row


@dataclass
class GridResult:
    rows: list[dict]
    skipped: list[dict]
    best: dict[str, dict]                 # strategy -> winning cell record
    best_config: dict[str, TrainConfig]
    seed_stats: dict[str, dict] = field(default_factory=dict)


def grid_search(task: Task, teacher: Encoder, base_config: TrainConfig,
                strategies: list[str], grid: GridSpec = GridSpec(),
                workers: int = 1, out_dir: Optional[Path] = None,
                final_seeds: int = 0, teacher_path: Optional[Path] = None,
                progress: bool = False) -> GridResult:
    """Train every valid grid cell per strategy and pick the best validation
    accuracy. With ``final_seeds`` > 0, each winner is re-run over that many
    consecutive seeds and the mean is reported."""
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r} "
                              f"(valid: {', '.join(STRATEGIES)})")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    if teacher_path is None:
        if out_dir is None:
            raise ConfigError("grid_search needs out_dir or teacher_path to "
                              "hand the teacher to workers")
        teacher_path = out_dir / "teacher.ckpt"
        save_checkpoint(teacher, teacher_path)

    n = teacher.config.num_layers
    all_cells: list[tuple[str, TrainConfig]] = []
    skipped: list[dict] = []
    for s in strategies:
        cells, skip = enumerate_cells(s, base_config, grid, n)
        all_cells.extend((s, c) for c in cells)
        skipped.extend(skip)

    jobs = [(str(teacher_path), task.spec, c) for _, c in all_cells]
    seed_jobs: list[tuple[str, int, tuple]] = []  # filled after selection
    results = _run_jobs(jobs, workers)

    rows: list[dict] = []
    best: dict[str, dict] = {}
    best_config: dict[str, TrainConfig] = {}
    for (strategy, config), res in zip(all_cells, results):
        record_d = res.get("record")
        rows.append(_row_for(res["config"], record_d, res.get("diverged")))
        if progress:
            acc = record_d["best_val_accuracy"] if record_d else "diverged"
            print(f"[grid] {strategy} lr={config.learning_rate} "
                  f"T={config.temperature} eta={config.eta} "
                  f"lam={config.lam} picks={config.pkd_picks} -> {acc}",
                  flush=True)
        if record_d is None:
            continue
        cur = best.get(strategy)
        if cur is None or record_d["best_val_accuracy"] > cur["best_val_accuracy"]:
            best[strategy] = record_d
            best_config[strategy] = config
    if not best:
        raise DivergenceError("every grid cell diverged")

    result = GridResult(rows=rows, skipped=skipped, best=best,
                        best_config=best_config)

    if final_seeds > 0:
        for s in strategies:
            if s not in best_config:
                continue
            for i in range(final_seeds):
                cfg = replace(best_config[s], seed=base_config.seed + i)
                seed_jobs.append((s, base_config.seed + i,
                                  (str(teacher_path), task.spec, cfg)))
        seed_results = _run_jobs([j for _, _, j in seed_jobs], workers)
        for (s, seed, _), res in zip(seed_jobs, seed_results):
            stats = result.seed_stats.setdefault(
                s, {"seeds": [], "accuracies": []})
            stats["seeds"].append(seed)
            acc = (res["record"]["best_val_accuracy"]
                   if "record" in res else float("nan"))
            stats["accuracies"].append(acc)
            if progress:
                print(f"[seeds] {s} seed={seed} -> {acc}", flush=True)
        for s, stats in result.seed_stats.items():
            stats["mean"] = float(np.mean(stats["accuracies"]))

    if out_dir is not None:
        write_grid_csv(out_dir / "grid.csv", rows)
        summary = {
            "best": {s: {"accuracy": r["best_val_accuracy"],
                         "config": best_config[s].to_dict()}
                     for s, r in best.items()},
            "seed_stats": result.seed_stats,
            "skipped": skipped,
        }
        (out_dir / "grid_summary.json").write_text(dumps(summary) + "\n")
    return result


def _run_jobs(jobs: list[tuple], workers: int) -> list[dict]:
    if workers <= 1 or len(jobs) <= 1:
        return [_worker_run(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_worker_run, jobs, chunksize=1))


def write_grid_csv(path: Path, rows: list[dict]) -> None:
    lines = [",".join(GRID_CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in GRID_CSV_COLUMNS))
    path.write_text("\n".join(lines) + "\n")
