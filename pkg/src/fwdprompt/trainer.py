"""Continual training: Fwd-Prompt, its ablations, and the adapter-tuning baselines."""

from __future__ import annotations

import enum
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .metrics import AccuracyMatrix
from .prompt_pool import PromptPool, SeparatedPromptPools
from .seeding import rng_for
from .subspace import (
    BasisKind,
    ConflictLedger,
    SubspaceBasis,
    conflicting_indices,
    core_space,
    overlap_table,
    union_conflicting_space,
)
from .tensor_core import NumericalError
from .toy_mllm import ToyMLLM


class Method(str, enum.Enum):
    FWD_PROMPT = "FwdPrompt"
    NO_PROJECTION = "FwdPromptNoProjection"
    SEPARATED_POOLS = "SeparatedPools"
    SEQIT = "SeqIT"
    ER = "ER"
    DIRECTIT = "DirectIT"
    MULTITASK = "MultiTask"

    @property
    def uses_prompts(self):
        return self in (Method.FWD_PROMPT, Method.NO_PROJECTION, Method.SEPARATED_POOLS)

    @property
    def projects(self):
        return self in (Method.FWD_PROMPT, Method.SEPARATED_POOLS)


PROMPT_METHODS = tuple(m for m in Method if m.uses_prompts)
ADAPTER_METHODS = tuple(m for m in Method if not m.uses_prompts)


@dataclass(frozen=True)
class TrainRunConfig:
    method: Method = Method.FWD_PROMPT
    epochs: int = 3
    step_size: float = 2.0  # prompt values
    adapter_step_size: float = 0.1
    key_lr: float = 0.003
    replay_fraction: float = 0.01
    epsilon: float = 0.99
    theta: float = 0.5
    m: int = 20
    n_p: int = 5
    temperature: float = 1.0
    embedding_cap: int = 4096
    bootstrap_pretrained_from_task1: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not 0.0 <= self.replay_fraction <= 1.0:
            raise ValueError("replay_fraction must lie in [0, 1]")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if not 1 <= self.n_p <= self.m:
            raise ValueError("need 1 <= n_p <= m")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["method"] = self.method.value
        return d


@dataclass
class RunResult:
    method: Method
    accuracy: AccuracyMatrix
    model: ToyMLLM
    pool: PromptPool | None = None
    ledger: ConflictLedger | None = None
    v_pre: SubspaceBasis | None = None
    stats: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    task_models: dict = field(default_factory=dict)  # DirectIT: task -> model


def sample_embeddings(model, instances, cap, rng):
    """Row-stack the input embeddings of ``instances``, keeping at most ``cap`` rows."""
    rows = np.vstack([model.input_embeddings(inst) for inst in instances])
    if rows.shape[0] > cap:
        keep = np.sort(rng.choice(rows.shape[0], size=cap, replace=False))
        rows = rows[keep]
    return rows


def _classes_of(tasks):
    return {t.task_id: np.asarray(t.classes) for t in tasks}


def evaluate(model, dataset, pool=None):
    """Top-1 accuracy on ``dataset.eval`` within the task's own label space."""
    items = dataset.eval
    prompts = None
    if pool is not None:
        q = [model.encode_queries(i) for i in items]
        idx = pool.select_batch(np.array([a for a, _ in q]), np.array([b for _, b in q]))
        prompts = pool.values[idx]
    pred = model.predict_batch(items, prompts, dataset.classes)
    return float(np.mean(pred == np.array([i.label for i in items])))


def _epoch_order(seed, task_id, epoch, n):
    return rng_for(seed, "order", task_id, epoch).permutation(n)


def _abort(exc, task, epoch, step):
    return NumericalError(f"task {task}, epoch {epoch}, step {step}: {exc}")


def _train_adapter(model, stream, classes, cfg, task_id):
    for epoch in range(cfg.epochs):
        for step, k in enumerate(_epoch_order(cfg.seed, task_id, epoch, len(stream))):
            inst = stream[k]
            try:
                _, _, cache = model.forward(inst, (), classes[inst.task])
                grad = model.adapter_gradient(cache)
                if not np.all(np.isfinite(grad)):
                    raise NumericalError("non-finite adapter gradient")
            except NumericalError as exc:
                raise _abort(exc, task_id, epoch, step) from exc
            model.step_adapter(grad, cfg.adapter_step_size)


def compute_pretrained_space(model, pretrain, tasks, cfg):
    """Core space of the pre-training mixture, or of task 1 when bootstrapping."""
    source = tasks[0] if (pretrain is None or cfg.bootstrap_pretrained_from_task1) else pretrain
    emb = sample_embeddings(model, source.train, cfg.embedding_cap, rng_for(cfg.seed, "embed-sample", "pre"))
    v_pre, _, k = core_space(emb, cfg.epsilon, kind=BasisKind.PRETRAINED)
    return v_pre, k, ("task1" if source is not pretrain else "pretrain")


def run_fwd_prompt(tasks, pretrain, cfg, model=None, checkpoint_dir=None, on_step=None):
    """Prompt-pool continual learning with conflicting-space gradient projection.

    ``cfg.method`` picks the variant: full projection, no projection, or
    separated per-modality pools. ``on_step`` (if given) is called with
    ``(task, raw_grads, applied_grads, v_con)`` after every prompt update.
    """
    if not tasks:
        raise ValueError("need at least one task")
    method = cfg.method
    if not method.uses_prompts:
        raise ValueError(f"{method.value} is not a prompt-pool method")
    if model is None:
        raise ValueError("a ToyMLLM instance is required")
    timing = {}
    t0 = time.perf_counter()
    model = model.copy()
    mc = model.cfg
    pool_cls = SeparatedPromptPools if method is Method.SEPARATED_POOLS else PromptPool
    pool = pool_cls.create(cfg.m, cfg.n_p, mc.d_i, mc.d_t, mc.d, cfg.seed, cfg.temperature)

    v_pre, k_pre, pre_source = compute_pretrained_space(model, pretrain, tasks, cfg)
    ledger = ConflictLedger(v_pre.size, cfg.theta)
    timing["pretrained_space"] = time.perf_counter() - t0

    acc = AccuracyMatrix.empty(len(tasks))
    classes = _classes_of(tasks)
    stats = {"k_pre": k_pre, "pretrained_source": pre_source, "k_core": {}, "conflicts": {},
             "union_size": {}, "projected_steps": 0, "max_protection_ratio": 0.0}
    v_con = SubspaceBasis.empty(mc.d)

    for t, task in enumerate(tasks, start=1):
        t_task = time.perf_counter()
        project = method.projects and t > 1 and v_con.size > 0
        for epoch in range(cfg.epochs):
            for step, k in enumerate(_epoch_order(cfg.seed, task.task_id, epoch, len(task.train))):
                inst = task.train[k]
                try:
                    q_img, q_text = model.encode_queries(inst)
                    idx = pool.select(q_img, q_text)
                    _, _, cache = model.forward(inst, pool.prompts(idx), classes[inst.task])
                    grads = model.prompt_gradient(cache)
                    if not np.all(np.isfinite(grads)):
                        raise NumericalError("non-finite prompt gradient")
                except NumericalError as exc:
                    raise _abort(exc, task.task_id, epoch, step) from exc
                applied = grads
                if project:
                    b = v_con.basis
                    applied = grads - (grads @ b) @ b.T
                    norms = np.linalg.norm(grads, axis=1)
                    leak = np.linalg.norm(applied @ b, axis=1)
                    ok = norms > 0
                    if ok.any():
                        ratio = float((leak[ok] / norms[ok]).max())
                        stats["max_protection_ratio"] = max(stats["max_protection_ratio"], ratio)
                    stats["projected_steps"] += 1
                if on_step is not None:
                    on_step(t, grads, applied, v_con)
                pool.update_values(idx, applied, cfg.step_size)
                pool.update_keys(q_img, q_text, idx, cfg.key_lr)
                pool.record(task.task_id, idx)
        timing[f"train_task_{t}"] = time.perf_counter() - t_task

        t_sub = time.perf_counter()
        emb = sample_embeddings(model, task.train, cfg.embedding_cap,
                                rng_for(cfg.seed, "embed-sample", task.task_id))
        v_core, _, k_core = core_space(emb, cfg.epsilon, source_task=t)
        ledger.record(t, conflicting_indices(v_pre, v_core, cfg.theta))
        v_con = union_conflicting_space(ledger, v_pre, t)
        stats["k_core"][t] = k_core
        stats["conflicts"][t] = sorted(ledger.per_task[t])
        stats["union_size"][t] = len(ledger.union(t))
        timing[f"subspace_task_{t}"] = time.perf_counter() - t_sub

        t_eval = time.perf_counter()
        for i, seen in enumerate(tasks[:t], start=1):
            acc.set(t, i, evaluate(model, seen, pool))
        timing[f"eval_task_{t}"] = time.perf_counter() - t_eval

        if checkpoint_dir is not None:
            from .checkpoint import save_checkpoint
            save_checkpoint(checkpoint_dir, t, method, model, pool, ledger, cfg)

    stats["overlaps"] = overlap_table(ledger)
    stats["selection_histograms"] = pool.histograms()
    return RunResult(method, acc, model, pool, ledger, v_pre, stats, timing)


def run_baseline(tasks, cfg, model=None, checkpoint_dir=None):
    """Adapter-tuning baselines: SeqIT, ER, DirectIT, MultiTask."""
    if not tasks:
        raise ValueError("need at least one task")
    method = cfg.method
    if method.uses_prompts:
        raise ValueError(f"{method.value} is a prompt-pool method")
    if model is None:
        raise ValueError("a ToyMLLM instance is required")
    base = model
    model = base.copy()
    classes = _classes_of(tasks)
    acc = AccuracyMatrix.empty(len(tasks))
    timing = {}
    stats = {}
    result = RunResult(method, acc, model, stats=stats, timing=timing)

    if method is Method.MULTITASK:
        t0 = time.perf_counter()
        union = [inst for task in tasks for inst in task.train]
        _train_adapter(model, union, classes, cfg, "multitask")
        timing["train"] = time.perf_counter() - t0
        for i, task in enumerate(tasks, start=1):
            acc.set(len(tasks), i, evaluate(model, task))
        return result

    if method is Method.DIRECTIT:
        for t, task in enumerate(tasks, start=1):
            t0 = time.perf_counter()
            fresh = base.copy()
            _train_adapter(fresh, task.train, classes, cfg, task.task_id)
            acc.set(t, t, evaluate(fresh, task))
            result.task_models[task.task_id] = fresh
            timing[f"train_task_{t}"] = time.perf_counter() - t0
        result.model = fresh
        acc.direct_reference = np.diag(acc.values).copy()
        return result

    buffer = []
    stats["replay_buffer_sizes"] = {}
    for t, task in enumerate(tasks, start=1):
        t0 = time.perf_counter()
        stream = list(task.train) + buffer
        _train_adapter(model, stream, classes, cfg, task.task_id)
        timing[f"train_task_{t}"] = time.perf_counter() - t0
        if method is Method.ER:
            n_keep = math.ceil(cfg.replay_fraction * len(task.train))
            if n_keep:
                pick = rng_for(cfg.seed, "replay", task.task_id).choice(len(task.train), n_keep, replace=False)
                buffer.extend(task.train[j] for j in sorted(pick))
            stats["replay_buffer_sizes"][t] = n_keep
        for i, seen in enumerate(tasks[:t], start=1):
            acc.set(t, i, evaluate(model, seen))
        if checkpoint_dir is not None:
            from .checkpoint import save_checkpoint
            save_checkpoint(checkpoint_dir, t, method, model, None, None, cfg)
    return result


def run_ablation(variant, tasks, pretrain, cfg, model=None):
    variant = Method(variant)
    if variant not in PROMPT_METHODS:
        raise ValueError(f"{variant.value} is not a Fwd-Prompt variant")
    return run_fwd_prompt(tasks, pretrain, _replace_method(cfg, variant), model=model)


def _replace_method(cfg, method):
    d = cfg.to_dict()
    d["method"] = method
    return TrainRunConfig(**d)


def run_method(method, tasks, pretrain, cfg, model, checkpoint_dir=None):
    cfg = _replace_method(cfg, method)
    if cfg.method.uses_prompts:
        return run_fwd_prompt(tasks, pretrain, cfg, model=model, checkpoint_dir=checkpoint_dir)
    return run_baseline(tasks, cfg, model=model, checkpoint_dir=checkpoint_dir)


def with_direct_reference(result, direct):
    """Attach the DirectIT diagonal so forward transfer can be computed."""
    result.accuracy.direct_reference = np.diag(direct.accuracy.values).copy()
    return result


RANK_SCENARIOS = ("Initial", "DirectIT", "MultiTask", "SEQ", "ER", "FwdPrompt")


def run_rank_scenarios(tasks, pretrain, cfg, model):
    """Train every rank-experiment scenario and return ``{scenario: {task_id: model}}``.

    ``Initial`` is the untouched model; DirectIT contributes each task's own
    model, the remaining scenarios their final model.
    """
    finals = {
        "MultiTask": run_method(Method.MULTITASK, tasks, pretrain, cfg, model).model,
        "SEQ": run_method(Method.SEQIT, tasks, pretrain, cfg, model).model,
        "ER": run_method(Method.ER, tasks, pretrain, cfg, model).model,
        "FwdPrompt": run_method(Method.FWD_PROMPT, tasks, pretrain, cfg, model).model,
    }
    direct = run_method(Method.DIRECTIT, tasks, pretrain, cfg, model)
    out = {"Initial": {t.task_id: model for t in tasks},
           "DirectIT": {t.task_id: direct.task_models[t.task_id] for t in tasks}}
    for name, final in finals.items():
        out[name] = {t.task_id: final for t in tasks}
    return {name: out[name] for name in RANK_SCENARIOS}


def rank_embeddings(models_by_scenario, tasks, cfg):
    """Input-embedding samples per scenario and task; the sample rows are shared across scenarios."""
    by_id = {t.task_id: t for t in tasks}
    emb = {}
    for scenario, per_task in models_by_scenario.items():
        emb[scenario] = {
            tid: sample_embeddings(m, by_id[tid].train, cfg.embedding_cap, rng_for(cfg.seed, "rank-sample", tid))
            for tid, m in per_task.items()
        }
    return emb
