"""Seeded multimodal classification tasks with controlled subspace geometry.

Image tokens are ``frame @ (c + jitter) + noise`` for a latent ``c``; the
label is the argmax of a linear rule applied to the noiseless token mean, so
at ``noise=0`` the Bayes accuracy is exactly 1. Text tokens are drawn from a
task-specific vocabulary slice.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_seed, rng_for
from .toy_mllm import Instance


class Geometry(str, enum.Enum):
    DISJOINT = "Disjoint"
    NESTED = "Nested-in-Pretrained"
    MIXED = "Mixed"


@dataclass(frozen=True)
class SuiteConfig:
    n_tasks: int = 4
    geometry: Geometry = Geometry.NESTED
    k_img: int = 4
    n_classes: int = 4
    tokens_per_task: int = 4
    n_pretrain_parts: int = 3
    n_train: int = 512
    n_eval: int = 256
    n_pretrain: int = 256
    noise: float = 0.05
    token_jitter: float = 0.3
    margin: float = 0.5
    # Nested/Mixed: the pre-training mixture also uses the tasks' vocabulary
    pretrain_sees_task_tokens: bool = True
    rho: tuple = ()  # per-task overlap for the Mixed geometry
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "geometry", Geometry(self.geometry))
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        if self.n_tasks < 1:
            raise ValueError("n_tasks must be >= 1")


@dataclass(frozen=True, eq=False)
class TaskRecipe:
    task_id: int
    frame: np.ndarray  # (d_i, k_img), orthonormal columns
    tokens: np.ndarray  # vocabulary slice
    label_rule: np.ndarray  # (n_classes, k_img)
    classes: np.ndarray  # global label ids, aligned with label_rule rows
    n_train: int
    n_eval: int
    n_i: int
    n_t: int
    noise: float
    token_jitter: float = 0.3
    margin: float = 0.5
    rho: float | None = None
    seed: int = 0

    def __post_init__(self):
        f = np.asarray(self.frame, dtype=np.float64)
        if f.shape[1] > f.shape[0]:
            raise ValueError(f"k_img={f.shape[1]} exceeds feature dimension d_i={f.shape[0]}")
        if np.abs(f.T @ f - np.eye(f.shape[1])).max() > 1e-10:
            raise ValueError("task frame columns must be orthonormal")

    @property
    def k_img(self):
        return self.frame.shape[1]

    def digest(self):
        h = hashlib.sha256()
        meta = {k: getattr(self, k) for k in ("task_id", "n_train", "n_eval", "n_i", "n_t",
                                               "noise", "token_jitter", "margin", "rho", "seed")}
        h.update(json.dumps(meta, sort_keys=True).encode())
        for arr in (self.frame, self.tokens, self.label_rule, self.classes):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass(eq=False)
class TaskDataset:
    train: list
    eval: list
    recipe: TaskRecipe
    parts: list = field(default_factory=list)  # sub-recipes of a pre-training mixture

    @property
    def task_id(self):
        return self.recipe.task_id

    @property
    def classes(self):
        return self.recipe.classes

    def digest(self):
        if self.parts:
            return hashlib.sha256("".join(p.digest() for p in self.parts).encode()).hexdigest()[:16]
        return self.recipe.digest()


def _quotas(n, n_classes):
    base, extra = divmod(n, n_classes)
    return [base + (1 if c < extra else 0) for c in range(n_classes)]


_BATCH = 1024
_MAX_DRAWS = 2_000_000


def _draw(recipe, rng, quota, d_i):
    """Rejection-sample instances until every class meets its quota.

    Candidates are drawn in fixed-size batches and accepted in order, so the
    output is a pure function of the generator state.
    """
    need = list(quota)
    out = []
    k, n_i, n_t = recipe.k_img, recipe.n_i, recipe.n_t
    drawn = 0
    while sum(need):
        if drawn >= _MAX_DRAWS:
            raise ValueError(f"task {recipe.task_id}: could not fill class quotas {need} "
                             f"after {drawn} draws; lower the margin")
        c = rng.standard_normal((_BATCH, 1, k))
        coeff = c + recipe.token_jitter * rng.standard_normal((_BATCH, n_i, k))
        noise = recipe.noise * rng.standard_normal((_BATCH, n_i, d_i))
        tokens = rng.choice(recipe.tokens, size=(_BATCH, n_t))
        scores = coeff.mean(axis=1) @ recipe.label_rule.T
        top2 = np.sort(scores, axis=1)[:, -2:]
        cls = np.argmax(scores, axis=1)
        keep = top2[:, 1] - top2[:, 0] >= recipe.margin
        drawn += _BATCH
        for b in np.flatnonzero(keep):
            if need[cls[b]] == 0:
                continue
            need[cls[b]] -= 1
            image = coeff[b] @ recipe.frame.T + noise[b]
            out.append(Instance(image, tokens[b], int(recipe.classes[cls[b]]), recipe.task_id))
            if not sum(need):
                break
    return out


def generate_task(recipe):
    rng = rng_for(recipe.seed, "task-data", recipe.task_id)
    d_i = recipe.frame.shape[0]
    n_cls = len(recipe.classes)
    train = _draw(recipe, rng, _quotas(recipe.n_train, n_cls), d_i)
    eval_ = _draw(recipe, rng, _quotas(recipe.n_eval, n_cls), d_i)
    return TaskDataset(train, eval_, recipe)


def _orthonormal(rng, d, k):
    q, r = np.linalg.qr(rng.standard_normal((d, k)))
    return q * np.sign(np.diag(r))


def _label_rule(rng, c, k):
    """Centred class directions of norm ``sqrt(k)`` so no class is starved."""
    w = rng.standard_normal((c, k))
    w -= w.mean(axis=0)
    return w * (np.sqrt(k) / np.linalg.norm(w, axis=1, keepdims=True))


def frame_overlap(frame, pretrained):
    """Per-column cosine between a task direction and the pre-trained subspace."""
    return np.linalg.norm(pretrained.T @ frame, axis=0)


def generate_suite(cfg, model_cfg):
    """Return ``(tasks, pretrain)`` for the requested geometry."""
    rng = rng_for(cfg.seed, "suite", cfg.geometry.value)
    d_i = model_cfg.d_i
    k, c, tpt = cfg.k_img, cfg.n_classes, cfg.tokens_per_task
    n_parts = cfg.n_pretrain_parts
    k_pre = n_parts * k
    if (n_parts + cfg.n_tasks) * c > model_cfg.n_labels:
        raise ValueError(f"{(n_parts + cfg.n_tasks) * c} labels needed, model has {model_cfg.n_labels}")
    if (n_parts + cfg.n_tasks) * tpt > model_cfg.n_tokens:
        raise ValueError(f"{(n_parts + cfg.n_tasks) * tpt} tokens needed, model has {model_cfg.n_tokens}")

    geometry = cfg.geometry
    fresh_dims = {Geometry.DISJOINT: cfg.n_tasks * k, Geometry.NESTED: 0,
                  Geometry.MIXED: cfg.n_tasks * k}[geometry]
    if k_pre + fresh_dims > d_i:
        raise ValueError(
            f"{geometry.value} geometry needs {k_pre + fresh_dims} orthogonal image directions, d_i={d_i}")
    if geometry is Geometry.MIXED and len(cfg.rho) != cfg.n_tasks:
        raise ValueError(f"Mixed geometry needs {cfg.n_tasks} rho values, got {len(cfg.rho)}")

    basis = _orthonormal(rng, d_i, k_pre + fresh_dims)
    pre_frame = basis[:, :k_pre]
    fresh = basis[:, k_pre:]

    def recipe(task_id, frame, tokens, classes, n_train, n_eval, rho):
        return TaskRecipe(
            task_id=task_id, frame=frame, tokens=np.asarray(tokens), label_rule=_label_rule(rng, c, k),
            classes=np.asarray(classes), n_train=n_train, n_eval=n_eval, n_i=model_cfg.n_i,
            n_t=model_cfg.n_t, noise=cfg.noise, token_jitter=cfg.token_jitter, margin=cfg.margin,
            rho=rho, seed=derive_seed(cfg.seed, "recipe", task_id),
        )

    pre_tokens = np.arange(n_parts * tpt)
    task_tokens = np.arange(n_parts * tpt, (n_parts + cfg.n_tasks) * tpt)
    share = geometry is not Geometry.DISJOINT and cfg.pretrain_sees_task_tokens
    part_tokens = [np.concatenate([pre_tokens[p * tpt:(p + 1) * tpt], task_tokens]) if share
                   else pre_tokens[p * tpt:(p + 1) * tpt] for p in range(n_parts)]
    parts = [
        recipe(-(p + 1), pre_frame[:, p * k:(p + 1) * k], part_tokens[p],
               np.arange(p * c, (p + 1) * c), cfg.n_pretrain, cfg.n_pretrain // 4, 1.0)
        for p in range(n_parts)
    ]
    part_data = [generate_task(r) for r in parts]
    pre_recipe = TaskRecipe(
        task_id=0, frame=pre_frame, tokens=np.unique(np.concatenate(part_tokens)), label_rule=np.zeros((n_parts * c, k_pre)),
        classes=np.arange(n_parts * c), n_train=n_parts * cfg.n_pretrain,
        n_eval=sum(len(p.eval) for p in part_data), n_i=model_cfg.n_i, n_t=model_cfg.n_t,
        noise=cfg.noise, rho=1.0, seed=derive_seed(cfg.seed, "recipe", 0),
    )
    pretrain = TaskDataset(
        [i for p in part_data for i in p.train], [i for p in part_data for i in p.eval], pre_recipe, parts)

    tasks = []
    next_token = n_parts * tpt
    for t in range(1, cfg.n_tasks + 1):
        own = fresh[:, (t - 1) * k:t * k] if fresh_dims else None
        if geometry is Geometry.DISJOINT:
            frame, rho = own, 0.0
        elif geometry is Geometry.NESTED:
            frame, rho = pre_frame @ _orthonormal(rng, k_pre, k), 1.0
        else:
            rho = cfg.rho[t - 1]
            frame = rho * (pre_frame @ _orthonormal(rng, k_pre, k)) + np.sqrt(1.0 - rho * rho) * own
        tokens = np.arange(next_token, next_token + tpt)
        next_token += tpt
        classes = np.arange((n_parts + t - 1) * c, (n_parts + t) * c)
        tasks.append(generate_task(recipe(t, frame, tokens, classes, cfg.n_train, cfg.n_eval, rho)))
    return tasks, pretrain


SUITE_HEADER = "#fwdprompt-suite v1"


def write_suite(path, datasets):
    """One instance per line: task, split, label, comma-separated features, comma-separated tokens."""
    with open(path, "w") as fh:
        fh.write(SUITE_HEADER + "\n")
        for ds in datasets:
            for split, items in (("train", ds.train), ("eval", ds.eval)):
                for inst in items:
                    n_i, d_i = inst.image.shape
                    feats = ",".join(repr(float(x)) for x in inst.image.ravel())
                    toks = ",".join(str(int(t)) for t in inst.text)
                    fh.write(f"{inst.task}\t{split}\t{inst.label}\t{n_i}x{d_i}\t{feats}\t{toks}\n")


def read_suite(path):
    """Parse :func:`write_suite` output into ``{task: {"train": [...], "eval": [...]}}``."""
    out = {}
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != SUITE_HEADER:
            raise ValueError(f"{path}: unrecognized header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            try:
                task, split, label, shape, feats, toks = line.rstrip("\n").split("\t")
                n_i, d_i = (int(x) for x in shape.split("x"))
                image = np.array([float(x) for x in feats.split(",")]).reshape(n_i, d_i)
                text = np.array([int(x) for x in toks.split(",")])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed instance line ({exc})") from None
            inst = Instance(image, text, int(label), int(task))
            out.setdefault(inst.task, {"train": [], "eval": []})[split].append(inst)
    return out
