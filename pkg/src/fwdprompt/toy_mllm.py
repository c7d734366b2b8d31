"""A frozen single-layer attention model standing in for the multimodal LLM.

Input rows are ``[prompts; image tokens; text tokens]``. Image tokens go
through a frozen encoder and a (optionally trainable) ``d x d`` adapter; text
tokens are looked up in a frozen table and projected. One self-attention
layer, mean pooling and a frozen linear head produce label logits.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .seeding import rng_for
from .tensor_core import NumericalError


class AttentionMode(str, enum.Enum):
    DIAGONAL = "DiagonalQK"
    FULL = "FullQK"


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    d_h: int = 32
    d_i: int = 32
    d_t: int = 32
    n_i: int = 4
    n_t: int = 8
    n_labels: int = 32
    n_tokens: int = 64
    attention_mode: AttentionMode = AttentionMode.DIAGONAL
    # spread of the diagonal QK weights around 1; 0 keeps W_Q W_K^T = I
    qk_diag_jitter: float = 0.0
    head_scale: float = 4.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "attention_mode", AttentionMode(self.attention_mode))
        for name in ("d", "d_h", "d_i", "d_t", "n_i", "n_t", "n_labels", "n_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.attention_mode is AttentionMode.DIAGONAL and self.d_h != self.d:
            raise ValueError("DiagonalQK attention requires d_h == d")


@dataclass(frozen=True)
class Instance:
    image: np.ndarray  # (n_i, d_i) vision-encoder features
    text: np.ndarray  # (n_t,) token ids
    label: int
    task: int = 0


@dataclass
class FrozenWeights:
    image_encoder: np.ndarray  # (d_i, d)
    text_table: np.ndarray  # (n_tokens, d_t)
    text_proj: np.ndarray  # (d_t, d)
    w_q: np.ndarray  # (d, d_h)
    w_k: np.ndarray  # (d, d_h)
    w_q_diag: np.ndarray  # (d,)
    w_k_diag: np.ndarray  # (d,)
    w_v: np.ndarray  # (d, d_h)
    head: np.ndarray  # (d_h, n_labels)

    @classmethod
    def init(cls, cfg):
        rng = rng_for(cfg.seed, "frozen-weights")
        d, d_h = cfg.d, cfg.d_h
        return cls(
            image_encoder=rng.normal(0.0, 1.0 / np.sqrt(cfg.d_i), (cfg.d_i, d)),
            text_table=rng.normal(0.0, 1.0, (cfg.n_tokens, cfg.d_t)),
            text_proj=rng.normal(0.0, 1.0 / np.sqrt(cfg.d_t), (cfg.d_t, d)),
            w_q=rng.normal(0.0, 1.0 / np.sqrt(d), (d, d_h)),
            w_k=rng.normal(0.0, 1.0 / np.sqrt(d), (d, d_h)),
            w_q_diag=1.0 + cfg.qk_diag_jitter * rng.standard_normal(d),
            w_k_diag=1.0 + cfg.qk_diag_jitter * rng.standard_normal(d),
            w_v=rng.normal(0.0, 1.0 / np.sqrt(d), (d, d_h)),
            head=rng.normal(0.0, cfg.head_scale / np.sqrt(d_h), (d_h, cfg.n_labels)),
        )

    def arrays(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def digest(self):
        h = hashlib.sha256()
        for name, arr in sorted(self.arrays().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


@dataclass
class ForwardCache:
    z: np.ndarray
    att: np.ndarray
    values: np.ndarray
    probs: np.ndarray
    classes: np.ndarray
    target: int
    n_prompts: int
    encoded_image: np.ndarray
    version: int
    extras: dict = field(default_factory=dict)


class ToyMLLM:
    def __init__(self, cfg, weights=None, adapter=None):
        self.cfg = cfg
        self.weights = weights if weights is not None else FrozenWeights.init(cfg)
        self.adapter = np.eye(cfg.d) if adapter is None else np.array(adapter, dtype=np.float64)
        self._version = 0

    def copy(self):
        # frozen weights are shared on purpose; only the adapter is private state
        return ToyMLLM(self.cfg, self.weights, self.adapter.copy())

    @property
    def version(self):
        return self._version

    def qk_matrix(self):
        w = self.weights
        if self.cfg.attention_mode is AttentionMode.DIAGONAL:
            return np.diag(w.w_q_diag * w.w_k_diag)
        return w.w_q @ w.w_k.T

    def encode_queries(self, inst):
        q_img = inst.image.mean(axis=0)
        q_text = self.weights.text_table[inst.text].mean(axis=0)
        return q_img, q_text

    def input_embeddings(self, inst):
        """``[adapter(encoder(image)); project(table[text])]``, shape ``(n_i + n_t, d)``."""
        w = self.weights
        img = inst.image @ w.image_encoder @ self.adapter
        txt = w.text_table[inst.text] @ w.text_proj
        return np.vstack([img, txt])

    def _assemble(self, inst, prompts):
        enc = inst.image @ self.weights.image_encoder
        txt = self.weights.text_table[inst.text] @ self.weights.text_proj
        p = np.asarray(prompts, dtype=np.float64).reshape(-1, self.cfg.d)
        return np.vstack([p, enc @ self.adapter, txt]), enc, p.shape[0]

    def attention(self, z):
        # overflow surfaces as non-finite values, which forward() reports
        with np.errstate(over="ignore", invalid="ignore"):
            s = z @ self.qk_matrix() @ z.T / np.sqrt(self.cfg.d_h)
            s -= s.max(axis=1, keepdims=True)
            e = np.exp(s)
            return e / e.sum(axis=1, keepdims=True)

    def forward(self, inst, prompts=(), classes=None):
        """Logits over ``classes`` (default: every label), loss and a backward cache."""
        z, enc, n_p = self._assemble(inst, prompts)
        att = self.attention(z)
        values = z @ self.weights.w_v
        pooled = (att @ values).mean(axis=0)
        classes = np.arange(self.cfg.n_labels) if classes is None else np.asarray(classes)
        logits = pooled @ self.weights.head[:, classes]
        for name, arr in (("attention", att), ("pooled output", pooled), ("logits", logits)):
            if not np.all(np.isfinite(arr)):
                raise NumericalError(f"non-finite values in {name} layer")
        hits = np.flatnonzero(classes == inst.label)
        if hits.size != 1:
            raise ValueError(f"label {inst.label} not among the scored classes")
        target = int(hits[0])
        shifted = logits - logits.max()
        probs = np.exp(shifted)
        probs /= probs.sum()
        loss = float(np.log(np.exp(shifted).sum()) - shifted[target])
        cache = ForwardCache(z, att, values, probs, classes, target, n_p, enc, self._version)
        return logits, loss, cache

    def backward(self, cache):
        """Gradient of the loss with respect to every input row of ``z`` and the adapter."""
        if cache.version != self._version:
            raise RuntimeError("stale forward cache: the adapter changed after the forward pass")
        w = self.weights
        z, att = cache.z, cache.att
        n = z.shape[0]
        g_logits = cache.probs.copy()
        g_logits[cache.target] -= 1.0
        g_pooled = w.head[:, cache.classes] @ g_logits
        # every output row feeds the mean pool with weight 1/n
        row_signal = cache.values @ g_pooled / n
        g_att = np.broadcast_to(row_signal, (n, n))
        g_values = np.outer(att.sum(axis=0) / n, g_pooled)
        g_s = att * (g_att - (att * g_att).sum(axis=1, keepdims=True))
        m = self.qk_matrix()
        g_z = (g_s @ z @ m.T + g_s.T @ z @ m) / np.sqrt(self.cfg.d_h) + g_values @ w.w_v.T
        n_p = cache.n_prompts
        g_adapter = cache.encoded_image.T @ g_z[n_p:n_p + self.cfg.n_i]
        return g_z, g_adapter

    def prompt_gradient(self, cache):
        """One gradient row per prompt slot, in selection order."""
        g_z, _ = self.backward(cache)
        return g_z[:cache.n_prompts].copy()

    def adapter_gradient(self, cache):
        return self.backward(cache)[1]

    def step_adapter(self, grad, lr):
        self.adapter = self.adapter - lr * grad
        self._version += 1

    def predict_batch(self, instances, prompts_batch=None, classes=None):
        """Vectorized argmax over ``classes`` for many instances at once."""
        w = self.weights
        images = np.stack([i.image for i in instances])
        tokens = np.stack([i.text for i in instances])
        img = images @ w.image_encoder @ self.adapter
        txt = w.text_table[tokens] @ w.text_proj
        parts = [img, txt]
        if prompts_batch is not None and len(prompts_batch) and np.asarray(prompts_batch).shape[1]:
            parts.insert(0, np.asarray(prompts_batch, dtype=np.float64))
        z = np.concatenate(parts, axis=1)
        s = np.einsum("bid,de,bje->bij", z, self.qk_matrix(), z) / np.sqrt(self.cfg.d_h)
        s -= s.max(axis=2, keepdims=True)
        att = np.exp(s)
        att /= att.sum(axis=2, keepdims=True)
        pooled = np.einsum("bij,bjd->bd", att, z @ w.w_v) / z.shape[1]
        classes = np.arange(self.cfg.n_labels) if classes is None else np.asarray(classes)
        logits = pooled @ w.head[:, classes]
        if not np.all(np.isfinite(logits)):
            raise NumericalError("non-finite values in batched logits")
        return classes[np.argmax(logits, axis=1)]
