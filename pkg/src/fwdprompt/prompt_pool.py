"""Multimodal prompt pool: M (image key, text key, prompt value) triples."""

from __future__ import annotations

import numpy as np

from .seeding import rng_for
from .tensor_core import NumericalError, check_finite


def _unit_rows(n, dim, rng):
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def key_softmax(query, keys, temperature=1.0):
    """Softmax over keys of the cosine similarity between ``query`` and each key."""
    q = check_finite(query, "query").ravel()
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise NumericalError("zero-norm query has no direction")
    kn = np.linalg.norm(keys, axis=1)
    kn = np.where(kn == 0.0, 1.0, kn)
    cos = np.clip(keys @ q / (kn * qn), -1.0, 1.0)
    z = cos / temperature
    e = np.exp(z - z.max())
    return e / e.sum()


def select_top(phi, n_p):
    """Indices of the ``n_p`` largest scores, descending; ties go to the lower index."""
    phi = np.asarray(phi, dtype=np.float64)
    if not 0 <= n_p <= phi.shape[-1]:
        raise ValueError(f"cannot select {n_p} of {phi.shape[-1]} entries")
    # stable sort keeps the lower index first among equal scores
    return np.argsort(-phi, axis=-1, kind="stable")[..., :n_p]


def key_softmax_batch(queries, keys, temperature=1.0):
    """Row-wise :func:`key_softmax` for a stack of queries."""
    q = check_finite(queries, "queries")
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(qn == 0.0):
        raise NumericalError("zero-norm query has no direction")
    kn = np.linalg.norm(keys, axis=1)
    kn = np.where(kn == 0.0, 1.0, kn)
    z = np.clip((q / qn) @ (keys / kn[:, None]).T, -1.0, 1.0) / temperature
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class PromptPool:
    """Fixed-size pool; keys select, values are prepended to the model input."""

    def __init__(self, keys_img, keys_text, values, n_p, temperature=1.0):
        self.keys_img = np.array(keys_img, dtype=np.float64)
        self.keys_text = np.array(keys_text, dtype=np.float64)
        self.values = np.array(values, dtype=np.float64)
        m = self.values.shape[0]
        if not (self.keys_img.shape[0] == self.keys_text.shape[0] == m):
            raise ValueError("keys and values must have one row per pool entry")
        if not 1 <= n_p <= self.n_select_max:
            raise ValueError(f"n_p={n_p} must lie in [1, {self.n_select_max}]")
        self.n_p = int(n_p)
        self.temperature = float(temperature)
        self.selection_counts = {}

    n_select_max = property(lambda self: self.values.shape[0])

    @classmethod
    def create(cls, m, n_p, d_i, d_t, d, seed, temperature=1.0, value_scale=0.02):
        rng = rng_for(seed, "prompt-pool")
        return cls(
            _unit_rows(m, d_i, rng),
            _unit_rows(m, d_t, rng),
            rng.normal(0.0, value_scale, (m, d)),
            n_p,
            temperature,
        )

    @property
    def size(self):
        return self.values.shape[0]

    def similarity(self, q_img, q_text):
        """Joint similarity: image-key softmax plus text-key softmax, per entry."""
        return (key_softmax(q_img, self.keys_img, self.temperature)
                + key_softmax(q_text, self.keys_text, self.temperature))

    def select(self, q_img, q_text):
        return select_top(self.similarity(q_img, q_text), self.n_p)

    def select_batch(self, q_img, q_text):
        phi = (key_softmax_batch(q_img, self.keys_img, self.temperature)
               + key_softmax_batch(q_text, self.keys_text, self.temperature))
        return select_top(phi, self.n_p)

    def prompts(self, idx):
        return self.values[np.asarray(idx, dtype=int)]

    def update_values(self, idx, grads, lr):
        np.subtract.at(self.values, np.asarray(idx, dtype=int), lr * np.asarray(grads))

    def update_keys(self, q_img, q_text, idx, key_lr):
        """Pull each selected key toward its unit-normalized query."""
        if key_lr == 0.0:
            return
        idx = np.asarray(idx, dtype=int)
        self.keys_img[idx] += key_lr * (q_img / np.linalg.norm(q_img) - self.keys_img[idx])
        self.keys_text[idx] += key_lr * (q_text / np.linalg.norm(q_text) - self.keys_text[idx])

    def record(self, task, idx):
        counts = self.selection_counts.setdefault(task, np.zeros(self.size, dtype=np.int64))
        np.add.at(counts, np.asarray(idx, dtype=int), 1)

    def histograms(self):
        return {str(t): c.tolist() for t, c in sorted(self.selection_counts.items())}

    def state(self):
        return {"keys_img": self.keys_img, "keys_text": self.keys_text, "values": self.values}

    def copy(self):
        other = type(self).__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.keys_img = self.keys_img.copy()
        other.keys_text = self.keys_text.copy()
        other.values = self.values.copy()
        other.selection_counts = {t: c.copy() for t, c in self.selection_counts.items()}
        return other


def joint_similarity(q_img, q_text, pool):
    return pool.similarity(q_img, q_text)


def key_update(pool, q_img, q_text, idx, key_lr):
    pool.update_keys(q_img, q_text, idx, key_lr)
    return pool


class SeparatedPromptPools(PromptPool):
    """Two pools sharing the M-entry budget: the first ``ceil(M/2)`` rows answer
    to image queries only, the rest to text queries only. An odd ``n_p`` gives
    the image pool the extra slot.
    """

    @property
    def half(self):
        return (self.size + 1) // 2

    @property
    def n_select_max(self):
        # each sub-pool must be able to supply its share of n_p
        return min(2 * self.half, 2 * (self.size - self.half) + 1)

    @classmethod
    def create(cls, m, n_p, d_i, d_t, d, seed, temperature=1.0, value_scale=0.02):
        if m < 2:
            raise ValueError("separated pools need at least two entries")
        rng = rng_for(seed, "separated-prompt-pools")
        return cls(
            _unit_rows(m, d_i, rng),
            _unit_rows(m, d_t, rng),
            rng.normal(0.0, value_scale, (m, d)),
            n_p,
            temperature,
        )

    def _split(self):
        n_img = (self.n_p + 1) // 2
        return n_img, self.n_p - n_img

    def similarity(self, q_img, q_text):
        m = self.half
        return np.concatenate([
            key_softmax(q_img, self.keys_img[:m], self.temperature),
            key_softmax(q_text, self.keys_text[m:], self.temperature),
        ])

    def select(self, q_img, q_text):
        m = self.half
        n_img, n_txt = self._split()
        phi = self.similarity(q_img, q_text)
        return np.concatenate([select_top(phi[:m], n_img), select_top(phi[m:], n_txt) + m])

    def select_batch(self, q_img, q_text):
        m = self.half
        n_img, n_txt = self._split()
        img = select_top(key_softmax_batch(q_img, self.keys_img[:m], self.temperature), n_img)
        txt = select_top(key_softmax_batch(q_text, self.keys_text[m:], self.temperature), n_txt)
        return np.concatenate([img, txt + m], axis=1)

    def update_keys(self, q_img, q_text, idx, key_lr):
        if key_lr == 0.0:
            return
        idx = np.asarray(idx, dtype=int)
        img = idx[idx < self.half]
        txt = idx[idx >= self.half]
        self.keys_img[img] += key_lr * (q_img / np.linalg.norm(q_img) - self.keys_img[img])
        self.keys_text[txt] += key_lr * (q_text / np.linalg.norm(q_text) - self.keys_text[txt])
