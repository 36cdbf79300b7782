"""Feature-MLP Q-scorer.

A deterministic feature map turns (state, action) into a fixed-size vector:
one-hot emotion, one-hot action, the stage of the last supporter strategy,
a bucketed history length, and a hashed bag of query words.  A small tanh
network maps features to a scalar Q.  On the staged simulator these features
encode the hidden environment state losslessly, which makes the learned Q
exactly comparable to the dynamic-programming oracle.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .. import autodiff as ad
from ..core import DEFAULT_EMOTIONS, DialogueState, Stage, StrategyCatalog
from .base import BackendMismatch, argmax_smallest_id, uniform_init

_STAGE_SLOT = {None: 0, Stage.I: 1, Stage.II: 2, Stage.III: 3, Stage.NONE: 4}


def _fnv1a(text: str) -> int:
    h = 0x811C9DC5
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


@dataclass(frozen=True)
class FeatureConfig:
    emotions: tuple[str, ...] = DEFAULT_EMOTIONS
    history_bucket_edges: tuple[int, ...] = (1, 2, 4, 6, 8, 10, 12, 14, 16, 20, 24, 32)
    hash_dim: int = 32


def feature_dim(fc: FeatureConfig, n_actions: int) -> int:
    """len(emotions) + K + 5 stage slots + (len(edges)+1) buckets + hash_dim."""
    return len(fc.emotions) + n_actions + 5 + len(fc.history_bucket_edges) + 1 + fc.hash_dim


def extract_features(
    state: DialogueState, action: int, catalog: StrategyCatalog, fc: FeatureConfig
) -> np.ndarray:
    """Deterministic feature vector; identical inputs give identical vectors."""
    k = len(catalog)
    out = np.zeros(feature_dim(fc, k), dtype=np.float64)
    offset = 0

    label = state.emotion.label.lower()
    if label in fc.emotions:
        out[offset + fc.emotions.index(label)] = 1.0
    offset += len(fc.emotions)

    catalog.by_id(action)
    out[offset + action - 1] = 1.0
    offset += k

    last = state.last_supporter_strategy()
    last_stage = None if last is None else catalog.stage_of(last)
    out[offset + _STAGE_SLOT[last_stage]] = 1.0
    offset += 5

    out[offset + bisect_right(fc.history_bucket_edges, len(state.history))] = 1.0
    offset += len(fc.history_bucket_edges) + 1

    for word in state.query.lower().split():
        out[offset + _fnv1a(word) % fc.hash_dim] += 1.0
    return out


@dataclass(frozen=True)
class MlpConfig:
    n_actions: int
    features: FeatureConfig = field(default_factory=FeatureConfig)
    hidden: tuple[int, ...] = (64, 64)
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def mlp_param_specs(cfg: MlpConfig) -> list[tuple[str, tuple[int, ...], str]]:
    dims = [feature_dim(cfg.features, cfg.n_actions), *cfg.hidden, 1]
    specs: list[tuple[str, tuple[int, ...], str]] = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        specs.append((f"layers.{i}.w", (d_in, d_out), "weight"))
        specs.append((f"layers.{i}.b", (d_out,), "zero"))
    return specs


def init_mlp_params(cfg: MlpConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    dt = cfg.np_dtype
    params: dict[str, np.ndarray] = {}
    for name, shape, kind in mlp_param_specs(cfg):
        if kind == "weight":
            params[name] = uniform_init(rng, shape, 1.0 / math.sqrt(shape[0]), dt)
        else:
            params[name] = np.zeros(shape, dtype=dt)
    return params


class MlpScorer:
    backend = "mlp"

    def __init__(
        self,
        config: MlpConfig,
        seed: int = 0,
        params: Optional[dict[str, np.ndarray]] = None,
        window: int = 2048,
    ):
        self.config = config
        self.window = window  # unused; kept for a uniform constructor signature
        if params is None:
            params = init_mlp_params(config, seed)
        else:
            expected = {n: s for n, s, _ in mlp_param_specs(config)}
            if set(params) != set(expected):
                raise ValueError("parameter names do not match the configuration")
            for n, arr in params.items():
                if tuple(arr.shape) != expected[n]:
                    raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {expected[n]}")
        self.params = params
        self._n_layers = len(config.hidden) + 1

    def clone(self) -> "MlpScorer":
        return MlpScorer(
            self.config,
            params={n: a.copy() for n, a in self.params.items()},
            window=self.window,
        )

    def state_dict(self) -> dict[str, np.ndarray]:
        return self.params

    def load_state_dict(self, params: dict[str, np.ndarray]) -> None:
        for name in self.params:
            self.params[name] = params[name].copy()

    def _param_vars(self) -> dict[str, ad.Var]:
        return {n: ad.Var(a) for n, a in self.params.items()}

    def _q_var(self, feats: np.ndarray, pv: dict[str, ad.Var]) -> ad.Var:
        """(B,) Q values for a (B, F) feature batch."""
        x: ad.Var = ad.Var(feats.astype(self.config.np_dtype))
        for i in range(self._n_layers):
            x = x @ pv[f"layers.{i}.w"] + pv[f"layers.{i}.b"]
            if i < self._n_layers - 1:
                x = ad.tanh(x)
        return ad.reshape(x, (feats.shape[0],))

    def _features(self, state: DialogueState, action: int, catalog: StrategyCatalog) -> np.ndarray:
        return extract_features(state, action, catalog, self.config.features)

    def forward(self, tokens) -> np.ndarray:
        raise BackendMismatch("token-level forward is only defined for the seq backend")

    def q_value(self, state: DialogueState, action: int, catalog: StrategyCatalog, vocab=None) -> float:
        feats = self._features(state, action, catalog)[None, :]
        return float(self._q_var(feats, self._param_vars()).data[0])

    def q_all(self, state: DialogueState, catalog: StrategyCatalog, vocab=None) -> np.ndarray:
        feats = np.stack([self._features(state, a, catalog) for a in catalog.ids])
        values = self._q_var(feats, self._param_vars()).data.astype(np.float64)
        if not np.isfinite(values).all():
            raise FloatingPointError("non-finite Q value")
        return values

    def select_strategy(self, state: DialogueState, catalog: StrategyCatalog, vocab=None) -> int:
        return argmax_smallest_id(self.q_all(state, catalog, vocab))

    def grad_q(
        self, state: DialogueState, action: int, catalog: StrategyCatalog, vocab=None
    ) -> dict[str, np.ndarray]:
        pv = self._param_vars()
        q = ad.vmean(self._q_var(self._features(state, action, catalog)[None, :], pv))
        ad.backward(q)
        return {
            n: (v.grad if v.grad is not None else np.zeros_like(v.data)) for n, v in pv.items()
        }

    def loss_and_grads(
        self,
        items: list[tuple[DialogueState, int, float]],
        catalog: StrategyCatalog,
        vocab=None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        if not items:
            raise ValueError("empty batch")
        feats = np.stack([self._features(s, a, catalog) for s, a, _ in items])
        targets = np.array([t for _, _, t in items], dtype=self.config.np_dtype)
        pv = self._param_vars()
        diff = self._q_var(feats, pv) - targets
        loss = ad.vmean(diff * diff)
        ad.backward(loss)
        grads = {
            n: (v.grad if v.grad is not None else np.zeros_like(v.data)) for n, v in pv.items()
        }
        return float(loss.data), grads

    def config_dict(self) -> dict:
        return asdict(self.config)
