"""Causal-transformer Q-scorer.

The state is rendered into the multi-choice instruction, the candidate
answer " (k)" is appended, and Q(s, a) is the mean log-probability the model
assigns to the answer tokens at their predicting positions.  Strict causal
masking means every output position depends only on earlier tokens, so a
whole sequence yields its per-position predictions in one pass.

Gradients are analytic (reverse-mode on the autodiff tape) and are verified
against central finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .. import autodiff as ad
from ..core import DialogueState, StrategyCatalog
from ..encoding import EncodedPair, Vocabulary, encode_pair
from .base import argmax_smallest_id, uniform_init


@dataclass(frozen=True)
class SeqConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    n_ctx: int = 2048
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def param_specs(cfg: SeqConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init-kind) in the fixed order weights are created."""
    d, h = cfg.d_model, 4 * cfg.d_model
    specs: list[tuple[str, tuple[int, ...], str]] = [
        ("tok_emb", (cfg.vocab_size, d), "weight"),
        ("pos_emb", (cfg.n_ctx, d), "weight"),
    ]
    for i in range(cfg.n_layers):
        b = f"blocks.{i}"
        specs += [
            (f"{b}.ln1.g", (d,), "one"),
            (f"{b}.ln1.b", (d,), "zero"),
            (f"{b}.attn.wq", (d, d), "weight"),
            (f"{b}.attn.bq", (d,), "zero"),
            (f"{b}.attn.wk", (d, d), "weight"),
            (f"{b}.attn.bk", (d,), "zero"),
            (f"{b}.attn.wv", (d, d), "weight"),
            (f"{b}.attn.bv", (d,), "zero"),
            (f"{b}.attn.wo", (d, d), "weight"),
            (f"{b}.attn.bo", (d,), "zero"),
            (f"{b}.ln2.g", (d,), "one"),
            (f"{b}.ln2.b", (d,), "zero"),
            (f"{b}.mlp.w1", (d, h), "weight"),
            (f"{b}.mlp.b1", (h,), "zero"),
            (f"{b}.mlp.w2", (h, d), "weight"),
            (f"{b}.mlp.b2", (d,), "zero"),
        ]
    specs += [
        ("ln_f.g", (d,), "one"),
        ("ln_f.b", (d,), "zero"),
        ("head.w", (d, cfg.vocab_size), "weight"),
        ("head.b", (cfg.vocab_size,), "zero"),
    ]
    return specs


def init_params(cfg: SeqConfig, seed: int) -> dict[str, np.ndarray]:
    """Seeded uniform(-1/sqrt(d), 1/sqrt(d)) weights; zero biases, unit gains."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(cfg.d_model)
    dt = cfg.np_dtype
    params: dict[str, np.ndarray] = {}
    for name, shape, kind in param_specs(cfg):
        if kind == "weight":
            params[name] = uniform_init(rng, shape, scale, dt)
        elif kind == "one":
            params[name] = np.ones(shape, dtype=dt)
        else:
            params[name] = np.zeros(shape, dtype=dt)
    return params


class SeqScorer:
    backend = "seq"

    def __init__(
        self,
        config: SeqConfig,
        seed: int = 0,
        params: Optional[dict[str, np.ndarray]] = None,
        window: int = 2048,
    ):
        self.config = config
        self.window = min(window, config.n_ctx)
        if params is None:
            params = init_params(config, seed)
        else:
            expected = {n: s for n, s, _ in param_specs(config)}
            if set(params) != set(expected):
                raise ValueError("parameter names do not match the configuration")
            for n, arr in params.items():
                if tuple(arr.shape) != expected[n]:
                    raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {expected[n]}")
        self.params = params
        self._masks: dict[int, np.ndarray] = {}

    def clone(self) -> "SeqScorer":
        return SeqScorer(
            self.config,
            params={n: a.copy() for n, a in self.params.items()},
            window=self.window,
        )

    def state_dict(self) -> dict[str, np.ndarray]:
        return self.params

    def load_state_dict(self, params: dict[str, np.ndarray]) -> None:
        for name in self.params:
            self.params[name] = params[name].copy()

    # -- forward ------------------------------------------------------------

    def _mask(self, t: int) -> np.ndarray:
        mask = self._masks.get(t)
        if mask is None:
            mask = np.triu(np.full((t, t), -1e30, dtype=self.config.np_dtype), k=1)
            self._masks[t] = mask
        return mask

    def _next_token_logprobs(self, tokens: np.ndarray, pv: dict[str, ad.Var]) -> ad.Var:
        """(T, V) log-probs; row j is the distribution over token j+1."""
        cfg = self.config
        t = len(tokens)
        if t > cfg.n_ctx:
            raise ValueError(f"sequence length {t} exceeds context size {cfg.n_ctx}")
        if tokens.max() >= cfg.vocab_size or tokens.min() < 0:
            raise ValueError("token id outside the vocabulary")
        x = ad.take_rows(pv["tok_emb"], tokens) + ad.take_rows(pv["pos_emb"], np.arange(t))
        mask = self._mask(t)
        n_heads, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        for i in range(cfg.n_layers):
            p = lambda n: pv[f"blocks.{i}.{n}"]
            h = ad.layer_norm(x, p("ln1.g"), p("ln1.b"))
            q = ad.reshape(h @ p("attn.wq") + p("attn.bq"), (t, n_heads, dh))
            k = ad.reshape(h @ p("attn.wk") + p("attn.bk"), (t, n_heads, dh))
            v = ad.reshape(h @ p("attn.wv") + p("attn.bv"), (t, n_heads, dh))
            q, k, v = (ad.swapaxes(m, 0, 1) for m in (q, k, v))
            scores = (q @ ad.swapaxes(k, 1, 2)) * (1.0 / math.sqrt(dh)) + mask
            ctx = ad.softmax(scores, axis=-1) @ v
            ctx = ad.reshape(ad.swapaxes(ctx, 0, 1), (t, cfg.d_model))
            x = x + (ctx @ p("attn.wo") + p("attn.bo"))
            h2 = ad.layer_norm(x, p("ln2.g"), p("ln2.b"))
            x = x + (ad.gelu(h2 @ p("mlp.w1") + p("mlp.b1")) @ p("mlp.w2") + p("mlp.b2"))
        x = ad.layer_norm(x, pv["ln_f.g"], pv["ln_f.b"])
        logits = x @ pv["head.w"] + pv["head.b"]
        return ad.log_softmax(logits, axis=-1)

    def _param_vars(self) -> dict[str, ad.Var]:
        return {n: ad.Var(a) for n, a in self.params.items()}

    def forward(self, tokens: np.ndarray) -> np.ndarray:
        """Per-position log-probabilities, shape (T, V).

        Row i is the distribution over token i conditioned on tokens < i;
        row 0, which has nothing to condition on, is the uniform -ln(V).
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        preds = self._next_token_logprobs(tokens, self._param_vars()).data
        out = np.empty((len(tokens), self.config.vocab_size), dtype=self.config.np_dtype)
        out[0] = -math.log(self.config.vocab_size)
        out[1:] = preds[:-1]
        return out

    # -- Q interface ----------------------------------------------------------

    def _q_var(self, encoded: EncodedPair, pv: dict[str, ad.Var]) -> ad.Var:
        start, end = encoded.action_span
        if start < 1 or end <= start:
            raise ValueError("action span must be nonempty and after the BOS token")
        preds = self._next_token_logprobs(encoded.tokens, pv)
        span = np.arange(start, end)
        picked = ad.take_pairs(preds, span - 1, encoded.tokens[span])
        return ad.vmean(picked)

    def q_of_encoded(self, encoded: EncodedPair) -> float:
        return float(self._q_var(encoded, self._param_vars()).data)

    def q_value(
        self, state: DialogueState, action: int, catalog: StrategyCatalog, vocab: Vocabulary
    ) -> float:
        return self.q_of_encoded(encode_pair(state, action, catalog, vocab, self.window))

    def q_all(self, state: DialogueState, catalog: StrategyCatalog, vocab: Vocabulary) -> np.ndarray:
        values = np.array([self.q_value(state, a, catalog, vocab) for a in catalog.ids])
        if not np.isfinite(values).all():
            raise FloatingPointError("non-finite Q value")
        return values

    def select_strategy(
        self, state: DialogueState, catalog: StrategyCatalog, vocab: Vocabulary
    ) -> int:
        return argmax_smallest_id(self.q_all(state, catalog, vocab))

    def grad_q(
        self, state: DialogueState, action: int, catalog: StrategyCatalog, vocab: Vocabulary
    ) -> dict[str, np.ndarray]:
        """Analytic gradient of q_value with respect to every parameter."""
        pv = self._param_vars()
        q = self._q_var(encode_pair(state, action, catalog, vocab, self.window), pv)
        ad.backward(q)
        return {
            n: (v.grad if v.grad is not None else np.zeros_like(v.data)) for n, v in pv.items()
        }

    def loss_and_grads(
        self,
        items: list[tuple[DialogueState, int, float]],
        catalog: StrategyCatalog,
        vocab: Vocabulary,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean squared TD error over (state, action, target) and its gradient."""
        if not items:
            raise ValueError("empty batch")
        pv = self._param_vars()
        total: Optional[ad.Var] = None
        for state, action, target in items:
            q = self._q_var(encode_pair(state, action, catalog, vocab, self.window), pv)
            se = (q - float(target)) ** 2.0
            total = se if total is None else total + se
        loss = total * (1.0 / len(items))
        ad.backward(loss)
        grads = {
            n: (v.grad if v.grad is not None else np.zeros_like(v.data)) for n, v in pv.items()
        }
        return float(loss.data), grads

    def config_dict(self) -> dict:
        return asdict(self.config)
