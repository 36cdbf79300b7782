"""Evaluation metrics for strategy prediction and response quality.

Strategy side: accuracy, macro-F1 proficiency, and a Bradley-Terry
preference-bias score (how lopsided the predictor's strategy preferences
are; 0 for unbiased or perfect predictors, larger means more skew).
Response side: corpus BLEU-2, ROUGE-L, Distinct-2 and CIDEr over lowercased
whitespace tokens.  Plus the analysis artifacts: confusion and transition
matrices, the stage-ordering mass of a transition matrix, and averaged
reward / summed discounted return over rollouts.

Everything here is a pure function.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import StrategyCatalog


class LengthMismatch(ValueError):
    """Prediction and gold label sequences differ in length."""


class EmptyInput(ValueError):
    """Metric called on empty input."""


def _check_pair_lengths(pred: Sequence[int], gold: Sequence[int]) -> None:
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(gold)} gold labels")
    if len(pred) == 0:
        raise EmptyInput("no samples")


def accuracy(pred: Sequence[int], gold: Sequence[int]) -> float:
    _check_pair_lengths(pred, gold)
    return sum(p == g for p, g in zip(pred, gold)) / len(pred)


def confusion_matrix(pred: Sequence[int], gold: Sequence[int], k: int) -> np.ndarray:
    """counts[i-1][j-1] = #{samples with prediction i and gold j}."""
    _check_pair_lengths(pred, gold)
    counts = np.zeros((k, k), dtype=np.int64)
    for p, g in zip(pred, gold):
        counts[p - 1, g - 1] += 1
    return counts


def macro_f1(pred: Sequence[int], gold: Sequence[int], k: int) -> float:
    """Unweighted mean of per-class F1; classes absent everywhere count as 0."""
    counts = confusion_matrix(pred, gold, k)
    scores = []
    for c in range(k):
        tp = counts[c, c]
        fp = counts[c, :].sum() - tp
        fn = counts[:, c].sum() - tp
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def bt_strengths(
    pred: Sequence[int],
    gold: Sequence[int],
    k: int,
    prior: float = 0.1,
    tol: float = 1e-10,
    max_iters: int = 100_000,
) -> np.ndarray:
    """Bradley-Terry strengths of the predictor's strategy preferences.

    Every misprediction is read as "class pred beat class gold"; a uniform
    prior count on every ordered pair keeps the maximum-likelihood problem
    well posed.  Fitted by minorization-maximization, normalized to sum 1.
    """
    _check_pair_lengths(pred, gold)
    wins = np.zeros((k, k), dtype=np.float64)
    for p, g in zip(pred, gold):
        if p != g:
            wins[p - 1, g - 1] += 1.0
    wins += prior
    np.fill_diagonal(wins, 0.0)

    comparisons = wins + wins.T
    total_wins = wins.sum(axis=1)
    p = np.full(k, 1.0 / k)
    prev_change = np.inf
    for _ in range(max_iters):
        pair_sums = p[:, None] + p[None, :]
        ratios = np.divide(comparisons, pair_sums, out=np.zeros_like(comparisons), where=pair_sums > 0)
        np.fill_diagonal(ratios, 0.0)
        p_new = total_wins / ratios.sum(axis=1)
        p_new /= p_new.sum()
        # minorization converges linearly; bound the geometric tail so that
        # `tol` limits the log-domain distance to the fixed point itself
        change = np.abs(np.log(p_new) - np.log(p)).max()
        rate = change / prev_change if prev_change > 0 else 0.0
        remaining = change * rate / (1.0 - rate) if rate < 1.0 else np.inf
        p = p_new
        prev_change = change
        if change < tol and remaining < tol:
            return p
    return p


def bt_bias(pred: Sequence[int], gold: Sequence[int], k: int, prior: float = 0.1) -> float:
    """Standard deviation of log Bradley-Terry strengths; smaller is less biased."""
    strengths = bt_strengths(pred, gold, k, prior=prior)
    return float(np.std(np.log(strengths)))


# -- text metrics ------------------------------------------------------------


def _tokens(text: str) -> list[str]:
    return text.lower().split()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check_text_pairs(hyps: Sequence[str], refs: Sequence[str]) -> None:
    if len(hyps) == 0:
        raise EmptyInput("no hypotheses")
    if len(hyps) != len(refs):
        raise LengthMismatch(f"{len(hyps)} hypotheses vs {len(refs)} references")


def bleu2(hyps: Sequence[str], refs: Sequence[str], eps: float = 1e-9) -> float:
    """Corpus BLEU with uniform 1/2-gram weights, clipped counts, brevity
    penalty exp(1 - r/c) for short output, and eps-floored precisions."""
    _check_text_pairs(hyps, refs)
    matches = [0, 0]
    totals = [0, 0]
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyps, refs):
        h, r = _tokens(hyp), _tokens(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in (1, 2):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += sum(hc.values())
    if hyp_len == 0:
        return 0.0
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    precisions = [p if p > 0.0 else eps for p in precisions]
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(0.5 * (math.log(precisions[0]) + math.log(precisions[1])))


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hyps: Sequence[str], refs: Sequence[str], beta: float = 1.2) -> float:
    """Mean LCS-based F-measure with recall weight beta."""
    _check_text_pairs(hyps, refs)
    scores = []
    for hyp, ref in zip(hyps, refs):
        h, r = _tokens(hyp), _tokens(ref)
        lcs = _lcs_length(h, r)
        if lcs == 0 or not h or not r:
            scores.append(0.0)
            continue
        precision = lcs / len(h)
        recall = lcs / len(r)
        scores.append((1 + beta**2) * precision * recall / (recall + beta**2 * precision))
    return float(np.mean(scores))


def distinct2(hyps: Sequence[str]) -> float:
    """Unique bigrams / total bigrams pooled over all hypotheses."""
    if len(hyps) == 0:
        raise EmptyInput("no hypotheses")
    total = 0
    seen: set[tuple[str, str]] = set()
    for hyp in hyps:
        toks = _tokens(hyp)
        for i in range(len(toks) - 1):
            seen.add((toks[i], toks[i + 1]))
            total += 1
    return len(seen) / total if total else 0.0


def cider(
    hyps: Sequence[str], refs: Sequence[str], max_n: int = 4, sigma: float = 6.0
) -> float:
    """tf-idf n-gram cosine similarity, n = 1..max_n, with a Gaussian length
    penalty, scaled by 10.  Document frequencies come from the references."""
    _check_text_pairs(hyps, refs)
    n_docs = len(refs)
    doc_freq: list[Counter] = [Counter() for _ in range(max_n)]
    ref_tokens = [_tokens(r) for r in refs]
    for toks in ref_tokens:
        for n in range(1, max_n + 1):
            for gram in set(_ngrams(toks, n)):
                doc_freq[n - 1][gram] += 1

    def vector(tokens: list[str], n: int) -> dict:
        counts = _ngrams(tokens, n)
        df = doc_freq[n - 1]
        return {
            g: c * math.log(n_docs / max(df[g], 1)) for g, c in counts.items()
        }

    scores = []
    for hyp, r_toks in zip(hyps, ref_tokens):
        h_toks = _tokens(hyp)
        penalty = math.exp(-((len(h_toks) - len(r_toks)) ** 2) / (2 * sigma**2))
        sims = []
        for n in range(1, max_n + 1):
            hv = vector(h_toks, n)
            rv = vector(r_toks, n)
            dot = sum(w * rv[g] for g, w in hv.items() if g in rv)
            norm_h = math.sqrt(sum(w * w for w in hv.values()))
            norm_r = math.sqrt(sum(w * w for w in rv.values()))
            sims.append(dot / (norm_h * norm_r) if norm_h > 0 and norm_r > 0 else 0.0)
        scores.append(10.0 * penalty * float(np.mean(sims)))
    return float(np.mean(scores))


# -- analysis artifacts --------------------------------------------------------


def transition_matrix(action_sequences: Sequence[Sequence[int]], k: int) -> np.ndarray:
    """counts[i-1][j-1] = #{consecutive within-episode action pairs (i, j)}."""
    counts = np.zeros((k, k), dtype=np.int64)
    for seq in action_sequences:
        for a, b in zip(seq, seq[1:]):
            counts[a - 1, b - 1] += 1
    return counts


def row_normalize(matrix: np.ndarray) -> np.ndarray:
    """Counts to per-row distributions; all-zero rows stay zero."""
    sums = matrix.sum(axis=1, keepdims=True).astype(np.float64)
    return np.divide(matrix, sums, out=np.zeros(matrix.shape, dtype=np.float64), where=sums > 0)


def stage_upper_mass(matrix: np.ndarray, catalog: StrategyCatalog) -> float:
    """Fraction of transition mass that holds or advances the stage order.

    Unstaged strategies are excluded from both numerator and denominator.
    """
    k = len(catalog)
    ranks = [catalog.stage_of(i + 1).rank for i in range(k)]
    total = 0.0
    favorable = 0.0
    for i in range(k):
        if ranks[i] is None:
            continue
        for j in range(k):
            if ranks[j] is None:
                continue
            mass = float(matrix[i, j])
            total += mass
            if ranks[i] <= ranks[j]:
                favorable += mass
    return favorable / total if total else 0.0


def avg_reward_value(reward_sequences: Sequence[Sequence[float]], gamma: float) -> tuple[float, float]:
    """(mean per-turn reward, sum over all turns of the discounted return).

    The return of turn t inside its episode is sum_{k>=t} gamma^(k-t) r_k;
    returns are summed (not averaged) across evaluated turns, which is why
    the value column is orders of magnitude above single rewards.
    """
    all_rewards: list[float] = []
    value_sum = 0.0
    for seq in reward_sequences:
        g = 0.0
        returns = []
        for r in reversed(list(seq)):
            g = r + gamma * g
            returns.append(g)
        value_sum += sum(returns)
        all_rewards.extend(seq)
    if not all_rewards:
        raise EmptyInput("no rewards")
    return float(np.mean(all_rewards)), float(value_sum)


@dataclass
class MetricReport:
    accuracy: float
    proficiency: float  # macro-F1
    preference_bias: float
    bleu2: float
    rouge_l: float
    distinct2: float
    cider: float
    confusion: np.ndarray
    transition: np.ndarray
    avg_reward: float = float("nan")
    avg_value: float = float("nan")
    mean_model_q: Optional[float] = None
    n_samples: int = 0
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["confusion"] = self.confusion.tolist()
        out["transition"] = self.transition.tolist()
        return out


def write_matrix_csv(path, matrix: np.ndarray, catalog: StrategyCatalog) -> None:
    """Matrix with strategy-name row/column headers."""
    names = [s.abbreviation for s in catalog]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + names)
        for name, row in zip(names, matrix):
            writer.writerow([name] + [int(x) if float(x).is_integer() else float(x) for x in row])
