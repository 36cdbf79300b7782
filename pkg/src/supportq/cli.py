"""Command-line entry point.

Subcommands: train, eval, sweep, simulate, ingest-stats.  Configuration
comes from defaults, then an optional key=value config file, then
SUPPORTQ_-prefixed environment variables, then CLI flags (flags win).
Every command writes a manifest (config + input hashes) sufficient to
reproduce it, and never mutates its input files.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 training/eval
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .core import StrategyCatalog, default_catalog, derive_transitions
from .encoding import Vocabulary, build_vocab, render_mcq
from .env import STAGE_QUERIES, StagedEnv, StagedEnvConfig, response_template
from .ingest import (
    ParseError,
    UnknownEmotion,
    UnknownStrategy,
    corpus_stats,
    load_esconv,
    load_plain_dialogues,
    split_episodes,
)
from .metrics import (
    EmptyInput,
    LengthMismatch,
    MetricReport,
    accuracy,
    avg_reward_value,
    bleu2,
    bt_bias,
    bt_strengths,
    cider,
    confusion_matrix,
    distinct2,
    macro_f1,
    rouge_l,
    stage_upper_mass,
    transition_matrix,
    write_matrix_csv,
)
from .qnet import FeatureConfig, MlpConfig, MlpScorer, SeqConfig, SeqScorer, load_scorer, save_scorer
from .rewards import SyntheticJudge, distill_rewards, imitation_rewards
from .training import InsufficientData, TrainerConfig, fit

ENV_PREFIX = "SUPPORTQ_"


class ConfigError(ValueError):
    """Bad or unknown configuration."""


class CheckpointMismatch(RuntimeError):
    """Checkpoint was trained against a different vocabulary or catalog."""


@dataclass
class RunConfig:
    mode: str = "env"  # env | dataset
    backend: str = "mlp"  # mlp | seq
    reward: str = "imit"  # imit | distill | env
    gamma: float = 0.85
    learning_rate: float = 0.0  # 0 means backend default
    batch_size: int = 64
    target_sync_every: int = 10
    epochs: int = 4
    window: int = 2048
    seed: int = 0
    grad_clip: float = 1.0
    buffer_capacity: int = 12_000
    sample_in_order: bool = False
    rollout_episodes: int = 1000
    demo_episodes: int = 300
    demo_fidelity: float = 0.65
    env_horizon: int = 8
    dataset_path: str = ""
    testset_path: str = ""
    split_ratio: float = 0.9
    vocab_max_size: int = 4096
    mlp_hidden: str = "64,64"
    seq_d_model: int = 64
    seq_layers: int = 2
    seq_heads: int = 2
    eval_episodes: int = 120
    out_dir: str = "runs/latest"
    deterministic: bool = False

    def validate(self) -> None:
        if self.mode not in ("env", "dataset"):
            raise ConfigError(f"mode must be env or dataset, got {self.mode!r}")
        if self.backend not in ("mlp", "seq"):
            raise ConfigError(f"backend must be mlp or seq, got {self.backend!r}")
        if self.reward not in ("imit", "distill", "env"):
            raise ConfigError(f"reward must be imit, distill or env, got {self.reward!r}")
        if self.reward == "env" and self.mode != "env":
            raise ConfigError("reward=env requires mode=env")
        if self.mode == "dataset" and not self.dataset_path:
            raise ConfigError("dataset mode needs dataset_path")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must be in [0, 1)")

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(
            gamma=self.gamma,
            learning_rate=self.learning_rate or None,
            batch_size=self.batch_size,
            target_sync_every=self.target_sync_every,
            epochs=self.epochs,
            window=self.window,
            seed=self.seed,
            grad_clip=self.grad_clip,
            buffer_capacity=self.buffer_capacity,
            sample_in_order=self.sample_in_order,
            rollout_episodes=self.rollout_episodes,
        )


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELDS[name].type
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def load_run_config(
    config_path: Optional[str] = None,
    environ: Optional[dict] = None,
    overrides: Optional[dict] = None,
) -> RunConfig:
    values: dict = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{config_path}:{lineno}: expected key = value")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in _FIELDS:
                raise ConfigError(f"{config_path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, raw.strip())
    env = environ if environ is not None else os.environ
    for key, raw in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX) :].lower()
        if name not in _FIELDS:
            raise ConfigError(f"unknown environment override {key}")
        values[name] = _coerce(name, raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown option {key!r}")
        values[key] = value
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def _limit_threads() -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(1)
    except Exception:
        pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    def clean(x):
        if isinstance(x, float) and not np.isfinite(x):
            return None
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        return x

    path.write_text(json.dumps(clean(payload), indent=1, sort_keys=True) + "\n")


def _write_manifest(out: Path, command: str, cfg: RunConfig, inputs: list[str]) -> None:
    _write_json(
        out / "manifest.json",
        {
            "command": command,
            "config": dataclasses.asdict(cfg),
            "inputs": {p: _sha256(Path(p)) for p in inputs if p and Path(p).is_file()},
            "version": __version__,
        },
    )


# -- pipeline pieces -----------------------------------------------------------


def _make_env(cfg: RunConfig, catalog: StrategyCatalog) -> StagedEnv:
    return StagedEnv(
        StagedEnvConfig(horizon=cfg.env_horizon, seed=cfg.seed), catalog=catalog
    )


def _training_episodes(cfg: RunConfig, catalog: StrategyCatalog) -> list:
    if cfg.mode == "dataset":
        episodes = load_esconv(cfg.dataset_path, catalog=catalog)
        train, _ = split_episodes(episodes, cfg.split_ratio, cfg.seed)
        return train
    env = _make_env(cfg, catalog)
    return env.demo_episodes(cfg.demo_episodes, fidelity=cfg.demo_fidelity, seed=cfg.seed)


def _test_episodes(cfg: RunConfig, catalog: StrategyCatalog) -> list:
    if cfg.testset_path:
        return load_esconv(cfg.testset_path, catalog=catalog)
    if cfg.mode == "dataset":
        episodes = load_esconv(cfg.dataset_path, catalog=catalog)
        _, test = split_episodes(episodes, cfg.split_ratio, cfg.seed)
        return test
    env = _make_env(cfg, catalog)
    return env.demo_episodes(cfg.eval_episodes, fidelity=cfg.demo_fidelity, seed=cfg.seed + 7919)


def _vocab_corpus(episodes: Sequence, catalog: StrategyCatalog) -> list[str]:
    texts = []
    for ep in episodes:
        texts.append(ep.description)
        texts.extend(t.text for t in ep.turns)
    if episodes:
        transitions = derive_transitions(episodes[0])
        texts.append(render_mcq(transitions[0].state, catalog))
    return texts


def _build_scorer(cfg: RunConfig, catalog: StrategyCatalog, vocab: Vocabulary):
    if cfg.backend == "seq":
        return SeqScorer(
            SeqConfig(
                vocab_size=vocab.size,
                d_model=cfg.seq_d_model,
                n_heads=cfg.seq_heads,
                n_layers=cfg.seq_layers,
                n_ctx=max(cfg.window, 256),
            ),
            seed=cfg.seed,
            window=cfg.window,
        )
    hidden = tuple(int(x) for x in cfg.mlp_hidden.split(",") if x)
    return MlpScorer(
        MlpConfig(n_actions=len(catalog), features=FeatureConfig(), hidden=hidden),
        seed=cfg.seed,
    )


def _train(cfg: RunConfig, out: Path) -> None:
    catalog = default_catalog()
    if cfg.reward == "env":
        env = _make_env(cfg, catalog)
        prompt_state = env.reset(seed=cfg.seed)
        corpus = [prompt_state.description, render_mcq(prompt_state, catalog)]
        for pool in STAGE_QUERIES.values():
            corpus.extend(pool)
        corpus.extend(response_template(s.name) for s in catalog)
        vocab = build_vocab(corpus, cfg.vocab_max_size)
        scorer = _build_scorer(cfg, catalog, vocab)
        log = fit(env, scorer, catalog, vocab, cfg.trainer_config())
    else:
        episodes = _training_episodes(cfg, catalog)
        vocab = build_vocab(_vocab_corpus(episodes, catalog), cfg.vocab_max_size)
        transitions = []
        for ep in episodes:
            transitions.extend(derive_transitions(ep))
        if cfg.reward == "imit":
            rewarded = imitation_rewards(transitions, catalog, seed=cfg.seed)
        else:
            judge = SyntheticJudge(catalog=catalog, nominal_turns=cfg.env_horizon, seed=cfg.seed)
            rewarded = distill_rewards(transitions, judge)
        scorer = _build_scorer(cfg, catalog, vocab)
        log = fit(rewarded, scorer, catalog, vocab, cfg.trainer_config())

    vocab.save(out / "vocab.txt")
    save_scorer(
        out / "checkpoint.npz",
        scorer,
        extra={"vocab_sha256": vocab.content_hash(), "catalog_sha256": catalog.content_hash()},
    )
    log.to_csv(out / "loss.csv")
    _write_manifest(out, "train", cfg, [cfg.dataset_path] if cfg.dataset_path else [])
    print(f"trained {cfg.backend} scorer for {len(log)} steps -> {out / 'checkpoint.npz'}")


def _load_checkpoint(checkpoint: str):
    catalog = default_catalog()
    scorer, extra = load_scorer(checkpoint)
    vocab_path = Path(checkpoint).parent / "vocab.txt"
    vocab = Vocabulary.load(vocab_path) if vocab_path.exists() else None
    if vocab is not None and extra.get("vocab_sha256") not in (None, vocab.content_hash()):
        raise CheckpointMismatch("vocabulary hash differs from the one used in training")
    if extra.get("catalog_sha256") not in (None, catalog.content_hash()):
        raise CheckpointMismatch("strategy catalog differs from the one used in training")
    return catalog, scorer, vocab


def _eval(cfg: RunConfig, out: Path, checkpoint: str) -> None:
    catalog, scorer, vocab = _load_checkpoint(checkpoint)
    episodes = _test_episodes(cfg, catalog)
    gold: list[int] = []
    pred: list[int] = []
    refs: list[str] = []
    hyps: list[str] = []
    sequences: list[list[int]] = []
    for ep in episodes:
        transitions = derive_transitions(ep)
        seq: list[int] = []
        for tr in transitions:
            choice = scorer.select_strategy(tr.state, catalog, vocab)
            pred.append(choice)
            gold.append(tr.action)
            refs.append(tr.response or "")
            hyps.append(response_template(catalog.by_id(choice).name))
            seq.append(choice)
        sequences.append(seq)
    if not gold:
        raise EmptyInput("test set produced no evaluation samples")

    k = len(catalog)
    report = MetricReport(
        accuracy=accuracy(pred, gold),
        proficiency=macro_f1(pred, gold, k),
        preference_bias=bt_bias(pred, gold, k),
        bleu2=bleu2(hyps, refs),
        rouge_l=rouge_l(hyps, refs),
        distinct2=distinct2(hyps),
        cider=cider(hyps, refs),
        confusion=confusion_matrix(pred, gold, k),
        transition=transition_matrix(sequences, k),
        n_samples=len(gold),
    )
    _write_json(out / "report.json", report.to_dict())
    write_matrix_csv(out / "confusion.csv", report.confusion, catalog)
    write_matrix_csv(out / "transition.csv", report.transition, catalog)
    _per_strategy_csv(out / "per_strategy.csv", pred, gold, hyps, refs, catalog)
    _write_manifest(out, "eval", cfg, [checkpoint, cfg.testset_path or cfg.dataset_path])
    print(
        f"eval on {len(gold)} turns: acc={report.accuracy:.4f} "
        f"f1={report.proficiency:.4f} bias={report.preference_bias:.4f} "
        f"b2={report.bleu2:.4f} rl={report.rouge_l:.4f}"
    )


def _per_strategy_csv(path, pred, gold, hyps, refs, catalog) -> None:
    import csv as _csv

    k = len(catalog)
    strengths = bt_strengths(pred, gold, k)
    log_s = np.log(strengths)
    centered = np.abs(log_s - log_s.mean())
    counts = confusion_matrix(pred, gold, k)
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            ["strategy", "abbr", "stage", "support", "acc", "f1", "bias", "bleu2", "rouge_l", "distinct2", "cider"]
        )
        for s in catalog:
            c = s.id - 1
            support = int(counts[:, c].sum())
            recall = counts[c, c] / support if support else 0.0
            denom = 2 * counts[c, c] + (counts[c, :].sum() - counts[c, c]) + (support - counts[c, c])
            f1 = 2 * counts[c, c] / denom if denom else 0.0
            idx = [i for i, g in enumerate(gold) if g == s.id]
            sub_h = [hyps[i] for i in idx]
            sub_r = [refs[i] for i in idx]
            row = [
                s.name,
                s.abbreviation,
                s.stage.value,
                support,
                f"{recall:.6f}",
                f"{f1:.6f}",
                f"{centered[c]:.6f}",
                f"{bleu2(sub_h, sub_r):.6f}" if idx else "0",
                f"{rouge_l(sub_h, sub_r):.6f}" if idx else "0",
                f"{distinct2(sub_h):.6f}" if idx else "0",
                f"{cider(sub_h, sub_r):.6f}" if idx else "0",
            ]
            writer.writerow(row)


def _sweep(cfg: RunConfig, out: Path, gammas: list[float]) -> None:
    import csv as _csv

    rows = []
    for gamma in gammas:
        sub = dataclasses.replace(cfg, gamma=gamma, out_dir=str(out / f"gamma_{gamma:g}"))
        sub_out = Path(sub.out_dir)
        sub_out.mkdir(parents=True, exist_ok=True)
        _train(sub, sub_out)
        _eval(sub, sub_out, str(sub_out / "checkpoint.npz"))
        report = json.loads((sub_out / "report.json").read_text())
        rows.append(
            {
                "gamma": gamma,
                "acc": report["accuracy"],
                "macro_f1": report["proficiency"],
                "bleu2": report["bleu2"],
                "rouge_l": report["rouge_l"],
            }
        )
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=["gamma", "acc", "macro_f1", "bleu2", "rouge_l"])
        writer.writeheader()
        writer.writerows(rows)
    _write_manifest(out, "sweep", cfg, [cfg.dataset_path] if cfg.dataset_path else [])
    print(f"{'gamma':>6} {'acc':>8} {'macro_f1':>9} {'bleu2':>8} {'rouge_l':>8}")
    for row in rows:
        print(
            f"{row['gamma']:>6g} {row['acc']:>8.4f} {row['macro_f1']:>9.4f} "
            f"{row['bleu2']:>8.4f} {row['rouge_l']:>8.4f}"
        )


def _simulate(cfg: RunConfig, out: Path, checkpoint: str, n_episodes: int) -> None:
    if n_episodes <= 0:
        raise EmptyInput("simulate needs at least one episode")
    catalog, scorer, vocab = _load_checkpoint(checkpoint)
    judge = SyntheticJudge(catalog=catalog, nominal_turns=cfg.env_horizon, seed=cfg.seed)

    def run(policy_name: str, policy) -> dict:
        env = _make_env(cfg, catalog)
        rng = np.random.default_rng(cfg.seed + 17)
        sequences: list[list[int]] = []
        rewards: list[list[float]] = []
        model_q: list[float] = []
        for _ in range(n_episodes):
            state = env.reset(seed=int(rng.integers(2**31)))
            done = False
            actions: list[int] = []
            scores: list[float] = []
            while not done:
                if policy is None:
                    action = int(rng.integers(1, len(catalog) + 1))
                else:
                    qs = scorer.q_all(state, catalog, vocab)
                    action = int(np.argmax(qs)) + 1
                    model_q.append(float(qs[action - 1]))
                response = response_template(catalog.by_id(action).name)
                scores.append(float(judge.score(state, action, response)))
                state, _, done = env.step(action)
                actions.append(action)
            sequences.append(actions)
            rewards.append(scores)
        avg_r, avg_v = avg_reward_value(rewards, cfg.gamma)
        matrix = transition_matrix(sequences, len(catalog))
        row = {
            "policy": policy_name,
            "episodes": n_episodes,
            "avg_reward": avg_r,
            "avg_value": avg_v,
            "stage_upper_mass": stage_upper_mass(matrix, catalog),
        }
        if model_q:
            row["mean_model_q"] = float(np.mean(model_q))
        return row, matrix

    greedy_row, greedy_matrix = run("greedy", scorer)
    random_row, _ = run("random", None)
    _write_json(out / "simulate.json", {"rows": [greedy_row, random_row], "gamma": cfg.gamma})
    write_matrix_csv(out / "transition.csv", greedy_matrix, catalog)
    _write_manifest(out, "simulate", cfg, [checkpoint])
    for row in (greedy_row, random_row):
        print(
            f"{row['policy']:>7}: reward={row['avg_reward']:.3f} value={row['avg_value']:.1f} "
            f"upper_mass={row['stage_upper_mass']:.3f}"
        )


def _ingest_stats(cfg: RunConfig, out: Optional[Path], data: str, fmt: str) -> None:
    if fmt == "esconv":
        episodes = load_esconv(data)
    else:
        episodes = load_plain_dialogues(data)
    stats = corpus_stats(episodes)
    payload = stats.to_dict()
    print(json.dumps(payload, indent=1, sort_keys=True))
    if out is not None:
        _write_json(out / "stats.json", payload)
        _write_manifest(out, "ingest-stats", cfg, [data])


# -- argument wiring -----------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--mode", choices=["env", "dataset"])
    parser.add_argument("--env", dest="mode_alias", choices=["staged"], help="shorthand for --mode env")
    parser.add_argument("--backend", choices=["mlp", "seq"])
    parser.add_argument("--reward", choices=["imit", "distill", "env"])
    parser.add_argument("--dataset-path", dest="dataset_path")
    parser.add_argument("--testset", dest="testset_path")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--rollout-episodes", dest="rollout_episodes", type=int)
    parser.add_argument("--demo-episodes", dest="demo_episodes", type=int)
    parser.add_argument("--eval-episodes", dest="eval_episodes", type=int)
    parser.add_argument("--deterministic", action="store_const", const=True)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {
        name: getattr(args, name)
        for name in _FIELDS
        if hasattr(args, name) and getattr(args, name) is not None
    }
    if getattr(args, "mode_alias", None):
        overrides["mode"] = "env"
    return load_run_config(getattr(args, "config", None), overrides=overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="supportq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("train", "eval", "sweep", "simulate"):
        p = sub.add_parser(name)
        _add_common(p)
        if name in ("eval", "simulate"):
            p.add_argument("--checkpoint", required=True)
        if name == "simulate":
            p.add_argument("--episodes", type=int, default=200)
        if name == "sweep":
            p.add_argument(
                "--gammas", default="0.75,0.80,0.85,0.90,0.95", help="comma-separated list"
            )

    p = sub.add_parser("ingest-stats")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=["esconv", "plain"], default="esconv")

    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if cfg.deterministic:
            _limit_threads()
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "train":
            _train(cfg, out)
        elif args.command == "eval":
            _eval(cfg, out, args.checkpoint)
        elif args.command == "sweep":
            gammas = [float(x) for x in args.gammas.split(",") if x]
            _sweep(cfg, out, gammas)
        elif args.command == "simulate":
            _simulate(cfg, out, args.checkpoint, args.episodes)
        elif args.command == "ingest-stats":
            _ingest_stats(cfg, out, args.data, args.format)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, UnknownStrategy, UnknownEmotion, FileNotFoundError, EmptyInput, InsufficientData, LengthMismatch) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
