"""The evaluation metrics on a small end-to-end run.

Strategy metrics (accuracy, macro-F1 proficiency, Bradley-Terry preference
bias), response-overlap metrics (BLEU-2, ROUGE-L, Distinct-2, CIDEr), and the
analysis artifacts (confusion and transition matrices, stage-order mass,
averaged reward and summed discounted return).
"""

from supportq import (
    MlpConfig,
    MlpScorer,
    StagedEnv,
    SyntheticJudge,
    accuracy,
    avg_reward_value,
    bleu2,
    bt_bias,
    cider,
    confusion_matrix,
    default_catalog,
    derive_transitions,
    distinct2,
    macro_f1,
    rouge_l,
    stage_upper_mass,
    transition_matrix,
)
from supportq.env import response_template

catalog = default_catalog()
env = StagedEnv()
episodes = env.demo_episodes(60, seed=4)

scorer = MlpScorer(MlpConfig(n_actions=len(catalog)), seed=1)  # untrained baseline
pred, gold, hyps, refs, sequences = [], [], [], [], []
for ep in episodes:
    actions = []
    for tr in derive_transitions(ep):
        choice = scorer.select_strategy(tr.state, catalog)
        pred.append(choice)
        gold.append(tr.action)
        hyps.append(response_template(catalog.by_id(choice).name))
        refs.append(tr.response or "")
        actions.append(choice)
    sequences.append(actions)

k = len(catalog)
print(f"evaluated {len(gold)} decisions from {len(episodes)} episodes (untrained scorer)")
print(f"  accuracy        {accuracy(pred, gold):.4f}")
print(f"  proficiency     {macro_f1(pred, gold, k):.4f}   (macro-F1)")
print(f"  preference bias {bt_bias(pred, gold, k):.4f}   (0 = unbiased)")
print(f"  BLEU-2          {bleu2(hyps, refs):.4f}")
print(f"  ROUGE-L         {rouge_l(hyps, refs):.4f}")
print(f"  Distinct-2      {distinct2(hyps):.4f}")
print(f"  CIDEr           {cider(hyps, refs):.4f}")

counts = confusion_matrix(pred, gold, k)
print("\nconfusion matrix (rows = predicted, cols = gold):")
print(counts)

trans = transition_matrix(sequences, k)
print(f"\nstage-order mass of predicted transitions: {stage_upper_mass(trans, catalog):.3f}")
print("(a stage-faithful planner approaches 1.0; uniform random sits at 33/49)")

judge = SyntheticJudge(catalog=catalog, seed=0)
reward_sequences = []
for ep, actions in zip(episodes, sequences):
    turns = derive_transitions(ep)
    reward_sequences.append(
        [float(judge.score(tr.state, a, response_template(catalog.by_id(a).name)))
         for tr, a in zip(turns, actions)]
    )
avg_r, avg_v = avg_reward_value(reward_sequences, gamma=0.85)
print(f"\n<reward> {avg_r:.3f} per decision, <value> {avg_v:.1f} summed discounted return")
