"""Train the LSTM controller on a bandit with one rewarding action sequence.

The controller emits ADD1, DEL1, ADD2, DEL2. Only the target sequence earns
reward 1. REINFORCE with a running-mean baseline should find it.

Run: python demos/03_controller_bandit.py
"""

import numpy as np

from gcl.controller import ActionSpace, Baseline, LstmPolicy, reinforce_step, sample

space = ActionSpace()
target = (3, 2, 1, 0)  # token indices, i.e. ADD1=6, DEL1=2, ADD2=2, DEL2=0
print(f"action space: add {space.add_values} del {space.del_values}, {space.size()} sequences")
print(f"target actions {tuple(v[t] for v, t in zip(space.position_values(), target))}")

rng = np.random.default_rng(0)
policy = LstmPolicy(space, lr=0.02, rng=rng)
baseline = Baseline()
for step in range(1, 201):
    batch = sample(policy, rng, batch=64)
    for ep in batch:
        ep.set_reward(float(ep.tokens == target))
    reinforce_step(policy, batch, baseline)
    prob = float(np.exp(policy.sequence_log_probs([target]))[0])
    if step % 2 == 0 or prob > 0.9:
        print(f"step {step:3d}  P(target) {prob:.3f}  baseline {baseline.value:.3f}")
    if prob > 0.9:
        break
