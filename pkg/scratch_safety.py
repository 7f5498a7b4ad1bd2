"""Scratch: empirical safety sweep for the hand-coded controllers."""
import sys, time
sys.path.insert(0, "src")
from collections import Counter

from i2l.topology import preset
from i2l.simulator import run_episode, SimParams
from i2l.policies import RuleTreePolicy, ProportionalPolicy, RandomPolicy

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 30
max_steps = int(sys.argv[2]) if len(sys.argv) > 2 else 1000
which = sys.argv[3] if len(sys.argv) > 3 else "rule"

params = SimParams()
for topo_name in "ABCDE":
    topo = preset(topo_name)
    if which == "rule":
        policy = RuleTreePolicy()
    elif which == "prop":
        policy = ProportionalPolicy(params=params)
    else:
        policy = RandomPolicy()
    terms = Counter()
    fail_steps = []
    t0 = time.time()
    for seed in range(n_seeds):
        h = run_episode(topo, policy, n_vehicles=11, max_steps=max_steps, seed=seed,
                        params=params)
        terms[h.termination] += 1
        if h.termination != "ran-to-limit":
            fail_steps.append((seed, h.termination, h.steps))
    dt = time.time() - t0
    print(f"{topo_name}: {dict(terms)}  failures={fail_steps[:8]}  ({dt:.1f}s)")
