"""Scratch: post-mortem one failing episode."""
import sys
sys.path.insert(0, "src")
from i2l.topology import preset
from i2l.simulator import run_episode, detect_collisions, SimParams, next_junction_ahead
from i2l.policies import RuleTreePolicy, contest_features

topo_name = sys.argv[1] if len(sys.argv) > 1 else "A"
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
params = SimParams()
topo = preset(topo_name)
policy = RuleTreePolicy()
h = run_episode(topo, policy, 11, 1000, seed, params=params)
print("termination:", h.termination, "steps:", h.steps)
final = h.records[-1][0]
pairs = detect_collisions(final, topo, params)
print("colliding pairs:", pairs)
for i, j in pairs:
    vi, vj = final.vehicles[i], final.vehicles[j]
    print(f"  veh {i}: loop {vi.loop} pos {vi.pos:.2f} v {vi.speed:.2f}")
    print(f"  veh {j}: loop {vj.loop} pos {vj.pos:.2f} v {vj.speed:.2f}")
    same_loop = vi.loop == vj.loop
    if same_loop:
        gap = topo.forward_distance(vi.loop, vi.pos, vj.pos)
        gap2 = topo.forward_distance(vi.loop, vj.pos, vi.pos)
        print(f"  same loop, gaps {gap:.2f} / {gap2:.2f}")
    else:
        print("  junction collision")
    # trace the last few steps of these vehicles
    for t in range(max(0, len(h.records) - 8), len(h.records)):
        st, acts = h.records[t]
        line = f"  t={st.time}"
        for k in (i, j):
            vk = st.vehicles[k]
            f = contest_features(st, topo, k)
            a = acts[k] if acts else None
            line += (f" | v{k}: loop{vk.loop} p={vk.pos:7.2f} s={vk.speed:.2f} a={a}"
                     f" f2={f[1]:6.2f} f3={f[2]:6.2f} f4={f[3]:7.2f}")
        print(line)
print("junctions:")
for ji, j in enumerate(topo.junctions):
    print(" ", ji, j.a, j.b)
