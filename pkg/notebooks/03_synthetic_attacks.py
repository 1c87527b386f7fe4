# %% [markdown]
# # Synthetic plant, injected attacks and what each detector sees
#
# A single-tank plant with a valve, a pump and a flow meter. Attacks are
# injected into a clean trace; an independent brute-force oracle labels
# each one CoreDetectable, ExtendedDetectable or Undetectable before the
# detector runs.

# %%
from collections import Counter

from giby import Detector, Kind, train
from giby.synthgen import (AttackKind, AttackSpec, DetectabilityOracle, PlantScenario, generate_normal,
                           inject_attacks, plan_stealth_ramp, plant_graph)

data = generate_normal(PlantScenario(seed=1, duration=20000))
graph = plant_graph()
trained = train(data, graph)
print(f"{len(data)} records, {len(trained.core)} core bounds, {len(trained.extended)} frequency tables")

# %%
ub = max(e.ub for e in trained.core if e.sensor == "LIT101" and e.kind is Kind.GIANT)
specs = [
    AttackSpec(AttackKind.SPOOF_CONSTANT, "LIT101", 3000, 3010, value=10 * ub, id="spoof"),
    AttackSpec(AttackKind.ACTUATOR_FLIP, "P101", 6000, 6020, id="pump-flip"),
    AttackSpec(AttackKind.UNSEEN_STATE_FORCE, "P102", 7000, 7010, value=2, id="backup-pump"),
    AttackSpec(AttackKind.RAMP_DRIFT, "LIT101", 11250, delta=0.05, tsteps=100, id="fast-ramp"),
]

# %% [markdown]
# A slow drift of 0.01 per step for 200 steps. The planner picks a launch
# time at which the oracle predicts every bound and window stays inside
# its training range, which is how a careful attacker would time it.

# %%
oracle = DetectabilityOracle(data, graph)
ramp = plan_stealth_ramp(data, graph, "LIT101", 0.01, 200, oracle=oracle, others=specs)
specs.append(ramp)
attacked, manifest = inject_attacks(data, specs, graph, oracle=oracle)

# %%
hits = {}
for v in Detector(graph, trained.core, trained.extended).run(attacked):
    hits.setdefault(v.index, Counter())[v.detector] += 1

for a in manifest["attacks"]:
    seen = Counter()
    for t in a["indices"]:
        seen.update(hits.get(t, {}))
    first = next((t for t in a["indices"] if t in hits), None)
    print(f"{a['id']:<14}{a['expected']:<20}first flag {first}  by {dict(seen) or '-'}")
