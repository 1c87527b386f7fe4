# %% [markdown]
# # Scoring detections and timing the per-record check
#
# Two ways to count the same outcomes: conventionally, where every missed
# attack is a false negative, and with attacks whose readings stayed inside
# the safety bounds counted as negatives.

# %%
import json
from pathlib import Path

from giby.cli import bench
from giby.metrics import ConfusionCounts, EvalUnit, Policy, evaluate, scores

fixture = Path(__file__).resolve().parent.parent / "tests" / "data" / "attack_table.json"
units = [EvalUnit(**u) for u in json.loads(fixture.read_text())["units"]]

for policy in Policy:
    print(evaluate(units, policy).to_text().split("\n\n")[0], end="\n\n")

# %% [markdown]
# With no attacks at all, precision and recall have empty denominators; they
# are reported as 1 and flagged.

# %%
print(scores(ConfusionCounts(tp=0, fp=0, tn=10, fn=0)).vacuous)

# %% [markdown]
# ## Latency
# Replays a normal plant trace through the streaming detector and reports
# milliseconds per record per sensor.

# %%
for step, s in bench(records=20000).items():
    print(f"{step:<14} mean {s['mean']:.4f} ms  p99 {s['p99']:.4f} ms  over {s['records']} records")
