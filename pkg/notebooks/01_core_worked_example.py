# %% [markdown]
# # Giant-step and baby-step bounds on a six-row trace
#
# A level sensor (LIT101) is watched together with its two nearest actuators,
# an inlet valve (MV101) and a pump (P101). Each record's actuator states are
# joined into a switchboard key such as `1|1`; bounds are learnt per key.

# %%
import io

from giby import (BoundStore, Kind, RelationshipGraph, baby_step_test, baby_step_train, linearize,
                  parse_dataset, render_explanation)

graph = RelationshipGraph.from_config("""
[sensors]
LIT101 = MV101, P101
[actuators]
MV101 = 0,1,2
P101 = 1,2
""")

normal = parse_dataset(io.StringIO("""Index,LIT101,MV101,P101
1,121.2518,1,1
2,121.4088,1,1
3,121.4099,1,1
4,121.6050,0,1
5,121.6835,0,1
6,122.1546,0,1
"""), graph=graph)

# %% [markdown]
# The baby step works on one-step differences. A difference belongs to the
# state of the later record, so row 4's jump lands in state `0|1`.

# %%
for sb, group in linearize(normal, "LIT101", graph, Kind.BABY).items():
    print(sb, [round(float(x), 4) for x in group.values])

store = BoundStore()
store.update(baby_step_train("LIT101", normal, graph))
for e in store:
    print(f"{e.sb}: [{e.lb:.4f}, {e.ub:.4f}] from {e.sample_count} diffs")

# %% [markdown]
# A test trace where the level suddenly drops while the valve and pump stay
# in state `1|1`. The first record has no predecessor, so only the second
# gets a verdict.

# %%
attack = parse_dataset(io.StringIO("Index,LIT101,MV101,P101\n1,123.2151,1,1\n2,121.6835,1,1\n"), graph=graph)
for t in (1, 2):
    v = baby_step_test(t, "LIT101", attack, graph, store)
    text, record = render_explanation(v)
    print(v.breach.value, "|", text)
