# %% [markdown]
# # Empirical not-anomaly probabilities and window products
#
# Readings that stay inside the min/max bounds can still be unusual: a
# stream that repeatedly hits rarely seen values. Each reading gets a
# not-anomaly probability from the frequency table of its state group, and
# products of consecutive probabilities are bounded by their training range.

# %%
from giby import Kind
from giby.extended import (ExtendedStore, FrequencyTable, anom_probability, extended_test, find_min_max_product,
                           lookup_test_probability, pr_left, pr_right)

# %% [markdown]
# ## Tail masses
# Seven distinct values with 36 readings in total. The third value has 3
# readings below it and 31 above.

# %%
table = FrequencyTable("LIT101", "1|1", Kind.GIANT, tuple(range(7)), (1, 2, 2, 8, 8, 8, 7))
pl, pr = pr_left(3, table), pr_right(3, table)
print(f"left {table.cum_below[2]}/{table.total} = {pl:.3f}, right {table.cum_above[2]}/{table.total} = {pr:.3f}")
print("anomaly probability", anom_probability(pl, pr))

# %% [markdown]
# The ladder has overrides: a one-sided tail returns that tail's mass, and
# a small combined mass returns the sum.

# %%
for case in [(0.0, 0.0), (0.5, 0.5), (0.3, 0.0), (0.2, 0.2), (0.1, 0.6)]:
    print(case, "->", anom_probability(*case))

# %% [markdown]
# ## Window products
# Five training probabilities give three full windows of length 3; their
# min and max form the envelope.

# %%
train_probs = [0.8, 0.2, 0.6, 0.6, 0.2]
(wb,) = find_min_max_product(train_probs, [3], "LIT101", "1|1", Kind.BABY).values()
print(f"window envelope [{wb.min_prod:.3f}, {wb.max_prod:.3f}]")

# %% [markdown]
# A test stream of identical diffs. Each one is a trained but middling value
# (probability 0.4), so the window product drops under the envelope even
# though no single reading is out of bounds.

# %%
store = ExtendedStore(window_lens=(3,))
store.add_window(wb)
store.add_table(FrequencyTable("LIT101", "1|1", Kind.BABY, (0.01, 0.05, 0.2, 0.3), (2, 1, 4, 3)))
print("p(0.05) =", lookup_test_probability(0.05, store.tables[(Kind.BABY, "LIT101", "1|1")]))
for v in extended_test([(i, "LIT101", 0.05, "1|1") for i in (2, 3, 4)], store, Kind.BABY):
    print(v.index, v.breach.value, f"product {v.observed:.3f}")
