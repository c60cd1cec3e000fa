"""
Building the global item-transition graph
=========================================

Every user's history contributes fractional co-occurrence weight to a
shared item-item graph: a pair of items at offset k inside the sliding
window adds 1/k to the directed edge between them.  The finalized graph
is degree-normalized, symmetric, and carries a unit self-loop on every
item that appears anywhere.
"""

import numpy as np

from graphseqrec import ItemSequence, accumulate, normalize_finalize

# Three tiny histories.  Items 1..5; the window is 2, so consecutive
# pairs add 1 and skip-one pairs add 1/2.
sequences = [
    ItemSequence(0, [1, 2, 3]),
    ItemSequence(1, [2, 3, 4]),
    ItemSequence(2, [5]),
]

directed = accumulate(sequences, window=2)
print("directed accumulation (item_i -> item_j : weight):")
for (i, j), w in sorted(directed.weights.items()):
    print(f"  {i} -> {j} : {w}")

# 1 -> 2 and 2 -> 3 appear as consecutive pairs; 1 -> 3 only at offset 2.
assert directed.weights[(2, 3)] == 2.0  # once in each of two sequences
assert directed.weights[(1, 3)] == 0.5

graph = normalize_finalize(directed)
dense = graph.dense()

print("\nfinalized graph (zero row/column 0 is the padding slot):")
with np.printoptions(precision=3, suppress=True):
    print(dense)

# Symmetry and self-loops are structural guarantees.
assert (dense == dense.T).all()
assert dense[5, 5] == 1.0  # item 5 never co-occurred but still gets a loop

# The text dump round-trips through plain tab-separated triples.
graph.dump("/tmp/transition_graph.tsv")
print("\nfirst dump lines:")
with open("/tmp/transition_graph.tsv") as fh:
    for line in list(fh)[:5]:
        print(" ", line.rstrip())
