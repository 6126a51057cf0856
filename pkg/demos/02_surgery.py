"""Grow and prune a child network without changing what it computes.

New units arrive with zero outgoing weights, so adding them is invisible to
the output. Pruning removes the units with the smallest outgoing weights, so freshly
added units are the first to go.

Run: python demos/02_surgery.py
"""

import numpy as np

from gcl.childnet import ChildNet
from gcl.controller import apply_actions
from gcl.data import SbmParams, generate_sbm

rng = np.random.default_rng(1)
data = generate_sbm(SbmParams(classes=4, nodes_per_class=25, seed=1))
g, x = data.graph, data.features

for variant in ("gcn", "sage", "gat"):
    net = ChildNet(variant, x.shape[1], (20, 20), rng=rng)
    net.expand_head([0, 1], 0, rng)
    before = net.forward(g, x).values

    apply_actions(net, (8, 0, 4, 0), rng)          # ADD1, DEL1, ADD2, DEL2
    grown = net.forward(g, x).values
    print(f"{variant}: widths {net.widths} after growth, max |output change| "
          f"{np.max(np.abs(grown - before)):.1e}")

    # Fresh units have zero outgoing weights, so they are the first pruning candidates.
    picked = net.select_prune_units(1, 4).tolist()
    net.resize_layer(1, delete=4, rng=rng)
    print(f"  pruned layer-2 units {picked}: widths {net.widths}, max |output change| "
          f"{np.max(np.abs(net.forward(g, x).values - before)):.1e}")

# Widths never drop below one, even when deletion asks for more.
net = ChildNet("gcn", x.shape[1], (2, 2), rng=rng)
apply_actions(net, (0, 3, 0, 3), rng)
print(f"delete 3 from width 2 keeps one unit: widths {net.widths}")
