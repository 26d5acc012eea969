"""Run every registered attack on the same probe and compare them.

All nine methods share the projection machinery, so each row shows the exact
budget, plus the first and last value of its own objective: the ascent
attacks (recognizer/feature disruption, untargeted latent displacement)
climb, the descent attacks (targeted encoder, VAE-roundtrip, CW) fall.
"""

import numpy as np

from idveil import ATTACKS, AttackConfig, RngState, make_toy_bundle
from idveil.attacks import ASCENT_METHODS

bundle = make_toy_bundle(seed=0, image_size=32)
x = RngState(11, "demo-portrait").generator().uniform(0, 1, size=(32, 32, 3))
cfg = AttackConfig(rng=RngState(2, "attack"))

print(f"{'method':20s} {'dir':7s} {'max|delta|':>10s} {'objective first':>16s} {'last':>12s}")
for name in sorted(ATTACKS):
    res = ATTACKS[name](bundle, x, cfg)
    direction = "ascent" if name in ASCENT_METHODS else "descent"
    first = res.loss_trace[0]["total"]
    last = res.loss_trace[-1]["total"]
    linf = np.abs(res.protected - x).max()
    print(f"{name:20s} {direction:7s} {linf:>10.6f} {first:>16.6f} {last:>12.6f}")
