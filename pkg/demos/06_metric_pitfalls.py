"""Why pixel-statistics metrics can crown the wrong defense.

SSIM and PSNR score a defense by how far its edit sits from the no-defense
edit, treating that single image as gold. Two hand-built "defenses" break
that logic: defense A recolors the edit heavily (big pixel distance, same
person), defense B nudges the image along a smooth low-frequency direction
chosen against the face embedding (small pixel distance, identity gone).
SSIM prefers A; the face-recognition score prefers B. The harness carries
both metric families so this disagreement is visible, not hidden.
"""

import numpy as np

from idveil import EditParams, RngState, clamp_pixels, make_toy_bundle
from idveil import autodiff as ad
from idveil import metrics as M

bundle = make_toy_bundle(seed=0, image_size=32)
src = RngState(2, "probe-image").generator().uniform(0, 1, size=(32, 32, 3))
edit_plain = bundle.editor.edit(
    src, "let the person wear a hat", EditParams(image_size=32), RngState(3, "edit")
)

# defense A: blend the edit toward a flat color (identity survives)
edit_a = 0.25 * edit_plain + 0.75 * np.array([0.85, 0.35, 0.25])

# defense B: smooth push away from the source identity (identity erased)
emb_src = bundle.face.embed(src)
edit_b = edit_plain.copy()
for _ in range(120):
    node = ad.leaf(edit_b)
    g = ad.grad(ad.cosine(bundle.face.embed(node), emb_src), node)
    g = ad.gaussian_blur(g, 13, 4.0)
    edit_b = edit_b - 0.01 * g / (np.abs(g).max() + 1e-12)
    edit_b = clamp_pixels(edit_plain + np.clip(edit_b - edit_plain, -0.25, 0.25))

rows = [
    ("no defense", edit_plain),
    ("defense A (recolor)", edit_a),
    ("defense B (identity)", edit_b),
]
print(f"{'edit':22s} {'ssim vs plain':>14s} {'fr vs source':>13s}")
for label, img in rows:
    ssim = M.ssim(edit_plain, img)
    fr = M.fr_score(bundle, src, img)
    print(f"{label:22s} {ssim:14.4f} {fr:13.4f}")

ssim_a, ssim_b = M.ssim(edit_plain, edit_a), M.ssim(edit_plain, edit_b)
fr_a, fr_b = M.fr_score(bundle, src, edit_a), M.fr_score(bundle, src, edit_b)
print()
print(f"SSIM ranks A as the stronger defense (lower: {ssim_a:.3f} < {ssim_b:.3f})")
print(f"FR ranks B as the stronger defense (lower: {fr_b:.3f} < {fr_a:.3f})")
print("pixel distance from one reference edit is not identity protection")
