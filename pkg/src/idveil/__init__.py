"""idveil: adversarial protection of portrait images against
instruction-guided diffusion editing.

The flagship protection perturbs an image, within an imperceptible
L-infinity budget, so that edits produced by an instruction-guided editor
lose the subject's biometric identity. The package also ships the full
baseline zoo (targeted/untargeted encoder attacks, VAE attack, CW-L2, EOT),
seven evaluation metrics, purification transforms, and a deterministic
experiment harness with toy backends for desk-scale verification.
"""

from idveil.attacks import (
    ATTACKS,
    AttackConfig,
    ProtectionResult,
    cvl_attack,
    cvl_d_attack,
    cvl_dp_attack,
    cw_l2_attack,
    encoder_attack_targeted,
    encoder_attack_untargeted,
    eot_encoder_attack,
    facelock_protect,
    run_attack,
    vae_attack,
)
from idveil.backends import (
    BackendBundle,
    EditParams,
    face_region_mask,
    make_toy_bundle,
    real_bundle,
)
from idveil.core import (
    Perturbation,
    RngState,
    clamp_pixels,
    clip_linf,
    cosine_sim,
    read_png,
    write_png,
)
from idveil.purification import PurifySpec, purify

__version__ = "0.1.0"

__all__ = [
    "ATTACKS",
    "AttackConfig",
    "BackendBundle",
    "EditParams",
    "Perturbation",
    "ProtectionResult",
    "PurifySpec",
    "RngState",
    "clamp_pixels",
    "clip_linf",
    "cosine_sim",
    "cvl_attack",
    "cvl_d_attack",
    "cvl_dp_attack",
    "cw_l2_attack",
    "encoder_attack_targeted",
    "encoder_attack_untargeted",
    "eot_encoder_attack",
    "face_region_mask",
    "facelock_protect",
    "make_toy_bundle",
    "purify",
    "read_png",
    "real_bundle",
    "run_attack",
    "vae_attack",
    "write_png",
]
