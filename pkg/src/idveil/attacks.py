"""Perturbation-generation algorithms.

The flagship defense runs sign-PGD ascent through the editing model's latent
codec, maximizing facial-recognition disparity and feature-embedding disparity
between the decoded image and the source, with an untargeted latent-shift
regularizer; its design ladder (recognizer-only, recognizer-through-codec,
plus pixel penalty) and four baselines (targeted/untargeted encoder attacks,
VAE attack, CW-L2 with tanh reparametrization, EOT encoder attack) share the
same projection and tracing machinery.

Conventions, applied uniformly:
  - the facial-recognition loss is the negative cosine similarity, maximized;
  - delta is initialized from N(0, I) scaled by epsilon/3 then projected, so
    the budget holds from step 0;
  - each step clips delta to the epsilon-ball, re-forms the protected image,
    clamps it to [0, 1], and redefines delta as the exact difference, so both
    constraints hold simultaneously at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from idveil import autodiff as ad
from idveil.backends.base import BackendBundle, face_region_mask
from idveil.core import (
    ArgumentError,
    Perturbation,
    RngState,
    as_image,
    project_perturbation,
)
from idveil.purification import PurifySpec

LOSS_NAMES = ("fr", "fe", "latent", "pixel", "l2",
              "encoder_targeted", "encoder_untargeted", "vae_target")

DIFFERENTIABLE_TRANSFORMS = ("none", "blur", "rotate")


class AttackError(RuntimeError):
    """Raised when an attack run hits a non-finite loss or gradient."""


@dataclass(frozen=True)
class AttackConfig:
    """Optimization hyperparameters; defaults are the reference settings
    (epsilon 0.02, step size 0.003, 100 steps, latent weight 0.2)."""

    epsilon: float = 0.02
    alpha: float = 0.003
    steps: int = 100
    lambda_latent: float = 0.2
    lambda_aux: float = 1.0
    loss_toggles: frozenset = frozenset({"fr", "fe", "latent"})
    cw_c: float = 1.0
    eot_beta: float = 0.1
    eot_samples: int = 1
    rng: RngState = field(default_factory=lambda: RngState(0, "attack"))

    def __post_init__(self):
        # epsilon 0 and steps 0 are legal degenerate settings (budget sweeps
        # start at 0; zero steps returns the projected init with empty trace)
        if self.epsilon < 0:
            raise ArgumentError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.alpha < 0:
            raise ArgumentError(f"alpha must be >= 0, got {self.alpha}")
        if self.steps < 0:
            raise ArgumentError(f"steps must be >= 0, got {self.steps}")
        if self.lambda_latent < 0 or self.lambda_aux < 0:
            raise ArgumentError("loss weights must be nonnegative")
        if self.eot_samples < 1:
            raise ArgumentError("eot_samples must be >= 1")
        unknown = frozenset(self.loss_toggles) - frozenset(LOSS_NAMES)
        if unknown:
            raise ArgumentError(f"unknown loss toggles: {sorted(unknown)}")


@dataclass(frozen=True)
class ProtectionResult:
    """Protected image, its perturbation, and the per-step loss trace."""

    protected: np.ndarray
    perturbation: Perturbation
    loss_trace: tuple
    method_tag: str

    def __post_init__(self):
        if self.perturbation.linf > self.perturbation.epsilon:
            raise AssertionError(
                f"budget violated: {self.perturbation.linf} > {self.perturbation.epsilon}"
            )


def _scalar(t) -> float:
    return float(t.value) if isinstance(t, ad.Node) else float(t)


# ---------------------------------------------------------------------------
# loss terms


def fr_loss(bundle: BackendBundle, x_decoded, x_src) -> float:
    """Negative facial similarity between decoded and source; higher means
    more biometric disparity."""
    return _fr_term(bundle, x_decoded, bundle.face.embed(x_src))


def _fr_term(bundle, x_decoded, emb_src):
    emb_d = bundle.face.embed(x_decoded)
    out = ad.mul(ad.cosine(emb_d, emb_src), -1.0)
    return out if isinstance(out, ad.Node) else float(out)


def fe_loss(bundle: BackendBundle, x_decoded, x_src) -> float:
    """Weighted sum of per-layer normalized squared feature distances;
    higher means more perceptual disparity."""
    return _fe_term(bundle, x_decoded, bundle.feat.features(x_src))


def _fe_term(bundle, x_decoded, feats_src):
    feats = bundle.feat.features(x_decoded)
    total = None
    for w, f, s in zip(bundle.feat.layer_weights, feats, feats_src):
        size = f.value.size if isinstance(f, ad.Node) else f.size
        term = ad.mul(ad.sum_sq(ad.sub(f, s)), w / size)
        total = term if total is None else ad.add(total, term)
    return total if isinstance(total, ad.Node) else float(total)


def latent_loss(bundle: BackendBundle, x_protected, z_src) -> float:
    """Squared latent displacement of the protected image from the source
    latent (the untargeted latent-wise regularizer)."""
    out = ad.sum_sq(ad.sub(bundle.codec.encode(x_protected), z_src))
    return out if isinstance(out, ad.Node) else float(out)


# ---------------------------------------------------------------------------
# shared sign-PGD engine


def _init_state(x: np.ndarray, cfg: AttackConfig):
    gen = cfg.rng.child("delta_init").generator()
    raw = gen.standard_normal(x.shape) * (cfg.epsilon / 3.0)
    return project_perturbation(x, raw, cfg.epsilon)


def _require_finite(entry: dict, step: int, tag: str):
    for name, v in entry.items():
        if not np.isfinite(v):
            raise AttackError(f"{tag}: non-finite loss term {name!r}={v} at step {step}")


def _sign_pgd(
    x: np.ndarray,
    cfg: AttackConfig,
    build: Callable,
    *,
    direction: float,
    method_tag: str,
    on_step=None,
) -> ProtectionResult:
    """Shared loop: trace losses at the current iterate, step along the sign
    of the gradient, project. ``build(xp_node, delta_node)`` returns the
    scalar objective node and its named term nodes."""
    protected, delta = _init_state(x, cfg)
    trace = []
    for step in range(cfg.steps):
        xp = ad.leaf(protected)
        delta_node = ad.sub(xp, x)
        total, terms = build(xp, delta_node)
        entry = {name: _scalar(t) for name, t in terms.items()}
        entry["total"] = _scalar(total)
        _require_finite(entry, step, method_tag)
        trace.append(entry)
        if on_step is not None:
            on_step(step, protected, entry)
        g = ad.grad(total, xp)
        if not np.isfinite(g).all():
            raise AttackError(f"{method_tag}: non-finite gradient at step {step}")
        proposal = delta + (direction * cfg.alpha) * np.sign(g)
        if not np.array_equal(proposal, delta):
            protected, delta = project_perturbation(x, proposal, cfg.epsilon)
    return ProtectionResult(
        protected=protected,
        perturbation=Perturbation(delta, cfg.epsilon, method_tag),
        loss_trace=tuple(trace),
        method_tag=method_tag,
    )


def _codec_objective(bundle: BackendBundle, x: np.ndarray, cfg: AttackConfig, mask):
    """Toggled objective through the latent codec: fr + lambda_aux*fe
    + lambda_latent*latent (+ lambda_aux*pixel when masked)."""
    toggles = frozenset(cfg.loss_toggles)
    z_src = bundle.codec.encode(x)
    emb_src = bundle.face.embed(x) if "fr" in toggles else None
    feats_src = bundle.feat.features(x) if "fe" in toggles else None
    weights = {
        "fr": 1.0,
        "fe": cfg.lambda_aux,
        "latent": cfg.lambda_latent,
        "pixel": cfg.lambda_aux,
    }
    if "pixel" in toggles and mask is None:
        raise ArgumentError("the pixel loss term requires a region mask")
    # an all-zero mask makes the pixel norm identically zero with a singular
    # gradient; the term vanishes, so drop it from the graph entirely
    use_pixel = "pixel" in toggles and mask is not None and bool(np.any(mask))

    def build(xp, delta_node):
        terms = {}
        zp = bundle.codec.encode(xp)
        if "fr" in toggles or "fe" in toggles:
            xd = bundle.codec.decode(zp)
        if "fr" in toggles:
            terms["fr"] = _fr_term(bundle, xd, emb_src)
        if "fe" in toggles:
            terms["fe"] = _fe_term(bundle, xd, feats_src)
        if "latent" in toggles:
            terms["latent"] = ad.sum_sq(ad.sub(zp, z_src))
        if use_pixel:
            terms["pixel"] = ad.sqrt(ad.sum_sq(ad.mul(delta_node, mask)))
        total = None
        for name in ("fr", "fe", "latent", "pixel"):
            if name not in terms:
                continue
            w = weights[name]
            contrib = terms[name] if w == 1.0 else ad.mul(terms[name], w)
            total = contrib if total is None else ad.add(total, contrib)
        if total is None:
            raise ArgumentError(f"no loss terms enabled: toggles={sorted(toggles)}")
        return total, terms

    return build


def _codec_family(bundle, x, cfg, mask, tag, on_step=None) -> ProtectionResult:
    x = as_image(x)
    build = _codec_objective(bundle, x, cfg, mask)
    return _sign_pgd(x, cfg, build, direction=+1.0, method_tag=tag, on_step=on_step)


# ---------------------------------------------------------------------------
# the design ladder


def facelock_protect(bundle: BackendBundle, x, cfg: AttackConfig, *, on_step=None):
    """Flagship protection: ascend fr + fe + lambda*latent through the codec
    round-trip so the edited output loses the subject's biometric identity."""
    return _codec_family(bundle, x, cfg, None, "facelock", on_step)


def cvl_attack(bundle: BackendBundle, x, cfg: AttackConfig, *, on_step=None):
    """Design I: attack the face recognizer directly, codec not in the loop."""
    x = as_image(x)
    emb_src = bundle.face.embed(x)

    def build(xp, delta_node):
        fr = _fr_term(bundle, xp, emb_src)
        return fr, {"fr": fr}

    return _sign_pgd(x, cfg, build, direction=+1.0, method_tag="cvl", on_step=on_step)


def cvl_d_attack(bundle: BackendBundle, x, cfg: AttackConfig, *, on_step=None):
    """Design II: recognizer disparity of the codec-decoded image only."""
    cfg_fr = replace(cfg, loss_toggles=frozenset({"fr"}), lambda_latent=0.0)
    return _codec_family(bundle, x, cfg_fr, None, "cvl_d", on_step)


def cvl_dp_attack(bundle: BackendBundle, x, cfg: AttackConfig, *, mask=None, on_step=None):
    """Design III: Design II plus a pixel-level L2 term on the face region."""
    x = as_image(x)
    if mask is None:
        mask, _found = face_region_mask(bundle.face, x)
    cfg_dp = replace(cfg, loss_toggles=frozenset({"fr", "pixel"}), lambda_latent=0.0)
    return _codec_family(bundle, x, cfg_dp, mask, "cvl_dp", on_step)


# ---------------------------------------------------------------------------
# baselines


def _mid_gray(x: np.ndarray) -> np.ndarray:
    return np.full_like(x, 0.5)


def encoder_attack_targeted(
    bundle: BackendBundle, x, x_target=None, cfg: AttackConfig = None, *, on_step=None
):
    """Targeted encoder attack: descend the latent distance to a target image
    (default: uniform mid-gray)."""
    x = as_image(x)
    cfg = cfg if cfg is not None else AttackConfig()
    tgt = _mid_gray(x) if x_target is None else as_image(x_target)
    z_tgt = bundle.codec.encode(tgt)

    def build(xp, delta_node):
        term = ad.sum_sq(ad.sub(bundle.codec.encode(xp), z_tgt))
        return term, {"encoder_targeted": term}

    return _sign_pgd(x, cfg, build, direction=-1.0, method_tag="photoguard", on_step=on_step)


def encoder_attack_untargeted(bundle: BackendBundle, x, cfg: AttackConfig, *, on_step=None):
    """Untargeted encoder attack: ascend the latent displacement from source."""
    x = as_image(x)
    z_src = bundle.codec.encode(x)

    def build(xp, delta_node):
        term = ad.sum_sq(ad.sub(bundle.codec.encode(xp), z_src))
        return term, {"encoder_untargeted": term}

    return _sign_pgd(
        x, cfg, build, direction=+1.0, method_tag="untargeted_encoder", on_step=on_step
    )


def vae_attack(
    bundle: BackendBundle, x, x_target=None, cfg: AttackConfig = None, *, on_step=None
):
    """VAE attack: descend the pixel distance between the codec round-trip
    and a target image (default: uniform mid-gray)."""
    x = as_image(x)
    cfg = cfg if cfg is not None else AttackConfig()
    tgt = _mid_gray(x) if x_target is None else as_image(x_target)

    def build(xp, delta_node):
        xd = bundle.codec.decode(bundle.codec.encode(xp))
        term = ad.sum_sq(ad.sub(xd, tgt))
        return term, {"vae_target": term}

    return _sign_pgd(x, cfg, build, direction=-1.0, method_tag="vae", on_step=on_step)


def cw_l2_attack(bundle: BackendBundle, x, cfg: AttackConfig, *, on_step=None):
    """CW-style attack in tanh space: x' = (tanh(w) + 1)/2 stays inside (0, 1)
    by construction; raw gradient descent on ||x'-x||^2 - c*||z'-z||^2, then
    one final clip of x'-x to the budget."""
    x = as_image(x)
    z_src = bundle.codec.encode(x)
    w = np.zeros_like(x)
    trace = []
    for step in range(cfg.steps):
        wn = ad.leaf(w)
        xp = ad.mul(ad.add(ad.tanh(wn), 1.0), 0.5)
        zp = bundle.codec.encode(xp)
        l2 = ad.sum_sq(ad.sub(xp, x))
        lat = ad.mul(ad.sum_sq(ad.sub(zp, z_src)), -1.0)
        total = ad.add(l2, ad.mul(lat, cfg.cw_c))
        entry = {"l2": _scalar(l2), "latent": _scalar(lat), "total": _scalar(total)}
        _require_finite(entry, step, "cw_l2")
        trace.append(entry)
        if on_step is not None:
            on_step(step, xp.value, entry)
        g = ad.grad(total, wn)
        if not np.isfinite(g).all():
            raise AttackError(f"cw_l2: non-finite gradient at step {step}")
        w = w - cfg.alpha * g
    x_prime = 0.5 * (np.tanh(w) + 1.0)
    protected, delta = project_perturbation(x, x_prime - x, cfg.epsilon)
    return ProtectionResult(
        protected=protected,
        perturbation=Perturbation(delta, cfg.epsilon, "cw_l2"),
        loss_trace=tuple(trace),
        method_tag="cw_l2",
    )


def _apply_transform_node(spec: PurifySpec, xp, gen: np.random.Generator):
    if spec.kind == "none":
        return xp
    if spec.kind == "blur":
        return ad.gaussian_blur(xp, spec.blur_kernel, spec.blur_sigma)
    if spec.kind == "rotate":
        angle = float(gen.uniform(spec.rotate_range[0], spec.rotate_range[1]))
        return ad.rotate_bilinear(xp, angle)
    raise ArgumentError(
        f"transform kind {spec.kind!r} is not differentiable; "
        f"allowed: {DIFFERENTIABLE_TRANSFORMS}"
    )


def eot_encoder_attack(
    bundle: BackendBundle,
    x,
    cfg: AttackConfig,
    transform_set: Sequence[PurifySpec] | None = None,
    *,
    on_step=None,
):
    """Encoder attack in expectation over input transformations: ascend the
    mean latent displacement under sampled transforms, minus beta times the
    squared perturbation norm. Transform sampling uses its own rng stream so
    the init matches the plain untargeted attack's."""
    x = as_image(x)
    if transform_set is None:
        transform_set = (PurifySpec(kind="blur"), PurifySpec(kind="rotate"))
    specs = tuple(transform_set)
    for spec in specs:
        if spec.kind not in DIFFERENTIABLE_TRANSFORMS:
            raise ArgumentError(
                f"transform kind {spec.kind!r} is not differentiable; "
                f"allowed: {DIFFERENTIABLE_TRANSFORMS}"
            )
    if not specs:
        raise ArgumentError("transform_set must not be empty")
    z_src = bundle.codec.encode(x)
    gen_t = cfg.rng.child("eot_transforms").generator()

    def build(xp, delta_node):
        acc = None
        for _ in range(cfg.eot_samples):
            idx = int(gen_t.integers(0, len(specs)))
            xt = _apply_transform_node(specs[idx], xp, gen_t)
            d = ad.sum_sq(ad.sub(bundle.codec.encode(xt), z_src))
            acc = d if acc is None else ad.add(acc, d)
        dist = acc if cfg.eot_samples == 1 else ad.mul(acc, 1.0 / cfg.eot_samples)
        terms = {"encoder_untargeted": dist}
        total = dist
        if cfg.eot_beta != 0.0:
            reg = ad.sum_sq(delta_node)
            terms["l2"] = reg
            total = ad.sub(dist, ad.mul(reg, cfg.eot_beta))
        return total, terms

    return _sign_pgd(x, cfg, build, direction=+1.0, method_tag="eot_encoder", on_step=on_step)


# ---------------------------------------------------------------------------
# registry (names are the config/CLI identifiers)

ASCENT_METHODS = ("facelock", "cvl", "cvl_d", "cvl_dp", "untargeted_encoder", "eot_encoder")
DESCENT_METHODS = ("photoguard", "vae", "cw_l2")

ATTACKS: dict[str, Callable] = {
    "facelock": lambda bundle, x, cfg, **kw: facelock_protect(bundle, x, cfg, **kw),
    "cvl": lambda bundle, x, cfg, **kw: cvl_attack(bundle, x, cfg, **kw),
    "cvl_d": lambda bundle, x, cfg, **kw: cvl_d_attack(bundle, x, cfg, **kw),
    "cvl_dp": lambda bundle, x, cfg, **kw: cvl_dp_attack(bundle, x, cfg, **kw),
    "photoguard": lambda bundle, x, cfg, **kw: encoder_attack_targeted(
        bundle, x, kw.pop("x_target", None), cfg, **kw
    ),
    "untargeted_encoder": lambda bundle, x, cfg, **kw: encoder_attack_untargeted(
        bundle, x, cfg, **kw
    ),
    "vae": lambda bundle, x, cfg, **kw: vae_attack(
        bundle, x, kw.pop("x_target", None), cfg, **kw
    ),
    "cw_l2": lambda bundle, x, cfg, **kw: cw_l2_attack(bundle, x, cfg, **kw),
    "eot_encoder": lambda bundle, x, cfg, **kw: eot_encoder_attack(
        bundle, x, cfg, kw.pop("transform_set", None), **kw
    ),
}


def run_attack(name: str, bundle: BackendBundle, x, cfg: AttackConfig, **kwargs):
    """Run a registered attack by its config/CLI name."""
    if name not in ATTACKS:
        raise ArgumentError(f"unknown attack {name!r}; known: {sorted(ATTACKS)}")
    return ATTACKS[name](bundle, x, cfg, **kwargs)
