"""Adapters binding the production models (diffusion VAE, face recognizer,
CNN feature stacks, joint text/image embedder, instruction editor) behind the
same component interfaces the toy bundle implements.

Heavyweight dependencies are imported lazily; a missing model or library
surfaces as a BackendLoadError naming every component that failed, so a bad
config fails loudly at startup rather than mid-run. Gradients from torch
models are spliced into the numpy autodiff graph through ``autodiff.external``.

Component config keys (the [backend] section):
    kind               "toy" or "real"
    codec              VAE identifier/path (the editing model's autoencoder)
    face               face-recognition model path (torchscript module)
    feature_extractor  one of {alexnet_family, squeezenet_family, vgg_family}
    clip               joint embedder identifier (default openai/clip-vit-base-patch32)
    editor             instruction-editing pipeline identifier/path
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from idveil import autodiff as ad
from idveil.backends.base import BackendBundle, BackendLoadError, EditParams
from idveil.core import RngState, clamp_pixels, cosine_sim

FEATURE_FAMILIES = ("alexnet_family", "squeezenet_family", "vgg_family")
COMPONENT_KEYS = ("codec", "face", "feature_extractor", "clip", "editor")


def _to_torch(x: np.ndarray, device):
    import torch

    t = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))
    return t.permute(2, 0, 1).unsqueeze(0).to(device)


def _from_torch(t) -> np.ndarray:
    return t.detach().squeeze(0).permute(1, 2, 0).cpu().numpy().astype(np.float64)


class TorchLatentCodec:
    """Diffusion-model VAE; encode returns the posterior mean so gradients
    are deterministic (no sampling during attack optimization)."""

    def __init__(self, vae, device="cpu"):
        self.vae = vae.to(device).eval()
        self.device = device
        self.scale = float(getattr(vae.config, "scaling_factor", 1.0))

    def _encode_fn(self, x_np):
        import torch

        xt = _to_torch(x_np, self.device).requires_grad_(True)
        z = self.vae.encode(xt * 2.0 - 1.0).latent_dist.mean * self.scale

        def vjp(g_np):
            gt = _to_torch(g_np, self.device)
            (gx,) = torch.autograd.grad(z, xt, grad_outputs=gt, retain_graph=False)
            return _from_torch(gx)

        return _from_torch(z), vjp

    def _decode_fn(self, z_np):
        import torch

        zt = _to_torch(z_np, self.device).requires_grad_(True)
        y = (self.vae.decode(zt / self.scale).sample + 1.0) / 2.0

        def vjp(g_np):
            gt = _to_torch(g_np, self.device)
            (gz,) = torch.autograd.grad(y, zt, grad_outputs=gt, retain_graph=False)
            return _from_torch(gz)

        return _from_torch(y), vjp

    def encode(self, x):
        return ad.external(x, self._encode_fn)

    def decode(self, z):
        return ad.external(z, self._decode_fn)


class TorchFaceEmbedder:
    """Face-recognition embedder (cosine similarity verifies identity)."""

    def __init__(self, model, device="cpu", detector=None, input_size=112):
        self.model = model.to(device).eval()
        self.device = device
        self.detector = detector
        self.input_size = input_size

    def _embed_fn(self, x_np):
        import torch
        import torch.nn.functional as F

        xt = _to_torch(x_np, self.device).requires_grad_(True)
        resized = F.interpolate(
            xt * 2.0 - 1.0, size=(self.input_size, self.input_size),
            mode="bilinear", align_corners=False,
        )
        emb = self.model(resized)
        if isinstance(emb, (tuple, list)):
            emb = emb[0]
        emb = emb.reshape(-1)

        def vjp(g_np):
            gt = torch.from_numpy(np.asarray(g_np, dtype=np.float32)).to(self.device)
            (gx,) = torch.autograd.grad(emb, xt, grad_outputs=gt, retain_graph=False)
            return _from_torch(gx)

        return emb.detach().cpu().numpy().astype(np.float64), vjp

    def embed(self, x):
        return ad.external(x, self._embed_fn)

    def similarity(self, a, b) -> float:
        return cosine_sim(self.embed(a), self.embed(b))

    def detect_region(self, x):
        if self.detector is None:
            return None
        return self.detector(x)


class TorchFeatureExtractor:
    """Pretrained CNN feature pyramid (selectable family), uniform weights."""

    def __init__(self, stages, device="cpu"):
        self.stages = [s.to(device).eval() for s in stages]
        self.device = device
        self.layer_weights = tuple(1.0 / len(stages) for _ in stages)

    def features(self, x):
        outs = []
        for i in range(len(self.stages)):
            outs.append(ad.external(x, lambda v, k=i + 1: self._stage_fn(v, k)))
        return outs

    def _stage_fn(self, x_np, upto):
        import torch

        xt = _to_torch(x_np, self.device).requires_grad_(True)
        h = xt
        for stage in self.stages[:upto]:
            h = stage(h)

        def vjp(g_np):
            gt = _to_torch(g_np, self.device)
            (gx,) = torch.autograd.grad(h, xt, grad_outputs=gt, retain_graph=False)
            return _from_torch(gx)

        return _from_torch(h), vjp


class TorchTextImageEmbedder:
    def __init__(self, model, processor, device="cpu"):
        self.model = model.to(device).eval()
        self.processor = processor
        self.device = device

    def embed_image(self, x):
        def fn(x_np):
            import torch
            import torch.nn.functional as F

            xt = _to_torch(x_np, self.device).requires_grad_(True)
            size = self.model.config.vision_config.image_size
            resized = F.interpolate(xt, size=(size, size), mode="bilinear", align_corners=False)
            mean = torch.tensor([0.48145466, 0.4578275, 0.40821073], device=self.device)
            std = torch.tensor([0.26862954, 0.26130258, 0.27577711], device=self.device)
            normed = (resized - mean[None, :, None, None]) / std[None, :, None, None]
            emb = self.model.get_image_features(pixel_values=normed).reshape(-1)

            def vjp(g_np):
                gt = torch.from_numpy(np.asarray(g_np, dtype=np.float32)).to(self.device)
                (gx,) = torch.autograd.grad(emb, xt, grad_outputs=gt)
                return _from_torch(gx)

            return emb.detach().cpu().numpy().astype(np.float64), vjp

        return ad.external(x, fn)

    def embed_text(self, text: str) -> np.ndarray:
        import torch

        with torch.no_grad():
            tokens = self.processor(text=[text], return_tensors="pt", padding=True)
            tokens = {k: v.to(self.device) for k, v in tokens.items()}
            emb = self.model.get_text_features(**tokens).reshape(-1)
        return emb.cpu().numpy().astype(np.float64)


class TorchInstructionEditor:
    def __init__(self, pipe, device="cpu"):
        self.pipe = pipe.to(device)
        self.device = device

    def edit(self, x: np.ndarray, prompt: str, params: EditParams, rng: RngState) -> np.ndarray:
        import torch
        from PIL import Image

        gen = torch.Generator(device=self.device)
        gen.manual_seed(int(rng.generator().integers(0, 2**63 - 1)))
        img = Image.fromarray(np.rint(np.asarray(x) * 255.0).astype(np.uint8))
        out = self.pipe(
            prompt,
            image=img,
            num_inference_steps=params.inference_steps,
            image_guidance_scale=params.image_guidance,
            guidance_scale=params.text_guidance,
            generator=gen,
        ).images[0]
        return clamp_pixels(np.asarray(out, dtype=np.float64) / 255.0)


# --- component loaders -------------------------------------------------------


def _load_codec(config: Mapping):
    ident = config.get("codec")
    if not ident:
        raise BackendLoadError("no codec configured")
    from diffusers import AutoencoderKL

    try:
        vae = AutoencoderKL.from_pretrained(ident)
    except Exception:
        vae = AutoencoderKL.from_pretrained(ident, subfolder="vae")
    return TorchLatentCodec(vae, device=config.get("device", "cpu"))


def _load_face(config: Mapping):
    ident = config.get("face")
    if not ident:
        raise BackendLoadError("no face model configured")
    import torch

    model = torch.jit.load(ident, map_location="cpu")
    return TorchFaceEmbedder(model, device=config.get("device", "cpu"))


def _load_feature_extractor(config: Mapping):
    family = config.get("feature_extractor", "alexnet_family")
    if family not in FEATURE_FAMILIES:
        raise BackendLoadError(
            f"feature_extractor must be one of {FEATURE_FAMILIES}, got {family!r}"
        )
    from torchvision import models

    if family == "alexnet_family":
        feats = models.alexnet(weights="DEFAULT").features
        cuts = (2, 5, 8, 10, 12)
    elif family == "squeezenet_family":
        feats = models.squeezenet1_1(weights="DEFAULT").features
        cuts = (2, 5, 8, 10, 13)
    else:
        feats = models.vgg16(weights="DEFAULT").features
        cuts = (4, 9, 16, 23, 30)
    import torch.nn as nn

    stages, prev = [], 0
    for cut in cuts:
        stages.append(nn.Sequential(*list(feats.children())[prev:cut]))
        prev = cut
    return TorchFeatureExtractor(stages, device=config.get("device", "cpu"))


def _load_clip(config: Mapping):
    ident = config.get("clip", "openai/clip-vit-base-patch32")
    from transformers import CLIPModel, CLIPProcessor

    model = CLIPModel.from_pretrained(ident)
    processor = CLIPProcessor.from_pretrained(ident)
    return TorchTextImageEmbedder(model, processor, device=config.get("device", "cpu"))


def _load_editor(config: Mapping):
    ident = config.get("editor")
    if not ident:
        raise BackendLoadError("no editor configured")
    from diffusers import StableDiffusionInstructPix2PixPipeline

    pipe = StableDiffusionInstructPix2PixPipeline.from_pretrained(ident, safety_checker=None)
    return TorchInstructionEditor(pipe, device=config.get("device", "cpu"))


DEFAULT_LOADERS: dict[str, Callable[[Mapping], object]] = {
    "codec": _load_codec,
    "face": _load_face,
    "feature_extractor": _load_feature_extractor,
    "clip": _load_clip,
    "editor": _load_editor,
}


def real_bundle(
    config: Mapping, loaders: Mapping[str, Callable] | None = None
) -> BackendBundle:
    """Construct the production bundle from a [backend] config mapping.

    Attempts every component and raises one BackendLoadError naming all the
    components that failed, so the whole config can be fixed in one pass.
    """
    loaders = dict(DEFAULT_LOADERS, **(loaders or {}))
    built: dict[str, object] = {}
    failures: list[str] = []
    for key in COMPONENT_KEYS:
        try:
            built[key] = loaders[key](config)
        except Exception as exc:
            failures.append(f"{key} ({exc.__class__.__name__}: {exc})")
    if failures:
        raise BackendLoadError(
            "failed to load backend component(s): " + "; ".join(failures)
        )
    return BackendBundle(
        codec=built["codec"],
        face=built["face"],
        feat=built["feature_extractor"],
        clip=built["clip"],
        editor=built["editor"],
        kind="real",
    )
