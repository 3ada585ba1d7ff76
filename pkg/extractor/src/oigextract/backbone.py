"""Vision-language backbone interface and implementations.

A backbone must expose:

- ``dim``: output embedding dimension;
- ``encode_image(image)``: one unit-normalizable vector for an RGB image;
- ``spatial_features(image)``: pre-projection feature map (D', H', W');
- ``project(features)``: the final projection from D' to ``dim``;
- ``encode_text(text)``: one vector per string.

``global_embedding`` ties the pieces together: mean-pool the spatial
map, project, normalize. The deterministic :class:`TestBackbone` runs
the whole extraction pipeline without model weights and is what the
tests use; :class:`ClipBackbone` adapts a pretrained CLIP checkpoint to
the same interface for real data.
"""

from __future__ import annotations

import hashlib

import numpy as np


def unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


class TestBackbone:
    """Deterministic stand-in encoder: fixed random projections over
    block-averaged pixels. No learned weights, identical output across
    platforms for a given seed.
    """

    __test__ = False  # not a test case despite the class name

    def __init__(self, dim: int = 16, feat_dim: int = 32, stride: int = 4,
                 seed: int = 0):
        self.dim = dim
        self.feat_dim = feat_dim
        self.stride = stride
        self.seed = seed
        rng = np.random.default_rng((seed, 1))
        self._w_feat = rng.normal(size=(3, feat_dim)) / np.sqrt(3)
        rng = np.random.default_rng((seed, 2))
        self._w_proj = rng.normal(size=(feat_dim, dim)) / np.sqrt(feat_dim)

    def spatial_features(self, image: np.ndarray) -> np.ndarray:
        """Block-mean downsample by ``stride``, then a fixed nonlinear
        channel mix. Returns (feat_dim, H', W')."""
        img = _as_float_rgb(image)
        h, w = img.shape[:2]
        s = self.stride
        hp, wp = max(1, h // s), max(1, w // s)
        blocks = img[:hp * s, :wp * s].reshape(hp, s, wp, s, 3).mean(axis=(1, 3))
        feats = np.tanh(blocks @ self._w_feat * 3.0)
        return np.moveaxis(feats, -1, 0)

    def project(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self._w_proj

    def global_embedding(self, image: np.ndarray) -> np.ndarray:
        spatial = self.spatial_features(image)
        return unit(self.project(spatial.reshape(spatial.shape[0], -1).mean(axis=1)))

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        return self.global_embedding(image)

    def encode_text(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return unit(rng.normal(size=self.dim))


class ClipBackbone:
    """Adapter for a pretrained CLIP checkpoint (via ``transformers``).

    ``spatial_features`` exposes the vision transformer's patch tokens
    before the visual projection; ``project`` applies that projection,
    so masked average pooling happens in the model's pre-projection
    space exactly as in the dense-feature extraction pipeline.
    """

    def __init__(self, model_id: str = "openai/clip-vit-base-patch32",
                 device: str = "cpu"):
        try:
            import torch  # noqa: F401
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as e:
            raise ImportError(
                "ClipBackbone needs torch and transformers installed") from e
        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_id).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.device = device
        self.dim = self.model.config.projection_dim

    def _pixel_values(self, image):
        inputs = self.processor(images=image, return_tensors="pt")
        return inputs["pixel_values"].to(self.device)

    def encode_image(self, image) -> np.ndarray:
        with self._torch.no_grad():
            out = self.model.get_image_features(self._pixel_values(image))
        return unit(out[0].cpu().numpy().astype(np.float64))

    def spatial_features(self, image) -> np.ndarray:
        with self._torch.no_grad():
            vision = self.model.vision_model(self._pixel_values(image))
        tokens = vision.last_hidden_state[0, 1:]  # drop the class token
        tokens = self.model.vision_model.post_layernorm(tokens)
        side = int(np.sqrt(tokens.shape[0]))
        grid = tokens.reshape(side, side, -1).cpu().numpy().astype(np.float64)
        return np.moveaxis(grid, -1, 0)

    def project(self, features: np.ndarray) -> np.ndarray:
        t = self._torch.tensor(features, dtype=self.model.dtype,
                               device=self.device)
        with self._torch.no_grad():
            out = self.model.visual_projection(t)
        return out.cpu().numpy().astype(np.float64)

    def global_embedding(self, image) -> np.ndarray:
        spatial = self.spatial_features(image)
        return unit(self.project(spatial.reshape(spatial.shape[0], -1).mean(axis=1)))

    def encode_text(self, text: str) -> np.ndarray:
        inputs = self.processor(text=[text], return_tensors="pt", padding=True)
        with self._torch.no_grad():
            out = self.model.get_text_features(
                **{k: v.to(self.device) for k, v in inputs.items()})
        return unit(out[0].cpu().numpy().astype(np.float64))


def _as_float_rgb(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    if img.ndim != 3 or img.shape[2] < 3:
        raise ValueError("expected an RGB image (H, W, 3)")
    img = img[:, :, :3].astype(np.float64)
    if img.max() > 1.0:
        img = img / 255.0
    return img


def make_backbone(spec: str, seed: int = 0):
    """Build a backbone from a spec string: "test" or "clip[:model-id]"."""
    if spec == "test":
        return TestBackbone(seed=seed)
    if spec == "clip":
        return ClipBackbone()
    if spec.startswith("clip:"):
        return ClipBackbone(model_id=spec.split(":", 1)[1])
    raise ValueError(f"unknown backbone spec {spec!r}")
