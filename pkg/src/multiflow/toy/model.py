"""Two-tower toy model with a fusion head, written against plain numpy.

Bias-free linear+ReLU towers for two input streams, a two-layer fusion
head scoring concatenated embeddings. Forward passes expose every
prunable layer's input activations (for calibration) and cache
pre-activations so the manual backward pass is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..tensorstore import TensorMap

TOWERS = ("vision", "text")
FUSION = "fusion"


def tower_layer_names(tower: str, depth: int = 3) -> list[str]:
    return [f"{tower}.{i}.weight" for i in range(depth)]


def fusion_layer_names(depth: int = 2) -> list[str]:
    return [f"{FUSION}.{i}.weight" for i in range(depth)]


@dataclass
class ToyVLM:
    """weights maps tensor names (e.g. "vision.0.weight") to matrices."""

    weights: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def initialize(
        cls,
        seed: int,
        d_in: int = 32,
        d_hidden: int = 64,
        d_embed: int = 32,
        d_fused: int = 64,
        dtype=np.float32,
    ) -> "ToyVLM":
        rng = np.random.default_rng(seed)

        def he(out_dim, in_dim):
            scale = np.sqrt(2.0 / in_dim)
            return (rng.standard_normal((out_dim, in_dim)) * scale).astype(dtype)

        weights: dict[str, np.ndarray] = {}
        for tower in TOWERS:
            dims = (d_in, d_hidden, d_hidden, d_embed)
            for i in range(3):
                weights[f"{tower}.{i}.weight"] = he(dims[i + 1], dims[i])
        weights["fusion.0.weight"] = he(d_fused, 2 * d_embed)
        weights["fusion.1.weight"] = he(1, d_fused)
        return cls(weights)

    @classmethod
    def from_tensor_map(cls, tm: TensorMap) -> "ToyVLM":
        names = tower_layer_names("vision") + tower_layer_names("text") + fusion_layer_names()
        weights = {}
        for name in names:
            if name not in tm:
                raise ValidationError(
                    f"checkpoint lacks toy layer {name!r}; the built-in forward engine "
                    "only drives two-tower toy checkpoints"
                )
            weights[name] = np.asarray(tm.get(name), dtype=np.float32)
        model = cls(weights)
        model.check_shapes()
        return model

    def to_tensor_map(self, metadata: dict[str, str] | None = None) -> TensorMap:
        tm = TensorMap(metadata=dict(metadata or {}))
        for name, W in self.weights.items():
            tm.put(name, np.asarray(W, dtype=np.float32))
        return tm

    def copy(self) -> "ToyVLM":
        return ToyVLM({name: W.copy() for name, W in self.weights.items()})

    def as_float64(self) -> "ToyVLM":
        """Double-precision view for calibration forwards, so activation
        statistics do not depend on float32 matmul rounding."""
        return ToyVLM({name: W.astype(np.float64) for name, W in self.weights.items()})

    def layer_names(self) -> list[str]:
        return list(self.weights)

    @property
    def d_in(self) -> int:
        return self.weights["vision.0.weight"].shape[1]

    @property
    def d_embed(self) -> int:
        return self.weights["vision.2.weight"].shape[0]

    def check_shapes(self) -> None:
        for tower in TOWERS:
            names = tower_layer_names(tower)
            for prev, nxt in zip(names, names[1:]):
                if self.weights[nxt].shape[1] != self.weights[prev].shape[0]:
                    raise ValidationError(f"tower shapes do not chain at {nxt!r}")
        v_out = self.weights["vision.2.weight"].shape[0]
        t_out = self.weights["text.2.weight"].shape[0]
        f0_in = self.weights["fusion.0.weight"].shape[1]
        if f0_in != v_out + t_out:
            raise ValidationError("fusion.0 input must equal concatenated embeddings")
        if self.weights["fusion.1.weight"].shape[1] != self.weights["fusion.0.weight"].shape[0]:
            raise ValidationError("fusion shapes do not chain")
        if self.weights["fusion.1.weight"].shape[0] != 1:
            raise ValidationError("fusion.1 must emit a single match score")

    # -- forward / backward ------------------------------------------------

    def _tower_forward(self, tower: str, x: np.ndarray, cache: dict | None):
        h = x
        for name in tower_layer_names(tower):
            W = self.weights[name]
            if h.shape[1] != W.shape[1]:
                raise ValidationError(
                    f"{name}: batch width {h.shape[1]} does not match in_dim {W.shape[1]}"
                )
            z = h @ W.T
            if cache is not None:
                cache[name] = (h, z)
            h = np.maximum(z, 0.0)
        return h

    def embed(self, xv: np.ndarray, xt: np.ndarray, cache: dict | None = None):
        v = self._tower_forward("vision", np.asarray(xv), cache)
        t = self._tower_forward("text", np.asarray(xt), cache)
        return v, t

    def fuse(self, v: np.ndarray, t: np.ndarray, cache: dict | None = None) -> np.ndarray:
        """Match logits for row-aligned (v, t) embedding pairs."""
        u = np.concatenate([v, t], axis=1)
        W0 = self.weights["fusion.0.weight"]
        W1 = self.weights["fusion.1.weight"]
        z0 = u @ W0.T
        a0 = np.maximum(z0, 0.0)
        z1 = a0 @ W1.T
        if cache is not None:
            cache["fusion.0.weight"] = (u, z0)
            cache["fusion.1.weight"] = (a0, z1)
        return z1[:, 0]

    def forward_pairs(self, xv: np.ndarray, xt: np.ndarray, cache: dict | None = None):
        """Logits for matched pairs; cache collects every layer's input."""
        v, t = self.embed(xv, xt, cache)
        return self.fuse(v, t, cache)

    def layer_inputs(self, cache: dict) -> dict[str, np.ndarray]:
        """Input activation matrix per prunable layer, from a forward cache."""
        return {name: pair[0] for name, pair in cache.items()}

    def _tower_backward(self, tower: str, d_emb: np.ndarray, cache: dict, grads: dict):
        dh = d_emb
        for name in reversed(tower_layer_names(tower)):
            h, z = cache[name]
            dz = dh * (z > 0)
            grads[name] = dz.T @ h
            dh = dz @ self.weights[name]
        return dh

    def backward(
        self, d_logits: np.ndarray, cache: dict, split: tuple[np.ndarray, np.ndarray]
    ) -> dict[str, np.ndarray]:
        """Gradients of every weight given d(loss)/d(logits).

        `split` maps fusion-row gradients back onto tower embeddings:
        it holds (rows_v, rows_t), the embedding row index that each
        fusion row drew its v / t half from.
        """
        grads: dict[str, np.ndarray] = {}
        W0 = self.weights["fusion.0.weight"]
        W1 = self.weights["fusion.1.weight"]
        a0, _ = cache["fusion.1.weight"]
        u, z0 = cache["fusion.0.weight"]
        dz1 = d_logits[:, None]
        grads["fusion.1.weight"] = dz1.T @ a0
        da0 = dz1 @ W1
        dz0 = da0 * (z0 > 0)
        grads["fusion.0.weight"] = dz0.T @ u
        du = dz0 @ W0
        d = self.d_embed
        rows_v, rows_t = split
        n_emb = cache["vision.2.weight"][0].shape[0]
        dv = np.zeros((n_emb, d), dtype=du.dtype)
        dt = np.zeros((n_emb, d), dtype=du.dtype)
        np.add.at(dv, rows_v, du[:, :d])
        np.add.at(dt, rows_t, du[:, d:])
        self._tower_backward("vision", dv, cache, grads)
        self._tower_backward("text", dt, cache, grads)
        return grads


def toy_model_spec(model: ToyVLM) -> dict:
    """Model-spec config for a toy checkpoint (all layers prunable)."""
    layers = []
    for tower in TOWERS:
        for depth, name in enumerate(tower_layer_names(tower)):
            layers.append({"name": name, "modality": tower, "depth_index": depth})
    for depth, name in enumerate(fusion_layer_names()):
        layers.append({"name": name, "modality": FUSION, "depth_index": depth})
    return {"modalities": list(TOWERS) + [FUSION], "layers": layers}
