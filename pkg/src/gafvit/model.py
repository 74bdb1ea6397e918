"""End-to-end model: feature matrix -> angular-field image -> channel
attention -> transformer -> class scores.

Two ablations are supported. no_attention removes the channel gate entirely;
no_gaf replaces the angular-field encoding with a trainable linear map from
the flattened feature matrix to an image-shaped tensor, so the rest of the
pipeline is unchanged.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import engine, gaf, vit
from .attention import AttentionWeights, attention_weights, init_attention_params
from .errors import DimensionMismatch
from .gaf import FeatureMatrix
from .vit import Logits, VitConfig


@dataclass(frozen=True)
class AblationFlags:
    no_attention: bool = False
    no_gaf: bool = False


class GafVitModel:
    def __init__(self, config: VitConfig = None, ablation: AblationFlags = None,
                 seed=0, reduction_ratio=1, init_std=0.02):
        self.config = config or VitConfig()
        self.ablation = ablation or AblationFlags()
        self.reduction_ratio = reduction_ratio
        if self.ablation.no_gaf and self.config.channels % 2 != 0:
            raise DimensionMismatch("raw-input mode needs an even channel count")
        rng = np.random.default_rng(seed)
        self.params = engine.ParamStore(seed=seed)

        self.att_params = None
        if not self.ablation.no_attention:
            self.att_params = init_attention_params(
                self.config.channels, reduction_ratio, rng, std=init_std)
            self.params.add_named(self.att_params.named())

        self.vit_params = vit.init_vit_params(self.config, rng, std=init_std)
        self.params.add_named(self.vit_params.named())

        self.reshape_w = None
        self.reshape_b = None
        if self.ablation.no_gaf:
            c = self.config
            out_dim = c.image_h * c.image_w * c.channels
            self.reshape_w = self.params.add("reshape.w", ad.Tensor(
                rng.normal(0.0, init_std, (out_dim, self.input_dim)), requires_grad=True))
            self.reshape_b = self.params.add("reshape.b", ad.Tensor(
                np.zeros(out_dim), requires_grad=True))

    @property
    def input_dim(self):
        """Flattened feature-matrix size the raw-input ablation expects."""
        return self.config.image_h * (self.config.channels // 2)

    # -- input preparation ----------------------------------------------------

    def _check_matrix(self, matrix: FeatureMatrix):
        m, n = matrix.values.shape
        if self.ablation.no_gaf:
            if m * n != self.input_dim:
                raise DimensionMismatch(
                    f"matrix {m}x{n} flattens to {m * n}, model expects {self.input_dim}")
            return
        if m != self.config.image_h or 2 * n != self.config.channels:
            raise DimensionMismatch(
                f"matrix {m}x{n} encodes to {m}x{m}x{2 * n}, model expects "
                f"{self.config.image_h}x{self.config.image_w}x{self.config.channels}")

    def prepare_inputs(self, matrices) -> np.ndarray:
        """Feature matrices to the stacked array forward_batch consumes."""
        out = []
        for matrix in matrices:
            self._check_matrix(matrix)
            if self.ablation.no_gaf:
                out.append(matrix.values.reshape(-1))
            else:
                out.append(gaf.encode_matrix(matrix).data)
        return np.stack(out, axis=0)

    # -- forward paths ----------------------------------------------------------

    def forward_batch(self, inputs) -> ad.Tensor:
        x = inputs if isinstance(inputs, ad.Tensor) else ad.Tensor(
            np.asarray(inputs, dtype=np.float64))
        if self.ablation.no_gaf:
            c = self.config
            flat = ad.add(ad.matmul(x, ad.transpose(self.reshape_w, (1, 0))), self.reshape_b)
            x = ad.reshape(flat, x.value.shape[:-1] + (c.image_h, c.image_w, c.channels))
        return vit.forward(x, self.att_params, self.vit_params, self.config,
                           no_attention=self.ablation.no_attention)

    def classify_matrix(self, matrix: FeatureMatrix):
        """Predicted class and scores for one feature matrix."""
        batch = self.prepare_inputs([matrix])
        with ad.no_grad():
            scores = self.forward_batch(batch).value[0]
        logits = Logits(scores=scores)
        return int(np.argmax(logits.scores)), logits

    def channel_weights(self, matrix: FeatureMatrix) -> AttentionWeights:
        if self.ablation.no_attention:
            raise DimensionMismatch("attention is disabled in this model")
        if self.ablation.no_gaf:
            raise DimensionMismatch("channel weights need the angular-field image")
        image = gaf.encode_matrix(matrix)
        return attention_weights(image, self.att_params)

    # -- persistence ------------------------------------------------------------

    def config_dict(self, train_config=None):
        out = {
            "vit": asdict(self.config),
            "ablation": asdict(self.ablation),
            "reduction_ratio": self.reduction_ratio,
        }
        if train_config is not None:
            cfg = asdict(train_config)
            cfg["split"] = list(cfg["split"])
            out["train"] = cfg
        return out

    def save(self, path, train_config=None, params=None):
        engine.save_checkpoint(path, self.params,
                               config=self.config_dict(train_config), params=params)

    @classmethod
    def from_checkpoint(cls, path):
        ckpt = engine.load_checkpoint(path)
        vit_cfg = VitConfig(**ckpt.config["vit"])
        ablation = AblationFlags(**ckpt.config.get("ablation", {}))
        model = cls(config=vit_cfg, ablation=ablation, seed=ckpt.seed,
                    reduction_ratio=ckpt.config.get("reduction_ratio", 1))
        model.params.load_values(ckpt.params)
        model.params.step = ckpt.step
        return model, ckpt
