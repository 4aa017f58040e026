"""Four-stage hierarchical classifier built from MILA (or other) blocks.

stem (two 3x3 stride-2 convs, 4x reduction) -> stage 1 -> [3x3 stride-2 conv] ->
stage 2 -> ... -> stage 4 -> norm -> global average pool -> linear head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .blocks import MILA_POSENC, BlockSpec, WeightShape, block_forward, block_weight_shapes, init_weight
from .numerics import DimensionError, gelu, layer_norm
from .posenc import Grid2D, PosEncSpec
from .unified import BlockDesign, MixerConfig, preset

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    name: str
    dims: tuple[int, int, int, int]
    heads: tuple[int, int, int, int]
    depths: tuple[int, int, int, int]
    stem_out: int | None = None  # defaults to dims[0]
    patch: int = 4
    downsample: int = 2
    num_classes: int = 1000
    in_chans: int = 3
    mlp_ratio: float = 4.0
    design: BlockDesign = BlockDesign.MILA
    posenc: tuple[PosEncSpec, ...] = MILA_POSENC
    dwconv_kernel: int = 3
    mixer: str = "mila"

    def __post_init__(self):
        for name in ("dims", "heads", "depths"):
            vals = tuple(int(v) for v in getattr(self, name))
            if len(vals) != 4:
                raise ValueError(f"{name} needs four stage entries, got {len(vals)}")
            object.__setattr__(self, name, vals)
        object.__setattr__(self, "design", BlockDesign(self.design))
        object.__setattr__(self, "posenc", tuple(self.posenc))
        if self.stem_out is None:
            object.__setattr__(self, "stem_out", self.dims[0])
        if any(b <= a for a, b in zip(self.dims, self.dims[1:])):
            raise ValueError(f"stage dims must strictly increase, got {self.dims}")
        if any(d < 1 for d in self.depths):
            raise ValueError("every stage needs at least one block")
        if self.stem_out != self.dims[0]:
            raise ValueError("stem output width must equal the first stage width")
        for c, h in zip(self.dims, self.heads):
            if c % h:
                raise DimensionError(f"stage dim {c} not divisible by {h} heads")

    @property
    def reduction(self) -> int:
        return self.patch * self.downsample ** 3

    def block_spec(self, stage: int) -> BlockSpec:
        return BlockSpec(design=self.design, dim=self.dims[stage], heads=self.heads[stage],
                         mlp_ratio=self.mlp_ratio, posenc=self.posenc, dwconv_kernel=self.dwconv_kernel,
                         expansion=2.0 if self.design is BlockDesign.MAMBA else 1.0)

    def mixer_config(self) -> MixerConfig:
        return preset(self.mixer)

    def stage_grids(self, resolution: int) -> list[Grid2D]:
        if resolution % self.reduction:
            raise ValueError(f"resolution {resolution} is not divisible by {self.reduction}")
        side = resolution // self.patch
        return [Grid2D(side >> s, side >> s) for s in range(4)]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "dims": list(self.dims),
            "heads": list(self.heads),
            "depths": list(self.depths),
            "stem_out": self.stem_out,
            "patch": self.patch,
            "downsample": self.downsample,
            "num_classes": self.num_classes,
            "in_chans": self.in_chans,
            "mlp_ratio": self.mlp_ratio,
            "design": self.design.value,
            "posenc": [p.to_dict() for p in self.posenc],
            "dwconv_kernel": self.dwconv_kernel,
            "mixer": self.mixer,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported model spec schema version {version!r}")
        return cls(
            name=d["name"], dims=tuple(d["dims"]), heads=tuple(d["heads"]), depths=tuple(d["depths"]),
            stem_out=d.get("stem_out"), patch=d.get("patch", 4), downsample=d.get("downsample", 2),
            num_classes=d.get("num_classes", 1000), in_chans=d.get("in_chans", 3),
            mlp_ratio=d.get("mlp_ratio", 4.0), design=BlockDesign(d.get("design", "mila")),
            posenc=tuple(PosEncSpec.from_dict(p) for p in d.get("posenc", [])),
            dwconv_kernel=d.get("dwconv_kernel", 3), mixer=d.get("mixer", "mila"),
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


MILA_T = ModelSpec("MILA-T", dims=(64, 128, 256, 512), heads=(2, 4, 8, 16), depths=(2, 4, 8, 4))
MILA_S = ModelSpec("MILA-S", dims=(64, 128, 256, 512), heads=(2, 4, 8, 16), depths=(3, 6, 21, 6))
MILA_B = ModelSpec("MILA-B", dims=(96, 192, 384, 768), heads=(3, 6, 12, 24), depths=(3, 6, 21, 6))
MODELS = {"T": MILA_T, "S": MILA_S, "B": MILA_B}


def get_model_spec(name: str) -> ModelSpec:
    key = name.upper().removeprefix("MILA-")
    if key not in MODELS:
        raise KeyError(f"unknown model {name!r}; choose from T, S, B")
    return MODELS[key]


def model_weight_shapes(spec: ModelSpec, resolution: int = 224) -> dict[str, WeightShape]:
    """Ordered registry of every model weight; stage grids only matter for APE tables."""
    grids = spec.stage_grids(resolution)
    reg: dict[str, WeightShape] = {}
    c0 = spec.stem_out
    reg["stem.conv1.w"] = WeightShape((3, 3, spec.in_chans, c0), "conv", "stem")
    reg["stem.conv1.b"] = WeightShape((c0,), "bias", "stem")
    reg["stem.conv2.w"] = WeightShape((3, 3, c0, c0), "conv", "stem")
    reg["stem.conv2.b"] = WeightShape((c0,), "bias", "stem")
    reg["stem.norm.w"] = WeightShape((c0,), "norm", "norm")
    reg["stem.norm.b"] = WeightShape((c0,), "norm", "norm")
    mixer = spec.mixer_config()
    for s in range(4):
        if s > 0:
            cin, cout = spec.dims[s - 1], spec.dims[s]
            reg[f"down{s}.conv.w"] = WeightShape((3, 3, cin, cout), "conv", "downsample")
            reg[f"down{s}.conv.b"] = WeightShape((cout,), "bias", "downsample")
            reg[f"down{s}.norm.w"] = WeightShape((cout,), "norm", "norm")
            reg[f"down{s}.norm.b"] = WeightShape((cout,), "norm", "norm")
        bspec = spec.block_spec(s)
        for b in range(spec.depths[s]):
            for name, ws in block_weight_shapes(bspec, mixer, grids[s].tokens).items():
                reg[f"stage{s + 1}.block{b}.{name}"] = ws
    c4 = spec.dims[3]
    reg["head.norm.w"] = WeightShape((c4,), "norm", "norm")
    reg["head.norm.b"] = WeightShape((c4,), "norm", "norm")
    reg["head.fc.w"] = WeightShape((c4, spec.num_classes), "linear", "head")
    reg["head.fc.b"] = WeightShape((spec.num_classes,), "bias", "head")
    return reg


@dataclass
class Model:
    spec: ModelSpec
    resolution: int
    weights: dict[str, np.ndarray] = field(repr=False)

    def block_weights(self, stage: int, block: int) -> dict[str, np.ndarray]:
        prefix = f"stage{stage + 1}.block{block}."
        return {k[len(prefix):]: v for k, v in self.weights.items() if k.startswith(prefix)}

    def param_count(self) -> int:
        """Scalars actually held by the weight arrays."""
        return sum(int(w.size) for w in self.weights.values())


def build_model(spec: ModelSpec, resolution: int = 224, seed: int = 0) -> Model:
    spec.stage_grids(resolution)
    weights = {name: init_weight(name, ws, seed) for name, ws in model_weight_shapes(spec, resolution).items()}
    return Model(spec, resolution, weights)


def conv2d(img: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None, stride: int = 1) -> np.ndarray:
    """Dense k x k convolution on an (H, W, Cin) image, zero padding k // 2."""
    k = weight.shape[0]
    h, w, cin = img.shape
    if weight.shape[2] != cin:
        raise DimensionError(f"conv expects {weight.shape[2]} input channels, got {cin}")
    r = k // 2
    padded = np.pad(img, ((r, r), (r, r), (0, 0)))
    ho = (h + 2 * r - k) // stride + 1
    wo = (w + 2 * r - k) // stride + 1
    cols = np.empty((ho, wo, k, k, cin), dtype=img.dtype)
    for a in range(k):
        for b in range(k):
            cols[:, :, a, b] = padded[a:a + stride * (ho - 1) + 1:stride, b:b + stride * (wo - 1) + 1:stride]
    out = cols.reshape(ho * wo, k * k * cin) @ weight.reshape(k * k * cin, -1)
    if bias is not None:
        out = out + bias
    return out.reshape(ho, wo, -1)


def stage_token_counts(spec: ModelSpec, resolution: int = 224) -> list[int]:
    return [g.tokens for g in spec.stage_grids(resolution)]


def model_forward(model: Model, image: np.ndarray, return_stages: bool = False):
    """Class logits for one (H, W, in_chans) image; optionally the per-stage token matrices."""
    spec, w = model.spec, model.weights
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != spec.in_chans:
        raise DimensionError(f"expected an (H, W, {spec.in_chans}) image, got {image.shape}")
    if image.shape[0] != image.shape[1] or image.shape[0] != model.resolution:
        raise DimensionError(f"model was built for {model.resolution}x{model.resolution} inputs")
    grids = spec.stage_grids(model.resolution)
    mixer = spec.mixer_config()

    x = gelu(conv2d(image, w["stem.conv1.w"], w["stem.conv1.b"], stride=2))
    x = conv2d(x, w["stem.conv2.w"], w["stem.conv2.b"], stride=2)
    tokens = layer_norm(x.reshape(-1, x.shape[-1]), w["stem.norm.w"], w["stem.norm.b"])
    stages = []
    for s in range(4):
        grid = grids[s]
        if s > 0:
            prev = grids[s - 1]
            img = tokens.reshape(prev.height, prev.width, -1)
            img = conv2d(img, w[f"down{s}.conv.w"], w[f"down{s}.conv.b"], stride=2)
            tokens = layer_norm(img.reshape(-1, img.shape[-1]), w[f"down{s}.norm.w"], w[f"down{s}.norm.b"])
        bspec = spec.block_spec(s)
        for b in range(spec.depths[s]):
            tokens = block_forward(tokens, grid, bspec, mixer, model.block_weights(s, b))
        stages.append(tokens)
    pooled = layer_norm(tokens, w["head.norm.w"], w["head.norm.b"]).mean(axis=0)
    logits = pooled @ w["head.fc.w"] + w["head.fc.b"]
    return (logits, stages) if return_stages else logits
