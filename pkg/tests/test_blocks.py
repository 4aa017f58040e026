import numpy as np
import pytest

from mixerlab.blocks import (MILA_POSENC, BlockSpec, block_cost, block_design_ablation, block_forward,
                             block_weight_shapes, init_block, mila_block_flops, transformer_block_flops)
from mixerlab.numerics import DimensionError
from mixerlab.posenc import Grid2D, PosEncKind, PosEncSpec
from mixerlab.unified import BlockDesign, MixerConfig, preset

GRID = Grid2D(7, 7)

DESIGNS = [
    (BlockSpec(design="transformer", dim=64, heads=2), preset("linear-attention")),
    (BlockSpec(design="mamba", dim=64, heads=1, expansion=2.0), preset("selective-ssm")),
    (BlockSpec(design="mila", dim=64, heads=2, posenc=MILA_POSENC), preset("mila")),
]


@pytest.fixture
def tokens():
    return np.random.default_rng(0).standard_normal((49, 64))


@pytest.mark.parametrize("spec,mixer", DESIGNS, ids=lambda v: getattr(v, "design", ""))
def test_output_shape_and_determinism(spec, mixer, tokens):
    w1 = init_block(spec, mixer, seed=3)
    w2 = init_block(spec, mixer, seed=3)
    y1 = block_forward(tokens, GRID, spec, mixer, w1)
    y2 = block_forward(tokens, GRID, spec, mixer, w2)
    assert y1.shape == tokens.shape
    assert np.all(np.isfinite(y1))
    np.testing.assert_array_equal(y1, y2)


@pytest.mark.parametrize("spec,mixer", DESIGNS, ids=lambda v: getattr(v, "design", ""))
def test_zero_residual_branches_give_identity(spec, mixer, tokens):
    w = init_block(spec, mixer, seed=1)
    for name in list(w):
        if name.startswith(("out_proj", "attn.out", "mlp.fc2", "cpe")):
            w[name] = np.zeros_like(w[name])
    np.testing.assert_array_equal(block_forward(tokens, GRID, spec, mixer, w), tokens)


def test_reduced_mila_block_equals_transformer_block(tokens):
    mixer = MixerConfig(causal=False, value_proj=False)
    mila = BlockSpec(design="mila", dim=64, heads=1, gated=False, conv=False)
    trans = BlockSpec(design="transformer", dim=64, heads=1)
    wm = init_block(mila, mixer, seed=5)
    wm["in_proj.b"] = np.zeros(64)
    wt = init_block(trans, mixer, seed=9)
    # same weights, expressed in the transformer's parameterization
    for name in ("norm1.w", "norm1.b", "norm2.w", "norm2.b", "mlp.fc1.w", "mlp.fc1.b", "mlp.fc2.w", "mlp.fc2.b"):
        wt[name] = wm[name]
    wt["attn.q"] = wm["in_proj.w"] @ wm["attn.q"]
    wt["attn.k"] = wm["in_proj.w"] @ wm["attn.k"]
    wt["attn.v"] = wm["in_proj.w"]
    wt["attn.out.w"], wt["attn.out.b"] = wm["out_proj.w"], wm["out_proj.b"]
    delta = np.max(np.abs(block_forward(tokens, GRID, mila, mixer, wm) - block_forward(tokens, GRID, trans, mixer, wt)))
    assert delta < 1e-10


def test_registry_contents():
    mila = block_weight_shapes(BlockSpec(dim=64, heads=2, posenc=MILA_POSENC), preset("mila"))
    assert "attn.v" not in mila
    assert {"cpe.w", "lepe.w", "dwconv.w", "gate_proj.w", "in_proj.w", "out_proj.w"} <= set(mila)
    mamba = block_weight_shapes(BlockSpec(design="mamba", dim=32, expansion=2.0), preset("selective-ssm"))
    assert mamba["in_proj.w"].shape == (32, 64)
    assert {"attn.a_diag", "attn.w_1", "attn.d_skip", "out_norm.w"} <= set(mamba)
    assert "mlp.fc1.w" not in mamba
    with pytest.raises(ValueError):
        block_weight_shapes(BlockSpec(dim=8, posenc=(PosEncSpec("ape"),)), preset("mila"))


def test_ape_table_is_used(tokens):
    spec = BlockSpec(dim=64, heads=2, posenc=(PosEncSpec(PosEncKind.APE),))
    w = init_block(spec, preset("mila"), tokens=49)
    y0 = block_forward(tokens, GRID, spec, preset("mila"), w)
    w["ape.table"] = w["ape.table"] + 1.0
    assert not np.allclose(block_forward(tokens, GRID, spec, preset("mila"), w), y0)


def test_block_heads_override_mixer_heads(tokens):
    spec = BlockSpec(dim=64, heads=4)
    w = init_block(spec, preset("mila"))
    y1 = block_forward(tokens, GRID, spec, preset("mila", heads=1), w)
    y4 = block_forward(tokens, GRID, spec, preset("mila", heads=4), w)
    np.testing.assert_array_equal(y1, y4)


def test_spec_validation(tokens):
    with pytest.raises(DimensionError):
        BlockSpec(dim=10, heads=3)
    with pytest.raises(ValueError):
        BlockSpec(design="mamba", dim=8, expansion=1.5)
    with pytest.raises(ValueError):
        BlockSpec(dim=8, mlp_ratio=0.5)
    spec = BlockSpec(dim=32)
    with pytest.raises(DimensionError):
        block_forward(tokens, GRID, spec, preset("mila"), init_block(spec, preset("mila")))
    assert BlockSpec(dim=64, heads=2).to_dict()["design"] == "mila"


def test_design_ablation_runs_on_square_grids(tokens):
    before, after = block_design_ablation(tokens, MixerConfig(), MixerConfig(block_design=BlockDesign.MILA))
    assert before.shape == after.shape == tokens.shape
    with pytest.raises(ValueError):
        block_design_ablation(tokens[:48], MixerConfig(), MixerConfig(block_design=BlockDesign.MILA))


def test_single_block_flops_closed_form():
    spec = BlockSpec(dim=256, heads=8)
    cost = block_cost(spec, preset("mila"), 196)
    assert cost.total_flops == 170_648_576 == mila_block_flops(196, 256, 32, 3)
    assert cost.flops["linear_attention"] == 3_211_264
    assert cost.flops["dwconv"] == 451_584


@pytest.mark.parametrize("n,c,heads,k", [(196, 256, 8, 3), (49, 512, 16, 5), (3136, 64, 2, 7), (10, 12, 3, 1)])
def test_mila_minus_transformer_is_gate_plus_dwconv(n, c, heads, k):
    m = block_cost(BlockSpec(dim=c, heads=heads, dwconv_kernel=k), preset("mila"), n).total_flops
    t = block_cost(BlockSpec(design="transformer", dim=c, heads=heads), MixerConfig(), n).total_flops
    d = c // heads
    assert t == transformer_block_flops(n, c, d)
    assert m - t == n * c * c + k * k * n * c


def test_flops_monotone_in_tokens_and_width():
    mixer = preset("mila")
    base = block_cost(BlockSpec(dim=64, heads=2, posenc=MILA_POSENC), mixer, 100).total_flops
    assert block_cost(BlockSpec(dim=64, heads=2, posenc=MILA_POSENC), mixer, 101).total_flops > base
    assert block_cost(BlockSpec(dim=66, heads=2, posenc=MILA_POSENC), mixer, 100).total_flops > base


def test_params_match_allocation():
    for spec, mixer in DESIGNS:
        w = init_block(spec, mixer, tokens=49)
        assert sum(a.size for a in w.values()) == block_cost(spec, mixer, 49).params
