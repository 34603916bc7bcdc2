import numpy as np
import pytest
import torch

from musim import model as model_mod
from musim.config import arch_preset
from musim.corpus import CONDITIONS
from musim.features import SpectrogramPatch
from musim.model import (
    ALL_DIMENSIONS,
    ModelError,
    SimilarityEncoder,
    embed,
    embed_batch,
    init_params,
    load_checkpoint,
    make_masks,
    masked_embed,
    save_checkpoint,
)


def random_patch(rng, frames=129, bands=128):
    return SpectrogramPatch(rng.standard_normal((frames, bands)), standardized=True)


# -- masks --------------------------------------------------------------------


def test_masks_partition_the_space():
    masks = make_masks(256)
    total = sum(int(masks[c].bits.sum()) for c in CONDITIONS)
    assert total == 256
    union = np.zeros(256)
    for c in CONDITIONS:
        union += masks[c].bits
    assert np.all(union == 1.0)


def test_masks_pairwise_disjoint():
    masks = make_masks(256)
    for i, c1 in enumerate(CONDITIONS):
        for c2 in CONDITIONS[i + 1 :]:
            assert np.all(masks[c1].bits * masks[c2].bits == 0.0)


def test_each_semantic_mask_has_64_ones():
    masks = make_masks(256)
    for c in CONDITIONS:
        assert masks[c].size == 64


def test_all_mask_is_ones():
    masks = make_masks(256)
    assert np.all(masks[ALL_DIMENSIONS].bits == 1.0)


def test_mask_dim_must_divide():
    with pytest.raises(ModelError):
        make_masks(30)


# -- init ----------------------------------------------------------------------


def test_init_deterministic():
    m1 = init_params(3, "tiny")
    m2 = init_params(3, "tiny")
    for (k1, p1), (k2, p2) in zip(m1.state_dict().items(), m2.state_dict().items()):
        assert k1 == k2
        assert torch.equal(p1, p2)


def test_different_seeds_differ():
    m1 = init_params(3, "tiny")
    m2 = init_params(4, "tiny")
    assert any(
        not torch.equal(p1, p2)
        for p1, p2 in zip(m1.parameters(), m2.parameters())
    )


def test_full_preset_projects_to_256():
    model = SimilarityEncoder(arch_preset("full"))
    assert model.proj.out_features == 256


# -- embedding -------------------------------------------------------------------


def test_embedding_unit_norm(tiny_model, rng):
    vec = embed(tiny_model, random_patch(rng))
    assert abs(np.linalg.norm(vec) - 1.0) < 1e-5


def test_embedding_deterministic_in_eval(tiny_model, rng):
    patch = random_patch(rng)
    v1 = embed(tiny_model, patch)
    v2 = embed(tiny_model, patch)
    assert np.array_equal(v1, v2)


def test_embed_rejects_wrong_shape(tiny_model, rng):
    with pytest.raises(ModelError, match="shape"):
        embed(tiny_model, random_patch(rng, frames=100))


def test_embed_rejects_unstandardized(tiny_model, rng):
    patch = SpectrogramPatch(rng.standard_normal((129, 128)), standardized=False)
    with pytest.raises(ModelError, match="standardized"):
        embed(tiny_model, patch)


def test_masked_embed_all_ones_is_identity(tiny_model, rng):
    patch = random_patch(rng)
    masks = make_masks(tiny_model.arch.embedding_dim)
    assert np.array_equal(masked_embed(tiny_model, patch, masks[ALL_DIMENSIONS]), embed(tiny_model, patch))


def test_masked_embed_zeroes_other_subspaces(tiny_model, rng):
    patch = random_patch(rng)
    masks = make_masks(tiny_model.arch.embedding_dim)
    sub = tiny_model.arch.embedding_dim // 4
    vec = masked_embed(tiny_model, patch, masks["genre"])
    assert np.all(vec[sub:] == 0.0)
    assert np.linalg.norm(vec) <= 1.0 + 1e-6


def test_subspace_distances_decompose(tiny_model, rng):
    masks = make_masks(tiny_model.arch.embedding_dim)
    e1 = embed(tiny_model, random_patch(rng)).astype(np.float64)
    e2 = embed(tiny_model, random_patch(rng)).astype(np.float64)
    full_sq = float(np.sum((e1 - e2) ** 2))
    parts = sum(
        float(np.sum(((e1 - e2) * masks[c].bits) ** 2)) for c in CONDITIONS
    )
    assert abs(full_sq - parts) < 1e-6


def test_relu_everywhere(tiny_model, rng):
    """Every ConvBnRelu output is non-negative right after activation."""
    outputs = []

    def hook(_module, _inputs, output):
        outputs.append(float(output.min()))

    handles = [
        m.register_forward_hook(hook)
        for m in tiny_model.modules()
        if isinstance(m, model_mod.ConvBnRelu)
    ]
    try:
        embed(tiny_model, random_patch(rng))
    finally:
        for h in handles:
            h.remove()
    assert outputs and all(v >= 0.0 for v in outputs)


# -- checkpoints -------------------------------------------------------------------


def test_checkpoint_round_trip_exact(tiny_model, tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tiny_model, seed=11, step=42, config_hash="abc")
    loaded, meta, extra = load_checkpoint(path)
    assert meta["seed"] == 11 and meta["step"] == 42 and meta["config_hash"] == "abc"
    assert extra == {}
    original = tiny_model.state_dict()
    for key, value in loaded.state_dict().items():
        assert torch.equal(value, original[key]), key


def test_checkpoint_round_trip_preserves_predictions(tiny_model, tmp_path, rng):
    patch = random_patch(rng)
    before = embed(tiny_model, patch)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tiny_model, seed=11)
    loaded, _, _ = load_checkpoint(path)
    assert np.array_equal(embed(loaded, patch), before)


# -- differentiability --------------------------------------------------------------


def test_forward_is_locally_lipschitz(tiny_model, rng):
    """Finite-difference probe: output change bounded by the measured local
    slope, confirming a smooth (differentiable) forward at this point."""
    model = SimilarityEncoder(tiny_model.arch).double()
    model.load_state_dict({k: v.double() for k, v in tiny_model.state_dict().items()})
    model.eval()
    values = rng.standard_normal((129, 128))
    x = torch.from_numpy(values).double().reshape(1, 1, 129, 128)
    i, j = 40, 60

    def pre_norm(inp):
        h = model.stem_pool(model.stem(inp))
        h = model.blocks(h)
        return model.proj(h.mean(dim=(2, 3)))

    with torch.no_grad():
        eps = 1e-4
        plus, minus = x.clone(), x.clone()
        plus[0, 0, i, j] += eps
        minus[0, 0, i, j] -= eps
        slope = torch.linalg.vector_norm(pre_norm(plus) - pre_norm(minus)) / (2 * eps)
        small = 1e-5
        bumped = x.clone()
        bumped[0, 0, i, j] += small
        change = torch.linalg.vector_norm(pre_norm(bumped) - pre_norm(x))
    assert change <= (slope + 1e-3) * small


def test_embed_gradients_match_finite_differences(tiny_model, rng):
    """Analytic gradient via autograd vs central differences, one entry per
    parameter tensor, relative error < 1e-4 (double precision)."""
    model = SimilarityEncoder(tiny_model.arch).double()
    model.load_state_dict({k: v.double() for k, v in tiny_model.state_dict().items()})
    model.eval()
    x = torch.from_numpy(rng.standard_normal((1, 1, 129, 128))).double()
    probe = torch.from_numpy(rng.standard_normal(tiny_model.arch.embedding_dim)).double()

    def scalar():
        return model(x) @ probe

    value = scalar()
    value.backward()
    checked = 0
    for name, param in model.named_parameters():
        flat = param.detach().reshape(-1)
        idx = int(rng.integers(0, flat.shape[0]))
        analytic = param.grad.reshape(-1)[idx].item()
        # Smaller steps dodge ReLU/max-pool kinks the perturbation may cross.
        best = np.inf
        for h in (1e-5, 1e-6, 1e-7):
            with torch.no_grad():
                original = flat[idx].item()
                flat[idx] = original + h
                up = scalar().item()
                flat[idx] = original - h
                down = scalar().item()
                flat[idx] = original
            fd = (up - down) / (2 * h)
            best = min(best, abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8))
            if best < 1e-4:
                break
        assert best < 1e-4, f"{name}[{idx}]: analytic {analytic} (best rel {best})"
        checked += 1
    assert checked == sum(1 for _ in model.parameters())
