import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage

from convisa.errors import DimensionError
from convisa.isa import (IsaModel, IsaTrainConfig, PcaModel, grouping_matrix, isa_plus_extract,
                         orthonormalize, train_isa)
from convisa.two_stream import (StreamConfig, build_cell_grid, extract_learned, extract_lof,
                                extract_lop, input_dim, temporal_correlation, training_rows)
from convisa.video import TrajectoryPatch

GRID = (2, 2, 3)


def smooth_patches(n, P=8, L=15, C=1, seed=0):
    rng = np.random.default_rng(seed)
    x = ndimage.gaussian_filter(rng.standard_normal((n, P, P, L, C)), (0, 1, 1, 1.5, 0))
    return x.astype(np.float32)


def trained(cfg, patches, d=4, g=2):
    rows = training_rows(patches, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return train_isa(rows, IsaTrainConfig(group_size=g, latent_dim=d * g, out_dim=d, epochs=30))


@pytest.fixture(scope="module")
def lop():
    cfg = StreamConfig.projection("appearance", 5, cell_grid=GRID)
    return cfg, trained(cfg, smooth_patches(60))


@pytest.fixture(scope="module")
def lof():
    cfg = StreamConfig.pooling("motion", "mean", cell_grid=GRID)
    return cfg, trained(cfg, smooth_patches(40, C=2, seed=1))


def test_cell_grid_layout():
    vol = np.arange(32 * 32 * 15, dtype=np.float32).reshape(32, 32, 15, 1)
    cells = build_cell_grid(vol, GRID)
    assert len(cells) == 12 and all(c.shape == (16, 16, 5, 1) for c in cells)
    # raster order: x fastest, then y, then t
    assert cells[1][0, 0, 0, 0] == vol[16, 0, 0, 0]
    assert cells[2][0, 0, 0, 0] == vol[0, 16, 0, 0]
    assert cells[4][0, 0, 0, 0] == vol[0, 0, 5, 0]
    rebuilt = np.zeros_like(vol)
    for k, c in enumerate(cells):
        i, j, t = k % 2, (k // 2) % 2, k // 4
        rebuilt[i * 16:(i + 1) * 16, j * 16:(j + 1) * 16, t * 5:(t + 1) * 5] = c
    assert np.array_equal(rebuilt, vol)
    (whole,) = build_cell_grid(vol, (1, 1, 1))
    assert np.array_equal(whole, vol)
    with pytest.raises(DimensionError):
        build_cell_grid(np.zeros((4, 4, 2, 1)), (1, 1, 3))


def test_config_structures():
    p = StreamConfig.projection("appearance")
    q = StreamConfig.pooling("motion")
    assert (p.kind, p.structure, p.stack_len) == ("LOP", "projection", 5)
    assert (q.kind, q.structure, q.stack_len) == ("LOF", "pooling", 1)
    with pytest.raises(ValueError):
        StreamConfig(stream="audio")
    with pytest.raises(DimensionError):
        training_rows(smooth_patches(2), StreamConfig(stack_len=2, cell_grid=GRID))


def test_descriptor_lengths(lop, lof):
    (pc, pm), (fc, fm) = lop, lof
    assert input_dim((8, 8, 15, 1), pc) == pm.input_dim == 80
    assert input_dim((8, 8, 15, 2), fc) == fm.input_dim == 32
    a = extract_lop(TrajectoryPatch(smooth_patches(1, seed=3)[0], (0.5, 0.5, 0.5)), pm, pc)
    b = extract_lof(TrajectoryPatch(smooth_patches(1, C=2, seed=4)[0], (0.2, 0.3, 0.4)), fm, fc)
    assert a.values.shape == b.values.shape == (12 * 2 * 4,)
    assert (a.kind, b.kind) == ("LOP", "LOF") and b.location == (0.2, 0.3, 0.4)


def _permute_within_cells(vol, perm):
    out = vol.copy()
    for t0 in range(0, 15, 5):
        out[:, :, t0:t0 + 5] = vol[:, :, t0 + np.asarray(perm)]
    return out


@given(st.permutations(range(5)), st.integers(0, 1000))
def test_lof_permutation_invariant(lof, perm, seed):
    cfg, model = lof
    x = smooth_patches(1, C=2, seed=seed)[0]
    a = extract_learned([x], model, cfg)
    b = extract_learned([_permute_within_cells(x, perm)], model, cfg)
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-6)


def test_lop_sees_frame_order(lop):
    cfg, model = lop
    x = smooth_patches(1, seed=9)[0]
    a = extract_learned([x], model, cfg)
    b = extract_learned([_permute_within_cells(x, [4, 3, 2, 1, 0])], model, cfg)
    assert np.abs(a - b).max() > 1e-3


def test_lof_mean_pooling_loop(lof):
    cfg, model = lof
    x = smooth_patches(1, C=2, seed=11)[0]
    got = extract_learned([x], model, cfg)[0].reshape(12, -1)
    for k, cell in enumerate(build_cell_grid(x, GRID)):
        frames = [isa_plus_extract(cell[:, :, t].transpose(2, 1, 0).reshape(-1), model)
                  for t in range(cell.shape[2])]
        np.testing.assert_allclose(got[k], np.mean(frames, axis=0), rtol=1e-6, atol=1e-9)


def test_single_frame_cells_pool_to_identity(lof):
    _, model = lof
    one = StreamConfig.pooling("motion", "max", cell_grid=(2, 2, 15))
    mean = StreamConfig.pooling("motion", "mean", cell_grid=(2, 2, 15))
    x = smooth_patches(1, C=2, seed=12)[0]
    np.testing.assert_array_equal(extract_learned([x], model, one), extract_learned([x], model, mean))


def test_zero_patch_on_centred_model():
    rng = np.random.default_rng(0)
    pca = PcaModel(np.zeros(80), orthonormalize(rng.standard_normal((8, 80))), np.ones(8))
    model = IsaModel(orthonormalize(rng.standard_normal((8, 8))), grouping_matrix(4, 2), pca)
    cfg = StreamConfig.projection("appearance", 5, cell_grid=GRID)
    out = extract_learned([np.zeros((8, 8, 15, 1))], model, cfg).reshape(12, 8)
    assert not out[:, :4].any()


def test_dimension_mismatch_names_both(lop):
    cfg, model = lop
    fcfg = StreamConfig.pooling("motion", cell_grid=GRID)
    with pytest.raises(DimensionError, match=r"LOF pooling.*32.*80"):
        extract_learned(smooth_patches(1, C=2), model, fcfg)
    with pytest.raises(DimensionError):
        extract_lop(TrajectoryPatch(smooth_patches(1, C=2)[0], (0.5,) * 3), model, cfg)


def test_extraction_deterministic(lop):
    cfg, model = lop
    x = smooth_patches(3, seed=13)
    assert np.array_equal(extract_learned(x, model, cfg), extract_learned(x, model, cfg))


def test_batched_equals_single(lop):
    cfg, model = lop
    x = smooth_patches(4, seed=14)
    batch = extract_learned(x, model, cfg)
    for i in range(4):
        np.testing.assert_allclose(batch[i], extract_learned([x[i]], model, cfg)[0], rtol=1e-12)


# --- temporal correlation ------------------------------------------------

def test_correlation_static():
    frame = np.random.default_rng(0).standard_normal((6, 6, 1, 1))
    assert np.isclose(temporal_correlation([np.repeat(frame, 5, axis=2)]), 1.0)


def test_correlation_independent():
    x = np.random.default_rng(1).standard_normal((40, 16, 16, 5, 1))
    assert abs(temporal_correlation(list(x))) < 0.05


def test_correlation_alternating():
    f = np.random.default_rng(2).standard_normal((5, 5, 1, 2))
    vol = np.concatenate([f, -f, f, -f], axis=2)
    assert np.isclose(temporal_correlation([vol]), -1.0)


def test_correlation_errors():
    with pytest.raises(ValueError):
        temporal_correlation([np.ones((3, 3, 4, 1))])
    with pytest.raises(DimensionError):
        temporal_correlation([np.ones((3, 3, 1, 1))])
