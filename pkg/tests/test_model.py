import numpy as np
import pytest

from apmg.model import (
    ApmgModel,
    ModelConfig,
    ModelError,
    encode_grid,
    grid_corners_global,
    init_model,
    load_model,
    save_model,
    to_local,
)
from oracles import mlp_reference, trilinear_reference


def random_model(seed=0, grids=4, channels=1, res=4, dtype=np.float64) -> ApmgModel:
    """A model with meaningfully-sized random weights (init weights are tiny)."""
    cfg = ModelConfig(grids=grids, channels=channels, resolution=(res, res, res))
    model = init_model(cfg, seed=seed, vmin=-1.0, vmax=2.0).astype(dtype)
    rng = np.random.default_rng(seed + 1000)
    model.grids[:] = rng.normal(size=model.grids.shape)
    model.w1[:] = rng.normal(scale=0.3, size=model.w1.shape)
    model.w2[:] = rng.normal(scale=0.3, size=model.w2.shape)
    model.w3[:] = rng.normal(scale=0.3, size=model.w3.shape)
    return model


# ---- transforms ----

def test_to_local_identity():
    g = np.eye(4)
    assert np.allclose(to_local(g, np.array([0.3, -0.7, 0.1])), [0.3, -0.7, 0.1])


def test_to_local_scale():
    g = np.diag([2.0, 2.0, 2.0, 1.0])
    assert np.allclose(to_local(g, np.array([0.5, 0.0, 0.0])), [1.0, 0.0, 0.0])


def test_to_local_translation():
    g = np.eye(4)
    g[0, 3] = 0.5
    assert np.allclose(to_local(g, np.zeros(3)), [0.5, 0.0, 0.0])


def test_to_local_is_affine():
    rng = np.random.default_rng(2)
    g = np.eye(4)
    g[:3, :] = rng.normal(size=(3, 4))
    x, y = rng.normal(size=3), rng.normal(size=3)
    for alpha in (0.0, 0.25, 0.8, 1.0):
        blend = to_local(g, (alpha * x + (1 - alpha) * y)[None, :])[0]
        parts = alpha * to_local(g, x[None, :])[0] + (1 - alpha) * to_local(g, y[None, :])[0]
        assert np.allclose(blend, parts, atol=1e-9)


def test_grid_corners_identity():
    corners = grid_corners_global(np.eye(4))
    expect = {tuple(c) for c in np.array(np.meshgrid(*[[-1, 1]] * 3)).T.reshape(-1, 3)}
    assert {tuple(c) for c in corners} == expect


def test_grid_corners_scale():
    corners = grid_corners_global(np.diag([2.0, 2.0, 2.0, 1.0]))
    assert np.allclose(np.abs(corners), 0.5)


def test_grid_corners_singular():
    g = np.eye(4)
    g[1, :] = 0.0
    with pytest.raises(ModelError, match="singular"):
        grid_corners_global(g)


def test_grid_corners_round_trip():
    rng = np.random.default_rng(8)
    for _ in range(10):
        g = np.eye(4)
        g[:3, :3] = np.eye(3) + rng.normal(scale=0.2, size=(3, 3))
        g[:3, 3] = rng.normal(scale=0.3, size=3)
        corners = grid_corners_global(g)
        back = to_local(g, corners)
        assert np.allclose(np.abs(back), 1.0, atol=1e-6)


# ---- encoding ----

def test_encode_grid_out_of_bounds_zero():
    grid = np.ones((3, 2, 2, 2))
    out = encode_grid(grid, np.array([[2.0, 0.0, 0.0]]))
    assert np.array_equal(out, np.zeros((1, 3)))


def test_encode_grid_constant():
    grid = np.full((2, 3, 3, 3), 7.25)
    out = encode_grid(grid, np.array([[0.1, -0.6, 0.9]]))
    assert np.array_equal(out, np.full((1, 2), 7.25))


def test_encode_grid_cell_center():
    grid = np.arange(8.0).reshape(1, 2, 2, 2)
    out = encode_grid(grid, np.zeros((1, 3)))
    assert out[0, 0] == pytest.approx(3.5)


def test_encode_grid_matches_bruteforce():
    rng = np.random.default_rng(21)
    grid = rng.normal(size=(2, 4, 3, 5))
    pts = rng.uniform(-1, 1, size=(1000, 3))
    out = encode_grid(grid, pts)
    d, h, w = grid.shape[1:]
    for ch in range(2):
        for pt, val in zip(pts[:100], out[:100, ch]):
            ref = trilinear_reference(lambda x, y, z, ch=ch: grid[ch, z, y, x], (w, h, d), pt)
            assert val == pytest.approx(ref, abs=1e-6)


def test_encode_outside_every_grid_is_zero():
    model = random_model(grids=3, channels=2)
    # shrink every grid to a tiny region around the origin: scale 100x
    for i in range(3):
        model.transforms[i, :3, :3] = np.eye(3) * 100.0
        model.transforms[i, :3, 3] = 0.0
    out = model.encode(np.array([[0.9, 0.9, 0.9]]))
    assert np.array_equal(out, np.zeros((1, 6)))


def test_encode_concatenation_order():
    cfg = ModelConfig(grids=2, channels=1, resolution=(2, 2, 2))
    model = init_model(cfg, seed=0)
    model.transforms[:] = np.eye(4)
    model.grids[0] = 3.0
    model.grids[1] = -2.0
    out = model.encode(np.zeros((1, 3)))
    assert out.tolist() == [[3.0, -2.0]]


def test_encode_matches_per_grid_oracle():
    model = random_model(seed=5, grids=4, channels=2)
    pts = np.random.default_rng(6).uniform(-1, 1, size=(50, 3))
    got = model.encode(pts)
    for i in range(4):
        local = to_local(model.transforms[i], pts)
        expect = encode_grid(model.grids[i], local)
        assert np.array_equal(got[:, 2 * i : 2 * i + 2], expect)


# ---- decoding / forward ----

def test_decode_zero_weights_gives_vmin():
    model = random_model()
    model.w1[:] = 0
    model.w2[:] = 0
    model.w3[:] = 0
    model.vmin, model.vmax = -3.0, 5.0
    assert model.decode(np.ones((1, 4)))[0] == -3.0


def test_decode_unit_range_is_raw_mlp():
    model = random_model()
    model.vmin, model.vmax = 0.0, 1.0
    y = np.random.default_rng(0).normal(size=(5, 4))
    raw = np.maximum(np.maximum(y @ model.w1.T, 0) @ model.w2.T, 0) @ model.w3.T
    assert np.allclose(model.decode(y), raw[:, 0])


def test_decode_matches_matrix_chain_oracle():
    model = random_model(seed=9)
    rng = np.random.default_rng(10)
    for _ in range(20):
        y = rng.normal(size=4)
        ref = mlp_reference(y, model.w1, model.w2, model.w3, model.vmin, model.vmax)
        assert model.decode(y[None, :])[0] == pytest.approx(ref, abs=1e-6)


def test_forward_zero_grids_gives_vmin():
    model = random_model()
    model.grids[:] = 0
    model.vmin, model.vmax = -4.0, 9.0
    pts = np.random.default_rng(1).uniform(-1, 1, size=(20, 3))
    assert np.array_equal(model.forward(pts), np.full(20, -4.0))


def test_forward_degenerate_range():
    model = random_model()
    model.vmin = model.vmax = 2.5
    pts = np.random.default_rng(2).uniform(-1, 1, size=(20, 3))
    assert np.array_equal(model.forward(pts), np.full(20, 2.5))


def test_forward_is_decode_of_encode():
    model = random_model(seed=12)
    pts = np.random.default_rng(3).uniform(-1, 1, size=(30, 3))
    assert np.array_equal(model.forward(pts), model.decode(model.encode(pts)))


# ---- initialization ----

def test_init_deterministic():
    cfg = ModelConfig(grids=4, channels=2, resolution=(3, 3, 3))
    a, b = init_model(cfg, seed=77), init_model(cfg, seed=77)
    for name in ("transforms", "grids", "w1", "w2", "w3"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_init_transform_distributions():
    diags, offs = [], []
    cfg = ModelConfig(grids=64, channels=1, resolution=(2, 2, 2))
    for seed in range(60):
        model = init_model(cfg, seed=seed)
        a = model.transforms[:, :3, :3]
        eye = np.eye(3, dtype=bool)
        diags.append(a[:, eye].ravel())
        offs.append(a[:, ~eye].ravel())
    diags = np.concatenate(diags)
    offs = np.concatenate(offs)
    assert diags.size >= 10_000
    assert abs(diags.mean() - 1.0) < 0.01
    assert abs(diags.std() - 0.05) < 0.01
    assert abs(offs.mean()) < 0.01
    assert abs(offs.std() - 0.05) < 0.01


def test_init_grid_range_and_structure():
    cfg = ModelConfig(grids=8, channels=2, resolution=(4, 4, 4))
    model = init_model(cfg, seed=3)
    assert np.abs(model.grids).max() < 1e-4
    assert np.array_equal(model.transforms[:, 3, :], np.tile([0, 0, 0, 1], (8, 1)))
    for i in range(8):
        assert np.linalg.det(model.transforms[i, :3, :3].astype(np.float64)) > 0


def test_init_glorot_limits():
    cfg = ModelConfig(grids=4, channels=1, resolution=(2, 2, 2))
    model = init_model(cfg, seed=5)
    assert np.abs(model.w1).max() <= np.sqrt(6.0 / (4 + 64))
    assert np.abs(model.w2).max() <= np.sqrt(6.0 / 128)
    assert np.abs(model.w3).max() <= np.sqrt(6.0 / 65)


# ---- serialization ----

def test_save_load_bit_exact(tmp_path):
    model = random_model(seed=4, dtype=np.float32)
    model.vmin, model.vmax = -0.25, 1.75
    save_model(model, tmp_path / "m.apmg")
    back = load_model(tmp_path / "m.apmg")
    for name in ("transforms", "grids", "w1", "w2", "w3"):
        assert getattr(back, name).tobytes() == getattr(model, name).tobytes()
    assert back.vmin == np.float32(model.vmin) and back.vmax == np.float32(model.vmax)
    assert back.config.flat_top_p == model.config.flat_top_p


def test_save_load_preserves_forward(tmp_path):
    model = random_model(seed=6, dtype=np.float32)
    save_model(model, tmp_path / "m.apmg")
    back = load_model(tmp_path / "m.apmg")
    pts = np.random.default_rng(7).uniform(-1, 1, size=(100, 3)).astype(np.float32)
    assert model.forward(pts).tobytes() == back.forward(pts).tobytes()


def test_load_bad_magic(tmp_path):
    path = tmp_path / "m.apmg"
    model = random_model(dtype=np.float32)
    save_model(model, path)
    data = bytearray(path.read_bytes())
    data[:4] = b"NOPE"
    path.write_bytes(bytes(data))
    with pytest.raises(ModelError, match="magic"):
        load_model(path)


def test_load_truncated(tmp_path):
    path = tmp_path / "m.apmg"
    model = random_model(dtype=np.float32)
    save_model(model, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(ModelError, match="truncated"):
        load_model(path)
