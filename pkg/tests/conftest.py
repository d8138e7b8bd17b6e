import numpy as np
import pytest
from PIL import Image


def _save(arr: np.ndarray, path) -> None:
    Image.fromarray(arr.astype(np.uint8)).save(path)


def make_style_images(root, size: int = 128) -> None:
    """Two strongly colored textures: a checkerboard and diagonal stripes."""
    yy, xx = np.mgrid[0:size, 0:size]
    checker = ((yy // 8 + xx // 8) % 2).astype(np.uint8)
    img_a = np.stack(
        [255 * checker, 32 * np.ones_like(checker), 255 * (1 - checker)], axis=-1
    )
    stripes = ((yy + xx) // 6 % 2).astype(np.uint8)
    img_b = np.stack(
        [40 * np.ones_like(stripes), 220 * stripes, 90 * (1 - stripes) + 60], axis=-1
    )
    _save(img_a, root / "texture_a.png")
    _save(img_b, root / "texture_b.png")


def make_content_images(root, size: int = 128) -> None:
    """Smooth gradients for guidance targets."""
    ramp = np.linspace(0, 255, size).astype(np.uint8)
    horiz = np.stack([np.tile(ramp, (size, 1))] * 3, axis=-1)
    vert = np.stack([np.tile(ramp[:, None], (1, size))] * 3, axis=-1)
    _save(horiz, root / "grad_h.png")
    _save(vert, root / "grad_v.png")


@pytest.fixture(scope="session")
def style_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("style")
    make_style_images(root)
    return root


@pytest.fixture(scope="session")
def content_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("content")
    make_content_images(root)
    return root


def smoke_config(**overrides):
    """The desk-scale guided training recipe shared by trainer/acceptance tests."""
    from setcollage.trainer import TrainConfig

    base = dict(
        patch_h=64,
        patch_w=64,
        batch_size=2,
        k_min=2,
        k_max=4,
        gen_depth=2,
        gen_base_channels=8,
        disc_depth=2,
        disc_base_channels=16,
        heads=4,
        lambda_content=10.0,
        lambda_tv=1.0,
        lambda_entropy=0.5,
        lambda_max_usage=1.0,
        iterations=300,
        seed=1234,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def smoke_run(style_dir, content_dir, tmp_path_factory):
    """Full 300-iteration guided smoke training run (shared, ~1-2 min)."""
    import time

    from setcollage.data import load_corpus
    from setcollage.trainer import train

    out = tmp_path_factory.mktemp("smoke_run")
    cfg = smoke_config()
    style = load_corpus(style_dir, (cfg.patch_h, cfg.patch_w))
    content = load_corpus(content_dir, (cfg.patch_h, cfg.patch_w))
    t0 = time.perf_counter()
    result = train(cfg, style, content, out_dir=out)
    elapsed = time.perf_counter() - t0
    return {"result": result, "cfg": cfg, "elapsed_s": elapsed, "out": out}


@pytest.fixture(scope="session")
def quick_run(style_dir, content_dir, tmp_path_factory):
    """Short guided run for tests that just need a usable checkpoint."""
    from setcollage.data import load_corpus
    from setcollage.trainer import train

    out = tmp_path_factory.mktemp("quick_run")
    cfg = smoke_config(iterations=8, seed=7)
    style = load_corpus(style_dir, (64, 64))
    content = load_corpus(content_dir, (64, 64))
    result = train(cfg, style, content, out_dir=out)
    return {"result": result, "cfg": cfg, "out": out}
