"""Smoke test for the `mam2` extension module.

Build first, e.g. `maturin develop -m crates/py/Cargo.toml`, then run
`python python/smoke_test.py`.
"""

import math
import os
import tempfile

import mam2


def main():
    clip = mam2.generate_clip(seed=1, class_id=0, frames=8, height=32, width=32)
    assert clip.shape == (8, 3, 32, 32)
    assert clip.label == 0
    values = clip.values()
    assert len(values) == 8 * 3 * 32 * 32
    assert all(0.0 <= v <= 1.0 for v in values)

    again = mam2.generate_clip(seed=1, class_id=0, frames=8, height=32, width=32)
    assert again.values() == values

    frames = mam2.tube_mask_indices(196, 16, 0.75, 3)
    assert len(frames) == 16
    assert all(f == frames[0] for f in frames)
    assert len(frames[0]) == 147

    cubes = mam2.cube_mask_indices(14, 14, 16, 0.75, 4, 3)
    assert all(f == cubes[0] for f in cubes)

    tokens = mam2.tokenize(clip, 8)
    assert len(tokens) == 8 * 16
    assert all(0 <= k < 16384 for k in tokens)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "x.tnsr")
        mam2.save_tensor(path, [2, 3], [0.5, -1.0, 2.0, 0.0, 1.0, 3.25])
        shape, got = mam2.load_tensor(path)
        assert shape == [2, 3]
        assert got == [0.5, -1.0, 2.0, 0.0, 1.0, 3.25]

    assert mam2.lr_at(0, 1e-3, 10, 100) == 0.0
    assert math.isclose(mam2.lr_at(10, 1e-3, 10, 100), 1e-3)
    assert mam2.lr_at(100, 1e-3, 10, 100) < 1e-9

    model = mam2.Model("toy", seed=0)
    assert model.num_params > 0
    losses, trace = model.forward([clip, again], seed=5)
    losses = dict(losses)
    assert all(math.isfinite(v) for v in losses.values())
    combined = losses["appearance"] + losses["motion"] + 2.0 * losses["alignment"]
    assert math.isclose(losses["total"], combined, rel_tol=1e-6)
    shapes = dict(trace)
    assert shapes["regressor"] == [8, 12, 64]
    assert shapes["appearance_logits"] == [8, 12, 16384]

    print("mam2 smoke test passed:", {k: round(v, 4) for k, v in losses.items()})


if __name__ == "__main__":
    main()
