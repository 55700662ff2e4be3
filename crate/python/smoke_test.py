"""Smoke test for the pipgan_py extension module.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import math
import sys
import tempfile
from pathlib import Path

import pipgan_py as pg

SMALL = """
[model]
width_divisor = 16
[train]
batch_size = 4
eval_every = 0
"""


def main() -> int:
    a = pg.Image.filled(8, 8, 0.3)
    b = pg.Image.filled(8, 8, 0.2)
    psnr, mse, rmse = pg.image_metrics(a, b)
    assert abs(psnr - 20.0) < 1e-9 and abs(mse - 0.01) < 1e-12 and abs(rmse - 0.1) < 1e-12

    assert abs(pg.cross_entropy([[0.0] * 5], [2]) - math.log(5)) < 1e-9
    assert abs(pg.discriminator_loss([0.0, 0.0], [0.0, 0.0]) - 2 * math.log(2)) < 1e-6

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        pg.synth_generate(tmp / "data", subjects=3, poses=5, exprs=7, size=16, seed=1)
        assert len(list((tmp / "data" / "images").glob("*.png"))) == 3 * 5 * 7

        log = pg.train_stage("pose", tmp / "data", tmp / "pose", config=SMALL, max_steps=2)
        assert len(log) == 2 and all(math.isfinite(r["total"]) for r in log)
        pg.train_stage("expression", tmp / "data", tmp / "expr", config=SMALL, max_steps=2)

        pipe = pg.Pipeline(tmp / "pose", tmp / "expr", order="EP")
        assert pipe.order == "EP" and pipe.image_size == 16
        src = pg.Image.load(tmp / "data" / "images" / "s000_p2_e3.png", 16)
        grid = pipe.expand(src, [0, 1, 3, 4], [0, 1, 2, 4, 5, 6])
        assert len(grid) == 24
        assert {(p, e) for p, e, _ in grid} == {(p, e) for p in (0, 1, 3, 4) for e in (0, 1, 2, 4, 5, 6)}
        assert all(img.height == 16 and len(img.data) == 3 * 16 * 16 for _, _, img in grid)

        try:
            pg.Pipeline(tmp / "missing", tmp / "expr")
        except FileNotFoundError:
            pass
        else:
            raise AssertionError("missing checkpoint accepted")

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
