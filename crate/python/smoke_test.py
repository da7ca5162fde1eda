"""Smoke test for the procnet_py extension.

Build and install it first:
    pip install --no-build-isolation ./crates/py
"""

import sys
import tempfile
from pathlib import Path

import procnet_py as pn


def main():
    mask = pn.render_mask("moving-rectangle", 32, [0.0, 0.0, 2.0], [0.0, 0.0, 0.0])
    assert len(mask) == 32 and all(len(r) == 32 for r in mask)
    area = sum(v != 0 for r in mask for v in r)
    assert area > 0, "rectangle not visible"
    assert abs(pn.mask_overlap(mask, mask) - 1.0) < 1e-12

    inverse = [[0 if v else 1 for v in r] for r in mask]
    assert pn.mask_overlap(mask, inverse) < 0.0

    with tempfile.TemporaryDirectory() as tmp:
        data = Path(tmp) / "data"
        occ = pn.generate(str(data), 2, seed=42, image=32, length=4, occlusion=50.0)
        assert len(occ) == 2 and all(45.0 <= o <= 55.0 for o in occ), occ
        assert len(list(data.glob("seq_*/frame_*.pgm"))) == 8

        losses = pn.train(str(data), str(Path(tmp) / "w.bin"), epochs=2, seed=3)
        assert len(losses) == 3 and all(l == l and l >= 0.0 for l in losses), losses
        assert (Path(tmp) / "w.bin").stat().st_size > 0

    try:
        pn.mask_overlap([[1, 0]], [[1]])
    except ValueError:
        pass
    else:
        raise AssertionError("mismatched masks accepted")

    ok, report = pn.self_check()
    print(report)
    assert ok

    print("python smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
