"""Smoke test for the Python bindings.

    cargo build -p one2one-py --features extension-module
    python3 python/smoke.py
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_module():
    lib = ROOT / "target" / "debug" / "libone2one_py.so"
    if not lib.exists():
        sys.exit(f"missing {lib}; build with: cargo build -p one2one-py --features extension-module")
    stage = Path(tempfile.mkdtemp())
    shutil.copy(lib, stage / "one2one_py.so")
    sys.path.insert(0, str(stage))
    import one2one_py

    return one2one_py


def main():
    m = import_module()

    a = [0.25] * 16
    b = [0.5] * 16
    shape = (1, 1, 4, 4)
    assert abs(m.l1(a, b, shape) - 0.25) < 1e-12
    assert abs(m.psnr(a, b, shape) - 12.041199826559248) < 1e-9
    ramp = [i / 255.0 for i in range(256)]
    assert abs(m.ssim(ramp, ramp, (1, 1, 16, 16)) - 1.0) < 1e-12

    train = m.Dataset.synthetic("biased_negation", 16, 8, seed=0, depth=4)
    val = m.Dataset.synthetic("biased_negation", 16, 3, seed=1, split="val", depth=4)
    assert len(train) == 8 and len(val) == 3
    x, y, s = train.pair(0)
    assert s == (1, 1, 16, 16) and len(x) == 256
    assert all(abs(xi + yi) < 1e-6 for xi, yi in zip(x, y))

    cfg = m.TrainConfig("one2one")
    tiny = json.loads(cfg.to_json())
    tiny["generator"].update(depth=4, base_filters=4, max_filters=16)
    tiny["discriminator"]["filter_schedule"] = [2, 4]
    tiny["augment"].update(load_size=18, crop_size=16)
    tiny.update(batch_size=4, epochs=1, log_every=1)
    cfg = m.TrainConfig.from_json(json.dumps(tiny))
    assert cfg.steps_per_epoch(len(train)) == 4

    with tempfile.TemporaryDirectory() as out:
        ckpt = m.train_model(cfg, train, out)
        assert ckpt.step == 4 and ckpt.mode == "one2one"
        assert any(Path(out).iterdir())
        path = Path(out) / "copy.ckpt"
        ckpt.save(str(path))
        again = m.Checkpoint.load(str(path))
        assert again.step == ckpt.step

    g = ckpt.generator()
    assert g.parameter_count() > 0
    out, oshape = g.translate(x, s)
    assert oshape == s and all(-1.0 <= v <= 1.0 for v in out)

    for d in ("A2B", "B2A"):
        r = m.evaluate_generator(g, val, d)
        assert r["n"] == 3 and 0.0 <= r["l1_mean"] <= 1.0
    si = m.self_inverse(g, val)
    assert 0.0 <= si <= 1.0

    passed, checks = m.selfcheck()
    assert passed, [c for c in checks if not c[1]]

    print(f"smoke ok: {len(checks)} selfchecks, self-inverse {si:.4f}")


if __name__ == "__main__":
    main()
