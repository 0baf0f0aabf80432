"""Smoke test for the `jedi` extension module.

Build and run from the repository root:

    cargo build --release -p jedi-py --features extension-module
    cp target/release/libjedi.so python/jedi.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import jedi  # noqa: E402


def close(a, b, tol=1e-6):
    return abs(a - b) <= tol


def main():
    assert close(jedi.teacher_dropout_rate(200, 7168), 0.720982)
    assert jedi.teacher_dropout_rate(5, 10) == 0.0

    sizes = [8398, 3570, 226070, 9537]
    assert jedi.dataset_weight(1, 1, sizes) == 1.0
    assert close(jedi.dataset_weight(0, 2, sizes), 0.913138)

    value, grad = jedi.cross_entropy([0.0, 0.0], 0)
    assert close(value, math.log(2.0)) and close(sum(grad), 0.0, 1e-12)
    value, _ = jedi.multiclass_hinge([3.0, 1.0, 2.0], 0)
    assert value == 0.0
    value, gs, gt = jedi.kd_cross_entropy([1.0, 2.0], [1.0, 2.0])
    assert all(abs(g) < 1e-12 for g in gs) and len(gt) == 2

    rows = [[3.0, 1.0, 2.0], [0.0, 5.0, 1.0]]
    assert jedi.topk_accuracy(rows, [2, 0], 2) == 0.5
    assert 0.0 <= jedi.mean_average_precision(rows, [2, 0]) <= 1.0

    try:
        jedi.topk_accuracy(rows, [2, 0], 0)
    except ValueError:
        pass
    else:
        raise AssertionError("k = 0 should be rejected")

    world = "\n".join([
        "unlabeled_pool = 0",
        "[[datasets]]",
        'name = "a"',
        "num_classes = 3",
        "segment_dim = 4",
        "train = 60",
        "val = 0",
        "test = 30",
        "[[datasets]]",
        'name = "b"',
        "num_classes = 2",
        "segment_dim = 3",
        "train = 40",
        "val = 0",
        "test = 20",
    ])
    with tempfile.TemporaryDirectory() as tmp:
        info = jedi.generate_world(tmp, world)
        again = jedi.read_store(tmp)
        assert info == again, (info, again)
        assert again["counts"]["a"]["train"] == 60

        config = "epochs = 30\nburn_in_epochs = 5\nbatch_size = 16\nlr = 1e-3\nadjust_hidden = 4\n"
        out = jedi.fit(config, tmp)
        assert out["epochs"] == 30
        assert all(v == 0.0 for v in out["loss_kd"][:5]) and out["loss_kd"][5] > 0.0
        for name, accs in out["test_acc1"].items():
            assert set(accs) == {"expert", "student", "teacher"}, accs
            assert all(0.0 <= v <= 1.0 for v in accs.values())
        assert out["curves_csv"].startswith("epoch,model,dataset,split,metric,value")

    try:
        jedi.fit("loss.gamma = -1")
    except ValueError:
        pass
    else:
        raise AssertionError("bad config should raise ValueError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
