"""Smoke test for the `bda` extension module.

Build and install with `pip install --no-build-isolation ./crates/python`
(needs maturin), or put `target/release/libbda.so` on PYTHONPATH as
`bda.so`. Then run `python python/smoke_test.py`.
"""

import json
import math

import bda


def check_focal():
    v = bda.focal_loss([[0.2, 0.5, 0.2, 0.1]], [2])
    hand = 1.6 * 0.5**1.5 * math.log(2)
    assert abs(v - hand) < 1e-9, (v, hand)
    # gamma 0 with unit weights is cross-entropy on the true level.
    plain = bda.focal_loss([[0.1, 0.7, 0.1, 0.1], [0.25] * 4], [2, 0], alpha=[1.0] * 4, gamma=0.0)
    assert abs(plain + math.log(0.7)) < 1e-12, plain


def check_rasterize():
    doc = json.dumps({"features": [
        {"properties": {"subtype": "destroyed"}, "wkt": "POLYGON ((0 0, 2 0, 2 2, 0 2, 0 0))"},
    ]})
    a = bda.rasterize(doc, 4, 4)
    b = bda.rasterize(doc, 4, 4, method="point")
    assert a == b
    assert a == [4, 4, 0, 0, 4, 4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0], a
    assert bda.rasterize(doc, 4, 4, kind="loc").count(1) == 4


def check_scores():
    gt = [[1, 2, 3, 4, 0, 0]]
    r = bda.scores([[1, 1, 1, 1, 0, 0]], gt, gt, 2, 3)
    assert r["f1_loc"] == 1.0 and r["f1_clf"] == 1.0 and r["f1_oa"] == 1.0, r
    r = bda.scores([[1, 1, 1, 1, 0, 0]], [[1, 1, 3, 4, 0, 0]], gt, 2, 3)
    assert r["f1_levels"][1] == 0.0 and r["f1_clf"] == 0.0
    assert abs(r["f1_oa"] - 0.3) < 1e-12


def check_config():
    keys = dict(bda.config_keys())
    assert "losses.focal_gamma" in keys
    cfg = bda.parse_config("model.enable_focal = true\ntrain.iterations = 7\n")
    assert cfg["model.enable_focal"] == "true" and cfg["train.iterations"] == "7"
    assert bda.variant_name("AGB+ALIGN + FOCAL") == "FOCAL + ALIGN + AGB"
    try:
        bda.parse_config("model.depth = 3\n")
    except ValueError as e:
        assert "unknown key" in str(e)
    else:
        raise AssertionError("unknown key accepted")


def check_gradients():
    for name, err, tol in bda.gradcheck(0):
        assert err < tol, (name, err, tol)


def check_training():
    r = bda.overfit("FOCAL + AGB", iterations=40, stage_channels=[8, 16, 24, 32])
    assert r["variant"] == "FOCAL + AGB" and r["samples"] == 4
    assert abs(r["f1_oa"] - (0.3 * r["f1_loc"] + 0.7 * r["f1_clf"])) < 1e-12
    again = bda.overfit("FOCAL + AGB", iterations=40, stage_channels=[8, 16, 24, 32])
    assert again == r


def main():
    print("bda", bda.version())
    for check in (check_focal, check_rasterize, check_scores, check_config, check_gradients, check_training):
        check()
        print("ok", check.__name__)


if __name__ == "__main__":
    main()
