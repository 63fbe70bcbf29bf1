import math
import random

import numpy as np
import pytest

from boxforge.geometry import BBox, ImageShape
from boxforge.pyramid import (
    SMALL_RELATIVE_SCALE,
    AnchorSpec,
    LevelAssignConfig,
    anchor_array,
    assign_level,
    generate_anchors,
    relative_scale,
    scale_report,
)


def test_p2_first_anchor():
    spec = AnchorSpec(ratios=(1.0,))
    assert generate_anchors(spec, "P2", 2, 2)[0].as_tuple() == (-4.0, -4.0, 8.0, 8.0)


def test_p6_ratio_two():
    spec = AnchorSpec(ratios=(2.0,))
    b = generate_anchors(spec, "P6", 1, 1)[0]
    assert b.width == pytest.approx(math.sqrt(192.0**2 * 2), abs=1e-9)
    assert b.width == pytest.approx(271.529, abs=1e-3)
    assert b.height == pytest.approx(135.765, abs=1e-3)


def test_anchor_layout_and_area():
    spec = AnchorSpec()
    arr = anchor_array(spec, 3, 4, 3)
    assert arr.shape == (4 * 3 * 3, 4)
    areas = (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])
    assert np.allclose(areas, 24.0**2, atol=1e-6, rtol=0)
    # cell (x=1, y=0) comes right after cell (0, 0)
    centers = (arr[:, :2] + arr[:, 2:]) / 2
    assert centers[3].tolist() == pytest.approx([12.0, 4.0])
    assert centers[12].tolist() == pytest.approx([4.0, 12.0])


def test_anchor_errors():
    with pytest.raises(ValueError):
        anchor_array(AnchorSpec(), "P7", 1, 1)
    with pytest.raises(ValueError):
        anchor_array(AnchorSpec(), "Q3", 1, 1)
    with pytest.raises(ValueError):
        AnchorSpec(areas={2: 10.0, 3: 5.0}, strides={2: 4.0, 3: 8.0})


@pytest.mark.parametrize("side, level", [(76, 4), (152, 5), (10, 2), (38, 3), (75.9, 3), (1000, 5)])
def test_assign_level_examples(side, level):
    assert assign_level(BBox(0, 0, side, side)) == level


def test_assign_level_zero_area():
    with pytest.raises(ValueError):
        assign_level(BBox(0, 0, 0, 10))


def test_assign_level_monotone_and_bounded():
    rng = random.Random(0)
    cfg = LevelAssignConfig()
    boxes = [BBox(0, 0, rng.uniform(0.1, 2000), rng.uniform(0.1, 2000)) for _ in range(2000)]
    boxes.sort(key=lambda b: b.width * b.height)
    levels = [assign_level(b, cfg) for b in boxes]
    assert all(a <= b for a, b in zip(levels, levels[1:]))
    assert set(levels) <= {2, 3, 4, 5}


def test_level_config_validation():
    with pytest.raises(ValueError):
        LevelAssignConfig(k0=6)
    with pytest.raises(ValueError):
        LevelAssignConfig(canonical=0)


def test_relative_scale_examples():
    assert relative_scale(BBox(0, 0, 600, 400), ImageShape(600, 400)) == 1.0
    v = relative_scale(BBox(0, 0, 32, 32), ImageShape(600, 400))
    assert abs(v - math.sqrt(1024 / 240000)) <= 1e-12
    assert round(v, 3) == 0.065
    assert v == SMALL_RELATIVE_SCALE
    assert relative_scale(BBox(0, 0, 67, 67), ImageShape(1920, 1280)) == pytest.approx(0.04274, abs=1e-5)


def test_relative_scale_is_scale_invariant():
    rng = random.Random(1)
    for _ in range(200):
        w, h = rng.randint(10, 3000), rng.randint(10, 3000)
        b = BBox(0, 0, rng.uniform(1, w), rng.uniform(1, h))
        k = rng.randint(2, 5)
        bk = BBox(0, 0, b.x2 * k, b.y2 * k)
        assert relative_scale(bk, ImageShape(w * k, h * k)) == pytest.approx(relative_scale(b, ImageShape(w, h)), rel=1e-12)


def test_scale_report_small_fraction():
    shape = ImageShape(600, 400)
    items = [(BBox(0, 0, 20, 20), shape)] * 7 + [(BBox(0, 0, 200, 200), shape)] * 3
    stats = scale_report(items)
    assert stats.small_fraction == 0.7
    assert abs(stats.fractions.sum() - 1.0) <= 1e-12


def test_scale_report_identical_boxes_single_bin():
    stats = scale_report([(BBox(0, 0, 30, 30), ImageShape(100, 100))] * 5)
    assert sorted(stats.fractions.tolist())[-1] == 1.0
    assert np.count_nonzero(stats.fractions) == 1


def test_scale_report_last_bin_closed_and_csv():
    stats = scale_report([(BBox(0, 0, 10, 10), ImageShape(10, 10))], bin_edges=[0, 0.5, 1])
    assert stats.fractions.tolist() == [0.0, 1.0]
    assert stats.to_csv().splitlines() == ["bin_low,bin_high,fraction", "0.0,0.5,0.0", "0.5,1.0,1.0"]


def test_scale_report_errors():
    with pytest.raises(ValueError):
        scale_report([])
    with pytest.raises(ValueError):
        scale_report([(BBox(0, 0, 10, 10), ImageShape(10, 10))], bin_edges=[0, 0.5])
    with pytest.raises(ValueError):
        scale_report([(BBox(0, 0, 1, 1), ImageShape(10, 10))], bin_edges=[0, 0, 1])
