import xml.etree.ElementTree as ET

import numpy as np
import pytest

from hjspp.svgplot import Canvas, count_class


def test_canvas_elements_and_mapping(tmp_path):
    c = Canvas((0, 100), (0, 50), width=200, height=200)
    assert c.w == 200 and c.h == 100
    u, v = c.px(100, 50)
    assert (float(u), float(v)) == (200.0, 0.0)
    c.polyline([[0, 0], [50, 25], [100, 50]], cls="trajectory")
    c.polyline([[0, 0], [1, 1]], cls="trajectory", label="a")
    c.circle((50, 25), 10, cls="target")
    c.hline(10.0)
    c.cells([0, 50, 100], [0, 50], [["#000", None], ["#fff", "#fff"], [None, None]])
    path = c.save(tmp_path / "p.svg")
    text = path.read_text()
    ET.fromstring(text.split("\n", 1)[1])
    assert count_class(text, "trajectory") == 2
    assert count_class(text, "trajectory", "circle") == 0
    assert count_class(text, "target", "circle") == 1
    assert 'data-y="10"' in text
    root = ET.fromstring(c.to_string())
    rects = [e for e in root.iter() if e.tag.endswith("rect")]
    # background, axes frame and the three filled cells
    assert len(rects) == 5


def test_canvas_rejects_empty_range():
    with pytest.raises(ValueError):
        Canvas((0, 0), (0, 1))


def test_ticks_are_labelled():
    c = Canvas((0, 1000), (0, 1000))
    labels = [e.text for e in ET.fromstring(c.to_string()).iter() if e.tag.endswith("text")]
    assert "0" in labels and "1000" in labels
