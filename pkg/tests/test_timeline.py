import xml.etree.ElementTree as ET

from hypothesis import given, strategies as st

from zsdvc.data_io import VideoAnnotation
from zsdvc.timeline import Bar, build_tracks, render_svg, render_text, stack_lanes

ANN = VideoAnnotation(100.0, [((0.0, 30.0), "a man opens a door"), ((50.0, 90.0), "he leaves")])


def _svg_bars(svg):
    root = ET.fromstring(svg)
    return [el for el in root.iter("{http://www.w3.org/2000/svg}rect") if el.get("class") == "bar"]


def test_two_tracks_four_bars():
    preds = [{"timestamp": [5.0, 25.0], "sentence": "someone at a door"},
             {"timestamp": [40.0, 95.0], "sentence": "walking away"}]
    tracks = build_tracks(preds, ANN)
    assert [t.name for t in tracks] == ["ground truth", "prediction"]
    assert [len(t.lanes) for t in tracks] == [1, 1]
    svg = render_svg(tracks, 100.0, "v")
    bars = _svg_bars(svg)
    assert len(bars) == 4
    titles = [b.find("{http://www.w3.org/2000/svg}title").text for b in bars]
    assert "walking away [40.00, 95.00]" in titles
    text = render_text(tracks, 100.0, "v")
    assert text.count("#") > 0 and "someone at a door" in text


def test_empty_predictions_show_ground_truth_only():
    tracks = build_tracks([], ANN)
    assert tracks[1].lanes == []
    assert len(_svg_bars(render_svg(tracks, 100.0))) == 2
    lines = render_text(tracks, 100.0).splitlines()
    assert any(line.startswith("prediction") and "#" not in line for line in lines)


def test_overlapping_predictions_stack():
    preds = [{"timestamp": [0.0, 60.0], "sentence": "a"}, {"timestamp": [30.0, 80.0], "sentence": "b"},
             {"timestamp": [60.0, 70.0], "sentence": "c"}]
    pred_track = build_tracks(preds, ANN)[1]
    assert [[b.label for b in lane] for lane in pred_track.lanes] == [["a", "c"], ["b"]]
    text = render_text([pred_track], 100.0, width=10)
    assert "|#######   |" in text and "|   #####  |" in text


def test_labels_are_escaped():
    tracks = build_tracks([{"timestamp": [1.0, 2.0], "sentence": "<b> & co"}], ANN)
    ET.fromstring(render_svg(tracks, 100.0, "a&b"))


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 50)), max_size=12))
def test_lanes_never_overlap(raw):
    bars = [Bar(s, s + w, str(k)) for k, (s, w) in enumerate(raw)]
    lanes = stack_lanes(bars)
    assert sorted(b.label for lane in lanes for b in lane) == sorted(b.label for b in bars)
    for lane in lanes:
        assert all(a.end <= b.start for a, b in zip(lane, lane[1:]))
