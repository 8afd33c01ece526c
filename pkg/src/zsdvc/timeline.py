"""Static timeline renderings of predicted vs ground-truth intervals (text and SVG)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape


@dataclass(frozen=True)
class Bar:
    start: float
    end: float
    label: str


@dataclass
class Track:
    name: str
    lanes: list[list[Bar]] = field(default_factory=list)

    @property
    def bars(self) -> list[Bar]:
        return [b for lane in self.lanes for b in lane]


def stack_lanes(bars) -> list[list[Bar]]:
    """First-fit lane assignment in start order; bars that only touch share a lane."""
    lanes: list[list[Bar]] = []
    for bar in sorted(bars, key=lambda b: (b.start, b.end)):
        for lane in lanes:
            if lane[-1].end <= bar.start:
                lane.append(bar)
                break
        else:
            lanes.append([bar])
    return lanes


def build_tracks(predictions: list[dict], annotation) -> list[Track]:
    gt = [Bar(s, e, sent) for (s, e), sent in annotation.segments]
    pred = [Bar(*p["timestamp"], p["sentence"]) for p in predictions]
    return [Track("ground truth", stack_lanes(gt)), Track("prediction", stack_lanes(pred))]


def render_text(tracks: list[Track], duration: float, video_id: str = "", width: int = 60) -> str:
    lines = [f"video {video_id}  duration {duration:g}s", f"{'':14}0{'':{width - 1}}{duration:g}"]
    scale = width / duration if duration > 0 else 0.0
    for track in tracks:
        if not track.lanes:
            lines.append(f"{track.name:<13} |{'':{width}}|")
            continue
        for k, lane in enumerate(track.lanes):
            row = [" "] * width
            for bar in lane:
                a = min(int(math.floor(bar.start * scale)), width - 1)
                b = max(a + 1, min(int(math.ceil(bar.end * scale)), width))
                row[a:b] = ["#"] * (b - a)
            name = track.name if k == 0 else ""
            lines.append(f"{name:<13} |{''.join(row)}|")
    lines.append("")
    for track in tracks:
        for bar in sorted(track.bars, key=lambda b: (b.start, b.end)):
            lines.append(f"{track.name:<13} [{bar.start:8.2f}, {bar.end:8.2f}] {bar.label}")
    return "\n".join(lines) + "\n"


COLORS = {"ground truth": "#4a7ab5", "prediction": "#d9822b"}


def render_svg(tracks: list[Track], duration: float, video_id: str = "", width: int = 800) -> str:
    lane_h, gap, left, top = 18, 10, 110, 30
    rows = sum(max(1, len(t.lanes)) for t in tracks)
    height = top + rows * lane_h + gap * len(tracks) + 20
    span = width - left - 10
    scale = span / duration if duration > 0 else 0.0
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<text x="4" y="16">{escape(f"{video_id}  ({duration:g}s)")}</text>',
        f'<line x1="{left}" y1="{top - 4}" x2="{left + span}" y2="{top - 4}" stroke="#999"/>',
    ]
    y = top
    for track in tracks:
        out.append(f'<text x="4" y="{y + 13}">{escape(track.name)}</text>')
        color = COLORS.get(track.name, "#777")
        for lane in track.lanes or [[]]:
            for bar in lane:
                x = left + bar.start * scale
                w = max(1.0, (bar.end - bar.start) * scale)
                out.append(
                    f'<rect class="bar" x="{x:.2f}" y="{y + 2}" width="{w:.2f}" height="{lane_h - 4}" '
                    f'fill="{color}" fill-opacity="0.8"><title>{escape(bar.label)} '
                    f'[{bar.start:.2f}, {bar.end:.2f}]</title></rect>'
                )
            y += lane_h
        y += gap
    out.append("</svg>")
    return "\n".join(out) + "\n"
