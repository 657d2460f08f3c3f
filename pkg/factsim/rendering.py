"""Report output: result tables as CSV and accuracy/IDD plots as SVG."""
import logging
import os
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .experiment import ResultTable, SummaryRow
from .federation import RoundRecord
from .snapshot import save_snapshot, write_history_csv
from .templates import BAR_PLOT_TEMPLATE, LINE_PLOT_TEMPLATE, TemplateManager

logger = logging.getLogger(__name__)

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


class Frame(NamedTuple):
    width: int = 640
    height: int = 400
    left: int = 70
    right: int = 610
    top: int = 50
    bottom: int = 340


class Tick(NamedTuple):
    pos: float
    label: str


def _scale(value: float, lo: float, hi: float, out_lo: float, out_hi: float) -> float:
    if hi == lo:
        return (out_lo + out_hi) / 2
    return round(out_lo + (value - lo) * (out_hi - out_lo) / (hi - lo), 2)


def _y_range(values: Sequence[float]) -> Tuple[float, float]:
    """Axis from zero to the largest value."""
    hi = max(values) if values else 1.0
    return 0.0, hi if hi > 0 else 1.0


def _y_ticks(frame: Frame, lo: float, hi: float, count: int = 5) -> List[Tick]:
    return [Tick(_scale(v, lo, hi, frame.bottom, frame.top), f"{v:.3g}") for v in np.linspace(lo, hi, count)]


class ReportRenderer:
    def __init__(self, template_manager: Optional[TemplateManager] = None):
        """Initialize the report renderer."""
        self.template_manager = template_manager or TemplateManager()
        self.frame = Frame()

    def line_plot(self, title: str, x_label: str, y_label: str, x_labels: Sequence[str],
                  series: Dict[str, List[Tuple[int, float, float]]]) -> str:
        """Render series of (x index, mean, spread) points against categorical x values."""
        frame = self.frame
        highs = [m + s for points in series.values() for _, m, s in points]
        lo, hi = _y_range(highs)
        count = max(len(x_labels), 1)
        xs = [_scale(i, 0, count - 1, frame.left + 30, frame.right - 30) for i in range(count)]
        rendered = []
        for k, (label, points) in enumerate(series.items()):
            rendered.append({
                "label": label,
                "color": PALETTE[k % len(PALETTE)],
                "points": [{"x": xs[i], "y": _scale(m, lo, hi, frame.bottom, frame.top)} for i, m, _ in points],
                "errors": [{"x": xs[i],
                            "low": _scale(max(m - s, lo), lo, hi, frame.bottom, frame.top),
                            "high": _scale(m + s, lo, hi, frame.bottom, frame.top)}
                           for i, m, s in points if s > 0],
            })
        template = self.template_manager.get_template(LINE_PLOT_TEMPLATE)
        return template.render(title=title, x_label=x_label, y_label=y_label, frame=frame, series=rendered,
                               x_ticks=[Tick(x, str(v)) for x, v in zip(xs, x_labels)],
                               y_ticks=_y_ticks(frame, lo, hi))

    def bar_plot(self, title: str, y_label: str, bars: Sequence[Tuple[str, float, float]]) -> str:
        """Render (label, mean, spread) bars."""
        frame = self.frame
        lo, hi = _y_range([m + s for _, m, s in bars])
        slot = (frame.right - frame.left) / max(len(bars), 1)
        rendered = []
        for k, (label, mean, spread) in enumerate(bars):
            top = _scale(mean, lo, hi, frame.bottom, frame.top)
            center = round(frame.left + slot * (k + 0.5), 2)
            rendered.append({
                "label": label, "value": f"{mean:.3f}", "color": PALETTE[k % len(PALETTE)],
                "x": round(center - slot * 0.3, 2), "y": top, "width": round(slot * 0.6, 2),
                "height": round(frame.bottom - top, 2), "center": center,
                "low": _scale(max(mean - spread, lo), lo, hi, frame.bottom, frame.top),
                "high": _scale(mean + spread, lo, hi, frame.bottom, frame.top),
            })
        template = self.template_manager.get_template(BAR_PLOT_TEMPLATE)
        return template.render(title=title, y_label=y_label, frame=frame, bars=rendered,
                               y_ticks=_y_ticks(frame, lo, hi))

    def idd_trace(self, history: Sequence[RoundRecord], title: str) -> Optional[str]:
        """IDD (and target accuracy, when recorded) against the round number."""
        if not any(r.idd is not None for r in history):
            return None
        series = {"IDD": [(i, r.idd, 0.0) for i, r in enumerate(history) if r.idd is not None]}
        if all(r.target_accuracy is not None for r in history):
            series["target accuracy"] = [(i, r.target_accuracy, 0.0) for i, r in enumerate(history)]
        return self.line_plot(title, "round", "value", [str(r.round) for r in history], series)

    def _accuracy_plots(self, summary: Sequence[SummaryRow]) -> Dict[str, str]:
        plots = {}
        swept = [s for s in summary if s.sweep_axis]
        for axis in dict.fromkeys(s.sweep_axis for s in swept):
            rows = [s for s in swept if s.sweep_axis == axis]
            x_labels = list(dict.fromkeys(s.sweep_value for s in rows))
            series: Dict[str, List[Tuple[int, float, float]]] = {}
            for s in rows:
                series.setdefault(s.variant.value, []).append(
                    (x_labels.index(s.sweep_value), s.mean_accuracy, s.std_accuracy))
            plots[f"accuracy_{axis}.svg"] = self.line_plot(
                f"Target accuracy vs {axis}", axis, "target accuracy", x_labels, series)
        unswept = [s for s in summary if not s.sweep_axis]
        if unswept:
            distinct = len(unswept) == len({s.variant for s in unswept})
            bars = [(s.variant.value if distinct else f"{s.variant.value} {s.fingerprint[:6]}",
                     s.mean_accuracy, s.std_accuracy) for s in unswept]
            plots["accuracy_by_variant.svg"] = self.bar_plot("Target accuracy by variant", "target accuracy", bars)
        return plots

    def emit_report(self, table: ResultTable, out_dir: str, timings: bool = True) -> List[str]:
        """Write CSV tables, accuracy plots and per-run histories, snapshots and IDD traces.

        Returns the written paths. An unwritable directory raises OSError.
        """
        os.makedirs(out_dir, exist_ok=True)
        written = []

        path = os.path.join(out_dir, "results.csv")
        table.to_csv(path)
        written.append(path)
        path = os.path.join(out_dir, "summary.csv")
        table.summary_to_csv(path)
        written.append(path)
        if timings:
            path = os.path.join(out_dir, "timings.csv")
            table.timings_to_csv(path)
            written.append(path)

        for name, svg in self._accuracy_plots(table.summary()).items():
            written.append(self._write(out_dir, name, svg))

        for (fp, seed), history in table.histories.items():
            stem = f"{fp}_{seed}"
            path = os.path.join(out_dir, f"history_{stem}.csv")
            write_history_csv(history, path)
            written.append(path)
            svg = self.idd_trace(history, f"IDD per round ({fp}, seed {seed})")
            if svg is not None:
                written.append(self._write(out_dir, f"idd_{stem}.svg", svg))
        for (fp, seed), params in table.snapshots.items():
            path = os.path.join(out_dir, f"snapshot_{fp}_{seed}.json")
            row = next((r for r in table.rows if r.key == (fp, seed)), None)
            meta = {} if row is None else {"round": row.selected_round, "idd": row.best_idd}
            save_snapshot(params, path, meta)
            written.append(path)

        logger.info(f"Report with {len(written)} files written to {out_dir}")
        return written

    def _write(self, out_dir: str, name: str, content: str) -> str:
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(content)
        return path
