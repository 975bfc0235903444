"""Line fits and dispersion for sweep results."""
from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

Point = Tuple[float, float]


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class Regression:
    slope: float
    intercept: float
    r_squared: float
    ser: float
    n: int
    # y was constant, so R² has no meaning and is reported as 0
    flat: bool = False

    def predict(self, x: float) -> float:
        return self.intercept + self.slope * x


def ols(points: Iterable[Point]) -> Regression:
    pts = [(float(x), float(y)) for x, y in points]
    n = len(pts)
    if n < 2:
        raise StatsError(f"need at least two points for a line fit, got {n}")
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    if len(set(xs)) == 1:
        raise StatsError("all x values are equal; slope is undefined")
    try:
        slope, intercept = statistics.linear_regression(xs, ys)
    except statistics.StatisticsError as err:
        raise StatsError(str(err)) from None
    my = math.fsum(ys) / n
    ss_res = math.fsum((y - (intercept + slope * x)) ** 2 for x, y in pts)
    ss_tot = math.fsum((y - my) ** 2 for y in ys)
    if ss_tot == 0:
        r2, flat = 0.0, True
    else:
        r2, flat = min(1.0, max(0.0, 1.0 - ss_res / ss_tot)), False
    ser = math.sqrt(ss_res / (n - 2)) if n > 2 else 0.0
    return Regression(slope, intercept, r2, ser, n, flat)


def coeff_variation(values: Iterable[float]) -> float:
    vals = [float(v) for v in values]
    if not vals:
        raise StatsError("no values")
    mean = statistics.fmean(vals)
    if mean == 0:
        raise StatsError("mean is zero; coefficient of variation is undefined")
    if len(vals) == 1:
        return 0.0
    return statistics.stdev(vals) / mean


# ---------------------------------------------------------------- reporting

REPORT_COLUMNS = ("partition", "x", "y", "n", "slope", "intercept", "r_squared", "ser", "cv_y")


def summarize(rows: Sequence[Mapping[str, object]], x: str, y: str, partition: Optional[str] = None,
              label: str = "all") -> List[Dict[str, object]]:
    """One report line per partition value (or a single line over every row)."""
    groups: Dict[str, List[Mapping[str, object]]] = {}
    for row in rows:
        key = str(row[partition]) if partition else label
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups, key=_natural):
        pts = [(float(r[x]), float(r[y])) for r in groups[key]]
        line: Dict[str, object] = {"partition": key, "x": x, "y": y, "n": len(pts)}
        try:
            fit = ols(pts)
            line.update(slope=fit.slope, intercept=fit.intercept, r_squared=fit.r_squared, ser=fit.ser)
        except StatsError as err:
            line.update(slope=None, intercept=None, r_squared=None, ser=None, note=str(err))
        try:
            line["cv_y"] = coeff_variation(p[1] for p in pts)
        except StatsError:
            line["cv_y"] = None
        out.append(line)
    return out


def _natural(s: str):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def _cell(v: object) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def report_csv(lines: Sequence[Mapping[str, object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for line in lines:
        w.writerow("" if line.get(c) is None else line.get(c) for c in REPORT_COLUMNS)
    return buf.getvalue()


def report_table(lines: Sequence[Mapping[str, object]]) -> str:
    cells = [list(REPORT_COLUMNS)] + [[_cell(line.get(c)) for c in REPORT_COLUMNS] for line in lines]
    widths = [max(len(row[i]) for row in cells) for i in range(len(REPORT_COLUMNS))]
    text = []
    for row in cells:
        text.append("  ".join(c.rjust(w) if i >= 3 else c.ljust(w) for i, (c, w) in enumerate(zip(row, widths))).rstrip())
    notes = sorted({f"note: {line['y']} over {line['partition']}: {line['note']}" for line in lines if line.get("note")})
    return "\n".join(text + notes) + "\n"


def read_rows(path: str) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
