"""Probability grids: parsing, thresholding, vectorisation and segmentation metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from . import geometry as geo
from .errors import GridMismatch, LengthMismatch, ParseError, RangeError, ZeroTruth

THRESHOLD_GRID = tuple(k / 100 for k in range(101))
HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")


class GridHeader(NamedTuple):
    ncols: int
    nrows: int
    origin_x: float
    origin_y: float
    cellsize: float


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """Row-major grid of probabilities; row 0 is the northernmost row."""

    header: GridHeader
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        h = self.header
        if h.cellsize <= 0:
            raise RangeError(f"cellsize must be positive, got {h.cellsize}")
        if v.shape != (h.nrows, h.ncols):
            raise ParseError(f"values shape {v.shape} does not match header {h.nrows}x{h.ncols}")
        if v.size and (not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0):
            raise RangeError("probability values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return (isinstance(other, ProbabilityMap) and self.header == other.header
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True, eq=False)
class BinaryMask:
    header: GridHeader
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values).astype(bool)
        if v.shape != (self.header.nrows, self.header.ncols):
            raise GridMismatch("mask shape does not match header")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return (isinstance(other, BinaryMask) and self.header == other.header
                and np.array_equal(self.values, other.values))

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.values))


@dataclass(frozen=True)
class PvPolygon:
    pv_id: str
    ring: geo.Polygon2
    source_tile: str
    area_m2: float


def parse_grid(data: bytes | str) -> ProbabilityMap:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = [ln for ln in data.splitlines() if ln.strip()]
    if len(lines) < len(HEADER_KEYS):
        raise ParseError("grid file is missing header lines")
    header = {}
    for lineno, ln in enumerate(lines[:len(HEADER_KEYS)], 1):
        parts = ln.split()
        if len(parts) != 2 or parts[0].lower() not in HEADER_KEYS:
            raise ParseError(f"line {lineno}: expected one of {', '.join(HEADER_KEYS)}, got {ln.strip()!r}")
        header[parts[0].lower()] = parts[1]
    missing = [k for k in HEADER_KEYS if k not in header]
    if missing:
        raise ParseError(f"grid header is missing {', '.join(missing)}")
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        hdr = GridHeader(ncols, nrows, float(header["xllcorner"]),
                         float(header["yllcorner"]), float(header["cellsize"]))
    except ValueError as exc:
        raise ParseError(f"malformed header value: {exc}") from None
    if ncols <= 0 or nrows <= 0:
        raise ParseError("ncols and nrows must be positive")
    rows = lines[len(HEADER_KEYS):]
    if len(rows) != nrows:
        raise ParseError(f"expected {nrows} data rows, found {len(rows)}")
    values = np.empty((nrows, ncols))
    for r, ln in enumerate(rows):
        try:
            row = np.array(ln.split(), dtype=float)
        except ValueError:
            raise ParseError(f"data row {r}: non-numeric value") from None
        if row.size != ncols:
            raise ParseError(f"data row {r}: expected {ncols} values, found {row.size}")
        values[r] = row
    bad = ~np.isfinite(values) | (values < 0) | (values > 1)
    if bad.any():
        r, c = map(int, np.argwhere(bad)[0])
        raise RangeError(f"value {values[r, c]!r} at row {r}, col {c} outside [0, 1]")
    return ProbabilityMap(hdr, values)


def write_grid(grid: ProbabilityMap | BinaryMask) -> bytes:
    h = grid.header
    vals = np.asarray(grid.values, dtype=float)
    out = [
        f"ncols {h.ncols}",
        f"nrows {h.nrows}",
        f"xllcorner {h.origin_x!r}",
        f"yllcorner {h.origin_y!r}",
        f"cellsize {h.cellsize!r}",
    ]
    # format each distinct value once; tiles are dominated by a few values
    uniq, inv = np.unique(vals, return_inverse=True)
    text = np.array([f"{u:.6f}" for u in uniq], dtype=object)[inv.reshape(vals.shape)]
    out.extend(" ".join(row) for row in text)
    return ("\n".join(out) + "\n").encode("utf-8")


def threshold(pmap: ProbabilityMap, t: float) -> BinaryMask:
    return BinaryMask(pmap.header, pmap.values >= t)


def mask_area_m2(mask: BinaryMask) -> float:
    return mask.count * mask.header.cellsize ** 2


def _trace_simple(cells: np.ndarray):
    """Boundary of a 4-connected cell set as one CCW vertex loop.

    Works in y-up integer vertex coordinates local to ``cells``. Returns None
    if the set has a hole or touches itself at a vertex.
    """
    h, _ = cells.shape
    p = np.pad(cells, 1)
    fg = p[1:-1, 1:-1]
    edges = {}
    n_edges = 0
    # (neighbour-empty test, start offset, end offset) relative to the cell's lower-left corner
    sides = (
        (fg & ~p[2:, 1:-1], (0, 0), (1, 0)),    # south
        (fg & ~p[1:-1, 2:], (1, 0), (1, 1)),    # east
        (fg & ~p[:-2, 1:-1], (1, 1), (0, 1)),   # north
        (fg & ~p[1:-1, :-2], (0, 1), (0, 0)),   # west
    )
    for sel, (sx, sy), (ex, ey) in sides:
        rr, cc = np.nonzero(sel)
        yb = h - 1 - rr
        for c, y in zip(cc.tolist(), yb.tolist()):
            edges[(c + sx, y + sy)] = (c + ex, y + ey)
            n_edges += 1
    if len(edges) != n_edges:
        return None
    start = min(edges)
    loop = [start]
    cur = edges[start]
    while cur != start:
        loop.append(cur)
        cur = edges[cur]
    if len(loop) != n_edges:
        return None
    # drop collinear vertices
    out = []
    n = len(loop)
    for k in range(n):
        a, b, c = loop[k - 1], loop[k], loop[(k + 1) % n]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0:
            out.append(b)
    return out


def _simple_pieces(cells: np.ndarray, row0: int, col0: int):
    """Yield (loop, row0, col0, height) covering ``cells`` with hole-free pieces.

    A component with holes or vertex contacts is split into horizontal bands
    until every piece traces as a simple loop; area is conserved exactly.
    """
    loop = _trace_simple(cells)
    if loop is not None:
        yield loop, row0, col0, cells.shape[0]
        return
    mid = cells.shape[0] // 2
    for band, r_off in ((cells[:mid], 0), (cells[mid:], mid)):
        lab, n = ndimage.label(band)
        for k, sl in enumerate(ndimage.find_objects(lab), 1):
            sub = lab[sl] == k
            yield from _simple_pieces(sub, row0 + r_off + sl[0].start, col0 + sl[1].start)


def vectorize(mask: BinaryMask, source_tile: str = "") -> list[PvPolygon]:
    """One staircase polygon per 4-connected component of set cells.

    Components enclosing empty cells are returned as several hole-free pieces.
    """
    h = mask.header
    cs = h.cellsize
    lab, _ = ndimage.label(mask.values)
    polys = []
    for k, sl in enumerate(ndimage.find_objects(lab), 1):
        if sl is None:
            continue
        cells = lab[sl] == k
        for loop, r0, c0, ph in _simple_pieces(cells, sl[0].start, sl[1].start):
            # local y-up vertex (x, y) -> global column c0 + x, row edge r0 + ph - y
            ring = tuple(
                (h.origin_x + (c0 + x) * cs, h.origin_y + (h.nrows - (r0 + ph - y)) * cs)
                for x, y in loop
            )
            poly = geo.Polygon2(ring)
            polys.append(PvPolygon(f"{source_tile}#{len(polys)}", poly, source_tile, geo.area_2d(poly)))
    return polys


def _ape(pred, truth) -> np.ndarray:
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise LengthMismatch(f"need equal non-empty lists, got {p.size} and {t.size}")
    if np.any(t <= 0):
        raise ZeroTruth("reference values must be positive")
    return np.abs(p - t) / t * 100.0


def mape(pred: Sequence[float], truth: Sequence[float]) -> float:
    return float(np.mean(_ape(pred, truth)))


def medape(pred: Sequence[float], truth: Sequence[float]) -> float:
    return float(np.median(_ape(pred, truth)))


def _check_headers(a, b):
    if a.header != b.header:
        raise GridMismatch(f"grid headers differ: {a.header} vs {b.header}")


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; two empty masks agree perfectly (1.0)."""
    _check_headers(a, b)
    union = np.count_nonzero(a.values | b.values)
    if union == 0:
        return 1.0
    return np.count_nonzero(a.values & b.values) / union


def precision_recall(pred_labels, true_labels) -> tuple[float | None, float | None]:
    """Precision and recall; None where the denominator is zero."""
    if len(pred_labels) != len(true_labels):
        raise LengthMismatch(f"{len(pred_labels)} predictions vs {len(true_labels)} labels")
    p = np.asarray(pred_labels, dtype=bool)
    t = np.asarray(true_labels, dtype=bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    return precision, recall


def threshold_curve(maps, truths, grid=THRESHOLD_GRID) -> list[tuple[float, float]]:
    """MAPE of thresholded map area vs truth area at every grid threshold."""
    if len(maps) != len(truths) or not maps:
        raise LengthMismatch(f"need paired non-empty lists, got {len(maps)} maps and {len(truths)} truths")
    for m, t in zip(maps, truths):
        _check_headers(m, t)
    truth_areas = [mask_area_m2(t) for t in truths]
    sorted_vals = [np.sort(m.values, axis=None) for m in maps]
    curve = []
    for t in grid:
        pred_areas = [
            (v.size - int(np.searchsorted(v, t, side="left"))) * m.header.cellsize ** 2
            for v, m in zip(sorted_vals, maps)
        ]
        curve.append((t, mape(pred_areas, truth_areas)))
    return curve


def best_threshold(curve) -> tuple[float, float]:
    """Lowest-MAPE point of a curve; ties go to the smallest threshold."""
    best = None
    for t, err in curve:
        if best is None or err < best[1] or (err == best[1] and t < best[0]):
            best = (t, err)
    return best


def threshold_search(maps, truths, grid=THRESHOLD_GRID) -> tuple[float, float]:
    return best_threshold(threshold_curve(maps, truths, grid))
