"""Generate the shipped hexagonal meshes of the unit square.

Pointy-top hexagons of width 1/n are laid out in m + 1 rows whose centres sit
at y = j/m, so y = 0 and y = 1 cut rows through their centres.  Odd rows are
shifted by half a width so x = 0 and x = 1 cut them through their centres.
Cells are clipped to the square; the result is conforming by construction.

    python tools/make_hexagonal.py [--out DIR] [--levels 0 1 2 ...]
"""

from __future__ import annotations

import argparse
import json
from fractions import Fraction
from pathlib import Path

import numpy as np

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "hho_brinkman" / "data" / "hexagonal"


def _clip(poly: list, axis: int, value: float, keep_above: bool) -> list:
    """Sutherland-Hodgman clipping against one axis-aligned half-plane."""
    def inside(p):
        return p[axis] >= value if keep_above else p[axis] <= value

    out = []
    for i, cur in enumerate(poly):
        prev = poly[i - 1]
        if inside(cur):
            if not inside(prev):
                out.append(_cut(prev, cur, axis, value))
            out.append(cur)
        elif inside(prev):
            out.append(_cut(prev, cur, axis, value))
    return out


def _cut(a, b, axis, value):
    t = (value - a[axis]) / (b[axis] - a[axis])
    p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    p[axis] = value
    return p


def _area(poly) -> float:
    return sum(a[0] * b[1] - b[0] * a[1] for a, b in zip(poly, poly[1:] + poly[:1])) / 2


def honeycomb(n: int) -> tuple[list, list]:
    # exact rational arithmetic keeps shared vertices bit-identical
    w = Fraction(1, n)
    m = 2 * max(1, round(n / np.sqrt(3.0)))
    H = Fraction(2, 3 * m)  # centre-to-tip height; row spacing is 3H/2 = 1/m
    zero, one = Fraction(0), Fraction(1)
    polys = []
    for j in range(m + 1):
        yc = Fraction(j, m)
        shift = zero if j % 2 else w / 2
        for i in range(-1, n + 2):
            xc = i * w + shift
            hexa = [[xc, yc - H], [xc + w / 2, yc - H / 2], [xc + w / 2, yc + H / 2],
                    [xc, yc + H], [xc - w / 2, yc + H / 2], [xc - w / 2, yc - H / 2]]
            for axis in (0, 1):
                hexa = _clip(hexa, axis, zero, True)
                if hexa:
                    hexa = _clip(hexa, axis, one, False)
                if not hexa:
                    break
            if len(hexa) >= 3 and _area(hexa) > 0:
                polys.append(hexa)

    index: dict[tuple, int] = {}
    vertices: list = []
    cells = []
    for poly in polys:
        loop = []
        for p in poly:
            key = (p[0], p[1])
            if key not in index:
                index[key] = len(vertices)
                vertices.append(list(key))
            vid = index[key]
            if not loop or loop[-1] != vid:
                loop.append(vid)
        if loop[0] == loop[-1]:
            loop.pop()
        cells.append(loop)

    # drop collinear vertices that no other cell uses
    use = np.zeros(len(vertices), dtype=int)
    for c in cells:
        use[c] += 1
    cleaned = []
    for c in cells:
        keep = []
        for i, v in enumerate(c):
            a, b, p = vertices[c[i - 1]], vertices[c[(i + 1) % len(c)]], vertices[v]
            cross = (p[0] - a[0]) * (b[1] - a[1]) - (p[1] - a[1]) * (b[0] - a[0])
            if cross == 0 and use[v] == 1:
                continue
            keep.append(v)
        cleaned.append(keep)

    used = sorted({v for c in cleaned for v in c})
    renum = {v: i for i, v in enumerate(used)}
    return [[float(x) for x in vertices[v]] for v in used], [[renum[v] for v in c] for c in cleaned]


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    ap.add_argument("--levels", type=int, nargs="+", default=list(range(6)))
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    for level in args.levels:
        vertices, cells = honeycomb(2 ** (level + 1))
        path = args.out / f"hexa_{level}.json"
        path.write_text(json.dumps({"vertices": vertices, "cells": cells}))
        print(f"{path}: {len(cells)} cells, {len(vertices)} vertices")


if __name__ == "__main__":
    main()
