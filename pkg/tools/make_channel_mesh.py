"""Regenerate src/stokesmg/data/channel_with_cylinder.txt.

Block layout: a 12x3 block grid of the channel whose block around the
cylinder, [0.1,0.3]^2, is replaced by a ring of four cells between the box
and the circle.  The file is versioned; changing it changes benchmark results.
"""

import sys

import numpy as np

sys.path.insert(0, "src")
from stokesmg.mesh import LevelMesh, check_jacobians, write_mesh_file  # noqa: E402

xs = np.concatenate([[0.0, 0.1], np.linspace(0.3, 2.2, 11)])
ys = np.array([0.0, 0.1, 0.3, 0.41])
nx, ny = len(xs), len(ys)


def gv(i, j):
    return i + nx * j


verts = [(x, y) for y in ys for x in xs]
cells, bfaces = [], []
for j in range(ny - 1):
    for i in range(nx - 1):
        if (i, j) == (1, 1):
            continue
        c = len(cells)
        cells.append((gv(i, j), gv(i + 1, j), gv(i, j + 1), gv(i + 1, j + 1)))
        if i == 0:
            bfaces.append((c, 0, 0))
        if i == nx - 2:
            bfaces.append((c, 1, 1))
        if j == 0:
            bfaces.append((c, 2, 2))
        if j == ny - 2:
            bfaces.append((c, 3, 2))

cx, cy, r = 0.2, 0.2, 0.05
circ = {}
for name, ang in [("SW", 225), ("SE", 315), ("NE", 45), ("NW", 135)]:
    t = np.deg2rad(ang)
    circ[name] = len(verts)
    verts.append((cx + r * np.cos(t), cy + r * np.sin(t)))
BL, BR, TL, TR = gv(1, 1), gv(2, 1), gv(1, 2), gv(2, 2)
for v0, v1, v2, v3 in [(BL, BR, circ["SW"], circ["SE"]),
                       (BR, TR, circ["SE"], circ["NE"]),
                       (TR, TL, circ["NE"], circ["NW"]),
                       (TL, BL, circ["NW"], circ["SW"])]:
    bfaces.append((len(cells), 3, 3))
    cells.append((v0, v1, v2, v3))

mesh = LevelMesh(0, np.array(verts), np.array(cells), np.array(bfaces))
check_jacobians(mesh)
with open("src/stokesmg/data/channel_with_cylinder.txt", "w") as fh:
    write_mesh_file(mesh, fh, header=[
        "channel (0,2.2)x(0,0.41) with cylinder r=0.05 at (0.2,0.2), format v1",
        "boundary ids: 0 inflow, 1 outflow, 2 walls, 3 cylinder",
        "generated by tools/make_channel_mesh.py"])
print(mesh.n_cells, "cells", mesh.n_vertices, "vertices")
