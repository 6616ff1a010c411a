"""Small synthetic meshes shared by render and pipeline tests."""

import numpy as np

from futurescene.posesolve import KEYPOINT_NAMES
from futurescene.render import CadModel


def dummy_keypoints(scale=0.4):
    """12 arbitrary named points; content irrelevant for raster tests."""
    out = {}
    for i, n in enumerate(KEYPOINT_NAMES):
        a = 2 * np.pi * i / 12.0
        out[n] = (scale * np.cos(a), scale * np.sin(a), 0.05 * i)
    return out


def make_cube_cad(side=1.0, cad_id=1):
    """Axis-aligned cube with outward-wound faces."""
    s = side / 2.0
    verts = np.array([
        (-s, -s, -s), (s, -s, -s), (s, s, -s), (-s, s, -s),
        (-s, -s, s), (s, -s, s), (s, s, s), (-s, s, s),
    ])
    quads = [
        (0, 3, 2, 1),  # bottom (z = -s), outward -z
        (4, 5, 6, 7),  # top, outward +z
        (0, 1, 5, 4),  # -y side
        (2, 3, 7, 6),  # +y side
        (1, 2, 6, 5),  # +x side
        (3, 0, 4, 7),  # -x side
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return CadModel(cad_id, verts, np.array(faces), dummy_keypoints())


def make_triangle_cad(size=1.5):
    """One triangle in the z = 0 plane."""
    verts = np.array([(0.0, 0.0, 0.0), (size, 0.0, 0.0), (0.0, size, 0.0)])
    faces = np.array([(0, 1, 2)])
    return CadModel(1, verts, faces, dummy_keypoints())


def make_two_triangles_cad():
    """Two overlapping triangles 2 m apart in depth; the far one is large
    enough to stay partly visible around the near one."""
    verts = np.array([
        (-1.0, -1.0, -1.0), (1.0, -1.0, -1.0), (0.0, 1.0, -1.0),
        (-2.4, -1.8, 1.0), (2.2, -2.0, 1.0), (0.0, 2.4, 1.0),
    ])
    faces = np.array([(0, 1, 2), (3, 4, 5)])
    return CadModel(1, verts, faces, dummy_keypoints())


def make_two_planes_cad(size=1.0, gap=1.0):
    """Two parallel square planes; the near one occludes the far one."""
    s = size / 2.0
    verts = []
    faces = []
    for zi, z in enumerate((-gap / 2.0, gap / 2.0)):
        base = len(verts)
        verts += [(-s, -s, z), (s, -s, z), (s, s, z), (-s, s, z)]
        # wind both toward -z so both are front-facing for a camera at -z
        faces.append((base + 0, base + 2, base + 1))
        faces.append((base + 0, base + 3, base + 2))
    return CadModel(1, np.array(verts, dtype=float), np.array(faces),
                    dummy_keypoints())


CUBE_OBJ = """
# unit cube, quads
v -0.5 -0.5 -0.5
v 0.5 -0.5 -0.5
v 0.5 0.5 -0.5
v -0.5 0.5 -0.5
v -0.5 -0.5 0.5
v 0.5 -0.5 0.5
v 0.5 0.5 0.5
v -0.5 0.5 0.5
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 3 4 8 7
f 2 3 7 6
f 4 1 5 8
"""


def keypoints_text(keypoints=None):
    kps = keypoints or dummy_keypoints()
    return "\n".join(
        f"{n} {p[0]} {p[1]} {p[2]}" for n, p in kps.items()
    )
