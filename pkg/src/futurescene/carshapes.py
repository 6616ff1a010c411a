"""Ten built-in parametric car meshes with annotated keypoints.

Each model is a body box plus a slanted cabin, dimensioned per id
(compact hatchback through van). Real scenes can override these with a
cad directory in the bundle; the built-ins keep the pipeline and the
test suite self-contained.
"""

from __future__ import annotations

import numpy as np

from .render import CadModel

# length, width, body height, roof height, cabin front/rear (fractions of
# the half length), cabin slant (m), wheel radius
_SPECS = {
    1: (4.20, 1.75, 0.80, 1.45, 0.35, -0.55, 0.25, 0.30),
    2: (4.60, 1.85, 0.85, 1.50, 0.30, -0.60, 0.30, 0.32),
    3: (3.70, 1.65, 0.75, 1.48, 0.45, -0.65, 0.20, 0.28),
    4: (4.90, 1.90, 0.95, 1.75, 0.35, -0.55, 0.25, 0.35),
    5: (5.10, 1.95, 1.05, 1.90, 0.50, -0.75, 0.15, 0.36),
    6: (4.40, 1.80, 0.82, 1.42, 0.25, -0.50, 0.35, 0.31),
    7: (4.00, 1.70, 0.78, 1.52, 0.40, -0.70, 0.22, 0.29),
    8: (5.30, 1.95, 1.00, 1.60, 0.20, -0.45, 0.30, 0.34),
    9: (4.75, 1.88, 0.90, 1.68, 0.38, -0.62, 0.26, 0.33),
    10: (4.50, 2.00, 1.10, 2.05, 0.55, -0.85, 0.10, 0.35),
}


def _quad(a, b, c, d):
    """Split a quad at its first vertex; keeps the loader's convention."""
    return [(a, b, c), (a, c, d)]


def builtin_cad(cad_id: int) -> CadModel:
    """Deterministically build one of the ten car models."""
    if cad_id not in _SPECS:
        raise ValueError(f"no built-in cad with id {cad_id}")
    length, width, h_body, h_roof, cf, cr, slant, r_wheel = _SPECS[cad_id]
    hx, hy = length / 2.0, width / 2.0
    clearance = 0.18
    cab_y = 0.92 * hy
    cab_front_lo = cf * hx
    cab_rear_lo = cr * hx
    cab_front_hi = cab_front_lo - slant
    cab_rear_hi = cab_rear_lo + 0.4 * slant

    verts = []

    def add(p):
        verts.append(p)
        return len(verts) - 1

    # body box, counter-clockwise quads seen from outside
    b = {}
    for xi, x in enumerate((-hx, hx)):
        for yi, y in enumerate((-hy, hy)):
            for zi, z in enumerate((clearance, h_body)):
                b[(xi, yi, zi)] = add((x, y, z))
    faces = []
    faces += _quad(b[1, 0, 0], b[1, 1, 0], b[1, 1, 1], b[1, 0, 1])  # front
    faces += _quad(b[0, 1, 0], b[0, 0, 0], b[0, 0, 1], b[0, 1, 1])  # rear
    faces += _quad(b[0, 0, 0], b[1, 0, 0], b[1, 0, 1], b[0, 0, 1])  # right
    faces += _quad(b[1, 1, 0], b[0, 1, 0], b[0, 1, 1], b[1, 1, 1])  # left
    faces += _quad(b[0, 0, 0], b[0, 1, 0], b[1, 1, 0], b[1, 0, 0])  # bottom
    faces += _quad(b[0, 0, 1], b[1, 0, 1], b[1, 1, 1], b[0, 1, 1])  # top

    # cabin: slanted prism, no bottom face (sits on the body top)
    c = {
        "fr_lo": add((cab_front_lo, -cab_y, h_body)),
        "fl_lo": add((cab_front_lo, cab_y, h_body)),
        "rl_lo": add((cab_rear_lo, cab_y, h_body)),
        "rr_lo": add((cab_rear_lo, -cab_y, h_body)),
        "fr_hi": add((cab_front_hi, -cab_y, h_roof)),
        "fl_hi": add((cab_front_hi, cab_y, h_roof)),
        "rl_hi": add((cab_rear_hi, cab_y, h_roof)),
        "rr_hi": add((cab_rear_hi, -cab_y, h_roof)),
    }
    faces += _quad(c["fr_lo"], c["fl_lo"], c["fl_hi"], c["fr_hi"])  # windshield
    faces += _quad(c["rl_lo"], c["rr_lo"], c["rr_hi"], c["rl_hi"])  # rear window
    faces += _quad(c["fl_lo"], c["rl_lo"], c["rl_hi"], c["fl_hi"])  # left
    faces += _quad(c["rr_lo"], c["fr_lo"], c["fr_hi"], c["rr_hi"])  # right
    faces += _quad(c["fr_hi"], c["fl_hi"], c["rl_hi"], c["rr_hi"])  # roof

    wb = 0.72 * hx
    h_light = 0.65 * h_body
    keypoints = {
        "wheel_fl": (wb, hy, r_wheel),
        "wheel_fr": (wb, -hy, r_wheel),
        "wheel_rl": (-wb, hy, r_wheel),
        "wheel_rr": (-wb, -hy, r_wheel),
        "light_fl": (hx, 0.80 * hy, h_light),
        "light_fr": (hx, -0.80 * hy, h_light),
        "light_rl": (-hx, 0.80 * hy, h_light),
        "light_rr": (-hx, -0.80 * hy, h_light),
        "windshield_tl": (cab_front_hi, cab_y, h_roof),
        "windshield_tr": (cab_front_hi, -cab_y, h_roof),
        "rear_window_tl": (cab_rear_hi, cab_y, h_roof),
        "rear_window_tr": (cab_rear_hi, -cab_y, h_roof),
    }
    return CadModel(cad_id, np.array(verts), np.array(faces), keypoints)


def builtin_cad_ids() -> tuple:
    return tuple(sorted(_SPECS))
