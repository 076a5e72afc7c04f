#!/usr/bin/env python3
"""Regenerates fixtures/features/snapshot.json.

Computes the expected feature set for one fixed scenario with an independent
kinematics implementation (plain trig, no project code), so the fixture stays
an oracle rather than a recording of the library's own output.
"""

import json
import math
import os

BASE = (0.0, 0.40)
ARM = [0.30, 0.25, 0.10]
MOUNT = 0.03
PALM_HALF = 0.07
FINGER = [0.05, 0.04, 0.03]
RADIUS = [0.020, 0.020, 0.018, 0.015, 0.015, 0.008, 0.007, 0.006, 0.008, 0.007, 0.006]

Q = [0.3, -0.5, 0.2, 0.1, 0.4, 0.2, 0.3, 0.1, 0.5]
A_PREV = [0.25, -0.45, 0.3, 0.0, 0.35, 0.25, 0.2, 0.15, 0.45]
TABLE = 0.0

# hand-picked boundary points of a small box near the workspace
CLOUD = [
    (0.30, 0.00), (0.33, 0.00), (0.36, 0.00), (0.39, 0.00),
    (0.39, 0.03), (0.39, 0.06), (0.36, 0.06), (0.33, 0.06),
    (0.30, 0.06), (0.30, 0.03), (0.315, 0.00), (0.375, 0.06),
]


def unit(a):
    return (math.cos(a), math.sin(a))


def add(p, s, u):
    return (p[0] + s * u[0], p[1] + s * u[1])


def wrap(a):
    while a <= -math.pi:
        a += 2.0 * math.pi
    while a > math.pi:
        a -= 2.0 * math.pi
    return a


def kinematics(q):
    a1 = q[0]
    a2 = q[0] + q[1]
    a3 = q[0] + q[1] + q[2]
    p0 = BASE
    p1 = add(p0, ARM[0], unit(a1))
    p2 = add(p1, ARM[1], unit(a2))
    pw = add(p2, ARM[2], unit(a3))
    u3 = unit(a3)
    n3 = (-u3[1], u3[0])
    pc = add(pw, MOUNT, u3)
    ea = add(pc, PALM_HALF, n3)
    eb = add(pc, -PALM_HALF, n3)
    fa1, fa2, fa3 = a3 - q[3], a3 - q[3] - q[4], a3 - q[3] - q[4] - q[5]
    fb1, fb2, fb3 = a3 + q[6], a3 + q[6] + q[7], a3 + q[6] + q[7] + q[8]
    ja1 = add(ea, FINGER[0], unit(fa1))
    ja2 = add(ja1, FINGER[1], unit(fa2))
    tipa = add(ja2, FINGER[2], unit(fa3))
    jb1 = add(eb, FINGER[0], unit(fb1))
    jb2 = add(jb1, FINGER[1], unit(fb2))
    tipb = add(jb2, FINGER[2], unit(fb3))
    segments = [
        (p0, p1), (p1, p2), (p2, pw), (pw, pc), (eb, ea),
        (ea, ja1), (ja1, ja2), (ja2, tipa),
        (eb, jb1), (jb1, jb2), (jb2, tipb),
    ]
    points = [pw, ea, ja1, ja2, tipa, eb, jb1, jb2, tipb]
    return segments, points, (pw, wrap(a3))


def nearest(p):
    best, best_d = 0, float("inf")
    for i, c in enumerate(CLOUD):
        d = (c[0] - p[0]) ** 2 + (c[1] - p[1]) ** 2
        if d < best_d:
            best, best_d = i, d
    c = CLOUD[best]
    return (c[0] - p[0], c[1] - p[1])


def main():
    segments, points, wrist = kinematics(Q)
    d = [nearest(p) for p in points]
    h = [min(a[1], b[1]) - r - TABLE for (a, b), r in zip(segments, RADIUS)]
    dq = [q - a for q, a in zip(Q, A_PREV)]
    out = {
        "table_height": TABLE,
        "a_prev": A_PREV,
        "q": Q,
        "cloud": [list(p) for p in CLOUD],
        "expected": {
            "d": [list(v) for v in d],
            "h": h,
            "T": [wrist[0][0], wrist[0][1], wrist[1]],
            "dq": dq,
        },
    }
    path = os.path.join(os.path.dirname(__file__), "..", "fixtures", "features",
                        "snapshot.json")
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as f:
        json.dump(out, f, indent=1)
        f.write("\n")
    print(path)


if __name__ == "__main__":
    main()
