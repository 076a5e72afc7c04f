#!/usr/bin/env python3
"""Regenerates fixtures/reward/golden.json.

Three scripted steps of reward inputs (approach, first contact, lifted) with
expected per-term values computed right here, independently of the library.
"""

import json
import math
import os

TIP_POINTS = {4, 8}
TIP_SLOTS = {4, 7}


def r_dis(d):
    return -sum((2.0 if i in TIP_POINTS else 0.5) * (x * x + y * y)
                for i, (x, y) in enumerate(d))


def r_contact(f_slots, undesired, literal):
    desired = 0.0
    for i, f in enumerate(f_slots):
        if f <= 0.0:
            continue
        if i in TIP_SLOTS:
            desired += 6.0 + 4.0 * f
        else:
            desired += 1.5 + 1.0 * f
    f_u = [0.0] * 11
    b_u = [False] * 11
    for a, b, imp in undesired:
        for body in (a, b):
            if body < 0:
                continue
            b_u[body] = True
            f_u[body] += imp
    penalty = sum(1.0 + 0.5 * f_u[i] for i in range(11) if b_u[i])
    return desired + (penalty if literal else -penalty)


def r_height(h, literal):
    s = sum(0.05 * math.log(min(max(v, 1e-4), 0.02)) for v in h)
    return -s if literal else s


def r_reg(hand_v, hand_w, obj_v, obj_w, disp, arm_qdot):
    hand = hand_v[0] ** 2 + hand_v[1] ** 2 + hand_w ** 2
    obj = obj_v[0] ** 2 + obj_v[1] ** 2 + obj_w ** 2
    return -(1.0 * hand + 15.0 * obj + 5.0 * math.hypot(*disp)
             + 1.0 * sum(q * q for q in arm_qdot))


STEPS = [
    {   # approach: no contacts, plateau heights, moving hand
        "d": [[0.05, 0.02], [0.04, 0.0], [0.03, -0.01], [0.02, 0.01], [0.01, 0.0],
              [0.04, 0.01], [0.03, 0.0], [0.02, -0.02], [0.015, 0.005]],
        "f": [0.0] * 8,
        "undesired": [],
        "h": [0.05] * 11,
        "hand_v": [0.1, -0.05], "hand_w": 0.2,
        "obj_v": [0.0, 0.0], "obj_w": 0.0,
        "disp": [0.0, 0.0],
        "arm_qdot": [0.1, 0.05, -0.02],
    },
    {   # first touch: one fingertip and one proximal contact, a self contact,
        # a finger brushing the table, two links inside the height knee
        "d": [[0.01, 0.0], [0.02, 0.0], [0.01, 0.01], [0.005, 0.0], [0.002, 0.001],
              [0.02, 0.01], [0.01, 0.0], [0.005, 0.005], [0.001, 0.002]],
        "f": [0.0, 0.0, 0.005, 0.0, 0.02, 0.0, 0.0, 0.0],
        "undesired": [[5, 8, 0.01], [-2, 7, 0.004]],
        "h": [0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.01, 0.05, 0.05, 0.015],
        "hand_v": [0.02, -0.01], "hand_w": 0.1,
        "obj_v": [0.01, 0.02], "obj_w": 0.05,
        "disp": [0.005, 0.0],
        "arm_qdot": [0.02, 0.01, 0.0],
    },
    {   # lifted: both tips plus palm loaded, arm grazing the object,
        # object displaced upward and translating with the hand
        "d": [[0.001, 0.0], [0.002, 0.001], [0.001, -0.001], [0.0, 0.001], [0.001, 0.0],
              [0.002, 0.0], [0.001, 0.001], [0.001, 0.0], [0.0, 0.001]],
        "f": [0.0, 0.01, 0.0, 0.0, 0.04, 0.0, 0.0, 0.05],
        "undesired": [[-1, 1, 0.02]],
        "h": [0.35, 0.3, 0.25, 0.2, 0.18, 0.15, 0.13, 0.12, 0.15, 0.13, 0.019],
        "hand_v": [0.0, 0.075], "hand_w": 0.0,
        "obj_v": [0.0, 0.075], "obj_w": 0.0,
        "disp": [0.01, 0.15],
        "arm_qdot": [0.05, -0.03, 0.01],
    },
]


def expected(step, literal):
    terms = {
        "r_dis": r_dis(step["d"]),
        "r_contact": r_contact(step["f"], step["undesired"], literal),
        "r_height": r_height(step["h"], literal),
        "r_reg": r_reg(step["hand_v"], step["hand_w"], step["obj_v"], step["obj_w"],
                       step["disp"], step["arm_qdot"]),
    }
    terms["total"] = sum(terms.values())
    return terms


def main():
    out = {"steps": []}
    for step in STEPS:
        entry = dict(step)
        entry["expected"] = expected(step, literal=False)
        entry["expected_literal"] = expected(step, literal=True)
        out["steps"].append(entry)
    path = os.path.join(os.path.dirname(__file__), "..", "fixtures", "reward",
                        "golden.json")
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as f:
        json.dump(out, f, indent=1)
        f.write("\n")
    print(path)


if __name__ == "__main__":
    main()
