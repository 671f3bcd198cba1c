"""Smoke test for the pyfinslerlab bindings.

Build and install first:
    pip install --no-build-isolation ./crates/python
then run:
    python3 python/smoke_test.py
"""

import json
import math
import pathlib
import sys

import pyfinslerlab as fl

ROOT = pathlib.Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b}"


def structures():
    e = fl.Structure.euclidean(2)
    assert e.dim == 2 and e.label
    assert e.metric([0.3, -0.2], [1.0, 2.0]) == [[1.0, 0.0], [0.0, 1.0]]
    assert all(x == 0.0 for x in e.spray([0.3, -0.2], [1.0, 2.0]))

    sphere = fl.Structure.round_sphere()
    close(sphere.f([math.pi / 2, 0.1], [0.0, 1.0]), 1.0, 1e-14)
    b = sphere.berwald([1.0, 0.0], [0.3, 0.4])
    assert len(b) == 2 and len(b[0]) == 2 and len(b[0][0]) == 2
    n = sphere.nonlinear([1.0, 0.0], [0.3, 0.4])
    assert len(n) == 2

    r = fl.Structure.randers_standard(2, 0.3)
    rep = json.loads(r.validate(count=16, seed=7))
    assert rep["pass"] and rep["samples"] == 16

    bad = fl.Structure.randers_standard(2, 1.2)
    assert not json.loads(bad.validate(count=16))["pass"]

    custom = fl.Structure(2, "s1^2 + 4*s2^2", "stretched")
    close(custom.f([0.0, 0.0], [0.0, 1.0]), 2.0, 1e-14)
    try:
        fl.Structure(2, "s1^2 +", "broken")
    except ValueError:
        pass
    else:
        raise AssertionError("parse error not raised")


def geodesic():
    e = fl.Structure.euclidean(2)
    tr = fl.geodesic(e, [0.0, 0.0], [1.0, 0.5], 2.0, samples=21)
    assert len(tr["time"]) == 21
    end = tr["position"][-1]
    close(end[0], 2.0, 1e-9)
    close(end[1], 1.0, 1e-9)
    assert tr["speed_drift"] <= 1e-9
    try:
        fl.geodesic(e, [0.0, 0.0], [0.0, 0.0], 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("zero velocity not rejected")


def maps():
    r = fl.Structure.randers_standard(2, 0.3)
    e = fl.Structure.euclidean(2)
    assert fl.affine_sup(r, r, ["t1", "t2"], [0.2, 0.1], [1.0, 0.5]) <= 1e-10
    close(fl.affine_sup(e, e, ["t1 + t1^2", "t2"], [0.2, 0.1], [1.0, 0.0]), 2.0, 1e-12)


def jets():
    r = fl.Structure.randers_standard(2, 0.3)
    s = fl.Structure.round_sphere()
    rep = json.loads(fl.jet_report(r, s, count=5, seed=1))
    assert rep["overall_pass"], rep
    assert rep == json.loads(fl.jet_report(r, s, count=5, seed=1))


def scenarios():
    text, ok = fl.run_scenario("validate", SCENARIOS / "randers_validate.json")
    assert ok and json.loads(text)["overall_pass"]
    text, ok = fl.run_scenario("affine", SCENARIOS / "quadratic_map.json")
    assert not ok and json.loads(text)["affine"]["verdict"] == "not-affine"
    try:
        fl.run_scenario("validate", SCENARIOS / "malformed.json")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed scenario accepted")


def main():
    for step in (structures, geodesic, maps, jets, scenarios):
        step()
        print(f"ok {step.__name__}")
    print(f"pyfinslerlab {fl.__version__}: all smoke checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
