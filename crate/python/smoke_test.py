"""Smoke test for the pdsf_py extension.

Build and stage the module first:

    cargo build --release -p pdsf-python --features extension-module
    cp target/release/libpdsf_py.so python/pdsf_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pdsf_py


def main():
    field = pdsf_py.Field(2, 42)
    assert field.dim == 2 and field.rho == 1.0
    assert pdsf_py.search_radius(2, 1.0) == 4.5

    p = field.point([0, 0])
    assert all(abs(c) <= 1.0 for c in p)

    site, pos = field.h_step([0.0, 0.0])
    assert pos[1] > 0.0
    assert sum(abs(a - b) for a, b in zip(pos, [0.0, 0.0])) <= 4.5

    verts = field.trace_path([0.0, 0.0], height=50.0)
    assert verts[-1][1] >= 50.0
    assert all(b[1] > a[1] for a, b in zip(verts, verts[1:]))
    x = field.path_value([0.0, 0.0], 25.0)
    assert len(x) == 1

    ex = pdsf_py.Exploration(field, [0, 0], [6, 0])
    ev = ex.step()
    assert ev["index"] == 1 and ev["movers"] == "both"
    for _ in range(200):
        ex.step()
    assert ex.steps == 201

    relaxed = pdsf_py.Exploration(pdsf_py.Field(2, 1), [0, 0], delta=2.0)
    recs = relaxed.run_with_renewals(400_000, 3, m_d=5)
    assert len(recs) == 3 and recs[1]["y"] is not None

    d = pdsf_py.d_pi(([0.0, 5.0], [0.0, 0.0]), ([0.0, 5.0], [1.0, 1.0]))
    assert abs(d - math.tanh(1.0)) < 1e-6

    dual = pdsf_py.dual_summary(field, [-10.0, 0.0], [10.0, 20.0])
    assert dual["crossings"] == 0 and not dual["has_cycle"]

    report = pdsf_py.run("treeness", ["treeness.k=1", "treeness.trials=3", "treeness.budgets=[10.0]"])
    assert report["estimates"]["coalesced_fraction"] == 1.0

    try:
        pdsf_py.run("foster")
    except ValueError as e:
        assert "d=3 required" in str(e)
    else:
        raise AssertionError("foster with d=2 must fail")

    print("smoke test passed")


if __name__ == "__main__":
    main()
