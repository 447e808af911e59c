"""Smoke test for the Python bindings. Run after installing crates/lowspace-py."""

import math
import sys

import lowspace


def main() -> int:
    assert "pinned" in lowspace.models()
    assert "dl" in lowspace.suites()

    result = lowspace.solve("pinned", 8, case="ff", delta=1e-3, seed=1)
    assert result["final_overlap"] >= 1 - 1e-3, result["final_overlap"]
    assert abs(result["energies"][0]) < 1e-8
    print(f"pinned n=8: overlap {result['final_overlap']:.9f}")

    tfi = lowspace.solve("tfi", 6, case="dg", delta=1e-2, r=1, gamma=0.5, params={"g": 1.5})
    exact = tfi["report"]["oracle"]["exact_energies"][0]
    assert tfi["energies"][0] >= exact - 1e-8
    assert math.isclose(tfi["energies"][0], exact, abs_tol=1e-3)
    print(f"tfi n=6: energy {tfi['energies'][0]:.8f} (exact {exact:.8f})")

    report = lowspace.verify("dl", n=6, seed=3)
    assert report["passed"], [c for c in report["checks"] if not c["passed"]]
    print(f"verify dl: {len(report['checks'])} checks passed")

    try:
        lowspace.solve("pinned", 8, delta=2.0)
    except ValueError as e:
        print(f"bad delta rejected: {e}")
    else:
        raise AssertionError("delta outside (0, 1) was accepted")

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
