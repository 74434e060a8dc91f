"""Smoke test for the Python bindings. Run after `pip install -e crates/py`."""

import math
import pathlib
import tempfile

import linma

ROOT = pathlib.Path(__file__).resolve().parent.parent


def main():
    lines = linma.registry()
    assert lines == sorted(lines, key=lambda s: (s.split()[0] != "potential", s.split()[0] != "domain", s)), lines
    assert "experiment identity-suite" in lines

    # L^{p,p} equals L^p
    vals = [0.5, 1.0, 1.0, 2.0, 3.5]
    cell = 0.1
    lp = (sum(v ** 3 for v in vals) * cell) ** (1 / 3)
    assert abs(linma.lorentz_norm(vals, cell, 3.0, 3.0) - lp) < 1e-12 * lp

    pts, g = linma.disc_green(65)
    worst = max(
        abs(v + math.log(math.hypot(x, y)) / (2 * math.pi)) / (-math.log(math.hypot(x, y)) / (2 * math.pi))
        for (x, y), v in zip(pts, g)
        if 0.2 <= math.hypot(x, y) <= 0.7
    )
    assert worst < 0.05, worst

    with tempfile.TemporaryDirectory() as out:
        report = linma.run_config(str(ROOT / "configs" / "identity-suite.toml"), out)
        assert report["kind"] == "identity-suite"
        assert report["summary"]["all_pass"], report["summary"]
        assert (pathlib.Path(out) / "identity-suite.csv").exists()

    try:
        linma.run_toml('kind = "nope"', "/tmp/unused")
    except ValueError as e:
        assert "kind" in str(e)
    else:
        raise AssertionError("unknown kind accepted")

    print(f"smoke test ok (disc Green's function max error {worst:.4f})")


if __name__ == "__main__":
    main()
