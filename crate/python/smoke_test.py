"""Builds the `pmap` extension with cargo and exercises it from Python.

Usage: python3 python/smoke_test.py [--release]
"""

import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build(release):
    cmd = ["cargo", "build", "-p", "pmap-py"] + (["--release"] if release else [])
    subprocess.run(cmd, cwd=ROOT, check=True)
    lib = os.path.join(ROOT, "target", "release" if release else "debug", "libpmap.so")
    dest = tempfile.mkdtemp(prefix="pmap-py-")
    shutil.copy(lib, os.path.join(dest, "pmap.so"))
    sys.path.insert(0, dest)


def main():
    build("--release" in sys.argv)
    import pmap

    tree = pmap.SplitTree.from_preorder(["QT", "BTV", "NS", "TTH", "NS", "NS", "NS", "NS", "NS", "NS"])
    m = tree.to_map()
    assert m.to_tree() == tree
    assert m.validate() == (True, 0, 0.0)
    assert pmap.reconstruct(m) == tree
    assert all(v == 1 for row in m.qd for v in row)

    frames = pmap.parse_split_log("0,0,0,128,128,QT\n")
    poc, w, h, ctus = frames[0]
    assert (poc, w, h, len(ctus)) == (0, 128, 128, 1)
    log = pmap.write_split_log(poc, w, h, ctus)
    assert log.startswith("#size,0,128,128\n0,0,0,128,128,QT\n")
    text = pmap.write_pmap(0, 128, 128, [m])
    assert pmap.read_pmap(text)[3][0] == m

    try:
        pmap.parse_split_log("0,0,0,128,128,BTH\n")
    except ValueError as e:
        assert "line 1" in str(e)
    else:
        raise AssertionError("illegal split accepted")

    assert pmap.classify(0.1) == "MTT_ET" and pmap.classify(0.95) == "MTT_NN"
    report = pmap.simulate(128, 128, [m], [m], [0.99])
    assert report["rdo_evaluations"] == 0 and report["mtt_nn"] == 1

    assert abs(pmap.eta(0.5130) - 2.0534) < 1e-4
    assert abs(pmap.overhead_rho(48.87, 0.44, 0.03) - 0.0095) < 2e-4
    curve = [(1000.0, 32.0), (1800.0, 34.5), (3300.0, 37.0), (6000.0, 39.2)]
    assert abs(pmap.bd_rate(curve, [(r * 1.1, p) for r, p in curve]) - 10.0) < 1e-6
    assert abs(pmap.t_quantile(0.99, 3) - 4.5407) < 1e-3
    assert pmap.robust_mean_time([10.0] * 4) == (10.0, 4, 4, True)

    n = 128 * 128
    plane = [(i % 128) for i in range(n)]
    res, u, v = pmap.pwarp_residual(128, 128, plane, plane, [0.0] * n, [0.0] * n, [1.5] * 1024)
    assert not any(res) and not any(u)

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
