"""Score acceptance criteria 1-9 from the files written by run_all.sh.

Criteria 1 and 8 are pure numerics and are recomputed here; the rest are
read from the CLI outputs. Writes OUT_DIR/summary.txt, one line per
criterion, and exits 1 if any criterion fails.
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from dpfmix import learner as L
from dpfmix.accountant import calibrate_noise
from dpfmix.release import load_released, verify_manifest
from dpfmix.tradeoff import epsdelta_to_mu, mu_to_epsdelta


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def timings(out):
    return {r["stage"]: int(r["ms"]) / 1000 for r in rows(out / "timings.csv")}


def c1(out):
    rng = np.random.default_rng(2024)
    eps = rng.uniform(0.1, 10.0, 100)
    delta = 10 ** rng.uniform(-8, -3, 100)
    back = np.array([mu_to_epsdelta(epsdelta_to_mu(e, d), e).delta for e, d in zip(eps, delta)])
    worst = float(np.max(np.abs(back - delta) / delta))
    return worst <= 1e-10, f"max relative residual {worst:.2e}"


def c2(out):
    rep = json.loads((out / "typical_mu.json").read_text())
    delta = rep["epsdelta"][0]["delta"]
    ok = 0.843 <= rep["sigma"] <= 0.846 and 0.9e-5 <= delta <= 1.1e-5
    mu = json.loads((out / "typical.json").read_text())["mu"]
    return ok and abs(mu - 0.5016) < 1e-4, f"sigma {rep['sigma']:.5f}, delta {delta:.3e}, mu {mu:.5f}"


def c3(out):
    gaps = [float(r["linf_err"]) for r in rows(out / "clt.csv")]
    secs = timings(out)["clt"]
    ok = gaps[0] > gaps[1] > gaps[2] and 2 * gaps[2] <= gaps[0] and secs < 120
    return ok, f"linf gaps {', '.join(f'{g:.3e}' for g in gaps)}; {secs:.0f} s"


def c4(out):
    table = rows(out / "accountants.csv")
    ms = [int(r["m"]) for r in table]
    ok = ms == [2 ** k for k in range(15)]
    ok = ok and all(float(r["gdp_noise"]) <= float(r["rdp_noise"]) for r in table)
    secs = timings(out)["accountants"]
    return ok and secs < 300, f"{len(table)} values of m; {secs:.0f} s"


def c5(out):
    notes, ok = [], True
    for g in (1.0, 1.2, 1.5):
        rep = json.loads((out / f"sweep_gamma{g}" / "slope.json").read_text())
        good = abs(rep["slope"] - rep["target_slope"]) <= 0.15 and rep["r2"] >= 0.9
        ok = ok and good
        notes.append(f"gamma {g}: slope {rep['slope']:.3f} r2 {rep['r2']:.3f}")
    secs = timings(out)["scaling"]
    return ok and secs <= 1800, "; ".join(notes) + f"; {secs:.0f} s"


def c6(out):
    notes, ok = [], True
    for s in range(1, 6):
        err = np.array([float(r["mean_err"]) for r in rows(out / f"interior_seed{s}" / "sweep_n4096.csv")])
        j = int(np.argmin(err))
        ok = ok and 0 < j < err.size - 1 and err[j] < min(err[0], err[-1])
        notes.append(str(j))
    return ok, f"argmin index per seed {', '.join(notes)}"


def c7(out):
    d = out / "release"
    a, b = (d / "a.bin").read_bytes(), (d / "b.bin").read_bytes()
    noisy, clean, removed = (load_released(d / f) for f in ("a.bin", "clean.bin", "removed.bin"))
    man = noisy.manifest
    m, cx, cy = man["m"], man["C_x"], man["C_y"]
    sens = max(np.linalg.norm(removed.features - clean.features, axis=1).max() * m / cx,
               np.linalg.norm(removed.labels - clean.labels, axis=1).max() * m / cy)
    sigma_x = calibrate_noise(man["n"], m, man["T"], man["mu"], cx, cy, man["lambda"]).sigma_x
    target = (cx * sigma_x / m) ** 2
    ratio = (noisy.features - clean.features).var() / target
    ok = a == b and verify_manifest(man) and sens <= 1 + 1e-12 and abs(ratio - 1) < 0.05
    return ok, f"identical {a == b}, sensitivity ratio {sens:.4f}, variance ratio {ratio:.4f}"


def c8(out):
    rng = np.random.default_rng(8)
    x = rng.standard_normal((6, 5))
    p = L.clip_labels(rng.standard_normal((6, 4)) + 0.2)
    W = rng.standard_normal((4, 5))
    b = rng.standard_normal(4)
    _, gW, gb = L.loss_and_grad(W, b, x, p)
    h, fd = 1e-5, []
    for arr in (W, b):
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + h
            up = L.loss_and_grad(W, b, x, p)[0]
            arr[idx] = keep - h
            down = L.loss_and_grad(W, b, x, p)[0]
            arr[idx] = keep
            fd.append((up - down) / (2 * h))
    fd = np.array(fd)
    rel = float(np.max(np.abs(np.r_[gW.ravel(), gb] - fd)) / np.max(np.abs(fd)))
    q = rng.dirichlet(np.ones(7))
    ln2 = abs(L.generalized_kl([1.0, 0.0], [0.5, 0.5]) - math.log(2))
    ok = rel <= 1e-5 and L.generalized_kl(q, q) == 0.0 and ln2 <= 1e-12
    return ok, f"gradient relative error {rel:.2e}, ln2 error {ln2:.1e}"


def c9(out, seeds):
    d = out / "membership"
    aucs = np.array([[json.loads((d / f"{k}_{s}.json").read_text())["auc"]
                      for k in ("clean", "mixup", "dp")] for s in range(seeds)])
    mean = aucs.mean(axis=0)
    ok = seeds >= 5 and mean[0] > mean[1] > 0.5 and abs(mean[2] - 0.5) <= 0.02
    return ok, f"mean AUC {mean[0]:.4f} > {mean[1]:.4f} > 0.5, private {mean[2]:.4f}"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()
    out = Path(args.out_dir)
    checks = [c1, c2, c3, c4, c5, c6, c7, c8, lambda o: c9(o, args.seeds)]
    lines, failed = [], False
    for k, check in enumerate(checks, 1):
        try:
            ok, note = check(out)
        except (OSError, KeyError, ValueError) as exc:
            ok, note = False, f"missing or unreadable output: {exc}"
        failed = failed or not ok
        print(f"criterion {k}: {note}")
        lines.append(f"criterion {k}: {'PASS' if ok else 'FAIL'}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
