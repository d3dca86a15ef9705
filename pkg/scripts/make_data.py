"""Synthetic inputs for run_all.sh.

Writes a 1000 x 10 release dataset (plus a copy with one row zeroed) and,
per seed, member and nonmember sets of the membership instance.
"""

import argparse
from pathlib import Path

import numpy as np

from dpfmix.io import FeatureDataset, save_dataset
from dpfmix.learner import gaussian_classes, one_hot


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(0)
    x = rng.standard_normal((1000, 10))
    y = np.eye(3)[rng.integers(0, 3, 1000)]
    save_dataset(FeatureDataset(x, y), out / "release_data.bin")
    x[499] = 0.0
    y[499] = 0.0
    save_dataset(FeatureDataset(x, y), out / "release_data_removed.bin")

    for seed in range(args.seeds):
        (x_in, c_in), (x_out, c_out) = gaussian_classes(500, 200, 10, 0.6, seed=seed)
        save_dataset(FeatureDataset(x_in, one_hot(c_in, 10)), out / f"members_{seed}.bin")
        save_dataset(FeatureDataset(x_out, one_hot(c_out, 10)), out / f"nonmembers_{seed}.bin")


if __name__ == "__main__":
    main()
