"""Wall time of one training step and one eval forward at full input length."""
import argparse
import time

import numpy as np

from gazescore import tensor_nn as nn
from gazescore.densenet import ModelConfig, build


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args()
    rng = np.random.default_rng(0)
    model = build(ModelConfig(), 0)
    x = rng.uniform(-1, 1, size=(args.batch_size, 2, 5000)).astype(np.float32)
    y = rng.uniform(1, 7, size=(args.batch_size, 3)).astype(np.float32)
    for label, step in [("train step", lambda: model.backward(nn.smooth_l1(model.forward(x, True, rng), y)[1])),
                        ("eval forward", lambda: model.forward(x))]:
        times = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            step()
            times.append(time.perf_counter() - t0)
        print(f"{label:12s} batch {args.batch_size}: {min(times):.2f}s (best of {args.repeats})")


if __name__ == "__main__":
    main()
