"""Measure the receptive field of the last conv layer with an impulse probe.

Weights are made nonnegative and BN shifts zero, so every input position that
can reach an output leaves a strictly positive trace.
"""
import argparse

import numpy as np

from gazescore.densenet import ModelConfig, build, receptive_field


def probe(config: ModelConfig, length: int = 1201) -> int:
    model = build(config, 0)
    for w in model.conv_weights:
        w.value[...] = np.abs(w.value) + 0.01
    for bn in model.bns:
        bn.beta.value[...] = 0.0
        bn.gamma.value[...] = 1.0
    x = np.zeros((1, config.input_channels, length))
    x[0, 0, length // 2] = 1.0
    last = model.forward(x, return_features=True)[1][-1]
    return int(np.count_nonzero(np.any(last != 0, axis=(0, 1))))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--layers", type=int, default=8)
    args = p.parse_args()
    for mode in ("mod-exponent", "literal"):
        cfg = ModelConfig(n_conv_layers=args.layers, dilation_mode=mode, dtype="float64")
        print(f"{mode:13s} dilations {cfg.dilation_schedule}  analytic {receptive_field(cfg)}  "
              f"probe {probe(cfg)}")


if __name__ == "__main__":
    main()
