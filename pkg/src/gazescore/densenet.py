"""Pre-activation dilated 1D DenseNet with a regression head.

Layer 1 is a bare convolution on the 2-channel velocity input. Layers 2..n
apply BN -> ReLU -> Conv to the concatenation of the input and every earlier
layer's output. The full concatenation then goes through BN -> ReLU -> GAP,
an embedding FC, and the head FC -> ReLU -> Dropout -> FC.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor_nn as nn
from .tensor_nn import BatchNormState, Parameter, ShapeError

DILATION_MODES = ("mod-exponent", "literal")


class ConfigError(ValueError):
    pass


def dilation_schedule(n_layers: int = 8, mode: str = "mod-exponent") -> list[int]:
    """Dilation of each conv layer, 1-indexed n = 1..n_layers.

    ``mod-exponent``: d_n = 2 ** ((n - 1) mod 7) -> 1, 2, 4, ..., 64, 1 (r_8 = 257).
    ``literal``: d_n = (2 ** (n - 1)) mod 7 -> 1, 2, 4, 1, 2, 4, 1, 2 (r_8 = 35).
    """
    if n_layers < 1:
        raise ConfigError("n_layers must be >= 1")
    if mode == "mod-exponent":
        return [2 ** ((n - 1) % 7) for n in range(1, n_layers + 1)]
    if mode == "literal":
        return [(2 ** (n - 1)) % 7 for n in range(1, n_layers + 1)]
    raise ConfigError(f"unknown dilation mode {mode!r}; expected one of {DILATION_MODES}")


def receptive_field_of(dilations, kernel: int = 3) -> int:
    return 1 + sum(d * (kernel - 1) for d in dilations)


@dataclass(frozen=True)
class ModelConfig:
    n_conv_layers: int = 8
    growth_rate: int = 32
    kernel: int = 3
    stride: int = 1
    input_channels: int = 2
    embed_dim: int = 128
    head_hidden: int = 128
    dropout_rate: float = 0.3
    n_targets: int = 3
    dilation_mode: str = "mod-exponent"
    dtype: str = "float32"

    @property
    def dilation_schedule(self) -> list[int]:
        return dilation_schedule(self.n_conv_layers, self.dilation_mode)

    @property
    def layer_in_channels(self) -> list[int]:
        return [self.input_channels + self.growth_rate * i for i in range(self.n_conv_layers)]

    @property
    def gap_channels(self) -> int:
        return self.input_channels + self.growth_rate * self.n_conv_layers

    def validate(self) -> None:
        if self.n_conv_layers < 1 or self.growth_rate < 1 or self.input_channels < 1:
            raise ConfigError("layer counts and widths must be positive")
        if self.kernel % 2 != 1:
            raise ConfigError("kernel must be odd for length-preserving padding")
        if self.stride != 1:
            raise ConfigError("only stride 1 is supported")
        if self.embed_dim < 1 or self.head_hidden < 1 or self.n_targets < 1:
            raise ConfigError("embed_dim, head_hidden and n_targets must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        dilation_schedule(self.n_conv_layers, self.dilation_mode)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def receptive_field(config: ModelConfig) -> int:
    return receptive_field_of(config.dilation_schedule, config.kernel)


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class _Cache:
    features: list = field(default_factory=list)   # conv outputs, plus the input at index 0
    training: bool = False
    norm: list = field(default_factory=list)        # per feature block (xhat, mean, var, inv_std), training only
    act: list = field(default_factory=list)         # ReLU outputs feeding conv layers 2..n
    final_act: np.ndarray | None = None
    pooled: np.ndarray | None = None
    embed: np.ndarray | None = None
    hidden: np.ndarray | None = None
    dropped: np.ndarray | None = None
    drop_mask: np.ndarray | None = None


class DenseNetRegressor:
    """Trainable model; parameters live in :class:`Parameter` objects.

    A training-mode ``forward`` keeps the activations needed by ``backward``;
    ``backward`` accumulates into every ``Parameter.grad``. Eval-mode forward
    keeps nothing and is a pure function of the parameters and the input.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        dt = np.dtype(config.dtype)
        g, k = config.growth_rate, config.kernel
        self.dilations = config.dilation_schedule
        self.conv_specs = []
        self.conv_weights = []
        for n, (c_in, d) in enumerate(zip(config.layer_in_channels, self.dilations), start=1):
            assert c_in == config.input_channels + g * (n - 1)
            spec = nn.ConvSpec(c_in, g, k, d)
            assert spec.pad == d * (k - 1) // 2
            self.conv_specs.append(spec)
            self.conv_weights.append(Parameter(_uniform(rng, (g, c_in, k), c_in * k, dt)))
        # BN before conv layers 2..n, and one before GAP
        self.bns = [BatchNormState.create(c, dt) for c in config.layer_in_channels[1:]]
        self.bns.append(BatchNormState.create(config.gap_channels, dt))
        F = config.gap_channels
        self.embed_w = Parameter(_uniform(rng, (config.embed_dim, F), F, dt))
        self.embed_b = Parameter(_uniform(rng, (config.embed_dim,), F, dt))
        self.fc1_w = Parameter(_uniform(rng, (config.head_hidden, config.embed_dim), config.embed_dim, dt))
        self.fc1_b = Parameter(_uniform(rng, (config.head_hidden,), config.embed_dim, dt))
        self.fc2_w = Parameter(_uniform(rng, (config.n_targets, config.head_hidden), config.head_hidden, dt))
        self.fc2_b = Parameter(_uniform(rng, (config.n_targets,), config.head_hidden, dt))
        self._cache: _Cache | None = None

    # -- bookkeeping -----------------------------------------------------

    def named_parameters(self) -> dict[str, Parameter]:
        out = {}
        for n, p in enumerate(self.conv_weights, start=1):
            out[f"conv{n}.weight"] = p
        for name, bn in zip(self._bn_names(), self.bns):
            out[f"{name}.gamma"] = bn.gamma
            out[f"{name}.beta"] = bn.beta
        out.update({
            "embed.weight": self.embed_w, "embed.bias": self.embed_b,
            "head.fc1.weight": self.fc1_w, "head.fc1.bias": self.fc1_b,
            "head.fc2.weight": self.fc2_w, "head.fc2.bias": self.fc2_b,
        })
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def _bn_names(self) -> list[str]:
        return [f"bn{n}" for n in range(2, self.config.n_conv_layers + 1)] + ["bn_gap"]

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, bn in zip(self._bn_names(), self.bns):
            out[f"{name}.running_mean"] = bn.running_mean
            out[f"{name}.running_var"] = bn.running_var
        return out

    def state_arrays(self, with_moments: bool = False) -> dict[str, np.ndarray]:
        arrays = {k: p.value for k, p in self.named_parameters().items()}
        arrays.update(self.buffers())
        if with_moments:
            for k, p in self.named_parameters().items():
                arrays[f"{k}@m"] = p.m
                arrays[f"{k}@v"] = p.v
                arrays[f"{k}@step"] = np.array(p.step_count, dtype=np.int64)
        return arrays

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state_arrays().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params, bufs = self.named_parameters(), self.buffers()
        for name, target in [(k, p.value) for k, p in params.items()] + list(bufs.items()):
            if name not in arrays:
                raise ShapeError(f"state is missing {name}")
            src = arrays[name]
            if src.shape != target.shape:
                raise ShapeError(f"{name}: stored shape {src.shape} != model shape {target.shape}")
            target[...] = src
        for k, p in params.items():
            if f"{k}@m" in arrays:
                p.m[...] = arrays[f"{k}@m"]
                p.v[...] = arrays[f"{k}@v"]
                p.step_count = int(arrays[f"{k}@step"])

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def conv_param_counts(self) -> list[int]:
        return [p.value.size for p in self.conv_weights]

    def summary(self) -> str:
        rows = [("layer", "in_ch", "out_ch", "dilation", "padding", "params", "receptive_field")]
        rf = 1
        for n, (spec, w) in enumerate(zip(self.conv_specs, self.conv_weights), start=1):
            rf += spec.dilation * (spec.kernel - 1)
            pre = "conv" if n == 1 else "bn-relu-conv"
            rows.append((f"{n}:{pre}", spec.in_channels, spec.out_channels, spec.dilation, spec.pad,
                         w.value.size, rf))
        bn = self.bns[-1]
        rows.append(("bn-relu-gap", self.config.gap_channels, self.config.gap_channels, "-", "-",
                     bn.gamma.value.size * 2, rf))
        for name, w, b in [("embed", self.embed_w, self.embed_b), ("head.fc1", self.fc1_w, self.fc1_b),
                           ("head.fc2", self.fc2_w, self.fc2_b)]:
            rows.append((name, w.value.shape[1], w.value.shape[0], "-", "-", w.value.size + b.value.size, "-"))
        total = sum(p.value.size for p in self.parameters())
        widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(str(c).rjust(w) for c, w in zip(r, widths)) for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        lines.append(f"total parameters: {total}")
        return "\n".join(lines)

    # -- computation -----------------------------------------------------

    def forward(self, x: np.ndarray, training: bool = False, rng: np.random.Generator | None = None,
                ablate: tuple[int, ...] = (), return_features: bool = False):
        """Predict raw scores of shape (B, n_targets).

        ``ablate`` lists conv layers (1-indexed) whose outputs are zeroed.
        With ``return_features`` the conv outputs are returned as well.
        """
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != cfg.input_channels:
            raise ShapeError(f"expected input (B, {cfg.input_channels}, L), got {x.shape}")
        x = np.ascontiguousarray(x, dtype=cfg.dtype)
        B, _, L = x.shape
        c = _Cache(features=[x], training=training)
        for n, (spec, w) in enumerate(zip(self.conv_specs, self.conv_weights), start=1):
            if n == 1:
                inp = x
            else:
                inp = self._pre_activation(c, n - 2, training)
                c.act.append(inp if training else None)
            y = nn.conv1d_forward(inp, w.value, spec=spec)
            assert y.shape == (B, spec.out_channels, L)
            if n in ablate:
                y = np.zeros_like(y)
            c.features.append(y)
        assert sum(f.shape[1] for f in c.features) == cfg.gap_channels
        c.final_act = self._pre_activation(c, len(self.bns) - 1, training)
        c.pooled = nn.global_avg_pool(c.final_act)
        c.embed = nn.linear_forward(c.pooled, self.embed_w.value, self.embed_b.value)
        c.hidden = nn.linear_forward(c.embed, self.fc1_w.value, self.fc1_b.value)
        h = nn.relu(c.hidden)
        c.dropped, c.drop_mask = nn.dropout(h, cfg.dropout_rate, training, rng)
        out = nn.linear_forward(c.dropped, self.fc2_w.value, self.fc2_b.value)
        self._cache = c if training else None
        if return_features:
            return out, c.features[1:]
        return out

    def _pre_activation(self, c: _Cache, bn_index: int, training: bool) -> np.ndarray:
        """ReLU(BN(concat(features))) for the BN at ``bn_index``.

        In training mode every BN sees the same batch, so the normalized
        values of a feature block are identical for all its consumers; they
        are computed once per block and only the affine part is per-layer.
        """
        bn = self.bns[bn_index]
        if not training:
            # running statistics folded into one scale and shift per channel
            scale = bn.gamma.value / np.sqrt(bn.running_var + bn.eps)
            shift = bn.beta.value - bn.running_mean * scale
            a = nn.concat_channels(c.features)
            a *= scale.astype(a.dtype)[None, :, None]
            a += shift.astype(a.dtype)[None, :, None]
            return nn.relu(a, out=a)
        while len(c.norm) < len(c.features):
            c.norm.append(nn.batch_normalize(c.features[len(c.norm)], bn.eps))
        blocks = c.norm[:len(c.features)]
        mean = np.concatenate([b[1] for b in blocks])
        var = np.concatenate([b[2] for b in blocks])
        nn.update_running_stats(bn, mean, var, c.features[0].shape[0] * c.features[0].shape[2])
        a = nn.concat_channels([b[0] for b in blocks])
        nn.batchnorm_affine(a, bn, out=a)
        return nn.relu(a, out=a)

    def _bn_cache(self, c: _Cache, bn_index: int, n_blocks: int) -> nn.BatchNormCache:
        blocks = c.norm[:n_blocks]
        return nn.BatchNormCache(
            xhat=nn.concat_channels([b[0] for b in blocks]),
            inv_std=np.concatenate([b[3] for b in blocks]),
            gamma=self.bns[bn_index].gamma.value,
            training=True,
        )

    def backward(self, grad_out: np.ndarray) -> None:
        """Accumulate parameter gradients for the most recent forward pass."""
        c = self._cache
        if c is None:
            raise RuntimeError("backward needs a preceding training-mode forward")
        g, gw, gb = nn.linear_backward(grad_out.astype(self.config.dtype), c.dropped, self.fc2_w.value)
        self.fc2_w.grad += gw
        self.fc2_b.grad += gb
        g = nn.dropout_backward(g, c.drop_mask)
        g = nn.relu_backward(g, c.hidden)
        g, gw, gb = nn.linear_backward(g, c.embed, self.fc1_w.value)
        self.fc1_w.grad += gw
        self.fc1_b.grad += gb
        g, gw, gb = nn.linear_backward(g, c.pooled, self.embed_w.value)
        self.embed_w.grad += gw
        self.embed_b.grad += gb
        L = c.final_act.shape[2]
        g = nn.global_avg_pool_backward(g, L)
        g = nn.relu_backward(g, c.final_act)
        n_layers = self.config.n_conv_layers
        g, gg, gbeta = nn.batchnorm_backward(g, self._bn_cache(c, len(self.bns) - 1, n_layers + 1))
        self.bns[-1].gamma.grad += gg
        self.bns[-1].beta.grad += gbeta
        sizes = [f.shape[1] for f in c.features]
        feat_grads = [fg.copy() for fg in nn.concat_backward(g, sizes)]
        del g
        for n in range(n_layers, 0, -1):
            gy = feat_grads[n]
            if n == 1:
                _, gw = nn.conv1d_backward(gy, c.features[0], self.conv_weights[0].value, spec=self.conv_specs[0])
                self.conv_weights[0].grad += gw
                continue
            act = c.act[n - 2]
            ga, gw = nn.conv1d_backward(gy, act, self.conv_weights[n - 1].value, spec=self.conv_specs[n - 1])
            self.conv_weights[n - 1].grad += gw
            ga = nn.relu_backward(ga, act)
            gcat, gg, gbeta = nn.batchnorm_backward(ga, self._bn_cache(c, n - 2, n))
            bn = self.bns[n - 2]
            bn.gamma.grad += gg
            bn.beta.grad += gbeta
            for i, part in enumerate(nn.concat_backward(gcat, sizes[:n])):
                feat_grads[i] += part
            c.act[n - 2] = None
        self._cache = None

    def release(self) -> None:
        self._cache = None


def build(config: ModelConfig, seed: int | np.random.Generator = 0) -> DenseNetRegressor:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return DenseNetRegressor(config, rng)


def forward(model: DenseNetRegressor, x: np.ndarray, training: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
    return model.forward(x, training=training, rng=rng)


def backward(model: DenseNetRegressor, loss_grad: np.ndarray) -> dict[str, np.ndarray]:
    model.backward(loss_grad)
    return {k: p.grad for k, p in model.named_parameters().items()}
