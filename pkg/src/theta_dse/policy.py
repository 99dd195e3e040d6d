"""Policy networks that decode a constant input into per-dimension categorical
distributions, plus sampling, log-probability, entropy, and reverse-KL helpers.

Both network kinds emit one probability vector per design dimension from a
single forward pass; the joint sampling distribution is the product of the
per-dimension categoricals, and any inter-dimension structure has to be picked
up by the shared trunk during training.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .design_space import DesignSpace, OutputLayout
from .diffcore import Tensor
from .errors import ConfigurationError, UsageError

ALPHA_UNIFORM_ONE = "uniform_one"
ALPHA_LOG_NORMALIZED = "log_normalized"


def normalize_alpha_mode(mode: str) -> str:
    norm = mode.replace("-", "_").lower()
    if norm in (ALPHA_UNIFORM_ONE, "uniform", "one"):
        return ALPHA_UNIFORM_ONE
    if norm == ALPHA_LOG_NORMALIZED:
        return ALPHA_LOG_NORMALIZED
    raise ConfigurationError(f"unknown alpha_i mode {mode!r}")


@dataclass(frozen=True)
class MLPConfig:
    """Constant ones vector in, stacked ReLU layers, one flat logit head."""

    input_width: int = 16
    hidden: tuple[int, ...] = (256, 256)

    kind: str = field(default="mlp", init=False)

    def validate(self) -> None:
        if self.input_width < 1:
            raise ConfigurationError("MLP input_width must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ConfigurationError("MLP hidden sizes must be >= 1")


@dataclass(frozen=True)
class TransformerConfig:
    """One learned token per dimension, pre-norm blocks, per-dimension heads."""

    width: int = 64
    depth: int = 2
    heads: int = 4
    ff_width: int = 256

    kind: str = field(default="transformer", init=False)

    def validate(self) -> None:
        if self.depth < 1:
            raise ConfigurationError("Transformer depth must be >= 1")
        if self.heads < 1:
            raise ConfigurationError("Transformer needs at least one head")
        if self.width % self.heads != 0:
            raise ConfigurationError(
                f"token width {self.width} not divisible by head count {self.heads}"
            )
        if self.ff_width < 1:
            raise ConfigurationError("Transformer ff_width must be >= 1")


ArchConfig = MLPConfig | TransformerConfig


def arch_from_dict(raw: dict) -> ArchConfig:
    kind = raw.get("kind", "mlp")
    fields = {k: v for k, v in raw.items() if k != "kind"}
    if "hidden" in fields:
        fields["hidden"] = tuple(fields["hidden"])
    try:
        if kind == "mlp":
            return MLPConfig(**fields)
        if kind == "transformer":
            return TransformerConfig(**fields)
    except TypeError as e:
        raise ConfigurationError(f"bad architecture config: {e}") from None
    raise ConfigurationError(f"unknown architecture kind {kind!r}")


def arch_to_dict(arch: ArchConfig) -> dict:
    if isinstance(arch, MLPConfig):
        return {"kind": "mlp", "input_width": arch.input_width, "hidden": list(arch.hidden)}
    return {
        "kind": "transformer",
        "width": arch.width,
        "depth": arch.depth,
        "heads": arch.heads,
        "ff_width": arch.ff_width,
    }


class PolicyOutput:
    """Per-dimension probability and log-probability vectors from one forward pass."""

    def __init__(self, layout: OutputLayout, per_dim_log_probs: list[Tensor]):
        self.layout = layout
        self.per_dim_log_probs = per_dim_log_probs
        self.per_dim_probs = [dc.exp(lp) for lp in per_dim_log_probs]
        self.log_prob_row = dc.concat(per_dim_log_probs)
        self.prob_row = dc.concat(self.per_dim_probs)

    @property
    def num_dimensions(self) -> int:
        return len(self.per_dim_log_probs)

    def probs_arrays(self) -> list[np.ndarray]:
        return [p.values.reshape(-1) for p in self.per_dim_probs]

    def log_probs_arrays(self) -> list[np.ndarray]:
        return [lp.values.reshape(-1) for lp in self.per_dim_log_probs]

    def snapshot(self) -> "PolicySnapshot":
        return PolicySnapshot(
            layout=self.layout,
            probs=[p.values.reshape(-1).copy() for p in self.per_dim_probs],
            log_probs=[lp.values.reshape(-1).copy() for lp in self.per_dim_log_probs],
        )


@dataclass
class PolicySnapshot:
    """Detached (plain numpy) copy of a PolicyOutput; stands in for the old policy."""

    layout: OutputLayout
    probs: list[np.ndarray]
    log_probs: list[np.ndarray]

    def probs_arrays(self) -> list[np.ndarray]:
        return self.probs

    def log_probs_arrays(self) -> list[np.ndarray]:
        return self.log_probs

    @property
    def log_prob_row_values(self) -> np.ndarray:
        return np.concatenate(self.log_probs)


class PolicyNet:
    """Base policy network: named parameters in registration order, one forward."""

    kind = "base"

    def __init__(self, space: DesignSpace, seed: int):
        self.space = space
        self.layout = space.output_layout()
        self.seed = seed
        self._params: dict[str, Tensor] = {}

    def _register(self, name: str, values: np.ndarray) -> Tensor:
        t = dc.parameter(values)
        self._params[name] = t
        return t

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self) -> PolicyOutput:
        raise NotImplementedError

    def _split_heads(self, logits: Tensor) -> PolicyOutput:
        per_dim = [
            dc.log_softmax(dc.narrow(logits, -1, off, length))
            for off, length in self.layout.segments
        ]
        return PolicyOutput(self.layout, per_dim)


class MLPPolicy(PolicyNet):
    kind = "mlp"

    def __init__(self, space: DesignSpace, config: MLPConfig, seed: int):
        config.validate()
        super().__init__(space, seed)
        self.config = config
        rng = np.random.default_rng(seed)
        self.constant_input = Tensor(np.ones((1, config.input_width)))
        widths = [config.input_width, *config.hidden]
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            self._register(f"w{i}", dc.xavier_uniform(rng, fan_in, fan_out, (fan_in, fan_out)))
            self._register(f"b{i}", np.zeros(fan_out))
        # zero-initialized head: the initial policy is exactly uniform per dimension
        self._register("w_out", np.zeros((widths[-1], space.total_width)))
        self._register("b_out", np.zeros(space.total_width))

    def forward(self) -> PolicyOutput:
        x = self.constant_input
        for i in range(len(self.config.hidden)):
            x = dc.relu(dc.add(dc.matmul(x, self._params[f"w{i}"]), self._params[f"b{i}"]))
        logits = dc.add(dc.matmul(x, self._params["w_out"]), self._params["b_out"])
        return self._split_heads(logits)


class TransformerPolicy(PolicyNet):
    kind = "transformer"

    def __init__(self, space: DesignSpace, config: TransformerConfig, seed: int):
        config.validate()
        super().__init__(space, seed)
        self.config = config
        rng = np.random.default_rng(seed)
        d = space.num_dimensions
        w = config.width
        # the constant input: one hot-1 token per design dimension
        self.constant_input = Tensor(np.eye(d))
        self._register("token_embed", dc.xavier_uniform(rng, w, w, (d, w)))
        dh = w // config.heads
        for layer in range(config.depth):
            p = f"blk{layer}_"
            self._register(p + "ln1_g", np.ones(w))
            self._register(p + "ln1_b", np.zeros(w))
            for h in range(config.heads):
                self._register(p + f"wq{h}", dc.xavier_uniform(rng, w, dh, (w, dh)))
                self._register(p + f"wk{h}", dc.xavier_uniform(rng, w, dh, (w, dh)))
                self._register(p + f"wv{h}", dc.xavier_uniform(rng, w, dh, (w, dh)))
            self._register(p + "wo", dc.xavier_uniform(rng, w, w, (w, w)))
            self._register(p + "bo", np.zeros(w))
            self._register(p + "ln2_g", np.ones(w))
            self._register(p + "ln2_b", np.zeros(w))
            self._register(p + "ff_w1", dc.xavier_uniform(rng, w, config.ff_width, (w, config.ff_width)))
            self._register(p + "ff_b1", np.zeros(config.ff_width))
            self._register(p + "ff_w2", dc.xavier_uniform(rng, config.ff_width, w, (config.ff_width, w)))
            self._register(p + "ff_b2", np.zeros(w))
        self._register("lnf_g", np.ones(w))
        self._register("lnf_b", np.zeros(w))
        for i, dim in enumerate(space.dimensions):
            self._register(f"head{i}_w", np.zeros((w, dim.cardinality)))
            self._register(f"head{i}_b", np.zeros(dim.cardinality))

    def forward(self) -> PolicyOutput:
        cfg = self.config
        P = self._params
        dh = cfg.width // cfg.heads
        inv_sqrt_dh = 1.0 / math.sqrt(dh)
        x = dc.matmul(self.constant_input, P["token_embed"])
        for layer in range(cfg.depth):
            p = f"blk{layer}_"
            a = dc.layer_norm(x, P[p + "ln1_g"], P[p + "ln1_b"])
            head_outs = []
            for h in range(cfg.heads):
                q = dc.matmul(a, P[p + f"wq{h}"])
                k = dc.matmul(a, P[p + f"wk{h}"])
                v = dc.matmul(a, P[p + f"wv{h}"])
                scores = dc.scale(dc.matmul(q, dc.transpose(k)), inv_sqrt_dh)
                head_outs.append(dc.matmul(dc.softmax(scores), v))
            attn = dc.add(dc.matmul(dc.concat(head_outs), P[p + "wo"]), P[p + "bo"])
            x = dc.add(x, attn)
            f = dc.layer_norm(x, P[p + "ln2_g"], P[p + "ln2_b"])
            hidden = dc.relu(dc.add(dc.matmul(f, P[p + "ff_w1"]), P[p + "ff_b1"]))
            x = dc.add(x, dc.add(dc.matmul(hidden, P[p + "ff_w2"]), P[p + "ff_b2"]))
        x = dc.layer_norm(x, P["lnf_g"], P["lnf_b"])
        per_dim = []
        for i in range(self.space.num_dimensions):
            row = dc.narrow(x, 0, i, 1)
            logits = dc.add(dc.matmul(row, P[f"head{i}_w"]), P[f"head{i}_b"])
            per_dim.append(dc.log_softmax(logits))
        return PolicyOutput(self.layout, per_dim)


def build_policy(space: DesignSpace, arch: ArchConfig | dict, seed: int) -> PolicyNet:
    if isinstance(arch, dict):
        arch = arch_from_dict(arch)
    if isinstance(arch, MLPConfig):
        return MLPPolicy(space, arch, seed)
    if isinstance(arch, TransformerConfig):
        return TransformerPolicy(space, arch, seed)
    raise ConfigurationError(f"unsupported architecture object {arch!r}")


def forward_policy(net: PolicyNet) -> PolicyOutput:
    return net.forward()


def sample_designs(
    out: PolicyOutput | PolicySnapshot, count: int, rng: np.random.Generator
) -> list[tuple[int, ...]]:
    """Draw ``count`` design points, each dimension independently by inverse CDF."""
    if count < 1:
        raise ConfigurationError("sample count must be >= 1")
    columns = []
    for p in out.probs_arrays():
        cdf = np.cumsum(p)
        u = rng.random(count)
        idx = np.searchsorted(cdf, u, side="right")
        columns.append(np.minimum(idx, len(p) - 1))
    stacked = np.stack(columns, axis=1)
    return [tuple(int(v) for v in row) for row in stacked]


def _flat_positions(layout: OutputLayout, designs: Sequence[Sequence[int]]) -> np.ndarray:
    offsets = np.array([off for off, _ in layout.segments], dtype=np.intp)
    return offsets[None, :] + np.asarray(designs, dtype=np.intp)


def log_prob(out: PolicyOutput, x: Sequence[int]) -> Tensor:
    """Joint log-probability of one design point (sum of per-dimension log terms)."""
    pos = _flat_positions(out.layout, [list(x)])[0]
    return dc.tsum(dc.take(out.log_prob_row, pos))


def batch_log_probs(out: PolicyOutput, designs: Sequence[Sequence[int]]) -> Tensor:
    """Joint log-probabilities for a batch of design points, shape (B,)."""
    pos = _flat_positions(out.layout, designs)
    return dc.tsum(dc.take(out.log_prob_row, pos), axis=-1)


def alpha_weights(space: DesignSpace, mode: str) -> np.ndarray:
    """Per-dimension entropy weights; log-normalized mode rescales by cardinality."""
    mode = normalize_alpha_mode(mode)
    cards = np.array(space.cardinalities, dtype=np.float64)
    if mode == ALPHA_UNIFORM_ONE:
        return np.ones_like(cards)
    d_max = cards.max()
    out = np.zeros_like(cards)
    multi = cards > 1
    out[multi] = np.log(d_max) / np.log(cards[multi])
    return out


def entropy_terms(out: PolicyOutput, alpha: np.ndarray | str, space: DesignSpace | None = None) -> list[Tensor]:
    """Weighted per-dimension entropies alpha_i * H(f_i), in nats."""
    if isinstance(alpha, str):
        if space is None:
            raise UsageError("entropy_terms needs the space to resolve a named alpha mode")
        alpha = alpha_weights(space, alpha)
    terms = []
    for a, p, lp in zip(alpha, out.per_dim_probs, out.per_dim_log_probs):
        h = dc.scale(dc.tsum(dc.mul(p, lp)), -1.0)
        terms.append(dc.scale(h, float(a)))
    return terms


def kl_rev_terms(new: PolicyOutput, old: PolicyOutput | PolicySnapshot) -> list[Tensor]:
    """Per-dimension D_KL(new_i || old_i); old is treated as a constant."""
    old_logs = old.log_probs_arrays()
    terms = []
    for p, lp, old_lp in zip(new.per_dim_probs, new.per_dim_log_probs, old_logs):
        diff = dc.sub(lp, Tensor(old_lp.reshape(lp.values.shape)))
        terms.append(dc.tsum(dc.mul(p, diff)))
    return terms


CHECKPOINT_MAGIC = "theta-dse-policy"


def save_checkpoint(net: PolicyNet, path: str | Path) -> None:
    """JSON header line + little-endian float64 blob in parameter registration order."""
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": 1,
        "arch": arch_to_dict(net.config),
        "space_hash": net.space.content_hash(),
        "seed": net.seed,
        "params": [[name, list(t.values.shape)] for name, t in net._params.items()],
    }
    blob = b"".join(t.values.astype("<f8").tobytes() for t in net._params.values())
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        f.write(blob)


def load_checkpoint(path: str | Path, space: DesignSpace) -> PolicyNet:
    with open(path, "rb") as f:
        header_line = f.readline()
        blob = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ConfigurationError("not a policy checkpoint: bad header") from None
    if header.get("format") != CHECKPOINT_MAGIC:
        raise ConfigurationError("not a policy checkpoint: wrong format tag")
    if header["space_hash"] != space.content_hash():
        raise ConfigurationError("checkpoint was trained on a different design space")
    net = build_policy(space, arch_from_dict(header["arch"]), seed=header["seed"])
    offset = 0
    for name, shape in header["params"]:
        t = net._params[name]
        n = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(blob, dtype="<f8", count=n, offset=offset)
        t.values = raw.astype(np.float64).reshape(tuple(shape)).copy()
        offset += n * 8
    if offset != len(blob):
        raise ConfigurationError("checkpoint blob length does not match parameter shapes")
    return net
