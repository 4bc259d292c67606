"""Desk-scale MLP trainer that exercises the mantissa controllers.

Arithmetic runs in float64, but every tensor that would be stashed off-chip
(each layer's input activation and its weights) is first rounded to the
storage format and then truncated to the mantissa width chosen by the
active controller. The backward pass consumes exactly those stored values;
quantization nodes pass gradients straight through.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bitlearn, packer
from .bitchop import BitChop, write_width_log
from .errors import ConfigError, DivergenceError, NonFiniteError
from .floatcore import from_bits, get_format, make_rng, sample_bitlength, split_seed, to_bits, truncate_bits
from .gecko import get_variant

QUANTIZERS = ("none", "qm", "bitchop")
DATASETS = ("gaussian-blobs", "two-spirals", "csv")


@dataclass
class TrainConfig:
    dataset: str = "gaussian-blobs"
    csv_path: str | None = None
    n_samples: int = 1200
    n_features: int = 8
    n_classes: int = 3
    cluster_std: float = 3.0
    test_fraction: float = 0.2
    hidden: tuple = (32, 32)
    batch_size: int = 32
    epochs: int = 30
    lr: float = 0.05
    lr_drops: tuple = ()
    lr_drop_factor: float = 0.1
    weight_decay: float = 1e-4
    quantizer: str = "none"
    format: str = "fp32"
    variant: str = "delta"
    seed: int = 0
    bit_lr: float = 10.0
    n_init: float | None = None
    gamma_schedule: tuple | None = None
    finalize_epoch: int | None = None
    chop_alpha: float = 0.1
    chop_cooldown: int = 100
    chop_weights: bool = False
    chop_enabled: bool = True
    trace_raw: bool = False
    out_dir: str | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.lr_drops = tuple(int(e) for e in self.lr_drops)
        if self.gamma_schedule is not None:
            self.gamma_schedule = tuple((int(e), float(g)) for e, g in self.gamma_schedule)
        self.validate()

    def validate(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.dataset == "csv" and not self.csv_path:
            raise ConfigError("dataset 'csv' needs csv_path")
        if self.quantizer not in QUANTIZERS:
            raise ConfigError(f"quantizer must be one of {QUANTIZERS}, got {self.quantizer!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if len(self.hidden) > 3:
            raise ConfigError("at most 4 layers (3 hidden) are supported")
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in [0, 1)")
        get_format(self.format)
        get_variant(self.variant)

    @property
    def fmt(self):
        return get_format(self.format)

    def qm_config(self) -> bitlearn.QMConfig:
        kwargs = {"bit_lr": self.bit_lr, "seed": self.seed}
        if self.gamma_schedule is not None:
            kwargs["gamma_schedule"] = list(self.gamma_schedule)
        if self.finalize_epoch is not None:
            kwargs["finalize_epoch"] = self.finalize_epoch
        return bitlearn.QMConfig.for_epochs(self.epochs, **kwargs)

    # -- flat key=value config files --

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string("[train]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in parser["train"].items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw.strip())
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if f.name == "gamma_schedule":
                v = ",".join(f"{e}:{g!r}" for e, g in v)
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_INT = {"n_samples", "n_features", "n_classes", "batch_size", "epochs", "seed",
        "finalize_epoch", "chop_cooldown"}
_FLOAT = {"cluster_std", "test_fraction", "lr", "lr_drop_factor", "weight_decay", "bit_lr",
          "n_init", "chop_alpha"}
_BOOL = {"chop_weights", "chop_enabled", "trace_raw"}


def _coerce(key, raw):
    try:
        if raw.lower() in ("none", ""):
            return None if key not in ("hidden", "lr_drops") else ()
        if key in _INT:
            return int(raw)
        if key in _FLOAT:
            return float(raw)
        if key in _BOOL:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if key in ("hidden", "lr_drops"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if key == "gamma_schedule":
            pairs = []
            for item in raw.split(","):
                e, g = item.split(":")
                pairs.append((int(e), float(g)))
            return tuple(pairs)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


# -- data ---------------------------------------------------------------------


def make_dataset(cfg: TrainConfig, seed):
    """Return ``(X, y)`` as float64 / int arrays."""
    rng = make_rng(seed)
    if cfg.dataset == "gaussian-blobs":
        from sklearn.datasets import make_blobs

        state = int(rng.integers(0, 2**31 - 1))
        X, y = make_blobs(
            n_samples=cfg.n_samples,
            n_features=cfg.n_features,
            centers=cfg.n_classes,
            cluster_std=cfg.cluster_std,
            random_state=state,
        )
    elif cfg.dataset == "two-spirals":
        X, y = two_spirals(cfg.n_samples, rng)
    else:
        data = np.loadtxt(cfg.csv_path, delimiter=",", ndmin=2)
        X, y = data[:, :-1], data[:, -1]
        _, y = np.unique(y, return_inverse=True)
    X = np.asarray(X, dtype=np.float64)
    X = (X - X.mean(axis=0)) / np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
    return X, np.asarray(y, dtype=np.int64)


def two_spirals(n, rng, noise=0.2, turns=1.5):
    half = n // 2
    t = np.sqrt(rng.random(half)) * turns * 2 * np.pi
    arm = np.column_stack([t * np.cos(t), t * np.sin(t)]) / (turns * 2 * np.pi)
    X = np.concatenate([arm, -arm]) + noise * rng.standard_normal((2 * half, 2)) / 4
    y = np.concatenate([np.zeros(half, np.int64), np.ones(half, np.int64)])
    return X, y


# -- model ----------------------------------------------------------------------


@dataclass
class Layer:
    W: np.ndarray  # float32 master copy, (fan_in, fan_out)
    b: np.ndarray  # float32
    activation: str  # "relu" or "identity"


@dataclass
class ToyModel:
    layers: list
    dims: tuple
    seed: int = 0

    @classmethod
    def init(cls, dims, seed, hidden_activation="relu"):
        rng = make_rng(seed)
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            W = rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
            act = hidden_activation if i < len(dims) - 2 else "identity"
            layers.append(Layer(W.astype(np.float32), np.zeros(fan_out, np.float32), act))
        return cls(layers, tuple(dims), seed)

    def tensor_ids(self):
        n = len(self.layers)
        return [f"w{i}" for i in range(n)] + [f"a{i}" for i in range(n)]

    def copy(self):
        return ToyModel(
            [Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers], self.dims, self.seed
        )


@dataclass
class StoredTensor:
    tensor_id: str
    kind: str
    raw: np.ndarray  # format bit patterns before mantissa truncation
    stored: np.ndarray  # bit patterns actually written
    width: int
    values: np.ndarray  # float64 view of ``stored``


@dataclass
class ForwardCache:
    inputs: list  # StoredTensor per layer input activation
    weights: list  # StoredTensor per layer
    pre: list  # pre-activation z per layer
    probs: np.ndarray
    loss: float


def store(values, tensor_id, kind, width, fmt, layer=None):
    with np.errstate(over="ignore"):
        raw = to_bits(values, fmt)
    try:
        stored = truncate_bits(raw, width, fmt)
    except NonFiniteError:
        where = f" (layer {layer})" if layer is not None else ""
        raise DivergenceError(f"non-finite values in tensor {tensor_id}{where}") from None
    return StoredTensor(tensor_id, kind, raw, stored, width, from_bits(stored, fmt).astype(np.float64))


def _relu(z):
    return np.where(z > 0, z, 0.0)


def forward(model: ToyModel, X, y=None, widths=None, fmt="fp32") -> ForwardCache:
    """Run the network; ``widths`` maps tensor ids to mantissa widths."""
    fmt = get_format(fmt)
    widths = widths or {}
    a = np.asarray(X, dtype=np.float64)
    inputs, weights, pre = [], [], []
    for i, layer in enumerate(model.layers):
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"non-finite activation entering layer {i}")
        act = store(a, f"a{i}", "activations", widths.get(f"a{i}", fmt.m), fmt, i)
        w = store(layer.W, f"w{i}", "weights", widths.get(f"w{i}", fmt.m), fmt, i)
        z = act.values @ w.values + layer.b.astype(np.float64)
        inputs.append(act)
        weights.append(w)
        pre.append(z)
        a = _relu(z) if layer.activation == "relu" else z
    if not np.all(np.isfinite(a)):
        raise DivergenceError(f"non-finite logits from layer {len(model.layers) - 1}")
    shifted = a - a.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = float("nan")
    if y is not None:
        logp = shifted - np.log(exp.sum(axis=1, keepdims=True))
        loss = float(-logp[np.arange(len(y)), y].mean())
    return ForwardCache(inputs, weights, pre, probs, loss)


@dataclass
class Gradients:
    dW: list
    db: list
    dA: list  # gradient w.r.t. each stored layer input


def backward(model: ToyModel, cache: ForwardCache, y, need_input_grads=True) -> Gradients:
    """Gradients of the mean cross-entropy through the stored tensors."""
    n = len(y)
    if cache.probs.shape[0] != n:
        raise ValueError("label count does not match the batch")
    dz = cache.probs.copy()
    dz[np.arange(n), y] -= 1.0
    dz /= n
    L = len(model.layers)
    dW, db, dA = [None] * L, [None] * L, [None] * L
    for i in range(L - 1, -1, -1):
        a = cache.inputs[i].values
        w = cache.weights[i].values
        if a.shape[1] != w.shape[0] or dz.shape[1] != w.shape[1]:
            raise ValueError(f"shape mismatch in layer {i}")
        dW[i] = a.T @ dz
        db[i] = dz.sum(axis=0)
        if i > 0 or need_input_grads:
            dA[i] = dz @ w.T
        if i > 0:
            prev = model.layers[i - 1]
            deriv = (cache.pre[i - 1] > 0).astype(np.float64) if prev.activation == "relu" else 1.0
            dz = dA[i] * deriv
    return Gradients(dW, db, dA)


def sgd_update(model: ToyModel, grads: Gradients, lr: float, weight_decay: float = 0.0):
    """Plain SGD on the float32 master weights (straight-through)."""
    if lr == 0:
        return model
    # overflow to inf is caught by the next forward pass
    with np.errstate(over="ignore"):
        for layer, dW, db in zip(model.layers, grads.dW, grads.db):
            W = layer.W.astype(np.float64)
            layer.W = (W - lr * (dW + weight_decay * W)).astype(np.float32)
            layer.b = (layer.b.astype(np.float64) - lr * db).astype(np.float32)
    return model


def predict_proba(model, X, widths=None, fmt="fp32"):
    return forward(model, X, None, widths, fmt).probs


def accuracy(model, X, y, widths=None, fmt="fp32"):
    if len(y) == 0:
        return float("nan")
    return float((predict_proba(model, X, widths, fmt).argmax(axis=1) == y).mean())


# -- traces ---------------------------------------------------------------------

TRACE_FIELDS = (
    "epoch", "batch", "tensor", "kind", "count", "width", "signless",
    "exponent_bits", "meta_bits", "sign_bits", "mantissa_bits", "total_bits", "raw_bits",
)


class TensorTrace:
    """Per-batch record of every stored tensor and its compressed size.

    Saved as ``.npz``: one array per field in :data:`TRACE_FIELDS`, an
    ``exp_hist`` array (records x 256), plus ``raw``/``offsets`` holding the
    stored bit patterns when raw capture is on, and scalar ``format``,
    ``variant`` entries.
    """

    def __init__(self, fmt, variant, keep_raw=False):
        self.fmt = get_format(fmt)
        self.variant = get_variant(variant)
        self.keep_raw = keep_raw
        self.rows = []
        self.hists = []
        self.raw = []

    def record(self, epoch, batch, t: StoredTensor):
        bits = t.stored
        signless = bool(t.kind == "activations" and not np.any(bits >> (self.fmt.width - 1)))
        acc = packer.size_account(bits, self.fmt, t.width, signless, self.variant)
        self.rows.append((
            epoch, batch, t.tensor_id, t.kind, bits.size, t.width, signless,
            acc.exponent_bits, acc.meta_bits, acc.sign_bits, acc.mantissa_bits,
            acc.total_bits, acc.raw_bits,
        ))
        exps = ((bits.ravel() >> self.fmt.m) & 0xFF).astype(np.int64)
        self.hists.append(np.bincount(exps, minlength=256))
        if self.keep_raw:
            self.raw.append(bits.ravel().copy())
        return acc

    def save(self, path):
        cols = list(zip(*self.rows)) if self.rows else [[] for _ in TRACE_FIELDS]
        arrays = {name: np.asarray(col) for name, col in zip(TRACE_FIELDS, cols)}
        arrays["exp_hist"] = np.asarray(self.hists, dtype=np.int64).reshape(-1, 256)
        if self.keep_raw:
            sizes = [r.size for r in self.raw]
            arrays["offsets"] = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
            arrays["raw"] = (
                np.concatenate(self.raw) if self.raw else np.zeros(0, self.fmt.dtype)
            )
        arrays["format"] = np.asarray(self.fmt.name)
        arrays["variant"] = np.asarray(int(self.variant))
        np.savez_compressed(path, **arrays)


def load_trace(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        return {k: data[k] for k in data.files}


def trace_tensors(trace: dict):
    """Yield ``(record dict, stored bits or None)`` for each traced tensor."""
    fmt = get_format(str(trace["format"]))
    has_raw = "raw" in trace
    for i in range(len(trace["epoch"])):
        rec = {k: trace[k][i].item() for k in TRACE_FIELDS}
        bits = None
        if has_raw:
            lo, hi = trace["offsets"][i], trace["offsets"][i + 1]
            bits = trace["raw"][lo:hi].astype(fmt.dtype)
        yield rec, bits


# -- training loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    config: TrainConfig
    model: ToyModel
    history: list = field(default_factory=list)
    qm_params: list = field(default_factory=list)
    qm_log: bitlearn.TrajectoryLog | None = None
    chop_log: list = field(default_factory=list)
    trace: TensorTrace | None = None
    layer_traffic: dict = field(default_factory=dict)
    final_widths: dict = field(default_factory=dict)
    losses: list = field(default_factory=list)

    @property
    def final(self) -> dict:
        return self.history[-1] if self.history else {}

    @property
    def mean_activation_width(self) -> float:
        """Mean mantissa width of stored activations over every batch."""
        widths = [row[5] for row in self.trace.rows if row[3] == "activations"]
        return float(np.mean(widths)) if widths else float("nan")

    def footprint(self) -> dict:
        """Stored bits aggregated per kind and field, plus per tensor totals."""
        out = {}
        per_tensor = {}
        for row in self.trace.rows:
            rec = dict(zip(TRACE_FIELDS, row))
            kind = out.setdefault(rec["kind"], {k: 0 for k in (
                "values", "exponent_bits", "meta_bits", "sign_bits", "mantissa_bits",
                "total_bits", "raw_bits")})
            kind["values"] += rec["count"]
            for k in ("exponent_bits", "meta_bits", "sign_bits", "mantissa_bits",
                      "total_bits", "raw_bits"):
                kind[k] += rec[k]
            per_tensor[rec["tensor"]] = per_tensor.get(rec["tensor"], 0) + rec["total_bits"]
        total = sum(k["total_bits"] for k in out.values())
        raw = sum(k["raw_bits"] for k in out.values())
        fp32 = sum(k["values"] for k in out.values()) * 32
        return {
            "by_kind": out,
            "by_tensor": per_tensor,
            "total_bits": total,
            "raw_bits": raw,
            "relative_to_format": total / raw if raw else float("nan"),
            "relative_to_fp32": total / fp32 if fp32 else float("nan"),
        }

    def write_outputs(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        paths["metrics"] = out / "metrics.csv"
        with open(paths["metrics"], "w", newline="") as fh:
            keys = list(self.history[0].keys())
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for row in self.history:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        if self.qm_log is not None:
            paths["bitlengths"] = out / "bitlengths.csv"
            self.qm_log.write(paths["bitlengths"])
        if self.chop_log:
            paths["widths"] = out / "widths.csv"
            write_width_log(paths["widths"], self.chop_log)
            paths["width_histogram"] = out / "width_histogram.csv"
            hist = np.bincount([r[2] for r in self.chop_log], minlength=self.config.fmt.m + 1)
            with open(paths["width_histogram"], "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(("width", "batches"))
                w.writerows(enumerate(hist.tolist()))
        paths["footprint"] = out / "footprint.json"
        paths["footprint"].write_text(json.dumps(self.footprint(), indent=2, sort_keys=True) + "\n")
        paths["layer_traffic"] = out / "layer_traffic.csv"
        write_layer_traffic(paths["layer_traffic"], self.layer_traffic)
        paths["trace"] = out / "trace.npz"
        self.trace.save(paths["trace"])
        paths["config"] = out / "config.txt"
        paths["config"].write_text(self.config.to_text())
        return paths


def write_layer_traffic(path, traffic):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("layer", "pass", "macs", "bytes_raw", "bytes_compressed"))
        for (layer, pas), rec in sorted(traffic.items()):
            w.writerow((layer, pas, rec["macs"], rec["bytes_raw"], repr(rec["bytes_compressed"])))


def _add_traffic(traffic, layer, pas, macs, raw_bits, comp_bits):
    rec = traffic.setdefault((layer, pas), {"macs": 0, "bytes_raw": 0, "bytes_compressed": 0.0})
    rec["macs"] += macs
    rec["bytes_raw"] += raw_bits // 8
    rec["bytes_compressed"] += comp_bits / 8


def _split(X, y, cfg, seed):
    rng = make_rng(seed)
    order = rng.permutation(len(y))
    n_test = int(round(cfg.test_fraction * len(y)))
    test, train = order[:n_test], order[n_test:]
    return X[train], y[train], X[test], y[test]


def train(cfg: TrainConfig, X=None, y=None) -> TrainResult:
    """Train per ``cfg``; ``X``/``y`` override the configured dataset."""
    seeds = split_seed(cfg.seed, 5)
    data_seed, split_seed_, init_seed, shuffle_seed, quant_seed = seeds
    if X is None:
        X, y = make_dataset(cfg, data_seed)
        Xtr, ytr, Xte, yte = _split(X, y, cfg, split_seed_)
    else:
        Xtr, ytr = np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64)
        Xte, yte = Xtr[:0], ytr[:0]
    n_classes = int(max(ytr.max() + 1, cfg.n_classes if cfg.dataset != "csv" else 0))
    dims = (Xtr.shape[1], *cfg.hidden, n_classes)
    model = ToyModel.init(dims, init_seed)
    return fit_model(model, Xtr, ytr, Xte, yte, cfg, shuffle_seed, quant_seed)


def fit_model(model, Xtr, ytr, Xte, yte, cfg, shuffle_seed, quant_seed) -> TrainResult:
    fmt = cfg.fmt
    m = fmt.m
    shuffle_rng = make_rng(shuffle_seed)
    quant_rng = make_rng(quant_seed)
    result = TrainResult(config=cfg, model=model)
    result.trace = TensorTrace(fmt, cfg.variant, keep_raw=cfg.trace_raw)

    params = []
    qm = None
    if cfg.quantizer == "qm":
        qm = cfg.qm_config()
        sizes = [l.W.size for l in model.layers] + [
            cfg.batch_size * d for d in model.dims[:-1]
        ]
        lams = bitlearn.footprint_weights(sizes)
        n0 = m if cfg.n_init is None else cfg.n_init
        params = [
            bitlearn.BitlengthParam(tid, "weights" if tid[0] == "w" else "activations", n0, lam, m)
            for tid, lam in zip(model.tensor_ids(), lams)
        ]
        result.qm_params = params
        result.qm_log = bitlearn.TrajectoryLog()
    chop = None
    if cfg.quantizer == "bitchop":
        chop = BitChop(m, alpha=cfg.chop_alpha, cooldown=cfg.chop_cooldown)

    try:
        _run_epochs(result, model, Xtr, ytr, Xte, yte, cfg, params, qm, chop, shuffle_rng, quant_rng)
    except DivergenceError:
        out = Path(cfg.out_dir or ".")
        out.mkdir(parents=True, exist_ok=True)
        result.trace.save(out / "trace_diverged.npz")
        raise
    result.final_widths = _eval_widths(model, params, chop, cfg)
    return result


def _run_epochs(result, model, Xtr, ytr, Xte, yte, cfg, params, qm, chop, shuffle_rng, quant_rng):
    fmt = cfg.fmt
    L = len(model.layers)
    lr = cfg.lr
    n = len(ytr)
    for epoch in range(cfg.epochs):
        if epoch in cfg.lr_drops:
            lr *= cfg.lr_drop_factor
            if chop is not None:
                chop.notify_lr_change()
        if qm is not None and qm.finalize_epoch is not None and epoch == qm.finalize_epoch:
            bitlearn.qm_finalize(params)
        gamma = qm.gamma(epoch) if qm is not None else 0.0
        order = shuffle_rng.permutation(n)
        epoch_loss, seen, act_widths = 0.0, 0, []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            xb, yb = Xtr[idx], ytr[idx]
            widths = _batch_widths(model, params, chop, cfg, quant_rng)
            cache = forward(model, xb, yb, widths, fmt)
            if not math.isfinite(cache.loss):
                raise DivergenceError(f"loss became {cache.loss} at epoch {epoch} batch {b}")
            grads = backward(model, cache, yb, need_input_grads=qm is not None)
            if qm is not None:
                gs = []
                for p in params:
                    i = int(p.tensor_id[1:])
                    if p.kind == "weights":
                        gs.append(bitlearn.qm_gradient(p, grads.dW[i], cache.weights[i].raw, gamma, fmt))
                    else:
                        gs.append(bitlearn.qm_gradient(p, grads.dA[i], cache.inputs[i].raw, gamma, fmt))
                bitlearn.qm_step(params, gs, qm.bit_lr)
                result.qm_log.record(epoch, b, params, gamma)
            sgd_update(model, grads, lr, cfg.weight_decay)
            _account(result, epoch, b, cache, xb.shape[0])
            act_widths.extend(cache.inputs[i].width for i in range(L))
            result.losses.append(cache.loss)
            if chop is not None:
                result.chop_log.append((epoch, b, widths["a0"], int(chop.bypassed)))
                chop.observe(cache.loss)
            epoch_loss += cache.loss * len(yb)
            seen += len(yb)
        eval_widths = _eval_widths(model, params, chop, cfg)
        row = {
            "epoch": epoch,
            "loss": epoch_loss / seen,
            "train_acc": accuracy(model, Xtr, ytr, eval_widths, fmt),
            "test_acc": accuracy(model, Xte, yte, eval_widths, fmt),
            "lr": lr,
            "mean_act_width": float(np.mean(act_widths)),
        }
        if params:
            row["weighted_bits"] = bitlearn.weighted_mean_bits(params)
        result.history.append(row)


def _batch_widths(model, params, chop, cfg, quant_rng):
    fmt = cfg.fmt
    ids = model.tensor_ids()
    if params:
        return {
            p.tensor_id: p.width if p.frozen else sample_bitlength(p.n, quant_rng, fmt)
            for p in params
        }
    if chop is not None:
        return _chop_widths(chop, cfg, ids)
    return {t: fmt.m for t in ids}


def _chop_widths(chop, cfg, ids):
    # a disabled controller still observes losses but never narrows anything
    w = chop.width if cfg.chop_enabled else cfg.fmt.m
    return {t: (w if t[0] == "a" or cfg.chop_weights else cfg.fmt.m) for t in ids}


def _eval_widths(model, params, chop, cfg):
    fmt = cfg.fmt
    if params:
        return {p.tensor_id: int(math.ceil(p.n)) for p in params}
    if chop is not None:
        return _chop_widths(chop, cfg, model.tensor_ids())
    return {t: fmt.m for t in model.tensor_ids()}


def _account(result, epoch, batch, cache, batch_n):
    """Trace stored tensors and tally per-layer traffic for the perf model.

    Forward of layer ``i`` reads its weights and stored input; the backward
    pass reads both again. Gradients are assumed to stay on chip.
    """
    L = len(cache.inputs)
    trace = result.trace
    for i in range(L):
        a_acc = trace.record(epoch, batch, cache.inputs[i])
        w_acc = trace.record(epoch, batch, cache.weights[i])
        fan_in, fan_out = cache.weights[i].stored.shape
        macs = batch_n * fan_in * fan_out
        raw = a_acc.raw_bits + w_acc.raw_bits
        comp = a_acc.total_bits + w_acc.total_bits
        _add_traffic(result.layer_traffic, i, "fwd", macs, raw, comp)
        _add_traffic(result.layer_traffic, i, "bwd", 2 * macs, raw, comp)
