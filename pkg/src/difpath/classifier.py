"""Small patch classifier, triplet experiment, and feature extractors for FID/KID."""
from dataclasses import asdict, dataclass, field
import logging

import numpy as np

from . import nn
from .data import resize
from .errors import ContractError, DegenerateDataError, DivergenceError, ParameterError
from .numerics import RngStream, gaussian

log = logging.getLogger(__name__)

SOURCES = ("REAL", "GENERATED", "COMBINED")


@dataclass
class ClassifierParams:
    epochs: int = 12
    lr: float = 2e-3
    batch_size: int = 32
    widths: tuple = (16, 32, 32)
    flip_aug: bool = True
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 3:
            raise ParameterError("classifier needs exactly three conv widths")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ParameterError("invalid classifier training parameters")
        if self.precision not in ("float32", "float64"):
            raise ParameterError("precision must be 'float32' or 'float64'")

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass
class SmallCNN:
    """conv-silu-pool, conv-silu-pool, conv-silu, global average pool, linear."""

    n_classes: int
    input_size: int
    channels: int = 3
    widths: tuple = (16, 32, 32)
    params: dict = field(default_factory=dict)

    @classmethod
    def create(cls, n_classes, input_size, rng, channels=3, widths=(16, 32, 32),
               dtype=np.float64):
        if input_size % 4:
            raise ParameterError("classifier input size must be divisible by 4")
        net = cls(int(n_classes), int(input_size), channels, tuple(widths))
        c_in = channels
        for i, w in enumerate(net.widths):
            net.params[f"conv{i}.w"] = nn.he_init(rng, (3, 3, c_in, w), 9 * c_in)
            net.params[f"conv{i}.b"] = np.zeros(w)
            c_in = w
        net.params["head.w"] = nn.he_init(rng, (c_in, n_classes), c_in) * 0.5
        net.params["head.b"] = np.zeros(n_classes)
        for k in net.params:
            net.params[k] = net.params[k].astype(dtype)
        return net

    @property
    def dtype(self):
        return self.params["head.w"].dtype

    @property
    def feature_dim(self):
        return self.widths[-1]

    def config(self):
        return {"n_classes": self.n_classes, "input_size": self.input_size,
                "channels": self.channels, "widths": list(self.widths)}

    def _prep(self, x):
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[3] != self.channels:
            raise ContractError(f"expected (B, H, W, {self.channels}) images, got {x.shape}")
        if x.shape[1:3] != (self.input_size, self.input_size):
            x = resize(x, self.input_size)
        return x.astype(self.dtype, copy=False)

    def forward(self, x):
        h = self._prep(x)
        p = self.params
        tape = []
        for i in range(3):
            a, cache = nn.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
            h = nn.silu(a)
            tape.append((cache, a))
            if i < 2:
                h = nn.avg_pool2(h)
        hw = h.shape[1] * h.shape[2]
        feat = h.mean(axis=(1, 2))
        logits = feat @ p["head.w"] + p["head.b"]
        return logits, (tape, feat, h.shape, hw)

    def features(self, x, batch_size=256):
        x = np.asarray(x)
        if len(x) == 0:
            return np.zeros((0, self.feature_dim))
        return np.concatenate([self.forward(x[i:i + batch_size])[1][1]
                               for i in range(0, len(x), batch_size)]).astype(np.float64)

    def backward(self, cache, dlogits):
        tape, feat, hshape, hw = cache
        p = self.params
        dlogits = np.asarray(dlogits, dtype=self.dtype)
        g = {"head.w": feat.T @ dlogits, "head.b": dlogits.sum(axis=0)}
        dfeat = dlogits @ p["head.w"].T
        dh = np.broadcast_to(dfeat[:, None, None, :] / hw, hshape)
        for i in range(2, -1, -1):
            if i < 2:
                dh = nn.avg_pool2_backward(dh)
            c, a = tape[i]
            dh, g[f"conv{i}.w"], g[f"conv{i}.b"] = nn.conv2d_backward(
                nn.silu_backward(dh, a), c, p[f"conv{i}.w"])
        return g

    def predict(self, x, batch_size=256):
        if len(x) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([self.forward(x[i:i + batch_size])[0].argmax(axis=1)
                               for i in range(0, len(x), batch_size)])


def softmax_xent(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -float(logp[np.arange(n), labels].mean())
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


def train_classifier(images, labels, n_classes=None, params=None, rng=None):
    """Fit a SmallCNN with softmax cross-entropy and Adam; returns ``(net, losses)``."""
    params = ClassifierParams() if params is None else params
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise DegenerateDataError("classifier training needs at least two classes")
    n_classes = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    rng = RngStream(params.seed, 0x434C53) if rng is None else rng
    net = SmallCNN.create(n_classes, images.shape[1], rng.child(0), images.shape[3], params.widths,
                          np.dtype(params.precision))
    opt = nn.Adam(lr=params.lr)
    order_rng, flip_rng = rng.child(1), rng.child(2)
    losses = []
    for epoch in range(params.epochs):
        order = order_rng.permutation(len(images))
        for start in range(0, len(images), params.batch_size):
            idx = order[start:start + params.batch_size]
            x = images[idx]
            if params.flip_aug:
                u = flip_rng.uniform((len(idx), 2))
                x = np.where((u[:, 0] < 0.5)[:, None, None, None], x[:, :, ::-1], x)
                x = np.where((u[:, 1] < 0.5)[:, None, None, None], x[:, ::-1], x)
            logits, cache = net.forward(x)
            loss, d = softmax_xent(logits, labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"classifier loss diverged at epoch {epoch}", step=len(losses))
            opt.step(net.params, net.backward(cache, d))
            losses.append(loss)
    return net, losses


@dataclass
class ClassifierReport:
    train_source: str
    per_class_accuracy: list
    overall_accuracy: float
    confusion: np.ndarray
    n_train: int = 0

    def to_dict(self):
        return {"train_source": self.train_source, "per_class_accuracy": self.per_class_accuracy,
                "overall_accuracy": self.overall_accuracy, "confusion": self.confusion.tolist(),
                "n_train": self.n_train}


def evaluate(net, images, labels, source="REAL", n_train=0):
    labels = np.asarray(labels, dtype=np.int64)
    pred = net.predict(images)
    K = net.n_classes
    conf = np.zeros((K, K), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    rows = conf.sum(axis=1)
    per = [float(conf[k, k] / rows[k]) if rows[k] else float("nan") for k in range(K)]
    total = conf.sum()
    overall = float(np.trace(conf) / total) if total else float("nan")
    return ClassifierReport(source, per, overall, conf, int(n_train))


def run_triplet(real, generated, test, params=None, rng=None):
    """Train on REAL, GENERATED and COMBINED from the same initialization; test on real data.

    Each argument is an ``(images, labels)`` pair.
    """
    params = ClassifierParams() if params is None else params
    (xr, yr), (xg, yg), (xt, yt) = real, generated, test
    if set(np.unique(yr).tolist()) != set(np.unique(yg).tolist()):
        raise ContractError("real and generated datasets cover different class sets")
    n_classes = int(max(np.max(yr), np.max(yt))) + 1
    rng = RngStream(params.seed, 0x545249) if rng is None else rng
    xg = resize(xg, xr.shape[1:3]) if xg.shape[1:3] != xr.shape[1:3] else xg
    corpora = {
        "REAL": (xr, yr),
        "GENERATED": (xg, yg),
        "COMBINED": (np.concatenate([xr, xg]), np.concatenate([yr, yg])),
    }
    reports = {}
    for source in SOURCES:
        x, y = corpora[source]
        net, _ = train_classifier(x, y, n_classes, params, rng.copy())
        reports[source] = evaluate(net, xt, yt, source, len(x))
        log.info("%s accuracy %.4f", source, reports[source].overall_accuracy)
    return reports


# ---------------------------------------------------------------------------
# feature extractors
# ---------------------------------------------------------------------------

@dataclass
class ClassifierFeatures:
    net: SmallCNN
    name: str = "classifier"

    def __call__(self, images):
        return self.net.features(images)


@dataclass
class RandomProjection:
    """Fixed Gaussian projection of pixels (resized to ``input_size``) to ``dim`` features."""

    input_size: int = 32
    dim: int = 64
    seed: int = 0
    channels: int = 3
    name: str = "randproj"

    def __post_init__(self):
        D = self.input_size * self.input_size * self.channels
        self.matrix = gaussian(RngStream(self.seed, 0x525050), (D, self.dim)) / np.sqrt(D)

    def __call__(self, images):
        x = np.asarray(images, dtype=np.float64)
        if x.shape[1:3] != (self.input_size, self.input_size):
            x = resize(x, self.input_size)
        return x.reshape(len(x), -1) @ self.matrix


def classifier_to_tensors(net):
    return dict(net.params)


def classifier_from_tensors(tensors, config):
    net = SmallCNN(config["n_classes"], config["input_size"], config.get("channels", 3),
                   tuple(config["widths"]))
    net.params = {k: np.array(v) for k, v in tensors.items()}
    return net
