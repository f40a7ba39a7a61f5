"""GRU sequence classifier written directly in numpy.

Row-vector convention throughout: a batch of inputs ``x`` has shape
``(B, input_size)`` and a gate pre-activation is
``x @ W_zx + h @ W_zh + b_z``. Per step::

    z  = sigmoid(x W_zx + h W_zh + b_z)          update gate
    r  = sigmoid(x W_rx + h W_rh + b_r)          reset gate
    hc = tanh((r * h) W_hh + x W_hx + b_h)       candidate
    h' = (1 - z) * h + z * hc

With zero biases these are the textbook GRU equations without bias
terms. Stacked layers feed their whole hidden sequence to the next
layer; only the last state of the top layer reaches the dense softmax.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StructureError, TrainingDivergedError

log = logging.getLogger(__name__)

GATE_PARAMS = ("W_zx", "W_zh", "b_z", "W_rx", "W_rh", "b_r", "W_hx", "W_hh", "b_h")


def sigmoid(a):
    # split by sign to avoid overflow in exp
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class GruCell:
    input_size: int
    hidden_size: int
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, input_size, hidden_size, rng):
        p = {}
        bx = np.sqrt(1.0 / input_size)
        bh = np.sqrt(1.0 / hidden_size)
        for g in "zrh":
            p[f"W_{g}x"] = rng.uniform(-bx, bx, (input_size, hidden_size))
            wh = f"W_{g}h" if g != "h" else "W_hh"
            p[wh] = rng.uniform(-bh, bh, (hidden_size, hidden_size))
            p[f"b_{g}"] = np.zeros(hidden_size)
        return cls(input_size, hidden_size, {k: p[k] for k in GATE_PARAMS})

    def check(self):
        shapes = {
            "W_zx": (self.input_size, self.hidden_size),
            "W_rx": (self.input_size, self.hidden_size),
            "W_hx": (self.input_size, self.hidden_size),
            "W_zh": (self.hidden_size, self.hidden_size),
            "W_rh": (self.hidden_size, self.hidden_size),
            "W_hh": (self.hidden_size, self.hidden_size),
            "b_z": (self.hidden_size,),
            "b_r": (self.hidden_size,),
            "b_h": (self.hidden_size,),
        }
        for name, shape in shapes.items():
            arr = self.params.get(name)
            if arr is None or arr.shape != shape:
                got = None if arr is None else arr.shape
                raise StructureError(f"{name}: expected shape {shape}, got {got}")
            if not np.all(np.isfinite(arr)):
                raise StructureError(f"{name} has non-finite entries")
        return self


def cell_step(cell, x, h_prev):
    """One GRU step. Works on single vectors or on ``(B, n)`` batches.

    Returns the new state and a cache of the intermediates needed by
    :func:`cell_step_backward`.
    """
    p = cell.params
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape[-1] != cell.input_size or h_prev.shape[-1] != cell.hidden_size:
        raise StructureError(
            f"cell expects input {cell.input_size} / hidden {cell.hidden_size}, "
            f"got {x.shape[-1]} / {h_prev.shape[-1]}"
        )
    a_z = x @ p["W_zx"] + h_prev @ p["W_zh"] + p["b_z"]
    a_r = x @ p["W_rx"] + h_prev @ p["W_rh"] + p["b_r"]
    z = sigmoid(np.atleast_1d(a_z))
    r = sigmoid(np.atleast_1d(a_r))
    rh = r * h_prev
    a_c = rh @ p["W_hh"] + x @ p["W_hx"] + p["b_h"]
    hc = np.tanh(a_c)
    h = (1.0 - z) * h_prev + z * hc
    cache = {"x": x, "h_prev": h_prev, "z": z, "r": r, "rh": rh, "hc": hc,
             "a_z": a_z, "a_r": a_r, "a_c": a_c}
    return h, cache


def cell_step_backward(cell, dh, cache, grads):
    """Accumulate parameter gradients into ``grads``; return ``(dx, dh_prev)``."""
    p = cell.params
    x, h_prev = cache["x"], cache["h_prev"]
    z, r, rh, hc = cache["z"], cache["r"], cache["rh"], cache["hc"]
    dz = dh * (hc - h_prev)
    dh_prev = dh * (1.0 - z)
    da_c = dh * z * (1.0 - hc * hc)
    grads["W_hh"] += rh.T @ da_c
    grads["W_hx"] += x.T @ da_c
    grads["b_h"] += da_c.sum(axis=0)
    drh = da_c @ p["W_hh"].T
    dh_prev += drh * r
    da_r = drh * h_prev * r * (1.0 - r)
    da_z = dz * z * (1.0 - z)
    grads["W_rx"] += x.T @ da_r
    grads["W_rh"] += h_prev.T @ da_r
    grads["b_r"] += da_r.sum(axis=0)
    grads["W_zx"] += x.T @ da_z
    grads["W_zh"] += h_prev.T @ da_z
    grads["b_z"] += da_z.sum(axis=0)
    dh_prev += da_r @ p["W_rh"].T + da_z @ p["W_zh"].T
    dx = da_c @ p["W_hx"].T + da_r @ p["W_rx"].T + da_z @ p["W_zx"].T
    return dx, dh_prev


class GruClassifier:
    """Stacked GRU layers followed by a dense softmax over ``out_grid`` classes.

    Inputs are class-index windows of shape ``(look_back, channels)``;
    indices are scaled to [0, 1] by dividing by ``in_grid - 1``.
    """

    def __init__(self, layers, dense_W, dense_b, in_grid):
        self.layers = list(layers)
        self.dense_W = dense_W
        self.dense_b = dense_b
        self.in_grid = int(in_grid)
        self.check()

    @classmethod
    def create(cls, n_channels, cells, out_grid, in_grid, seed=0):
        """Randomly initialised model; ``cells`` is an int or one int per layer."""
        if isinstance(cells, int):
            cells = [cells]
        if not cells or min(cells) < 1:
            raise ConfigError("cells must be positive")
        if out_grid < 2 or in_grid < 2:
            raise ConfigError("grid sizes must be >= 2")
        rng = np.random.default_rng(seed)
        layers = []
        size = n_channels
        for hidden in cells:
            layers.append(GruCell.init(size, hidden, rng))
            size = hidden
        bound = np.sqrt(1.0 / size)
        dense_W = rng.uniform(-bound, bound, (size, out_grid))
        return cls(layers, dense_W, np.zeros(out_grid), in_grid)

    def check(self):
        size = self.layers[0].input_size
        for cell in self.layers:
            if cell.input_size != size:
                raise StructureError("layer input sizes do not chain")
            cell.check()
            size = cell.hidden_size
        if self.dense_W.shape[0] != size or self.dense_b.shape != (self.dense_W.shape[1],):
            raise StructureError("dense layer does not match the last GRU layer")
        return self

    @property
    def n_channels(self):
        return self.layers[0].input_size

    @property
    def out_grid(self):
        return self.dense_W.shape[1]

    @property
    def cells(self):
        return [c.hidden_size for c in self.layers]

    def n_parameters(self):
        return sum(a.size for _, a in self.named_parameters())

    def named_parameters(self):
        for i, cell in enumerate(self.layers):
            for name in GATE_PARAMS:
                yield f"layer{i}.{name}", cell.params[name]
        yield "dense.W", self.dense_W
        yield "dense.b", self.dense_b

    def zero_grads(self):
        return {name: np.zeros_like(arr) for name, arr in self.named_parameters()}

    def copy(self):
        layers = [
            GruCell(c.input_size, c.hidden_size, {k: v.copy() for k, v in c.params.items()})
            for c in self.layers
        ]
        return GruClassifier(layers, self.dense_W.copy(), self.dense_b.copy(), self.in_grid)

    def scale_inputs(self, windows):
        x = np.asarray(windows)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[2] != self.n_channels:
            raise StructureError(
                f"windows must have shape (N, look_back, {self.n_channels}), got {x.shape}"
            )
        if x.size and (x.min() < 0 or x.max() >= self.in_grid):
            raise StructureError(f"class indices outside [0, {self.in_grid})")
        return x.astype(np.float64) / (self.in_grid - 1)

    def _forward(self, x, keep_cache):
        """``x`` is float, ``(B, T, channels)``. Returns probabilities and caches."""
        seq = x
        caches = []
        for cell in self.layers:
            B, T, _ = seq.shape
            h = np.zeros((B, cell.hidden_size))
            outs = np.empty((B, T, cell.hidden_size))
            layer_cache = []
            for t in range(T):
                h, c = cell_step(cell, seq[:, t, :], h)
                outs[:, t, :] = h
                if keep_cache:
                    layer_cache.append(c)
            caches.append(layer_cache)
            seq = outs
        h_last = seq[:, -1, :]
        probs = softmax(h_last @ self.dense_W + self.dense_b)
        return probs, (caches, h_last)

    def _backward(self, probs, targets, cache):
        """Gradients of the mean cross-entropy for integer ``targets``."""
        caches, h_last = cache
        B = probs.shape[0]
        grads = self.zero_grads()
        dlogits = probs.copy()
        dlogits[np.arange(B), targets] -= 1.0
        dlogits /= B
        grads["dense.W"] += h_last.T @ dlogits
        grads["dense.b"] += dlogits.sum(axis=0)
        dh_top = dlogits @ self.dense_W.T
        dseq = None
        for i in reversed(range(len(self.layers))):
            cell = self.layers[i]
            layer_cache = caches[i]
            T = len(layer_cache)
            g = {name: grads[f"layer{i}.{name}"] for name in GATE_PARAMS}
            dh = np.zeros((B, cell.hidden_size))
            dx_seq = np.empty((B, T, cell.input_size))
            for t in reversed(range(T)):
                if dseq is not None:
                    dh = dh + dseq[:, t, :]
                elif t == T - 1:
                    dh = dh + dh_top
                dx, dh = cell_step_backward(cell, dh, layer_cache[t], g)
                dx_seq[:, t, :] = dx
            dseq = dx_seq
        return grads

    def loss_and_grads(self, windows, targets):
        x = self.scale_inputs(windows)
        targets = np.asarray(targets, dtype=np.int64)
        probs, cache = self._forward(x, keep_cache=True)
        loss = cross_entropy(probs, targets)
        return loss, self._backward(probs, targets, cache), probs

    def loss(self, windows, targets):
        probs = self.predict_proba(windows)
        return cross_entropy(probs, np.asarray(targets, dtype=np.int64))

    def predict_proba(self, windows, chunk=8192):
        """Class probabilities for ``(N, look_back, channels)`` windows."""
        windows = np.asarray(windows)
        if windows.ndim == 2:
            windows = windows[None]
        out = np.empty((len(windows), self.out_grid))
        for s in range(0, len(windows), chunk):
            x = self.scale_inputs(windows[s:s + chunk])
            out[s:s + chunk], _ = self._forward(x, keep_cache=False)
        return out

    def predict(self, windows, chunk=8192):
        return np.argmax(self.predict_proba(windows, chunk), axis=1)


def forward(model, window):
    """Probability vector for a single ``(look_back, channels)`` window."""
    return model.predict_proba(np.asarray(window)[None])[0]


def cross_entropy(probs, targets):
    p = probs[np.arange(len(targets)), targets]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def accuracy(predictions, truth):
    """Fraction of positions where the predicted class equals the true class."""
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.ndim == 2:
        predictions = predictions.argmax(axis=1)
    if len(predictions) != len(truth):
        raise StructureError("predictions and truth differ in length")
    if len(truth) == 0:
        raise StructureError("accuracy of an empty sequence is undefined")
    return float(np.mean(predictions == truth))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.05
    validation_fraction: float = 0.1
    seed: int = 0
    optimizer: str = "sgd"
    clip_norm: float = 0.0
    keep_best: bool = False

    def validate(self):
        if self.keep_best and self.validation_fraction == 0:
            raise ConfigError("keep_best needs a validation split")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in [0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer must be 'sgd' or 'adam'")
        if self.clip_norm < 0:
            raise ConfigError("clip_norm must be >= 0")
        return self


@dataclass
class TrainReport:
    loss: list
    train_accuracy: list
    val_accuracy: list
    epochs_run: int
    seed: int
    selected_epoch: int = 0

    @property
    def final_val_accuracy(self):
        """Validation accuracy of the weights the model ends up with."""
        k = (self.selected_epoch or self.epochs_run) - 1
        if self.val_accuracy:
            return self.val_accuracy[k]
        return self.train_accuracy[k]

    def to_dict(self):
        return {
            "loss": list(self.loss),
            "train_accuracy": list(self.train_accuracy),
            "val_accuracy": list(self.val_accuracy),
            "epochs_run": self.epochs_run,
            "seed": self.seed,
            "selected_epoch": self.selected_epoch,
        }


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for name, arr in params:
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(arr))
            v = self.v.setdefault(name, np.zeros_like(arr))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            arr -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def fit(model, data, hyper=None):
    """Mini-batch gradient descent on the categorical cross-entropy.

    ``data`` is a :class:`~qgad.signal_io.WindowedDataset`. The last
    ``validation_fraction`` of a seeded permutation is held out. Weights
    are updated in place; the same seed, data and initial weights always
    give the same weights and report. With ``keep_best`` the weights of
    the epoch with the highest validation accuracy are restored at the end.
    """
    hyper = (hyper or TrainConfig()).validate()
    n = len(data)
    if n == 0:
        raise StructureError("cannot fit on an empty dataset")
    if data.in_grid and data.in_grid != model.in_grid:
        raise ConfigError(f"dataset in_grid {data.in_grid} != model in_grid {model.in_grid}")
    rng = np.random.default_rng(hyper.seed)
    order = rng.permutation(n)
    n_val = int(round(hyper.validation_fraction * n))
    if n_val >= n:
        n_val = n - 1
    val_idx, train_idx = order[n - n_val:], order[: n - n_val]
    X, y = data.inputs, data.target_classes
    opt = _Adam(hyper.learning_rate) if hyper.optimizer == "adam" else None
    report = TrainReport([], [], [], 0, hyper.seed)
    params = list(model.named_parameters())
    best = None
    for epoch in range(1, hyper.epochs + 1):
        perm = train_idx[rng.permutation(len(train_idx))]
        tot_loss = 0.0
        correct = 0
        for s in range(0, len(perm), hyper.batch_size):
            idx = np.sort(perm[s:s + hyper.batch_size])
            loss, grads, probs = model.loss_and_grads(X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            tot_loss += loss * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == y[idx]))
            if hyper.clip_norm > 0:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > hyper.clip_norm:
                    for g in grads.values():
                        g *= hyper.clip_norm / norm
            if opt is None:
                for name, arr in params:
                    arr -= hyper.learning_rate * grads[name]
            else:
                opt.step(params, grads)
        if not all(np.all(np.isfinite(arr)) for _, arr in params):
            raise TrainingDivergedError(epoch, float("nan"))
        report.loss.append(tot_loss / len(perm))
        report.train_accuracy.append(correct / len(perm))
        if n_val:
            report.val_accuracy.append(accuracy(model.predict(X[val_idx]), y[val_idx]))
        report.epochs_run = epoch
        if hyper.keep_best and (best is None or report.val_accuracy[-1] > best[0]):
            best = (report.val_accuracy[-1], epoch, [arr.copy() for _, arr in params])
        log.debug(
            "epoch %d loss %.4f acc %.4f val %s",
            epoch,
            report.loss[-1],
            report.train_accuracy[-1],
            report.val_accuracy[-1] if n_val else "-",
        )
    report.selected_epoch = report.epochs_run
    if best is not None:
        report.selected_epoch = best[1]
        for (_, arr), saved in zip(params, best[2]):
            arr[...] = saved
    return report


def gradient_check(model, window, target, epsilon=1e-5):
    """Max relative error between BPTT gradients and central differences.

    Every parameter entry is perturbed by ``+/- epsilon``. The relative
    error of one entry is ``|a - n| / max(|a| + |n|, 1e-8)``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    window = np.asarray(window)[None]
    target = np.asarray([int(target)])
    _, grads, _ = model.loss_and_grads(window, target)
    worst = 0.0
    for name, arr in model.named_parameters():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + epsilon
            up = _exact_loss(model, window, target)
            flat[j] = old - epsilon
            down = _exact_loss(model, window, target)
            flat[j] = old
            num = (up - down) / (2 * epsilon)
            rel = abs(g[j] - num) / max(abs(g[j]) + abs(num), 1e-8)
            worst = max(worst, rel)
    return worst


def _exact_loss(model, window, target):
    probs, _ = model._forward(model.scale_inputs(window), keep_cache=False)
    return cross_entropy(probs, target)
