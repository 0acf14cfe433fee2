"""Toy end-to-end segmentation harness: a small dilated encoder, one of three
decoders (DUC / bilinear / transposed conv), summed pixelwise cross-entropy,
SGD with momentum and polynomial learning-rate decay, and IoU evaluation.

The network is deliberately tiny (channel widths <= 32, a handful of layers)
so that a full training run takes seconds on a CPU while still exercising the
strided-stem + dilated-body + learned-decoder structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conv import ConvLayer, ConvSpec, conv2d_backward, conv2d_forward, same_padding
from .data import IGNORE_LABEL, SegSample
from .hdc import DilationSchedule
from .tensor import Rng, Tensor, load_tensor, save_tensor
from .upsample import (
    DucSpec,
    TransposedConvLayer,
    TransposedConvSpec,
    bilinear_backward,
    bilinear_upsample,
    duc_backward,
    duc_forward,
    transposed_conv_backward,
    transposed_conv_forward,
)

DECODERS = ("duc", "bilinear", "deconv")


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; carries where and at what lr."""

    def __init__(self, iteration: int, lr: float):
        super().__init__(f"non-finite loss at iteration {iteration} (lr={lr!r})")
        self.iteration = iteration
        self.lr = lr


@dataclass(frozen=True)
class SgdConfig:
    base_lr: float = 2.5e-4
    power: float = 0.9
    max_iter: int = 1000
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch: int = 1
    seed: int = 0
    mean_loss: bool = False  # summed pixel loss by default; mean is opt-in

    def __post_init__(self):
        if self.base_lr < 0:
            raise ValueError("base_lr must be >= 0 (0 freezes the parameters)")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.power <= 0:
            raise ValueError("power must be > 0")
        if self.max_iter < 0 or self.batch < 1:
            raise ValueError("max_iter must be >= 0 and batch >= 1")


def poly_lr(iteration: int, cfg: SgdConfig) -> float:
    """base_lr * (1 - iter/max_iter) ** power."""
    if iteration < 0 or iteration > cfg.max_iter:
        raise ValueError(f"iteration {iteration} outside 0..{cfg.max_iter}")
    return cfg.base_lr * (1.0 - iteration / cfg.max_iter) ** cfg.power


def sgd_step(params: dict, grads: dict, state: dict, cfg: SgdConfig,
             iteration: int) -> None:
    """In-place momentum update: v <- m*v - lr*(g + wd*p); p <- p + v."""
    lr = poly_lr(iteration, cfg)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        v = state.setdefault(name, np.zeros_like(p))
        v *= cfg.momentum
        v -= lr * (g + cfg.weight_decay * p)
        p += v


def softmax_ce_loss(logits: Tensor, labels: np.ndarray, mean: bool = False):
    """Pixelwise cross-entropy, summed over every non-ignored pixel.

    labels is (n, H, W) or (H, W) with values in 0..L-1 or IGNORE_LABEL.
    Returns (loss, grad_logits); the gradient is softmax minus one-hot at
    each contributing pixel (scaled by 1/count when mean=True).
    """
    z = logits.data
    n, L, h, w = logits.shape
    lab = np.asarray(labels, dtype=np.int64)
    if lab.ndim == 2:
        lab = lab[None, :, :]
    if lab.shape != (n, h, w):
        raise ValueError(f"labels shape {lab.shape} != {(n, h, w)}")
    valid = lab != IGNORE_LABEL
    if np.any((lab < 0) | ((lab >= L) & valid)):
        raise ValueError(f"label values outside 0..{L-1}")

    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    ez = np.exp(shifted)
    norm = ez.sum(axis=1, keepdims=True)
    soft = ez / norm
    log_soft = shifted - np.log(norm)  # stable even when soft underflows to 0

    grad = soft.copy()
    ni, yi, xi = np.nonzero(valid)
    li = lab[ni, yi, xi]
    loss = float(-log_soft[ni, li, yi, xi].sum())
    grad[ni, li, yi, xi] -= 1.0
    grad[~valid[:, None, :, :].repeat(L, axis=1)] = 0.0
    if mean:
        count = max(len(ni), 1)
        loss /= count
        grad /= count
    if len(ni) == 0:
        loss = 0.0
    return loss, Tensor(grad)


def majority_downsample(labels: np.ndarray, cell: int) -> np.ndarray:
    """Reduce each cell x cell block to its most frequent label (ignored
    pixels do not vote; ties go to the smaller label; all-ignored blocks
    stay ignored)."""
    if cell == 1:
        return labels.copy()
    h, w = labels.shape
    if h % cell or w % cell:
        raise ValueError(f"label grid {h}x{w} not divisible by cell {cell}")
    out = np.full((h // cell, w // cell), IGNORE_LABEL, dtype=np.int64)
    for by in range(h // cell):
        for bx in range(w // cell):
            block = labels[by * cell : (by + 1) * cell, bx * cell : (bx + 1) * cell]
            votes = block[block != IGNORE_LABEL]
            if votes.size:
                out[by, bx] = np.bincount(votes).argmax()
    return out


# ---------------------------------------------------------------------------
# the toy network
# ---------------------------------------------------------------------------


def _deconv_factors(d: int) -> list[int]:
    """Factorize the upsampling as x2 stages first, then whatever remains."""
    if d == 2:
        return [2]
    if d % 2:
        raise ValueError(f"deconv decoder needs an even downsampling factor, got {d}")
    return [2, d // 2]


class ToyNet:
    """Strided stem down to factor d, dilated body carrying a rate schedule,
    and one of the three decoders producing (n, L, H, W) logits.

    Inputs are centered and rescaled by fixed constants before the first
    layer (the synthetic images live in roughly 0..1; tanh layers train far
    better on a zero-mean signal)."""

    INPUT_OFFSET = 0.3
    INPUT_SCALE = 2.0

    def __init__(self, d: int, schedule: DilationSchedule, decoder: str,
                 classes: int, width: int, cell: int, img_channels: int,
                 encoder_layers, decoder_layers):
        if decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}")
        if cell != 1 and decoder != "duc":
            raise ValueError("cell > 1 only applies to the duc decoder")
        self.d = d
        self.schedule = schedule
        self.decoder = decoder
        self.classes = classes
        self.width = width
        self.cell = cell
        self.img_channels = img_channels
        self.encoder_layers = encoder_layers      # list[ConvLayer]
        self.decoder_layers = decoder_layers      # ConvLayer(s) or TransposedConvLayer(s)
        self.duc_spec = DucSpec(d=d, classes=classes, cell=cell) if decoder == "duc" else None

    @staticmethod
    def build(d: int, schedule: DilationSchedule, decoder: str, classes: int,
              seed: int, width: int = 8, cell: int = 1,
              img_channels: int = 1) -> "ToyNet":
        if d not in (2, 4):
            raise ValueError(f"downsampling factor must be 2 or 4, got {d}")
        rng = Rng(seed)
        enc = []
        c_prev = img_channels
        stem_widths = [width] if d == 2 else [width, 2 * width]
        for cw in stem_widths:
            spec = ConvSpec(k=3, r=1, stride=2, c_in=c_prev, c_out=cw, pad=1)
            enc.append(ConvLayer.initialized(spec, rng))
            c_prev = cw
        for rate in schedule.rates:
            spec = ConvSpec(k=3, r=rate, stride=1, c_in=c_prev, c_out=c_prev,
                            pad=same_padding(3, rate))
            enc.append(ConvLayer.initialized(spec, rng))

        dec = []
        if decoder == "duc":
            duc = DucSpec(d=d, classes=classes, cell=cell)
            spec = ConvSpec(k=3, r=1, stride=1, c_in=c_prev,
                            c_out=duc.conv_channels, pad=1)
            dec.append(ConvLayer.initialized(spec, rng))
        elif decoder == "bilinear":
            spec = ConvSpec(k=3, r=1, stride=1, c_in=c_prev, c_out=classes, pad=1)
            dec.append(ConvLayer.initialized(spec, rng))
        else:
            factors = _deconv_factors(d)
            for i, f in enumerate(factors):
                last = i == len(factors) - 1
                tspec = TransposedConvSpec(k=2 * f, stride=f, c_in=c_prev,
                                           c_out=classes if last else c_prev,
                                           pad=f // 2)
                dec.append(TransposedConvLayer.initialized(tspec, rng))
        return ToyNet(d, schedule, decoder, classes, width, cell, img_channels,
                      enc, dec)

    # -- parameters ---------------------------------------------------------

    def params(self) -> dict:
        """Live views of every learnable array, keyed by layer name."""
        out = {}
        for i, layer in enumerate(self.encoder_layers):
            out[f"enc{i}.w"] = layer.weights.data
            out[f"enc{i}.b"] = layer.bias
        for i, layer in enumerate(self.decoder_layers):
            out[f"dec{i}.w"] = layer.weights.data
            out[f"dec{i}.b"] = layer.bias
        return out

    # -- forward / backward -------------------------------------------------

    def forward(self, x: Tensor):
        """Returns (logits, cache); tanh after every layer except the last."""
        cache = []
        cur = Tensor((x.data - self.INPUT_OFFSET) * self.INPUT_SCALE)
        for layer in self.encoder_layers:
            pre = conv2d_forward(cur, layer)
            act = Tensor(np.tanh(pre.data))
            cache.append(("conv", layer, cur, act))
            cur = act
        if self.decoder == "duc":
            layer = self.decoder_layers[0]
            out = duc_forward(cur, layer, self.duc_spec)
            cache.append(("duc", layer, cur, None))
            cur = out
        elif self.decoder == "bilinear":
            layer = self.decoder_layers[0]
            pre = conv2d_forward(cur, layer)
            cache.append(("bilinear_conv", layer, cur, None))
            out = bilinear_upsample(pre, self.d)
            cache.append(("bilinear", self.d, pre, None))
            cur = out
        else:
            for i, layer in enumerate(self.decoder_layers):
                pre = transposed_conv_forward(cur, layer)
                if i == len(self.decoder_layers) - 1:
                    cache.append(("tconv", layer, cur, None))
                    cur = pre
                else:
                    act = Tensor(np.tanh(pre.data))
                    cache.append(("tconv_act", layer, cur, act))
                    cur = act
        return cur, cache

    def backward(self, cache, grad_logits: Tensor) -> dict:
        grads = {}
        g = grad_logits
        n_enc = len(self.encoder_layers)
        dec_i = len(self.decoder_layers)
        for entry in reversed(cache):
            kind, obj, inp, act = entry
            if kind == "conv":
                g = Tensor(g.data * (1.0 - act.data * act.data))
                gx, gw, gb = conv2d_backward(inp, obj, g)
                n_enc -= 1
                grads[f"enc{n_enc}.w"] = gw.data
                grads[f"enc{n_enc}.b"] = gb
                g = gx
            elif kind == "duc":
                gx, gw, gb = duc_backward(inp, obj, self.duc_spec, g)
                dec_i -= 1
                grads[f"dec{dec_i}.w"] = gw.data
                grads[f"dec{dec_i}.b"] = gb
                g = gx
            elif kind == "bilinear":
                g = bilinear_backward(g, inp.shape[2:], obj)
            elif kind == "bilinear_conv":
                gx, gw, gb = conv2d_backward(inp, obj, g)
                dec_i -= 1
                grads[f"dec{dec_i}.w"] = gw.data
                grads[f"dec{dec_i}.b"] = gb
                g = gx
            elif kind in ("tconv", "tconv_act"):
                if kind == "tconv_act":
                    g = Tensor(g.data * (1.0 - act.data * act.data))
                gx, gw, gb = transposed_conv_backward(inp, obj, g)
                dec_i -= 1
                grads[f"dec{dec_i}.w"] = gw.data
                grads[f"dec{dec_i}.b"] = gb
                g = gx
            else:  # pragma: no cover - construction guarantees known kinds
                raise RuntimeError(f"unknown cache entry {kind}")
        return grads

    def predict(self, image: Tensor) -> np.ndarray:
        """Argmax label grid at full input resolution (cell blocks repeated)."""
        logits, _ = self.forward(image)
        pred = logits.data.argmax(axis=1)[0]
        if self.cell > 1:
            pred = np.repeat(np.repeat(pred, self.cell, axis=0), self.cell, axis=1)
        return pred.astype(np.int64)


# ---------------------------------------------------------------------------
# training loop and evaluation
# ---------------------------------------------------------------------------


def _stack_batch(samples) -> tuple[Tensor, np.ndarray]:
    imgs = np.concatenate([s.image.data for s in samples], axis=0)
    labs = np.stack([s.labels for s in samples], axis=0)
    return Tensor(imgs), labs


def train(net: ToyNet, data, cfg: SgdConfig):
    """SGD over randomly drawn full-image batches; returns the loss curve."""
    if not data:
        raise ValueError("training data must be nonempty")
    rng = Rng(cfg.seed)
    params = net.params()
    state = {}
    curve = []
    for it in range(cfg.max_iter):
        batch = [data[rng.randint(len(data))] for _ in range(cfg.batch)]
        images, labels = _stack_batch(batch)
        if net.cell > 1:
            labels = np.stack(
                [majority_downsample(lab, net.cell) for lab in labels], axis=0
            )
        logits, cache = net.forward(images)
        loss, grad = softmax_ce_loss(logits, labels, mean=cfg.mean_loss)
        if not np.isfinite(loss):
            raise TrainingDiverged(it, poly_lr(it, cfg))
        grads = net.backward(cache, grad)
        sgd_step(params, grads, state, cfg, it)
        curve.append(loss)
    return curve


def _confusion(preds: np.ndarray, labels: np.ndarray, classes: int):
    """Per-class (tp, fp, fn) counts, skipping ignored pixels."""
    valid = labels != IGNORE_LABEL
    p, t = preds[valid], labels[valid]
    tp = np.zeros(classes, dtype=np.int64)
    fp = np.zeros(classes, dtype=np.int64)
    fn = np.zeros(classes, dtype=np.int64)
    for c in range(classes):
        tp[c] = int(np.sum((p == c) & (t == c)))
        fp[c] = int(np.sum((p == c) & (t != c)))
        fn[c] = int(np.sum((p != c) & (t == c)))
    return tp, fp, fn


def miou(preds: np.ndarray, labels: np.ndarray, classes: int):
    """Per-class IoU and their mean; classes absent from both prediction and
    label are reported as nan and excluded from the mean."""
    if preds.shape != labels.shape:
        raise ValueError(f"shape mismatch {preds.shape} vs {labels.shape}")
    tp, fp, fn = _confusion(preds, labels, classes)
    per_class = []
    included = []
    for c in range(classes):
        denom = tp[c] + fp[c] + fn[c]
        if denom == 0:
            per_class.append(float("nan"))
        else:
            iou = tp[c] / denom
            per_class.append(float(iou))
            included.append(iou)
    mean = float(np.mean(included)) if included else float("nan")
    return per_class, mean


def evaluate(net: ToyNet, samples, oracle: bool = False):
    """Dataset IoU with counts aggregated over all samples. With oracle=True
    the labels are scored against themselves (pipeline sanity mode)."""
    classes = net.classes
    tp = np.zeros(classes, dtype=np.int64)
    fp = np.zeros(classes, dtype=np.int64)
    fn = np.zeros(classes, dtype=np.int64)
    for s in samples:
        pred = s.labels.copy() if oracle else net.predict(s.image)
        a, b, c = _confusion(pred, s.labels, classes)
        tp += a
        fp += b
        fn += c
    per_class = []
    included = []
    for c in range(classes):
        denom = tp[c] + fp[c] + fn[c]
        if denom == 0:
            per_class.append(float("nan"))
        else:
            iou = tp[c] / denom
            per_class.append(float(iou))
            included.append(iou)
    mean = float(np.mean(included)) if included else float("nan")
    return per_class, mean


# ---------------------------------------------------------------------------
# net serialization: JSON topology plus one binary tensor file per weight
# ---------------------------------------------------------------------------


def save_net(dirpath, net: ToyNet) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    topo = {
        "d": net.d,
        "decoder": net.decoder,
        "classes": net.classes,
        "width": net.width,
        "cell": net.cell,
        "img_channels": net.img_channels,
        "schedule": {"rates": list(net.schedule.rates), "kernel": net.schedule.kernel},
        "encoder": [], "decoder_layers": [],
    }
    for i, layer in enumerate(net.encoder_layers):
        s = layer.spec
        topo["encoder"].append({
            "k": s.k, "r": s.r, "stride": s.stride, "c_in": s.c_in,
            "c_out": s.c_out, "pad": s.pad,
            "bias": [float(v) for v in layer.bias],
        })
        save_tensor(d / f"enc{i}.bin", layer.weights)
    for i, layer in enumerate(net.decoder_layers):
        s = layer.spec
        entry = {
            "k": s.k, "stride": s.stride, "c_in": s.c_in, "c_out": s.c_out,
            "pad": s.pad, "bias": [float(v) for v in layer.bias],
            "transposed": isinstance(layer, TransposedConvLayer),
        }
        if not entry["transposed"]:
            entry["r"] = s.r
        topo["decoder_layers"].append(entry)
        save_tensor(d / f"dec{i}.bin", layer.weights)
    (d / "net.json").write_text(
        json.dumps(topo, sort_keys=True, indent=1) + "\n", encoding="ascii"
    )


def load_net(dirpath) -> ToyNet:
    d = Path(dirpath)
    topo = json.loads((d / "net.json").read_text(encoding="ascii"))
    schedule = DilationSchedule(rates=tuple(topo["schedule"]["rates"]),
                                kernel=topo["schedule"]["kernel"])
    enc = []
    for i, meta in enumerate(topo["encoder"]):
        spec = ConvSpec(k=meta["k"], r=meta["r"], stride=meta["stride"],
                        c_in=meta["c_in"], c_out=meta["c_out"], pad=meta["pad"])
        enc.append(ConvLayer(spec, load_tensor(d / f"enc{i}.bin"),
                             np.asarray(meta["bias"], dtype=np.float64)))
    dec = []
    for i, meta in enumerate(topo["decoder_layers"]):
        w = load_tensor(d / f"dec{i}.bin")
        b = np.asarray(meta["bias"], dtype=np.float64)
        if meta["transposed"]:
            tspec = TransposedConvSpec(k=meta["k"], stride=meta["stride"],
                                       c_in=meta["c_in"], c_out=meta["c_out"],
                                       pad=meta["pad"])
            dec.append(TransposedConvLayer(tspec, w, b))
        else:
            spec = ConvSpec(k=meta["k"], r=meta["r"], stride=meta["stride"],
                            c_in=meta["c_in"], c_out=meta["c_out"],
                            pad=meta["pad"])
            dec.append(ConvLayer(spec, w, b))
    return ToyNet(topo["d"], schedule, topo["decoder"], topo["classes"],
                  topo["width"], topo["cell"], topo["img_channels"], enc, dec)
