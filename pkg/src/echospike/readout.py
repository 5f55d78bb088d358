"""Low-cost supervised heads fitted on the frozen network's features.

All three heads consume time-summed spike counts (the non-decaying input
trace at a sample's last step):

  * GdHead: n_classes non-leaky, non-spiking integrators. The prediction
    is the softmax of the accumulated drive; the cross-entropy gradient
    (p - onehot) (outer) features is applied once per sample with
    adaptive-moment steps.
  * LsqHead: drop the softmax, use a squared loss, and the fit becomes a
    linear regression onto one-hot targets solved in closed form
    (minimum-norm least squares; ridge optional).
  * FewShotTable: per class and per layer, an L1-normalized reference
    spike histogram built from a handful of training samples. Prediction
    picks the class whose reference, used as the echo, yields the lowest
    summed fixation hinge loss over the sample's timesteps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CheckpointError
from .manifest_io import manifest_path_for, read_bundle, write_bundle
from .rule import normalize_counts

__all__ = [
    "GdHead",
    "LsqHead",
    "FewShotTable",
    "gd_gradient",
    "gd_update",
    "train_gd_head",
    "lsq_fit",
    "lsq_fit_matrix",
    "fewshot_build",
    "fewshot_scores",
    "fewshot_predict",
    "evaluate",
    "save_head",
    "load_head",
]

HEAD_FORMAT = "espp-head"


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def onehot(label: int, n_classes: int) -> np.ndarray:
    v = np.zeros(n_classes)
    v[label] = 1.0
    return v


# ---------------------------------------------------------------------------
# Gradient-descent head
# ---------------------------------------------------------------------------


@dataclass
class GdHead:
    """Linear integrator head with adaptive-moment updates.

    weights maps feature counts to class drives; m, v, and step are the
    moment accumulators and update counter.
    """

    weights: np.ndarray
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weights must be (n_classes, n_features)")
        if self.m is None:
            self.m = np.zeros_like(self.weights)
        if self.v is None:
            self.v = np.zeros_like(self.weights)

    @classmethod
    def zeros(cls, n_classes: int, n_features: int, learning_rate: float = 1e-3):
        return cls(np.zeros((n_classes, n_features)), learning_rate=learning_rate)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def logits(self, features) -> np.ndarray:
        return self.weights @ np.asarray(features, dtype=np.float64)

    def predict(self, features) -> int:
        return int(np.argmax(self.logits(features)))


def gd_gradient(head: GdHead, features, label: int):
    """Cross-entropy gradient for one sample.

    Returns (gradient, p) with gradient = -(onehot - p) (outer) features,
    where p is the softmax of the head's drive at the sample's last step.
    """
    f = np.asarray(features, dtype=np.float64)
    p = softmax(head.weights @ f)
    grad = -np.outer(onehot(label, head.n_classes) - p, f)
    return grad, p


def gd_update(head: GdHead, features, label: int) -> GdHead:
    """Apply one adaptive-moment step on the cross-entropy gradient.

    Called once per sample. Moment accumulators and the step counter
    advance even when the gradient is exactly zero.
    """
    if not 0 <= label < head.n_classes:
        raise ValueError(f"label {label} outside [0, {head.n_classes})")
    grad, _ = gd_gradient(head, features, label)
    head.step += 1
    head.m = head.beta1 * head.m + (1.0 - head.beta1) * grad
    head.v = head.beta2 * head.v + (1.0 - head.beta2) * grad * grad
    m_hat = head.m / (1.0 - head.beta1 ** head.step)
    v_hat = head.v / (1.0 - head.beta2 ** head.step)
    head.weights = head.weights - head.learning_rate * m_hat / (np.sqrt(v_hat) + head.eps)
    return head


def train_gd_head(features: np.ndarray, labels, n_classes: int, epochs: int = 1,
                  learning_rate: float = 1e-3, rng=None) -> GdHead:
    """Fit a GdHead over shuffled per-sample updates.

    Args:
        features: (n_samples, n_features) count matrix.
        labels: Integer labels per sample.
        n_classes: Number of classes.
        epochs: Passes over the data.
        learning_rate: Adaptive-moment step size.
        rng: Seeded generator for the shuffle; order is deterministic
            given the generator state.
    """
    F = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    head = GdHead.zeros(n_classes, F.shape[1], learning_rate=learning_rate)
    rng = np.random.default_rng(0) if rng is None else rng
    for _ in range(epochs):
        for i in rng.permutation(F.shape[0]):
            gd_update(head, F[i], int(y[i]))
    return head


# ---------------------------------------------------------------------------
# Closed-form head
# ---------------------------------------------------------------------------


@dataclass
class LsqHead:
    """Linear map fitted to one-hot targets in closed form."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def logits(self, features) -> np.ndarray:
        return self.weights @ np.asarray(features, dtype=np.float64)

    def predict(self, features) -> int:
        return int(np.argmax(self.logits(features)))


def lsq_fit_matrix(features: np.ndarray, targets: np.ndarray,
                   ridge: float = 0.0) -> np.ndarray:
    """Solve min ||F W^T - Y||^2 for arbitrary real targets Y.

    Returns the minimum-norm least-squares W (n_targets, n_features), which
    also covers rank-deficient feature matrices. With ridge > 0 the
    regularized normal equations (F^T F + ridge * I) W^T = F^T Y are solved
    instead.
    """
    F = np.asarray(features, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if F.ndim != 2 or Y.ndim != 2 or F.shape[0] != Y.shape[0]:
        raise ValueError(f"features {F.shape} and targets {Y.shape} do not align")
    if F.shape[0] < 1:
        raise ValueError("need at least one sample")
    if ridge > 0.0:
        gram = F.T @ F + ridge * np.eye(F.shape[1])
        wt = scipy.linalg.solve(gram, F.T @ Y, assume_a="pos")
    else:
        wt, _, _, _ = scipy.linalg.lstsq(F, Y)
    return wt.T


def lsq_fit(features: np.ndarray, labels, n_classes: int | None = None,
            ridge: float = 0.0) -> LsqHead:
    """Fit the closed-form head onto one-hot targets built from `labels`."""
    y = np.asarray(labels, dtype=np.int64)
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != y.shape[0]:
        raise ValueError(f"features {F.shape} and labels {y.shape} do not align")
    k = int(y.max()) + 1 if n_classes is None else n_classes
    Y = np.zeros((F.shape[0], k))
    Y[np.arange(F.shape[0]), y] = 1.0
    return LsqHead(lsq_fit_matrix(F, Y, ridge=ridge))


# ---------------------------------------------------------------------------
# Few-shot head
# ---------------------------------------------------------------------------


@dataclass
class FewShotTable:
    """Per-layer, per-class reference histograms.

    references[layer] is an (n_classes, layer_size) matrix of L1-normalized
    summed spike counts; a class whose support samples produced no spikes
    in a layer has an all-zero row (kept in `dead_classes` for reporting).
    """

    references: list
    n_classes: int
    dead_classes: list = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.references)


def fewshot_build(net, dataset, shots: int = 20, rng=None) -> FewShotTable:
    """Build reference vectors from `shots` random samples per class.

    Spikes of each layer are summed over all timesteps of all selected
    samples of a class, then L1-normalized (the same normalization the echo
    uses). Classes with fewer than `shots` samples use all they have, with
    a warning; classes with zero total spikes in a layer keep a zero row
    and are flagged.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    labels = dataset.labels()
    sums = [np.zeros((dataset.n_classes, size)) for size in net.layer_sizes]
    for c in range(dataset.n_classes):
        idx = np.nonzero(labels == c)[0]
        if idx.size == 0:
            warnings.warn(f"class {c} has no samples; reference stays zero")
            continue
        if idx.size < shots:
            warnings.warn(
                f"class {c} has only {idx.size} samples, fewer than {shots} shots"
            )
        take = rng.choice(idx, size=min(shots, idx.size), replace=False)
        for i in take:
            records = net.run_record(dataset.samples[int(i)])
            for li, rec in enumerate(records):
                sums[li][c] += rec.sum(axis=0)
    references = []
    dead = set()
    for li, mat in enumerate(sums):
        ref = np.zeros_like(mat)
        for c in range(dataset.n_classes):
            ref[c] = normalize_counts(mat[c])
            if mat[c].sum() == 0:
                dead.add(c)
        references.append(ref)
    if dead:
        warnings.warn(f"classes with zero spikes in some layer: {sorted(dead)}")
    return FewShotTable(references, dataset.n_classes, sorted(dead))


def fewshot_scores(net, table: FewShotTable, raster) -> np.ndarray:
    """Summed fixation hinge loss per (layer, class) for one sample.

    For each timestep the margin uses the live input activity of the step:
    score[l, c] = sum_t max(0, c_pos * i_bar[t] - <s[t, l], ref[l, c]>).
    Lower is closer.
    """
    records = net.run_record(raster)
    rows = np.asarray(raster.spikes, dtype=np.float64)
    i_bar = rows.mean(axis=1)
    scores = np.zeros((net.n_layers, table.n_classes))
    for li, rec in enumerate(records):
        c_pos = net.spec.layers[li].config.c_pos
        sims = rec @ table.references[li].T  # (steps, n_classes)
        hinge = np.maximum(0.0, c_pos * i_bar[:, None] - sims)
        scores[li] = hinge.sum(axis=0)
    return scores


def fewshot_predict(net, table: FewShotTable, raster, layer: int | None = None,
                    combined: bool = False) -> int:
    """Class with the lowest score; ties break to the lowest class index.

    Args:
        layer: 1-based layer index to score (defaults to the last layer).
        combined: Sum the scores of every layer instead.
    """
    scores = fewshot_scores(net, table, raster)
    if combined:
        per_class = scores.sum(axis=0)
    else:
        li = net.n_layers - 1 if layer is None else layer - 1
        if not 0 <= li < net.n_layers:
            raise ValueError(f"layer {layer} outside [1, {net.n_layers}]")
        per_class = scores[li]
    return int(np.argmin(per_class))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate(head, net, dataset, features: np.ndarray | None = None) -> dict:
    """Top-1 accuracy of a fitted head on a dataset.

    For the linear heads the prediction is the argmax of the drive at the
    sample's last step (softmax is monotone, so the GdHead prediction
    equals the argmax of its softmax). For a FewShotTable the report
    carries one accuracy per layer plus the combined score.

    Args:
        features: Optional precomputed (n_samples, feature_dim) matrix for
            the linear heads, to avoid rerunning the network.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    labels = dataset.labels()
    if isinstance(head, FewShotTable):
        per_layer = np.zeros(net.n_layers)
        combined_hits = 0
        for i, s in enumerate(dataset.samples):
            scores = fewshot_scores(net, head, s)
            for li in range(net.n_layers):
                per_layer[li] += int(np.argmin(scores[li])) == labels[i]
            combined_hits += int(np.argmin(scores.sum(axis=0))) == labels[i]
        n = len(dataset)
        return {
            "head": "fewshot",
            "per_layer": {li + 1: per_layer[li] / n for li in range(net.n_layers)},
            "combined": combined_hits / n,
            "n": n,
        }
    if features is None:
        features = np.stack([net.collect_features(s) for s in dataset.samples])
    preds = np.argmax(features @ head.weights.T, axis=1)
    kind = "gd" if isinstance(head, GdHead) else "lsq"
    return {
        "head": kind,
        "layer_scope": net.spec.readout_wiring,
        "accuracy": float(np.mean(preds == labels)),
        "n": len(dataset),
    }


# ---------------------------------------------------------------------------
# Head checkpoints (same manifest + blob convention as the network)
# ---------------------------------------------------------------------------


def save_head(stem, head, extra: dict | None = None):
    """Write a head to `<stem>.json` + `<stem>.bin`."""
    manifest = {"format": HEAD_FORMAT, "version": 1}
    if extra:
        manifest.update(extra)
    if isinstance(head, GdHead):
        manifest["head_type"] = "gd"
        manifest["gd"] = {
            "learning_rate": head.learning_rate,
            "beta1": head.beta1,
            "beta2": head.beta2,
            "eps": head.eps,
            "step": head.step,
        }
        matrices = {"weights": head.weights, "adam.m": head.m, "adam.v": head.v}
    elif isinstance(head, LsqHead):
        manifest["head_type"] = "lsq"
        matrices = {"weights": head.weights}
    elif isinstance(head, FewShotTable):
        manifest["head_type"] = "fewshot"
        manifest["fewshot"] = {
            "n_classes": head.n_classes,
            "dead_classes": list(head.dead_classes),
            "n_layers": head.n_layers,
        }
        matrices = {
            f"layer{li + 1}.references": ref for li, ref in enumerate(head.references)
        }
    else:
        raise TypeError(f"cannot serialize head of type {type(head).__name__}")
    return write_bundle(stem, manifest, matrices)


def load_head(path):
    """Load a head bundle; returns (head, manifest)."""
    manifest, matrices = read_bundle(manifest_path_for(path))
    if manifest.get("format") != HEAD_FORMAT:
        raise CheckpointError(
            f"manifest format {manifest.get('format')!r} is not {HEAD_FORMAT!r}"
        )
    kind = manifest.get("head_type")
    if kind == "gd":
        meta = manifest["gd"]
        head = GdHead(
            matrices["weights"],
            learning_rate=meta["learning_rate"],
            beta1=meta["beta1"],
            beta2=meta["beta2"],
            eps=meta["eps"],
            m=matrices["adam.m"],
            v=matrices["adam.v"],
            step=meta["step"],
        )
    elif kind == "lsq":
        head = LsqHead(matrices["weights"])
    elif kind == "fewshot":
        meta = manifest["fewshot"]
        refs = [
            matrices[f"layer{li + 1}.references"] for li in range(meta["n_layers"])
        ]
        head = FewShotTable(refs, meta["n_classes"], list(meta["dead_classes"]))
    else:
        raise CheckpointError(f"unknown head_type {kind!r}")
    return head, manifest
