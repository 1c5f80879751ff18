"""Group heatmap pixels into importance-ordered clusters.

All three schemes cluster the 1-D distribution of normalized relevance values;
pixel coordinates play no part. Clusters are ranked by mean relevance
(descending), ties going to the cluster with the smaller minimum pixel index.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .attribution import normalize_heatmap
from .errors import FormatError, InputError

__all__ = [
    "Cluster",
    "ClusterSelection",
    "SelectionConfig",
    "select",
    "select_bins",
    "select_kmeans",
    "select_meanshift",
    "kmeans_1d",
    "random_order_clusters",
    "selection_to_json",
    "selection_from_json",
    "save_selection",
    "load_selection",
    "SELECTION_METHODS",
]

SELECTION_METHODS = ("bins", "kmeans", "meanshift")

KMEANS_MAX_ITER = 300
MEANSHIFT_TOL = 1e-6
MEANSHIFT_MAX_ITER = 500


@dataclass(frozen=True, eq=False)
class Cluster:
    rank: int
    mean_relevance: float
    pixels: np.ndarray  # sorted row-major indices into H*W


@dataclass(frozen=True, eq=False)
class ClusterSelection:
    clusters: tuple
    method: str
    params: dict = field(default_factory=dict)
    heatmap_id: str = ""

    def __len__(self):
        return len(self.clusters)

    def cumulative(self, t):
        """Sorted union of the pixels in clusters ranked 1..t."""
        if t <= 0 or not self.clusters:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate([c.pixels for c in self.clusters[:t]]))

    def covered(self):
        return self.cumulative(len(self.clusters))


@dataclass(frozen=True)
class SelectionConfig:
    method: str = "meanshift"
    bins: int = 10
    kmeans_k: int = 10
    kmeans_seed: int = 0
    meanshift_bandwidth: object = "auto"
    meanshift_top: int = 10

    def __post_init__(self):
        if self.method not in SELECTION_METHODS:
            raise InputError(f"unknown selection method {self.method!r}")
        for name in ("bins", "kmeans_k", "meanshift_top"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"{name} must be >= 1")
        bw = self.meanshift_bandwidth
        if bw != "auto" and not float(bw) > 0:
            raise InputError("bandwidth must be positive or 'auto'")


def _ranked(values, groups, method, params, heatmap_id):
    """Order pixel groups by mean relevance desc, then by smallest pixel index."""
    keyed = []
    for pix in groups:
        if pix.size == 0:
            continue
        pix = np.sort(pix.astype(np.int64))
        keyed.append((-float(values[pix].mean()), int(pix[0]), pix))
    keyed.sort(key=lambda t: (t[0], t[1]))
    clusters = tuple(
        Cluster(rank, -neg_mean, pix) for rank, (neg_mean, _, pix) in enumerate(keyed, start=1)
    )
    return ClusterSelection(clusters, method, params, heatmap_id)


def _groups_from_labels(labels, n_labels):
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(n_labels + 1))
    return [order[bounds[i]:bounds[i + 1]] for i in range(n_labels)]


def _flat_values(h):
    if not h.normalized:
        h = normalize_heatmap(h)
    return h.values.ravel()


def select_bins(h, bins=10):
    """Equal-width bins over [0, 1]: value ``v`` goes to ``floor(v * bins)``, 1.0 to the top bin."""
    if int(bins) < 1:
        raise InputError("bins must be >= 1")
    bins = int(bins)
    v = _flat_values(h)
    idx = np.minimum(np.floor(v * bins).astype(np.int64), bins - 1)
    return _ranked(v, _groups_from_labels(idx, bins), "bins", {"bins": bins}, h.image_id)


def _kmeanspp(v, k, rng):
    n = v.size
    centers = np.empty(k)
    centers[0] = v[rng.integers(n)]
    d2 = (v - centers[0]) ** 2
    for j in range(1, k):
        cum = np.cumsum(d2)
        idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        centers[j] = v[min(idx, n - 1)]
        d2 = np.minimum(d2, (v - centers[j]) ** 2)
    return centers


def _repair_empty(v, labels, dist, k):
    counts = np.bincount(labels, minlength=k)
    for j in range(k):
        if counts[j]:
            continue
        # farthest point among clusters that can spare one
        far = int(np.argmax(np.where(counts[labels] > 1, dist, -1.0)))
        counts[labels[far]] -= 1
        labels[far] = j
        counts[j] = 1
        dist[far] = 0.0
    return labels


def kmeans_1d(v, centers, max_iter=KMEANS_MAX_ITER):
    """Lloyd iterations on 1-D data from the given initial centres.

    Stops when no assignment changes. An empty cluster is re-seeded with the
    point farthest from its current centre, taken from a cluster with at least
    two members. Returns the label array.
    """
    v = np.ascontiguousarray(v, dtype=np.float64)
    centers = np.array(centers, dtype=np.float64)
    k = centers.size
    labels, dist = kernels.assign_nearest(v, centers)
    labels = labels.copy()
    dist = dist.copy()
    for _ in range(max_iter):
        labels = _repair_empty(v, labels, dist, k)
        counts = np.bincount(labels, minlength=k)
        sums = np.bincount(labels, weights=v, minlength=k)
        centers = sums / counts
        new_labels, dist = kernels.assign_nearest(v, centers)
        dist = dist.copy()
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels.copy()
    return labels


def select_kmeans(h, k=10, seed=0):
    """Lloyd's k-means on pixel relevance values with seeded k-means++ initialisation."""
    v = _flat_values(h)
    if v.size == 0:
        raise InputError("cannot cluster an empty heatmap")
    k = int(k)
    if k < 1:
        raise InputError("k must be >= 1")
    params = {"k": k, "seed": int(seed)}
    uniq, inverse = np.unique(v, return_inverse=True)
    if k > uniq.size:
        warnings.warn(
            f"k={k} exceeds the {uniq.size} distinct heatmap values; "
            "returning one cluster per distinct value",
            stacklevel=2,
        )
        return _ranked(v, _groups_from_labels(inverse.ravel(), uniq.size), "kmeans", params, h.image_id)
    rng = np.random.default_rng(int(seed))
    labels = kmeans_1d(v, _kmeanspp(v, k, rng))
    return _ranked(v, _groups_from_labels(labels, k), "kmeans", params, h.image_id)


def _merge_modes(modes, radius):
    """Greedy merge of sorted modes: a mode joins the current group while within ``radius`` of its first mode."""
    order = np.argsort(modes, kind="stable")
    group = np.empty(modes.size, dtype=np.int64)
    g, anchor = 0, modes[order[0]]
    for i in order:
        if modes[i] - anchor >= radius:
            g += 1
            anchor = modes[i]
        group[i] = g
    return group, g + 1


def select_meanshift(h, bandwidth="auto", top=10):
    """Flat-kernel mean shift on relevance values, keeping the ``top`` best clusters.

    ``bandwidth="auto"`` uses a tenth of the value range. Every distinct value
    is shifted to its mode (shift < 1e-6 or 500 iterations); modes closer than
    half a bandwidth are merged.
    """
    v = _flat_values(h)
    if v.size == 0:
        raise InputError("cannot cluster an empty heatmap")
    top = int(top)
    if top < 1:
        raise InputError("top must be >= 1")
    if bandwidth == "auto":
        bw = (float(v.max()) - float(v.min())) / 10.0
    else:
        bw = float(bandwidth)
        if not bw > 0 or not np.isfinite(bw):
            raise InputError(f"bandwidth must be positive, got {bandwidth!r}")
    params = {"bandwidth": bandwidth, "bandwidth_used": bw, "top": top}
    seeds, inverse = np.unique(v, return_inverse=True)
    if bw == 0.0:
        # constant heatmap under "auto"
        groups = [np.arange(v.size)]
    else:
        vals = np.sort(v)
        prefix = np.concatenate(([0.0], np.cumsum(vals)))
        modes = kernels.meanshift_modes(vals, prefix, seeds, bw, MEANSHIFT_TOL, MEANSHIFT_MAX_ITER)
        seed_group, n_groups = _merge_modes(modes, bw / 2.0)
        groups = _groups_from_labels(seed_group[inverse.ravel()], n_groups)
    sel = _ranked(v, groups, "meanshift", params, h.image_id)
    return ClusterSelection(sel.clusters[:top], sel.method, sel.params, sel.heatmap_id)


def select(h, config):
    """Dispatch on ``config.method``."""
    if config.method == "bins":
        return select_bins(h, config.bins)
    if config.method == "kmeans":
        return select_kmeans(h, config.kmeans_k, config.kmeans_seed)
    return select_meanshift(h, config.meanshift_bandwidth, config.meanshift_top)


def random_order_clusters(selection, n_pixels, seed):
    """Size-matched random baseline: a random pixel permutation cut into chunks
    with the same sizes as ``selection``'s clusters, in rank order."""
    perm = np.random.default_rng(seed).permutation(n_pixels)
    out, start = [], 0
    for c in selection.clusters:
        out.append(np.sort(perm[start:start + c.pixels.size]))
        start += c.pixels.size
    return out


# --------------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------------


def selection_to_json(sel):
    doc = {
        "method": sel.method,
        "params": sel.params,
        "heatmap_id": sel.heatmap_id,
        "clusters": [
            {"rank": c.rank, "mean_relevance": c.mean_relevance, "pixels": c.pixels.tolist()}
            for c in sel.clusters
        ],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def selection_from_json(text):
    try:
        doc = json.loads(text)
        clusters = tuple(
            Cluster(int(c["rank"]), float(c["mean_relevance"]), np.asarray(c["pixels"], dtype=np.int64))
            for c in doc["clusters"]
        )
        return ClusterSelection(clusters, doc["method"], doc.get("params", {}), doc.get("heatmap_id", ""))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed cluster selection JSON: {exc}") from None


def save_selection(sel, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(selection_to_json(sel))


def load_selection(path):
    with open(path, encoding="utf-8") as fh:
        return selection_from_json(fh.read())
