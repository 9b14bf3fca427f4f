"""Datasets and client-side partitioning.

Sources: the IDX image format (big-endian magic + dims + raw bytes, pixels
scaled to [0,1]) and a synthetic Gaussian-blob task for desk-scale runs. The
partitioner hands each client a shard with a lambda-controlled bias toward one
major label: ceil(lambda*l) samples of that label plus uniform draws for the
rest. Draws are disjoint across clients while supply lasts; when a plan
oversubscribes the pool the remainder is drawn with replacement and the shard
is flagged.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .models import ROLE_CLEAN, ROLE_MALICIOUS

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049

# Guard against float artifacts like 0.99 * 100 = 99.00000000000001 rounding
# an extra sample into the major block.
_COUNT_EPS = 1e-9


class IdxFormatError(ValueError):
    pass


@dataclass
class DataShard:
    """One client's local training set."""

    features: np.ndarray
    labels: np.ndarray
    owner: int
    role: str = ROLE_CLEAN
    used_replacement: bool = False

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("features must be 2-D and labels 1-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features/labels length mismatch")
        if self.role not in (ROLE_CLEAN, ROLE_MALICIOUS):
            raise ValueError(f"unknown role {self.role!r}")

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class PartitionPlan:
    """How to split a pool among clients.

    lam is the major-label bias: each client's shard is ceil(lam * l) samples
    of its assigned major label plus uniform draws for the remainder. lam=0 is
    the homogeneous (iid) setting.
    """

    num_clients: int
    samples_per_client: int
    lam: float = 0.0
    major_label_assignment: tuple[int, ...] | None = None
    allow_replacement: bool = True

    def __post_init__(self):
        if self.num_clients < 1 or self.samples_per_client < 1:
            raise ValueError("need num_clients >= 1 and samples_per_client >= 1")
        if not 0.0 <= self.lam < 1.0:
            raise ValueError("lam must be in [0, 1)")
        if self.major_label_assignment is not None and len(self.major_label_assignment) != self.num_clients:
            raise ValueError("major_label_assignment length must equal num_clients")


def load_idx(images_path, labels_path):
    """Read an IDX image/label file pair.

    Returns (features, labels): features are float64 pixels scaled by 1/255
    and flattened to (n, rows*cols); labels are int64.
    """
    with open(images_path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise IdxFormatError(f"{images_path}: truncated header")
        magic, count, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGE_MAGIC:
            raise IdxFormatError(f"{images_path}: bad magic {magic}, expected {IDX_IMAGE_MAGIC}")
        raw = fh.read(count * rows * cols)
    if len(raw) != count * rows * cols:
        raise IdxFormatError(f"{images_path}: expected {count * rows * cols} pixel bytes, got {len(raw)}")
    features = np.frombuffer(raw, dtype=np.uint8).astype(np.float64).reshape(count, rows * cols) / 255.0

    with open(labels_path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise IdxFormatError(f"{labels_path}: truncated header")
        magic, label_count = struct.unpack(">II", head)
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(f"{labels_path}: bad magic {magic}, expected {IDX_LABEL_MAGIC}")
        raw = fh.read(label_count)
    if len(raw) != label_count:
        raise IdxFormatError(f"{labels_path}: expected {label_count} label bytes, got {len(raw)}")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if count != label_count:
        raise IdxFormatError(f"image count {count} != label count {label_count}")
    return features, labels


def _class_means(num_labels: int, input_dim: int, radius: float) -> np.ndarray:
    """Pairwise-distinct class centers: a circle in the first two dims, a line in 1-D."""
    means = np.zeros((num_labels, input_dim))
    if input_dim == 1:
        means[:, 0] = radius * np.arange(num_labels)
    else:
        angles = 2.0 * np.pi * np.arange(num_labels) / num_labels
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
    return means


def synth_gaussian(num_labels: int, input_dim: int, per_label_count: int, spread: float, seed,
                   radius: float = 3.0):
    """Isotropic Gaussian blobs, one per label, shuffled. Returns (features, labels)."""
    if num_labels < 2 or input_dim < 1 or per_label_count < 1:
        raise ValueError("need num_labels >= 2, input_dim >= 1, per_label_count >= 1")
    if spread < 0:
        raise ValueError("spread must be >= 0")
    rng = np.random.default_rng(seed)
    means = _class_means(num_labels, input_dim, radius)
    features = np.repeat(means, per_label_count, axis=0)
    if spread > 0:
        features = features + spread * rng.standard_normal(features.shape)
    labels = np.repeat(np.arange(num_labels, dtype=np.int64), per_label_count)
    order = rng.permutation(features.shape[0])
    return features[order], labels[order]


def major_count(lam: float, samples: int) -> int:
    return int(np.ceil(lam * samples - _COUNT_EPS)) if lam > 0 else 0


class _Pool:
    """Sequential consumer over a permuted index set, skipping taken entries."""

    def __init__(self, indices: np.ndarray, taken: np.ndarray):
        self.queue = indices
        self.pos = 0
        self.taken = taken

    def draw(self, count: int) -> np.ndarray:
        out = []
        while len(out) < count and self.pos < len(self.queue):
            idx = self.queue[self.pos]
            self.pos += 1
            if not self.taken[idx]:
                self.taken[idx] = True
                out.append(idx)
        return np.asarray(out, dtype=np.int64)


def partition(features: np.ndarray, labels: np.ndarray, plan: PartitionPlan, seed) -> list[DataShard]:
    """Split (features, labels) into per-client shards according to the plan.

    Major-label assignment defaults to round-robin over the labels present.
    Raises when the plan cannot be satisfied: a major label with no samples at
    all, or any shortfall while allow_replacement=False.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    total = labels.shape[0]
    if total == 0:
        raise ValueError("empty pool")
    demanded = plan.num_clients * plan.samples_per_client
    if not plan.allow_replacement and demanded > total:
        raise ValueError(f"plan demands {demanded} samples from a pool of {total} without replacement")

    rng = np.random.default_rng(seed)
    present = np.sort(np.unique(labels))
    if plan.major_label_assignment is not None:
        majors = list(plan.major_label_assignment)
        for m in majors:
            if m not in present:
                raise ValueError(f"major label {m} absent from the pool")
    else:
        majors = [int(present[i % len(present)]) for i in range(plan.num_clients)]

    taken = np.zeros(total, dtype=bool)
    label_pools = {int(lab): _Pool(rng.permutation(np.flatnonzero(labels == lab)), taken) for lab in present}
    global_pool = _Pool(rng.permutation(total), taken)

    shards = []
    for client in range(plan.num_clients):
        n_major = major_count(plan.lam, plan.samples_per_client)
        n_rand = plan.samples_per_client - n_major
        picked = []
        flagged = False

        if n_major > 0:
            pool = label_pools[majors[client]]
            got = pool.draw(n_major)
            picked.append(got)
            short = n_major - len(got)
            if short > 0:
                if not plan.allow_replacement:
                    raise ValueError(f"label {majors[client]} pool exhausted ({short} short) and replacement disabled")
                full = np.flatnonzero(labels == majors[client])
                picked.append(rng.choice(full, size=short, replace=True))
                flagged = True

        if n_rand > 0:
            got = global_pool.draw(n_rand)
            picked.append(got)
            short = n_rand - len(got)
            if short > 0:
                if not plan.allow_replacement:
                    raise ValueError(f"pool exhausted ({short} short) and replacement disabled")
                picked.append(rng.choice(total, size=short, replace=True))
                flagged = True

        idx = np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
        idx = idx[rng.permutation(len(idx))]
        shards.append(DataShard(features[idx], labels[idx], owner=client, used_replacement=flagged))
    return shards
