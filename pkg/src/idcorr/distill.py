"""Identity-guided self-distillation at desk scale.

The loss engine works on head outputs (logits). For every identity set, each
teacher global view of every image is a target for every student view of
every image of the same person, except the identical view. A tiny numpy MLP
stands in for the encoder in :func:`toy_train`.

Defaults for the temperatures and momenta are the usual DINO values.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import EmptyIdentitySet, EmptySet, NonFiniteLogits, ShapeMismatch

TAU_S = 0.1
TAU_T = 0.04
EMA_MOMENTUM = 0.996
CENTER_MOMENTUM = 0.9
CURRICULUM = ((0.40, 4), (0.60, 6), (0.80, 8))
INITIAL_NID = 2


@dataclass
class ViewSet:
    """Head outputs for the augmented views of one image.

    ``teacher_global`` holds the teacher's outputs for the two global views;
    when omitted the student outputs are used for both roles.
    """

    image_id: int
    global_views: np.ndarray  # (2, K)
    local_views: np.ndarray  # (L, K)
    teacher_global: np.ndarray | None = None

    def __post_init__(self):
        self.global_views = np.asarray(self.global_views, dtype=np.float64)
        if self.global_views.ndim != 2 or self.global_views.shape[0] != 2:
            raise ShapeMismatch("a view set needs exactly two global views")
        k = self.global_views.shape[1]
        self.local_views = np.asarray(self.local_views, dtype=np.float64).reshape(-1, k)
        if self.teacher_global is not None:
            self.teacher_global = np.asarray(self.teacher_global, dtype=np.float64)
            if self.teacher_global.shape != self.global_views.shape:
                raise ShapeMismatch("teacher outputs must match the global views")

    @property
    def student_views(self) -> np.ndarray:
        """All student outputs; rows 0 and 1 are the global views."""
        return np.concatenate([self.global_views, self.local_views])

    @property
    def teacher_views(self) -> np.ndarray:
        return self.global_views if self.teacher_global is None else self.teacher_global


@dataclass
class IdentitySet:
    person_id: int
    views: list[ViewSet]


@dataclass
class DistillState:
    student_params: np.ndarray
    teacher_params: np.ndarray
    center: np.ndarray
    tau_s: float = TAU_S
    tau_t: float = TAU_T
    ema_momentum: float = EMA_MOMENTUM
    center_momentum: float = CENTER_MOMENTUM

    def __post_init__(self):
        if np.shape(self.student_params) != np.shape(self.teacher_params):
            raise ShapeMismatch("student and teacher parameters differ in shape")
        if self.tau_s <= 0 or self.tau_t <= 0:
            raise ValueError("temperatures must be positive")


def sharpen(logits, tau: float, center=None) -> np.ndarray:
    """Softmax of ``(logits - center) / tau`` along the last axis."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteLogits("logits contain NaN or Inf")
    if center is not None:
        z = z - np.asarray(center, dtype=np.float64)
    z = z / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_sharpen(logits, tau: float) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(p_t, p_s) -> float:
    p_t = np.asarray(p_t, dtype=np.float64)
    p_s = np.asarray(p_s, dtype=np.float64)
    return float(-(p_t * np.log(p_s)).sum())


def loss_gradient_wrt_student_logits(p_t, student_logits, tau_s: float) -> np.ndarray:
    """d/dz of ``cross_entropy(p_t, sharpen(z, tau_s))``."""
    return (sharpen(student_logits, tau_s) - np.asarray(p_t, dtype=np.float64)) / tau_s


def pair_count(n_id: int, n_local: int) -> int:
    return n_id * 2 * (2 + n_local - 1) + n_id * (n_id - 1) * 2 * (2 + n_local)


def _loss_terms(batch: IdentitySet, state: DistillState):
    if not batch.views:
        raise EmptyIdentitySet(f"identity set {batch.person_id} has no images")
    teacher = [sharpen(v.teacher_views, state.tau_t, state.center) for v in batch.views]
    student_logits = [v.student_views for v in batch.views]
    student_logp = [log_sharpen(z, state.tau_s) for z in student_logits]
    return teacher, student_logits, student_logp


def identity_loss(batch: IdentitySet, state: DistillState) -> tuple[float, int]:
    """Summed cross-entropy over all (target view, student view) pairs of one person.

    Views are compared by identity (image position, view slot), never by value.
    """
    teacher, _, student_logp = _loss_terms(batch, state)
    loss = 0.0
    pairs = 0
    for i, p_t in enumerate(teacher):
        for j, logp in enumerate(student_logp):
            # rows: target global view g; cols: every student view of image j
            ce = -(p_t @ logp.T)
            if i == j:
                ce[0, 0] = 0.0
                ce[1, 1] = 0.0
                pairs += 2 * len(logp) - 2
            else:
                pairs += 2 * len(logp)
            loss += float(ce.sum())
    return loss, pairs


def identity_loss_and_grad(batch: IdentitySet, state: DistillState):
    """Loss, pair count and the gradient wrt every student view's logits.

    The gradient list mirrors ``batch.views``; entry ``j`` has the shape of
    ``batch.views[j].student_views``.
    """
    teacher, _, student_logp = _loss_terms(batch, state)
    loss, pairs = identity_loss(batch, state)
    targets_total = sum(p.sum(axis=0) for p in teacher)  # sum of every target distribution
    n_targets = 2 * len(teacher)
    grads = []
    for j, logp in enumerate(student_logp):
        p_s = np.exp(logp)
        counts = np.full(len(logp), float(n_targets))
        target_sum = np.tile(targets_total, (len(logp), 1))
        counts[:2] -= 1.0
        target_sum[:2] -= teacher[j]  # a global view is not its own target
        grads.append((counts[:, None] * p_s - target_sum) / state.tau_s)
    return loss, pairs, grads


def ema_update(state: DistillState) -> DistillState:
    s = np.asarray(state.student_params, dtype=np.float64)
    t = np.asarray(state.teacher_params, dtype=np.float64)
    if s.shape != t.shape:
        raise ShapeMismatch("student and teacher parameters differ in shape")
    lam = state.ema_momentum
    if not 0 <= lam <= 1:
        raise ValueError("ema momentum must lie in [0, 1]")
    return replace(state, teacher_params=lam * t + (1.0 - lam) * s)


def center_update(center, teacher_batch_outputs, m: float) -> np.ndarray:
    outputs = np.asarray(teacher_batch_outputs, dtype=np.float64)
    if outputs.size == 0:
        raise EmptySet("center update needs at least one teacher output")
    if not 0 <= m <= 1:
        raise ValueError("center momentum must lie in [0, 1]")
    outputs = outputs.reshape(-1, outputs.shape[-1])
    return m * np.asarray(center, dtype=np.float64) + (1.0 - m) * outputs.mean(axis=0)


def curriculum_nid(progress: float, schedule=CURRICULUM, initial: int = INITIAL_NID) -> int:
    """Images per identity for a training progress fraction in [0, 1]."""
    if not 0 <= progress <= 1:
        raise ValueError("progress must lie in [0, 1]")
    n = initial
    for start, value in schedule:
        if progress >= start:
            n = value
    return n


def parse_schedule(text: str) -> tuple[int, tuple[tuple[float, int], ...]]:
    """Parse ``"2,0.4:4,0.6:6,0.8:8"`` into (initial, schedule)."""
    head, *rest = [p.strip() for p in text.split(",") if p.strip()]
    schedule = []
    for item in rest:
        at, value = item.split(":")
        schedule.append((float(at), int(value)))
    return int(head), tuple(sorted(schedule))


# --- toy encoder -------------------------------------------------------------


@dataclass(frozen=True)
class MLP:
    """``logits = W2 tanh(W1 x + b1) + b2`` over a flat parameter vector."""

    d_in: int
    hidden: int
    k: int

    @property
    def size(self) -> int:
        return self.hidden * self.d_in + self.hidden + self.k * self.hidden + self.k

    def unpack(self, theta):
        h, d, k = self.hidden, self.d_in, self.k
        o = 0
        W1 = theta[o : o + h * d].reshape(h, d)
        o += h * d
        b1 = theta[o : o + h]
        o += h
        W2 = theta[o : o + k * h].reshape(k, h)
        o += k * h
        b2 = theta[o : o + k]
        return W1, b1, W2, b2

    def init(self, rng: np.random.Generator) -> np.ndarray:
        theta = np.zeros(self.size)
        W1, _, W2, _ = self.unpack(theta)
        W1[:] = rng.normal(0.0, 1.0 / np.sqrt(self.d_in), W1.shape)
        W2[:] = rng.normal(0.0, 1.0 / np.sqrt(self.hidden), W2.shape)
        return theta

    def embed(self, theta, X) -> np.ndarray:
        return self.forward(theta, X)[0]

    def forward(self, theta, X):
        W1, b1, W2, b2 = self.unpack(theta)
        H = np.tanh(X @ W1.T + b1)
        return H @ W2.T + b2, H

    def backward(self, theta, X, H, dlogits) -> np.ndarray:
        _, _, W2, _ = self.unpack(theta)
        grad = np.zeros_like(theta)
        gW1, gb1, gW2, gb2 = self.unpack(grad)
        gW2[:] = dlogits.T @ H
        gb2[:] = dlogits.sum(axis=0)
        dpre = (dlogits @ W2) * (1.0 - H * H)
        gW1[:] = dpre.T @ X
        gb1[:] = dpre.sum(axis=0)
        return grad


@dataclass
class ToyData:
    """Labeled vectors standing in for person images, split into train and held-out."""

    features: np.ndarray
    labels: np.ndarray
    train: np.ndarray  # bool mask


@dataclass
class ToyConfig:
    hidden: int = 32
    k: int = 32
    n_local: int = 2
    lr: float = 0.05
    steps_per_epoch: int = 32
    identities_per_step: int = 4
    global_noise: float = 0.2
    local_noise: float = 0.4
    global_dropout: float = 0.1
    local_dropout: float = 0.3
    tau_s: float = TAU_S
    tau_t: float = TAU_T
    ema_momentum: float = EMA_MOMENTUM
    center_momentum: float = CENTER_MOMENTUM
    initial_nid: int = INITIAL_NID
    schedule: tuple = CURRICULUM


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    precision_at_1: float
    n_id: int


@dataclass
class TrainingTrace:
    rows: list[EpochRecord] = field(default_factory=list)
    initial_precision_at_1: float = float("nan")
    state: DistillState | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "precision_at_1", "n_id"])
        for r in self.rows:
            w.writerow([r.epoch, repr(r.loss), repr(r.precision_at_1), r.n_id])
        return buf.getvalue()


def precision_at_1(embeddings: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of items whose cosine nearest neighbour (excluding itself) shares the label."""
    E = np.asarray(embeddings, dtype=np.float64)
    E = E / np.maximum(np.linalg.norm(E, axis=1, keepdims=True), 1e-12)
    S = E @ E.T
    np.fill_diagonal(S, -np.inf)
    nn = np.argmax(S, axis=1)
    return float(np.mean(labels[nn] == labels))


def _augment(rng, X, noise, dropout):
    keep = rng.random(X.shape) >= dropout
    return (X + rng.normal(0.0, noise, X.shape)) * keep


def toy_train(
    data: ToyData,
    epochs: int,
    seed: int,
    config: ToyConfig | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainingTrace:
    """Train a small MLP student against its EMA teacher with identity sets.

    Each step draws ``identities_per_step`` identities, ``n_id`` training
    images each (n_id from the curriculum), and two global plus ``n_local``
    local augmentations per image. Precision@1 is measured on the student's
    head outputs over the held-out images.
    """
    cfg = config or ToyConfig()
    rng = np.random.default_rng(seed)
    X = np.asarray(data.features, dtype=np.float64)
    labels = np.asarray(data.labels)
    ids = np.unique(labels[data.train])
    if len(ids) < 2:
        raise ValueError("toy training needs at least two identities")
    by_id = {int(p): np.flatnonzero((labels == p) & data.train) for p in ids}
    held = ~np.asarray(data.train)

    model = MLP(X.shape[1], cfg.hidden, cfg.k)
    theta = model.init(rng)
    state = DistillState(
        theta.copy(), theta.copy(), np.zeros(cfg.k),
        cfg.tau_s, cfg.tau_t, cfg.ema_momentum, cfg.center_momentum,
    )
    trace = TrainingTrace(state=state)
    trace.initial_precision_at_1 = precision_at_1(model.embed(theta, X[held]), labels[held])

    for epoch in range(epochs):
        n_id = curriculum_nid(epoch / epochs, cfg.schedule, cfg.initial_nid)
        losses = []
        for _ in range(cfg.steps_per_epoch):
            chosen = rng.choice(ids, size=min(cfg.identities_per_step, len(ids)), replace=False)
            grad = np.zeros_like(state.student_params)
            step_loss, step_pairs = 0.0, 0
            teacher_outputs = []
            for person in chosen.tolist():
                pool = by_id[person]
                images = rng.choice(pool, size=n_id, replace=len(pool) < n_id)
                base = X[images]
                g = np.concatenate([
                    _augment(rng, base, cfg.global_noise, cfg.global_dropout),
                    _augment(rng, base, cfg.global_noise, cfg.global_dropout),
                ])
                loc = _augment(
                    rng, np.repeat(base, cfg.n_local, axis=0), cfg.local_noise, cfg.local_dropout
                )
                s_g, h_g = model.forward(state.student_params, g)
                s_l, h_l = model.forward(state.student_params, loc)
                t_g, _ = model.forward(state.teacher_params, g)
                teacher_outputs.append(t_g)
                views = [
                    ViewSet(
                        k,
                        s_g[[k, n_id + k]],
                        s_l[k * cfg.n_local : (k + 1) * cfg.n_local],
                        teacher_global=t_g[[k, n_id + k]],
                    )
                    for k in range(n_id)
                ]
                loss, pairs, dviews = identity_loss_and_grad(IdentitySet(person, views), state)
                step_loss += loss
                step_pairs += pairs
                dg = np.zeros_like(s_g)
                dl = np.zeros_like(s_l)
                for k, dv in enumerate(dviews):
                    dg[k] = dv[0]
                    dg[n_id + k] = dv[1]
                    dl[k * cfg.n_local : (k + 1) * cfg.n_local] = dv[2:]
                grad += model.backward(state.student_params, g, h_g, dg)
                grad += model.backward(state.student_params, loc, h_l, dl)
            student = state.student_params - cfg.lr * grad / step_pairs
            state = replace(state, student_params=student)
            state = ema_update(state)
            state = replace(
                state,
                center=center_update(state.center, np.concatenate(teacher_outputs), cfg.center_momentum),
            )
            losses.append(step_loss / step_pairs)
        p1 = precision_at_1(model.embed(state.student_params, X[held]), labels[held])
        record = EpochRecord(epoch + 1, float(np.mean(losses)), p1, n_id)
        trace.rows.append(record)
        if on_epoch:
            on_epoch(record)
    trace.state = state
    return trace


def make_toy_data(
    n_identities: int = 10,
    images_per_identity: int = 16,
    held_out_per_identity: int = 6,
    dim: int = 32,
    signal_dims: int = 8,
    nuisance: float = 1.0,
    seed: int = 0,
) -> ToyData:
    """Identity prototypes in a few coordinates, buried under per-image nuisance.

    Nuisance is drawn in every coordinate, so raw nearest-neighbour retrieval
    is weak and the student has to learn which directions carry identity.
    """
    if n_identities < 2:
        raise ValueError("need at least two identities")
    rng = np.random.default_rng(seed)
    protos = np.zeros((n_identities, dim))
    protos[:, :signal_dims] = rng.normal(0.0, 1.0, (n_identities, signal_dims))
    labels = np.repeat(np.arange(n_identities), images_per_identity)
    X = protos[labels] + rng.normal(0.0, nuisance, (len(labels), dim))
    slot = np.tile(np.arange(images_per_identity), n_identities)
    train = slot >= held_out_per_identity
    return ToyData(X, labels, train)
