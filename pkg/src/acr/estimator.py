"""Continual learner with a scikit-learn estimator surface.

Each call to :meth:`ACRClassifier.partial_fit` trains one task: every step
concatenates the current batch, a batch retrieved from the replay buffer and
augmented copies of both, encodes them, and takes an SGD step on the proxy
contrastive (or cross-entropy) loss.  Target-class confidences of the
un-augmented current samples are logged over the first ``E`` epochs; at the
end of the task the buffer is pruned and refilled under the chosen policy.
"""

from __future__ import annotations

import copy
import logging
from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import autodiff as ad
from .autodiff import Tensor
from .buffer import ReplayBuffer, Sample, canonical_policy
from .confidence import ConfidenceLedger
from .data import augment
from .model import DegenerateBatchError, Encoder, ProxyClassifier, ce_loss, encode, pcl_loss, sgd_step

logger = logging.getLogger(__name__)

LOSSES = ("pcl", "ce")


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class ACRClassifier(ClassifierMixin, BaseEstimator):
    """Rehearsal-based class-incremental classifier.

    Parameters
    ----------
    policy : {"challenging", "hard", "random", "reservoir"}
        Buffer update policy.  ``challenging`` (alias ``acr``) keeps the
        highest confidence-variance samples per class.
    loss : {"pcl", "ce"}
        Proxy contrastive loss over the batch's classes, or plain softmax
        cross-entropy over every known class.
    buffer_size : int
        Replay capacity.
    batch_size : int
        Size ``b`` of both the current and the retrieved batch.
    epochs : int
        Epochs per task.
    E : int
        Leading epochs whose confidences are recorded (``E <= epochs``).
    tau : float
        Temperature of the contrastive loss and of the confidence softmax.
    lr : float
        SGD learning rate.
    hidden, embed_dim : encoder widths.
    normalize : bool
        L2-normalise embeddings before the proxy inner product.
    image_side : int or None
        Side of square image inputs; enables crop/flip augmentation.
        ``None`` treats inputs as vectors and augments with small noise.
    random_state : int
        Master seed; init, shuffling, retrieval, augmentation and buffer
        sampling each get an independent child stream.
    """

    def __init__(self, policy="challenging", loss="pcl", buffer_size=200, batch_size=16, epochs=20, E=5,
                 tau=0.1, lr=0.05, hidden=(64,), embed_dim=32, normalize=False, image_side=None,
                 random_state=0):
        self.policy = policy
        self.loss = loss
        self.buffer_size = buffer_size
        self.batch_size = batch_size
        self.epochs = epochs
        self.E = E
        self.tau = tau
        self.lr = lr
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.normalize = normalize
        self.image_side = image_side
        self.random_state = random_state

    # ------------------------------------------------------------- setup

    def _validate_params(self) -> None:
        canonical_policy(self.policy)
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.batch_size < 1 or self.buffer_size < 1 or self.epochs < 1:
            raise ValueError("batch_size, buffer_size and epochs must be >= 1")
        if not 1 <= self.E <= self.epochs:
            raise ValueError(f"E must satisfy 1 <= E <= epochs, got E={self.E}, epochs={self.epochs}")
        if self.tau <= 0 or self.lr <= 0:
            raise ValueError("tau and lr must be positive")

    def _initialize(self, n_features: int) -> None:
        self._validate_params()
        seeds = np.random.SeedSequence(self.random_state).spawn(5)
        init_rng, self._shuffle_rng, self._retrieval_rng, self._augment_rng, self._buffer_rng = (
            np.random.default_rng(s) for s in seeds
        )
        if self.image_side is not None and self.image_side**2 != n_features:
            raise ValueError(f"image_side={self.image_side} does not match {n_features} features")
        self.encoder_ = Encoder(n_features, tuple(self.hidden), self.embed_dim, rng=init_rng)
        self.proxies_ = ProxyClassifier(self.embed_dim, rng=init_rng)
        self.buffer_ = ReplayBuffer(self.buffer_size, canonical_policy(self.policy))
        self.n_features_in_ = n_features
        self.n_seen_ = 0
        self.tasks_seen_: List[int] = []
        self.ledger_: Optional[ConfidenceLedger] = None
        self.skipped_batches_ = 0

    @property
    def classes_(self) -> np.ndarray:
        check_is_fitted(self, "proxies_")
        return np.asarray(self.proxies_.classes_)

    @property
    def _tau_eff(self) -> float:
        return self.tau if self.loss == "pcl" else 1.0

    # ---------------------------------------------------------- training

    def fit(self, X, y, tasks=None, sample_ids=None):
        """Train from scratch on tasks in order of first appearance in ``tasks``."""
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        tasks = np.zeros(y.size, dtype=np.int64) if tasks is None else np.asarray(tasks)
        ids = np.arange(y.size) if sample_ids is None else np.asarray(sample_ids)
        for attr in ("encoder_", "proxies_", "buffer_"):
            self.__dict__.pop(attr, None)
        for t in dict.fromkeys(tasks.tolist()):
            mask = tasks == t
            self.partial_fit(X[mask], y[mask], task_id=t, sample_ids=ids[mask])
        return self

    def partial_fit(self, X, y, task_id=None, sample_ids=None):
        """Train on one task, then update the replay buffer."""
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        if not hasattr(self, "encoder_"):
            self._initialize(X.shape[1])
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if task_id is None:
            task_id = len(self.tasks_seen_)
        if task_id in self.tasks_seen_:
            raise ValueError(f"task {task_id} was already trained")
        ids = np.arange(self.n_seen_, self.n_seen_ + y.size) if sample_ids is None else np.asarray(sample_ids)
        if ids.size != y.size:
            raise ValueError("sample_ids must have one entry per row")
        self.train_task(X, y, ids, task_id)
        self.tasks_seen_.append(task_id)
        return self

    def train_task(self, X: np.ndarray, y: np.ndarray, ids: np.ndarray, task_id) -> None:
        b = self.batch_size
        n = y.size
        n_batches = n // b
        if n_batches == 0:
            raise ValueError(f"task {task_id} has {n} samples, fewer than batch_size={b}")
        policy = self.buffer_.policy
        classes = sorted(set(y.tolist()))
        self.proxies_.add_classes(classes)
        self.buffer_.note_task(task_id, classes)
        rows = self.proxies_.rows_for(y)
        ledger = ConfidenceLedger(self.E, task_id) if policy in ("challenging", "hard") else None

        for epoch in range(1, self.epochs + 1):
            perm = self._shuffle_rng.permutation(n)
            record = ledger is not None and epoch <= self.E
            for k in range(n_batches):
                idx = perm[k * b:(k + 1) * b]
                self._step(X[idx], y[idx], rows[idx], ids[idx], epoch, ledger if record else None)
                if policy == "reservoir" and epoch == 1:
                    for i in idx:
                        self.n_seen_ += 1
                        self.buffer_.reservoir_insert(self._buffer_rng, Sample(int(ids[i]), X[i], int(y[i]), task_id),
                                                      self.n_seen_)
            rest = perm[n_batches * b:]
            if record and rest.size:
                # dropped tail of the epoch: forward only, so every sample gets E records
                probs = self._probs(X[rest])
                ledger.record_batch(ids[rest], probs, rows[rest], epoch, labels=y[rest])

        if policy != "reservoir":
            self.n_seen_ += n
        samples = [Sample(int(ids[i]), X[i], int(y[i]), task_id) for i in range(n)]
        if policy == "challenging":
            self.buffer_.update_challenging(ledger, task_id, samples)
        elif policy == "hard":
            self.buffer_.update_hard(ledger, task_id, samples)
        elif policy == "random":
            self.buffer_.update_random_balanced(self._buffer_rng, task_id, samples)
        self.ledger_ = ledger

    def _batch(self, xc, yc, rows_c):
        mem = self.buffer_.random_retrieval(self._retrieval_rng, self.batch_size)
        side = self.image_side
        xa = augment(xc, self._augment_rng, side)
        if not mem:
            return np.vstack([xc, xa]), np.concatenate([rows_c, rows_c])
        xb = np.stack([s.x for s in mem])
        rows_b = self.proxies_.rows_for([s.label for s in mem])
        xba = augment(xb, self._augment_rng, side)
        return np.vstack([xc, xb, xa, xba]), np.concatenate([rows_c, rows_b, rows_c, rows_b])

    def _step(self, xc, yc, rows_c, ids_c, epoch, ledger) -> None:
        for attempt in range(2):
            x, rows = self._batch(xc, yc, rows_c)
            z = self._embed(x)
            if ledger is not None and attempt == 0:
                logits = z.data[: len(rows_c)] @ self.proxies_.W.data.T / self._tau_eff
                ledger.record_batch(ids_c, _softmax(logits), rows_c, epoch, labels=yc)
            try:
                loss = self._loss(z, rows)
            except DegenerateBatchError:
                continue
            if not np.isfinite(loss.item()):
                raise FloatingPointError(
                    f"training diverged (non-finite loss at epoch {epoch}); lower lr, raise tau or set normalize=True"
                )
            params = self.encoder_.parameters() + self.proxies_.parameters()
            ad.backward(loss, params)
            sgd_step(params, self.lr)
            return
        self.skipped_batches_ += 1
        logger.warning("skipping single-class batch after one resample (epoch %d)", epoch)

    def _embed(self, x) -> Tensor:
        z = encode(self.encoder_, x)
        return ad.normalize_rows(z) if self.normalize else z

    def _loss(self, z: Tensor, rows: np.ndarray) -> Tensor:
        if self.loss == "pcl":
            return pcl_loss(z, rows, self.proxies_.W, self.tau)
        return ce_loss(z, rows, self.proxies_.W)

    # -------------------------------------------------------- inference

    def transform(self, X) -> np.ndarray:
        """Embeddings of ``X``."""
        check_is_fitted(self, "encoder_")
        X = check_array(X, dtype=np.float64)
        return self._embed(X).data

    def decision_function(self, X) -> np.ndarray:
        return self.transform(X) @ self.proxies_.W.data.T

    def _probs(self, X) -> np.ndarray:
        return _softmax(self.decision_function(X) / self._tau_eff)

    def predict_proba(self, X) -> np.ndarray:
        return self._probs(X)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def snapshot(self) -> "ACRClassifier":
        """Copy of the trained model without the replay buffer, for evaluation."""
        check_is_fitted(self, "encoder_")
        clone = copy.copy(self)
        clone.encoder_ = copy.deepcopy(self.encoder_)
        clone.proxies_ = copy.deepcopy(self.proxies_)
        clone.buffer_ = None
        clone.ledger_ = None
        return clone
