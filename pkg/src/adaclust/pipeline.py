"""End-to-end adaptive training and inference.

Training alternates pseudo-domain discovery (on a feature snapshot taken at
the start of each clustering epoch) with mini-batch SGD over the augmented
inputs; the per-point embeddings stay frozen between clustering rounds.
Inference matches each sample to its nearest pseudo embedding, one sample at
a time. Also houses the leave-one-domain-out harness and the versioned
model file format.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import datagen
from .clustering import Centroids, assign_all, kmeans_fit, nearest_centroid, nmi
from .datagen import AggregatedDataset, LearnerView, MotherDistribution
from .net import (
    ExtractorWeights,
    HeadWeights,
    NetConfig,
    PretrainConfig,
    SgdConfig,
    extract,
    extract_batch,
    forward_joint,
    init_extractor,
    init_head,
    pretrain_extractor,
    sgd_epoch,
)
from .rng import Stream, derive
from .spectral import (
    SpectralBasis,
    covariance_eigenbasis,
    identity_basis,
    project,
    project_single,
    validate_window,
)

VARIANTS = ("adaclust", "erm", "adaclust_random", "adaclust_nopca")
MODEL_FORMAT_VERSION = 1


class ModelFileError(Exception):
    code = "model"


class CorruptModelError(ModelFileError):
    code = "corrupt"


class UnsupportedVersionError(ModelFileError):
    code = "version"


class ModelShapeError(ModelFileError):
    code = "shape"


@dataclass(frozen=True)
class ClusteringSchedule:
    """When to recompute pseudo-domains: powers of two, every epoch, or an
    explicit epoch set."""

    kind: str = "logarithmic"
    explicit_epochs: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("logarithmic", "every_epoch", "constant_set"):
            raise ValueError(f"unknown schedule kind: {self.kind!r}")
        if self.kind == "constant_set":
            if not self.explicit_epochs:
                raise ValueError("constant_set schedule needs explicit epochs")
            epochs = tuple(sorted(set(int(e) for e in self.explicit_epochs)))
            if epochs[0] < 1:
                raise ValueError("schedule epochs must be >= 1")
            object.__setattr__(self, "explicit_epochs", epochs)

    def epochs(self, total: int) -> list[int]:
        if self.kind == "logarithmic":
            out, e = [], 1
            while e <= total:
                out.append(e)
                e *= 2
            return out
        if self.kind == "every_epoch":
            return list(range(1, total + 1))
        return [e for e in self.explicit_epochs if e <= total]


@dataclass
class PseudoDomainModel:
    centroids: Centroids
    basis: SpectralBasis
    created_at_epoch: int

    @property
    def width(self) -> int:
        return self.centroids.dim

    def copy(self) -> "PseudoDomainModel":
        cen = Centroids(
            psi=self.centroids.psi.copy(),
            K=self.centroids.K,
            iteration_count=self.centroids.iteration_count,
            final_cost=self.centroids.final_cost,
            objective_history=self.centroids.objective_history.copy(),
        )
        return PseudoDomainModel(cen, self.basis, self.created_at_epoch)


@dataclass(frozen=True)
class TrainConfig:
    num_classes: int
    K: int
    d_start: int
    d_end: int
    schedule: ClusteringSchedule = field(default_factory=ClusteringSchedule)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    net: NetConfig = field(default_factory=NetConfig)
    pretrain: PretrainConfig | None = field(default_factory=PretrainConfig)
    variant: str = "adaclust"
    center: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant: {self.variant!r}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.variant in ("adaclust", "adaclust_random"):
            validate_window((self.d_start, self.d_end), self.net.feature_dim)

    @property
    def embedding_width(self) -> int:
        if self.variant == "erm":
            return 0
        if self.variant == "adaclust_nopca":
            return self.net.feature_dim
        return self.d_end - self.d_start

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "K": self.K,
            "d_start": self.d_start,
            "d_end": self.d_end,
            "schedule": {
                "kind": self.schedule.kind,
                "explicit_epochs": list(self.schedule.explicit_epochs),
            },
            "sgd": {
                "learning_rate": self.sgd.learning_rate,
                "weight_decay": self.sgd.weight_decay,
                "batch_size": self.sgd.batch_size,
                "epochs": self.sgd.epochs,
                "seed": self.sgd.seed,
            },
            "net": {
                "d_raw": self.net.d_raw,
                "hidden": self.net.hidden,
                "feature_dim": self.net.feature_dim,
            },
            "pretrain": None
            if self.pretrain is None
            else {
                "num_domains": self.pretrain.num_domains,
                "points_per_domain": self.pretrain.points_per_domain,
                "sgd": {
                    "learning_rate": self.pretrain.sgd.learning_rate,
                    "weight_decay": self.pretrain.sgd.weight_decay,
                    "batch_size": self.pretrain.sgd.batch_size,
                    "epochs": self.pretrain.sgd.epochs,
                    "seed": self.pretrain.sgd.seed,
                },
            },
            "variant": self.variant,
            "center": self.center,
        }

    @staticmethod
    def from_dict(payload: dict) -> "TrainConfig":
        pre = payload.get("pretrain")
        return TrainConfig(
            num_classes=int(payload["num_classes"]),
            K=int(payload["K"]),
            d_start=int(payload["d_start"]),
            d_end=int(payload["d_end"]),
            schedule=ClusteringSchedule(
                kind=payload["schedule"]["kind"],
                explicit_epochs=tuple(payload["schedule"]["explicit_epochs"]),
            ),
            sgd=SgdConfig(**payload["sgd"]),
            net=NetConfig(**payload["net"]),
            pretrain=None
            if pre is None
            else PretrainConfig(
                num_domains=int(pre["num_domains"]),
                points_per_domain=int(pre["points_per_domain"]),
                sgd=SgdConfig(**pre["sgd"]),
            ),
            variant=payload["variant"],
            center=bool(payload["center"]),
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class AdaptiveClassifier:
    omega: ExtractorWeights
    head: HeadWeights
    pseudo: PseudoDomainModel | None
    fingerprint: str
    config: TrainConfig | None = None

    @property
    def num_classes(self) -> int:
        return self.head.num_classes


@dataclass
class TrainLog:
    rows: list[dict]
    clustering_epochs: list[int]

    @property
    def num_clustering_rounds(self) -> int:
        return len(self.clustering_epochs)


class TrainingDivergedError(RuntimeError):
    pass


def recluster(view: LearnerView, omega: ExtractorWeights, config: TrainConfig,
              stream: Stream, epoch: int = 0):
    """One clustering round: features -> (optional) spectrum window ->
    k-means -> per-point embeddings.

    Returns ``(pseudo, psi_points, cluster_idx)``. For the no-PCA variant
    the basis is the identity over raw features; for the random-embedding
    variant each point receives a uniformly random centroid.
    """
    if view.M < config.K:
        raise ValueError("fewer points than clusters")
    feats = extract_batch(view.X, omega)
    if config.variant == "adaclust_nopca":
        basis = identity_basis(feats.shape[1])
    else:
        basis = covariance_eigenbasis(
            feats, (config.d_start, config.d_end), center=config.center
        )
    phis = project(feats, basis)
    centroids, assignment = kmeans_fit(phis, config.K, stream.split("kmeans"))
    if config.variant == "adaclust_random":
        draws = stream.split("random-psi").uniforms(view.M)
        cluster_idx = np.minimum(
            (draws * config.K).astype(np.int64), config.K - 1
        )
    else:
        cluster_idx = assignment.cluster_of
    psi_points = centroids.psi[cluster_idx]
    return PseudoDomainModel(centroids, basis, epoch), psi_points, cluster_idx


def _batch_predict_labels(
    X: np.ndarray,
    omega: ExtractorWeights,
    head: HeadWeights,
    pseudo: PseudoDomainModel | None,
) -> np.ndarray:
    feats = extract_batch(X, omega)
    if pseudo is None:
        psi = np.zeros((X.shape[0], 0))
    else:
        phis = project(feats, pseudo.basis)
        idx, _ = assign_all(phis, pseudo.centroids)
        psi = pseudo.centroids.psi[idx]
    logits = np.concatenate([feats, psi], axis=1) @ head.W.T + head.b
    return np.argmax(logits, axis=1).astype(np.int64)


def train(
    view: LearnerView,
    config: TrainConfig,
    *,
    mother: MotherDistribution | None = None,
    val_view: LearnerView | None = None,
    eval_domains: np.ndarray | None = None,
):
    """Run the full training loop on an aggregated learner view.

    ``mother`` enables phase-0 pretraining on a pooled draw from the domain
    universe (without it the extractor starts from random init). ``val_view``
    turns on best-epoch selection by validation accuracy (ties keep the
    later epoch). ``eval_domains`` is a diagnostics-only channel used to log
    cluster/domain NMI; it never feeds back into an update.

    Returns ``(AdaptiveClassifier, TrainLog)``.
    """
    if view.y is None:
        raise ValueError("training requires labels in the learner view")
    X, y = view.X, view.y
    T = config.sgd.epochs
    if T < 1:
        raise ValueError("need at least one training epoch")
    clustering = config.variant != "erm"
    planned = config.schedule.epochs(T) if clustering else []
    if clustering and (not planned or planned[0] != 1):
        raise ValueError("clustering schedule must include epoch 1")

    root = Stream(derive(config.sgd.seed, "train"))
    with datagen.training_guard:
        if mother is not None and config.pretrain is not None:
            pre_sgd = replace(
                config.pretrain.sgd, seed=derive(config.sgd.seed, "phase0")
            )
            omega = pretrain_extractor(mother, replace(config.pretrain, sgd=pre_sgd))
        else:
            omega = init_extractor(config.net, root.split("init-omega"))

        # phase 0: one fine-tune epoch with a throwaway plain head
        temp_head = init_head(
            config.num_classes, config.net.feature_dim, root.split("init-temp-head")
        )
        sgd_epoch(
            X, y, np.zeros((X.shape[0], 0)), omega, temp_head, config.sgd,
            root.split("shuffle-warm"),
        )
        del temp_head

        head: HeadWeights | None = None
        pseudo: PseudoDomainModel | None = None
        psi_points = np.zeros((X.shape[0], 0))
        cluster_idx: np.ndarray | None = None
        if not clustering:
            head = init_head(
                config.num_classes, config.net.feature_dim, root.split("init-head")
            )

        rows: list[dict] = []
        executed: list[int] = []
        best: tuple[float, int, dict] | None = None
        last_nmi = float("nan")
        for t in range(1, T + 1):
            reclustered = False
            if clustering and t in planned:
                try:
                    pseudo, psi_points, cluster_idx = recluster(
                        view, omega, config, root.split("cluster", t), epoch=t
                    )
                except FloatingPointError as exc:
                    raise TrainingDivergedError(f"epoch {t}: {exc}") from exc
                if head is None:
                    head = init_head(
                        config.num_classes,
                        config.net.feature_dim + config.embedding_width,
                        root.split("init-head"),
                    )
                reclustered = True
                executed.append(t)
                if eval_domains is not None:
                    last_nmi = nmi(cluster_idx, eval_domains)
            try:
                loss = sgd_epoch(
                    X, y, psi_points, omega, head, config.sgd, root.split("shuffle", t)
                )
            except FloatingPointError as exc:
                raise TrainingDivergedError(f"epoch {t}: {exc}") from exc
            row = {
                "epoch": t,
                "loss": loss,
                "reclustered": int(reclustered),
                "kmeans_cost": pseudo.centroids.final_cost if pseudo else float("nan"),
                "nmi_domain": last_nmi,
            }
            if val_view is not None:
                val_pred = _batch_predict_labels(val_view.X, omega, head, pseudo)
                val_acc = float((val_pred == val_view.y).mean())
                row["val_acc"] = val_acc
                if best is None or val_acc >= best[0]:
                    best = (
                        val_acc,
                        t,
                        {
                            "omega": omega.copy(),
                            "head": head.copy(),
                            "pseudo": pseudo.copy() if pseudo else None,
                        },
                    )
            rows.append(row)

    if best is not None:
        state = best[2]
        omega, head, pseudo = state["omega"], state["head"], state["pseudo"]
    model = AdaptiveClassifier(
        omega=omega,
        head=head,
        pseudo=pseudo,
        fingerprint=config.fingerprint(),
        config=config,
    )
    return model, TrainLog(rows=rows, clustering_epochs=executed)


def predict(x_raw: np.ndarray, model: AdaptiveClassifier):
    """Classify one sample: extract, project, match the nearest pseudo
    embedding, then run the joint head.

    Returns ``(label, logits, matched_cluster)``; ``matched_cluster`` is -1
    for embedding-free (plain) models.
    """
    x = np.asarray(x_raw, dtype=np.float64)
    feats = extract(x, model.omega)
    if model.pseudo is None:
        logits = model.head.W @ feats + model.head.b
        matched = -1
    else:
        phi = project_single(feats, model.pseudo.basis)
        matched, _ = nearest_centroid(phi, model.pseudo.centroids)
        logits = forward_joint(
            x, model.pseudo.centroids.psi[matched], model.omega, model.head
        )
    label = int(np.argmax(logits))
    return label, logits, matched


def predict_batch(X: np.ndarray, model: AdaptiveClassifier) -> np.ndarray:
    """Vectorized twin of :func:`predict` (labels only), used by evaluation."""
    return _batch_predict_labels(
        np.asarray(X, dtype=np.float64), model.omega, model.head, model.pseudo
    )


@dataclass
class LodoResult:
    rows: list[dict]
    mean_accuracy: float
    std_accuracy: float


def evaluate_lodo(
    mother: MotherDistribution,
    config: TrainConfig,
    num_domains: int,
    points_per_domain: int,
    seeds,
) -> LodoResult:
    """Leave-one-domain-out evaluation.

    Per seed, a fresh universe of ``num_domains`` domains is drawn; each
    round holds one domain out, splits the remaining domains 80-20 into
    train/validation (validation picks the best epoch), and tests on the
    held-out domain. The summary std is over per-seed mean accuracies.
    """
    if num_domains < 2:
        raise ValueError("LODO needs at least 2 domains")
    rows = []
    seed_means = []
    for s in seeds:
        mother_s = mother.with_seed(derive(mother.seed, "universe", s))
        data = datagen.sample_training_set(mother_s, num_domains, points_per_domain)
        domains = data.eval_domains()
        labels = data.eval_labels()
        accs = []
        for held in range(num_domains):
            test_mask = domains == held
            tr_idx, val_idx = _split_train_val(
                domains, test_mask, derive(config.sgd.seed, "split", s, held)
            )
            run_cfg = replace(
                config, sgd=replace(config.sgd, seed=derive(config.sgd.seed, "run", s, held))
            )
            model, tlog = train(
                LearnerView(X=data.X[tr_idx], y=labels[tr_idx]),
                run_cfg,
                mother=mother_s,
                val_view=LearnerView(X=data.X[val_idx], y=labels[val_idx]),
                eval_domains=domains[tr_idx],
            )
            pred = predict_batch(data.X[test_mask], model)
            acc = float((pred == labels[test_mask]).mean())
            accs.append(acc)
            final_nmi = tlog.rows[-1]["nmi_domain"] if tlog.rows else float("nan")
            rows.append(
                {
                    "seed": s,
                    "held_out": held,
                    "variant": config.variant,
                    "accuracy": acc,
                    "val_best_epoch": _best_epoch(tlog),
                    "clustering_rounds": tlog.num_clustering_rounds,
                    "nmi_domain": final_nmi,
                }
            )
        seed_means.append(float(np.mean(accs)))
    mean = float(np.mean([r["accuracy"] for r in rows]))
    std = float(np.std(seed_means)) if len(seed_means) > 1 else 0.0
    return LodoResult(rows=rows, mean_accuracy=mean, std_accuracy=std)


def _best_epoch(tlog: TrainLog) -> int:
    best_epoch, best_acc = -1, -1.0
    for row in tlog.rows:
        acc = row.get("val_acc")
        if acc is not None and acc >= best_acc:
            best_acc, best_epoch = acc, row["epoch"]
    return best_epoch


def _split_train_val(domains: np.ndarray, test_mask: np.ndarray, seed: int):
    """80-20 split inside every non-held-out domain."""
    stream = Stream(seed)
    train_ids, val_ids = [], []
    for dom in np.unique(domains[~test_mask]):
        ids = np.nonzero(domains == dom)[0]
        perm = stream.split("perm", int(dom)).permutation(len(ids))
        n_val = len(ids) // 5
        val_ids.append(ids[perm[:n_val]])
        train_ids.append(ids[perm[n_val:]])
    return np.sort(np.concatenate(train_ids)), np.sort(np.concatenate(val_ids))


def _array_payload(arr: np.ndarray) -> list:
    return np.asarray(arr, dtype=np.float64).tolist()


def save_model(model: AdaptiveClassifier, path) -> None:
    """Versioned JSON with decimal floats that round-trip bit-exactly."""
    if model.config is None:
        raise ValueError("model has no config attached")
    pseudo = model.pseudo
    payload = {
        "version": MODEL_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "fingerprint": model.fingerprint,
        "omega": {k: _array_payload(v) for k, v in model.omega.tensors().items()},
        "head": {k: _array_payload(v) for k, v in model.head.tensors().items()},
        "basis": None
        if pseudo is None
        else {
            "V": _array_payload(pseudo.basis.eigenvectors),
            "S": _array_payload(pseudo.basis.eigenvalues),
            "d_start": pseudo.basis.d_start,
            "d_end": pseudo.basis.d_end,
            "created_at_epoch": pseudo.created_at_epoch,
        },
        "centroids": None
        if pseudo is None
        else {"psi": _array_payload(pseudo.centroids.psi), "K": pseudo.centroids.K},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> AdaptiveClassifier:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptModelError(f"corrupt model file: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CorruptModelError("corrupt model file: missing version field")
    if payload["version"] != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"unsupported version: {payload['version']!r}"
        )
    try:
        config = TrainConfig.from_dict(payload["config"])
        omega = ExtractorWeights(
            W1=np.array(payload["omega"]["W1"], dtype=np.float64),
            b1=np.array(payload["omega"]["b1"], dtype=np.float64),
            W2=np.array(payload["omega"]["W2"], dtype=np.float64),
            b2=np.array(payload["omega"]["b2"], dtype=np.float64),
        )
        head = HeadWeights(
            W=np.array(payload["head"]["W"], dtype=np.float64),
            b=np.array(payload["head"]["b"], dtype=np.float64),
        )
        basis_payload = payload["basis"]
        centroid_payload = payload["centroids"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelError(f"corrupt model file: {exc}") from exc

    if config.fingerprint() != payload["fingerprint"]:
        raise CorruptModelError("corrupt model file: fingerprint mismatch")

    pseudo = None
    if basis_payload is not None:
        if centroid_payload is None:
            raise CorruptModelError("corrupt model file: basis without centroids")
        basis = SpectralBasis(
            eigenvectors=np.array(basis_payload["V"], dtype=np.float64),
            eigenvalues=np.array(basis_payload["S"], dtype=np.float64),
            d_start=int(basis_payload["d_start"]),
            d_end=int(basis_payload["d_end"]),
        )
        psi = np.array(centroid_payload["psi"], dtype=np.float64)
        K = int(centroid_payload["K"])
        if psi.ndim != 2 or psi.shape[0] != K:
            raise ModelShapeError("centroid matrix does not match K")
        if psi.shape[1] != basis.d_end - basis.d_start:
            raise ModelShapeError("centroid width does not match basis window")
        if basis.eigenvectors.shape != (omega.feature_dim, omega.feature_dim):
            raise ModelShapeError("basis does not match feature dimension")
        centroids = Centroids(psi=psi, K=K)
        pseudo = PseudoDomainModel(
            centroids, basis, int(basis_payload["created_at_epoch"])
        )
        expected_width = omega.feature_dim + psi.shape[1]
    else:
        expected_width = omega.feature_dim
    if head.in_dim != expected_width:
        raise ModelShapeError("head width inconsistent with model contents")
    if omega.W1.shape[0] != omega.W2.shape[1] or omega.b1.shape[0] != omega.W1.shape[0]:
        raise ModelShapeError("extractor tensor shapes inconsistent")
    return AdaptiveClassifier(
        omega=omega,
        head=head,
        pseudo=pseudo,
        fingerprint=payload["fingerprint"],
        config=config,
    )
