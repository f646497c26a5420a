"""Numerical checks of the clustering-based generalization constructs.

Implements Monte Carlo estimates of the expected clustering cost, the
concentration check for the cost gap bound, unit-ball covering checks, the
effective-dimension estimate from the cost decay slope, bad-neighbor pair
counting, the feature RMS norm, and the three generalization bound terms.

Everything here works in a projected feature space; where a check's
hypothesis requires features inside the unit ball, the feature map is
rescaled by a calibrated radius first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import datagen
from .clustering import assign_all, empirical_cost, kmeans_fit
from .datagen import MotherDistribution
from .net import ExtractorWeights, extract_batch
from .rng import Stream, derive
from .spectral import SpectralBasis, project


@dataclass(frozen=True)
class FeatureMap:
    """phi(x) = project(extract(x)) / scale."""

    omega: ExtractorWeights
    basis: SpectralBasis
    scale: float = 1.0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return project(extract_batch(X, self.omega), self.basis) / self.scale

    @property
    def dim(self) -> int:
        return self.basis.d_end - self.basis.d_start


def _resolve_map(omega, basis, feature_map) -> "FeatureMap | object":
    if feature_map is not None:
        return feature_map
    return FeatureMap(omega=omega, basis=basis)


def calibrate_feature_map(
    mother: MotherDistribution,
    omega: ExtractorWeights,
    basis: SpectralBasis,
    seed: int,
    num_domains: int = 64,
    points_per_domain: int = 32,
    margin: float = 1.25,
) -> FeatureMap:
    """Rescale the projected features into the unit ball.

    The radius is the maximum projected norm over a calibration sample,
    inflated by ``margin`` so fresh draws stay inside with overwhelming
    probability.
    """
    raw = FeatureMap(omega=omega, basis=basis)
    sample = sample_projected(mother, raw, num_domains, points_per_domain, seed, "calibrate")
    radius = float(np.sqrt((sample.phi**2).sum(axis=1)).max())
    if radius == 0.0:
        radius = 1.0
    return FeatureMap(omega=omega, basis=basis, scale=margin * radius)


@dataclass(frozen=True)
class ProjectedSample:
    """Projected features with per-row (local) domain indices and the RNG
    key the sample was drawn under."""

    phi: np.ndarray
    domains: np.ndarray
    key: tuple

    @property
    def M(self) -> int:
        return self.phi.shape[0]


def sample_projected(
    mother: MotherDistribution,
    feature_map,
    num_domains: int,
    points_per_domain: int,
    seed: int,
    *tokens,
) -> ProjectedSample:
    """Fresh (domains x points) draw pushed through the feature map.

    Distinct ``(seed, tokens)`` paths give independent universes.
    """
    key = ("theory", int(seed)) + tokens
    mother_k = mother.with_seed(derive(mother.seed, *key))
    xs, ds = [], []
    for j in range(num_domains):
        spec = datagen.sample_domain(mother_k, j)
        Xj, _ = datagen.domain_points(mother_k, spec, points_per_domain)
        xs.append(Xj)
        ds.append(np.full(points_per_domain, j, dtype=np.int64))
    phi = feature_map(np.vstack(xs))
    return ProjectedSample(phi=phi, domains=np.concatenate(ds), key=key)


@dataclass(frozen=True)
class CostEstimate:
    value: float
    stderr: float
    num_domains: int
    points_per_domain: int


def expected_cost_mc(
    mother: MotherDistribution,
    omega: ExtractorWeights | None,
    basis: SpectralBasis | None,
    centroids,
    num_domains: int,
    points_per_domain: int,
    seed: int,
    feature_map=None,
) -> CostEstimate:
    """Monte Carlo estimate of the expected nearest-centroid cost.

    The standard error is computed over domain-level means (domains are the
    outer sampling unit).
    """
    fmap = _resolve_map(omega, basis, feature_map)
    sample = sample_projected(
        mother, fmap, num_domains, points_per_domain, seed, "expected-cost"
    )
    _, dist = assign_all(sample.phi, centroids)
    per_domain = dist.reshape(num_domains, points_per_domain).mean(axis=1)
    stderr = (
        float(per_domain.std(ddof=1) / math.sqrt(num_domains))
        if num_domains > 1
        else float("inf")
    )
    return CostEstimate(
        value=float(dist.mean()),
        stderr=stderr,
        num_domains=num_domains,
        points_per_domain=points_per_domain,
    )


@dataclass(frozen=True)
class TaggedCentroids:
    """Centroids remembered together with the sample key they were fit on,
    so the concentration check can refuse non-independent inputs."""

    psi: np.ndarray
    source_key: tuple


def lemma1_bound(N: int, n: int, delta: float) -> float:
    """2*sqrt(log(2N/delta)/n) + 2*sqrt(log(1/delta)/N)."""
    return 2.0 * math.sqrt(math.log(2.0 * N / delta) / n) + 2.0 * math.sqrt(
        math.log(1.0 / delta) / N
    )


@dataclass
class Lemma1Report:
    fraction_ok: float
    bound: float
    pass_threshold: float
    passed: bool
    expected_cost: float
    expected_stderr: float
    gaps: np.ndarray
    trials: int
    delta: float


def lemma1_check(
    mother: MotherDistribution,
    omega: ExtractorWeights,
    basis: SpectralBasis,
    K: int,
    n: int,
    N: int,
    delta: float,
    trials: int,
    seed: int = 0,
    centroids: TaggedCentroids | None = None,
    restarts: int = 5,
) -> Lemma1Report:
    """Empirical check of the cost-gap concentration bound.

    Over ``trials`` independent draws of (N domains x n points), measures
    how often |expected cost - empirical cost| stays within the bound for a
    FIXED centroid set. Centroids are fit on a dedicated independent draw;
    externally supplied centroids must carry a source key disjoint from the
    evaluation draws. Features are rescaled into the unit ball so the
    bound's hypothesis holds. PASS requires the in-bound fraction to be at
    least 1 - delta - 2*sqrt(delta*(1-delta)/trials).
    """
    if trials < 50:
        raise ValueError("insufficient trials: need at least 50")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must be in (0, 1)")
    fmap = calibrate_feature_map(mother, omega, basis, derive(seed, "calibrate"))

    trial_keys = {("theory", int(seed), "lemma1-trial", t) for t in range(trials)}
    reference_key = ("theory", int(seed), "expected-cost")
    if centroids is None:
        fit_sample = sample_projected(mother, fmap, max(N, 32), max(n, 32), seed, "lemma1-fit")
        fitted, _ = kmeans_fit(fit_sample.phi, K, Stream(derive(seed, "lemma1-kmeans")),
                               restarts=restarts)
        centroids = TaggedCentroids(psi=fitted.psi, source_key=fit_sample.key)
    elif centroids.source_key in trial_keys or centroids.source_key == reference_key:
        raise ValueError("centroids were fit on an evaluation sample; the bound "
                         "requires independently fixed centroids")

    reference = expected_cost_mc(
        mother, None, None, centroids.psi, 400, 200, seed, feature_map=fmap
    )
    bound = lemma1_bound(N, n, delta)
    gaps = np.empty(trials)
    for t in range(trials):
        sample = sample_projected(mother, fmap, N, n, seed, "lemma1-trial", t)
        gaps[t] = abs(reference.value - empirical_cost(sample.phi, centroids.psi))
    fraction = float((gaps <= bound).mean())
    threshold = 1.0 - delta - 2.0 * math.sqrt(delta * (1.0 - delta) / trials)
    return Lemma1Report(
        fraction_ok=fraction,
        bound=bound,
        pass_threshold=threshold,
        passed=fraction >= threshold,
        expected_cost=reference.value,
        expected_stderr=reference.stderr,
        gaps=gaps,
        trials=trials,
        delta=delta,
    )


def sample_unit_ball(d: int, num_points: int, stream: Stream) -> np.ndarray:
    """Uniform points in the d-dimensional unit ball."""
    gauss = stream.normal_matrix(num_points, d)
    norms = np.sqrt((gauss**2).sum(axis=1, keepdims=True))
    norms[norms == 0.0] = 1.0
    radii = stream.uniforms(num_points) ** (1.0 / d)
    return gauss / norms * radii[:, None]


@dataclass
class CoveringReport:
    rows: list[dict]
    passed: bool


def covering_check(
    d: int, K_list, num_points: int, seed: int = 0, restarts: int = 20
) -> CoveringReport:
    """Check the unit-ball covering bound cost <= 3 / K^(1/d).

    Multi-restart k-means stands in for the optimal covering; the bound is
    loose, so a violation indicates an implementation error rather than an
    unlucky draw.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    points = sample_unit_ball(d, num_points, Stream(derive(seed, "covering", d)))
    rows = []
    for K in K_list:
        fitted, _ = kmeans_fit(
            points, int(K), Stream(derive(seed, "covering-fit", d, int(K))),
            restarts=restarts,
        )
        bound = 3.0 / float(K) ** (1.0 / d)
        rows.append(
            {
                "d": d,
                "K": int(K),
                "cost": fitted.final_cost,
                "bound": bound,
                "ok": fitted.final_cost <= bound,
            }
        )
    return CoveringReport(rows=rows, passed=all(r["ok"] for r in rows))


@dataclass
class DStarEstimate:
    d_star: float
    slope: float
    residual: float
    K_list: tuple[int, ...]
    costs: tuple[float, ...]


def estimate_d_star_from_points(
    points: np.ndarray, K_list, seed: int = 0, restarts: int = 20
) -> DStarEstimate:
    """Effective dimension from the decay of clustering cost with K.

    Fits log cost ~ log C - (1/d*) log K by least squares and returns
    d* = -1/slope along with the fit residual RMS.
    """
    K_list = tuple(int(K) for K in K_list)
    if len(K_list) < 3:
        raise ValueError("need at least 3 cluster counts")
    costs = []
    for K in K_list:
        fitted, _ = kmeans_fit(
            points, K, Stream(derive(seed, "dstar", K)), restarts=restarts
        )
        if fitted.final_cost <= 0.0:
            raise ValueError(
                "zero clustering cost (degenerate distribution); log-decay fit undefined"
            )
        costs.append(fitted.final_cost)
    log_k = np.log(np.asarray(K_list, dtype=np.float64))
    log_c = np.log(np.asarray(costs))
    slope, intercept = np.polyfit(log_k, log_c, 1)
    if slope >= 0.0:
        raise ValueError("no covering decay: clustering cost does not decrease with K")
    residual = float(np.sqrt(((log_c - (slope * log_k + intercept)) ** 2).mean()))
    return DStarEstimate(
        d_star=float(-1.0 / slope),
        slope=float(slope),
        residual=residual,
        K_list=K_list,
        costs=tuple(float(c) for c in costs),
    )


def estimate_d_star(
    mother: MotherDistribution,
    omega: ExtractorWeights,
    basis: SpectralBasis,
    K_list,
    seed: int = 0,
    num_domains: int = 48,
    points_per_domain: int = 64,
    restarts: int = 20,
    feature_map=None,
) -> DStarEstimate:
    """d* of the projected feature distribution under the mother."""
    fmap = _resolve_map(omega, basis, feature_map)
    sample = sample_projected(
        mother, fmap, num_domains, points_per_domain, seed, "dstar-sample"
    )
    return estimate_d_star_from_points(sample.phi, K_list, seed=seed, restarts=restarts)


def xor_pair_fraction(labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    """Fraction of unordered pairs agreeing in exactly one of two partitions."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape[0] != b.shape[0]:
        raise ValueError("partitions must have equal length")
    M = a.shape[0]
    if M < 2:
        raise ValueError("need at least 2 points")
    same_a = a[:, None] == a[None, :]
    same_b = b[:, None] == b[None, :]
    xor = same_a ^ same_b
    count = int(np.triu(xor, k=1).sum())
    return count / (M * (M - 1) // 2)


BAD_NEIGHBOR_LIMIT = 2000


def bad_neighbor_probability(
    sample: ProjectedSample, psi_star: np.ndarray, psi_tilde_star: np.ndarray
) -> float:
    """Exact fraction of bad-neighbor pairs in a small instance.

    A point's aggregated cluster is its nearest centroid in ``psi_star``;
    its domain cluster is the nearest centroid in ``psi_tilde_star`` of its
    domain's mean embedding. A pair is a bad neighbor when the two
    partitions disagree on exactly one side (XOR).
    """
    if sample.M > BAD_NEIGHBOR_LIMIT:
        raise ValueError(f"instance too large: M must be <= {BAD_NEIGHBOR_LIMIT}")
    agg_labels, _ = assign_all(sample.phi, psi_star)
    dom_ids = np.unique(sample.domains)
    means = np.vstack(
        [sample.phi[sample.domains == dom].mean(axis=0) for dom in dom_ids]
    )
    mean_labels, _ = assign_all(means, psi_tilde_star)
    lookup = dict(zip(dom_ids.tolist(), mean_labels.tolist()))
    dom_labels = np.array([lookup[int(d)] for d in sample.domains], dtype=np.int64)
    return xor_pair_fraction(agg_labels, dom_labels)


def sigma_p(
    mother: MotherDistribution,
    omega: ExtractorWeights,
    basis: SpectralBasis,
    mc_samples: int,
    seed: int = 0,
    feature_map=None,
) -> float:
    """Root-mean-square projected feature norm, E[||phi(x)||^2]^(1/2)."""
    if mc_samples < 100:
        raise ValueError("mc_samples must be at least 100")
    fmap = _resolve_map(omega, basis, feature_map)
    sample = sample_projected(mother, fmap, mc_samples, 1, seed, "sigma")
    return float(np.sqrt((sample.phi**2).sum(axis=1).mean()))


@dataclass(frozen=True)
class BoundInputs:
    K: int
    N: int
    n: int
    delta: float
    d_star: float
    constant_scale: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must be in (0, 1)")
        if self.d_star < 1.0:
            raise ValueError("d_star must be >= 1")
        if min(self.K, self.N, self.n) < 1:
            raise ValueError("K, N, n must be positive")
        if self.constant_scale <= 0:
            raise ValueError("constant_scale must be positive")


@dataclass(frozen=True)
class BoundTerms:
    term_cover: float
    term_n: float
    term_N: float
    total: float


def theorem1_terms(inputs: BoundInputs) -> BoundTerms:
    """The three bound terms, up to the unknown constant ``constant_scale``:

    C*K^(-1/d*)  +  C*sqrt(log(KN/delta)/n)  +  C*sqrt(log(nKN/delta)/N).
    """
    C = inputs.constant_scale
    term_cover = C * float(inputs.K) ** (-1.0 / inputs.d_star)
    term_n = C * math.sqrt(
        math.log(inputs.K * inputs.N / inputs.delta) / inputs.n
    )
    term_N = C * math.sqrt(
        math.log(inputs.n * inputs.K * inputs.N / inputs.delta) / inputs.N
    )
    return BoundTerms(
        term_cover=term_cover,
        term_n=term_n,
        term_N=term_N,
        total=term_cover + term_n + term_N,
    )


@dataclass
class CentroidTriple:
    """Estimated optimal centroids: pooled-population, domain-mean, and
    training-sample coverings."""

    psi_star: np.ndarray
    psi_tilde_star: np.ndarray
    psi_hat_star: np.ndarray
    metadata: dict = field(default_factory=dict)


def estimate_centroid_triple(
    mother: MotherDistribution,
    omega: ExtractorWeights,
    basis: SpectralBasis,
    K: int,
    n: int,
    N: int,
    seed: int = 0,
    restarts: int = 20,
    population_domains: int = 256,
    population_points: int = 48,
    feature_map=None,
) -> CentroidTriple:
    """Multi-restart k-means estimates of the three optimal centroid sets.

    The population covering uses a large pooled draw; the domain-wise
    covering clusters per-domain mean embeddings; the sample covering
    clusters one (N x n) training draw.
    """
    fmap = _resolve_map(omega, basis, feature_map)
    pooled = sample_projected(
        mother, fmap, population_domains, population_points, seed, "triple-pooled"
    )
    star, _ = kmeans_fit(
        pooled.phi, K, Stream(derive(seed, "triple-star")), restarts=restarts
    )
    means = pooled.phi.reshape(population_domains, population_points, -1).mean(axis=1)
    tilde, _ = kmeans_fit(
        means, K, Stream(derive(seed, "triple-tilde")), restarts=restarts
    )
    train = sample_projected(mother, fmap, N, n, seed, "triple-train")
    hat, _ = kmeans_fit(
        train.phi, K, Stream(derive(seed, "triple-hat")), restarts=restarts
    )
    return CentroidTriple(
        psi_star=star.psi,
        psi_tilde_star=tilde.psi,
        psi_hat_star=hat.psi,
        metadata={
            "restarts": restarts,
            "population_domains": population_domains,
            "population_points": population_points,
            "n": n,
            "N": N,
            "cost_star": star.final_cost,
            "cost_tilde": tilde.final_cost,
            "cost_hat": hat.final_cost,
        },
    )


def centroid_discrepancy(A: np.ndarray, B: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two centroid sets."""
    d2 = ((np.asarray(A)[:, None, :] - np.asarray(B)[None, :, :]) ** 2).sum(axis=2)
    return float(
        max(np.sqrt(d2.min(axis=1)).max(), np.sqrt(d2.min(axis=0)).max())
    )


def assumption2_rate(
    mother: MotherDistribution,
    omega: ExtractorWeights,
    basis: SpectralBasis,
    K: int,
    grid,
    seed: int = 0,
    restarts: int = 10,
    feature_map=None,
) -> list[dict]:
    """Sample-centroid discrepancy against the population covering over an
    (n, N) grid; reported next to 1/sqrt(nN) with no pass/fail (the
    constant in the approximation assumption is unknowable)."""
    fmap = _resolve_map(omega, basis, feature_map)
    pooled = sample_projected(mother, fmap, 256, 48, seed, "rate-pooled")
    star, _ = kmeans_fit(
        pooled.phi, K, Stream(derive(seed, "rate-star")), restarts=restarts
    )
    rows = []
    for n, N in grid:
        train = sample_projected(mother, fmap, N, n, seed, "rate-train", int(n), int(N))
        hat, _ = kmeans_fit(
            train.phi, K, Stream(derive(seed, "rate-hat", int(n), int(N))),
            restarts=restarts,
        )
        rows.append(
            {
                "n": int(n),
                "N": int(N),
                "discrepancy": centroid_discrepancy(star.psi, hat.psi),
                "inv_sqrt_nN": 1.0 / math.sqrt(n * N),
            }
        )
    return rows
