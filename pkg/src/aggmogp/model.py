"""Model state and the aggregated-observation covariance machinery.

The generative story per domain: each latent process has a unit-variance
squared exponential kernel shared across domains; every attribute mixes
the latents with a weight row; an observation is the aggregation of the
mixed process over one support plus independent Gaussian noise. With the
latent processes integrated out, the observations of one domain are
jointly Gaussian with covariance

    C[(s,n),(s',n')] = sum_l w[s,l] w[s',l] * SupportCov_l(R_sn, R_s'n')
                       + delta(s,s') delta(n,n') * noise_var[s]

where SupportCov_l integrates kernel l against both supports' aggregation
weights. Weight rows get a Gaussian prior shared across domains; training
maximizes the evidence lower bound over a factorized Gaussian posterior
for the weights (see the inference module).

Average-rule interval supports on 1-D domains use the closed-form erf
integrals; every other support goes through grid sums, grouped by exact
squared distance where the weights are constant.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from . import geometry, utils
from .errors import CholeskyFailure, DataError, DimensionMismatch
from .geometry import AggregationRule, Domain, Interval, Partition
from .kernels import (
    DistanceHistogram,
    KernelSet,
    se_antideriv2,
    se_antideriv2_dlog,
    se_value,
    se_value_dlog,
)

_LOG_2PI = np.log(2.0 * np.pi)

# All variances are optimized as exponents and floored here.
VARIANCE_FLOOR = 1e-12
LOG_VARIANCE_FLOOR = float(np.log(VARIANCE_FLOOR))

# Base jitter relative to the mean diagonal, escalated tenfold on failure.
JITTER_BASE = 1e-8
JITTER_MAX = 1e-4


def floor_var(log_var):
    """Variance from its exponent, floored at :data:`VARIANCE_FLOOR`."""
    return np.exp(np.maximum(np.asarray(log_var, dtype=float), LOG_VARIANCE_FLOOR))


def floor_active(log_var):
    """1.0 where the exponent is above the floor (gradient mask), else 0.0."""
    return (np.asarray(log_var, dtype=float) > LOG_VARIANCE_FLOOR).astype(float)


def sample_weights(q_mean, q_log_var, eps) -> np.ndarray:
    """Reparameterized weight draw: mean + eps * sqrt(floored variance)."""
    q_mean = np.asarray(q_mean, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if eps.shape != q_mean.shape:
        raise DimensionMismatch(
            f"eps draw of shape {eps.shape} against weights of shape {q_mean.shape}"
        )
    return q_mean + eps * np.sqrt(floor_var(q_log_var))


def kl_weights(q_mean, q_log_var, p_mean, p_log_var) -> float:
    """KL divergence between factorized Gaussian weight distributions.

    Sums the per-entry closed form over whatever shape is passed in; the
    floored exponents are used directly so the log-variance difference is
    exact.
    """
    q_mean = np.asarray(q_mean, dtype=float)
    p_mean = np.asarray(p_mean, dtype=float)
    lq = np.maximum(np.asarray(q_log_var, dtype=float), LOG_VARIANCE_FLOOR)
    lp = np.maximum(np.asarray(p_log_var, dtype=float), LOG_VARIANCE_FLOOR)
    vq = np.exp(lq)
    vp = np.exp(lp)
    dm = q_mean - p_mean
    terms = 0.5 * ((vq + dm * dm) / vp - 1.0 + lp - lq)
    return float(np.sum(terms))


def chol_with_jitter(C: np.ndarray):
    """Lower Cholesky factor of C plus escalating diagonal jitter.

    Jitter starts at ``1e-8 * mean(diag)`` and grows tenfold per failed
    attempt up to ``1e-4 * mean(diag)``; then :class:`CholeskyFailure`.
    Returns ``(L, jitter)``.
    """
    C = np.asarray(C, dtype=float)
    if not np.all(np.isfinite(C)):
        raise CholeskyFailure("covariance contains non-finite entries")
    mean_diag = float(np.mean(np.diag(C)))
    if not np.isfinite(mean_diag) or mean_diag <= 0:
        raise CholeskyFailure(f"covariance mean diagonal {mean_diag} is unusable")
    mult = JITTER_BASE
    while True:
        jitter = mult * mean_diag
        try:
            L = scipy.linalg.cholesky(
                C + jitter * np.eye(C.shape[0]), lower=True, check_finite=False
            )
            return L, jitter
        except scipy.linalg.LinAlgError:
            if mult >= JITTER_MAX:
                raise CholeskyFailure(
                    f"factorization failed at jitter {jitter:.3e}"
                ) from None
            mult *= 10.0


def log_likelihood(y: np.ndarray, C: np.ndarray) -> float:
    """Log density of a zero-mean Gaussian, via jittered Cholesky."""
    y = np.asarray(y, dtype=float)
    L, _ = chol_with_jitter(C)
    alpha = scipy.linalg.cho_solve((L, True), y, check_finite=False)
    return float(
        -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * y.size * _LOG_2PI
    )


@dataclass(frozen=True)
class DatasetRecord:
    """One aggregated observation series: a (domain, attribute) pair.

    ``rules`` holds one aggregation rule per support. ``as_points`` marks
    the record as point observations taken at the support centroids,
    which is how the centroid baseline reuses the machinery.
    """

    domain_id: str
    attribute_id: str
    partition: Partition
    rules: tuple[AggregationRule, ...]
    values: np.ndarray
    label: str | None = None
    as_points: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "rules", tuple(self.rules))
        if self.partition.domain_id != self.domain_id:
            raise DataError(
                f"record for domain {self.domain_id!r} carries a partition"
                f" of domain {self.partition.domain_id!r}"
            )
        if self.partition.attribute_id != self.attribute_id:
            raise DataError(
                f"record for attribute {self.attribute_id!r} carries a partition"
                f" of attribute {self.partition.attribute_id!r}"
            )
        n = len(self.partition.supports)
        if values.ndim != 1 or values.size != n:
            raise DataError(
                f"record {self.domain_id}/{self.attribute_id}: {values.size}"
                f" values against {n} supports"
            )
        if not np.all(np.isfinite(values)):
            raise DataError(
                f"record {self.domain_id}/{self.attribute_id} has non-finite values"
            )
        if len(self.rules) != n:
            raise DataError(
                f"record {self.domain_id}/{self.attribute_id}: {len(self.rules)}"
                f" rules against {n} supports"
            )

    @property
    def key(self) -> tuple[str, str]:
        return (self.domain_id, self.attribute_id)


def uniform_rules(partition: Partition, rule: AggregationRule | None = None):
    """One shared rule per support (averaging by default)."""
    rule = geometry.AVERAGE if rule is None else rule
    return tuple(rule for _ in partition.supports)


class _SupportGeom:
    """Cached per-support geometry used by covariance assembly."""

    __slots__ = (
        "support",
        "rule",
        "closed_form",
        "interval",
        "members",
        "coords",
        "weights",
        "const_weight",
        "index_based",
    )

    def __init__(self, domain: Domain, support, rule: AggregationRule, as_point: bool):
        self.support = support
        self.rule = rule
        if as_point:
            # Point observation at the centroid; weights collapse to one.
            self.closed_form = False
            self.interval = None
            self.members = None
            self.coords = geometry.centroid(support, domain.grid)[None, :]
            self.weights = np.ones(1)
            self.const_weight = 1.0
            self.index_based = False
            return
        members = geometry.membership(support, domain.grid)
        weights = geometry.weight_vector(support, domain.grid, rule)
        self.members = members
        self.coords = domain.grid.points[members]
        self.weights = weights
        self.index_based = True
        self.const_weight = (
            float(weights[0]) if rule.constant_weight else None
        )
        body = support.body
        self.closed_form = (
            domain.ndim == 1
            and isinstance(body, Interval)
            and rule.kind == AggregationRule.AVERAGE
        )
        self.interval = body if isinstance(body, Interval) else None


class SupportCovTable:
    """Precomputed pair structure for one domain's support covariances.

    Pairs where both sides are closed-form (1-D averaged intervals) store
    the four antiderivative arguments; every other pair is reduced to
    coefficients over distinct squared distances, using exact index
    arithmetic whenever both sides live on the grid with constant
    weights.
    """

    def __init__(self, domain: Domain, geoms: list[_SupportGeom]):
        self.n = len(geoms)
        cf_rows, cf_cols, cf_z, cf_norm = [], [], [], []
        fl_rows, fl_cols = [], []
        fl_d2, fl_coef, fl_len = [], [], []
        for i in range(self.n):
            gi = geoms[i]
            for j in range(i, self.n):
                gj = geoms[j]
                if gi.closed_form and gj.closed_form:
                    a, b = gi.interval.lo, gi.interval.hi
                    c, d = gj.interval.lo, gj.interval.hi
                    cf_rows.append(i)
                    cf_cols.append(j)
                    cf_z.append((b - c, a - c, b - d, a - d))
                    cf_norm.append(1.0 / (gi.interval.length * gj.interval.length))
                    continue
                if (
                    gi.index_based
                    and gj.index_based
                    and gi.const_weight is not None
                    and gj.const_weight is not None
                ):
                    hist = DistanceHistogram.from_member_indices(
                        domain.grid, gi.members, gj.members
                    )
                    d2 = hist.sq_dists
                    coef = hist.counts * (gi.const_weight * gj.const_weight)
                else:
                    diff = gi.coords[:, None, :] - gj.coords[None, :, :]
                    d2_full = (diff * diff).sum(axis=2)
                    pair_w = np.outer(gi.weights, gj.weights)
                    d2, inverse = np.unique(d2_full.ravel(), return_inverse=True)
                    coef = np.bincount(
                        inverse, weights=pair_w.ravel(), minlength=d2.size
                    )
                fl_rows.append(i)
                fl_cols.append(j)
                fl_d2.append(d2)
                fl_coef.append(coef)
                fl_len.append(d2.size)
        self.cf_rows = np.array(cf_rows, dtype=np.int64)
        self.cf_cols = np.array(cf_cols, dtype=np.int64)
        self.cf_z = (
            np.array(cf_z, dtype=float).T if cf_z else np.zeros((4, 0))
        )
        self.cf_norm = np.array(cf_norm, dtype=float)
        self.fl_rows = np.array(fl_rows, dtype=np.int64)
        self.fl_cols = np.array(fl_cols, dtype=np.int64)
        if fl_d2:
            self.fl_d2 = np.concatenate(fl_d2)
            self.fl_coef = np.concatenate(fl_coef)
            self.fl_ptr = np.concatenate([[0], np.cumsum(fl_len)]).astype(np.int64)
        else:
            self.fl_d2 = np.zeros(0)
            self.fl_coef = np.zeros(0)
            self.fl_ptr = np.zeros(1, dtype=np.int64)

    def _fill(self, out, rows, cols, vals):
        out[rows, cols] = vals
        out[cols, rows] = vals

    def latent_cov(self, length_scale: float, with_grad: bool = False):
        """Support covariance matrix for one kernel, optionally with its
        derivative with respect to the log length scale."""
        S = np.zeros((self.n, self.n))
        dS = np.zeros((self.n, self.n)) if with_grad else None
        if self.cf_rows.size:
            z1, z2, z3, z4 = self.cf_z
            vals = (
                (se_antideriv2(z1, length_scale) + se_antideriv2(z4, length_scale))
                - (se_antideriv2(z2, length_scale) + se_antideriv2(z3, length_scale))
            ) * self.cf_norm
            self._fill(S, self.cf_rows, self.cf_cols, vals)
            if with_grad:
                dvals = (
                    (
                        se_antideriv2_dlog(z1, length_scale)
                        + se_antideriv2_dlog(z4, length_scale)
                    )
                    - (
                        se_antideriv2_dlog(z2, length_scale)
                        + se_antideriv2_dlog(z3, length_scale)
                    )
                ) * self.cf_norm
                self._fill(dS, self.cf_rows, self.cf_cols, dvals)
        if self.fl_rows.size:
            contrib = self.fl_coef * se_value(self.fl_d2, length_scale)
            sums = np.add.reduceat(contrib, self.fl_ptr[:-1])
            self._fill(S, self.fl_rows, self.fl_cols, sums)
            if with_grad:
                dcontrib = self.fl_coef * se_value_dlog(self.fl_d2, length_scale)
                dsums = np.add.reduceat(dcontrib, self.fl_ptr[:-1])
                self._fill(dS, self.fl_rows, self.fl_cols, dsums)
        return (S, dS) if with_grad else S


class DomainData:
    """One domain's observations prepared for covariance assembly.

    Rows are stacked attribute-major: all supports of the first local
    attribute, then the second, and so on, matching the attribute order
    of the global catalogue.
    """

    def __init__(self, domain: Domain, records, normalized_values):
        self.domain = domain
        self.records = tuple(records)
        self.attr_ids = tuple(r.attribute_id for r in self.records)
        geoms: list[_SupportGeom] = []
        y_parts = []
        blocks = []
        block_of_row = []
        start = 0
        for a_idx, (rec, y_norm) in enumerate(zip(self.records, normalized_values)):
            for s_idx, support in enumerate(rec.partition.supports):
                geoms.append(
                    _SupportGeom(domain, support, rec.rules[s_idx], rec.as_points)
                )
                block_of_row.append(a_idx)
            y_parts.append(np.asarray(y_norm, dtype=float))
            n = len(rec.partition.supports)
            blocks.append(slice(start, start + n))
            start += n
        self.geoms = geoms
        self.y = np.concatenate(y_parts) if y_parts else np.zeros(0)
        self.blocks = tuple(blocks)
        self.block_of_row = np.array(block_of_row, dtype=np.int64)
        self.n_obs = start
        self.cov = SupportCovTable(domain, geoms)

    @property
    def n_attrs(self) -> int:
        return len(self.attr_ids)

    def expand_rows(self, per_attr: np.ndarray) -> np.ndarray:
        """Spread per-attribute values onto observation rows."""
        return np.asarray(per_attr)[self.block_of_row]

    def reduce_rows(self, per_row: np.ndarray) -> np.ndarray:
        """Sum observation-row values into per-attribute totals."""
        return np.bincount(
            self.block_of_row, weights=np.asarray(per_row), minlength=self.n_attrs
        )


class AggregatedDataset:
    """Validated collection of aggregated observation series.

    At most one record per (domain, attribute) pair; geometry is fully
    validated on construction; values are normalized per pair to zero
    mean and unit variance (population variance), with the transform kept
    for later denormalization. Zero-variance series keep scale 1 so the
    flat-field degenerate case stays representable.
    """

    def __init__(self, domains, attributes, records, transforms=None):
        self.domains: dict[str, Domain] = dict(domains)
        self.attributes = tuple(attributes)
        self.records = tuple(records)
        if len(set(self.attributes)) != len(self.attributes):
            raise DataError("duplicate attribute ids in catalogue")
        seen = set()
        by_domain: dict[str, list[DatasetRecord]] = {}
        for rec in self.records:
            if rec.domain_id not in self.domains:
                raise DataError(f"record references unknown domain {rec.domain_id!r}")
            if rec.attribute_id not in self.attributes:
                raise DataError(
                    f"record references unknown attribute {rec.attribute_id!r}"
                )
            if rec.key in seen:
                raise DataError(
                    f"multiple records for pair {rec.key}; one partition per"
                    " (domain, attribute) pair"
                )
            seen.add(rec.key)
            by_domain.setdefault(rec.domain_id, []).append(rec)
        for domain_id, recs in by_domain.items():
            geometry.validate(self.domains[domain_id], [r.partition for r in recs])
        attr_rank = {a: i for i, a in enumerate(self.attributes)}
        self._by_domain = {
            v: tuple(sorted(recs, key=lambda r: attr_rank[r.attribute_id]))
            for v, recs in by_domain.items()
        }
        if transforms is None:
            transforms = {}
            for rec in self.records:
                mean = float(rec.values.mean())
                scale = float(rec.values.std())
                if scale < 1e-15:
                    scale = 1.0
                transforms[rec.key] = (mean, scale)
        else:
            transforms = {k: (float(m), float(s)) for k, (m, s) in transforms.items()}
            for rec in self.records:
                if rec.key not in transforms:
                    raise DataError(f"missing normalization transform for {rec.key}")
        self.transforms = transforms
        self._prepared: dict[str, DomainData] = {}

    def domain_order(self) -> tuple[str, ...]:
        """Domains that carry records, in catalogue (insertion) order."""
        return tuple(v for v in self.domains if v in self._by_domain)

    def attributes_in(self, domain_id: str) -> tuple[str, ...]:
        return tuple(r.attribute_id for r in self._by_domain.get(domain_id, ()))

    def record_for(self, domain_id: str, attribute_id: str) -> DatasetRecord:
        for rec in self._by_domain.get(domain_id, ()):
            if rec.attribute_id == attribute_id:
                return rec
        raise DataError(f"no record for pair {(domain_id, attribute_id)}")

    def normalized(self, rec: DatasetRecord) -> np.ndarray:
        mean, scale = self.transforms[rec.key]
        return (rec.values - mean) / scale

    def denormalize(self, domain_id, attribute_id, values, variances=None):
        """Map normalized predictions back to original units."""
        mean, scale = self.transforms[(domain_id, attribute_id)]
        values = np.asarray(values) * scale + mean
        if variances is None:
            return values
        return values, np.asarray(variances) * scale * scale

    def prepared(self, domain_id: str) -> DomainData:
        if domain_id not in self._prepared:
            if domain_id not in self.domains:
                raise DataError(f"unknown domain {domain_id!r}")
            recs = self._by_domain.get(domain_id, ())
            self._prepared[domain_id] = DomainData(
                self.domains[domain_id],
                recs,
                [self.normalized(r) for r in recs],
            )
        return self._prepared[domain_id]

    @property
    def total_attribute_count(self) -> int:
        """Number of (domain, attribute) series, the S of model selection."""
        return len(self.records)

    def replace_records(self, records) -> "AggregatedDataset":
        """Same catalogues and transforms, different records."""
        return AggregatedDataset(
            self.domains, self.attributes, records, transforms=self.transforms
        )

    def as_point_observations(self) -> "AggregatedDataset":
        """Every record recast as point observations at support centroids."""
        return self.replace_records(
            [replace(rec, as_points=True) for rec in self.records]
        )

    def drop_observation(self, domain_id, attribute_id, support_idx):
        """LOO view: one support and its value removed from one record.

        Records with a single support cannot be reduced (the partition
        must stay non-empty). Transforms are inherited unchanged, so the
        held-out value keeps its original normalization.
        """
        target = self.record_for(domain_id, attribute_id)
        supports = list(target.partition.supports)
        if len(supports) < 2:
            raise DataError(
                f"cannot hold out the only observation of pair"
                f" {(domain_id, attribute_id)}"
            )
        if not (0 <= support_idx < len(supports)):
            raise DataError(f"support index {support_idx} out of range")
        held_support = supports.pop(support_idx)
        part = Partition(
            attribute_id=target.attribute_id,
            domain_id=target.domain_id,
            supports=tuple(supports),
        )
        rules = tuple(
            r for k, r in enumerate(target.rules) if k != support_idx
        )
        values = np.delete(target.values, support_idx)
        reduced = replace(
            target, partition=part, rules=rules, values=values
        )
        records = [reduced if r is target else r for r in self.records]
        held = DatasetRecord(
            domain_id=domain_id,
            attribute_id=attribute_id,
            partition=Partition(
                attribute_id=attribute_id,
                domain_id=domain_id,
                supports=(held_support,),
            ),
            rules=(target.rules[support_idx],),
            values=np.array([target.values[support_idx]]),
            as_points=target.as_points,
        )
        return self.replace_records(records), held


@dataclass
class ModelState:
    """All free parameters plus the catalogue bookkeeping to index them.

    Weight priors are indexed by the global attribute catalogue and are
    shared across domains; variational weights and noise are per domain,
    covering only attributes that domain observes. Variances live as
    exponents (see :func:`floor_var`).
    """

    attributes: tuple[str, ...]
    domain_ids: tuple[str, ...]
    domain_attributes: dict[str, tuple[str, ...]]
    num_latents: int
    log_length_scales: np.ndarray
    prior_mean: np.ndarray
    prior_log_var: np.ndarray
    q_mean: dict[str, np.ndarray]
    q_log_var: dict[str, np.ndarray]
    noise_log_var: dict[str, np.ndarray]

    def __post_init__(self):
        S, L = len(self.attributes), self.num_latents
        if self.log_length_scales.shape != (L,):
            raise DimensionMismatch("log_length_scales must have one entry per latent")
        if self.prior_mean.shape != (S, L) or self.prior_log_var.shape != (S, L):
            raise DimensionMismatch("prior arrays must be (attributes, latents)")
        for v in self.domain_ids:
            Sv = len(self.domain_attributes[v])
            if self.q_mean[v].shape != (Sv, L) or self.q_log_var[v].shape != (Sv, L):
                raise DimensionMismatch(f"variational arrays for {v!r} misshaped")
            if self.noise_log_var[v].shape != (Sv,):
                raise DimensionMismatch(f"noise array for {v!r} misshaped")

    @property
    def kernels(self) -> KernelSet:
        return KernelSet.from_log_length_scales(self.log_length_scales)

    def attr_rows(self, domain_id: str) -> np.ndarray:
        """Global catalogue row per local attribute of a domain."""
        rank = {a: i for i, a in enumerate(self.attributes)}
        return np.array(
            [rank[a] for a in self.domain_attributes[domain_id]], dtype=np.int64
        )

    def draw_weights(self, domain_id: str, eps: np.ndarray) -> np.ndarray:
        return sample_weights(
            self.q_mean[domain_id], self.q_log_var[domain_id], eps
        )

    def copy(self) -> "ModelState":
        return ModelState(
            attributes=self.attributes,
            domain_ids=self.domain_ids,
            domain_attributes={v: t for v, t in self.domain_attributes.items()},
            num_latents=self.num_latents,
            log_length_scales=self.log_length_scales.copy(),
            prior_mean=self.prior_mean.copy(),
            prior_log_var=self.prior_log_var.copy(),
            q_mean={v: a.copy() for v, a in self.q_mean.items()},
            q_log_var={v: a.copy() for v, a in self.q_log_var.items()},
            noise_log_var={v: a.copy() for v, a in self.noise_log_var.items()},
        )

    # Flat parameter vector layout, in order: log length scales, prior
    # means, prior log variances, then per domain (catalogue order) the
    # variational means, variational log variances and noise exponents.

    def pack(self) -> np.ndarray:
        parts = [
            self.log_length_scales.ravel(),
            self.prior_mean.ravel(),
            self.prior_log_var.ravel(),
        ]
        for v in self.domain_ids:
            parts.extend(
                [
                    self.q_mean[v].ravel(),
                    self.q_log_var[v].ravel(),
                    self.noise_log_var[v].ravel(),
                ]
            )
        return np.concatenate(parts)

    def unpack(self, vector: np.ndarray) -> "ModelState":
        """New state with parameters taken from a flat vector."""
        vector = np.asarray(vector, dtype=float)
        out = self.copy()
        pos = 0

        def take(shape):
            nonlocal pos
            size = int(np.prod(shape))
            chunk = vector[pos : pos + size].reshape(shape).copy()
            pos += size
            return chunk

        S, L = len(self.attributes), self.num_latents
        out.log_length_scales = take((L,))
        out.prior_mean = take((S, L))
        out.prior_log_var = take((S, L))
        for v in self.domain_ids:
            Sv = len(self.domain_attributes[v])
            out.q_mean[v] = take((Sv, L))
            out.q_log_var[v] = take((Sv, L))
            out.noise_log_var[v] = take((Sv,))
        if pos != vector.size:
            raise DimensionMismatch(
                f"parameter vector of length {vector.size}, expected {pos}"
            )
        return out

    @property
    def n_params(self) -> int:
        return self.pack().size


def init_state(
    dataset: AggregatedDataset, num_latents: int, seed: int = 0
) -> ModelState:
    """Deterministic initial state for a dataset.

    Length scales start at a fifth of the largest domain-axis extent with
    a ten percent deterministic stagger per latent; weight priors start
    standard normal; variational means get small seeded draws so latents
    can specialize; variational variances start at 0.01 and noise at 0.1
    (data is normalized to unit variance).
    """
    if num_latents < 1:
        raise ValueError("num_latents must be >= 1")
    domain_ids = dataset.domain_order()
    if not domain_ids:
        raise DataError("dataset has no observation records")
    span = max(
        dataset.domains[v].axis_span(d)
        for v in domain_ids
        for d in range(dataset.domains[v].ndim)
    )
    base = 0.2 * span
    if num_latents == 1:
        stagger = np.zeros(1)
    else:
        stagger = np.linspace(-1.0, 1.0, num_latents)
    scales = base * (1.0 + 0.1 * stagger)
    # Substream 0 of the seed is reserved for initialization draws.
    rng = utils.stream(seed, 0)
    S = len(dataset.attributes)
    q_mean, q_log_var, noise_log_var = {}, {}, {}
    for v in domain_ids:
        Sv = len(dataset.attributes_in(v))
        q_mean[v] = 0.1 * rng.standard_normal((Sv, num_latents))
        q_log_var[v] = np.full((Sv, num_latents), np.log(0.01))
        noise_log_var[v] = np.full(Sv, np.log(0.1))
    return ModelState(
        attributes=dataset.attributes,
        domain_ids=domain_ids,
        domain_attributes={v: dataset.attributes_in(v) for v in domain_ids},
        num_latents=num_latents,
        log_length_scales=np.log(scales),
        prior_mean=np.zeros((S, num_latents)),
        prior_log_var=np.zeros((S, num_latents)),
        q_mean=q_mean,
        q_log_var=q_log_var,
        noise_log_var=noise_log_var,
    )


def override_length_scales(state: ModelState, length_scales) -> ModelState:
    """Replace the kernel initialization in place (one scale per latent)."""
    arr = np.asarray(length_scales, dtype=float)
    if arr.shape != state.log_length_scales.shape:
        raise DimensionMismatch(
            f"{arr.size} length scales for {state.num_latents} latents"
        )
    if np.any(arr <= 0):
        raise ValueError("length scales must be positive")
    state.log_length_scales = np.log(arr)
    return state


def assemble_from_latents(
    domain_data: DomainData,
    weights: np.ndarray,
    latent_covs,
    noise_log_var: np.ndarray,
) -> np.ndarray:
    """Observation covariance from precomputed per-latent support covariances."""
    W = np.asarray(weights, dtype=float)
    if W.shape != (domain_data.n_attrs, len(latent_covs)):
        raise DimensionMismatch(
            f"weight sample of shape {W.shape}, expected"
            f" {(domain_data.n_attrs, len(latent_covs))}"
        )
    N = domain_data.n_obs
    C = np.zeros((N, N))
    for l, S_l in enumerate(latent_covs):
        u = domain_data.expand_rows(W[:, l])
        C += (u[:, None] * u[None, :]) * S_l
    C = 0.5 * (C + C.T)
    sig = domain_data.expand_rows(floor_var(noise_log_var))
    C[np.diag_indices(N)] += sig
    return C


def assemble_C(
    domain_data: DomainData,
    weights: np.ndarray,
    kernels: KernelSet,
    noise_log_var: np.ndarray,
) -> np.ndarray:
    """Observation covariance of one domain for a fixed weight sample.

    ``weights`` is the (local attributes, latents) sample, ``noise_log_var``
    the per-local-attribute noise exponents. The result is symmetrized
    exactly and does not include factorization jitter; jitter enters at
    factorization time (:func:`chol_with_jitter`).
    """
    scales = kernels.length_scales
    latent_covs = [domain_data.cov.latent_cov(s) for s in scales]
    return assemble_from_latents(domain_data, weights, latent_covs, noise_log_var)
