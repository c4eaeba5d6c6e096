"""Posterior prediction at points and aggregated onto supports.

For a fixed weight sample the latent mixture is a Gaussian process, so
the posterior over query values given one domain's aggregated
observations is Gaussian with the usual conditioning formulas; the
cross covariance between an observation row and a query point integrates
the kernel against that row's aggregation weights. Uncertainty over the
weights is handled by Monte Carlo: draw weight samples from the fitted
variational posterior, condition per sample, then pool the Gaussian
components into a single mean and covariance (mixture moments).

Aggregated predictions pool the point posterior over a target support's
member grid points with the target rule's weights. Pooled covariance
blocks are computed per support, so the full query-cross-query matrix is
only materialized when a caller asks for it.

Weight draws for prediction come from substream 3 of the prediction
seed: one (local attributes, latents) standard-normal block per
component, domains not involved (prediction is per domain). The same
seed therefore draws the same samples in every prediction helper.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import geometry, utils
from .errors import DataError, DimensionMismatch, OutOfBounds
from .geometry import Domain, Partition
from .kernels import KernelSet, se_point_interval, se_value
from .model import (
    AggregatedDataset,
    DomainData,
    ModelState,
    assemble_C,
    chol_with_jitter,
)

# Pooled variances below this are reported through the clamp counter.
_CLAMP_TOL = -1e-10


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)


def _as_query_array(query_points, domain: Domain) -> np.ndarray:
    q = np.asarray(query_points, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    if q.ndim != 2 or q.shape[1] != domain.ndim:
        raise DimensionMismatch(
            f"query points of shape {q.shape} on a {domain.ndim}-D domain"
        )
    for d, (lo, hi) in enumerate(domain.extent):
        tol = 1e-9 * max(hi - lo, 1.0)
        axis = q[:, d]
        if np.any(axis < lo - tol) or np.any(axis > hi + tol):
            raise OutOfBounds(
                f"query points leave the extent of domain {domain.id!r}"
                f" on axis {d}"
            )
    return q


def latent_point_support(
    domain_data: DomainData, query: np.ndarray, length_scale: float
) -> np.ndarray:
    """Integrals of one kernel against every observation row's weights.

    Returns an (observation rows, query points) array; closed-form rows
    use the erf integral, everything else sums the kernel over member
    points.
    """
    n_q = query.shape[0]
    out = np.empty((domain_data.n_obs, n_q))
    for row, geom in enumerate(domain_data.geoms):
        if geom.closed_form:
            iv = geom.interval
            out[row] = (
                se_point_interval(query[:, 0], iv.lo, iv.hi, length_scale)
                / iv.length
            )
        else:
            vals = se_value(_sq_dists(geom.coords, query), length_scale)
            out[row] = geom.weights @ vals
    return out


def cross_cov_H(
    query_points,
    domain_data: DomainData,
    weights: np.ndarray,
    kernels: KernelSet,
    attr_indices=None,
) -> np.ndarray:
    """Covariance between observation rows and query values.

    Columns are attribute-major: for each selected local attribute
    (default all, in order) one block of ``len(query_points)`` columns.
    ``attr_indices`` selects local attribute rows of ``weights``.
    """
    W = np.asarray(weights, dtype=float)
    query = _as_query_array(query_points, domain_data.domain)
    if attr_indices is None:
        attr_indices = np.arange(domain_data.n_attrs)
    attr_indices = np.asarray(attr_indices, dtype=np.int64)
    n_q = query.shape[0]
    H = np.zeros((domain_data.n_obs, attr_indices.size * n_q))
    scales = kernels.length_scales
    for l in range(len(kernels)):
        h_l = latent_point_support(domain_data, query, scales[l])
        u_l = domain_data.expand_rows(W[:, l])
        weighted = u_l[:, None] * h_l
        for k, s_idx in enumerate(attr_indices):
            H[:, k * n_q : (k + 1) * n_q] += W[s_idx, l] * weighted
    return H


def _prior_gram(query, W, attr_indices, kernels):
    """Prior covariance of query values across selected attributes."""
    n_q = query.shape[0]
    n_a = attr_indices.size
    d2 = _sq_dists(query, query)
    out = np.zeros((n_a * n_q, n_a * n_q))
    for l, scale in enumerate(kernels.length_scales):
        G_l = se_value(d2, scale)
        w = W[attr_indices, l]
        out += np.kron(np.outer(w, w), G_l)
    return out


@dataclass
class ConditionalPosterior:
    """Gaussian posterior over query values for one weight sample.

    ``mean`` has one entry per (selected attribute, query point) in
    attribute-major order; ``cov`` is the matching square matrix.
    """

    mean: np.ndarray
    cov: np.ndarray
    n_query: int
    attr_ids: tuple[str, ...]


def _local_attr_indices(state, domain_data, attributes):
    # The state is the authority on modeled attributes; it agrees with
    # the record-derived order and still works when the domain carries no
    # observations at all (pure prior prediction).
    domain_id = domain_data.domain.id
    if domain_id not in state.domain_attributes:
        raise DataError(f"domain {domain_id!r} is not part of the fitted model")
    local = list(state.domain_attributes[domain_id])
    if attributes is None:
        wanted = local
    else:
        wanted = list(attributes)
    idx = []
    for a in wanted:
        if a not in local:
            raise DataError(
                f"attribute {a!r} is not modeled on domain"
                f" {domain_data.domain.id!r}"
            )
        idx.append(local.index(a))
    return np.asarray(idx, dtype=np.int64), tuple(wanted)


def conditional_posterior(
    query_points,
    weights: np.ndarray,
    state: ModelState,
    dataset: AggregatedDataset,
    domain_id: str,
    attributes=None,
) -> ConditionalPosterior:
    """Exact Gaussian conditioning for one fixed weight sample.

    With no observations in the domain the prior is returned unchanged.
    Small negative diagonal entries from the subtraction are clamped to
    zero.
    """
    dd = dataset.prepared(domain_id)
    query = _as_query_array(query_points, dd.domain)
    attr_idx, attr_ids = _local_attr_indices(state, dd, attributes)
    kernels = state.kernels
    W = np.asarray(weights, dtype=float)
    prior = _prior_gram(query, W, attr_idx, kernels)
    if dd.n_obs == 0:
        return ConditionalPosterior(
            mean=np.zeros(prior.shape[0]),
            cov=prior,
            n_query=query.shape[0],
            attr_ids=attr_ids,
        )
    C = assemble_C(dd, W, kernels, state.noise_log_var[domain_id])
    chol, _ = chol_with_jitter(C)
    H = cross_cov_H(query, dd, W, kernels, attr_idx)
    alpha = scipy.linalg.cho_solve((chol, True), dd.y, check_finite=False)
    solved = scipy.linalg.cho_solve((chol, True), H, check_finite=False)
    mean = H.T @ alpha
    cov = prior - H.T @ solved
    diag = np.diag(cov).copy()
    np.fill_diagonal(cov, np.maximum(diag, 0.0))
    return ConditionalPosterior(
        mean=mean, cov=cov, n_query=query.shape[0], attr_ids=attr_ids
    )


@dataclass
class PredictiveMixture:
    """Pooled moments of per-sample Gaussian posteriors.

    ``pooled_cov`` is the mixture covariance: mean of component second
    moments minus the outer product of the pooled mean. ``clamped``
    counts pooled variances that came out negative beyond roundoff.
    """

    components: tuple[ConditionalPosterior, ...]
    pooled_mean: np.ndarray
    pooled_cov: np.ndarray
    clamped: int


def draw_weight_samples(
    state: ModelState, domain_id: str, n_samples: int, seed: int
) -> list[np.ndarray]:
    """Reparameterized weight draws used by every prediction helper."""
    rng = utils.stream(seed, 3)
    Sv = len(state.domain_attributes[domain_id])
    return [
        state.draw_weights(
            domain_id, rng.standard_normal((Sv, state.num_latents))
        )
        for _ in range(n_samples)
    ]


def predictive_mixture(
    query_points,
    state: ModelState,
    dataset: AggregatedDataset,
    domain_id: str,
    n_samples: int,
    seed: int,
    attributes=None,
) -> PredictiveMixture:
    """Monte Carlo predictive distribution over query values."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    samples = draw_weight_samples(state, domain_id, n_samples, seed)
    # Components are independent given their draws; pooling below keeps
    # the fixed component order regardless of worker count.
    components = tuple(
        utils.parallel_map(
            lambda W: conditional_posterior(
                query_points, W, state, dataset, domain_id, attributes
            ),
            samples,
        )
    )
    means = np.stack([c.mean for c in components])
    pooled_mean = means.mean(axis=0)
    second = np.zeros_like(components[0].cov)
    for c in components:
        second += c.cov + np.outer(c.mean, c.mean)
    second /= n_samples
    pooled_cov = second - np.outer(pooled_mean, pooled_mean)
    diag = np.diag(pooled_cov).copy()
    clamped = int(np.sum(diag < _CLAMP_TOL))
    np.fill_diagonal(pooled_cov, np.maximum(diag, 0.0))
    return PredictiveMixture(
        components=components,
        pooled_mean=pooled_mean,
        pooled_cov=pooled_cov,
        clamped=clamped,
    )


@dataclass
class SupportPrediction:
    """Aggregated predictions on a target partition (normalized units)."""

    values: np.ndarray
    variances: np.ndarray
    clamped: int


def predict_supports(
    target: Partition,
    state: ModelState,
    dataset: AggregatedDataset,
    n_samples: int,
    seed: int,
    rules=None,
) -> SupportPrediction:
    """Predict aggregated values and variances on a target partition.

    Pooling happens on the domain grid: each target support contributes
    its member points as queries, and the posterior is averaged (or
    summed, per rule) with the support's aggregation weights. Variances
    aggregate the pooled covariance block of each support, so nested
    refinements stay consistent with direct coarse predictions.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    domain_id = target.domain_id
    dd = dataset.prepared(domain_id)
    domain = dd.domain
    geometry.validate(domain, [target])
    if rules is None:
        rules = tuple(geometry.AVERAGE for _ in target.supports)
    rules = tuple(rules)
    if len(rules) != len(target.supports):
        raise DataError("one aggregation rule per target support required")
    attr_idx, _ = _local_attr_indices(state, dd, [target.attribute_id])
    kernels = state.kernels
    pool_w = []
    coords = []
    slices = []
    start = 0
    for support, rule in zip(target.supports, rules):
        w = geometry.weight_vector(support, domain.grid, rule)
        members = geometry.membership(support, domain.grid)
        pts = domain.grid.points[members]
        pool_w.append(w)
        coords.append(pts)
        slices.append(slice(start, start + members.size))
        start += members.size
    query = np.vstack(coords)
    n_support = len(target.supports)
    samples = draw_weight_samples(state, domain_id, n_samples, seed)
    vals = np.zeros((n_samples, n_support))
    block_vars = np.zeros((n_samples, n_support))
    for t, W in enumerate(samples):
        prior_blocks = []
        w_sel = W[attr_idx[0]]
        for sl in slices:
            pts = query[sl]
            d2 = _sq_dists(pts, pts)
            Kb = np.zeros((pts.shape[0], pts.shape[0]))
            for l, scale in enumerate(kernels.length_scales):
                Kb += (w_sel[l] * w_sel[l]) * se_value(d2, scale)
            prior_blocks.append(Kb)
        if dd.n_obs:
            C = assemble_C(dd, W, kernels, state.noise_log_var[domain_id])
            chol, _ = chol_with_jitter(C)
            H = cross_cov_H(query, dd, W, kernels, attr_idx)
            alpha = scipy.linalg.cho_solve((chol, True), dd.y, check_finite=False)
            solved = scipy.linalg.cho_solve((chol, True), H, check_finite=False)
            mean = H.T @ alpha
        else:
            H = solved = None
            mean = np.zeros(query.shape[0])
        for n, (sl, w) in enumerate(zip(slices, pool_w)):
            vals[t, n] = w @ mean[sl]
            cov_block = prior_blocks[n]
            if H is not None:
                cov_block = cov_block - H[:, sl].T @ solved[:, sl]
            block_vars[t, n] = w @ cov_block @ w
    values = vals.mean(axis=0)
    second = (block_vars + vals * vals).mean(axis=0)
    variances = second - values * values
    clamped = int(np.sum(variances < _CLAMP_TOL))
    variances = np.maximum(variances, 0.0)
    return SupportPrediction(values=values, variances=variances, clamped=clamped)


def predict_grid(
    state: ModelState,
    dataset: AggregatedDataset,
    domain_id: str,
    attribute_id: str,
    n_samples: int,
    seed: int,
    query_points=None,
):
    """Pooled mean and per-point variance on the domain grid.

    Returns ``(query, mean, variance, clamped)`` where variance is the
    diagonal of the pooled mixture covariance.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    dd = dataset.prepared(domain_id)
    if query_points is None:
        query = dd.domain.grid.points
    else:
        query = _as_query_array(query_points, dd.domain)
    attr_idx, _ = _local_attr_indices(state, dd, [attribute_id])
    kernels = state.kernels
    samples = draw_weight_samples(state, domain_id, n_samples, seed)
    n_q = query.shape[0]
    means = np.zeros((n_samples, n_q))
    var_diag = np.zeros((n_samples, n_q))
    for t, W in enumerate(samples):
        w_sel = W[attr_idx[0]]
        prior_diag = float(np.sum(w_sel * w_sel)) * np.ones(n_q)
        if dd.n_obs:
            C = assemble_C(dd, W, kernels, state.noise_log_var[domain_id])
            chol, _ = chol_with_jitter(C)
            H = cross_cov_H(query, dd, W, kernels, attr_idx)
            alpha = scipy.linalg.cho_solve((chol, True), dd.y, check_finite=False)
            solved = scipy.linalg.cho_solve((chol, True), H, check_finite=False)
            means[t] = H.T @ alpha
            var_diag[t] = prior_diag - np.sum(H * solved, axis=0)
        else:
            var_diag[t] = prior_diag
    mean = means.mean(axis=0)
    second = (var_diag + means * means).mean(axis=0)
    variance = second - mean * mean
    clamped = int(np.sum(variance < _CLAMP_TOL))
    variance = np.maximum(variance, 0.0)
    return query, mean, variance, clamped
