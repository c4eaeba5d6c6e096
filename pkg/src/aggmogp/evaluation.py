"""Error metric, model selection, synthetic data and the experiment harness.

The synthetic generator follows the model's own generative story: latent
fields are drawn exactly on the domain grid from the jittered Cholesky
factor of each kernel's gram matrix, mixed with per-attribute weights,
averaged over partition supports and observed with additive Gaussian
noise. Because the draw happens on the grid, the generator doubles as a
brute-force check of the covariance assembly (the empirical covariance
of many draws must match the assembled matrix).

Generated fields get a per-attribute value offset so ground truth stays
away from zero; percentage errors are undefined there. Normalization
removes the offset during training and restores it on denormalization,
so the model itself never sees it.

Generator substreams of the seed: 0 draws weights (when not fixed),
1 draws latent fields, 2 draws observation noise; domains in catalogue
order, latents in order, levels in configuration order inside each
stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, geometry, utils
from .errors import (
    AggmogpError,
    CrossValidationError,
    DataError,
    ZeroTruth,
)
from .geometry import Domain, Partition
from .inference import TrainConfig, fit
from .kernels import KernelSet, se_value
from .model import (
    AggregatedDataset,
    DatasetRecord,
    chol_with_jitter,
    init_state,
    uniform_rules,
)
from .prediction import predict_supports

METHODS = ("agp", "slfm", "amogp", "amogp-trans")


def mape(y_true, y_pred) -> float:
    """Mean absolute percentage error.

    Refuses zero ground-truth values instead of skipping them; the
    offending indices ride on the exception.
    """
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise DataError(
            f"mape needs equal-length vectors, got {y_true.shape} and"
            f" {y_pred.shape}"
        )
    zero = np.flatnonzero(y_true == 0.0)
    if zero.size:
        raise ZeroTruth(zero)
    return float(np.mean(np.abs((y_true - y_pred) / y_true)))


def argmin_first(values) -> int:
    """Index of the smallest value; earlier entries win exact ties."""
    values = list(values)
    if not values:
        raise ValueError("argmin of an empty sequence")
    best = 0
    for i in range(1, len(values)):
        if values[i] < values[best]:
            best = i
    return best


@dataclass
class CVResult:
    """Leave-one-out selection outcome.

    ``errors`` holds the mean absolute percentage error per candidate,
    aligned with ``candidates`` (sorted ascending, so
    :func:`argmin_first` realizes the ties-to-smallest rule).
    """

    chosen: int
    candidates: tuple[int, ...]
    errors: tuple[float, ...]
    fold_count: int


def _cv_folds(dataset: AggregatedDataset, target):
    if target is None:
        records = dataset.records
    else:
        records = (dataset.record_for(*target),)
    folds = []
    for rec in records:
        n = len(rec.partition.supports)
        if n < 2:
            continue
        folds.extend((rec.domain_id, rec.attribute_id, k) for k in range(n))
    if not folds:
        raise DataError("no cross-validation folds: every record has a single support")
    return folds


def cv_select_L(
    dataset: AggregatedDataset,
    candidates,
    config: TrainConfig,
    target: tuple[str, str] | None = None,
    exact: bool = False,
    warm_fraction: float = 0.2,
    n_pred_samples: int = 100,
) -> CVResult:
    """Choose the latent count by leave-one-out over coarse observations.

    Per candidate the full training data is fit once; each fold then
    drops one observation and refits warm-started from the full fit with
    ``warm_fraction`` of the iteration budget (``exact`` refits from
    scratch with the full budget instead). The held-out value is
    predicted on its own support and scored by absolute percentage
    error in original units. ``target`` limits folds to one (domain,
    attribute) pair; fine-grained data never enters.
    """
    cands = sorted(set(int(c) for c in candidates))
    if not cands:
        raise DataError("no candidate latent counts supplied")
    if any(c < 1 for c in cands):
        raise DataError("latent counts must be >= 1")
    folds = _cv_folds(dataset, target)
    warm_iters = max(1, math.ceil(warm_fraction * config.max_iters))
    mean_errors = []
    for L in cands:
        init = init_state(dataset, L, seed=config.seed)
        if exact:
            base = None
            fold_config = config
        else:
            base, _ = fit(dataset, config, init)
            fold_config = replace(config, max_iters=warm_iters)
        errs = []
        for v, s, k in folds:
            reduced, held = dataset.drop_observation(v, s, k)
            try:
                fold_init = (
                    init_state(reduced, L, seed=config.seed)
                    if base is None
                    else base
                )
                state, _ = fit(reduced, fold_config, fold_init)
                pred = predict_supports(
                    held.partition,
                    state,
                    reduced,
                    n_pred_samples,
                    config.seed,
                    rules=held.rules,
                )
            except AggmogpError as e:
                raise CrossValidationError(
                    f"fold ({v}, {s}, support {k}) with {L} latents failed: {e}"
                ) from e
            value = reduced.denormalize(v, s, pred.values)[0]
            truth = float(held.values[0])
            if truth == 0.0:
                raise ZeroTruth(
                    (k,),
                    f"held-out value of ({v}, {s}) support {k} is zero;"
                    " percentage error undefined",
                )
            errs.append(abs((truth - value) / truth))
        mean_errors.append(float(np.mean(errs)))
    best = argmin_first(mean_errors)
    return CVResult(
        chosen=cands[best],
        candidates=tuple(cands),
        errors=tuple(mean_errors),
        fold_count=len(folds),
    )


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass
class SynthConfig:
    """Everything the generator needs, fully explicit.

    ``levels`` maps a granularity label to per-domain partition specs;
    a spec is an int (equal interval bins, 1-D) or a block shape tuple
    (cell blocks, any dimension). ``weights`` fixes the mixing weights
    per domain; when absent they are drawn from N(prior_mean, prior_var)
    rows indexed by the attribute catalogue. ``noise_var`` is a scalar
    or a {(domain, attribute): variance} mapping.
    """

    domains: tuple[Domain, ...]
    attributes: tuple[str, ...]
    length_scales: tuple[float, ...]
    levels: dict[str, dict[str, object]]
    domain_attributes: dict[str, tuple[str, ...]] | None = None
    weights: dict[str, np.ndarray] | None = None
    prior_mean: np.ndarray | None = None
    prior_var: np.ndarray | None = None
    noise_var: object = 0.0
    value_offset: object = 0.0
    seed: int = 0

    def attrs_of(self, domain_id: str) -> tuple[str, ...]:
        if self.domain_attributes is None:
            return self.attributes
        return self.domain_attributes[domain_id]

    def noise_of(self, domain_id: str, attribute_id: str) -> float:
        if isinstance(self.noise_var, dict):
            return float(self.noise_var[(domain_id, attribute_id)])
        return float(self.noise_var)

    def offset_of(self, attribute_id: str) -> float:
        if isinstance(self.value_offset, dict):
            return float(self.value_offset[attribute_id])
        return float(self.value_offset)


@dataclass
class SynthResult:
    """Fields, noisy datasets per level and noiseless ground truth.

    ``fields[v]`` is the (local attributes, grid points) mixed field;
    ``datasets[label]`` the observable data at that granularity;
    ``truth[label][(v, s)]`` the noiseless aggregated values; the
    matching partitions sit in ``partitions``.
    """

    config: SynthConfig
    weights: dict[str, np.ndarray]
    fields: dict[str, np.ndarray]
    datasets: dict[str, AggregatedDataset]
    truth: dict[str, dict[tuple[str, str], np.ndarray]]
    partitions: dict[str, dict[tuple[str, str], Partition]]


def _build_partition(domain: Domain, attribute_id: str, spec, label: str):
    prefix = f"{label}-{attribute_id}-"
    if isinstance(spec, int):
        return geometry.interval_bins(domain, attribute_id, spec, id_prefix=prefix)
    return geometry.grid_block_partition(domain, attribute_id, spec, id_prefix=prefix)


def synth_generate(cfg: SynthConfig) -> SynthResult:
    """Draw one synthetic world and observe it at every level."""
    L = len(cfg.length_scales)
    if L < 1:
        raise DataError("at least one latent kernel required")
    kernels = KernelSet.from_length_scales(cfg.length_scales)
    attr_rank = {a: i for i, a in enumerate(cfg.attributes)}
    w_rng = utils.stream(cfg.seed, 0)
    f_rng = utils.stream(cfg.seed, 1)
    n_rng = utils.stream(cfg.seed, 2)

    weights: dict[str, np.ndarray] = {}
    fields: dict[str, np.ndarray] = {}
    for dom in cfg.domains:
        attrs = cfg.attrs_of(dom.id)
        rows = [attr_rank[a] for a in attrs]
        if cfg.weights is not None:
            W = np.asarray(cfg.weights[dom.id], dtype=float)
            if W.shape != (len(attrs), L):
                raise DataError(
                    f"weights for domain {dom.id!r} must be"
                    f" {(len(attrs), L)}, got {W.shape}"
                )
        else:
            pm = (
                np.zeros((len(cfg.attributes), L))
                if cfg.prior_mean is None
                else np.asarray(cfg.prior_mean, dtype=float)
            )
            pv = (
                np.ones((len(cfg.attributes), L))
                if cfg.prior_var is None
                else np.asarray(cfg.prior_var, dtype=float)
            )
            eps = w_rng.standard_normal((len(attrs), L))
            W = pm[rows] + eps * np.sqrt(pv[rows])
        weights[dom.id] = W
        pts = dom.grid.points
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        latents = np.empty((L, pts.shape[0]))
        for l, scale in enumerate(kernels.length_scales):
            gram = se_value(d2, scale)
            chol, _ = chol_with_jitter(gram)
            latents[l] = chol @ f_rng.standard_normal(pts.shape[0])
        offs = np.array([cfg.offset_of(a) for a in attrs])
        fields[dom.id] = offs[:, None] + W @ latents

    datasets: dict[str, AggregatedDataset] = {}
    truth: dict[str, dict] = {}
    partitions: dict[str, dict] = {}
    domain_map = {d.id: d for d in cfg.domains}
    for label, level in cfg.levels.items():
        unknown = set(level) - set(domain_map)
        if unknown:
            raise DataError(
                f"level {label!r} references unknown domains {sorted(unknown)}"
            )
        records = []
        truth[label] = {}
        partitions[label] = {}
        for dom in cfg.domains:
            if dom.id not in level:
                continue
            spec = level[dom.id]
            attrs = cfg.attrs_of(dom.id)
            for a_idx, a in enumerate(attrs):
                part = _build_partition(dom, a, spec, label)
                pooled = np.empty(len(part.supports))
                for n, support in enumerate(part.supports):
                    w = geometry.weight_vector(support, dom.grid, geometry.AVERAGE)
                    members = geometry.membership(support, dom.grid)
                    pooled[n] = w @ fields[dom.id][a_idx, members]
                sigma = cfg.noise_of(dom.id, a)
                noisy = pooled + math.sqrt(sigma) * n_rng.standard_normal(
                    pooled.size
                )
                truth[label][(dom.id, a)] = pooled
                partitions[label][(dom.id, a)] = part
                records.append(
                    DatasetRecord(
                        domain_id=dom.id,
                        attribute_id=a,
                        partition=part,
                        rules=uniform_rules(part),
                        values=noisy,
                    )
                )
        datasets[label] = AggregatedDataset(
            {d: domain_map[d] for d in level}, cfg.attributes, records
        )
    return SynthResult(
        config=cfg,
        weights=weights,
        fields=fields,
        datasets=datasets,
        truth=truth,
        partitions=partitions,
    )


# ---------------------------------------------------------------------------
# Experiment harness


@dataclass(frozen=True)
class ExperimentSpec:
    """One refinement experiment: train coarse, score on the fine level.

    ``method`` picks the model family; the transfer variant trains on
    every domain (target at ``train_level``, the rest at ``aux_level``),
    all others see the target domain only. ``num_latents`` is an int or
    the string ``"cv"``.
    """

    target_domain: str
    target_attribute: str
    method: str
    train_level: str
    test_level: str
    aux_level: str | None = None
    num_latents: object = 2
    seeds: tuple[int, ...] = (0,)
    n_pred_samples: int = 100
    cv_candidates: tuple[int, ...] | None = None
    train_config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError(
                f"unknown method {self.method!r}; expected one of {METHODS}"
            )
        if self.num_latents != "cv" and int(self.num_latents) < 1:
            raise DataError("num_latents must be >= 1 or 'cv'")


@dataclass
class ExperimentReport:
    """Aggregated outcome over seeds; failures recorded, never hidden.

    ``coregionalization`` holds, per domain, the seed-averaged absolute
    weight gram |M Mᵀ| of the fitted variational means. ``mape_se`` is
    the standard error across seeds and is 0 for a single seed.
    ``train_seconds`` stays out of :meth:`to_dict` so serialized reports
    depend on seeds alone, never on the clock.
    """

    spec: ExperimentSpec
    seeds_run: tuple[int, ...]
    mape_per_seed: tuple[float, ...]
    mape_mean: float | None
    mape_se: float | None
    chosen_latents: tuple[int, ...]
    train_seconds: tuple[float, ...]
    coregionalization: dict[str, np.ndarray]
    failures: tuple[tuple[int, str], ...]

    def to_dict(self) -> dict:
        return {
            "method": self.spec.method,
            "target": [self.spec.target_domain, self.spec.target_attribute],
            "train_level": self.spec.train_level,
            "test_level": self.spec.test_level,
            "seeds_run": list(self.seeds_run),
            "mape_per_seed": list(self.mape_per_seed),
            "mape_mean": self.mape_mean,
            "mape_se": self.mape_se,
            "chosen_latents": list(self.chosen_latents),
            "coregionalization": {
                v: m.tolist() for v, m in self.coregionalization.items()
            },
            "failures": [[s, msg] for s, msg in self.failures],
        }


def _training_dataset(spec: ExperimentSpec, res: SynthResult) -> AggregatedDataset:
    cfg = res.config
    train_ds = res.datasets.get(spec.train_level)
    if train_ds is None:
        raise DataError(f"no level {spec.train_level!r} in the generated data")
    records = [r for r in train_ds.records if r.domain_id == spec.target_domain]
    if not any(r.attribute_id == spec.target_attribute for r in records):
        raise DataError(
            f"target pair ({spec.target_domain}, {spec.target_attribute}) absent"
            f" from level {spec.train_level!r}"
        )
    domains = {spec.target_domain: train_ds.domains[spec.target_domain]}
    if spec.method == "amogp-trans":
        aux_label = spec.aux_level or spec.train_level
        aux_ds = res.datasets.get(aux_label)
        if aux_ds is None:
            raise DataError(f"no level {aux_label!r} in the generated data")
        for r in aux_ds.records:
            if r.domain_id != spec.target_domain:
                records.append(r)
                domains[r.domain_id] = aux_ds.domains[r.domain_id]
    return AggregatedDataset(domains, cfg.attributes, records)


def _pick_latents(spec: ExperimentSpec, dataset: AggregatedDataset, config):
    if spec.method == "agp":
        return 1
    if spec.num_latents != "cv":
        return int(spec.num_latents)
    cands = spec.cv_candidates or tuple(
        range(1, dataset.total_attribute_count + 1)
    )
    result = cv_select_L(
        dataset,
        cands,
        config,
        target=(spec.target_domain, spec.target_attribute),
        n_pred_samples=spec.n_pred_samples,
    )
    return result.chosen


def _fit_method(spec: ExperimentSpec, dataset, L, config, seed):
    if spec.method == "agp":
        bf = baselines.fit_agp(
            dataset,
            spec.target_domain,
            spec.target_attribute,
            config=config,
            init_seed=seed,
        )
        return bf.state, bf.trace, bf.dataset
    if spec.method == "slfm":
        bf = baselines.fit_slfm(
            dataset,
            L,
            domain_id=spec.target_domain,
            config=config,
            init_seed=seed,
        )
        return bf.state, bf.trace, bf.dataset
    if spec.method == "amogp":
        sub = baselines.restrict_to_domain(dataset, spec.target_domain)
    else:
        sub = dataset
    init = init_state(sub, L, seed=seed)
    state, trace = fit(sub, config, init)
    return state, trace, sub


def run_experiment(spec: ExperimentSpec, synth_cfg: SynthConfig) -> ExperimentReport:
    """Train per the spec on generated data and score the fine level.

    Every seed regenerates the world, so the seed-wise spread covers
    generator, initialization and training randomness together. A seed
    that fails lands in ``failures`` and the run continues.
    """
    seeds_run = []
    mapes = []
    chosen = []
    times = []
    failures = []
    coreg_sums: dict[str, np.ndarray] = {}
    coreg_counts: dict[str, int] = {}
    for seed in spec.seeds:
        try:
            res = synth_generate(replace(synth_cfg, seed=seed))
            train = _training_dataset(spec, res)
            config = replace(spec.train_config, seed=seed)
            L = _pick_latents(spec, train, config)
            state, trace, used = _fit_method(spec, train, L, config, seed)
            test_part = res.partitions[spec.test_level][
                (spec.target_domain, spec.target_attribute)
            ]
            pred = predict_supports(
                test_part, state, used, spec.n_pred_samples, seed
            )
            values = used.denormalize(
                spec.target_domain, spec.target_attribute, pred.values
            )
            y_true = res.truth[spec.test_level][
                (spec.target_domain, spec.target_attribute)
            ]
            score = mape(y_true, values)
        except AggmogpError as e:
            failures.append((seed, f"{type(e).__name__}: {e}"))
            continue
        seeds_run.append(seed)
        mapes.append(score)
        chosen.append(L)
        times.append(trace.wall_time)
        for v in state.domain_ids:
            M = state.q_mean[v]
            gram = np.abs(M @ M.T)
            if v in coreg_sums:
                coreg_sums[v] += gram
                coreg_counts[v] += 1
            else:
                coreg_sums[v] = gram.copy()
                coreg_counts[v] = 1
    if mapes:
        mean = float(np.mean(mapes))
        se = (
            float(np.std(mapes, ddof=1) / math.sqrt(len(mapes)))
            if len(mapes) > 1
            else 0.0
        )
    else:
        mean = None
        se = None
    coreg = {v: coreg_sums[v] / coreg_counts[v] for v in coreg_sums}
    return ExperimentReport(
        spec=spec,
        seeds_run=tuple(seeds_run),
        mape_per_seed=tuple(mapes),
        mape_mean=mean,
        mape_se=se,
        chosen_latents=tuple(chosen),
        train_seconds=tuple(times),
        coregionalization=coreg,
        failures=tuple(failures),
    )
