"""Reference models sharing the full training pipeline.

Both baselines are restrictions of the main model rather than separate
implementations, so their numbers are directly comparable:

* the single-series baseline fits one (domain, attribute) record alone
  with a single latent process, discarding multi-output coupling and
  transfer;
* the point-observation baseline keeps the multi-output coupling of one
  domain but collapses every support to a point observation at its
  centroid, discarding the aggregation structure.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DataError
from .inference import TrainConfig, TrainTrace, fit
from .model import (
    AggregatedDataset,
    ModelState,
    init_state,
    override_length_scales,
)


@dataclass
class BaselineFit:
    """A fitted baseline together with the restricted dataset it saw.

    The dataset view keeps the parent's normalization transforms, so
    predictions denormalize into the parent's units.
    """

    state: ModelState
    trace: TrainTrace
    dataset: AggregatedDataset


def restrict_to_series(
    dataset: AggregatedDataset, domain_id: str, attribute_id: str
) -> AggregatedDataset:
    """Single-record view of one (domain, attribute) pair."""
    rec = dataset.record_for(domain_id, attribute_id)
    return AggregatedDataset(
        {domain_id: dataset.domains[domain_id]},
        (attribute_id,),
        (rec,),
        transforms={rec.key: dataset.transforms[rec.key]},
    )


def restrict_to_domain(
    dataset: AggregatedDataset, domain_id: str
) -> AggregatedDataset:
    """Single-domain view keeping all of that domain's records.

    The attribute catalogue shrinks to the attributes the domain
    observes, so weight priors cover exactly the local series.
    """
    recs = [r for r in dataset.records if r.domain_id == domain_id]
    if not recs:
        raise DataError(f"no records on domain {domain_id!r}")
    attrs = tuple(a for a in dataset.attributes if any(r.attribute_id == a for r in recs))
    return AggregatedDataset(
        {domain_id: dataset.domains[domain_id]},
        attrs,
        recs,
        transforms={r.key: dataset.transforms[r.key] for r in recs},
    )


def fit_agp(
    dataset: AggregatedDataset,
    domain_id: str | None = None,
    attribute_id: str | None = None,
    config: TrainConfig | None = None,
    init_seed: int = 0,
    init_length_scales=None,
) -> BaselineFit:
    """Fit one series alone with a single latent process.

    Without a (domain, attribute) selector the dataset must already
    contain exactly one record.
    """
    if domain_id is None or attribute_id is None:
        if len(dataset.records) != 1:
            raise DataError(
                "single-series baseline needs exactly one record; got"
                f" {len(dataset.records)} (pass a domain and attribute to"
                " select one)"
            )
        rec = dataset.records[0]
        domain_id, attribute_id = rec.key
    sub = restrict_to_series(dataset, domain_id, attribute_id)
    config = config or TrainConfig()
    init = init_state(sub, 1, seed=init_seed)
    if init_length_scales is not None:
        override_length_scales(init, init_length_scales)
    state, trace = fit(sub, config, init)
    return BaselineFit(state=state, trace=trace, dataset=sub)


def fit_slfm(
    dataset: AggregatedDataset,
    num_latents: int,
    domain_id: str | None = None,
    config: TrainConfig | None = None,
    init_seed: int = 0,
    init_length_scales=None,
) -> BaselineFit:
    """Fit one domain's records as centroid point observations.

    Without a domain selector the dataset must be single-domain.
    """
    if domain_id is None:
        order = dataset.domain_order()
        if len(order) != 1:
            raise DataError(
                "point-observation baseline is single-domain; got records on"
                f" {len(order)} domains (pass a domain id to select one)"
            )
        domain_id = order[0]
    sub = restrict_to_domain(dataset, domain_id).as_point_observations()
    config = config or TrainConfig()
    init = init_state(sub, num_latents, seed=init_seed)
    if init_length_scales is not None:
        override_length_scales(init, init_length_scales)
    state, trace = fit(sub, config, init)
    return BaselineFit(state=state, trace=trace, dataset=sub)
