"""Command line front end.

Exit codes: 0 on success, 1 for validation and usage problems, 2 for
numerical failures. Failures print a one-line JSON record to stderr
(``{"error": <class>, "message": <text>}``) so callers never have to
parse prose. All outputs are written atomically and are byte-identical
across reruns with the same inputs and seeds.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import baselines, dataio, svgplot
from .errors import AggmogpError, CholeskyFailure, DataError, NonFiniteELBO
from .evaluation import (
    METHODS,
    ExperimentSpec,
    SynthConfig,
    cv_select_L,
    run_experiment,
    synth_generate,
)
from .inference import fit
from .model import AggregatedDataset, init_state, override_length_scales, uniform_rules
from .prediction import predict_grid, predict_supports


class _Parser(argparse.ArgumentParser):
    """Usage problems raise instead of exiting with argparse's code 2."""

    def error(self, message):
        raise DataError(f"usage: {message}")


def _emit_error(exc: AggmogpError) -> None:
    record = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)


def _parse_latents(text: str):
    if text == "cv":
        return "cv"
    try:
        value = int(text)
    except ValueError:
        raise DataError(f"--latents takes an integer or 'cv', got {text!r}")
    if value < 1:
        raise DataError("--latents must be >= 1")
    return value


def _check_method(name: str) -> str:
    if name not in METHODS:
        raise DataError(f"unknown method {name!r}; expected one of {METHODS}")
    return name


# ---------------------------------------------------------------------------
# fit


def _resolve_latents(args, cfg, dataset):
    choice = _parse_latents(args.latents) if args.latents else cfg.num_latents
    if choice != "cv":
        return int(choice)
    candidates = cfg.cv_candidates or tuple(
        range(1, dataset.total_attribute_count + 1)
    )
    result = cv_select_L(
        dataset,
        candidates,
        cfg.training_with_seed(args.seed),
        n_pred_samples=cfg.n_pred_samples,
    )
    print(
        f"cross-validation chose {result.chosen} latents"
        f" (candidates {list(result.candidates)})"
    )
    return result.chosen


def _cmd_fit(args) -> None:
    method = _check_method(args.method)
    ds = dataio.load_dataset_file(args.dataset)
    cfg = dataio.load_config_file(args.config)
    dataset = ds.dataset
    config = cfg.training_with_seed(args.seed)
    scales = cfg.init_length_scales
    if method == "agp":
        if args.latents and _parse_latents(args.latents) not in (1, "cv"):
            raise DataError("the single-series baseline uses one latent process")
        bf = baselines.fit_agp(
            dataset, config=config, init_seed=args.seed, init_length_scales=scales
        )
        state, trace, used = bf.state, bf.trace, bf.dataset
        chosen = 1
    elif method == "slfm":
        chosen = _resolve_latents(args, cfg, dataset)
        bf = baselines.fit_slfm(
            dataset,
            chosen,
            config=config,
            init_seed=args.seed,
            init_length_scales=scales,
        )
        state, trace, used = bf.state, bf.trace, bf.dataset
    else:
        if method == "amogp" and len(dataset.domain_order()) != 1:
            raise DataError(
                "method amogp is single-domain; use amogp-trans for"
                " cross-domain training or supply a single-domain dataset"
            )
        chosen = _resolve_latents(args, cfg, dataset)
        init = init_state(dataset, chosen, seed=args.seed)
        if scales is not None:
            override_length_scales(init, scales)
        state, trace = fit(dataset, config, init)
        used = dataset
    doc = dataio.model_to_doc(
        state, used.transforms, method, args.seed, ds.sha, cfg.sha, trace
    )
    dataio.write_json(args.out, doc)
    if args.trace_out:
        dataio.write_trace_csv(args.trace_out, trace)
    print(
        f"fitted {method} with {chosen} latents:"
        f" objective {trace.final_elbo:.6f} after"
        f" {len(trace.iterations)} iterations -> {args.out}"
    )


# ---------------------------------------------------------------------------
# refine


def _model_view(bundle: dataio.ModelBundle, dataset: AggregatedDataset):
    """Rebuild the restricted dataset a saved model was trained on."""
    method = bundle.method
    if method == "agp":
        v = bundle.state.domain_ids[0]
        s = bundle.state.domain_attributes[v][0]
        view = baselines.restrict_to_series(dataset, v, s)
    elif method == "slfm":
        v = bundle.state.domain_ids[0]
        view = baselines.restrict_to_domain(dataset, v).as_point_observations()
    elif method == "amogp":
        view = baselines.restrict_to_domain(dataset, bundle.state.domain_ids[0])
    else:
        view = dataset
    return AggregatedDataset(
        view.domains, view.attributes, view.records, transforms=bundle.transforms
    )


def _cmd_refine(args) -> None:
    ds = dataio.load_dataset_file(args.dataset)
    mb = dataio.load_model_file(args.model)
    dataio.check_model_compatible(mb, ds.sha)
    entry = ds.partitions.get(args.target_partition)
    if entry is None:
        raise DataError(
            f"no partition {args.target_partition!r} in the dataset document"
            f" (known: {sorted(ds.partitions)})"
        )
    part, rules = entry
    view = _model_view(mb, ds.dataset)
    pred = predict_supports(part, mb.state, view, args.tp, args.seed, rules=rules)
    values, variances = view.denormalize(
        part.domain_id, part.attribute_id, pred.values, pred.variances
    )
    dataio.write_support_csv(
        args.out, [s.id for s in part.supports], values, variances
    )
    message = f"wrote {len(part.supports)} supports -> {args.out}"
    if pred.clamped:
        message += f" ({pred.clamped} variances clamped to 0)"
    print(message)
    if args.grid_out:
        query, mean, variance, clamped = predict_grid(
            mb.state, view, part.domain_id, part.attribute_id, args.tp, args.seed
        )
        mean, variance = view.denormalize(
            part.domain_id, part.attribute_id, mean, variance
        )
        dataio.write_grid_csv(args.grid_out, query, mean, variance)
        message = f"wrote {query.shape[0]} grid points -> {args.grid_out}"
        if clamped:
            message += f" ({clamped} variances clamped to 0)"
        print(message)


# ---------------------------------------------------------------------------
# cv


def _cmd_cv(args) -> None:
    ds = dataio.load_dataset_file(args.dataset)
    cfg = dataio.load_config_file(args.config)
    candidates = cfg.cv_candidates or tuple(
        range(1, ds.dataset.total_attribute_count + 1)
    )
    result = cv_select_L(
        ds.dataset,
        candidates,
        cfg.training_with_seed(args.seed),
        n_pred_samples=cfg.n_pred_samples,
    )
    doc = {
        "format_version": dataio.FORMAT_VERSION,
        "kind": "aggmogp-cv",
        "chosen": result.chosen,
        "candidates": list(result.candidates),
        "errors": list(result.errors),
        "fold_count": result.fold_count,
    }
    dataio.write_json(args.out, doc)
    print("latents  mean APE")
    for L, err in zip(result.candidates, result.errors):
        marker = " <-" if L == result.chosen else ""
        print(f"{L:7d}  {err:.6f}{marker}")
    print(f"chosen: {result.chosen} ({result.fold_count} folds) -> {args.out}")


# ---------------------------------------------------------------------------
# synth


def _synth_config(raw: dict, seed_override) -> SynthConfig:
    sec = raw.get("synth")
    if sec is None:
        raise DataError("config has no 'synth' section")
    domains = tuple(
        dataio.parse_domain(entry, "synth config") for entry in sec.get("domains", ())
    )
    if not domains:
        raise DataError("synth config needs at least one domain")
    attributes = tuple(str(a) for a in sec.get("attributes", ()))
    if not attributes:
        raise DataError("synth config needs at least one attribute")
    scales = tuple(float(s) for s in sec.get("length_scales", ()))
    if not scales:
        raise DataError("synth config needs length_scales")
    levels_raw = sec.get("levels")
    if not levels_raw:
        raise DataError("synth config needs a 'levels' section")
    levels: dict[str, dict[str, object]] = {}
    for label, per_domain in levels_raw.items():
        levels[label] = {
            v: (int(spec) if isinstance(spec, int) else tuple(int(b) for b in spec))
            for v, spec in per_domain.items()
        }
    noise = sec.get("noise_var", 0.0)
    if isinstance(noise, dict):
        noise = {
            (v, s): float(val)
            for v, per_attr in noise.items()
            for s, val in per_attr.items()
        }
    else:
        noise = float(noise)
    offset = sec.get("value_offset", 0.0)
    if isinstance(offset, dict):
        offset = {s: float(val) for s, val in offset.items()}
    else:
        offset = float(offset)
    weights = sec.get("weights")
    if weights is not None:
        weights = {v: np.asarray(w, dtype=float) for v, w in weights.items()}
    prior_mean = sec.get("prior_mean")
    prior_var = sec.get("prior_var")
    domain_attributes = sec.get("domain_attributes")
    if domain_attributes is not None:
        domain_attributes = {
            v: tuple(str(a) for a in t) for v, t in domain_attributes.items()
        }
    return SynthConfig(
        domains=domains,
        attributes=attributes,
        length_scales=scales,
        levels=levels,
        domain_attributes=domain_attributes,
        weights=weights,
        prior_mean=None if prior_mean is None else np.asarray(prior_mean, float),
        prior_var=None if prior_var is None else np.asarray(prior_var, float),
        noise_var=noise,
        value_offset=offset,
        seed=int(sec.get("seed", 0)) if seed_override is None else seed_override,
    )


def _cmd_synth(args) -> None:
    cfg = dataio.load_config_file(args.config)
    synth_cfg = _synth_config(cfg.raw, args.seed)
    res = synth_generate(synth_cfg)
    for label, dataset in res.datasets.items():
        registry = {}
        for other, per_pair in res.partitions.items():
            for (v, s), part in per_pair.items():
                if v in dataset.domains:
                    registry[f"{other}/{v}/{s}"] = (
                        part,
                        uniform_rules(part),
                    )
        doc = dataio.dataset_to_doc(dataset, partitions=registry)
        path = f"{args.out}-{label}.json"
        dataio.write_json(path, doc)
        print(f"level {label}: {len(dataset.records)} series -> {path}")
    levels_doc: dict[str, dict] = {}
    for label, per in res.truth.items():
        level_doc: dict[str, dict] = {}
        for (v, s), vals in per.items():
            level_doc.setdefault(v, {})[s] = vals.tolist()
        levels_doc[label] = level_doc
    truth_doc = {
        "format_version": dataio.FORMAT_VERSION,
        "kind": "aggmogp-truth",
        "levels": levels_doc,
    }
    truth_path = f"{args.out}-truth.json"
    dataio.write_json(truth_path, truth_doc)
    print(f"noiseless truth -> {truth_path}")


# ---------------------------------------------------------------------------
# eval


def _experiment_spec(args, cfg: dataio.ConfigBundle) -> ExperimentSpec:
    sec = cfg.raw.get("experiment")
    if sec is None:
        raise DataError("config has no 'experiment' section")
    method = args.method or sec.get("method", "amogp-trans")
    latents = (
        _parse_latents(args.latents)
        if args.latents
        else sec.get("num_latents", 2)
    )
    tp = args.tp if args.tp is not None else int(sec.get("n_pred_samples", 100))
    cands = sec.get("cv_candidates")
    try:
        return ExperimentSpec(
            target_domain=str(sec["target_domain"]),
            target_attribute=str(sec["target_attribute"]),
            method=str(method),
            train_level=str(sec["train_level"]),
            test_level=str(sec["test_level"]),
            aux_level=sec.get("aux_level"),
            num_latents=latents,
            seeds=tuple(int(s) for s in sec.get("seeds", [0])),
            n_pred_samples=tp,
            cv_candidates=None if cands is None else tuple(int(c) for c in cands),
            train_config=cfg.training,
        )
    except KeyError as e:
        raise DataError(f"experiment section is missing {e}") from e


def _cmd_eval(args) -> None:
    cfg = dataio.load_config_file(args.config)
    spec = _experiment_spec(args, cfg)
    synth_cfg = _synth_config(cfg.raw, None)
    report = run_experiment(spec, synth_cfg)
    dataio.write_json(args.out, report.to_dict())
    if report.mape_mean is None:
        print(f"{spec.method}: no successful seeds -> {args.out}")
    else:
        print(
            f"{spec.method}: MAPE {report.mape_mean:.4f} +/- {report.mape_se:.4f}"
            f" over {len(report.seeds_run)} seeds"
            f" (latents {sorted(set(report.chosen_latents))}) -> {args.out}"
        )
    for seed, message in report.failures:
        print(f"seed {seed} failed: {message}")


# ---------------------------------------------------------------------------
# plot


def _cmd_plot(args) -> None:
    names, data = dataio.read_csv_columns(args.csv)
    if names[:2] == ["iteration", "elbo"]:
        svg = svgplot.trace_svg(data[:, 0], data[:, 1])
    elif names == ["x0", "mean", "variance"]:
        svg = svgplot.band_svg(data[:, 0], data[:, 1], data[:, 2])
    elif names == ["x0", "x1", "mean", "variance"]:
        svg = svgplot.heatmap_svg(data[:, 0], data[:, 1], data[:, 2])
    elif names == ["value", "variance"]:
        raise DataError(
            "support tables are not plottable; plot the grid export instead"
        )
    else:
        raise DataError(f"unrecognized CSV columns {names}")
    dataio.atomic_write_text(args.out, svg + "\n")
    print(f"wrote {args.out}")


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="aggmogp",
        description=(
            "Multi-output Gaussian process inference on aggregated"
            " observations, with cross-domain transfer."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="train a model and save it")
    p_fit.add_argument("--dataset", required=True)
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--trace-out")
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--method", default="amogp-trans")
    p_fit.add_argument("--latents", help="latent count or 'cv'")
    p_fit.set_defaults(handler=_cmd_fit)

    p_ref = sub.add_parser("refine", help="predict onto a target partition")
    p_ref.add_argument("--dataset", required=True)
    p_ref.add_argument("--model", required=True)
    p_ref.add_argument("--target-partition", required=True)
    p_ref.add_argument("--out", required=True)
    p_ref.add_argument("--grid-out")
    p_ref.add_argument("--tp", type=int, default=100)
    p_ref.add_argument("--seed", type=int, default=0)
    p_ref.set_defaults(handler=_cmd_refine)

    p_cv = sub.add_parser("cv", help="choose the latent count by LOO")
    p_cv.add_argument("--dataset", required=True)
    p_cv.add_argument("--config", required=True)
    p_cv.add_argument("--out", required=True)
    p_cv.add_argument("--seed", type=int, default=0)
    p_cv.set_defaults(handler=_cmd_cv)

    p_syn = sub.add_parser("synth", help="generate synthetic datasets")
    p_syn.add_argument("--config", required=True)
    p_syn.add_argument("--out", required=True, help="output path prefix")
    p_syn.add_argument("--seed", type=int, default=None)
    p_syn.set_defaults(handler=_cmd_synth)

    p_eval = sub.add_parser("eval", help="run a refinement experiment")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--method", default=None)
    p_eval.add_argument("--latents", default=None, help="latent count or 'cv'")
    p_eval.add_argument("--tp", type=int, default=None)
    p_eval.set_defaults(handler=_cmd_eval)

    p_plot = sub.add_parser("plot", help="render a CSV export as SVG")
    p_plot.add_argument("--csv", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(handler=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.handler(args)
    except (CholeskyFailure, NonFiniteELBO) as exc:
        _emit_error(exc)
        return 2
    except AggmogpError as exc:
        _emit_error(exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
