"""Command-line interface: simulate, fit, summarize, cluster, evaluate.

Every command resolves its configuration (file values overridden by flags),
records the config hash in the output manifest, and is deterministic given
(inputs, config, seed).  Exit codes: 0 success, 1 runtime or numerical
failure, 2 usage or validation error.  Timing diagnostics (progress log,
timings sidecar) are the only nondeterministic outputs and are excluded from
the manifest's artifact list.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import analysis, gibbs
from .cluster import agglomerate, cut, dissimilarity, leaf_order, to_newick
from .config import ConfigError, RunConfig, config_hash, load_config
from .data import (
    DataError,
    load_dataset,
    save_dataset,
    standardize_real,
    write_heldout_csv,
)
from .distributions import RngStream
from .evaluate import missing_fraction_sweep
from .simulate import simulate_dataset
from .trace import PosteriorTrace
from .validation import check_correlation_matrix

_CONFIG_OPTIONS = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="JSON config file; flags override its values."),
    click.option("--seed", type=int, default=None, help="Random seed override."),
    click.option("--out", "out_dir", type=click.Path(), required=True,
                 help="Output directory."),
]


def _with_options(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return wrap


def _resolve(config_path, **overrides) -> RunConfig:
    return load_config(config_path, **overrides)


def _write_manifest(out_dir, command, cfg, outputs, extra=None):
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "config": cfg.to_dict(),
        "outputs": sorted(outputs),
        "extra": extra or {},
    }
    path = Path(out_dir) / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_matrix_csv(path, matrix, labels):
    frame = pd.DataFrame(np.asarray(matrix), index=labels, columns=labels)
    frame.to_csv(path, index_label="entity", float_format="%.12g")


def _write_hist_csv(path, hist, value_name):
    frame = pd.DataFrame({value_name: np.arange(len(hist)), "probability": hist})
    frame.to_csv(path, index=False, float_format="%.12g")


@click.group()
def main():
    """Latent binary-feature models for mixed relational data."""


@main.command()
@_with_options(_CONFIG_OPTIONS)
@click.option("--rows", type=int, required=True, help="Number of subjects.")
@click.option("--cat-cols", type=int, default=0, help="Number of categorical columns.")
@click.option("--q", "q_spec", default="2", help="Category counts: one integer or a comma list.")
@click.option("--real-cols", type=int, default=0, help="Number of real columns.")
@click.option("--plant-rank-x", type=int, default=None)
@click.option("--plant-rank-y", type=int, default=None)
@click.option("--plant-factors", type=int, default=None,
              help="Active covariance factors planted in every family.")
@click.option("--weight-floor", type=float, default=0.0)
@click.option("--loading-scale", type=float, default=1.0)
@click.option("--noise-sd", type=float, default=None)
def simulate(config_path, seed, out_dir, rows, cat_cols, q_spec, real_cols,
             plant_rank_x, plant_rank_y, plant_factors, weight_floor, loading_scale,
             noise_sd):
    """Draw a dataset (and its generating truth) from the model."""
    cfg = _resolve(config_path, seed=seed)
    if rows < 1 or cat_cols < 0 or real_cols < 0 or cat_cols + real_cols == 0:
        raise DataError("need rows >= 1 and at least one column")
    parts = [int(x) for x in str(q_spec).split(",") if x != ""]
    q = np.array(parts * cat_cols if len(parts) == 1 else parts, dtype=np.int64)
    if len(q) != cat_cols:
        raise DataError(f"--q lists {len(q)} counts for {cat_cols} categorical columns")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds, state, truth = simulate_dataset(
        rows, q, real_cols, cfg.hyper(), RngStream(cfg.seed).substream("simulate"),
        rank_x=plant_rank_x, rank_y=plant_rank_y,
        factors_rows=plant_factors, factors_cat=plant_factors, factors_real=plant_factors,
        weight_floor=weight_floor, loading_scale=loading_scale, noise_sd=noise_sd,
    )
    save_dataset(ds, out / "cat.csv", out / "real.csv", out / "schema.json")
    with open(out / "truth.json", "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs = ["cat.csv", "real.csv", "schema.json", "truth.json"]
    _write_manifest(out, "simulate", cfg, outputs, extra={"truth": truth})
    click.echo(f"simulated {rows}x({cat_cols}+{real_cols}) dataset -> {out}")


_DATA_OPTIONS = [
    click.option("--cat", "cat_path", type=click.Path(), default=None),
    click.option("--real", "real_path", type=click.Path(), default=None),
    click.option("--schema", "schema_path", type=click.Path(), default=None),
]


@main.command()
@_with_options(_CONFIG_OPTIONS + _DATA_OPTIONS)
@click.option("--resume", "resume_path", type=click.Path(), default=None,
              help="Resume from a checkpoint file.")
@click.option("--iters", type=int, default=None, help="Override total iterations.")
@click.option("--burn-in", type=int, default=None)
@click.option("--thin", type=int, default=None)
@click.option("--prior-mode", type=click.Choice(["correlated", "independent"]), default=None)
def fit(config_path, seed, out_dir, cat_path, real_path, schema_path, resume_path,
        iters, burn_in, thin, prior_mode):
    """Fit the model by MCMC and write the retained-sample trace."""
    cfg = _resolve(config_path, seed=seed, total_iters=iters, burn_in=burn_in,
                   thin=thin, prior_mode=prior_mode)
    ds = load_dataset(cat_path, real_path, schema_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    outputs = ["trace.npz", "diagnostics.json"]
    std = None
    if cfg.standardize and ds.m_real:
        ds, std = standardize_real(ds)
        with open(out / "standardization.json", "w") as fh:
            json.dump(
                {"mean": list(std.mean), "sd": list(std.sd)}, fh, indent=2, sort_keys=True
            )
            fh.write("\n")
        outputs.append("standardization.json")

    trace, diag = gibbs.run(
        ds,
        cfg,
        progress_path=out / "progress.jsonl",
        checkpoint_path=(out / "checkpoint.npz") if cfg.checkpoint_every else None,
        resume_from=resume_path,
    )
    trace.save(out / "trace.npz")
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(
            {
                "mh_accept_rates": {str(j): diag.rate(j) for j in sorted(diag.proposed)},
                "mh_rejected_nonspd": {str(j): n for j, n in sorted(diag.rejected_nonspd.items())},
                "final_log_joint": diag.log_joint[-1] if diag.log_joint else None,
                "n_samples": trace.n_samples,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    _write_manifest(out, "fit", cfg, outputs, extra={"n_samples": trace.n_samples})
    click.echo(f"fit complete: {trace.n_samples} retained samples -> {out}")


@main.command()
@_with_options(_CONFIG_OPTIONS + _DATA_OPTIONS)
@click.option("--trace", "trace_path", type=click.Path(), required=True)
def summarize(config_path, seed, out_dir, cat_path, real_path, schema_path, trace_path):
    """Export correlation matrices, histograms, loadings, and reorderings."""
    cfg = _resolve(config_path, seed=seed)
    if not Path(trace_path).exists():
        raise DataError(f"trace file not found: {trace_path}")
    try:
        trace = PosteriorTrace.load(trace_path)
    except Exception as exc:
        raise DataError(f"cannot read trace {trace_path}: {exc}") from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    map_idx = analysis.map_sample(trace)

    permutations = {}
    for family in analysis.FAMILIES:
        bits_field, _, _ = analysis.FAMILIES[family]
        if trace[bits_field].shape[1] == 0:
            continue
        labels = analysis.family_labels(trace, family)
        slug = family.replace("-", "_")
        for source in ("map", "posterior-mean"):
            corr = analysis.entity_correlation(trace, family, source)
            name = f"correlation_{slug}_{source.replace('-', '_')}.csv"
            _write_matrix_csv(out / name, corr, labels)
            outputs.append(name)
        hist = analysis.feature_count_posterior(trace, family)
        name = f"feature_hist_{slug}.csv"
        _write_hist_csv(out / name, hist, "n_features")
        outputs.append(name)
        if trace[bits_field].shape[1] > 1:
            corr_map = analysis.entity_correlation(trace, family, "map")
            perm = analysis.reorder_indices(corr_map)
            permutations[family] = perm
            name = f"permutation_{slug}.csv"
            pd.DataFrame(
                {"position": np.arange(len(perm)), "entity": perm,
                 "label": [labels[i] for i in perm]}
            ).to_csv(out / name, index=False)
            outputs.append(name)

    for side in ("x", "y"):
        if trace[f"active_{side}"].shape[1]:
            hist = analysis.rank_posterior(trace, side)
            name = f"rank_hist_{side}.csv"
            _write_hist_csv(out / name, hist, "rank")
            outputs.append(name)

    if trace["bits_real"].shape[1]:
        loadings = analysis.reconstruct_loadings(trace, map_idx)
        frame = pd.DataFrame(
            loadings,
            index=analysis.family_labels(trace, "real-cols"),
            columns=[f"factor{l}" for l in range(loadings.shape[1])],
        )
        frame.to_csv(out / "loadings_real_map.csv", index_label="column",
                     float_format="%.12g")
        outputs.append("loadings_real_map.csv")

    if cat_path or real_path:
        ds = load_dataset(cat_path, real_path, schema_path)
        row_perm = permutations.get("rows", np.arange(ds.n_rows))
        if ds.m_cat and "cat-cols" in permutations:
            ent_labels = trace.meta["cat_entity_labels"]
            attr_of_entity = [lbl.rsplit(":", 1)[0] for lbl in ent_labels]
            seen, col_order = set(), []
            for e in permutations["cat-cols"]:
                name = attr_of_entity[e]
                if name not in seen:
                    seen.add(name)
                    col_order.append(ds.cat_labels.index(name))
            cells = np.where(ds.cat_missing, "", ds.cat.astype(str))
            frame = pd.DataFrame(cells[np.ix_(row_perm, col_order)],
                                 columns=[ds.cat_labels[j] for j in col_order])
            frame.to_csv(out / "reordered_cat.csv", index=False)
            outputs.append("reordered_cat.csv")
        if ds.m_real and "real-cols" in permutations:
            col_order = list(permutations["real-cols"])
            cells = np.where(ds.real_missing, "", np.char.mod("%.12g", ds.real))
            frame = pd.DataFrame(cells[np.ix_(row_perm, col_order)],
                                 columns=[ds.real_labels[j] for j in col_order])
            frame.to_csv(out / "reordered_real.csv", index=False)
            outputs.append("reordered_real.csv")

    _write_manifest(out, "summarize", cfg, outputs, extra={"map_sample": map_idx})
    click.echo(f"wrote {len(outputs)} summary files -> {out}")


@main.command()
@_with_options(_CONFIG_OPTIONS)
@click.option("--corr", "corr_path", type=click.Path(), required=True,
              help="Square correlation CSV with labels.")
@click.option("--linkage", type=click.Choice(["average", "complete"]), default="average")
@click.option("--k", "n_clusters", type=int, default=None,
              help="Also write a flat cut with this many clusters.")
def cluster(config_path, seed, out_dir, corr_path, linkage, n_clusters):
    """Cluster entities from a correlation matrix; write Newick and labels."""
    cfg = _resolve(config_path, seed=seed)
    if not Path(corr_path).exists():
        raise DataError(f"correlation file not found: {corr_path}")
    frame = pd.read_csv(corr_path, index_col=0)
    labels = [str(x) for x in frame.index]
    corr = check_correlation_matrix(frame.to_numpy(dtype=float))
    dend = agglomerate(dissimilarity(corr), labels=labels, linkage=linkage)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tree.nwk").write_text(to_newick(dend) + "\n")
    order = leaf_order(dend)
    pd.DataFrame(
        {"position": np.arange(len(order)), "entity": order,
         "label": [labels[i] for i in order]}
    ).to_csv(out / "leaf_order.csv", index=False)
    outputs = ["tree.nwk", "leaf_order.csv"]
    if n_clusters is not None:
        assign = cut(dend, n_clusters)
        pd.DataFrame({"label": labels, "cluster": assign}).to_csv(
            out / "clusters.csv", index=False
        )
        outputs.append("clusters.csv")
    _write_manifest(out, "cluster", cfg, outputs)
    click.echo(f"clustered {len(labels)} entities -> {out}")


@main.command()
@_with_options(_CONFIG_OPTIONS + _DATA_OPTIONS)
@click.option("--fractions", default="0.1", help="Comma list of hold-out fractions.")
@click.option("--repeats", type=int, default=1)
@click.option("--variants", default="correlated", help="Comma list of prior modes.")
@click.option("--workers", type=int, default=None)
def evaluate(config_path, seed, out_dir, cat_path, real_path, schema_path,
             fractions, repeats, variants, workers):
    """Hold-out prediction sweep over fractions, repeats, and prior variants."""
    cfg = _resolve(config_path, seed=seed, workers=workers)
    ds = load_dataset(cat_path, real_path, schema_path)
    fraction_list = [float(x) for x in str(fractions).split(",") if x]
    variant_list = [v.strip() for v in str(variants).split(",") if v.strip()]
    report = missing_fraction_sweep(
        ds, fraction_list, repeats, variant_list, cfg, cfg.seed, workers=cfg.workers
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    report.to_json(out / "timings.json", include_timing=True)
    _write_manifest(out, "evaluate", cfg, ["report.json", "report.csv"],
                    extra={"fractions": fraction_list, "variants": variant_list,
                           "repeats": repeats})
    click.echo(f"evaluated {len(report.runs)} runs -> {out}")


def run_cli(argv=None):
    """Entry point with the documented exit-code mapping."""
    try:
        main.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return 2
    except (ConfigError, DataError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except click.exceptions.Abort:
        return 1
    except Exception as exc:  # numerical / runtime failure
        click.echo(f"runtime failure: {type(exc).__name__}: {exc}", err=True)
        return 1


def cli_entry():
    sys.exit(run_cli())


if __name__ == "__main__":
    cli_entry()
