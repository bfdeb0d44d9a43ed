"""Command-line interface: per-stage subcommands plus full pipeline runs.

All subcommands share a workspace directory (``--out-dir``) holding the
artifact files under fixed names; the manifest makes re-runs incremental.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import pipeline as pl
from .clustering import ClusterParams, hdbscan, read_labels_csv, write_labels_csv, write_stabilities
from .embedding import read_embedding
from .validation import compute_metrics, write_metrics_csv

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class Ctx:
    def __init__(self, config, seed, threads, profile, out_dir):
        overrides = {}
        if seed is not None:
            overrides["seed"] = seed
        try:
            self.cfg = pl.load_config(config, profile=profile, overrides=overrides)
        except (OSError, json.JSONDecodeError) as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        self.threads = threads  # reserved; execution is currently serial
        self.out_dir = Path(out_dir)


@click.group()
@click.option("--config", type=click.Path(exists=True), default=None,
              help="JSON config overriding the selected profile.")
@click.option("--seed", type=int, default=None, help="Global seed override.")
@click.option("--threads", type=int, default=1, help="Worker cap (serial for now).")
@click.option("--profile", type=click.Choice(["desk", "paper"]), default="desk")
@click.option("--out-dir", type=click.Path(), default="run",
              help="Workspace directory for all artifacts.")
@click.pass_context
def main(ctx, config, seed, threads, profile, out_dir):
    """Myocardial fiber tractography, representation learning, and clustering."""
    ctx.obj = Ctx(config, seed, threads, profile, out_dir)


def _run(ctx_obj, stage):
    try:
        pl.run_stage(stage, ctx_obj.cfg, ctx_obj.out_dir, log=click.echo)
    except pl.StageError as e:
        click.echo(f"data error: {e}", err=True)
        sys.exit(EXIT_DATA)
    except (FloatingPointError, RuntimeError) as e:
        click.echo(f"numeric failure: {e}", err=True)
        sys.exit(EXIT_NUMERIC)


def _stage_command(name, help_text):
    @main.command(name=name, help=help_text)
    @click.pass_obj
    def cmd(obj):
        _run(obj, name)

    return cmd


_stage_command("phantom", "Generate the annulus phantom volume, mask, and labeled bundles.")
_stage_command("track", "Trace streamlines through the phantom tensor volume.")
_stage_command("features", "Solve transmural depth and build fiber feature sequences.")
_stage_command("train-blstm", "Train the recurrent future-point predictor.")
_stage_command("train-tae", "Train the transformer autoencoder.")
_stage_command("fuse", "Concatenate the two embedding matrices.")
_stage_command("pca", "Reduce the fused embeddings by PCA.")
_stage_command("grid", "Run the clustering hyperparameter grid and pick the best row.")
_stage_command("tsne", "Project the reduced embeddings to 2-D.")
_stage_command("plot", "Render the labeled t-SNE scatter to SVG.")


@main.command()
@click.option("--kind", type=click.Choice(["blstm", "tae", "both"]), default="both")
@click.pass_obj
def embed(obj, kind):
    """Extract fiber embeddings from the trained checkpoints."""
    stages = ["embed-blstm", "embed-tae"] if kind == "both" else [f"embed-{kind}"]
    for s in stages:
        _run(obj, s)


@main.command()
@click.option("--min-samples", type=int, required=True)
@click.option("--min-cluster-size", type=int, required=True)
@click.option("--allow-single-cluster", is_flag=True, default=False)
@click.pass_obj
def cluster(obj, min_samples, min_cluster_size, allow_single_cluster):
    """Run HDBSCAN once on the reduced embeddings with explicit parameters."""
    paths = pl._paths(obj.out_dir)
    if not paths["reduced"].exists():
        click.echo("data error: run `pca` first", err=True)
        sys.exit(EXIT_DATA)
    emb = read_embedding(paths["reduced"])
    params = ClusterParams(min_samples, min_cluster_size, allow_single_cluster)
    try:
        result = hdbscan(emb.data, params)
    except ValueError as e:
        click.echo(f"data error: {e}", err=True)
        sys.exit(EXIT_DATA)
    write_labels_csv(paths["labels"], emb.fiber_ids, result.labels)
    write_stabilities(paths["stabilities"], result)
    click.echo(
        f"cluster: {result.n_clusters} clusters, noise {result.noise_fraction:.2f}"
    )


@main.command()
@click.pass_obj
def metrics(obj):
    """Score the current labels against all quality indices."""
    paths = pl._paths(obj.out_dir)
    for key in ("reduced", "labels"):
        if not paths[key].exists():
            click.echo(f"data error: missing {paths[key]}", err=True)
            sys.exit(EXIT_DATA)
    emb = read_embedding(paths["reduced"])
    _, labels = read_labels_csv(paths["labels"])
    true = None
    if paths["bundle_labels"].exists():
        _, true = read_labels_csv(paths["bundle_labels"])

    from .clustering import ClusterResult

    stab_params = ClusterParams(1, 2)
    result = ClusterResult(labels, {}, stab_params)
    row = compute_metrics(emb.data, result, true_labels=true)
    write_metrics_csv(paths["metrics"], [row])
    click.echo(
        f"metrics: silhouette={row.silhouette:.3f} dbcv={row.dbcv:.3f} "
        f"ari={row.ari:.3f} noise={row.noise_fraction:.2f}"
    )


@main.command()
@click.option("--force", is_flag=True, default=False, help="Ignore the manifest.")
@click.pass_obj
def pipeline(obj, force):
    """Run every stage in dependency order (resumable)."""
    try:
        pl.run_pipeline(obj.cfg, obj.out_dir, log=click.echo, force=force)
    except pl.StageError as e:
        click.echo(f"data error: {e}", err=True)
        sys.exit(EXIT_DATA)
    except (FloatingPointError, RuntimeError) as e:
        click.echo(f"numeric failure: {e}", err=True)
        sys.exit(EXIT_NUMERIC)


if __name__ == "__main__":
    main()
