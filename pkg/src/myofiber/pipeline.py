"""End-to-end pipeline orchestration with a resumable run manifest.

Stage graph: phantom -> track -> features (tracked-fiber branch), and
phantom bundles -> train both sequence models -> embeddings -> fusion -> PCA
-> clustering grid -> t-SNE -> figure export (modeling branch). Each stage
hashes its config and input files into ``manifest.json``; re-running skips
stages whose inputs, config, and outputs are all unchanged.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from pathlib import Path

import numpy as np

from . import plotting
from .clustering import (
    ClusterParams,
    hdbscan,
    write_labels_csv,
    read_labels_csv,
    write_stabilities,
)
from .embedding import (
    EmbeddingMatrix,
    fuse,
    pca_fit_transform,
    read_embedding,
    write_embedding,
)
from .features import (
    LVAxis,
    build_feature_dataset,
    read_feature_sequences,
    solve_transmural_depth,
    split_indices,
    write_feature_sequences,
)
from .phantom import BundleSpec, PhantomSpec, generate_annulus_phantom, generate_labeled_bundles
from .seqmodel import (
    BlstmConfig,
    TaeConfig,
    TrainConfig,
    extract_blstm_embeddings,
    extract_tae_embeddings,
    load_checkpoint,
    quantize_params,
    save_checkpoint,
    train_model,
)
from .tractography import TrackingParams, read_streamlines, track_volume, write_streamlines
from .tsne import tsne_2d, read_tsne_csv, write_tsne_csv
from .validation import compute_metrics, grid_search, write_metrics_csv
from .volume import (
    read_mask_volume,
    read_tensor_volume,
    write_mask_volume,
    write_scalar_volume,
    write_tensor_volume,
)


class StageError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

def desk_profile() -> dict:
    """Small configuration that runs the whole pipeline in minutes on a CPU."""
    return {
        "profile": "desk",
        "seed": 0,
        "phantom": {
            "inner_radius": 10.0,
            "outer_radius": 20.0,
            "height": 30.0,
            "ha_endo": 60.0,
            "ha_epi": -60.0,
            "eigenvalues": [1.0e-3, 0.4e-3, 0.2e-3],
            "dims": [48, 48, 36],
            "spacing": [1.0, 1.0, 1.0],
        },
        "bundles": {
            "families": 4,
            "fibers_per_family": 80,
            "points_per_fiber": 48,
            "point_step": 0.8,
            "noise_sigma": 0.15,
            "band_fill": 0.3,
            "seed": 7,
        },
        "tracking": {
            "step": 0.1,
            "fa_min": 0.2,
            "max_angle": 45.0,
            "max_steps": 1200,
            "seed_stride": 4,
        },
        "td": {"tol": 1.0e-8, "max_iter": 20000},
        "blstm": {"layers": 2, "hidden": 32, "input_dim": 5, "horizon": 25},
        "tae": {
            "d_model": 32, "heads": 4, "ff_dim": 64,
            "encoder_layers": 2, "decoder_layers": 2,
            "dropout": 0.1, "input_dim": 5, "max_len": 128, "sentinel": -4.0,
        },
        "train_blstm": {
            "batch_size": 32, "epochs": 30, "lr": 1.0e-3,
            "weight_decay": 0.01, "min_lr": 1.0e-6, "seed": 11,
        },
        "train_tae": {
            "batch_size": 32, "epochs": 30, "lr": 1.0e-3,
            "weight_decay": 0.01, "min_lr": 1.0e-8, "seed": 13,
        },
        "split_seed": 3,
        "pca": {"variance_target": 0.95},
        "grid": {
            "min_samples": [3, 5, 10],
            "min_cluster_size": [10, 20, 40],
        },
        "tsne": {"perplexity": 15.0, "iterations": 400, "seed": 5},
    }


def paper_profile() -> dict:
    """Published hyperparameters, for atlas-scale data supplied by the user."""
    cfg = desk_profile()
    cfg.update(
        {
            "profile": "paper",
            "blstm": {"layers": 4, "hidden": 256, "input_dim": 5, "horizon": 25},
            "tae": {
                "d_model": 128, "heads": 8, "ff_dim": 512,
                "encoder_layers": 4, "decoder_layers": 4,
                "dropout": 0.1, "input_dim": 5, "max_len": 591, "sentinel": -4.0,
            },
            "train_blstm": {
                "batch_size": 256, "epochs": 100, "lr": 1.0e-3,
                "weight_decay": 0.01, "min_lr": 1.0e-6, "seed": 11,
            },
            "train_tae": {
                "batch_size": 128, "epochs": 50, "lr": 1.0e-4,
                "weight_decay": 0.01, "min_lr": 1.0e-8, "seed": 13,
            },
            "grid": {
                "min_samples": [10, 25, 50, 100, 250, 500, 750],
                "min_cluster_size": [100, 250, 500, 750, 1000, 1500, 2000, 5000],
            },
            "tsne": {"perplexity": 30.0, "iterations": 1000, "seed": 5},
        }
    )
    return cfg


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, profile: str = "desk", overrides: dict | None = None) -> dict:
    base = paper_profile() if profile == "paper" else desk_profile()
    if path is not None:
        with open(path, encoding="utf-8") as f:
            user = json.load(f)
        if user.get("profile") == "paper" and profile != "paper":
            base = paper_profile()
        base = _merge(base, user)
    if overrides:
        base = _merge(base, overrides)
    return base


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _cfg_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


class Manifest:
    def __init__(self, out_dir: Path):
        self.path = Path(out_dir) / "manifest.json"
        self.data = {"stages": {}}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as f:
                self.data = json.load(f)

    def save(self):
        with open(self.path, "w", encoding="utf-8") as f:
            json.dump(self.data, f, indent=2, sort_keys=True)

    def up_to_date(self, stage, cfg_hash, inputs, outputs) -> bool:
        entry = self.data["stages"].get(stage)
        if entry is None or entry.get("config") != cfg_hash:
            return False
        for p in inputs + outputs:
            if not Path(p).exists():
                return False
        if {str(p): _sha256(Path(p)) for p in inputs} != entry.get("inputs"):
            return False
        if {str(p): _sha256(Path(p)) for p in outputs} != entry.get("outputs"):
            return False
        return True

    def record(self, stage, cfg_hash, inputs, outputs, elapsed):
        self.data["stages"][stage] = {
            "config": cfg_hash,
            "inputs": {str(p): _sha256(Path(p)) for p in inputs},
            "outputs": {str(p): _sha256(Path(p)) for p in outputs},
            "elapsed_s": round(elapsed, 3),
        }
        self.save()


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def _paths(out_dir: Path) -> dict[str, Path]:
    d = Path(out_dir)
    return {
        "volume": d / "phantom.dtv",
        "mask": d / "phantom.msk",
        "bundles": d / "bundles.fft",
        "bundle_labels": d / "bundle_labels.csv",
        "tracked": d / "tracked.fib",
        "td": d / "td.svol",
        "tracked_features": d / "tracked.fft",
        "fig_helix": d / "fig_helix_angle.svg",
        "blstm_ckpt": d / "blstm.ckpt",
        "tae_ckpt": d / "tae.ckpt",
        "fig_blstm": d / "fig_blstm_loss.svg",
        "fig_tae": d / "fig_tae_loss.svg",
        "emb_blstm": d / "emb_blstm.emb",
        "emb_tae": d / "emb_tae.emb",
        "fused": d / "fused.emb",
        "reduced": d / "reduced.emb",
        "pca_model": d / "pca_model.json",
        "metrics": d / "metrics.csv",
        "labels": d / "labels.csv",
        "stabilities": d / "stabilities.json",
        "tsne": d / "tsne.csv",
        "fig_clusters": d / "fig_clusters.svg",
    }


def _stage_phantom(cfg, paths, log):
    spec = PhantomSpec.from_dict(cfg["phantom"])
    vol, mask = generate_annulus_phantom(spec)
    write_tensor_volume(paths["volume"], vol)
    write_mask_volume(paths["mask"], mask)
    bspec = BundleSpec.from_dict(cfg["bundles"])
    seqs, labels = generate_labeled_bundles(bspec)
    write_feature_sequences(paths["bundles"], seqs)
    write_labels_csv(paths["bundle_labels"], np.arange(len(labels)), labels)
    log(f"phantom: {mask.labels.astype(bool).sum()} wall voxels, {len(seqs)} bundle fibers")


def _stage_track(cfg, paths, log):
    vol = read_tensor_volume(paths["volume"])
    mask = read_mask_volume(paths["mask"])
    params = TrackingParams(**cfg["tracking"])
    fibers = track_volume(vol, mask, params)
    if not fibers:
        log("track: WARNING - no streamlines survived")
    write_streamlines(paths["tracked"], fibers)
    log(f"track: {len(fibers)} streamlines")


def _stage_features(cfg, paths, log):
    mask = read_mask_volume(paths["mask"])
    fibers = read_streamlines(paths["tracked"])
    td = solve_transmural_depth(mask, **cfg["td"])
    write_scalar_volume(paths["td"], td)
    spec = PhantomSpec.from_dict(cfg["phantom"])
    axis = LVAxis(center=spec.center)
    if fibers:
        ds = build_feature_dataset(fibers, td, axis, split_seed=cfg["split_seed"])
        seqs = ds.all_sequences
        write_feature_sequences(
            paths["tracked_features"], seqs, mean=ds.mean, std=ds.std,
            extra={"dropped": ds.dropped},
        )
        stacked = np.concatenate(seqs, axis=0)
        plotting.plot_helix_angle_profile(
            stacked[:, 4], stacked[:, 3], paths["fig_helix"],
        )
        log(f"features: {len(seqs)} fibers kept, {ds.dropped} dropped")
    else:
        write_feature_sequences(paths["tracked_features"], [])
        log("features: empty streamline input")


def _train_stage(kind, cfg, paths, log):
    seqs, _ = read_feature_sequences(paths["bundles"])
    tr, va, _ = split_indices(len(seqs), cfg["split_seed"])
    train_seqs = [seqs[i] for i in tr]
    val_seqs = [seqs[i] for i in va]
    stacked = np.concatenate(train_seqs, axis=0)
    mean = stacked.mean(axis=0)
    std = np.where(stacked.std(axis=0) < 1e-12, 1.0, stacked.std(axis=0))
    if kind == "blstm":
        model_cfg = BlstmConfig.from_dict(cfg["blstm"])
        tcfg = TrainConfig.from_dict(cfg["train_blstm"])
        ckpt_path, fig_path = paths["blstm_ckpt"], paths["fig_blstm"]
    else:
        model_cfg = TaeConfig.from_dict(cfg["tae"])
        tcfg = TrainConfig.from_dict(cfg["train_tae"])
        ckpt_path, fig_path = paths["tae_ckpt"], paths["fig_tae"]
    _, history, best = train_model(
        kind, train_seqs, val_seqs, model_cfg, tcfg, mean=mean, std=std, log=None
    )
    from .seqmodel.autodiff import Tensor

    params = quantize_params({k: Tensor.param(v) for k, v in best.items()})
    save_checkpoint(
        ckpt_path, kind, model_cfg, params, history=history,
        extra={"mean": mean.tolist(), "std": std.tolist()},
    )
    plotting.plot_training_history(history, fig_path, title=f"{kind} training")
    log(f"train-{kind}: final val {history[-1]['val']:.5f} over {len(history)} epochs")


def _load_ckpt_with_stats(path):
    with open(path, "rb") as f:
        manifest = json.loads(f.readline().decode("utf-8"))
    kind, cfg, params, _ = load_checkpoint(path)
    mean = np.asarray(manifest["mean"])
    std = np.asarray(manifest["std"])
    return kind, cfg, params, mean, std


def _stage_embed(kind, cfg, paths, log):
    seqs, _ = read_feature_sequences(paths["bundles"])
    ckpt = paths["blstm_ckpt"] if kind == "blstm" else paths["tae_ckpt"]
    _, model_cfg, params, mean, std = _load_ckpt_with_stats(ckpt)
    seqs = [(s - mean) / std for s in seqs]
    if kind == "blstm":
        rows = extract_blstm_embeddings(seqs, params, model_cfg)
        out = paths["emb_blstm"]
    else:
        rows = extract_tae_embeddings(seqs, params, model_cfg)
        out = paths["emb_tae"]
    emb = EmbeddingMatrix(rows, np.arange(len(rows)), provenance=kind)
    write_embedding(out, emb)
    log(f"embed-{kind}: {emb.n} x {emb.dim}")


def _stage_fuse(cfg, paths, log):
    a = read_embedding(paths["emb_blstm"])
    b = read_embedding(paths["emb_tae"])
    fused = fuse(a, b)
    write_embedding(paths["fused"], fused)
    log(f"fuse: {fused.n} x {fused.dim}")


def _stage_pca(cfg, paths, log):
    emb = read_embedding(paths["fused"])
    model, reduced = pca_fit_transform(
        emb,
        variance_target=cfg["pca"].get("variance_target"),
        fixed_k=cfg["pca"].get("fixed_k"),
    )
    write_embedding(paths["reduced"], reduced)
    with open(paths["pca_model"], "w", encoding="utf-8") as f:
        json.dump(model.to_dict(), f)
    kept = float(model.explained_variance_ratio[: model.k].sum())
    log(f"pca: {emb.dim} -> {model.k} components ({kept:.3f} variance)")


def _stage_grid(cfg, paths, log):
    emb = read_embedding(paths["reduced"])
    _, true_labels = read_labels_csv(paths["bundle_labels"])
    rows = grid_search(
        emb.data,
        cfg["grid"]["min_samples"],
        cfg["grid"]["min_cluster_size"],
        true_labels=true_labels,
    )
    write_metrics_csv(paths["metrics"], rows)
    best = rows[0]
    params = ClusterParams(
        min_samples=best.min_samples, min_cluster_size=best.min_cluster_size
    )
    result = hdbscan(emb.data, params)
    write_labels_csv(paths["labels"], emb.fiber_ids, result.labels)
    write_stabilities(paths["stabilities"], result)
    log(
        f"grid: best dbcv={best.dbcv:.3f} at ms={best.min_samples} "
        f"mcs={best.min_cluster_size}; {result.n_clusters} clusters, "
        f"noise {result.noise_fraction:.2f}"
    )


def _stage_tsne(cfg, paths, log):
    emb = read_embedding(paths["reduced"])
    t = cfg["tsne"]
    coords = tsne_2d(
        emb.data, perplexity=t["perplexity"], iterations=t["iterations"], seed=t["seed"]
    )
    write_tsne_csv(paths["tsne"], emb.fiber_ids, coords)
    log(f"tsne: {len(coords)} points")


def _stage_plot(cfg, paths, log):
    ids_t, coords = read_tsne_csv(paths["tsne"])
    ids_l, labels = read_labels_csv(paths["labels"])
    if not np.array_equal(ids_t, ids_l):
        raise StageError("t-SNE and label fiber ids are misaligned")
    plotting.plot_label_scatter(coords, labels, paths["fig_clusters"])
    log("plot: wrote cluster scatter")


STAGES = [
    ("phantom", _stage_phantom, [], ["volume", "mask", "bundles", "bundle_labels"],
     ["phantom", "bundles", "seed"]),
    ("track", _stage_track, ["volume", "mask"], ["tracked"], ["tracking"]),
    ("features", _stage_features, ["tracked", "mask"],
     ["td", "tracked_features", "fig_helix"], ["td", "phantom", "split_seed"]),
    ("train-blstm", lambda c, p, l: _train_stage("blstm", c, p, l), ["bundles"],
     ["blstm_ckpt", "fig_blstm"], ["blstm", "train_blstm", "split_seed"]),
    ("train-tae", lambda c, p, l: _train_stage("tae", c, p, l), ["bundles"],
     ["tae_ckpt", "fig_tae"], ["tae", "train_tae", "split_seed"]),
    ("embed-blstm", lambda c, p, l: _stage_embed("blstm", c, p, l),
     ["bundles", "blstm_ckpt"], ["emb_blstm"], []),
    ("embed-tae", lambda c, p, l: _stage_embed("tae", c, p, l),
     ["bundles", "tae_ckpt"], ["emb_tae"], []),
    ("fuse", _stage_fuse, ["emb_blstm", "emb_tae"], ["fused"], []),
    ("pca", _stage_pca, ["fused"], ["reduced", "pca_model"], ["pca"]),
    ("grid", _stage_grid, ["reduced", "bundle_labels"],
     ["metrics", "labels", "stabilities"], ["grid"]),
    ("tsne", _stage_tsne, ["reduced"], ["tsne"], ["tsne"]),
    ("plot", _stage_plot, ["tsne", "labels"], ["fig_clusters"], []),
]

STAGE_NAMES = [s[0] for s in STAGES]


def run_stage(name: str, cfg: dict, out_dir, log=print, force: bool = False):
    """Run one stage (skipping when the manifest shows it is current)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = _paths(out_dir)
    manifest = Manifest(out_dir)
    for stage_name, fn, in_keys, out_keys, cfg_keys in STAGES:
        if stage_name != name:
            continue
        inputs = [paths[k] for k in in_keys]
        outputs = [paths[k] for k in out_keys]
        cfg_hash = _cfg_hash({k: cfg.get(k) for k in cfg_keys})
        for p in inputs:
            if not Path(p).exists():
                raise StageError(f"stage '{name}' missing input {p}")
        if not force and manifest.up_to_date(name, cfg_hash, inputs, outputs):
            log(f"{name}: up to date, skipping")
            return
        t0 = time.time()
        fn(cfg, paths, log)
        manifest.record(name, cfg_hash, inputs, outputs, time.time() - t0)
        return
    raise StageError(f"unknown stage '{name}' (expected one of {STAGE_NAMES})")


def run_pipeline(cfg: dict, out_dir, log=print, force: bool = False):
    """Run every stage in dependency order; resumable via the manifest."""
    for name in STAGE_NAMES:
        run_stage(name, cfg, out_dir, log=log, force=force)
    return _paths(Path(out_dir))
