"""End-to-end pipeline over a run directory.

Each stage (subject, synthesize, fit, evaluate, bundles) persists its
artifacts plus a completion marker and is skipped on re-entry unless forced;
any stage first ensures its prerequisites. Two runs with the same config and
seed produce byte-identical bundles and metrics files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boundary import BoundarySet, load_boundary_set, save_boundary_set, synthesize_boundary_set
from .config import PipelineConfig
from .errors import ConfigError
from .landscape import (EpochBundle, default_palette, export_bundle, load_bundle,
                        make_sample_records, render_landscape)
from .metrics import (METRIC_K_VALUES, MetricsReport, SplitMetrics, boundary_preserving,
                      embedding_displacement, eval_sem, nn_preserving, pca_fit,
                      pca_ppr, pca_project, pca_reconstruct, ppr, reconstruction_error,
                      temporal_pv)
from .neighbor_complex import export_complex_jsonl
from .numerics import softmax
from .subject import (Dataset, SubjectCheckpoint, features, ingest_checkpoint_dump,
                      load_idx_dataset, make_blobs_pair, predict, save_checkpoints,
                      train_subject)
from .visualizer import (LossWeights, TrainSchedule, fit_sequence, load_models,
                         project, save_models)

log = logging.getLogger("trainscape")

STAGES = ("subject", "synthesize", "fit", "evaluate", "bundles")


@dataclass
class RunPaths:
    root: Path

    @property
    def config(self) -> Path:
        return self.root / "config.json"

    @property
    def subject_dir(self) -> Path:
        return self.root / "subject"

    @property
    def boundaries_dir(self) -> Path:
        return self.root / "boundaries"

    @property
    def complexes_dir(self) -> Path:
        return self.root / "complexes"

    @property
    def models_dir(self) -> Path:
        return self.root / "models"

    @property
    def bundles_dir(self) -> Path:
        return self.root / "bundles"

    @property
    def metrics_json(self) -> Path:
        return self.root / "metrics.json"

    @property
    def metrics_table(self) -> Path:
        return self.root / "metrics.txt"

    @property
    def log_file(self) -> Path:
        return self.root / "run.log"

    def marker(self, stage: str) -> Path:
        return self.root / "markers" / f"{stage}.done"

    def bundle_dir(self, epoch: int) -> Path:
        return self.bundles_dir / f"epoch_{epoch:03d}"

    def boundary_sidecar(self, epoch: int) -> Path:
        return self.boundaries_dir / f"epoch_{epoch:03d}.json"


def _derived_seed(master: int, stage: str, epoch: int = 0) -> int:
    tag = sum(ord(c) for c in stage)
    seq = np.random.SeedSequence([master, tag, epoch])
    return int(seq.generate_state(1)[0])


class PipelineRun:
    """Stage runner bound to one config + run directory."""

    def __init__(self, config: PipelineConfig, force: bool = False):
        self.config = config
        self.paths = RunPaths(Path(config.output_dir))
        self.force = force
        self._datasets: tuple[Dataset, Dataset] | None = None
        self.paths.root.mkdir(parents=True, exist_ok=True)
        self.paths.marker("any").parent.mkdir(parents=True, exist_ok=True)
        self._init_logging()
        self._snapshot_config()

    def _init_logging(self):
        target = str(self.paths.log_file)
        for handler in list(log.handlers):
            run_tag = getattr(handler, "_trainscape_run", None)
            if run_tag is not None and run_tag != target:
                log.removeHandler(handler)
                handler.close()
        if not any(getattr(h, "_trainscape_run", None) == target for h in log.handlers):
            handler = logging.FileHandler(target)
            handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
            handler._trainscape_run = target
            log.addHandler(handler)
        log.setLevel(logging.INFO)

    def _snapshot_config(self):
        snapshot = self.config.dumps()
        if self.paths.config.exists():
            if self.paths.config.read_text() != snapshot:
                raise ConfigError(
                    f"run directory {self.paths.root} was created with a different "
                    "config; use a fresh output_dir or --force after clearing it")
        else:
            self.paths.config.write_text(snapshot)

    # -- data ------------------------------------------------------------

    def datasets(self) -> tuple[Dataset, Dataset]:
        if self._datasets is None:
            ds = self.config.dataset
            if ds.kind == "blobs":
                self._datasets = make_blobs_pair(ds.d, ds.classes, ds.n_train,
                                                 ds.n_test, ds.separation,
                                                 self.config.seed)
            else:
                train = load_idx_dataset(ds.train_images, ds.train_labels,
                                         ds.limit, "train")
                test = load_idx_dataset(ds.test_images, ds.test_labels,
                                        ds.limit, "test")
                test.class_count = train.class_count = max(train.class_count,
                                                           test.class_count)
                self._datasets = (train, test)
        return self._datasets

    # -- stage plumbing ----------------------------------------------------

    def _done(self, stage: str) -> bool:
        return self.paths.marker(stage).exists() and not self.force

    def _mark(self, stage: str) -> None:
        self.paths.marker(stage).write_text(json.dumps({"stage": stage}))

    # -- stages -------------------------------------------------------------

    def stage_subject(self) -> list[SubjectCheckpoint]:
        manifest = self.paths.subject_dir / "manifest.json"
        if self._done("subject") and manifest.exists():
            return ingest_checkpoint_dump(manifest)
        train, _ = self.datasets()
        sc = self.config.subject
        if sc.checkpoint_manifest:
            log.info("ingesting subject checkpoints from %s", sc.checkpoint_manifest)
            checkpoints = ingest_checkpoint_dump(sc.checkpoint_manifest)
        else:
            log.info("training subject classifier for %d epochs", sc.epochs)
            checkpoints = train_subject(train, sc.epochs, self.config.subject_seed,
                                        h=sc.h, hidden=tuple(sc.hidden), lr=sc.lr,
                                        momentum=sc.momentum, batch_size=sc.batch_size)
        save_checkpoints(checkpoints, self.paths.subject_dir)
        for ckpt in checkpoints:
            log.info("subject epoch %d train accuracy %.4f", ckpt.epoch,
                     ckpt.train_accuracy)
        self._mark("subject")
        return checkpoints

    def stage_synthesize(self) -> list[BoundarySet]:
        checkpoints = self.stage_subject()
        if self.config.visualizer.ablation.no_boundary:
            self._mark("synthesize")
            return []
        if self._done("synthesize"):
            return [load_boundary_set(self.paths.boundary_sidecar(c.epoch))
                    for c in checkpoints]
        train, _ = self.datasets()
        bc = self.config.boundary
        target = max(int(round(bc.target_fraction * train.n)),
                     self.config.complex_.k + 1)
        self.paths.boundaries_dir.mkdir(parents=True, exist_ok=True)
        sets = []
        for ckpt in checkpoints:
            seed = _derived_seed(self.config.seed, "synthesize", ckpt.epoch)
            bset = synthesize_boundary_set(ckpt, train, target, bc.delta,
                                           bc.lambda_max, bc.max_rounds, bc.alpha,
                                           seed=seed,
                                           symmetric_cap=bc.symmetric_lambda_cap)
            save_boundary_set(bset,
                              self.paths.boundaries_dir / f"epoch_{ckpt.epoch:03d}.bin",
                              self.paths.boundary_sidecar(ckpt.epoch))
            log.info("epoch %d: %d boundary points", ckpt.epoch, bset.points.shape[0])
            sets.append(bset)
        self._mark("synthesize")
        return sets

    def stage_fit(self):
        checkpoints = self.stage_subject()
        boundary_sets = self.stage_synthesize()
        manifest = self.paths.models_dir / "manifest.json"
        if self._done("fit") and manifest.exists():
            return checkpoints, boundary_sets, load_models(manifest)
        train, _ = self.datasets()
        vc = self.config.visualizer
        weights = LossWeights(
            lambda_proj=vc.lambda_proj,
            lambda_recon=0.0 if vc.ablation.no_reconstruction else vc.lambda_recon,
            lambda_temporal=0.0 if vc.ablation.no_temporal else vc.lambda_temporal,
            beta=vc.beta, k=vc.semantic_k)
        schedule = TrainSchedule(lr=vc.lr, momentum=vc.momentum,
                                 decay_every=vc.lr_decay_every,
                                 decay_factor=vc.lr_decay_factor,
                                 epochs=vc.epochs, batch_size=vc.batch_size,
                                 negative_rate=self.config.complex_.negative_rate)
        fits = fit_sequence(
            checkpoints, train, weights=weights, schedule=schedule,
            complex_k=self.config.complex_.k,
            boundary_fraction=self.config.boundary.target_fraction,
            delta=self.config.boundary.delta,
            lambda_max=self.config.boundary.lambda_max,
            bisect_rounds=self.config.boundary.max_rounds,
            alpha=self.config.boundary.alpha,
            include_boundary=not vc.ablation.no_boundary,
            seed=_derived_seed(self.config.seed, "fit"),
            curve_a=vc.curve_a, curve_b=vc.curve_b,
            boundary_sets=boundary_sets if boundary_sets else None,
            record_full_loss=True)
        self.paths.complexes_dir.mkdir(parents=True, exist_ok=True)
        for ckpt, fit in zip(checkpoints, fits):
            export_complex_jsonl(fit.complex_,
                                 self.paths.complexes_dir / f"epoch_{ckpt.epoch:03d}.jsonl")
            log.info("epoch %d: visualization loss %.4f -> %.4f", ckpt.epoch,
                     fit.history.initial_loss, fit.history.final_loss)
        save_models([fit.model for fit in fits], self.paths.models_dir)
        self._mark("fit")
        return checkpoints, boundary_sets, [fit.model for fit in fits]

    def stage_evaluate(self) -> MetricsReport:
        checkpoints, boundary_sets, models = self.stage_fit()
        if self._done("evaluate") and self.paths.metrics_json.exists():
            return _report_from_json(json.loads(self.paths.metrics_json.read_text()))
        train, test = self.datasets()
        report = compute_metrics_report(checkpoints, models, boundary_sets,
                                        train, test)
        payload = json.dumps(report.to_json(), indent=2, sort_keys=True)
        self.paths.metrics_json.write_text(payload)
        self.paths.metrics_table.write_text(report.to_table())
        self._mark("evaluate")
        return report

    def stage_bundles(self) -> list[EpochBundle]:
        checkpoints, _, models = self.stage_fit()
        report = self.stage_evaluate()
        if self._done("bundles"):
            return [load_bundle(self.paths.bundle_dir(c.epoch)) for c in checkpoints]
        train, test = self.datasets()
        palette_cfg = self.config.render.palette
        palette = ([tuple(c) for c in palette_cfg] if palette_cfg
                   else default_palette(train.class_count))
        report_json = report.to_json()
        bundles = []
        for ckpt, model in zip(checkpoints, models):
            bundle = build_epoch_bundle(ckpt, model, train, test, palette,
                                        self.config.render.resolution,
                                        self.config.boundary.delta,
                                        report_json["epochs"].get(str(ckpt.epoch), {}))
            export_bundle(bundle, self.paths.bundle_dir(ckpt.epoch))
            bundles.append(bundle)
            log.info("epoch %d: bundle exported", ckpt.epoch)
        self._mark("bundles")
        return bundles

    def run_all(self) -> None:
        self.stage_bundles()
        log.info("run complete: %s", self.paths.root)


def build_epoch_bundle(ckpt: SubjectCheckpoint, model, train: Dataset, test: Dataset,
                       palette, resolution: int, delta: float,
                       metrics_slice: dict) -> EpochBundle:
    reps_train = features(ckpt, train.inputs)
    emb_train = project(model, reps_train)
    raster = render_landscape(model, ckpt, emb_train, resolution, delta, palette)
    records = []
    for ds, reps, emb in ((train, reps_train, emb_train),
                          (test, *_rep_emb(ckpt, model, test))):
        logits, top1, _ = predict(ckpt, reps)
        conf = softmax(logits).max(axis=1)
        records.extend(make_sample_records(ds.ids, emb, ds.labels, top1, conf))
    return EpochBundle(ckpt.epoch, records, raster, metrics_slice, palette,
                       train.class_count)


def _rep_emb(ckpt, model, dataset):
    reps = features(ckpt, dataset.inputs)
    return reps, project(model, reps)


def compute_metrics_report(checkpoints, models, boundary_sets, train: Dataset,
                           test: Dataset, k_values=METRIC_K_VALUES) -> MetricsReport:
    """Spatial metrics per epoch and split, temporal metrics per epoch pair,
    plus the PCA baseline columns."""
    report = MetricsReport()
    reps = {"train": [], "test": []}
    embeddings = {"train": [], "test": []}
    for ckpt, model in zip(checkpoints, models):
        for split, ds in (("train", train), ("test", test)):
            x = features(ckpt, ds.inputs)
            y = project(model, x)
            reps[split].append(x)
            embeddings[split].append(y)

    for idx, (ckpt, model) in enumerate(zip(checkpoints, models)):
        bset = boundary_sets[idx] if boundary_sets else None
        b_low = project(model, bset.points) if bset is not None else None
        splits = {}
        pca_splits = {}
        baseline = pca_fit(reps["train"][idx])
        for split in ("train", "test"):
            x, y = reps[split][idx], embeddings[split][idx]
            m = SplitMetrics()
            p = SplitMetrics()
            y_pca = pca_project(baseline, x)
            for k in k_values:
                m.nn_pv[k] = nn_preserving(x, y, k)
                p.nn_pv[k] = nn_preserving(x, y_pca, k)
                if bset is not None and bset.points.shape[0] > k:
                    m.boundary_pv[k] = boundary_preserving(x, y, bset.points, b_low, k)
                    p.boundary_pv[k] = boundary_preserving(
                        x, y_pca, bset.points, pca_project(baseline, bset.points), k)
            m.rec_pv = reconstruction_error(model, x)
            m.ppr = ppr(ckpt, model, x)
            recon = pca_reconstruct(baseline, y_pca)
            p.rec_pv = float(((x - recon) ** 2).sum(axis=1).mean())
            p.ppr = pca_ppr(ckpt, baseline, x)
            splits[split] = m
            pca_splits[split] = p
        report.epochs[ckpt.epoch] = splits
        report.pca[ckpt.epoch] = pca_splits

    for idx in range(len(checkpoints) - 1):
        t0, t1 = checkpoints[idx].epoch, checkpoints[idx + 1].epoch
        for split in ("train", "test"):
            x_prev, x_curr = reps[split][idx], reps[split][idx + 1]
            disp = embedding_displacement(models[idx], models[idx + 1], x_prev, x_curr)
            per_k = {}
            for k in k_values:
                sem = eval_sem(x_prev, x_curr, k)
                per_k[k] = temporal_pv(sem, disp)
            report.temporal.setdefault(split, {})[(t0, t1)] = per_k
    return report


def _report_from_json(data: dict) -> MetricsReport:
    report = MetricsReport()
    for t, splits in data.get("epochs", {}).items():
        report.epochs[int(t)] = {
            split: _split_from_json(m) for split, m in splits.items()}
    for split, pairs in data.get("temporal", {}).items():
        for key, per_k in pairs.items():
            a, b = key.split("-")
            report.temporal.setdefault(split, {})[(int(a), int(b))] = {
                int(k): v for k, v in per_k.items()}
    for t, splits in data.get("pca", {}).items():
        report.pca[int(t)] = {
            split: _split_from_json(m) for split, m in splits.items()}
    return report


def _split_from_json(m: dict) -> SplitMetrics:
    out = SplitMetrics()
    out.nn_pv = {int(k): v for k, v in m.get("nn_pv", {}).items()}
    out.boundary_pv = {int(k): v for k, v in m.get("boundary_pv", {}).items()}
    out.rec_pv = m.get("rec_pv", float("nan"))
    out.ppr = m.get("ppr", float("nan"))
    return out
