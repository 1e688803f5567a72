"""End-to-end orchestration.

Training path: the CN/AD subjects are the grading template library and the
only rows any fitting routine (age model, z-score, elastic net, classifier)
ever sees; template subjects are themselves graded leave-one-out so their
features carry no self-match bias.  sMCI/pMCI subjects are graded against
the full library and only ever classified.

Stages write their artifacts under the work directory so the CLI can run
them separately; `run` chains them in memory.  Reports never contain wall
times (they go to timing.txt), so a rerun with the same config and seed is
byte-identical in exact grading mode.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__, brain_graph, classify, featsel, volio
from .brain_graph import BrainGraph, build_graph, feature_names, graph_to_features
from .config import PipelineConfig
from .errors import DataError, GbsgError
from .grading import (
    GradingMap,
    TemplateEntry,
    TrainingLibrary,
    backend_name,
    grade_volume,
    set_threads,
)
from .grading.types import GRADE_SENTINEL
from .rng import derive_seed
from .synth import synth_cohort
from .volio import Cohort, read_labelmap, read_manifest, read_volume

POSITIVE_CLASS_NOTE = "pMCI"


@dataclass
class StageTimer:
    seconds: dict = field(default_factory=dict)

    def timed(self, name):
        timer = self

        class _Ctx:
            def __enter__(self_inner):
                self_inner.t0 = time.perf_counter()
                return self_inner

            def __exit__(self_inner, *exc):
                timer.seconds[name] = timer.seconds.get(name, 0.0) + (
                    time.perf_counter() - self_inner.t0
                )

        return _Ctx()

    def save(self, path):
        with open(path, "w") as f:
            for name, sec in self.seconds.items():
                f.write(f"{name} {sec:.3f}\n")


@dataclass
class RunResult:
    report_path: str
    reports: dict  # "svm" / "rf" -> EvalReport
    selection: featsel.SelectionMask
    canonical_ids: list
    counters: dict
    timer: StageTimer


# --- cohort / library ---------------------------------------------------------


def load_cohort(cfg: PipelineConfig) -> Cohort:
    return read_manifest(cfg.manifest_path)


def build_library(cfg: PipelineConfig) -> TrainingLibrary:
    """CN and AD subjects of the template manifest, with p=+1 / p=-1."""
    cohort = read_manifest(cfg.templates_path)
    entries = []
    for rec in cohort.by_group("CN", "AD"):
        entries.append(
            TemplateEntry(
                volume=read_volume(rec.volume_path),
                labels=read_labelmap(rec.label_path),
                status=1 if rec.group == "CN" else -1,
                subject_id=rec.subject_id,
            )
        )
    if not entries:
        raise DataError("template manifest has no CN or AD subjects")
    return TrainingLibrary(entries=entries)


# --- stages ---------------------------------------------------------------------


def stage_synth(cfg: PipelineConfig) -> str:
    manifest_path, _ = synth_cohort(cfg.synth_spec(), cfg.synth_out)
    return manifest_path


def _grading_dir(cfg):
    return os.path.join(cfg.workdir, "grading")


def _graph_dir(cfg):
    return os.path.join(cfg.workdir, "graphs")


def _features_dir(cfg):
    return os.path.join(cfg.workdir, "features")


def _models_dir(cfg):
    return os.path.join(cfg.workdir, "models")


def stage_grade(cfg: PipelineConfig, cohort: Cohort | None = None,
                library: TrainingLibrary | None = None,
                timer: StageTimer | None = None) -> dict:
    """Grade every subject; templates are graded against the library minus
    themselves.  Returns {subject_id: GradingMap} and writes map+mask files."""
    cohort = cohort or load_cohort(cfg)
    library = library or build_library(cfg)
    params = cfg.grading_params()
    threads = cfg.get("pipeline.threads")
    out_dir = _grading_dir(cfg)
    os.makedirs(out_dir, exist_ok=True)
    timer = timer or StageTimer()
    gradings = {}
    with timer.timed("grade"):
        for rec in cohort.records:
            vol = read_volume(rec.volume_path)
            labels = read_labelmap(rec.label_path)
            lib = library.without(rec.subject_id)
            gm = grade_volume(vol, labels, lib, params, threads=threads)
            gradings[rec.subject_id] = gm
            volio.write_volume(gm.to_volume(), os.path.join(out_dir, f"{rec.subject_id}.vol"))
            volio.write_labelmap(gm.mask_labelmap(), os.path.join(out_dir, f"{rec.subject_id}.mask"))
    return gradings


def _load_gradings(cfg, cohort) -> dict:
    out_dir = _grading_dir(cfg)
    gradings = {}
    for rec in cohort.records:
        vol = read_volume(os.path.join(out_dir, f"{rec.subject_id}.vol"))
        mask = read_labelmap(os.path.join(out_dir, f"{rec.subject_id}.mask"))
        grades = vol.data.astype(np.float64)
        m = mask.labels.astype(bool)
        grades[~m] = GRADE_SENTINEL
        gradings[rec.subject_id] = GradingMap(
            dims=vol.dims, spacing=vol.spacing, grades=grades, mask=m
        )
    return gradings


def stage_graph(cfg: PipelineConfig, cohort: Cohort | None = None,
                gradings: dict | None = None,
                timer: StageTimer | None = None):
    """Build every subject's graph; returns ({sid: BrainGraph}, canonical_ids)."""
    cohort = cohort or load_cohort(cfg)
    gradings = gradings or _load_gradings(cfg, cohort)
    params = cfg.graph_params()
    out_dir = _graph_dir(cfg)
    os.makedirs(out_dir, exist_ok=True)
    timer = timer or StageTimer()
    graphs = {}
    with timer.timed("graph"):
        for rec in cohort.records:
            labels = read_labelmap(rec.label_path)
            bg = build_graph(gradings[rec.subject_id], labels, params)
            graphs[rec.subject_id] = bg
            brain_graph.write_graph_csv(bg, os.path.join(out_dir, f"{rec.subject_id}.csv"))
    canonical = sorted({sid for bg in graphs.values() for sid in bg.structure_ids})
    with open(os.path.join(out_dir, "canonical_ids.txt"), "w") as f:
        f.write(" ".join(str(s) for s in canonical) + "\n")
    return graphs, canonical


def _read_graph_csv(path) -> BrainGraph:
    ids, gammas, dists, weights = [], [], [], []
    section = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line == "# vertices":
                section = "v"
            elif line == "# edges":
                section = "e"
            elif line and section == "v":
                sid, g = line.split(",")
                ids.append(int(sid))
                gammas.append(float(g))
            elif line and section == "e":
                _, _, d, w = line.split(",")
                dists.append(float(d))
                weights.append(float(w))
    return BrainGraph(
        structure_ids=ids, gamma=np.array(gammas),
        distances=np.array(dists), weights=np.array(weights), sigma=0.0,
    )


def _load_graphs(cfg, cohort):
    out_dir = _graph_dir(cfg)
    graphs = {rec.subject_id: _read_graph_csv(os.path.join(out_dir, f"{rec.subject_id}.csv"))
              for rec in cohort.records}
    canon_file = os.path.join(out_dir, "canonical_ids.txt")
    canonical = [int(s) for s in open(canon_file).read().split()]
    return graphs, canonical


@dataclass
class CohortFeatures:
    cohort: Cohort
    names: list
    z: featsel.FeatureMatrix  # final design matrix (age-corrected, z-scored)
    train_rows: np.ndarray  # bool, CN or AD
    cn_rows: np.ndarray
    test_rows: np.ndarray  # sMCI or pMCI
    imputation_events: list

    def train_labels(self) -> np.ndarray:
        """CN -> +1, AD -> -1, matching the template statuses."""
        return np.array([1.0 if r.group == "CN" else -1.0
                         for r in self.cohort.records])[self.train_rows]

    def test_truth(self) -> np.ndarray:
        """sMCI -> +1 (CN side), pMCI -> -1 (AD side)."""
        return np.array([-1.0 if r.group == "pMCI" else 1.0
                         for r in np.array(self.cohort.records, dtype=object)[self.test_rows]])


def stage_features(cfg: PipelineConfig, cohort: Cohort | None = None,
                   graphs=None, canonical=None,
                   timer: StageTimer | None = None) -> CohortFeatures:
    """Flatten graphs to the canonical order, impute holes from training rows,
    age-correct on CN, z-score on CN+AD, apply to all; save the matrices."""
    cohort = cohort or load_cohort(cfg)
    if graphs is None:
        graphs, canonical = _load_graphs(cfg, cohort)
    names = feature_names(canonical)
    timer = timer or StageTimer()
    out_dir = _features_dir(cfg)
    os.makedirs(out_dir, exist_ok=True)
    groups = np.array([r.group for r in cohort.records])
    ages = np.array([r.age for r in cohort.records])
    train_rows = (groups == "CN") | (groups == "AD")
    cn_rows = groups == "CN"
    test_rows = (groups == "sMCI") | (groups == "pMCI")
    with timer.timed("features"):
        raw = np.vstack([graph_to_features(graphs[r.subject_id], canonical)
                         for r in cohort.records])
        imputed, events = brain_graph.impute_features(raw, names, train_rows)
        fm_raw = featsel.FeatureMatrix(subject_ids=cohort.ids(), col_names=names,
                                       values=imputed)
        fm_raw.save_csv(os.path.join(out_dir, "features_raw.csv"))
        age_model = featsel.fit_age_correction(imputed[cn_rows], ages[cn_rows])
        corrected = featsel.apply_age_correction(imputed, ages, age_model)
        zmodel = featsel.zscore_fit(corrected[train_rows])
        z = featsel.zscore_apply(corrected, zmodel)
        fm_z = featsel.FeatureMatrix(subject_ids=cohort.ids(), col_names=names, values=z)
        fm_z.save_csv(os.path.join(out_dir, "features_z.csv"))
    return CohortFeatures(
        cohort=cohort, names=names, z=fm_z,
        train_rows=train_rows, cn_rows=cn_rows, test_rows=test_rows,
        imputation_events=events,
    )


def _load_features(cfg, cohort) -> CohortFeatures:
    fm_z = featsel.FeatureMatrix.load_csv(os.path.join(_features_dir(cfg), "features_z.csv"))
    if fm_z.subject_ids != cohort.ids():
        raise DataError("features_z.csv subjects do not match the manifest")
    groups = np.array([r.group for r in cohort.records])
    return CohortFeatures(
        cohort=cohort, names=fm_z.col_names, z=fm_z,
        train_rows=(groups == "CN") | (groups == "AD"),
        cn_rows=groups == "CN",
        test_rows=(groups == "sMCI") | (groups == "pMCI"),
        imputation_events=[],
    )


def stage_train(cfg: PipelineConfig, feats: CohortFeatures | None = None,
                timer: StageTimer | None = None):
    """Elastic-net selection and classifier training on CN/AD rows only."""
    timer = timer or StageTimer()
    if feats is None:
        feats = _load_features(cfg, load_cohort(cfg))
    x_train = feats.z.values[feats.train_rows]
    y_train = feats.train_labels()
    models_dir = _models_dir(cfg)
    os.makedirs(models_dir, exist_ok=True)
    with timer.timed("train"):
        selection = featsel.elastic_net_fit(x_train, y_train, cfg.enet_params())
        featsel.save_selection(selection, feats.names,
                               os.path.join(cfg.workdir, "selection.txt"))
        x_sel = x_train[:, selection.selected]
        kind = cfg.get("classify.kind")
        models = {}
        if kind in ("svm", "both"):
            c = cfg.get("classify.svm_c")
            if c is None:
                c, svm_model = classify.svm_grid_search(x_sel, y_train)
            else:
                svm_model = classify.svm_train(x_sel, y_train, c)
            classify.save_svm(svm_model, os.path.join(models_dir, "svm.txt"))
            models["svm"] = svm_model
        if kind in ("rf", "both"):
            rf_model = classify.rf_train(
                x_sel, y_train, cfg.rf_params(),
                derive_seed(cfg.get("pipeline.seed"), 2, 0),
            )
            classify.save_forest(rf_model, os.path.join(models_dir, "rf.txt"))
            models["rf"] = rf_model
    return selection, models


def _load_selection_mask(cfg, names) -> featsel.SelectionMask:
    pairs = featsel.load_selection(os.path.join(cfg.workdir, "selection.txt"))
    selected = np.zeros(len(names), bool)
    coefs = np.zeros(len(names))
    index = {n: i for i, n in enumerate(names)}
    for name, coef in pairs:
        if name not in index:
            raise DataError(f"selection feature {name!r} missing from the matrix")
        selected[index[name]] = True
        coefs[index[name]] = coef
    return featsel.SelectionMask(selected=selected, coefficients=coefs, lambda1=0.0,
                                 lambda2=0.0, iterations=0, converged=True, objective=0.0)


def stage_eval(cfg: PipelineConfig, feats: CohortFeatures | None = None,
               selection=None, models=None, counters: dict | None = None,
               timer: StageTimer | None = None) -> dict:
    """Predict sMCI vs pMCI, compute ACC/SEN/SPE (positive class pMCI), and
    write the report."""
    timer = timer or StageTimer()
    if feats is None:
        feats = _load_features(cfg, load_cohort(cfg))
    if selection is None:
        selection = _load_selection_mask(cfg, feats.names)
    if not feats.test_rows.any():
        raise DataError("cohort has no sMCI/pMCI subjects to evaluate")
    x_train = feats.z.values[feats.train_rows][:, selection.selected]
    y_train = feats.train_labels()
    x_test = feats.z.values[feats.test_rows][:, selection.selected]
    truth = feats.test_truth()  # pMCI -> -1 (AD side)
    kind = cfg.get("classify.kind")
    reports = {}
    with timer.timed("eval"):
        if kind in ("svm", "both"):
            if models and "svm" in models:
                svm_model = models["svm"]
            else:
                svm_model = classify.load_svm(os.path.join(_models_dir(cfg), "svm.txt"))
            preds, _ = classify.svm_predict(svm_model, x_test)
            reports["svm"] = classify.evaluate(preds, truth, positive_class=-1)
            reports["svm"].runs = [(reports["svm"].acc, reports["svm"].sen, reports["svm"].spe)]
        if kind in ("rf", "both"):
            reports["rf"] = classify.repeated_rf_eval(
                x_train, y_train, x_test, truth, cfg.rf_params(),
                master_seed=cfg.get("pipeline.seed"),
                runs=cfg.get("classify.rf_runs"), positive_class=-1,
            )
    if counters is None:
        counters = _disk_counters(cfg, feats)
    write_report(cfg, feats, selection, reports, counters, cfg.report_path)
    timer.save(os.path.join(cfg.workdir, "timing.txt"))
    return reports


def _disk_counters(cfg, feats: CohortFeatures) -> dict:
    voxels = 0
    for sid in feats.cohort.ids():
        mask_path = os.path.join(_grading_dir(cfg), f"{sid}.mask")
        if os.path.exists(mask_path):
            voxels += int(read_labelmap(mask_path).labels.astype(bool).sum())
    n_vertices = sum(1 for n in feats.names if n.startswith("V:"))
    return {
        "grading.mode": cfg.get("grading.method"),
        "grading.backend": backend_name(),
        "grading.k": cfg.get("grading.k"),
        "grading.radius": cfg.get("grading.radius"),
        "grading.search": cfg.get("grading.search"),
        "threads": cfg.get("pipeline.threads"),
        "subjects": len(feats.cohort),
        "templates": len(read_manifest(cfg.templates_path).by_group("CN", "AD")),
        "voxels_graded": voxels,
        "structures": n_vertices,
        "features": len(feats.names),
    }


# --- report ----------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_report(cfg: PipelineConfig, feats: CohortFeatures, selection,
                 reports: dict, counters: dict, path) -> None:
    lines = ["gbsg report v1", ""]
    lines.append("[config]")
    lines.append(f"package_version={__version__}")
    for key, val in cfg.resolved_items():
        lines.append(f"{key}={val}")
    lines.append("")
    lines.append("[selection]")
    lines.append(f"n_selected={selection.n_selected}")
    lines.append(f"lambda1={selection.lambda1:.12g}")
    lines.append(f"lambda2={selection.lambda2:.12g}")
    lines.append("age_correction=all_features")
    lines.append(f"positive_class={POSITIVE_CLASS_NOTE}")
    lines.append(f"imputed_entries={len(feats.imputation_events)}")
    sel_idx = np.nonzero(selection.selected)[0]
    for j in sel_idx:
        lines.append(f"feature={feats.names[j]} coef={selection.coefficients[j]:.12g}")
    lines.append("")
    lines.append("[metrics]")
    for kind in ("svm", "rf"):
        if kind not in reports:
            continue
        r = reports[kind]
        lines.append(f"{kind}.acc={_fmt(r.acc)}")
        lines.append(f"{kind}.sen={_fmt(r.sen)}")
        lines.append(f"{kind}.spe={_fmt(r.spe)}")
        if kind == "rf":
            lines.append(f"rf.acc_sd={_fmt(r.acc_sd)}")
            lines.append(f"rf.sen_sd={_fmt(r.sen_sd)}")
            lines.append(f"rf.spe_sd={_fmt(r.spe_sd)}")
            lines.append(f"rf.runs={len(r.runs)}")
        lines.append(f"{kind}.confusion=tp:{r.tp},fp:{r.fp},tn:{r.tn},fn:{r.fn}")
    lines.append("")
    lines.append("Method Classifier ACC SEN SPE")
    for kind in ("svm", "rf"):
        if kind in reports:
            r = reports[kind]
            lines.append(
                f"GBSG {kind.upper()} {r.acc:.1%} {r.sen:.1%} {r.spe:.1%}"
            )
    lines.append("")
    lines.append("[timing]")
    for key, val in sorted(counters.items()):
        lines.append(f"{key}={val}")
    lines.append("wall_seconds_file=timing.txt")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _run_stage(name, fn, *args, **kwargs):
    """Run one stage; on failure, prefix the error with the stage name.
    Partial artifacts stay under the work directory."""
    try:
        return fn(*args, **kwargs)
    except GbsgError as e:
        raise type(e)(f"[stage {name}] {e}") from e


def run_pipeline(cfg: PipelineConfig) -> RunResult:
    os.makedirs(cfg.workdir, exist_ok=True)
    timer = StageTimer()
    cohort = load_cohort(cfg)
    groups = {g: len(cohort.by_group(g)) for g in ("CN", "sMCI", "pMCI", "AD")}
    if groups["CN"] == 0 or groups["AD"] == 0:
        raise DataError("pipeline needs CN and AD subjects for training")
    if groups["sMCI"] + groups["pMCI"] == 0:
        raise DataError("pipeline needs sMCI or pMCI subjects to evaluate")
    library = build_library(cfg)
    gradings = _run_stage("grade", stage_grade, cfg, cohort, library, timer=timer)
    graphs, canonical = _run_stage("graph", stage_graph, cfg, cohort, gradings, timer=timer)
    feats = _run_stage("features", stage_features, cfg, cohort, graphs, canonical, timer=timer)
    selection, models = _run_stage("train", stage_train, cfg, feats, timer=timer)
    counters = {
        "grading.mode": cfg.get("grading.method"),
        "grading.backend": backend_name(),
        "grading.k": cfg.get("grading.k"),
        "grading.radius": cfg.get("grading.radius"),
        "grading.search": cfg.get("grading.search"),
        "threads": cfg.get("pipeline.threads"),
        "subjects": len(cohort),
        "templates": len(library),
        "voxels_graded": int(sum(g.mask.sum() for g in gradings.values())),
        "structures": len(canonical),
        "features": len(feats.names),
    }
    reports = _run_stage("eval", stage_eval, cfg, feats, selection, models,
                         counters=counters, timer=timer)
    timer.save(os.path.join(cfg.workdir, "timing.txt"))
    return RunResult(report_path=cfg.report_path, reports=reports, selection=selection,
                     canonical_ids=canonical, counters=counters, timer=timer)


# --- grading benchmark ---------------------------------------------------------------


def benchmark_grading(cfg: PipelineConfig, compare_backends: bool = False) -> str:
    """Time exact vs patch-match grading of one subject on the configured
    synthetic scene; optionally compare the numba and numpy backends."""
    from .grading import USE_NUMBA

    os.makedirs(cfg.workdir, exist_ok=True)
    bench_dir = os.path.join(cfg.workdir, "bench_data")
    spec = cfg.synth_spec()
    manifest, cohort = synth_cohort(spec, bench_dir)
    library = build_library_from(cohort)
    subject = cohort.records[0]
    vol = read_volume(subject.volume_path)
    labels = read_labelmap(subject.label_path)
    lib = library.without(subject.subject_id)
    threads = cfg.get("pipeline.threads")
    base = cfg.grading_params()
    lines = ["gbsg grading benchmark"]
    lines.append(f"dims={spec.dims[0]}x{spec.dims[1]}x{spec.dims[2]} "
                 f"templates={len(lib)} k={base.k} radius={base.radius} "
                 f"search={base.search} threads={set_threads(threads)}")
    results = {}
    for method in ("exact", "patchmatch"):
        params = cfg.grading_params()
        params.method = method
        # warm the JIT path outside the timed region
        grade_volume(vol, labels, lib, params, threads=1)
        t0 = time.perf_counter()
        gm = grade_volume(vol, labels, lib, params, threads=threads)
        dt = time.perf_counter() - t0
        results[method] = dt
        lines.append(f"mode={method} backend={backend_name()} threads={set_threads(threads)} "
                     f"voxels={int(gm.mask.sum())} seconds={dt:.3f}")
    if results["exact"] > 0:
        lines.append(f"patchmatch_speedup={results['exact'] / results['patchmatch']:.2f}x")
    if compare_backends and USE_NUMBA:
        small = cfg.grading_params()
        for method in ("exact", "patchmatch"):
            small.method = method
            per = {}
            for backend in ("numba", "numpy"):
                t0 = time.perf_counter()
                grade_volume(vol, labels, lib, small, backend=backend, threads=1)
                per[backend] = time.perf_counter() - t0
            lines.append(
                f"backend_compare mode={method} numba={per['numba']:.3f}s "
                f"numpy={per['numpy']:.3f}s speedup={per['numpy'] / per['numba']:.1f}x"
            )
    text = "\n".join(lines) + "\n"
    with open(os.path.join(cfg.workdir, "benchmark.txt"), "w") as f:
        f.write(text)
    return text


def build_library_from(cohort: Cohort) -> TrainingLibrary:
    entries = [
        TemplateEntry(
            volume=read_volume(r.volume_path), labels=read_labelmap(r.label_path),
            status=1 if r.group == "CN" else -1, subject_id=r.subject_id,
        )
        for r in cohort.by_group("CN", "AD")
    ]
    return TrainingLibrary(entries=entries)
