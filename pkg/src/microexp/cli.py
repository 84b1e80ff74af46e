"""Batch front-end: synthesize, preprocess, extract, evaluate, sweep.

Dataset tree layout::

    <root>/index.csv
    <root>/<subject>/<sample>/frames/frame_0000.pgm ...
    <root>/<subject>/<sample>/clouds/cloud_0000.ply ...
    <root>/<subject>/<sample>/landmarks2d.csv
    <root>/<subject>/<sample>/landmarks3d.csv

Exit codes: 0 ok, 1 usage error, 2 data error, 3 partial failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import curvature3d, dataset, fileio, learn, preprocess2d, preprocess3d
from .curvature3d import CurvatureConfig, DEFAULT_LANDMARK_SUBSET
from .dataset import IndexFormatError, SampleData, SampleRecord
from .lbptop import LbpTopConfig, lbp_top_histogram, mean_difference_weights
from .synth import SynthSpec, make_dataset

RESULTS_HEADER = "radius,features,protocol,accuracy,f1"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PARTIAL = 3

FEATURE_KINDS = ("2d", "3d-si", "3d-hk", "3d-sihk")


class UsageError(ValueError):
    pass


class DataError(ValueError):
    pass


def _parse_ints(text: str, n: int) -> tuple[int, ...]:
    parts = tuple(int(p) for p in str(text).split(","))
    if len(parts) != n:
        raise ValueError(f"expected {n} comma-separated integers, got {text!r}")
    return parts


def _parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class RunConfig:
    """Full pipeline configuration; round-trips losslessly through the flat
    key=value config file format."""

    dataset_root: str = "data"
    label_mode: str = "objective"           # objective | nonobjective
    frame_rate: float = 60.0
    lbp: LbpTopConfig = field(default_factory=LbpTopConfig)
    curvature: CurvatureConfig = field(default_factory=CurvatureConfig)
    curvature_frames: str = "onset-apex"    # onset-apex | all
    weight_radius_px: int = 4
    fusion_a: float | None = None
    fusion_sweep: bool = True
    protocol: str = "loso"                  # loso | kfold
    kfold_k: int = 10
    kfold_repeats: int = 10
    eval_features: tuple[str, ...] = ("2d", "3d-si", "3d-hk", "3d-sihk")
    seed: int = 0
    out_dir: str = "out"
    workers: int = 1
    denoise_k: int = 8
    denoise_sigma: float = 2.0
    crop_radius: float = 0.1
    tip_at: str = "min"
    inner_eye_left: int = 22
    inner_eye_right: int = 25
    nasal_spine: int = 16
    landmark_subset: tuple[int, ...] = DEFAULT_LANDMARK_SUBSET
    landmark_subset_file: str | None = None
    synth: SynthSpec = field(default_factory=SynthSpec)

    def __post_init__(self):
        if self.label_mode not in ("objective", "nonobjective"):
            raise ValueError(f"label_mode must be objective|nonobjective, got {self.label_mode!r}")
        if self.protocol not in ("loso", "kfold"):
            raise ValueError(f"protocol must be loso|kfold, got {self.protocol!r}")
        if self.curvature_frames not in ("onset-apex", "all"):
            raise ValueError("curvature_frames must be onset-apex|all")
        for kind in self.eval_features:
            if kind not in FEATURE_KINDS:
                raise ValueError(f"unknown feature kind {kind!r}")

    def to_dict(self) -> dict[str, str]:
        d = {
            "data.root": self.dataset_root,
            "data.label_mode": self.label_mode,
            "data.frame_rate": repr(self.frame_rate),
            "lbp.radii": ",".join(map(str, self.lbp.radii)),
            "lbp.neighbors": ",".join(map(str, self.lbp.neighbors)),
            "lbp.blocks": ",".join(map(str, self.lbp.blocks)),
            "lbp.overlap": str(self.lbp.overlap),
            "curv.radius": repr(self.curvature.neighborhood_radius),
            "curv.zero_eps": repr(self.curvature.zero_eps),
            "curv.region_radius": repr(self.curvature.landmark_region_radius),
            "curv.frames": self.curvature_frames,
            "weights.radius_px": str(self.weight_radius_px),
            "fusion.sweep": "true" if self.fusion_sweep else "false",
            "eval.protocol": self.protocol,
            "eval.k": str(self.kfold_k),
            "eval.repeats": str(self.kfold_repeats),
            "eval.features": ",".join(self.eval_features),
            "run.seed": str(self.seed),
            "run.out": self.out_dir,
            "run.workers": str(self.workers),
            "clean.k": str(self.denoise_k),
            "clean.sigma": repr(self.denoise_sigma),
            "clean.crop_radius": repr(self.crop_radius),
            "clean.tip_at": self.tip_at,
            "landmarks.inner_eye_left": str(self.inner_eye_left),
            "landmarks.inner_eye_right": str(self.inner_eye_right),
            "landmarks.nasal_spine": str(self.nasal_spine),
            **({"landmarks.subset_file": self.landmark_subset_file}
               if self.landmark_subset_file
               else {"landmarks.subset": ",".join(map(str, self.landmark_subset))}),
            "synth.subjects": str(self.synth.n_subjects),
            "synth.samples": str(self.synth.samples_per_subject),
            "synth.classes": str(self.synth.n_classes),
            "synth.signal": self.synth.signal,
            "synth.noise_2d": repr(self.synth.noise_2d),
            "synth.noise_3d": repr(self.synth.noise_3d),
            "synth.points": str(self.synth.n_points),
            "synth.frames": str(self.synth.n_frames),
        }
        if self.fusion_a is not None:
            d["fusion.a"] = repr(self.fusion_a)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "RunConfig":
        base = cls()
        get = d.get
        lbp = LbpTopConfig(
            radii=_parse_ints(get("lbp.radii", "1,1,4"), 3),
            neighbors=_parse_ints(get("lbp.neighbors", "8,8,8"), 3),
            blocks=_parse_ints(get("lbp.blocks", "5,5"), 2),
            overlap=int(get("lbp.overlap", "0")),
        )
        curv = CurvatureConfig(
            neighborhood_radius=float(get("curv.radius", "0.02")),
            zero_eps=float(get("curv.zero_eps", "0.5")),
            landmark_region_radius=float(get("curv.region_radius", "0.02")),
        )
        synth = SynthSpec(
            n_subjects=int(get("synth.subjects", str(base.synth.n_subjects))),
            samples_per_subject=int(get("synth.samples", str(base.synth.samples_per_subject))),
            n_classes=int(get("synth.classes", str(base.synth.n_classes))),
            signal=get("synth.signal", base.synth.signal),
            noise_2d=float(get("synth.noise_2d", repr(base.synth.noise_2d))),
            noise_3d=float(get("synth.noise_3d", repr(base.synth.noise_3d))),
            n_points=int(get("synth.points", str(base.synth.n_points))),
            n_frames=int(get("synth.frames", str(base.synth.n_frames))),
            seed=int(get("run.seed", "0")),
        )
        subset_file = get("landmarks.subset_file")
        if subset_file:
            from .curvature3d import load_landmark_subset
            subset = load_landmark_subset(subset_file)
        else:
            subset = tuple(int(v) for v in get("landmarks.subset", "").split(",")
                           if v.strip()) or DEFAULT_LANDMARK_SUBSET
        return cls(
            dataset_root=get("data.root", base.dataset_root),
            label_mode=get("data.label_mode", base.label_mode),
            frame_rate=float(get("data.frame_rate", repr(base.frame_rate))),
            lbp=lbp,
            curvature=curv,
            curvature_frames=get("curv.frames", base.curvature_frames),
            weight_radius_px=int(get("weights.radius_px", str(base.weight_radius_px))),
            fusion_a=float(d["fusion.a"]) if "fusion.a" in d else None,
            fusion_sweep=_parse_bool(get("fusion.sweep", "true")),
            protocol=get("eval.protocol", base.protocol),
            kfold_k=int(get("eval.k", str(base.kfold_k))),
            kfold_repeats=int(get("eval.repeats", str(base.kfold_repeats))),
            eval_features=tuple(v.strip() for v in
                                get("eval.features", ",".join(base.eval_features)).split(",")
                                if v.strip()),
            seed=int(get("run.seed", str(base.seed))),
            out_dir=get("run.out", base.out_dir),
            workers=int(get("run.workers", str(base.workers))),
            denoise_k=int(get("clean.k", str(base.denoise_k))),
            denoise_sigma=float(get("clean.sigma", repr(base.denoise_sigma))),
            crop_radius=float(get("clean.crop_radius", repr(base.crop_radius))),
            tip_at=get("clean.tip_at", base.tip_at),
            inner_eye_left=int(get("landmarks.inner_eye_left", str(base.inner_eye_left))),
            inner_eye_right=int(get("landmarks.inner_eye_right", str(base.inner_eye_right))),
            nasal_spine=int(get("landmarks.nasal_spine", str(base.nasal_spine))),
            landmark_subset=subset,
            landmark_subset_file=subset_file,
            synth=synth,
        )

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_dict(fileio.load_config(path))

    def to_file(self, path) -> None:
        fileio.save_config(path, self.to_dict())


# --- dataset tree I/O -------------------------------------------------------

def sample_dir(root, record: SampleRecord) -> Path:
    return Path(root) / record.subject_id / record.sample_id


def write_sample_tree(root, record: SampleRecord, sample: SampleData) -> None:
    d = sample_dir(root, record)
    d.mkdir(parents=True, exist_ok=True)
    fileio.write_volume(d / "frames", sample.video)
    fileio.write_cloud_sequence(d / "clouds", sample.clouds)
    if sample.landmarks2d is not None:
        fileio.write_landmarks(d / "landmarks2d.csv", sample.landmarks2d, dims=2)
    if sample.landmarks3d is not None:
        fileio.write_landmarks(d / "landmarks3d.csv", sample.landmarks3d, dims=3)


def write_dataset_tree(root, records, samples) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    dataset.save_index(records, root / "index.csv")
    for record, sample in zip(records, samples):
        write_sample_tree(root, record, sample)


def read_sample_tree(root, record: SampleRecord, frame_rate: float) -> SampleData:
    d = sample_dir(root, record)
    if not d.is_dir():
        raise DataError(f"sample directory missing: {d}")
    video = fileio.read_volume(d / "frames")
    clouds = fileio.read_cloud_sequence(d / "clouds")
    lm2_path = d / "landmarks2d.csv"
    lm3_path = d / "landmarks3d.csv"
    if not lm2_path.exists():
        raise DataError(f"missing landmark file: {lm2_path}")
    if not lm3_path.exists():
        raise DataError(f"missing landmark file: {lm3_path}")
    return SampleData(
        video=video,
        clouds=tuple(clouds),
        landmarks2d=tuple(fileio.read_landmarks(lm2_path, dims=2)),
        landmarks3d=tuple(fileio.read_landmarks(lm3_path, dims=3)),
        frame_rate=frame_rate,
    )


# --- preprocess -------------------------------------------------------------

def preprocess_sample(sample: SampleData, cfg: RunConfig) -> tuple[SampleData, dict]:
    """Align + crop the video and denoise + crop + register the clouds."""
    lm0 = sample.landmarks2d[0]
    h, w = sample.video.height, sample.video.width
    canonical_left = (preprocess2d.CANONICAL_LEFT_EYE[0] * w,
                      preprocess2d.CANONICAL_LEFT_EYE[1] * h)
    canonical_right = (preprocess2d.CANONICAL_RIGHT_EYE[0] * w,
                       preprocess2d.CANONICAL_RIGHT_EYE[1] * h)
    transform = preprocess2d.estimate_alignment(
        lm0[cfg.inner_eye_left], lm0[cfg.inner_eye_right],
        canonical_left, canonical_right)

    warped = preprocess2d.warp_volume(sample.video, transform)
    warped_marks = [transform.apply(m) for m in sample.landmarks2d]
    eyes0 = (warped_marks[0][cfg.inner_eye_left], warped_marks[0][cfg.inner_eye_right])
    spine0 = warped_marks[0][cfg.nasal_spine]
    crop = preprocess2d.crop_face(warped, eyes0, spine0)
    top, left, _, _ = crop.rect
    shifted_marks = [m - np.array([left, top]) for m in warped_marks]

    cleaned = [preprocess3d.denoise(c, k=cfg.denoise_k, sigma_mult=cfg.denoise_sigma)
               for c in sample.clouds]
    tip = preprocess3d.find_nose_tip(cleaned[0], tip_at=cfg.tip_at)
    cropped = [preprocess3d.spherical_crop(c, tip, cfg.crop_radius) for c in cleaned]
    registered = preprocess3d.register_sequence(cropped, sample.landmarks3d)

    info = {
        "crop_rect": list(crop.rect),
        "crop_clamped": crop.clamped,
        "nose_tip": [float(v) for v in tip],
        "icp_residuals": [float(r) for r in registered.residuals],
        "icp_converged": list(registered.converged),
    }
    out = SampleData(
        video=crop.volume,
        clouds=registered.clouds,
        landmarks2d=tuple(shifted_marks),
        landmarks3d=registered.landmarks,
        frame_rate=sample.frame_rate,
    )
    return out, info


def cmd_preprocess(cfg: RunConfig) -> int:
    root = Path(cfg.dataset_root)
    out_root = Path(cfg.out_dir) / "preprocessed"
    records = dataset.load_index(root / "index.csv")

    def run_one(record):
        sample = read_sample_tree(root, record, cfg.frame_rate)
        return preprocess_sample(sample, cfg)

    statuses: dict[str, str] = {}
    details: dict[str, dict] = {}
    kept_records = []
    results = []
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = [(r, pool.submit(run_one, r)) for r in records]
    else:
        outcomes = [(r, None) for r in records]

    for record, fut in outcomes:
        key = f"{record.subject_id}/{record.sample_id}"
        try:
            processed, info = fut.result() if fut is not None else run_one(record)
        except (ValueError, OSError) as exc:
            statuses[key] = f"skipped: {exc}"
            continue
        statuses[key] = "ok"
        details[key] = info
        kept_records.append(record)
        results.append(processed)

    out_root.mkdir(parents=True, exist_ok=True)
    dataset.save_index(kept_records, out_root / "index.csv")
    for record, processed in zip(kept_records, results):
        write_sample_tree(out_root, record, processed)

    manifest = {
        "config": cfg.to_dict(),
        "lbp_fingerprint": cfg.lbp.fingerprint,
        "curvature_fingerprint": cfg.curvature.fingerprint,
        "samples": statuses,
        "details": details,
    }
    (out_root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True),
                                            encoding="utf-8")
    n_failed = sum(1 for s in statuses.values() if s != "ok")
    if records and n_failed / len(records) > 0.1:
        return EXIT_PARTIAL
    return EXIT_OK


# --- extract ----------------------------------------------------------------

def extract_sample_feature(sample: SampleData, record: SampleRecord,
                           kind: str, cfg: RunConfig):
    """One sample's feature of the requested kind, from preprocessed data."""
    if kind == "2d":
        return lbp_top_histogram(sample.video, cfg.lbp)
    window = preprocess2d.FrameVolume(sample.video.data[record.onset:])
    marks = sample.landmarks2d[record.onset][list(cfg.landmark_subset)]
    weights = mean_difference_weights(window, marks, cfg.weight_radius_px)
    if kind in ("3d-si", "3d-hk"):
        return curvature3d.sequence_feature(
            sample, record, weights, kind.removeprefix("3d-"), cfg.curvature,
            frames=cfg.curvature_frames, subset=cfg.landmark_subset)
    if kind == "3d-sihk":
        si = curvature3d.sequence_feature(
            sample, record, weights, "si", cfg.curvature,
            frames=cfg.curvature_frames, subset=cfg.landmark_subset)
        hk = curvature3d.sequence_feature(
            sample, record, weights, "hk", cfg.curvature,
            frames=cfg.curvature_frames, subset=cfg.landmark_subset)
        return si.concat(hk, tag="3d-sihk")
    raise UsageError(f"unknown feature kind {kind!r}")


def cmd_extract(cfg: RunConfig, kind: str) -> int:
    if kind not in FEATURE_KINDS:
        raise UsageError(f"unknown feature kind {kind!r}; use one of {FEATURE_KINDS}")
    pre_root = Path(cfg.out_dir) / "preprocessed"
    records = dataset.load_index(pre_root / "index.csv")
    out_dir = Path(cfg.out_dir) / "features" / kind

    def run_one(record):
        sample = read_sample_tree(pre_root, record, cfg.frame_rate)
        return extract_sample_feature(sample, record, kind, cfg)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            features = list(pool.map(run_one, records))
    else:
        features = [run_one(r) for r in records]

    for record, feature in zip(records, features):
        d = out_dir / record.subject_id
        d.mkdir(parents=True, exist_ok=True)
        fileio.write_feature_csv(d / f"{record.sample_id}.csv", feature)
    return EXIT_OK


def load_features(cfg: RunConfig, kind: str, records):
    out = []
    for record in records:
        path = Path(cfg.out_dir) / "features" / kind / record.subject_id / f"{record.sample_id}.csv"
        if not path.exists():
            raise DataError(f"missing {kind} feature file for "
                            f"{record.subject_id}/{record.sample_id}: run extract first")
        out.append(fileio.read_feature_csv(path))
    return out


# --- eval -------------------------------------------------------------------

def _labels_of(records, label_mode: str):
    if label_mode == "objective":
        return [r.objective_label.value for r in records]
    return [r.nonobjective_label.value for r in records]


def _kfold_runs(cfg: RunConfig, labels):
    """Stratified fold sets for each k-fold repeat, reshuffled per repeat."""
    seed_seq = np.random.SeedSequence(cfg.seed)
    runs = []
    for child in seed_seq.spawn(cfg.kfold_repeats):
        rng = np.random.default_rng(child)
        members = learn.stratified_kfold_indices(labels, cfg.kfold_k, rng)
        folds = []
        for f in range(cfg.kfold_k):
            test = sorted(members[f])
            train_idx = sorted(i for g in range(cfg.kfold_k) if g != f for i in members[g])
            folds.append((train_idx, test))
        runs.append(folds)
    return runs


def evaluate_features(cfg: RunConfig, records, features_by_kind, train_fn=None):
    """Per-kind and fused evaluation rows under the configured protocol.

    Returns (rows, details) where each row is a dict with keys radius,
    features, protocol, accuracy, f1.
    """
    labels = _labels_of(records, cfg.label_mode)
    subjects = [r.subject_id for r in records]
    if cfg.protocol == "loso":
        fold_runs = [learn.loso_split(subjects)]
    else:
        fold_runs = _kfold_runs(cfg, labels)

    radius_str = repr(cfg.curvature.neighborhood_radius)
    proba_runs: dict[str, list] = {}
    rows = []
    details: dict = {"per_kind": {}, "label_mode": cfg.label_mode,
                     "lbp_fingerprint": cfg.lbp.fingerprint,
                     "curvature_fingerprint": cfg.curvature.fingerprint}

    for kind in cfg.eval_features:
        runs = []
        accs, f1s, per_fold = [], [], []
        for run_no, folds in enumerate(fold_runs):
            probas, fold_accs = learn.cross_val_proba(
                features_by_kind[kind], labels, folds,
                seed=cfg.seed + 1000 * run_no, train_fn=train_fn)
            result = learn.metrics([p.argmax_label for p in probas], labels)
            runs.append(probas)
            accs.append(result.accuracy)
            f1s.append(result.f1)
            per_fold.extend(fold_accs)
        proba_runs[kind] = runs
        rows.append({
            "radius": "-" if kind == "2d" else radius_str,
            "features": kind,
            "protocol": cfg.protocol,
            "accuracy": float(np.mean(accs)),
            "f1": float(np.mean(f1s)),
        })
        details["per_kind"][kind] = {"per_fold": per_fold, "accuracy": float(np.mean(accs))}

    fusion_grid = None
    if cfg.fusion_sweep:
        fusion_grid = (0.1, 0.2, 0.3, 0.4, 0.5)
    elif cfg.fusion_a is not None:
        fusion_grid = (cfg.fusion_a,)

    if fusion_grid and "2d" in cfg.eval_features:
        for kind in cfg.eval_features:
            if kind == "2d":
                continue
            best_a, best_acc, best_f1 = None, -1.0, 0.0
            for a in fusion_grid:
                accs, f1s = [], []
                for p2d, p3d in zip(proba_runs["2d"], proba_runs[kind]):
                    fused = [learn.fuse(p1, p2, a) for p1, p2 in zip(p2d, p3d)]
                    result = learn.metrics([f.argmax_label for f in fused], labels)
                    accs.append(result.accuracy)
                    f1s.append(result.f1)
                if np.mean(accs) > best_acc:
                    best_a, best_acc, best_f1 = a, float(np.mean(accs)), float(np.mean(f1s))
            rows.append({
                "radius": radius_str,
                "features": f"2d+{kind}",
                "protocol": cfg.protocol,
                "accuracy": best_acc,
                "f1": best_f1,
            })
            details.setdefault("fusion", {})[f"2d+{kind}"] = {"best_a": best_a,
                                                              "accuracy": best_acc}
    return rows, details


def _format_row(row: dict) -> str:
    return (f"{row['radius']},{row['features']},{row['protocol']},"
            f"{row['accuracy']:.4f},{row['f1']:.4f}")


def cmd_eval(cfg: RunConfig, train_fn=None) -> int:
    pre_root = Path(cfg.out_dir) / "preprocessed"
    records = dataset.load_index(pre_root / "index.csv")
    features_by_kind = {kind: load_features(cfg, kind, records)
                        for kind in cfg.eval_features}
    rows, details = evaluate_features(cfg, records, features_by_kind, train_fn=train_fn)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [RESULTS_HEADER] + [_format_row(r) for r in rows]
    (out / "results.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "eval_details.json").write_text(json.dumps(details, indent=2, sort_keys=True),
                                           encoding="utf-8")
    return EXIT_OK


# --- sweep --------------------------------------------------------------------

def parse_grid(text: str) -> list[dict[str, str]]:
    """Grid file: ``key = v1 | v2 | ...`` lines; returns the cartesian product
    as a list of config-override dicts (sorted key order)."""
    axes: dict[str, list[str]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"grid line {line_no}: expected key=v1|v2, got {raw!r}")
        key, values = line.split("=", 1)
        axes[key.strip()] = [v.strip() for v in values.split("|") if v.strip()]
    keys = sorted(axes)
    points = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        points.append(dict(zip(keys, combo)))
    return points if axes else []


def _grid_point_id(point: dict[str, str]) -> str:
    return ";".join(f"{k}={point[k]}" for k in sorted(point))


def cmd_sweep(cfg: RunConfig, grid_path) -> int:
    grid_path = Path(grid_path)
    if not grid_path.exists():
        raise DataError(f"grid file not found: {grid_path}")
    points = parse_grid(grid_path.read_text(encoding="utf-8"))
    grid_keys = sorted(points[0]) if points else []

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "sweep.csv"
    ledger_path = out / "sweep.done"

    done = set()
    if ledger_path.exists():
        done = {line.strip() for line in ledger_path.read_text(encoding="utf-8").splitlines()
                if line.strip()}
    if not csv_path.exists():
        header = ",".join(grid_keys + [RESULTS_HEADER])
        csv_path.write_text(header + "\n", encoding="utf-8")

    pre_root = Path(cfg.out_dir) / "preprocessed"
    records = dataset.load_index(pre_root / "index.csv")
    samples = {(r.subject_id, r.sample_id): read_sample_tree(pre_root, r, cfg.frame_rate)
               for r in records}

    n_failed = 0
    with csv_path.open("a", encoding="utf-8") as csv_fh, \
            ledger_path.open("a", encoding="utf-8") as ledger_fh:
        for point in points:
            point_id = _grid_point_id(point)
            if point_id in done:
                continue
            overrides = dict(cfg.to_dict())
            overrides.update(point)
            prefix = ",".join(point[k] for k in grid_keys)
            try:
                point_cfg = RunConfig.from_dict(overrides)
                features_by_kind = {
                    kind: [extract_sample_feature(samples[(r.subject_id, r.sample_id)],
                                                  r, kind, point_cfg)
                           for r in records]
                    for kind in point_cfg.eval_features
                }
                rows, _ = evaluate_features(point_cfg, records, features_by_kind)
            except (ValueError, KeyError):
                n_failed += 1
                error_row = f"-,error,{cfg.protocol},nan,nan"
                csv_fh.write((prefix + "," if prefix else "") + error_row + "\n")
                ledger_fh.write(point_id + "\n")
                csv_fh.flush()
                ledger_fh.flush()
                continue
            for row in rows:
                csv_fh.write((prefix + "," if prefix else "") + _format_row(row) + "\n")
            ledger_fh.write(point_id + "\n")
            csv_fh.flush()
            ledger_fh.flush()

    return EXIT_PARTIAL if n_failed else EXIT_OK


# --- synth / reliability --------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    spec = replace(cfg.synth, seed=cfg.seed)
    records, samples = make_dataset(spec)
    write_dataset_tree(cfg.dataset_root, records, samples)
    return EXIT_OK


def cmd_reliability(coder1: str | None, coder2: str | None, pairs_path) -> int:
    if pairs_path is not None:
        lines = Path(pairs_path).read_text(encoding="utf-8").splitlines()
        if lines and lines[0].startswith("sample"):
            lines = lines[1:]
        values = []
        for line in lines:
            if not line.strip():
                continue
            sample_id, aus1, aus2 = (p.strip() for p in line.split(",", 2))
            r = dataset.coder_reliability(dataset.parse_aus(aus1), dataset.parse_aus(aus2))
            values.append(r)
            print(f"{sample_id}: {r:.4f}")
        if values:
            print(f"mean: {float(np.mean(values)):.4f}")
        return EXIT_OK
    if coder1 is None or coder2 is None:
        raise UsageError("reliability needs --coder1 and --coder2, or --pairs FILE")
    r = dataset.coder_reliability(dataset.parse_aus(coder1), dataset.parse_aus(coder2))
    print(f"{r:.4f}")
    return EXIT_OK


# --- entry point -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="microexp",
                     description="2D+3D micro-expression baseline pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--workers", type=int, help="override run.workers")
        p.add_argument("--out", help="override run.out output directory")
        p.add_argument("--root", help="override data.root dataset root")

    for name in ("preprocess", "eval", "synth"):
        add_common(sub.add_parser(name))
    p_extract = sub.add_parser("extract")
    add_common(p_extract)
    p_extract.add_argument("--kind", required=True, choices=FEATURE_KINDS)
    p_sweep = sub.add_parser("sweep")
    add_common(p_sweep)
    p_sweep.add_argument("--grid", required=True, help="grid file key=v1|v2 per line")
    p_rel = sub.add_parser("reliability")
    p_rel.add_argument("--coder1", help="AU set like 1+2")
    p_rel.add_argument("--coder2", help="AU set like 1+2+4")
    p_rel.add_argument("--pairs", help="CSV sample,coder1_aus,coder2_aus")
    return parser


def _load_cfg(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, synth=replace(cfg.synth, seed=args.seed))
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if args.root is not None:
        cfg = replace(cfg, dataset_root=args.root)
    return cfg


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "reliability":
            return cmd_reliability(args.coder1, args.coder2, args.pairs)
        cfg = _load_cfg(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "preprocess":
            return cmd_preprocess(cfg)
        if args.command == "extract":
            return cmd_extract(cfg, args.kind)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.grid)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, IndexFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
