"""End-to-end orchestration: extract, train, weight, classify, fuse, report.

A run is driven by a small key-value config file and writes a fixed artifact
tree under its output directory.  Every stage is deterministic for fixed
seeds, so a rerun reproduces all artifacts byte for byte.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cdl as cdl_mod
from . import gmm as gmm_mod
from .dataio import (
    DatasetManifest,
    FeatureStore,
    load_manifest,
    read_wav,
    resolve_clip_path,
    save_manifest,
    split_dataset,
)
from .evaluation import EvaluationReport, evaluate, save_report
from .features import FeatureConfig, extract_selected
from .fusion import (
    FusionDecision,
    FusionWeights,
    ScoreMatrix,
    cross_validated_confusion,
    fuse,
    fusion_weights,
    normalize_scores,
    resubstitution_confusion,
    save_score_csv,
    save_weights_csv,
)

#: system id -> feature family it consumes, in canonical order
SYSTEM_EXTRACTORS = {
    "mfcc-gmm": "mfcc",
    "pncc-gmm": "pncc",
    "rcgcc-gmm": "rcgcc",
    "spcc-gmm": "spcc",
    "cepscom-gmm": "cepscom",
    "plp-gmm": "plp",
    "cepscom-cdl": "cepscom",
}

ALL_SYSTEMS = tuple(SYSTEM_EXTRACTORS)
DEFAULT_FUSED = ("cepscom-gmm", "cepscom-cdl", "plp-gmm")

WEIGHT_METHODS = ("cv", "resub")


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message carries the stage tag."""


@contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except (ValueError, OSError, KeyError) as exc:
        raise PipelineError(f"[{name}] {exc}") from exc


@dataclass
class PipelineConfig:
    """Run parameters; paths are resolved by the config parser."""

    manifest: Path
    out_dir: Path
    train_fraction: float = 0.25
    split_seed: int = 17
    gmm_seed: int = 23
    weights_folds: int = 4
    weights_seed: int = 29
    weights_method: str = "cv"
    mixtures_cepstral: int = 64
    mixtures_plp: int = 4
    frame_len: int = 2048
    hop: int = 1024
    systems: tuple = ALL_SYSTEMS
    fused: tuple = DEFAULT_FUSED
    cdl_mode: str = "centroid"

    def __post_init__(self) -> None:
        self.manifest = Path(self.manifest)
        self.out_dir = Path(self.out_dir)
        self.systems = tuple(self.systems)
        self.fused = tuple(self.fused)
        if not self.systems:
            raise ValueError("no systems configured")
        for name in self.systems:
            if name not in SYSTEM_EXTRACTORS:
                raise ValueError(
                    f"unknown system {name!r}; expected a subset of {ALL_SYSTEMS}"
                )
        if len(set(self.systems)) != len(self.systems):
            raise ValueError("systems list contains duplicates")
        if not self.fused:
            raise ValueError("fused list may not be empty")
        for name in self.fused:
            if name not in self.systems:
                raise ValueError(f"fused system {name!r} is not in the systems list")
        if len(set(self.fused)) != len(self.fused):
            raise ValueError("fused list contains duplicates")
        if self.weights_method not in WEIGHT_METHODS:
            raise ValueError(
                f"weights_method must be one of {WEIGHT_METHODS}, got {self.weights_method!r}"
            )
        if self.cdl_mode not in cdl_mod.CLASSIFY_MODES:
            raise ValueError(
                f"cdl_mode must be one of {cdl_mod.CLASSIFY_MODES}, got {self.cdl_mode!r}"
            )
        if self.weights_folds < 2:
            raise ValueError("weights_folds must be at least 2")
        if self.mixtures_cepstral < 1 or self.mixtures_plp < 1:
            raise ValueError("mixture counts must be positive")

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(frame_len=self.frame_len, hop=self.hop)

    def train_options(self) -> "TrainOptions":
        return TrainOptions(
            mixtures_cepstral=self.mixtures_cepstral,
            mixtures_plp=self.mixtures_plp,
            gmm_seed=self.gmm_seed,
            cdl_mode=self.cdl_mode,
        )


@dataclass(frozen=True)
class TrainOptions:
    """Knobs shared by system training inside and outside full runs."""

    mixtures_cepstral: int = 64
    mixtures_plp: int = 4
    gmm_seed: int = 23
    cdl_mode: str = "centroid"


_CONFIG_INT_KEYS = {
    "split_seed", "gmm_seed", "weights_folds", "weights_seed",
    "mixtures_cepstral", "mixtures_plp", "frame_len", "hop",
}
_CONFIG_FLOAT_KEYS = {"train_fraction"}
_CONFIG_LIST_KEYS = {"systems", "fused"}
_CONFIG_PATH_KEYS = {"manifest", "out_dir"}
_CONFIG_STR_KEYS = {"weights_method", "cdl_mode"}


def parse_config(path: str | Path) -> PipelineConfig:
    """Read ``key = value`` lines; relative paths are config-file relative."""
    path = Path(path)
    base = path.parent
    values: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in values:
            raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
        if key in _CONFIG_INT_KEYS:
            values[key] = int(value)
        elif key in _CONFIG_FLOAT_KEYS:
            values[key] = float(value)
        elif key in _CONFIG_LIST_KEYS:
            values[key] = tuple(v.strip() for v in value.split(",") if v.strip())
        elif key in _CONFIG_PATH_KEYS:
            p = Path(value)
            values[key] = p if p.is_absolute() else base / p
        elif key in _CONFIG_STR_KEYS:
            values[key] = value
        else:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    for required in ("manifest", "out_dir"):
        if required not in values:
            raise ValueError(f"{path}: missing required key {required!r}")
    return PipelineConfig(**values)


@dataclass
class SystemModel:
    """A trained classifier plus the bookkeeping to score clips with it."""

    system_id: str
    extractor: str
    class_names: list
    gmm_bank: gmm_mod.GmmBank | None = None
    cdl_model: cdl_mod.CdlProjection | None = None

    @property
    def kind(self) -> str:
        return "cdl" if self.cdl_model is not None else "gmm"


def required_extractors(system_ids) -> list:
    names = {SYSTEM_EXTRACTORS[s] for s in system_ids}
    order = ("mfcc", "plp", "pncc", "rcgcc", "spcc", "cepscom")
    return [n for n in order if n in names]


def extract_for_manifest(
    manifest: DatasetManifest,
    manifest_path: str | Path,
    extractors,
    cfg: FeatureConfig,
) -> FeatureStore:
    """Decode and extract every clip; records are keyed by manifest path."""
    store = FeatureStore()
    for entry_path, _ in manifest.entries:
        clip = read_wav(resolve_clip_path(manifest_path, entry_path))
        clip = replace(clip, source_id=entry_path)
        for name, mat in extract_selected(clip, extractors, cfg).items():
            store.add(entry_path, name, mat.values)
    return store


def _gmm_seed(base: int, system_id: str, class_index: int) -> int:
    system_index = ALL_SYSTEMS.index(system_id)
    return (base * 1000003 + system_index * 101 + class_index) & 0x7FFFFFFF


def fit_system(
    system_id: str,
    store: FeatureStore,
    train: DatasetManifest,
    opts: TrainOptions = TrainOptions(),
) -> SystemModel:
    """Train one system on the given manifest's clips."""
    extractor = SYSTEM_EXTRACTORS[system_id]
    labels = train.label_indices()
    if system_id.endswith("-cdl"):
        descriptors = [
            cdl_mod.covariance_descriptor(
                store.get(entry_path, extractor), source_id=entry_path
            )
            for entry_path, _ in train.entries
        ]
        model = cdl_mod.fit_cdl(descriptors, labels, n_classes=len(train.class_names))
        return SystemModel(
            system_id=system_id,
            extractor=extractor,
            class_names=list(train.class_names),
            cdl_model=model,
        )
    n_components = opts.mixtures_plp if extractor == "plp" else opts.mixtures_cepstral
    class_features = []
    seeds = []
    for class_index, class_name in enumerate(train.class_names):
        rows = [
            store.get(entry_path, extractor)
            for (entry_path, label) in train.entries
            if label == class_name
        ]
        if not rows:
            raise ValueError(f"{system_id}: class {class_name!r} has no training clips")
        stacked = np.vstack(rows)
        if stacked.shape[0] < n_components:
            raise ValueError(
                f"{system_id}: class {class_name!r} has {stacked.shape[0]} frames, "
                f"fewer than {n_components} mixture components"
            )
        class_features.append(stacked)
        seeds.append(_gmm_seed(opts.gmm_seed, system_id, class_index))
    bank = gmm_mod.fit_gmm_bank(class_features, n_components, seeds)
    return SystemModel(
        system_id=system_id,
        extractor=extractor,
        class_names=list(train.class_names),
        gmm_bank=bank,
    )


def _clip_scores(model: SystemModel, values: np.ndarray, cdl_mode: str) -> np.ndarray:
    if model.kind == "gmm":
        return gmm_mod.classify_gmm(model.gmm_bank, values)
    desc = cdl_mod.covariance_descriptor(values)
    return cdl_mod.classify_cdl(model.cdl_model, desc, mode=cdl_mode)


def score_system(
    model: SystemModel,
    store: FeatureStore,
    clips: DatasetManifest,
    cdl_mode: str = "centroid",
) -> ScoreMatrix:
    """Raw per-class scores for every clip in the manifest."""
    rows = [
        _clip_scores(model, store.get(entry_path, model.extractor), cdl_mode)
        for entry_path, _ in clips.entries
    ]
    return ScoreMatrix(
        system_id=model.system_id,
        clip_ids=[entry_path for entry_path, _ in clips.entries],
        class_names=list(model.class_names),
        values=np.vstack(rows) if rows else np.zeros((0, len(model.class_names))),
        normalized=False,
    )


def _fold_runner(
    system_id: str,
    store: FeatureStore,
    train: DatasetManifest,
    opts: TrainOptions,
):
    def run(train_idx, test_idx):
        model = fit_system(system_id, store, train.subset(train_idx), opts)
        predictions = []
        for i in test_idx:
            entry_path = train.entries[i][0]
            scores = _clip_scores(
                model, store.get(entry_path, model.extractor), opts.cdl_mode
            )
            predictions.append(int(np.argmax(scores)))
        return predictions

    return run


def estimate_weights(
    store: FeatureStore,
    train: DatasetManifest,
    system_ids,
    opts: TrainOptions = TrainOptions(),
    method: str = "cv",
    folds: int = 4,
    seed: int = 29,
) -> FusionWeights:
    """Reliability weights for the given systems from training-set confusions."""
    if method not in WEIGHT_METHODS:
        raise ValueError(f"method must be one of {WEIGHT_METHODS}, got {method!r}")
    labels = train.label_indices()
    n_classes = len(train.class_names)
    confusions = []
    for system_id in system_ids:
        runner = _fold_runner(system_id, store, train, opts)
        if method == "cv":
            confusion = cross_validated_confusion(
                labels, n_classes, folds, seed, runner
            )
        else:
            confusion = resubstitution_confusion(labels, n_classes, runner)
        confusions.append(confusion)
    return fusion_weights(confusions, list(system_ids), list(train.class_names))


@dataclass
class RunResult:
    """Everything a run produced, with the paths it was written to."""

    config: PipelineConfig
    class_names: list
    reports: dict
    fusion_report: EvaluationReport
    weights: FusionWeights
    decision: FusionDecision
    artifact_paths: dict = field(default_factory=dict)


def _model_path(out_dir: Path, system_id: str) -> Path:
    suffix = ".sfc" if system_id.endswith("-cdl") else ".sfg"
    return out_dir / "models" / f"{system_id}{suffix}"


def save_system_model(path: str | Path, model: SystemModel) -> None:
    if model.kind == "gmm":
        gmm_mod.save_gmm_bank(path, model.gmm_bank)
    else:
        cdl_mod.save_cdl_model(path, model.cdl_model)


def _write_summary(path: Path, result: RunResult, train_count: int, test_count: int) -> None:
    lines = [
        f"clips: {train_count + test_count} (train {train_count}, test {test_count})",
        "classes: " + ", ".join(result.class_names),
        "average accuracy (%):",
    ]
    for system_id in result.config.systems:
        report = result.reports[system_id]
        lines.append(f"  {system_id:<12} {100.0 * report.average_accuracy:6.2f}")
    lines.append(f"  {'fusion':<12} {100.0 * result.fusion_report.average_accuracy:6.2f}")
    lines.append("fused systems: " + ", ".join(result.config.fused))
    if result.config.weights_method == "cv":
        lines.append(f"weights method: cv ({result.config.weights_folds} folds)")
    else:
        lines.append("weights method: resubstitution")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_pipeline(config: PipelineConfig | str | Path) -> RunResult:
    """Execute the full chain and write all artifacts under ``out_dir``."""
    if not isinstance(config, PipelineConfig):
        with _stage("config"):
            config = parse_config(config)

    with _stage("load"):
        manifest = load_manifest(config.manifest)
    with _stage("split"):
        train, test = split_dataset(manifest, config.train_fraction, config.split_seed)
        out = config.out_dir
        out.mkdir(parents=True, exist_ok=True)
        save_manifest(train, out / "train_manifest.tsv")
        save_manifest(test, out / "test_manifest.tsv")

    with _stage("extract"):
        extractors = required_extractors(config.systems)
        store = extract_for_manifest(
            manifest, config.manifest, extractors, config.feature_config()
        )

    with _stage("weights"):
        weights = estimate_weights(
            store,
            train,
            config.fused,
            config.train_options(),
            method=config.weights_method,
            folds=config.weights_folds,
            seed=config.weights_seed,
        )
        (out / "models").mkdir(exist_ok=True)
        save_weights_csv(out / "weights.csv", weights)

    with _stage("train"):
        models = {}
        opts = config.train_options()
        for system_id in config.systems:
            model = fit_system(system_id, store, train, opts)
            save_system_model(_model_path(out, system_id), model)
            models[system_id] = model

    with _stage("classify"):
        (out / "scores").mkdir(exist_ok=True)
        raw_scores = {}
        for system_id in config.systems:
            scores = score_system(models[system_id], store, test, config.cdl_mode)
            save_score_csv(out / "scores" / f"{system_id}.csv", scores)
            raw_scores[system_id] = scores

    with _stage("fuse"):
        normalized = [normalize_scores(raw_scores[s]) for s in config.fused]
        decision = fuse(normalized, weights)
        fused_matrix = ScoreMatrix(
            system_id="fusion",
            clip_ids=decision.clip_ids,
            class_names=decision.class_names,
            values=decision.fused,
            normalized=False,
        )
        save_score_csv(out / "scores" / "fusion.csv", fused_matrix)

    with _stage("evaluate"):
        truths = test.label_indices()
        (out / "reports").mkdir(exist_ok=True)
        reports = {}
        for system_id in config.systems:
            predictions = np.argmax(raw_scores[system_id].values, axis=1)
            report = evaluate(predictions, truths, manifest.class_names, system_id)
            save_report(out / "reports" / f"{system_id}.txt", report)
            reports[system_id] = report
        fusion_report = evaluate(
            decision.predicted, truths, manifest.class_names, "fusion"
        )
        save_report(out / "reports" / "fusion.txt", fusion_report)

        result = RunResult(
            config=config,
            class_names=list(manifest.class_names),
            reports=reports,
            fusion_report=fusion_report,
            weights=weights,
            decision=decision,
            artifact_paths={
                "out_dir": out,
                "weights": out / "weights.csv",
                "summary": out / "summary.txt",
            },
        )
        _write_summary(out / "summary.txt", result, len(train), len(test))
    return result
