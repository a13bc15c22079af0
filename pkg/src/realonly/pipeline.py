"""End-to-end orchestration: manifests, feature extraction, and the commands
behind the ``realonly`` CLI."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import ocsvm
from .imagio import ImageError, Raster, center_crop, load_image, resize, save_image
from .metrics import report as metrics_report
from .noise import ExtractorError, ExtractorSpec, decode_external, extract_residual, load_external_residual
from .perturb import PerturbSpec, apply as apply_perturbation
from .simgen import SimSpec, simulate as simulate_image
from .spectrum import (SpectrumError, enhance, grid_shape, mean_profile, mean_spectrum, merge_channels,
                       resize_spectrum, residual_features, spectrum_to_image)

log = logging.getLogger(__name__)

LABELS = ("real", "generated", "unknown")
POLICIES = ("center_crop_256", "resize_256", "native")
IMAGE_SUFFIXES = {".png", ".ppm", ".jpg", ".jpeg"}
TARGET = 256
MIN_TRAIN_WARN = 100
BENCH_MIN_IMAGES = 100


class PipelineError(Exception):
    pass


# ---------------------------------------------------------------- manifests

@dataclass
class Entry:
    path: str
    label: str = "unknown"
    extra: dict = field(default_factory=dict)


@dataclass
class Manifest:
    entries: List[Entry]
    seed: int = 0
    split: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.label not in LABELS:
                raise PipelineError(f"bad label {e.label!r} for {e.path}")
            if e.path in seen:
                raise PipelineError(f"duplicate manifest path {e.path}")
            seen.add(e.path)

    @property
    def labels(self) -> List[str]:
        return [e.label for e in self.entries]

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise PipelineError(f"{path}: cannot read manifest ({exc})") from exc
        base = path.parent
        entries = []
        for item in doc.get("entries", []):
            p = Path(item["path"])
            if not p.is_absolute():
                p = base / p
            extra = {k: v for k, v in item.items() if k not in ("path", "label")}
            entries.append(Entry(str(p), item.get("label", "unknown"), extra))
        return cls(entries, int(doc.get("seed", 0)), doc.get("split", {}))

    def to_json(self, relative_to=None) -> str:
        items = []
        for e in self.entries:
            p = e.path
            if relative_to is not None:
                try:
                    p = os.path.relpath(p, relative_to)
                except ValueError:
                    pass
            items.append({"path": p, "label": e.label, **e.extra})
        doc = {"seed": self.seed, "entries": items}
        if self.split:
            doc["split"] = self.split
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_json(relative_to=path.parent))

    @classmethod
    def from_dir(cls, directory, label: str = "unknown") -> "Manifest":
        files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        return cls([Entry(str(p), label) for p in files])


def load_inputs(inputs, label: str = "unknown") -> Manifest:
    p = Path(inputs)
    if p.is_dir():
        return Manifest.from_dir(p, label)
    if p.is_file():
        return Manifest.load(p)
    raise PipelineError(f"{inputs}: not a directory or manifest file")


# ------------------------------------------------------------------- config

@dataclass(frozen=True)
class PipelineConfig:
    extractor: ExtractorSpec = field(default_factory=ExtractorSpec)
    k: int = 32
    input_policy: str = "center_crop_256"
    ocsvm: ocsvm.OcSvmConfig = field(default_factory=ocsvm.OcSvmConfig)
    seed: int = 0
    threads: Optional[int] = None

    def __post_init__(self):
        if self.input_policy not in POLICIES:
            raise PipelineError(f"input_policy must be one of {POLICIES}, got {self.input_policy!r}")
        if self.k < 1:
            raise PipelineError(f"k must be >= 1, got {self.k}")
        if self.input_policy != "native" and self.k > TARGET:
            raise PipelineError(f"k={self.k} too large for {TARGET}x{TARGET} inputs")

    @property
    def n_workers(self) -> int:
        env = os.environ.get("REALONLY_THREADS")
        if env:
            return max(1, int(env))
        if self.threads:
            return self.threads
        return min(8, os.cpu_count() or 1)

    def feature_config(self) -> dict:
        return {"k": self.k, "extractor": self.extractor.ident, "merge": "mean",
                "input_policy": self.input_policy}


_CONFIG_KEYS = {"extractor", "k", "input_policy", "nu", "gamma", "tol", "max_iter", "seed", "threads"}


def read_config_file(path) -> Dict[str, str]:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _CONFIG_KEYS:
            raise PipelineError(f"{path}:{lineno}: unrecognised config line {raw!r}")
        values[key] = value.strip()
    return values


def build_config(file_values: Optional[Dict[str, str]] = None, **overrides) -> PipelineConfig:
    """Merge defaults < config file < explicit overrides (None means unset)."""
    merged: Dict[str, object] = dict(file_values or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    extractor = merged.get("extractor", "gaussian:1.0")
    if isinstance(extractor, str):
        extractor = ExtractorSpec.parse(extractor)
    gamma = merged.get("gamma", "auto")
    if gamma != "auto":
        gamma = float(gamma)
    max_iter = merged.get("max_iter")
    oc = ocsvm.OcSvmConfig(
        nu=float(merged.get("nu", 0.1)),
        gamma=gamma,
        tol=float(merged.get("tol", 1e-6)),
        max_iter=int(max_iter) if max_iter not in (None, "", "none") else None,
    )
    threads = merged.get("threads")
    return PipelineConfig(
        extractor=extractor,
        k=int(merged.get("k", 32)),
        input_policy=str(merged.get("input_policy", "center_crop_256")),
        ocsvm=oc,
        seed=int(merged.get("seed", 0)),
        threads=int(threads) if threads not in (None, "") else None,
    )


def config_from_model(model: ocsvm.OcSvmModel, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Feature settings recorded in a model override ``base``."""
    base = base or PipelineConfig()
    fc = model.feature_config
    ext = ExtractorSpec.parse(fc["extractor"]) if fc.get("extractor") else base.extractor
    return replace(base, extractor=ext, k=int(fc.get("k") or base.k),
                   input_policy=fc.get("input_policy", base.input_policy))


# ----------------------------------------------------------------- features

def apply_policy(raster: Raster, policy: str):
    """Returns the working raster and the spectrum size to resample to (or None)."""
    if policy == "native":
        return raster, None
    if policy == "resize_256":
        if raster.width == TARGET and raster.height == TARGET:
            return raster, None
        return resize(raster, TARGET, TARGET, "bilinear"), None
    side = min(raster.width, raster.height)
    if side >= TARGET:
        return center_crop(raster, TARGET), None
    # small inputs (e.g. crop perturbations): amplitude plane is upsampled instead
    return center_crop(raster, side), (TARGET, TARGET)


@dataclass
class Timings:
    decode: float = 0.0
    noise: float = 0.0
    fft: float = 0.0
    svm: float = 0.0


def features_from_raster(raster: Raster, config: PipelineConfig, image_path=None,
                         timings: Optional[Timings] = None) -> np.ndarray:
    t0 = time.perf_counter()
    if config.extractor.kind == "external":
        ref = image_path or raster.source
        encoded = load_external_residual(config.extractor.directory, ref)
        if encoded.shape != raster.shape:
            raise ExtractorError(f"external residual for {ref} has shape {encoded.shape}, image {raster.shape}")
        encoded, size = apply_policy(encoded, config.input_policy)
        residual = decode_external(encoded)
    else:
        work, size = apply_policy(raster, config.input_policy)
        residual = extract_residual(work, config.extractor)
    t1 = time.perf_counter()
    feats = residual_features(residual, config.k, spectrum_size=size).values
    t2 = time.perf_counter()
    if timings is not None:
        timings.noise += t1 - t0
        timings.fft += t2 - t1
    return feats


def image_features(path, config: PipelineConfig, perturbation: Optional[PerturbSpec] = None,
                   timings: Optional[Timings] = None) -> np.ndarray:
    t0 = time.perf_counter()
    raster = load_image(path)
    if timings is not None:
        timings.decode += time.perf_counter() - t0
    if perturbation is not None and perturbation.kind != "none":
        if config.extractor.kind == "external":
            raise PipelineError("perturbations cannot be combined with external residuals")
        raster = apply_perturbation(raster, perturbation)
    return features_from_raster(raster, config, image_path=path, timings=timings)


def parallel_map(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map; exceptions are returned in place of results."""
    def guarded(item):
        try:
            return fn(item)
        except (ImageError, ExtractorError, SpectrumError, PipelineError) as exc:
            return exc

    if workers <= 1 or len(items) <= 1:
        return [guarded(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(guarded, items))


def extract_all(paths: Sequence[str], config: PipelineConfig, perturbations=None):
    """Features for every path; returns (matrix, kept paths, failures)."""
    if perturbations is None:
        jobs = [(p, None) for p in paths]
    else:
        jobs = list(zip(paths, perturbations))
    results = parallel_map(lambda job: image_features(job[0], config, job[1]), jobs, config.n_workers)
    feats, kept, failed = [], [], []
    for (path, _), res in zip(jobs, results):
        if isinstance(res, Exception):
            log.warning("skipping %s: %s", path, res)
            failed.append({"path": str(path), "error": str(res)})
        else:
            feats.append(res)
            kept.append(str(path))
    dim = grid_shape(TARGET, TARGET, config.k) if config.input_policy != "native" else None
    width = dim[0] * dim[1] if dim else (len(feats[0]) if feats else 0)
    matrix = np.vstack(feats) if feats else np.zeros((0, width))
    return matrix, kept, failed


def _dump_json(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ----------------------------------------------------------------- commands

def cmd_train(manifest: Manifest, config: PipelineConfig, model_out) -> Tuple[ocsvm.OcSvmModel, dict]:
    """Train on real images only. Any other label aborts before a single
    image is read."""
    bad = [e.path for e in manifest.entries if e.label != "real"]
    if bad:
        raise PipelineError(
            f"training manifest must contain only real images; {len(bad)} entries are not "
            f"labelled real (first: {bad[0]})"
        )
    if len(manifest.entries) < 2:
        raise PipelineError("training needs at least two real images")
    if len(manifest.entries) < MIN_TRAIN_WARN:
        log.warning("only %d training images; fewer than %d usually gives a loose model",
                    len(manifest.entries), MIN_TRAIN_WARN)
    paths = [e.path for e in manifest.entries]
    feats, kept, failed = extract_all(paths, config)
    if failed:
        raise PipelineError(f"{len(failed)} training images could not be processed: {failed[0]}")
    for p in kept:
        log.info("audit: train read %s", p)
    result = ocsvm.train(feats, config.ocsvm, feature_config=config.feature_config())
    model = result.model
    degenerate = bool(np.all(model.scaler.std <= ocsvm.STD_FLOOR))
    if degenerate:
        log.warning("all training features are identical; the model is degenerate")
    model.save(model_out)
    summary = {
        "n_train": len(kept),
        "sum_alpha": float(result.alpha.sum()),
        "n_sv": int(np.count_nonzero(result.alpha > 0)),
        "sv_fraction": result.sv_fraction,
        "outlier_fraction": result.outlier_fraction(config.ocsvm.tol),
        "kkt_gap": result.kkt_gap,
        "n_iter": result.n_iter,
        "rho": model.rho,
        "gamma": model.gamma,
        "degenerate": degenerate,
        "audit": kept,
    }
    return model, summary


def score_paths(model: ocsvm.OcSvmModel, paths: Sequence[str], config: PipelineConfig, perturbations=None):
    feats, kept, failed = extract_all(paths, config, perturbations)
    decisions = model.decision_batch(feats) if len(kept) else np.zeros(0)
    return decisions, kept, failed


def cmd_detect(model_path, inputs, report_out=None, config: Optional[PipelineConfig] = None) -> dict:
    model = ocsvm.OcSvmModel.load(model_path)
    config = config_from_model(model, config)
    manifest = load_inputs(inputs)
    paths = [e.path for e in manifest.entries]
    if not paths:
        log.warning("no input images found in %s", inputs)
    decisions, kept, failed = score_paths(model, paths, config)
    rows = [{"path": p, "decision": float(d), "verdict": ocsvm.verdict(d)} for p, d in zip(kept, decisions)]
    summary = {
        "n_images": len(rows),
        "n_real": sum(r["verdict"] == "real" for r in rows),
        "n_generated": sum(r["verdict"] == "generated" for r in rows),
        "n_failed": len(failed),
        "failed": failed,
    }
    doc = {"results": rows, "summary": summary}
    if report_out is not None:
        report_out = Path(report_out)
        if report_out.suffix.lower() == ".csv":
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["path", "decision_value", "verdict"])
            for r in rows:
                w.writerow([r["path"], repr(r["decision"]), r["verdict"]])
            report_out.write_text(buf.getvalue())
        else:
            _dump_json(doc, report_out)
    return doc


def _labelled(manifest: Manifest):
    entries = [e for e in manifest.entries if e.label in ("real", "generated")]
    labels = {e.label for e in entries}
    if labels != {"real", "generated"}:
        raise PipelineError("evaluation manifest needs both real and generated entries")
    return entries


def cmd_eval(model_path, manifest: Manifest, report_out=None, config: Optional[PipelineConfig] = None) -> dict:
    model = ocsvm.OcSvmModel.load(model_path)
    config = config_from_model(model, config)
    entries = _labelled(manifest)
    label_of = {e.path: e.label for e in entries}
    decisions, kept, failed = score_paths(model, [e.path for e in entries], config)
    rep = metrics_report(list(decisions), [label_of[p] for p in kept])
    if report_out is not None:
        _dump_json(rep, report_out)
    return rep


def _image_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1, np.uint64)[0])


def cmd_robustness(model_path, manifest: Manifest, grid: Sequence[PerturbSpec], report_out=None,
                   config: Optional[PipelineConfig] = None) -> List[dict]:
    """One metrics row per perturbation, applied to the generated side only."""
    model = ocsvm.OcSvmModel.load(model_path)
    config = config_from_model(model, config)
    entries = _labelled(manifest)
    real = [e.path for e in entries if e.label == "real"]
    gen = [e.path for e in entries if e.label == "generated"]
    real_dec, real_kept, _ = score_paths(model, real, config)
    rows = []
    for spec in grid:
        perts = [replace(spec, seed=_image_seed(spec.seed, i)) for i in range(len(gen))]
        gen_dec, gen_kept, _ = score_paths(model, gen, config, perts)
        rep = metrics_report(list(real_dec) + list(gen_dec),
                             ["real"] * len(real_kept) + ["generated"] * len(gen_kept))
        rows.append({"perturbation": spec.label, **rep})
    if report_out is not None:
        buf = io.StringIO()
        fields = ["perturbation", "acc", "ap", "f1", "n_real", "n_generated", "threshold"]
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        Path(report_out).write_text(buf.getvalue())
    return rows


def cmd_spectrum(inputs, out_dir, config: Optional[PipelineConfig] = None, write_mean_profile: bool = False,
                 period: Optional[int] = None) -> dict:
    """Render raw and enhanced spectra per image; optionally the mean row
    profile of the whole set and a peak report for ``period``."""
    from .simgen import peak_report  # local: keeps the import graph flat

    config = config or PipelineConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_inputs(inputs)
    specs, written, failed = [], [], []
    for e in manifest.entries:
        try:
            raster = load_image(e.path)
            work, size = apply_policy(raster, config.input_policy)
            if config.extractor.kind == "external":
                encoded, _ = apply_policy(load_external_residual(config.extractor.directory, e.path),
                                          config.input_policy)
                residual = decode_external(encoded)
            else:
                residual = extract_residual(work, config.extractor)
            spec = merge_channels(residual)
            if size is not None:
                spec = resize_spectrum(spec, *size)
        except (ImageError, ExtractorError, SpectrumError) as exc:
            log.warning("skipping %s: %s", e.path, exc)
            failed.append(e.path)
            continue
        stem = Path(e.path).stem
        save_image(spectrum_to_image(spec), out_dir / f"{stem}_raw.png")
        save_image(spectrum_to_image(enhance(spec)), out_dir / f"{stem}_enhanced.png")
        specs.append(spec)
        written.append(stem)
    result = {"images": written, "failed": failed}
    if specs and len({s.amp.shape for s in specs}) == 1:
        mean = mean_spectrum(specs)
        save_image(spectrum_to_image(mean), out_dir / "mean_raw.png")
        save_image(spectrum_to_image(enhance(mean)), out_dir / "mean_enhanced.png")
        if write_mean_profile:
            prof = mean_profile(specs)
            lines = ["u,mean_row_sum"] + [f"{u},{v!r}" for u, v in enumerate(prof.tolist())]
            (out_dir / "mean_profile.csv").write_text("\n".join(lines) + "\n")
            result["profile_rows"] = len(prof)
        if period:
            result["peak_report"] = peak_report(mean, period)
    return result


def cmd_simulate(inputs, out_dir, methods: Sequence[str] = ("nearest:4",), seed: int = 0,
                 size: int = TARGET, patches: int = 1, jitter: float = 0.1) -> Manifest:
    """Write paired ``real/`` and ``gen/`` directories plus ``manifest.json``.

    Each photo yields ``patches`` square crops of side ``size`` (the first is
    centred, the rest at seeded random offsets); crops are assigned to the
    simulation methods round-robin.
    """
    out_dir = Path(out_dir)
    (out_dir / "real").mkdir(parents=True, exist_ok=True)
    (out_dir / "gen").mkdir(parents=True, exist_ok=True)
    sims = [SimSpec.parse(m, seed=seed, jitter=jitter) for m in methods]
    source = load_inputs(inputs)
    rng = np.random.Generator(np.random.Philox(seed))
    entries = []
    n = 0
    for e in source.entries:
        try:
            raster = load_image(e.path)
        except ImageError as exc:
            log.warning("skipping %s: %s", e.path, exc)
            continue
        if min(raster.width, raster.height) < size:
            log.warning("skipping %s: smaller than %d", e.path, size)
            continue
        for j in range(patches):
            if j == 0:
                crop = center_crop(raster, size)
            else:
                top = int(rng.integers(0, raster.height - size + 1))
                left = int(rng.integers(0, raster.width - size + 1))
                crop = raster.with_data(raster.data[:, top:top + size, left:left + size])
            sim = sims[n % len(sims)]
            name = f"{Path(e.path).stem}_{j:03d}.png"
            save_image(crop, out_dir / "real" / name)
            save_image(simulate_image(crop, sim), out_dir / "gen" / name)
            entries.append(Entry(str(out_dir / "real" / name), "real"))
            entries.append(Entry(str(out_dir / "gen" / name), "generated",
                                 {"method": sim.method, "factor": sim.factor, "seed": sim.seed,
                                  "jitter": sim.jitter}))
            n += 1
    manifest = Manifest(entries, seed)
    manifest.save(out_dir / "manifest.json")
    return manifest


def cmd_perturb(inputs, out_dir, spec: PerturbSpec) -> List[str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, e in enumerate(load_inputs(inputs).entries):
        try:
            raster = load_image(e.path)
        except ImageError as exc:
            log.warning("skipping %s: %s", e.path, exc)
            continue
        out = apply_perturbation(raster, replace(spec, seed=_image_seed(spec.seed, i)))
        target = out_dir / (Path(e.path).stem + ".png")
        save_image(out, target)
        written.append(str(target))
    return written


def cmd_bench(model_path, inputs, threads: Optional[int] = None, config: Optional[PipelineConfig] = None) -> dict:
    """End-to-end throughput (decode, residual, spectrum, decision) in images/s."""
    model = ocsvm.OcSvmModel.load(model_path)
    config = config_from_model(model, config)
    paths = [e.path for e in load_inputs(inputs).entries]
    if len(paths) < BENCH_MIN_IMAGES:
        raise PipelineError(f"bench needs at least {BENCH_MIN_IMAGES} images, got {len(paths)}")
    workers = threads or config.n_workers

    def one(path):
        t = Timings()
        feats = image_features(path, config, timings=t)
        t0 = time.perf_counter()
        model.decision_batch(feats[None])
        t.svm = time.perf_counter() - t0
        return t

    start = time.perf_counter()
    results = parallel_map(one, paths, workers)
    wall = time.perf_counter() - start
    done = [r for r in results if isinstance(r, Timings)]
    n = max(len(done), 1)
    stages = {name: 1000.0 * sum(getattr(t, name) for t in done) / n
              for name in ("decode", "noise", "fft", "svm")}
    return {
        "images_per_s": len(done) / wall,
        "stages": stages,
        "stage_unit": "ms/image",
        "n_images": len(done),
        "threads": workers,
        "wall_s": wall,
    }
