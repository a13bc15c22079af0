"""Acceptance gates. Each test prints one PASS/FAIL line (also collected in
the terminal summary) and then asserts the same condition."""
import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from corpus import patches, photos
from realonly import ocsvm, pipeline
from realonly.imagio import Raster, save_image
from realonly.metrics import ScoredLabel, accuracy, average_precision, f1
from realonly.noise import ExtractorSpec, extract_residual
from realonly.perturb import PAPER_PSNR, PerturbSpec, psnr_range_check
from realonly.pipeline import Entry, Manifest, PipelineConfig
from realonly.simgen import PEAK_RATIO_PASS, SimSpec, peak_report, set_spectrum, simulate
from realonly.spectrum import dft2_amplitude, merge_channels, sample_features, enhance

# tolerances and gates
FEATURE_DIM = 64
PEAK_PASS = PEAK_RATIO_PASS  # 5
REAL_FAIL = 2.0
SPECTRAL_REL = 1e-9
SUM_ALPHA_TOL = 1e-9
NU_SLACK = 0.02
ACC_GATE = 0.85
AP_GATE = 0.90
ACC_DROP = 0.10
THROUGHPUT_GATE = 100.0
N_TRAIN, N_EVAL_REAL, N_EVAL_GEN = 800, 200, 200


def record(n, title, ok, detail, elapsed, budget):
    within = elapsed <= budget
    line = (f"criterion {n}: {'PASS' if ok else 'FAIL'} {title}; {detail}; "
            f"{elapsed:.1f}s (budget {budget:g}s{'' if within else ', exceeded'})")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _sim_spec(i, seed_base=0):
    if i % 2 == 0:
        return SimSpec("nearest", 4, seed=seed_base + i)
    return SimSpec("bilinear", 8, seed=seed_base + i)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """800 training patches, 200 held-out real and 200 simulated patches on disk."""
    root = tmp_path_factory.mktemp("acceptance")
    for sub in ("train", "real", "gen"):
        (root / sub).mkdir()
    train = []
    for i, r in enumerate(patches(N_TRAIN, seed=1001)):
        path = root / "train" / f"t{i:04d}.png"
        save_image(r, path)
        train.append(Entry(str(path), "real"))
    held = patches(N_EVAL_REAL + N_EVAL_GEN, seed=2002)
    evals = []
    for i, r in enumerate(held[:N_EVAL_REAL]):
        path = root / "real" / f"r{i:04d}.png"
        save_image(r, path)
        evals.append(Entry(str(path), "real"))
    for i, r in enumerate(held[N_EVAL_REAL:]):
        spec = _sim_spec(i, seed_base=5000)
        path = root / "gen" / f"g{i:04d}.png"
        save_image(simulate(r, spec), path)
        evals.append(Entry(str(path), "generated", {"method": spec.method, "factor": spec.factor,
                                                    "seed": spec.seed}))
    Manifest(train, seed=7).save(root / "train.json")
    Manifest(evals, seed=7).save(root / "eval.json")
    return root


@pytest.fixture(scope="module")
def trained(dataset):
    t0 = time.perf_counter()
    _, summary = pipeline.cmd_train(Manifest.load(dataset / "train.json"), PipelineConfig(),
                                    dataset / "model.json")
    train_s = time.perf_counter() - t0
    return dataset / "model.json", summary, train_s


def test_c1_feature_dimension():
    t0 = time.perf_counter()
    r = Raster(np.random.default_rng(0).random((3, 256, 256)))
    feats = pipeline.features_from_raster(r, PipelineConfig(k=32))
    spec = enhance(merge_channels(extract_residual(r, ExtractorSpec())))
    fv = sample_features(spec, 32)
    ok = len(feats) == FEATURE_DIM and len(fv) == FEATURE_DIM and fv.grid == (8, 8)
    record(1, "feature dimension", ok, f"256x256, k=32 -> {len(feats)} features (need exactly {FEATURE_DIM})",
           time.perf_counter() - t0, 1)


def test_c2_spectral_oracle():
    t0 = time.perf_counter()
    n_photos = len(photos())
    real = [p.quantized() for p in patches(n_photos, seed=77)]  # one patch per photo
    near = [simulate(r, SimSpec("nearest", 4, seed=i)).quantized() for i, r in enumerate(real)]
    bil = [simulate(r, SimSpec("bilinear", 8, seed=i)).quantized() for i, r in enumerate(real)]
    M = 256
    r_near = peak_report(set_spectrum(near), M // 4)["ratio"]
    r_bil = peak_report(set_spectrum(bil), M // 8)["ratio"]
    real_spec = set_spectrum(real)
    r_real = {p: peak_report(real_spec, p)["ratio"] for p in (M // 4, M // 8)}
    # per-image ratios, averaged, as a second view of the same gate
    ext = ExtractorSpec()
    per = lambda imgs, p: float(np.mean([peak_report(merge_channels(extract_residual(x, ext)), p)["ratio"]
                                         for x in imgs]))
    m_near, m_bil = per(near, M // 4), per(bil, M // 8)
    m_real = max(per(real, M // 4), per(real, M // 8))
    ok = (n_photos >= 20 and r_near >= PEAK_PASS and r_bil >= PEAK_PASS and m_near >= PEAK_PASS
          and m_bil >= PEAK_PASS and max(r_real.values()) < REAL_FAIL and m_real < REAL_FAIL)
    detail = (f"{n_photos} photos; set-mean ratio nearest4@M/4={r_near:.1f}, bilinear8@M/8={r_bil:.1f} "
              f"(need >={PEAK_PASS:g}); per-image mean {m_near:.1f}/{m_bil:.1f}; "
              f"real set-mean max={max(r_real.values()):.2f}, per-image mean max={m_real:.2f} (need <{REAL_FAIL:g})")
    record(2, "spectral oracle", ok, detail, time.perf_counter() - t0, 30)


def test_c3_parseval_hermitian():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_p = worst_h = 0.0
    ext = ExtractorSpec()
    for _ in range(1000):
        h, w = (int(v) for v in rng.integers(8, 65, 2))
        plane = extract_residual(Raster(rng.random((1, h, w))), ext).data[0]
        amp = dft2_amplitude(plane).amp
        M, N = amp.shape
        lhs, rhs = float(np.sum(amp ** 2)), float(np.sum(plane ** 2)) / (M * N)
        worst_p = max(worst_p, abs(lhs - rhs) / rhs)
        mirror = amp[np.ix_((-np.arange(M)) % M, (-np.arange(N)) % N)]
        worst_h = max(worst_h, float(np.max(np.abs(amp - mirror)) / np.max(amp)))
    ok = worst_p <= SPECTRAL_REL and worst_h <= SPECTRAL_REL
    record(3, "Parseval and Hermitian symmetry", ok,
           f"1000 residual planes; max rel error Parseval={worst_p:.1e}, Hermitian={worst_h:.1e} "
           f"(need <={SPECTRAL_REL:g})", time.perf_counter() - t0, 10)


def test_c4_ocsvm_solver():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    parts, ok = [], True
    for nu in (0.05, 0.1, 0.3):
        x = rng.standard_normal((200, 10))
        cfg = ocsvm.OcSvmConfig(nu=nu)
        res = ocsvm.train(x, cfg)
        C = 1 / (nu * 200)
        a = res.alpha
        sum_ok = abs(a.sum() - 1) <= SUM_ALPHA_TOL
        box_ok = a.min() >= 0 and a.max() <= C + 1e-12
        out_f, sv_f = res.outlier_fraction(cfg.tol), res.sv_fraction
        good = (sum_ok and box_ok and out_f <= nu + NU_SLACK and sv_f >= nu - NU_SLACK
                and res.kkt_gap <= cfg.tol)
        ok &= good
        parts.append(f"nu={nu}: |sum-1|={abs(a.sum() - 1):.0e} outliers={out_f:.3f} SV={sv_f:.3f} "
                     f"KKT={res.kkt_gap:.1e}")
    record(4, "OC-SVM solver", ok, "; ".join(parts), time.perf_counter() - t0, 30)


def _ap_oracle(scores, labels):
    n = len(scores)
    terms = []
    for i in range(n):
        if labels[i] != "generated":
            continue
        above = [j for j in range(n) if scores[j] > scores[i] or (scores[j] == scores[i] and j <= i)]
        terms.append(sum(labels[j] == "generated" for j in above) / len(above))
    return math.fsum(terms) / len(terms)


def test_c5_metrics_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    mismatches = 0
    for trial in range(1000):
        n = int(rng.integers(2, 60))
        scores = rng.integers(0, 8, n).astype(float) if trial % 3 == 0 else rng.standard_normal(n)
        labels = ["generated" if b else "real" for b in rng.integers(0, 2, n)]
        labels[int(rng.integers(0, n))] = "generated"
        ours = average_precision([ScoredLabel(float(s), l) for s, l in zip(scores, labels)])
        if ours != _ap_oracle(list(scores), labels):
            mismatches += 1
        preds = ["generated" if s > 0 else "real" for s in scores]
        tp = sum(p == t == "generated" for p, t in zip(preds, labels))
        fp = sum(p == "generated" != t for p, t in zip(preds, labels))
        fn = sum(t == "generated" != p for p, t in zip(preds, labels))
        hand_f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        if accuracy(preds, labels) != sum(p == t for p, t in zip(preds, labels)) / n or \
                abs(f1(preds, labels) - hand_f1) > 1e-15:
            mismatches += 1
    record(5, "metrics oracle", mismatches == 0, f"1000 random sets; {mismatches} mismatches (need 0, AP exact)",
           time.perf_counter() - t0, 10)


def test_c6_end_to_end(dataset, trained):
    model, summary, train_s = trained
    t0 = time.perf_counter()
    rep = pipeline.cmd_eval(model, Manifest.load(dataset / "eval.json"), dataset / "eval_report.json")
    elapsed = train_s + time.perf_counter() - t0
    ok = rep["acc"] >= ACC_GATE and rep["ap"] >= AP_GATE
    record(6, "end-to-end detection", ok,
           f"train {summary['n_train']} real, eval {rep['n_real']} real + {rep['n_generated']} simulated "
           f"(nearest4/bilinear8); ACC={rep['acc']:.4f} (need >={ACC_GATE}), AP={rep['ap']:.4f} "
           f"(need >={AP_GATE}), F1={rep['f1']:.4f}; SV fraction {summary['sv_fraction']:.3f}",
           elapsed, 300)


def test_c7_robustness(dataset, trained):
    model, _, _ = trained
    t0 = time.perf_counter()
    gated = ["gauss:1", "gauss:5", "gauss:10", "gamma:0.3", "gamma:0.5", "gamma:2", "gamma:3",
             "jpeg:90", "jpeg:95", "jpeg:100"]
    grid = [PerturbSpec("none")] + [PerturbSpec.parse(s, default_seed=11) for s in gated] + \
           [PerturbSpec("jpeg", 70)]
    rows = pipeline.cmd_robustness(model, Manifest.load(dataset / "eval.json"), grid,
                                   dataset / "robustness.csv")
    base = rows[0]["acc"]
    drops = {r["perturbation"]: base - r["acc"] for r in rows[1:]}
    worst_label = max(list(drops)[:-1], key=drops.get)
    ok = all(d <= ACC_DROP for d in list(drops.values())[:-1])
    record(7, "robustness trend", ok,
           f"baseline ACC={base:.4f}; worst gated drop {drops[worst_label]:.4f} at {worst_label} "
           f"(need <={ACC_DROP}); jpeg:70 drop {drops['jpeg:70']:.4f} (reported only)",
           time.perf_counter() - t0, 900)


def test_c8_psnr_ranges():
    t0 = time.perf_counter()
    imgs = [p.quantized() for p in patches(20, seed=88)]
    grids = {
        "gauss": np.linspace(1, 10, 10),
        "saltpepper": np.linspace(0.001, 0.01, 10),
        "speckle": np.linspace(0.01, 0.1, 10),
        "poisson": np.linspace(0.1, 1.0, 10),
    }
    parts, ok = [], True
    for kind, grid in grids.items():
        rep = psnr_range_check(imgs, kind, grid, seed=8)
        ok &= rep["overlaps"]
        lo, hi = PAPER_PSNR[kind]
        parts.append(f"{kind} [{rep['min_psnr']:.1f},{rep['max_psnr']:.1f}] vs [{lo:g},{hi:g}] "
                     f"{'overlaps' if rep['overlaps'] else 'disjoint'}"
                     f"{', brackets' if rep['brackets'] else ''}")
    record(8, "perturbation PSNR ranges", ok, "; ".join(parts), time.perf_counter() - t0, 60)


def test_c9_throughput(dataset, trained):
    model, _, _ = trained
    root = dataset / "bench"
    root.mkdir(exist_ok=True)
    files = sorted((dataset / "train").iterdir()) + sorted((dataset / "real").iterdir())
    for f in files[:1000]:
        target = root / f.name
        if not target.exists():
            os.link(f, target)
    t0 = time.perf_counter()
    rep = pipeline.cmd_bench(model, root)
    cores = os.cpu_count() or 1
    ok = rep["n_images"] == 1000 and rep["images_per_s"] >= THROUGHPUT_GATE
    stages = ", ".join(f"{k}={v:.2f}" for k, v in rep["stages"].items())
    record(9, "throughput", ok,
           f"{rep['n_images']} images at {rep['images_per_s']:.1f} img/s with {rep['threads']} threads on "
           f"{cores} core(s) (need >={THROUGHPUT_GATE:g}); stages ms/image: {stages}",
           time.perf_counter() - t0, 120)


def test_c10_determinism(dataset, tmp_path):
    t0 = time.perf_counter()
    outs = []
    for run, threads in (("a", 4), ("b", 1)):
        d = tmp_path / run
        d.mkdir()
        cfg = PipelineConfig(seed=7, threads=threads)
        pipeline.cmd_train(Manifest.load(dataset / "train.json"), cfg, d / "model.json")
        pipeline.cmd_eval(d / "model.json", Manifest.load(dataset / "eval.json"), d / "report.json", cfg)
        outs.append(((d / "model.json").read_bytes(), (d / "report.json").read_bytes()))
    ok = outs[0] == outs[1]
    record(10, "determinism", ok,
           f"two train+eval runs (4 vs 1 threads): model {'identical' if outs[0][0] == outs[1][0] else 'differs'}, "
           f"report {'identical' if outs[0][1] == outs[1][1] else 'differs'}", time.perf_counter() - t0, 300)
