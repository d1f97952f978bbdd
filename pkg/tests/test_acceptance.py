"""Acceptance suite: one test per criterion, summarized as PASS/FAIL lines
at the end of the pytest run. Run alone with ``pytest tests/test_acceptance.py``."""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from emoattr.attributes import NAMED_MIXTURES, MixtureSpec, compose_mixture, named_mixture, normalize, predict_attributes
from emoattr.dataio import (
    FeatureTable,
    Manifest,
    ManifestRow,
    ModelBundle,
    load_bundle,
    load_manifest,
    read_csv,
    read_features,
    read_wav,
    save_bundle,
    write_features,
    write_manifest,
    write_wav,
)
from emoattr.emotions import DEFAULT_EMOTIONS
from emoattr.errors import FormatError
from emoattr.evaluation import DEFAULT_LEVELS, ordering_accuracy, predict_proba, probability_curve, spearman_rho
from emoattr.features import FUNCTIONAL_NAMES, AudioClip, compute_llds, extract_features, functionals
from emoattr.ranking import ConstraintSet, SolverConfig, gradient, objective, oracle_solve, score, train_rank_svm

sys.path.insert(0, str(Path(__file__).parent))
from test_dataio import mutations  # noqa: E402

F = {name: i for i, name in enumerate(FUNCTIONAL_NAMES)}


def tiny_instance(rng, max_dim=8, max_o=20, max_u=20):
    dim = int(rng.integers(1, max_dim + 1))
    n = int(rng.integers(6, 14))
    X = rng.standard_normal((n, dim)) * rng.uniform(0.2, 3.0)
    n_o, n_u = int(rng.integers(1, max_o + 1)), int(rng.integers(0, max_u + 1))
    cand = [(i, j) for i in range(n) for j in range(i + 1, n)]
    pick = rng.permutation(len(cand))[: n_o + n_u]
    pairs = [cand[k] if rng.uniform() < 0.5 else cand[k][::-1] for k in pick]
    return ConstraintSet(pairs[:n_o], pairs[n_o:]), X


@pytest.mark.criterion(1, "Newton solver matches gradient-descent oracle on 50 tiny instances")
def test_criterion_1_solver_oracle_equivalence(record_property):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for k in range(50):
        cons, X = tiny_instance(rng)
        assert X.shape[1] <= 8 and len(cons.ordered) <= 20 and len(cons.unordered) <= 20
        cfg = SolverConfig(C=(0.1, 1.0, 10.0)[k % 3], standardize=False)
        model = train_rank_svm(cons, X, cfg)
        J_ref = objective(oracle_solve(cons, X, cfg), cons, X, cfg.C)
        worst = max(worst, abs(model.final_objective - J_ref) / J_ref)
    elapsed = time.perf_counter() - start
    record_property("detail", f"worst relative gap {worst:.2e}, {elapsed:.1f} s")
    assert worst <= 1e-6
    assert elapsed < 60


@pytest.mark.criterion(2, "1-D closed form w = 2/3")
def test_criterion_2_closed_form(record_property):
    model = train_rank_svm(ConstraintSet([(0, 1)], []), np.array([[1.0], [0.0]]), SolverConfig(C=1.0, standardize=False))
    record_property("detail", f"w = {model.weights[0]:.10f}")
    assert model.converged
    assert abs(model.weights[0] - 2 / 3) <= 1e-6


@pytest.mark.criterion(3, "analytic gradient matches central finite differences")
def test_criterion_3_gradient(record_property):
    rng = np.random.default_rng(7)
    worst, done = 0.0, 0
    while done < 20:
        cons, X = tiny_instance(rng)
        w = rng.standard_normal(X.shape[1]) * 0.5
        d = X[cons.ordered[:, 0]] - X[cons.ordered[:, 1]]
        if np.any(np.abs(1 - d @ w) < 1e-4):
            continue  # resample instances touching a hinge kink
        C = float(rng.choice([0.1, 1.0, 10.0]))
        g = gradient(w, cons, X, C)
        fd = np.array([
            (objective(w + e, cons, X, C) - objective(w - e, cons, X, C)) / 2e-5 for e in np.eye(w.size) * 1e-5
        ])
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
        done += 1
    record_property("detail", f"worst relative error {worst:.2e}")
    assert worst < 1e-5


@pytest.mark.criterion(4, "held-out ordering accuracy >= 95% for all 10 pair models")
def test_criterion_4_ranking_fidelity(corpus, trained_models, record_property):
    test = corpus.subset("test")
    assert len(test) == 150 and len(corpus.subset("train")) == 1500 and len(corpus.subset("eval")) == 100
    accs = {str(m.pair): ordering_accuracy(m, test)[0] for m in trained_models}
    record_property("detail", f"min accuracy {min(accs.values()):.4f}")
    assert len(accs) == 10
    assert min(accs.values()) >= 0.95


@pytest.mark.criterion(5, "normalization maps training min/max to exactly 0/1; attributes in [0,1]")
def test_criterion_5_normalization(corpus, trained_models, record_property):
    train = corpus.subset("train")
    for m in trained_models:
        rows = np.concatenate([train.indices_of(m.pair.high), train.indices_of(m.pair.low)])
        s = score(m, train.features[rows])
        assert normalize(s.min(), m) == 0.0 and normalize(s.max(), m) == 1.0
        assert normalize(score(m, train.features[rows[np.argmin(s)]]), m) == 0.0
        assert normalize(score(m, train.features[rows[np.argmax(s)]]), m) == 1.0
    rng = np.random.default_rng(5)
    inputs = np.vstack([corpus.features, rng.standard_normal((200, 384)) * 50])
    values = [
        v
        for x in inputs
        for e in DEFAULT_EMOTIONS
        for v in predict_attributes(x, e, trained_models).entries.values()
    ]
    record_property("detail", f"{len(values)} attributes in [{min(values):.3f}, {max(values):.3f}]")
    assert all(0.0 <= v <= 1.0 for v in values)


def curve_table(corpus, probe):
    train, ev = corpus.subset("train"), corpus.subset("eval")
    return {
        name: probability_curve(probe, base, mixed, DEFAULT_LEVELS, ev, train.centroid(mixed))
        for name, (base, mixed) in NAMED_MIXTURES.items()
    }


@pytest.mark.criterion(6, "mixed-emotion probability rises monotonically while the base stays argmax")
def test_criterion_6_mixture_probability_curves(corpus, probe, record_property):
    curves = curve_table(corpus, probe)
    problems = []
    for name, c in curves.items():
        assert c.sample_counts == (20, 20, 20, 20)
        rho = spearman_rho(c.curve(c.mixed))
        winners = [c.class_order[i] for i in c.probabilities.argmax(axis=1)]
        if rho != 1.0:
            problems.append(f"{name} rho={rho:.2f}")
        lost = [p for p, w in zip(c.mix_levels, winners) if w != c.base]
        if lost:
            problems.append(f"{name}: {c.base} not argmax at {lost}")
    record_property("detail", "; ".join(problems) or "all four mixtures meet both clauses")
    assert not problems


@pytest.mark.criterion(7, "feature extraction: 384 dims, functional identities, 200 Hz F0, determinism")
def test_criterion_7_features(record_property):
    rng = np.random.default_rng(11)
    sr = 16000
    t = np.arange(sr) / sr
    sine = AudioClip(0.5 * np.sin(2 * np.pi * 200 * t), sr)
    clips = [sine, AudioClip(np.clip(0.3 * rng.standard_normal(6000), -1, 1), sr), AudioClip(np.zeros(400), 8000)]
    for clip in clips:
        assert extract_features(clip).shape == (384,)
    for _ in range(1000):
        c = rng.standard_normal(int(rng.integers(1, 300))) * rng.uniform(0.01, 100)
        f = functionals(c)
        assert abs(f[F["range"]] - (f[F["max"]] - f[F["min"]])) <= 1e-9
        assert f[F["linreg_mse"]] >= -1e-9 and f[F["std"]] >= 0
        assert 0.0 <= f[F["relpos_min"]] <= 1.0 and 0.0 <= f[F["relpos_max"]] <= 1.0
    f0 = compute_llds(sine).contour("f0_hz")
    voiced = f0[f0 > 0]
    assert voiced.size > 0 and np.all(np.abs(voiced - 200) <= 5)
    assert extract_features(clips[1]).tobytes() == extract_features(AudioClip(clips[1].samples.copy(), sr)).tobytes()
    record_property("detail", f"F0 {voiced.min():.2f}-{voiced.max():.2f} Hz on {voiced.size}/{f0.size} frames")


@pytest.mark.criterion(8, "mixture composition property suite (10^4 cases)")
def test_criterion_8_mixture_properties(record_property):
    rng = np.random.default_rng(8)
    cases = 0
    for _ in range(10_000):
        base = DEFAULT_EMOTIONS[int(rng.integers(5))]
        others = [e for e in DEFAULT_EMOTIONS if e != base]
        chosen = [e for e in others if rng.uniform() < 0.5]
        comps = {e: float(rng.uniform()) for e in chosen}
        vec = compose_mixture(MixtureSpec(base, comps))
        assert set(vec.entries) == set(others)
        for e in others:
            assert 0.0 <= vec.entries[e] <= 1.0
            assert vec.entries[e] == (1.0 - comps[e] if e in comps else 1.0)
        target = others[int(rng.integers(4))]
        p1, p2 = sorted(rng.uniform(size=2))
        lo = compose_mixture(MixtureSpec(base, {**comps, target: p1}))
        hi = compose_mixture(MixtureSpec(base, {**comps, target: p2}))
        if p1 < p2:
            assert lo.entries[target] > hi.entries[target]
        assert all(lo.entries[e] == hi.entries[e] for e in others if e != target)
        cases += 1
    for name in NAMED_MIXTURES:
        prev = None
        for p in DEFAULT_LEVELS:
            spec = named_mixture(name, p)
            (mixed,) = spec.components
            a = compose_mixture(spec).entries[mixed]
            assert prev is None or a < prev
            prev = a
    record_property("detail", f"{cases} random cases")


@pytest.mark.criterion(9, "lossless round-trips; malformed inputs always raise FormatError")
def test_criterion_9_persistence(tmp_path, corpus, trained_models, probe, record_property):
    rows = [ManifestRow(u, f"{u}.wav", "0011", e, s) for u, e, s in zip(corpus.ids, corpus.labels, corpus.splits)]
    write_manifest(tmp_path / "m.csv", Manifest(rows))
    assert load_manifest(tmp_path / "m.csv").rows == rows

    table = FeatureTable(corpus.features)
    write_features(tmp_path / "f.bin", table)
    assert read_features(tmp_path / "f.bin") == table

    bundle = ModelBundle(DEFAULT_EMOTIONS, list(trained_models), probe, {"seed": 0})
    save_bundle(tmp_path / "b.json", bundle)
    loaded = load_bundle(tmp_path / "b.json")
    X = np.random.default_rng(9).standard_normal((100, 384))
    for a, b in zip(bundle.models, loaded.models):
        sa, sb = score(a, X), score(b, X)
        assert np.all(np.abs(sa - sb) <= 1e-12 * np.abs(sa))
    assert np.array_equal(predict_proba(probe, X), predict_proba(loaded.probe, X))

    write_wav(tmp_path / "a.wav", AudioClip(0.5 * np.sin(np.arange(3000) * 0.2), 16000))
    small_bundle = ModelBundle(DEFAULT_EMOTIONS, list(trained_models), None, {})
    write_manifest(tmp_path / "small.csv", Manifest(rows[::70]))
    write_features(tmp_path / "small.bin", FeatureTable(corpus.features[:4]))
    targets = [
        (load_manifest, (tmp_path / "small.csv").read_bytes(), ".csv"),
        (read_features, (tmp_path / "small.bin").read_bytes(), ".bin"),
        (load_bundle, __import__("emoattr.dataio", fromlist=["x"]).bundle_to_json(small_bundle).encode(), ".json"),
        (read_wav, (tmp_path / "a.wav").read_bytes(), ".wav"),
    ]
    rng = np.random.default_rng(99)
    total = rejected = 0
    for reader, blob, suffix in targets:
        for i, mutated in enumerate(mutations(blob, rng, 120)):
            p = tmp_path / f"fuzz{suffix}_{i:03d}"
            p.write_bytes(mutated)
            total += 1
            try:
                reader(p)
            except FormatError:
                rejected += 1
    record_property("detail", f"{total} mutated files, {rejected} rejected with FormatError, 0 crashes")
    assert total >= 100 and rejected > 0


@pytest.mark.criterion(10, "end-to-end CLI pipeline under 60 s reproducing criteria 4-6 from its CSVs")
def test_criterion_10_cli_pipeline(tmp_path, record_property):
    def emoattr(*args):
        proc = subprocess.run([sys.executable, "-m", "emoattr", *map(str, args)], capture_output=True, text=True)
        assert proc.returncode == 0, f"{args[0]} exited {proc.returncode}: {proc.stderr}"
        return proc

    d = tmp_path
    data = ["--manifest", d / "manifest.csv", "--features", d / "features.bin"]
    start = time.perf_counter()
    emoattr("gen-synthetic", "--out", d)
    emoattr("train", *data, "--out", d / "bundle.json")
    emoattr("probe-train", *data, "--models", d / "bundle.json")
    for e in DEFAULT_EMOTIONS:
        emoattr("predict", *data, "--models", d / "bundle.json", "--input-emotion", e, "--split", "train",
                "--all-rows", "--out", d / f"attr_{e.lower()}.csv")
    emoattr("mix", "--name", "excitement", "--levels", "0,0.3,0.6,0.9", "--out", d / "mix.csv")
    emoattr("eval", *data, "--models", d / "bundle.json", "--out", d / "eval", "--curves")
    elapsed = time.perf_counter() - start

    problems = []
    # criterion 4 from the ranking report
    _, report = read_csv(d / "eval" / "ranking_report.csv")
    min_acc = min(float(r[2]) for r in report)
    if len(report) != 10 or min_acc < 0.95:
        problems.append(f"min accuracy {min_acc:.4f}")
    # criterion 5: over the pair's own training rows attributes span exactly [0, 1]
    for inp in DEFAULT_EMOTIONS:
        header, rows = read_csv(d / f"attr_{inp.lower()}.csv")
        for e in header[3:]:
            col = header.index(e)
            vals = [float(r[col]) for r in rows]
            own = [float(r[col]) for r in rows if r[1] in (e, inp)]
            if not all(0.0 <= v <= 1.0 for v in vals) or min(own) != 0.0 or max(own) != 1.0:
                problems.append(f"attribute {e} for input {inp} outside contract")
    # criterion 6 from the per-mixture curve files
    for name, (base, mixed) in NAMED_MIXTURES.items():
        _, rows = read_csv(d / "eval" / f"curve_{name.lower()}.csv")
        levels = sorted({float(r[0]) for r in rows})
        table = {(float(r[0]), r[1]): float(r[2]) for r in rows}
        mixed_curve = [table[(p, mixed)] for p in levels]
        if levels != list(DEFAULT_LEVELS) or any(int(r[3]) != 20 for r in rows):
            problems.append(f"{name}: unexpected levels or counts")
        if spearman_rho(mixed_curve) != 1.0:
            problems.append(f"{name}: {mixed} not monotone")
        lost = [p for p in levels if max(DEFAULT_EMOTIONS, key=lambda e: table[(p, e)]) != base]
        if lost:
            problems.append(f"{name}: {base} not argmax at {lost}")
    if elapsed >= 60:
        problems.append(f"took {elapsed:.1f} s")
    record_property("detail", f"{elapsed:.1f} s; " + ("; ".join(problems) or "criteria 4-6 reproduced"))
    assert not problems


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
