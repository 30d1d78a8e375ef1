"""Acceptance suite: one recorded PASS/FAIL line per criterion.

The long-running training criteria (4 to 7) use the seeded synthetic
784-dimensional digit stand-in, since no MNIST files ship with the package.
"""

import time

import numpy as np
import pytest

from poolhide import nn
from poolhide import parampool as pp
from poolhide import stealing as stl
from poolhide.analysis import WeightHistogram, offdiag_summary, otd, otd_lp, pairwise_otd, weight_histogram
from poolhide.data import Dataset, load_dataset, permute_pixels, synthetic_blobs
from poolhide.nn import ParamKind, arch_spec, make_arch_id
from poolhide.postprocess import prune_weights
from poolhide.trainer import (TrainConfig, delta_perf, evaluate, make_permuted_mnist_task, task_stream_seed,
                              train_joint, train_model)

from conftest import equivalence_gaps, random_batch

pytestmark = pytest.mark.slow

SGD = {"kind": "sgd", "lr": 0.1}
CARRIER = "fcn-784-200-200-10"
N_SAMPLES = 10000
EPOCHS = 40


def baseline_acc(task, epochs, init_seed):
    model = train_model(nn.init_params(task.spec, init_seed), task.train, task.optimizer, epochs, 64,
                        task_stream_seed(init_seed, 0))
    return evaluate(model, task.val, "acc")


@pytest.fixture(scope="module")
def digits():
    return load_dataset("synthetic", N_SAMPLES, 0)


# 1 -------------------------------------------------------------------------

def lossless_configs(count, seed=2024):
    gen = np.random.default_rng(seed)
    for i in range(count):
        family = ["fcn", "gen", "reg"][i % 3]
        sizes = gen.integers(1, 12, size=gen.integers(2, 5)).tolist()
        spec = arch_spec(make_arch_id(family, sizes))
        counts = spec.counts()
        if i % 4 == 0:
            yield spec, None, "direct", "first"
            continue
        w = int(gen.integers(1, counts["weight"] + 1))
        b = int(gen.integers(1, counts["bias"] + 1))
        v = int(gen.integers(0, 2**40))
        permute = bool(gen.integers(0, 2))
        fusion = pp.FUSIONS[i % 3]
        yield spec, pp.SecretKey(v, spec.arch_id, (w, b, 0), permute=permute), "segmented", fusion


def test_criterion_1_lossless_channel(record_criterion):
    failures, paths = 0, {"direct": 0, "segmented": 0}
    for k, (spec, key, path, fusion) in enumerate(lossless_configs(160)):
        if key is None:
            pool = pp.init_from_model(nn.init_params(spec, k))
            key = pp.SecretKey(0, spec.arch_id, pool.sizes)
        else:
            pool = pp.init_from_scratch(key.pool_sizes, k)
        carrier = pp.fill(pool, spec, key)
        decoded = pp.decode_direct(carrier) if path == "direct" else pp.decode_segmented(carrier, key, fusion)
        paths[path] += 1
        failures += not (decoded.equals(pool) and not decoded.uncovered)
    ok = failures == 0
    record_criterion(1, ok, f"{sum(paths.values())} configs ({paths['direct']} direct, "
                            f"{paths['segmented']} segmented), {failures} mismatches")
    assert ok


# 2 -------------------------------------------------------------------------

@pytest.mark.parametrize("optimizer", [SGD, {"kind": "adam", "lr": 0.001}])
def test_criterion_2_training_equivalence(record_criterion, optimizer):
    train = synthetic_blobs(600, seed=11)
    gaps = equivalence_gaps(arch_spec("fcn-784-32-10"), train, optimizer, epochs=11, batch_size=32)
    ok = len(gaps) >= 200 and max(gaps) <= 1e-12
    record_criterion(f"2 ({optimizer['kind']})", ok, f"{len(gaps)} steps, max per-scalar gap {max(gaps):.3g}")
    assert ok


# 3 -------------------------------------------------------------------------

def test_criterion_3_gradient_oracle(record_criterion):
    gen = np.random.default_rng(3)
    h, worst, probes = 1e-5, 0.0, 0
    for arch in ["fcn-12-16-8-5", "gen-6-10-12", "reg-5-9-7-3", "fcn-784-20-10"]:
        spec = arch_spec(arch)
        model = nn.init_params(spec, 1)
        model.params[ParamKind.BIAS][:] = gen.normal(scale=0.1, size=model.biases.size)
        X, y = random_batch(spec, 8, probes)
        _, grads = nn.loss_and_grad(model, X, y)
        for _ in range(300):
            kind = ParamKind.WEIGHT if gen.random() < 0.8 else ParamKind.BIAS
            i = int(gen.integers(model.params[kind].size))
            plus, minus = model.copy(), model.copy()
            plus.params[kind][i] += h
            minus.params[kind][i] -= h
            fd = (nn.loss_value(plus, X, y) - nn.loss_value(minus, X, y)) / (2 * h)
            a = grads[kind][i]
            # floor keeps near-zero gradients from inflating the ratio
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-6))
            probes += 1
    ok = probes >= 1000 and worst < 1e-4
    record_criterion(3, ok, f"{probes} probes, worst relative error {worst:.3g}")
    assert ok


# 4 -------------------------------------------------------------------------

SECRETS_4 = [("s1", "fcn-784-150-250-10", 101, 12345), ("s2", "fcn-784-280-120-10", 102, 777)]


def test_criterion_4_desk_scale_hiding(digits, record_criterion):
    start = time.perf_counter()
    cspec = arch_spec(CARRIER)
    pool = pp.init_from_model(nn.init_params(cspec, 1))
    ckey = pp.SecretKey(0, CARRIER, pool.sizes)
    carrier = make_permuted_mnist_task(digits, 100, cspec, ckey, "carrier", optimizer=SGD, kind="carrier")
    tasks = [carrier]
    for task_id, arch, perm, v in SECRETS_4:
        key = pp.SecretKey(v, arch, pool.sizes)
        tasks.append(make_permuted_mnist_task(digits, perm, arch_spec(arch), key, task_id, optimizer=SGD))
    baselines = {t.task_id: baseline_acc(t, EPOCHS, 1) for t in tasks}
    pool, log = train_joint(tasks, pool, TrainConfig(max_epochs=EPOCHS, batch_size=64, early_stop=False))

    parts, ok = [], True
    for t in tasks:
        hidden = evaluate(pp.fill(pool, t.spec, t.key), t.val, "acc")
        d = delta_perf(hidden, baselines[t.task_id])
        ok &= abs(d) <= 0.03
        parts.append(f"{t.task_id} {hidden:.4f} vs {baselines[t.task_id]:.4f} ({d:+.4f})")
    elapsed = time.perf_counter() - start
    ok &= elapsed <= 15 * 60
    record_criterion(4, ok, "; ".join(parts) + f"; {elapsed:.0f}s")
    assert ok


# 5 and 6 -------------------------------------------------------------------

GAMMA = 0.2


@pytest.fixture(scope="module")
def option2_run(digits):
    start = time.perf_counter()
    cspec = arch_spec(CARRIER)
    counts = cspec.counts()
    sizes = (int(GAMMA * counts["weight"]), int(GAMMA * counts["bias"]), 0)
    pool = pp.init_from_scratch(sizes, 5)
    ckey = pp.SecretKey(91011, CARRIER, sizes)
    skey = pp.SecretKey(12345, "fcn-784-150-250-10", sizes)
    carrier = make_permuted_mnist_task(digits, 100, cspec, ckey, "carrier", optimizer=SGD, kind="carrier")
    secret = make_permuted_mnist_task(digits, 101, skey.spec, skey, "s1", optimizer=SGD)
    baselines = {t.task_id: baseline_acc(t, EPOCHS, 1) for t in (carrier, secret)}
    pool, _ = train_joint([carrier, secret], pool, TrainConfig(max_epochs=EPOCHS, batch_size=64, early_stop=False))
    published = pp.fill(pool, cspec, ckey)
    return dict(pool=pool, published=published, ckey=ckey, skey=skey, carrier=carrier, secret=secret,
                baselines=baselines, elapsed=time.perf_counter() - start)


def test_criterion_5_capacity(option2_run, record_criterion):
    r = option2_run
    decoded = pp.decode(r["published"], r["ckey"])
    assert decoded.equals(r["pool"])
    c_acc = evaluate(r["published"], r["carrier"].val, "acc")
    s_acc = evaluate(pp.assemble(decoded, r["skey"]), r["secret"].val, "acc")
    dc = delta_perf(c_acc, r["baselines"]["carrier"])
    ds = delta_perf(s_acc, r["baselines"]["s1"])
    ok = abs(dc) <= 0.05 and abs(ds) <= 0.05 and r["elapsed"] <= 15 * 60
    record_criterion(5, ok, f"pool {r['pool'].sizes}; carrier {c_acc:.4f} vs {r['baselines']['carrier']:.4f} "
                            f"({dc:+.4f}); secret {s_acc:.4f} vs {r['baselines']['s1']:.4f} ({ds:+.4f}); "
                            f"{r['elapsed']:.0f}s")
    assert ok


def test_criterion_6_pruning(option2_run, record_criterion):
    r = option2_run
    start = time.perf_counter()
    copies = r["published"].spec.counts()["weight"] / r["pool"].sizes[0]
    pruned = prune_weights(r["published"], 0.3)
    val_c, val_s = r["carrier"].val, r["secret"].val
    c_before = evaluate(r["published"], val_c, "acc")
    c_after = evaluate(pruned, val_c, "acc")
    s_clean = evaluate(pp.assemble(pp.decode(r["published"], r["ckey"]), r["skey"]), val_s, "acc")
    s_fused = evaluate(pp.assemble(pp.decode(pruned, r["ckey"], "first-nonzero"), r["skey"]), val_s, "acc")
    secret_ok = abs(s_fused - s_clean) <= 0.03
    carrier_drops = c_before - c_after >= 0.03
    elapsed = time.perf_counter() - start
    ok = copies >= 2 and secret_ok and carrier_drops and elapsed <= 5 * 60
    record_criterion(6, ok, f"{copies:.1f} pool copies; secret {s_clean:.4f} -> {s_fused:.4f} "
                            f"({'ok' if secret_ok else 'too far'}); carrier {c_before:.4f} -> {c_after:.4f} "
                            f"({'degrades' if carrier_drops else 'drop under 3 points'})")
    assert ok


# 7 -------------------------------------------------------------------------

GEN = "gen-16-128-64"
NOISE_SEED = 42


def mean_scores(rec, targets):
    return (float(np.mean([stl.mse_sample(a, b) for a, b in zip(rec, targets)])),
            float(np.mean([stl.ssim(a, b) for a, b in zip(rec, targets)])))


def test_criterion_7_memorization(digits, record_criterion):
    start = time.perf_counter()
    targets = stl.synthetic_targets(16, 8, seed=0)
    gspec = arch_spec(GEN)
    noise = stl.NoiseSpec("gaussian", 16, 16, NOISE_SEED)
    adam = {"kind": "adam", "lr": 0.003}

    # standalone overfit run fixes the thresholds before the pipeline is judged
    solo_key = pp.SecretKey(0, GEN, tuple(gspec.counts().values()), noise_seed=NOISE_SEED)
    solo_task = stl.build_memorization_task(targets, noise, gspec, solo_key, optimizer=adam)
    solo = train_model(nn.init_params(gspec, 0), solo_task.train, adam, 2000, 16, 0)
    solo_mse, solo_ssim = mean_scores(stl.reconstruct(solo, noise), targets.values)
    assert solo_mse < 1e-2 and solo_ssim > 0.95, "standalone generator misses the thresholds"

    cspec = arch_spec(CARRIER)
    pool = pp.init_from_model(nn.init_params(cspec, 1))
    ckey = pp.SecretKey(0, CARRIER, pool.sizes)
    gkey = pp.SecretKey(54321, GEN, pool.sizes, noise_seed=NOISE_SEED)
    carrier = make_permuted_mnist_task(digits, 100, cspec, ckey, "carrier", optimizer=SGD, kind="carrier")
    mem = stl.build_memorization_task(targets, noise, gspec, gkey, "memorize", optimizer=adam)
    pool, _ = train_joint([carrier, mem], pool, TrainConfig(max_epochs=10, batch_size=64, early_stop=False))

    generator = pp.assemble(pp.decode(pp.fill(pool, cspec, ckey), ckey), gkey)
    mse, ssim = mean_scores(stl.reconstruct(generator, noise), targets.values)
    wrong = stl.NoiseSpec("gaussian", 16, 16, NOISE_SEED + 1)
    _, wrong_ssim = mean_scores(stl.reconstruct(generator, wrong), targets.values)
    elapsed = time.perf_counter() - start
    ok = mse < 1e-2 and ssim > 0.95 and ssim - wrong_ssim >= 0.2 and elapsed <= 10 * 60
    record_criterion(7, ok, f"standalone MSE {solo_mse:.2e} SSIM {solo_ssim:.4f}; hidden MSE {mse:.2e} "
                            f"SSIM {ssim:.4f}; wrong seed SSIM {wrong_ssim:.4f}; {elapsed:.0f}s")
    assert ok


# 8 -------------------------------------------------------------------------

def test_criterion_8_otd(record_criterion):
    gen = np.random.default_rng(8)

    def rand_hist(n):
        m = gen.random(n) * (gen.random(n) < 0.7)  # some empty bins
        m[gen.integers(n)] += 0.1
        return WeightHistogram(m / m.sum())

    worst_lp = 0.0
    for k in range(100):
        n = (2, 10, 100)[k % 3]
        h1, h2 = rand_hist(n), rand_hist(n)
        worst_lp = max(worst_lp, abs(otd_lp(h1, h2) - otd(h1, h2)))

    worst_tri, asym, ident = 0.0, 0.0, 0.0
    for k in range(300):
        n = (2, 10, 100)[k % 3]
        a, b, c = rand_hist(n), rand_hist(n), rand_hist(n)
        worst_tri = max(worst_tri, otd(a, c) - otd(a, b) - otd(b, c))
        asym = max(asym, abs(otd(a, b) - otd(b, a)))
        ident = max(ident, otd(a, a))
    ok = worst_lp < 1e-9 and worst_tri <= 1e-9 and asym <= 1e-12 and ident == 0
    record_criterion(8, ok, f"max |LP - closed form| {worst_lp:.2e} over 100 pairs; triangle slack "
                            f"{worst_tri:.2e}; asymmetry {asym:.1e}; self-distance {ident}")
    assert ok


def test_criterion_8_reference_pilot(record_criterion):
    base = load_dataset("synthetic", 2000, 0)
    spec = arch_spec(CARRIER)
    models = []
    for i in range(5):
        ds = permute_pixels(base, 200 + i)
        models.append(train_model(nn.init_params(spec, 10 + i), ds, SGD, 3, 64, i))
    mean, std = offdiag_summary(pairwise_otd(models))
    record_criterion("8 (reference)", True, f"pairwise OTD of 5 independently trained {CARRIER}: "
                                            f"{mean:.4f} +/- {std:.4f} (full-scale reference 0.038 +/- 0.008)")


# 9 -------------------------------------------------------------------------

def test_criterion_9_metric_examples(record_criterion):
    checks = {}
    ident = nn.Model(arch_spec("reg-2-2"), {ParamKind.WEIGHT: np.eye(2).ravel()})
    checks["norm MSE (3,4) -> 2.5"] = evaluate(ident, Dataset(np.zeros((1, 2)), np.array([[3.0, 4.0]])), "mse") == 2.5
    checks["mse x=x -> 0"] = stl.mse_sample([0.2, 0.7], [0.2, 0.7]) == 0.0
    eps, n = 0.01, 64
    checks["mse eps/sqrt(n)"] = abs(stl.mse_sample(np.full(n, eps), np.zeros(n)) - eps / np.sqrt(n)) < 1e-15
    perfect = nn.Model(arch_spec("fcn-3-3"), {ParamKind.WEIGHT: np.eye(3).ravel()})
    y = np.arange(30) % 3
    checks["ACC perfect -> 1"] = evaluate(perfect, Dataset(np.eye(3)[y], y), "acc") == 1.0
    x = np.random.default_rng(0).uniform(size=64)
    checks["ssim(x, x) = 1"] = abs(stl.ssim(x, x) - 1.0) < 1e-12
    c1 = 1e-4
    checks["ssim constants c1/(1+c1)"] = abs(stl.ssim(np.ones(64), np.zeros(64)) - c1 / (1 + c1)) < 1e-15
    checks["delta perf"] = abs(delta_perf(0.942, 0.951) + 0.009) < 1e-12
    layer = nn.Model(arch_spec("fcn-4-1"), {ParamKind.WEIGHT: np.array([0.1, -0.05, 0.3, 0.02])})
    checks["prune beta 0.5"] = prune_weights(layer, 0.5).params[ParamKind.WEIGHT].tolist() == [0.1, 0, 0.3, 0]
    checks["prune beta 0"] = prune_weights(layer, 0.0).equals(layer)
    checks["prune beta 1"] = not prune_weights(layer, 1.0).params[ParamKind.WEIGHT].any()
    checks["histogram point mass bin 50"] = weight_histogram(np.zeros(5)).masses[50] == 1.0
    failed = [k for k, v in checks.items() if not v]
    ok = not failed
    record_criterion(9, ok, f"{len(checks) - len(failed)}/{len(checks)} examples" +
                     (f"; failed: {failed}" if failed else ""))
    assert ok
