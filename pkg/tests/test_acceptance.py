"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python tests/test_acceptance.py``.
"""

import contextlib
import io as stdio
import json
import struct
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from cmposterior.cli import main as cli_main
from cmposterior.comparison import Rope, compare, gap_distribution
from cmposterior.core import DirichletPosterior, DirichletPrior, GroupConfusionMatrix
from cmposterior.harness import (
    SyntheticSpec,
    ToyClassifier,
    count_cms,
    coverage_experiment,
    half_split,
    make_synthetic,
)
from cmposterior.hdr import fit_hdr
from cmposterior.kfold import (
    HalfSplitPair,
    effective_cm,
    relative_rho_raw,
    rho_fixed,
    rho_relative,
    sigma_over,
)
from cmposterior.posterior import posteriors_for, sample_dirichlet, sample_joint, update
from cmposterior.seeding import generator


def bits(x):
    return struct.pack("<d", float(x))


def c01_conjugacy():
    post = update(DirichletPrior((1, 1, 1, 1)), GroupConfusionMatrix("g", 3, 2, 1, 4))
    ok = [bits(a) for a in post.alpha_post] == [bits(a) for a in (4.0, 3.0, 2.0, 5.0)]
    return ok, f"alpha_post={post.alpha_post}", 1.0


def c02_posterior_mean():
    T = 100_000
    s = sample_joint([DirichletPosterior("g", (51, 31, 11, 11))], [100], ["accuracy"], T=T, seed=2024)
    acc = s.column("accuracy")
    target = 82 / 104
    se = acc.std(ddof=1) / np.sqrt(T)
    z = (acc.mean() - target) / se
    return abs(z) < 3, f"mean={acc.mean():.5f} target={target:.5f} |z|={abs(z):.2f} (<3)", 5.0


def c03_beta_collapse():
    T = 50_000
    worst = 0.0
    parts = []
    for i, alpha in enumerate([(1, 1, 1, 1), (4, 3, 2, 5), (51, 31, 11, 11)]):
        pi = sample_dirichlet(alpha, T, generator(31, i))
        a = np.asarray(alpha, float)
        ks = stats.kstest(pi[:, 0] + pi[:, 2], stats.beta(a[0] + a[2], a[1] + a[3]).cdf).statistic
        worst = max(worst, ks)
        parts.append(f"{alpha}:{ks:.4f}")
    return worst < 0.01, "KS " + ", ".join(parts) + " (<0.01)", 10.0


def c04_effective_cm():
    e = effective_cm([GroupConfusionMatrix("g", 10, 10, 10, 10)] * 10, 0.1)
    err = np.max(np.abs(e.as_array() - 100 / 1.9)) / (100 / 1.9)
    g = GroupConfusionMatrix("g", 7, 3, 2, 9)
    ident = effective_cm([g], 0.0) == g
    return err <= np.finfo(float).eps and ident, f"rel err={err:.1e}, hold-out identity={ident}", 1.0


def c05_relative_rho():
    ok = True
    for K in (2, 5, 10):
        for rho0 in (0.0, 1 / K, 0.5):
            ok &= relative_rho_raw(rho0, 1.0, K) == rho0
    grid = np.linspace(0.2, 4.0, 20)
    raw = [relative_rho_raw(0.1, r, 10) for r in grid]
    mono = all(b > a for a, b in zip(raw, raw[1:]))
    clamp = all(rho_relative(rho_fixed(10), r, 10).clamped == (not 0 <= v <= 1) for r, v in zip(grid, raw))
    return ok and mono and clamp, f"identity={ok} increasing={mono} clamp-iff={clamp}", 1.0


def c06_correlated_mean():
    rng = np.random.default_rng(6)
    parts, ok = [], True
    for K, pi, delta in ((10, 0.1, 1.0), (5, 0.3, 2.0)):
        u = np.sqrt(delta * pi) * rng.standard_normal((10_000, 1)) \
            + np.sqrt(delta * (1 - pi)) * rng.standard_normal((10_000, K))
        emp = u.mean(axis=1).var(ddof=1)
        closed = delta * (pi + (1 - pi) / K)
        rel = abs(emp - closed) / closed
        ok &= rel < 0.05
        parts.append(f"K={K}: {emp:.4f} vs {closed:.4f} ({100 * rel:.1f}%)")
    return ok, "; ".join(parts) + " (<5%)", 10.0


def c07_sigma_over():
    v = sigma_over([HalfSplitPair(0.8, 0.6), HalfSplitPair(0.7, 0.7)])
    return abs(v - 0.01) < 1e-15, f"sigma2_over={v!r}", 1.0


def c08_hdr_normal():
    rng = np.random.default_rng(8)
    (lo, hi), = fit_hdr(rng.standard_normal(100_000), 0.95).intervals()
    z = 1.95996
    one_d = abs(lo + z) <= 0.05 and abs(hi - z) <= 0.05
    area = fit_hdr(rng.standard_normal((100_000, 2)), 0.95).area
    exact = np.pi * stats.chi2.ppf(0.95, 2)
    rel = abs(area - exact) / exact
    return one_d and rel < 0.05, f"[{lo:.4f}, {hi:.4f}]; area={area:.4f} vs {exact:.4f} ({100 * rel:.2f}%)", 30.0


def c09_partition():
    T = 100_000
    posts_a = [DirichletPosterior("m", (60, 70, 15, 20)), DirichletPosterior("f", (40, 50, 12, 18))]
    posts_b = [DirichletPosterior("m", (58, 72, 13, 22)), DirichletPosterior("f", (41, 47, 15, 17))]
    a = sample_joint(posts_a, [161, 116], ["accuracy", "eop"], T, seed=1)
    b = sample_joint(posts_b, [161, 116], ["accuracy", "eop"], T, seed=2)
    rope = Rope.square(2)
    ab, ba = compare(gap_distribution(a, b), rope), compare(gap_distribution(b, a), rope)
    total = ab.p_equivalent + sum(ab.orthant_probs.values())
    swap = str.maketrans("+-", "-+")
    anti = (ab.p_equivalent == ba.p_equivalent and ab.p_a_outperforms == ba.p_b_outperforms
            and all(ba.orthant_probs.get(k.translate(swap), 0.0) == p for k, p in ab.orthant_probs.items()))
    return abs(total - 1) < 1e-9 and anti, f"sum={total!r} antisymmetric={anti}", 5.0


def c10_dominance():
    ds = make_synthetic(SyntheticSpec({"a": 1000, "b": 1000}, {"a": 0.8, "b": 0.8}, {"a": 0.8, "b": 0.8}, d=2), 10)
    train_idx, test_idx = half_split(ds, 11)
    train, test = ds.subset(train_idx), ds.subset(test_idx)
    samples = []
    for i, p in enumerate((0.9, 0.6)):
        pred = ToyClassifier("bernoulli", {"p": p}).train_predict(train, test, seed=100 + i)
        groups = count_cms(test.group, test.label, pred, ["a", "b"])
        samples.append(sample_joint(posteriors_for(groups), [g.total() for g in groups],
                                    ["accuracy", "tpr"], 100_000, seed=20 + i))
    rep = compare(gap_distribution(*samples), Rope.square(2))
    return rep.p_a_outperforms > 0.99, f"P(A>>B)={rep.p_a_outperforms:.5f} (>0.99)", 10.0


def c11_coverage():
    ds = make_synthetic(SyntheticSpec({"a": 250, "b": 250}, {"a": 0.85, "b": 0.7}, {"a": 0.8, "b": 0.75}, d=3), 11)
    rows = coverage_experiment(
        ds, ToyClassifier("logistic"), K=10, repeats=100,
        strategies=("fixed", "interval", "relative_interval"), reference=ToyClassifier("stump"),
        M=5, metrics=("accuracy", "eop"), seed=11,
    )
    by = {r["strategy"]: r for r in rows}
    rel = by["relative_interval"]
    ok = rel["pct_res"] >= 90 and by["fixed"]["area"] > by["interval"]["area"]
    detail = (f"r_over={rel['r_over']:.3f} rho_rel_up={rel['rho']:.4f} "
              f"in [{rel['rho_lo']:.4f}, {rel['rho_hi']:.4f}] %res={rel['pct_res']:.0f} (>=90); "
              f"area fixed={by['fixed']['area']:.5f} > interval={by['interval']['area']:.5f}")
    return ok, detail, 600.0


def _run_cli(args):
    buf = stdio.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli_main(args)
    return code, buf.getvalue()


def c12_self_reference():
    K = 10
    with tempfile.TemporaryDirectory() as tmp:
        spec = Path(tmp) / "spec.json"
        spec.write_text(json.dumps({"group_sizes": {"a": 250, "b": 250}, "tpr": {"a": 0.85, "b": 0.7},
                                    "tnr": {"a": 0.8, "b": 0.75}, "d": 3}))
        diffs = []
        for seed in range(5):
            code, out = _run_cli(["estimate-rho", "--dataset", str(spec), "--classifier", "logistic",
                                  "--reference", "logistic", "-K", str(K), "-M", "5", "--seed", str(seed)])
            if code != 0:
                return False, f"exit code {code}", 300.0
            diffs.append(abs(json.loads(out)["value"] - 1 / K))
    return max(diffs) < 0.5 / K, f"max |rho1-rho0|={max(diffs):.2e} (<{0.5 / K})", 300.0


def c13_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cm = tmp / "cv.csv"
        cm.write_text("fold,group,tp,tn,fp,fn\n" + "".join(
            f"{k},{g},{10 + k},{12},{3 + k % 2},{4}\n" for k in range(10) for g in ("m", "f")))
        ho = tmp / "ho.csv"
        ho.write_text("group,tp,tn,fp,fn\nm,40,45,5,10\nf,30,50,8,12\n")
        spec = tmp / "spec.json"
        spec.write_text(json.dumps({"group_sizes": {"a": 150, "b": 150}, "tpr": {"a": 0.85, "b": 0.7},
                                    "tnr": {"a": 0.8, "b": 0.75}, "d": 2}))

        def commands(tag, workers):
            d = tmp / tag
            return [
                ["posterior", "--input", str(cm), "-T", "20000", "--seed", "5", "--workers", workers,
                 "--out", str(d / "post")],
                ["compare", "--a", str(cm), "--b", str(ho), "-T", "20000", "--seed", "5", "--workers", workers,
                 "--out", str(d / "cmp")],
                ["hdr", "--samples", str(tmp / "ref" / "post" / "samples.csv"), "--out", str(d / "hdr.json"),
                 "--mask", str(d / "mask.csv")],
                ["estimate-rho", "--dataset", str(spec), "--classifier", "logistic", "--reference", "stump",
                 "-K", "5", "-M", "2", "--seed", "5", "--out", str(d / "rho.json")],
                ["experiment", "coverage", "--dataset", str(spec), "--classifier", "stump", "-K", "5",
                 "--repeats", "5", "-T", "5000", "-M", "2", "--seed", "5", "--workers", workers,
                 "--out", str(d / "exp.json")],
            ]

        def snapshot(tag, workers):
            stdout = []
            for args in commands(tag, workers):
                code, out = _run_cli(args)
                if code != 0:
                    raise AssertionError(f"{args[0]} exited {code}")
                stdout.append(out)
            files = {p.relative_to(tmp / tag).as_posix(): p.read_bytes()
                     for p in sorted((tmp / tag).rglob("*")) if p.is_file()}
            return files, stdout

        _run_cli(commands("ref", "1")[0])
        runs = [snapshot("r1", "1"), snapshot("r2", "1"), snapshot("r3", "4")]
        same = runs[0] == runs[1] == runs[2]
        n_files = len(runs[0][0])
    return same, f"{n_files} output files + stdout of 5 commands identical across 3 runs (workers 1,1,4)", 120.0


CRITERIA = [
    (1, "conjugacy exactness", c01_conjugacy),
    (2, "posterior-mean Monte Carlo", c02_posterior_mean),
    (3, "Beta collapse", c03_beta_collapse),
    (4, "effective CM", c04_effective_cm),
    (5, "relative rho identities", c05_relative_rho),
    (6, "correlated-mean variance", c06_correlated_mean),
    (7, "sigma2_over formula", c07_sigma_over),
    (8, "HDR normal check", c08_hdr_normal),
    (9, "comparison partition", c09_partition),
    (10, "end-to-end dominance", c10_dominance),
    (11, "coverage experiment", c11_coverage),
    (12, "self-reference rho", c12_self_reference),
    (13, "CLI determinism", c13_determinism),
]


def run_criterion(fn):
    start = time.perf_counter()
    ok, detail, budget = fn()
    elapsed = time.perf_counter() - start
    in_time = elapsed < budget
    return bool(ok and in_time), f"{detail}; {elapsed:.2f}s (budget {budget:.0f}s)"


@pytest.mark.parametrize("number,title,fn", CRITERIA, ids=[f"c{n:02d}" for n, _, _ in CRITERIA])
def test_criterion(number, title, fn, capsys):
    ok, detail = run_criterion(fn)
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail}")
    assert ok, detail


if __name__ == "__main__":
    failures = 0
    for number, title, fn in CRITERIA:
        ok, detail = run_criterion(fn)
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail}", flush=True)
    sys.exit(1 if failures else 0)
