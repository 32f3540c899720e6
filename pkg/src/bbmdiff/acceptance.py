"""Acceptance suite: every check runnable at desk scale, one result per criterion.

Each criterion draws from its own sub-stream of the run seed, writes its raw
samples to a CSV in the output directory and returns a :class:`Criterion`
with the measured values.  ``scale`` multiplies Monte Carlo sample sizes (1.0
is the reference setting).
"""

from __future__ import annotations

import filecmp
import math
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .bbm import SpeedProfile, sample_bbm
from .extremes import fit_max_law, gumbel_sample, two_speed_mckean, centering
from .gw_tree import BINARY, sample_tree
from .io import write_columns, write_table
from .measures import AtomicMeasure, derivative_martingale, lattice_measure, mckean_martingale, \
    thinned_martingale, truncated_measure
from .metrics import l1_distance, trend_test
from .parallel import pmap
from .pcaf import StepFunction, build_pcaf, inverse, revuz_check, sup_distance_functionals
from .rng import StreamKey, derive, stream
from .time_change import support_check, time_changed_path, truncate_path
from .walk import holder_diagnostic, local_time_field, sample_walk, sup_local_time, tail_slope


@dataclass
class Criterion:
    number: int
    name: str
    passed: bool
    measured: dict
    files: list = field(default_factory=list)
    seconds: float = 0.0

    def line(self) -> str:
        vals = ", ".join(f"{k}={_short(v)}" for k, v in self.measured.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}: {vals}"

    def to_dict(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": bool(self.passed),
                "measured": self.measured, "files": [str(f) for f in self.files],
                "seconds": self.seconds}


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(str(_short(x)) for x in v) + "]"
    return v


def _n(base: int, scale: float, floor: int = 2) -> int:
    return max(floor, int(round(base * scale)))


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


# -- workers (module level so they pickle) -----------------------------------

def _leaf_count(key, t):
    return sample_tree(BINARY, t, key).n_leaves


def _z_value(key, t):
    return derivative_martingale(sample_bbm(BINARY, t, key))


def _y_value(key, sigma, t):
    return mckean_martingale(sample_bbm(BINARY, t, key), sigma)


def _occupation(key, r, S):
    field_ = local_time_field(sample_walk(r, S, 0.0, key))
    return math.fsum(field_.totals() / r)


def _scan_inverse(breaks, values, levels):
    """Right-continuous inverse by a single sequential pass over the segments."""
    order = np.argsort(levels, kind="stable")
    out = np.empty(levels.size)
    i = 0
    n = values.size
    for j in order:
        u = levels[j]
        while i < n - 2 and values[i + 1] <= u:
            i += 1
        v0, v1 = values[i], values[i + 1]
        out[j] = breaks[i] + (u - v0) / (v1 - v0) * (breaks[i + 1] - breaks[i])
    return out


def _pcaf_contract(key, r, t, walk_r, S, n_levels):
    real = sample_bbm(BINARY, t, derive(key, "bbm"))
    m = truncated_measure(real, r)
    if not m.positivity_flag:
        return None
    F = build_pcaf(m, local_time_field(sample_walk(walk_r, S, 0.0, derive(key, "walk"))))
    b, v = F.breakpoints, F.values
    slopes = F.slopes()
    left = v[:-1] + slopes * np.diff(b)
    cont = float(np.max(np.abs(left - v[1:]))) / v[-1]
    gen = stream(derive(key, "levels"))
    u = gen.random(n_levels) * v[-1]
    s = inverse(F, u)
    ident = float(np.max(np.abs(F(s) - u))) / v[-1]
    oracle = float(np.max(np.abs(s - _scan_inverse(b, v, u))))
    s2 = gen.random(n_levels) * S
    # F^{-1}(F(s)) >= s wherever F(s) has not yet reached its final value
    s2 = s2[F(s2) < v[-1]]
    # rounding in F(s) is amplified by 1/slope when inverted; measure the shortfall in those units
    k = np.clip(np.searchsorted(b, s2, side="right") - 1, 0, slopes.size - 1)
    cond = 4 * np.spacing(v[-1]) / np.maximum(slopes[k], np.finfo(float).tiny) + 4 * np.spacing(S)
    back = float(np.min((inverse(F, F(s2)) - s2) / cond, initial=0.0))
    return (float(v[0]), float(np.min(np.diff(v))), cont, ident, oracle, back)


def _thinning(key, rs, ts):
    real = sample_bbm(BINARY, max(ts), key)
    out = []
    for r, t in zip(rs, ts):
        sub = real.restrict(t)
        out.append(abs(derivative_martingale(sub) - thinned_martingale(sub, r)))
    return out


def _coupled_distances(key, ladder, walk_r, S):
    tmax = max(t for _, t in ladder)
    real = sample_bbm(BINARY, tmax, derive(key, "bbm"))
    ms = [truncated_measure(real.restrict(t), r) for r, t in ladder]
    if not all(m.positivity_flag for m in ms):
        return None
    walk = sample_walk(walk_r, S, 0.0, derive(key, "walk"))
    field_ = local_time_field(walk)
    Fs = [build_pcaf(m, field_) for m in ms]
    s_proc = min(F.final_value for F in Fs) * (1 - 1e-9)
    paths = [truncate_path(time_changed_path(walk, F), s_proc) for F in Fs]
    # coupling scales: F is linear in the measure's mass; paths live on the atom hull
    f_scale = Fs[-1].final_value
    x_scale = max(float(ms[-1].locations[-1]), 1.0 / walk_r)
    sups = [sup_distance_functionals(Fs[j], Fs[j + 1], S) / f_scale for j in range(len(Fs) - 1)]
    l1s = [l1_distance(paths[j], paths[j + 1], s_proc) / (s_proc * x_scale)
           for j in range(len(Fs) - 1)]
    return sups, l1s


def _confinement(key, r, t, S, n_grid):
    real = sample_bbm(BINARY, t, derive(key, "bbm"))
    m = lattice_measure(real, r)
    if not m.positivity_flag:
        return None
    walk = sample_walk(int(r), S, 0.0, derive(key, "walk"))
    F = build_pcaf(m, local_time_field(walk))
    exact = time_changed_path(walk, F)
    grid = np.linspace(0.0, F.final_value, n_grid, endpoint=False)
    sampled = time_changed_path(walk, F, grid)
    ok = support_check(exact, m).ok and support_check(sampled, m).ok
    return ok, len(m), exact.times.size


def _two_atom(key, measure, x0, S):
    walk = sample_walk(int(round(1 / measure.grid_spacing)), S, x0, key)
    F = build_pcaf(measure, local_time_field(walk))
    rep = support_check(time_changed_path(walk, F), measure)
    return rep.occupation_fraction * F.final_value


def _holder_field(key, r):
    return local_time_field(sample_walk(r, 1.0, 0.0, key))


def _sup_lt(key, r, x0):
    return sup_local_time(local_time_field(sample_walk(r, 1.0, x0, key)), 1.0)


def _max_and_martingale(key, t, speed_sigma1=None, b=0.5):
    if speed_sigma1 is None:
        real = sample_bbm(BINARY, t, key)
        return real.leaf_positions.max() - centering(t, "critical"), derivative_martingale(real)
    sp = SpeedProfile.from_sigma1(speed_sigma1, b, t)
    real = sample_bbm(BINARY, t, key, sp)
    return real.leaf_positions.max() - centering(t, "two_speed"), two_speed_mckean(real)


# -- criteria ---------------------------------------------------------------

def c1_growth(root, out, scale=1.0, threads=1):
    N, t = _n(20000, scale), 3.0
    keys = [derive(root, "tree", i) for i in range(N)]
    n = np.array(pmap(partial(_leaf_count, t=t), keys, threads))
    mean, se = _mean_se(n)
    f = write_columns(out / "c01_leaf_counts.csv", {"n": n}, t=t, N=N)
    target = math.exp(t)
    return Criterion(1, "growth law E n(3) = e^3", abs(mean - target) <= 3 * se,
                     {"mean": mean, "se": se, "target": target, "z": (mean - target) / se}, [f])


def c2_derivative_mean(root, out, scale=1.0, threads=1):
    N, t = _n(100000, scale), 2.0
    keys = [derive(root, "bbm", i) for i in range(N)]
    z = np.array(pmap(partial(_z_value, t=t), keys, threads, chunksize=256))
    mean, se = _mean_se(z)
    f = write_columns(out / "c02_derivative_martingale.csv", {"Z": z}, t=t, N=N)
    return Criterion(2, "derivative martingale mean 0 at t=2", abs(mean) <= 4 * se,
                     {"mean": mean, "se": se, "z": mean / se}, [f])


def c3_mckean_mean(root, out, scale=1.0, threads=1):
    N, t, sigma = _n(10000, scale), 5.0, 0.5
    keys = [derive(root, "bbm", i) for i in range(N)]
    y = np.array(pmap(partial(_y_value, sigma=sigma, t=t), keys, threads))
    mean, se = _mean_se(y)
    f = write_columns(out / "c03_mckean_martingale.csv", {"Y": y}, t=t, sigma=sigma, N=N)
    return Criterion(3, "McKean martingale mean 1 at sigma=0.5, t=5", abs(mean - 1) <= 3 * se,
                     {"mean": mean, "se": se, "z": (mean - 1) / se}, [f])


def c4_occupation(root, out, scale=1.0, threads=1):
    N, r, S = _n(1000, scale), 32, 4.0
    keys = [derive(root, "walk", i) for i in range(N)]
    tot = np.array(pmap(partial(_occupation, r=r, S=S), keys, threads))
    rel = np.abs(tot - S) / S
    f = write_columns(out / "c04_occupation.csv", {"sum_local_time_over_r": tot}, r=r, S=S)
    return Criterion(4, "occupation identity sum_k l^{k/r}/r = S", bool(np.all(rel <= 1e-9)),
                     {"max_rel_error": float(rel.max()), "walks": N}, [f])


def c5_pcaf_contract(root, out, scale=1.0, threads=1):
    N, r, t, walk_r, S, n_levels = _n(40, scale), 2.0, 7.0, 64, 4.0, 1000
    keys = [derive(root, "realization", i) for i in range(N)]
    res = pmap(partial(_pcaf_contract, r=r, t=t, walk_r=walk_r, S=S, n_levels=n_levels), keys, threads)
    rows = [(i,) + x for i, x in enumerate(res) if x is not None]
    f = write_table(out / "c05_pcaf_contract.csv",
                    ["realization", "F0", "min_increment", "continuity", "identity", "oracle", "backward"],
                    rows, r=r, t=t, walk_r=walk_r, S=S)
    if not rows:
        return Criterion(5, "PCAF contract", False, {"checked": 0}, [f])
    a = np.array([x[1:] for x in rows])
    passed = (np.all(a[:, 0] == 0) and np.all(a[:, 1] >= 0) and np.all(a[:, 2] <= 1e-12)
              and np.all(a[:, 3] <= 1e-12) and np.all(a[:, 4] <= 1e-12) and np.all(a[:, 5] >= -1.0))
    return Criterion(5, "PCAF continuous, nondecreasing, F(0)=0; inverse identities", bool(passed),
                     {"checked": len(rows), "skipped_nonpositive": N - len(rows),
                      "max_identity_error": float(a[:, 3].max()), "max_oracle_error": float(a[:, 4].max()),
                      "min_increment": float(a[:, 1].min()),
                      "min_backward_margin": float(a[:, 5].min())}, [f])


def c6_revuz(root, out, scale=1.0, threads=1):
    N, r = _n(100000, scale, 64), 64
    dirac = AtomicMeasure.from_atoms([0.5], [1.0])
    f1 = StepFunction.indicator(0.0, 1.0)
    rep1 = revuz_check(dirac, f1, r=r, N=N, rng=derive(root, "dirac"))
    gen = stream(derive(root, "atoms"))
    ks = np.sort(gen.choice(np.arange(1, 65), size=5, replace=False))
    w = gen.uniform(0.5, 1.5, 5)
    lat = AtomicMeasure.from_atoms(ks / r, w, grid_spacing=1.0 / r, kind="lattice")
    f2 = StepFunction((0.0, 0.5, 1.25), (1.0, 2.0))
    rep2 = revuz_check(lat, f2, r=r, N=N, rng=derive(root, "lattice"))
    f = write_table(out / "c06_revuz.csv", ["case", "lhs", "rhs", "se", "rel_error", "bias_bound"],
                    [("dirac", rep1.lhs, rep1.rhs, rep1.se, rep1.rel_error, rep1.bias_bound),
                     ("lattice5", rep2.lhs, rep2.rhs, rep2.se, rep2.rel_error, rep2.bias_bound)],
                    r=r, N=N)
    ok1 = abs(rep1.rhs - rep1.lhs) <= 3 * rep1.se
    ok2 = rep2.rel_error < 0.05
    return Criterion(6, "Revuz correspondence", bool(ok1 and ok2),
                     {"dirac_rhs": rep1.rhs, "dirac_se": rep1.se, "dirac_z": (rep1.rhs - 1) / rep1.se,
                      "lattice_rel_error": rep2.rel_error, "lattice_se": rep2.se}, [f])


def c7_thinning(root, out, scale=1.0, threads=1):
    N = _n(200, scale)
    rs = [2.0, 3.0, 4.0]
    ts = [3 * r + 0.5 for r in rs]
    keys = [derive(root, "bbm", i) for i in range(N)]
    d = np.array(pmap(partial(_thinning, rs=rs, ts=ts), keys, threads, chunksize=4))
    med = np.median(d, axis=0)
    f = write_columns(out / "c07_thinning.csv", {f"r{int(r)}": d[:, j] for j, r in enumerate(rs)},
                      ladder=";".join(f"{r:g}:{t:g}" for r, t in zip(rs, ts)), N=N)
    return Criterion(7, "thinning medians strictly decreasing in r", bool(np.all(np.diff(med) < 0)),
                     {"medians": med.tolist(), "means": d.mean(axis=0).tolist(),
                      "nonzero_fraction": (d > 0).mean(axis=0).tolist()}, [f])


def c8_functional_trend(root, out, scale=1.0, threads=1):
    N, walk_r, S = _n(100, scale, 3), 64, 4.0
    ladder = [(2.0, 7.0), (3.0, 10.0), (4.0, 13.0)]
    sups, l1s, used = [], [], []
    i = 0
    while len(sups) < N and i < 2 * N:
        batch = [derive(root, "coupling", j) for j in range(i, i + N - len(sups))]
        res = pmap(partial(_coupled_distances, ladder=ladder, walk_r=walk_r, S=S), batch, threads,
                   chunksize=2)
        for j, x in zip(range(i, i + len(batch)), res):
            if x is not None:
                sups.append(x[0])
                l1s.append(x[1])
                used.append(j)
        i += len(batch)
    sups, l1s = np.array(sups), np.array(l1s)
    ts, tl = trend_test(sups), trend_test(l1s)
    cols = {"coupling": np.array(used)}
    for j in range(sups.shape[1]):
        cols[f"sup_{j}{j + 1}"] = sups[:, j]
        cols[f"l1_{j}{j + 1}"] = l1s[:, j]
    f = write_columns(out / "c08_functional_trend.csv", cols, walk_r=walk_r, S=S,
                      ladder=";".join(f"{r:g}:{t:g}" for r, t in ladder))
    passed = ts.tau < 0 and ts.p_value < 0.05 and tl.tau < 0 and tl.p_value < 0.05
    return Criterion(8, "coupled sup and L1 distances decrease along the ladder", bool(passed),
                     {"sup_tau": ts.tau, "sup_p": ts.p_value, "sup_medians": ts.medians.tolist(),
                      "l1_tau": tl.tau, "l1_p": tl.p_value, "l1_medians": tl.medians.tolist(),
                      "couplings": len(used)}, [f])


def c9_confinement(root, out, scale=1.0, threads=1):
    N, r, t, S = _n(100, scale), 8.0, 10.0, 4.0
    oks, rows = [], []
    i = 0
    while len(oks) < N and i < 2 * N:
        batch = [derive(root, "realization", j) for j in range(i, i + N - len(oks))]
        res = pmap(partial(_confinement, r=r, t=t, S=S, n_grid=1000), batch, threads, chunksize=4)
        for j, x in zip(range(i, i + len(batch)), res):
            if x is not None:
                oks.append(x[0])
                rows.append((j,) + x)
        i += len(batch)
    f = write_table(out / "c09_confinement.csv", ["realization", "confined", "atoms", "path_steps"],
                    rows, r=r, t=t, S=S)
    return Criterion(9, "time-changed lattice walk stays on the atoms", bool(oks) and all(oks),
                     {"realizations": len(oks), "violations": int(len(oks) - sum(oks))}, [f])


def c10_occupation_weight(root, out, scale=1.0, threads=1):
    N, S = _n(400, scale), 64.0
    measure = AtomicMeasure(np.array([0.25, 0.75]), np.array([1.0, 2.0]), 0.125, "lattice")
    x0 = float(measure.locations[np.argmax(measure.locations)])
    keys = [derive(root, "walk", i) for i in range(N)]
    occ = np.array(pmap(partial(_two_atom, measure=measure, x0=x0, S=S), keys, threads))
    total = occ.sum(axis=1)
    target = measure.weights / measure.weights.sum()
    frac = occ.sum(axis=0) / total.sum()
    # delta-method standard error of a ratio of means
    se = np.array([math.sqrt(np.var(occ[:, k] - frac[k] * total, ddof=1) / N) / total.mean()
                   for k in range(2)])
    f = write_columns(out / "c10_two_atom.csv", {"time_a": occ[:, 0], "time_b": occ[:, 1]},
                      atoms="0.25;0.75", weights="1;2", S=S, x0=x0)
    return Criterion(10, "occupation fractions match weight fractions",
                     bool(np.all(np.abs(frac - target) <= 3 * se)),
                     {"fractions": frac.tolist(), "targets": target.tolist(), "se": se.tolist()}, [f])


def c11_regularity(root, out, scale=1.0, threads=1):
    Nh, Nt = _n(200, scale, 8), _n(5000, scale, 200)
    fields = pmap(partial(_holder_field, r=256), [derive(root, "holder", i) for i in range(Nh)], threads)
    h = holder_diagnostic(fields, 1.0)
    del fields
    sups = np.array(pmap(partial(_sup_lt, r=64, x0=8.0), [derive(root, "tail", i) for i in range(Nt)],
                         threads))
    lams = np.array([2.0, 2.25, 2.5, 2.75, 3.0])
    slope = tail_slope(sups, lams)
    f1 = write_columns(out / "c11_holder.csv", {"separation": h.separations, "median": h.medians},
                       r=256, fields=Nh)
    f2 = write_columns(out / "c11_sup_local_time.csv", {"sup": sups}, r=64, x0=8.0, t=1.0)
    ok = 0.35 <= h.slope <= 0.65 and not h.flagged and -0.7 <= slope <= -0.35
    return Criterion(11, "local-time Holder slope and sup tail", bool(ok),
                     {"holder_slope": h.slope, "tail_slope": slope}, [f1, f2])


def c12_extremes(root, out, scale=1.0, threads=1):
    N, t = _n(2000, scale, 500), 8.0
    crit = pmap(partial(_max_and_martingale, t=t), [derive(root, "critical", i) for i in range(N)],
                threads)
    mx, V = np.array(crit).T
    fit = fit_max_law(mx, V, "critical", t)
    gen = stream(derive(root, "synthetic"))
    C_true = 0.7
    syn = fit_max_law(gumbel_sample(gen, C_true, N), np.ones(N), "synthetic")
    two = pmap(partial(_max_and_martingale, t=t, speed_sigma1=0.5, b=0.5),
               [derive(root, "two-speed", i) for i in range(N)], threads)
    mx2, V2 = np.array(two).T
    fit2 = fit_max_law(mx2, V2, "two_speed", t)
    f = write_columns(out / "c12_maxima.csv", {"critical_max": mx, "Z": V, "two_speed_max": mx2,
                                               "Y_sigma1": V2}, t=t, sigma1=0.5, b=0.5)
    rel = abs(syn.C - C_true) / C_true
    ok = fit.ks < 0.1 and rel < 0.1 and syn.ks < 0.03 and fit2.ks < 0.12
    return Criterion(12, "extremal law fits", bool(ok),
                     {"critical_ks": fit.ks, "critical_C": fit.C, "synthetic_C_rel_error": rel,
                      "synthetic_ks": syn.ks, "two_speed_ks": fit2.ks, "two_speed_C": fit2.C,
                      "positive_fraction": fit.positive_fraction}, [f])


CRITERIA = {1: c1_growth, 2: c2_derivative_mean, 3: c3_mckean_mean, 4: c4_occupation,
            5: c5_pcaf_contract, 6: c6_revuz, 7: c7_thinning, 8: c8_functional_trend,
            9: c9_confinement, 10: c10_occupation_weight, 11: c11_regularity, 12: c12_extremes}


def run_criterion(n: int, seed: int, out, scale=1.0, threads=1) -> Criterion:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = CRITERIA[n](derive(StreamKey(seed), "criterion", n), out, scale, threads)
    res.seconds = time.perf_counter() - t0
    return res


def c13_determinism(seed: int, out, reference: dict, scale=1.0, threads=1) -> Criterion:
    """Rerun the data-producing criteria and compare their files byte for byte."""
    out = Path(out)
    shadow = Path(tempfile.mkdtemp(prefix="rerun-", dir=out))
    try:
        mismatched = []
        for n, res in sorted(reference.items()):
            again = run_criterion(n, seed, shadow, scale, threads)
            for a, b in zip(res.files, again.files):
                if not filecmp.cmp(a, b, shallow=False):
                    mismatched.append(Path(a).name)
            if len(res.files) != len(again.files):
                mismatched.append(f"criterion {n}: file count")
        compared = sum(len(r.files) for r in reference.values())
    finally:
        shutil.rmtree(shadow, ignore_errors=True)
    return Criterion(13, "rerun with the same seed is byte-identical", not mismatched and compared > 0,
                     {"files_compared": compared, "mismatched": mismatched})


def run_acceptance(seed: int, out, scale=1.0, threads=1, only=None, log=print) -> list[Criterion]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    numbers = sorted(CRITERIA) if only is None else sorted(n for n in only if n in CRITERIA)
    results = {}
    for n in numbers:
        results[n] = run_criterion(n, seed, out, scale, threads)
        if log:
            log(results[n].line())
    final = list(results.values())
    if only is None or 13 in only:
        c13 = c13_determinism(seed, out, results, scale, threads)
        if log:
            log(c13.line())
        final.append(c13)
    return final
