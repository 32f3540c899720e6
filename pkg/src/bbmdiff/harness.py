"""Experiment orchestration: one runner per experiment kind.

Realization ``i`` of a run with seed ``s`` always uses the key
``StreamKey(s) / ("realization", i)`` (tree and positions below it) and walk
``i`` uses ``StreamKey(s) / ("walk", i)``, so different experiment kinds with the
same seed see the same BBMs and walks.
"""

from __future__ import annotations

import shutil
import tempfile
import time
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .acceptance import run_acceptance
from .bbm import SpeedProfile, sample_bbm
from .config import ExperimentConfig, RunManifest
from .embedding import leaf_gammas
from .extremes import extremal_point_process, fit_max_law, two_speed_mckean, centering
from .gw_tree import sample_tree
from .io import write_columns, write_json, write_table
from .measures import AtomicMeasure, derivative_martingale, lattice_measure, mckean_martingale, \
    thinned_truncated_measure, thinning_mask, truncated_measure, truncated_mckean_measure
from .metrics import convergence_table, trend_test
from .parallel import pmap
from .pcaf import StepFunction, build_pcaf, revuz_check
from .rng import StreamKey, derive
from .time_change import time_changed_path, truncate_path
from .walk import local_time_field, sample_walk


def realization_key(seed: int, i: int) -> StreamKey:
    return derive(StreamKey(seed), "realization", i)


def walk_key(seed: int, i: int) -> StreamKey:
    return derive(StreamKey(seed), "walk", i)


def _stream_name(key: StreamKey) -> str:
    return "/".join([str(key.seed)] + [f"{t}:{i}" for t, i in key.path])


def _speed(cfg: ExperimentConfig, t: float):
    return None if cfg.sigma is None else SpeedProfile.from_sigma1(cfg.sigma, cfg.b, t)


def _bbm(cfg: ExperimentConfig, i: int, t: float | None = None):
    t = cfg.t if t is None else t
    return sample_bbm(cfg.offspring_law(), t, realization_key(cfg.seed, i), _speed(cfg, t))


def _measure(cfg: ExperimentConfig, real, r: float | None = None) -> AtomicMeasure:
    r = cfg.r if r is None else r
    if cfg.lattice:
        mask = thinning_mask(real, r) if cfg.thinned else None
        return lattice_measure(real, r, mask=mask)
    if cfg.thinned:
        return thinned_truncated_measure(real, r)
    if cfg.sigma is not None:
        return truncated_mckean_measure(real, cfg.sigma, r)
    return truncated_measure(real, r)


# -- runners: (cfg, out) -> (files, checks, streams) ---------------------------

def _simulate_tree_one(i, cfg, out):
    key = realization_key(cfg.seed, i)
    tree = sample_tree(cfg.offspring_law(), cfg.t, key)
    path = out / f"tree_{i:05d}.jsonl"
    tree.to_jsonl(path)
    return path, (i, tree.n_nodes, tree.n_leaves, len(tree.branching_times))


def run_simulate_tree(cfg, out):
    res = pmap(partial(_simulate_tree_one, cfg=cfg, out=out), range(cfg.N), cfg.threads)
    files = [p for p, _ in res]
    files.append(write_table(out / "trees.csv", ["realization", "nodes", "leaves", "branching_events"],
                             [row for _, row in res], t=cfg.t, seed=cfg.seed))
    return files, {}, [realization_key(cfg.seed, i) for i in range(cfg.N)]


def _simulate_bbm_one(i, cfg, out):
    real = _bbm(cfg, i)
    x = real.leaf_positions
    path = write_columns(out / f"bbm_{i:05d}.csv",
                         {"leaf": np.arange(x.size), "gamma": leaf_gammas(real.tree), "position": x},
                         t=cfg.t, realization=i)
    if cfg.sigma is None:
        mart = derivative_martingale(real)
    else:
        mart = mckean_martingale(real, cfg.sigma)
    return path, (i, x.size, float(x.max()), mart)


def run_simulate_bbm(cfg, out):
    res = pmap(partial(_simulate_bbm_one, cfg=cfg, out=out), range(cfg.N), cfg.threads)
    files = [p for p, _ in res]
    name = "Z" if cfg.sigma is None else "Y"
    files.append(write_table(out / "bbm_summary.csv", ["realization", "leaves", "max", name],
                             [row for _, row in res], t=cfg.t, seed=cfg.seed))
    return files, {}, [realization_key(cfg.seed, i) for i in range(cfg.N)]


def _build_measure_one(i, cfg, out):
    m = _measure(cfg, _bbm(cfg, i))
    path = out / f"measure_{i:05d}.csv"
    m.to_csv(path, realization=i, positive=int(m.positivity_flag))
    return path


def run_build_measure(cfg, out):
    files = pmap(partial(_build_measure_one, cfg=cfg, out=out), range(cfg.N), cfg.threads)
    return files, {}, [realization_key(cfg.seed, i) for i in range(cfg.N)]


def _pcaf_one(i, cfg):
    m = _measure(cfg, _bbm(cfg, i))
    walk = sample_walk(cfg.walk_r, cfg.S, cfg.x0, walk_key(cfg.seed, i))
    return m, walk, build_pcaf(m, local_time_field(walk))


def _build_pcaf_one(i, cfg, out):
    _, _, F = _pcaf_one(i, cfg)
    return write_columns(out / f"pcaf_{i:05d}.csv", {"s": F.breakpoints, "F": F.values},
                         realization=i, walk_r=cfg.walk_r, S=cfg.S)


def run_build_pcaf(cfg, out):
    files = pmap(partial(_build_pcaf_one, cfg=cfg, out=out), range(cfg.N), cfg.threads)
    keys = [k for i in range(cfg.N) for k in (realization_key(cfg.seed, i), walk_key(cfg.seed, i))]
    return files, {}, keys


def _sample_path_one(i, cfg, out):
    _, walk, F = _pcaf_one(i, cfg)
    if cfg.s_grid is not None:
        path = time_changed_path(walk, F, [s for s in cfg.s_grid if s < F.final_value])
    else:
        path = time_changed_path(walk, F)
        if cfg.s_horizon is not None:
            path = truncate_path(path, min(cfg.s_horizon, path.horizon))
    return write_columns(out / f"path_{i:05d}.csv", {"s": path.times, "value": path.values},
                         realization=i, horizon=path.horizon)


def run_sample_path(cfg, out):
    files = pmap(partial(_sample_path_one, cfg=cfg, out=out), range(cfg.N), cfg.threads)
    keys = [k for i in range(cfg.N) for k in (realization_key(cfg.seed, i), walk_key(cfg.seed, i))]
    return files, {}, keys


def _converge_one(i, cfg):
    ladder = [tuple(x) for x in cfg.ladder]
    tmax = max(t for _, t in ladder)
    real = _bbm(cfg, i, tmax)
    ms = [_measure(cfg, real.restrict(t), r) for r, t in ladder]
    if not all(m.positivity_flag for m in ms):
        return None
    walk = sample_walk(cfg.walk_r, cfg.S, cfg.x0, walk_key(cfg.seed, i))
    field = local_time_field(walk)
    Fs = [build_pcaf(m, field) for m in ms]
    s_proc = min(F.final_value for F in Fs) * (1 - 1e-9)
    if cfg.s_horizon is not None:
        s_proc = min(s_proc, cfg.s_horizon)
    paths = [truncate_path(time_changed_path(walk, F), s_proc) for F in Fs]
    labels = [f"{r:g}:{t:g}" for r, t in ladder]
    tf = convergence_table(Fs, cfg.S, labels, coupling=[walk.key] * len(Fs))
    tp = convergence_table(paths, s_proc, labels, coupling=[walk.key] * len(Fs))
    # scale-free versions: F is linear in the measure's mass, paths live on the atom hull
    x_scale = max(float(ms[-1].locations[-1]), 1.0 / cfg.walk_r)
    return (tf.consecutive("sup") / Fs[-1].final_value,
            tp.consecutive("l1") / (s_proc * x_scale), s_proc)


def run_converge(cfg, out):
    res = pmap(partial(_converge_one, cfg=cfg), range(cfg.N), cfg.threads, chunksize=2)
    labels = [f"{r:g}:{t:g}" for r, t in cfg.ladder]
    rows, sups, l1s = [], [], []
    for i, x in enumerate(res):
        if x is None:
            continue
        sups.append(x[0])
        l1s.append(x[1])
        for j in range(len(labels) - 1):
            pair = f"{labels[j]}|{labels[j + 1]}"
            rows.append((i, pair, "F_sup_rel", x[0][j]))
            rows.append((i, pair, "path_l1_rel", x[1][j]))
    files = [write_table(out / "converge.csv", ["coupling", "pair", "metric", "value"], rows,
                         walk_r=cfg.walk_r, S=cfg.S, seed=cfg.seed)]
    checks = {}
    report = {"couplings": len(sups), "skipped_nonpositive": cfg.N - len(sups)}
    if len(sups) >= 2:
        ts, tl = trend_test(sups), trend_test(l1s)
        report.update(sup_tau=ts.tau, sup_p=ts.p_value, l1_tau=tl.tau, l1_p=tl.p_value,
                      sup_medians=ts.medians, l1_medians=tl.medians)
        checks = {"sup_trend": ts.tau < 0 and ts.p_value < 0.05,
                  "l1_trend": tl.tau < 0 and tl.p_value < 0.05}
    files.append(write_json(out / "converge.json", report))
    keys = [k for i in range(cfg.N) for k in (realization_key(cfg.seed, i), walk_key(cfg.seed, i))]
    return files, checks, keys


def _extremes_one(i, cfg):
    real = _bbm(cfg, i)
    if cfg.sigma is None:
        m, V = centering(cfg.t, "critical"), derivative_martingale(real)
    else:
        m, V = centering(cfg.t, "two_speed"), two_speed_mckean(real)
    pts = extremal_point_process(real, D=cfg.depth) if cfg.sigma is None else None
    return float(real.leaf_positions.max() - m), V, pts


def run_extremes(cfg, out):
    res = pmap(partial(_extremes_one, cfg=cfg), range(cfg.N), cfg.threads)
    mx = np.array([x[0] for x in res])
    V = np.array([x[1] for x in res])
    kind = "critical" if cfg.sigma is None else "two_speed"
    files = [write_columns(out / "maxima.csv", {"centered_max": mx, "martingale": V}, t=cfg.t, kind=kind)]
    fit = fit_max_law(mx, V, kind, cfg.t)
    report = {"C": fit.C, "ks": fit.ks, "positive_fraction": fit.positive_fraction, "N": cfg.N,
              "t": cfg.t, "kind": kind}
    if cfg.sigma is None:
        rows = [(i, g, h, int(c)) for i, (_, _, p) in enumerate(res)
                for g, h, c in zip(p.gamma, p.height, p.thinned)]
        files.append(write_table(out / "points.csv", ["realization", "gamma", "height", "cluster_max"],
                                 rows, depth=cfg.depth, t=cfg.t))
        counts = np.array([p.thinned_count for _, _, p in res])
        report["thinned_count_mean"] = float(counts.mean())
        # intensity C e^{-sqrt2 x} dx over [-D, inf) times the mean of V; nonpositive V
        # carry no intensity (E Z_t = 0 at every finite t, so the plain mean is useless)
        report["thinned_count_predicted"] = float(
            np.exp(np.sqrt(2) * cfg.depth) / np.sqrt(2) * fit.C * np.mean(np.maximum(V, 0.0)))
    files.append(write_json(out / "fit.json", report))
    limit = 0.1 if cfg.sigma is None else 0.12
    return files, {"ks": fit.ks < limit}, [realization_key(cfg.seed, i) for i in range(cfg.N)]


def run_revuz(cfg, out):
    locs, weights = zip(*cfg.atoms)
    m = AtomicMeasure.from_atoms(locs, weights)
    if cfg.f_edges is None:
        f = StepFunction.indicator(0.0, max(locs) + 1.0 / cfg.walk_r + 0.5)
    else:
        f = StepFunction(tuple(cfg.f_edges), tuple(cfg.f_values))
    key = derive(StreamKey(cfg.seed), "revuz")
    rep = revuz_check(m, f, r=cfg.walk_r, N=cfg.N, rng=key)
    files = [write_json(out / "revuz.json", rep.__dict__)]
    ok = abs(rep.rhs - rep.lhs) <= 3 * rep.se + rep.bias_bound
    return files, {"revuz_3se": ok}, [key]


def run_acceptance_kind(cfg, out):
    results = run_acceptance(cfg.seed, out, cfg.scale, cfg.threads)
    files = [f for c in results for f in c.files]
    files.append(write_json(out / "acceptance.json", {"seed": cfg.seed, "scale": cfg.scale,
                                                      "criteria": [c.to_dict() for c in results]}))
    checks = {f"criterion_{c.number}": bool(c.passed) for c in results}
    return files, checks, [derive(StreamKey(cfg.seed), "criterion", c.number) for c in results]


RUNNERS = {
    "simulate-tree": run_simulate_tree,
    "simulate-bbm": run_simulate_bbm,
    "build-measure": run_build_measure,
    "build-pcaf": run_build_pcaf,
    "sample-path": run_sample_path,
    "converge": run_converge,
    "extremes": run_extremes,
    "revuz": run_revuz,
    "acceptance": run_acceptance_kind,
}


def run(cfg: ExperimentConfig) -> RunManifest:
    """Validate, run into a staging directory, then publish outputs.

    On any failure the staging directory is removed, so a crashed run never
    leaves partial outputs behind.
    """
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    t0 = time.perf_counter()
    try:
        files, checks, keys = RUNNERS[cfg.kind](cfg, stage)
        (stage / "config.json").write_text(cfg.to_json() + "\n")
        published = []
        for f in sorted({Path(f) for f in files} | {stage / "config.json"}):
            if not f.exists() or stage not in f.parents:
                continue
            dest = out / f.relative_to(stage)
            dest.parent.mkdir(parents=True, exist_ok=True)
            shutil.move(str(f), dest)
            published.append(str(dest.relative_to(out)))
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    manifest = RunManifest(cfg.config_hash(), __version__, cfg.kind, cfg.seed,
                           [_stream_name(k) for k in keys], published,
                           {k: bool(v) for k, v in checks.items()}, time.perf_counter() - t0)
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
    return manifest
