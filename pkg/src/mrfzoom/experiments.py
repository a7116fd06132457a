"""Experiment runners behind the CLI.

Each runner takes a :class:`~mrfzoom.config.RunConfig` and an output
directory, writes its CSV artifacts there and returns a small summary dict.
Timing columns (``ms_*`` / ``*_s``) are the only non-deterministic output.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from pathlib import Path

import numpy as np

from . import dictionary as dct
from .bloch import Simulator, simulate_fingerprint
from .config import RunConfig
from .errors import CalibrationError, DigestMismatchError
from .fingerprint import TissueParams, add_noise, calibrate_noise, cc, estimate_pd
from .phantom import SliceMaps, slice_fingerprints, synthetic_slice
from .sequence import Schedule, build_schedule
from .zoom import df_dictionary, quantify, quantify_slice

log = logging.getLogger(__name__)

RESULT_FIELDS = ["id", "t1_ms", "t2_ms", "df_hz", "pd", "score", "evals", "ms_elapsed"]


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _g(x):
    """Stable 9-significant-digit text for floats."""
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.9g}"
    return x


def result_row(i, res):
    p = res.params
    return [i, _g(p.t1_ms), _g(p.t2_ms), _g(p.df), _g(p.pd), _g(res.score), res.evaluations,
            f"{res.elapsed * 1e3:.3f}"]


def load_schedule(cfg: RunConfig) -> Schedule:
    if cfg.schedule:
        return Schedule.load(cfg.schedule)
    return build_schedule(cfg.schedule_n, cfg.schedule_seed)


def _stats(v):
    v = np.asarray(v, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def cmd_gen_schedule(cfg: RunConfig, out: Path):
    sched = load_schedule(cfg)
    sched.save(out / "schedule.csv")
    return {"timepoints": len(sched), "digest": sched.digest().hex()}


def ensure_dictionary(cfg: RunConfig, sched, grid, out: Path):
    """Path of a dictionary for ``grid``, generated into ``out`` if needed.

    Returns ``(path, generation seconds)``. An existing file built for
    another schedule or grid is regenerated.
    """
    path = full_path(cfg, out)
    if path.exists():
        try:
            if dct.load(path, sched).grid == grid:
                return path, 0.0
            log.info("grid of %s differs from the configured grid; regenerating", path)
        except DigestMismatchError:
            log.info("%s was built for another schedule; regenerating", path)
    t0 = time.perf_counter()
    dct.generate(grid, sched, workers=cfg.workers, path=path)
    return path, time.perf_counter() - t0


def full_path(cfg, out):
    return Path(cfg.dictionary) if cfg.dictionary else Path(out) / "dictionary.mrfd"


def cmd_gen_dict(cfg: RunConfig, out: Path):
    sched = load_schedule(cfg)
    grid = cfg.grid()
    path = full_path(cfg, out)
    t0 = time.perf_counter()
    dct.generate(grid, sched, workers=cfg.workers, path=path)
    return {"entries": grid.total, "path": str(path), "seconds": time.perf_counter() - t0}


def cmd_ccmap(cfg: RunConfig, out: Path):
    sched = load_schedule(cfg)
    grid = cfg.grid()
    truth = TissueParams.from_ms(*cfg.target)
    fp = simulate_fingerprint(truth, sched)
    t0 = time.perf_counter()
    scores = dct.cc_map(fp, grid, sched, path=out / "ccmap.mrfc", workers=cfg.workers)
    elapsed = time.perf_counter() - t0
    t1v, t2v, dfv = (a.values() for a in grid.axes)

    with open(out / "cc_vs_df.csv", "w") as fh:
        fh.write("t1_ms,t2_ms,df_hz,cc\n")
        for i1, t1 in enumerate(t1v):
            for i2, t2 in enumerate(t2v):
                row = scores[i1, i2]
                fh.writelines(f"{t1:.9g},{t2:.9g},{d:.9g},{s:.9g}\n" for d, s in zip(dfv, row))

    k3 = grid.df.nearest(truth.df)
    write_csv(out / "cc_t1t2.csv", ["t1_ms", "t2_ms", "cc"],
              [[_g(float(t1)), _g(float(t2)), _g(float(scores[i1, i2, k3]))]
               for i1, t1 in enumerate(t1v) for i2, t2 in enumerate(t2v)])
    best = np.unravel_index(int(np.argmax(scores)), grid.shape)
    bp = grid.params(*best)
    write_csv(out / "ccmap_summary.csv", ["t1_ms", "t2_ms", "df_hz", "cc", "entries", "s_elapsed"],
              [[_g(bp.t1_ms), _g(bp.t2_ms), _g(bp.df), _g(float(scores[best])), grid.total,
                f"{elapsed:.3f}"]])
    return {"argmax": (bp.t1_ms, bp.t2_ms, bp.df), "cc": float(scores[best]),
            "entries": grid.total}


def eval_targets(grid, n, seed):
    """``n`` distinct on-lattice targets drawn uniformly."""
    rng = np.random.default_rng(seed)
    flat = rng.choice(grid.total, size=n, replace=False)
    return [grid.unravel(int(f)) for f in sorted(flat)]


def cmd_eval(cfg: RunConfig, out: Path):
    sched = load_schedule(cfg)
    grid = cfg.grid()
    zcfg = cfg.zoom()
    sim = Simulator(sched)
    targets = eval_targets(grid, cfg.targets, cfg.seed)
    truth = [grid.params(*i) for i in targets]
    fps = sim.batch([p.t1 for p in truth], [p.t2 for p in truth], [p.df for p in truth])
    write_csv(out / "targets.csv", ["id", "t1_ms", "t2_ms", "df_hz"],
              [[i, _g(p.t1_ms), _g(p.t2_ms), _g(p.df)] for i, p in enumerate(truth)])

    full = None
    gen_s = 0.0
    load_ms = 0.0
    if cfg.brute == "full" or "fulldict" in cfg.modes:
        path, gen_s = ensure_dictionary(cfg, sched, grid, out)
        t0 = time.perf_counter()
        full = dct.load(path, sched)
        load_ms = (time.perf_counter() - t0) * 1e3
    dfd = df_dictionary(grid, sched, zcfg) if "dfdict" in cfg.modes else None

    runs = {}
    for mode in cfg.modes:
        rows, times, evals, found = [], [], [], []
        for i, fp in enumerate(fps):
            res = quantify(fp, grid, sched, zcfg, sim=sim,
                           df_dict=dfd if mode == "dfdict" else None,
                           full_dict=full if mode == "fulldict" else None)
            rows.append(result_row(i, res))
            times.append(res.elapsed)
            evals.append(res.evaluations)
            found.append(res.params)
        write_csv(out / f"results_zoom_{mode}.csv", RESULT_FIELDS, rows)
        runs[f"zoom_{mode}"] = (times, evals, found)

    if cfg.brute != "none":
        # a restricted brute force is centered on the first zoom mode's answer
        centers = next(iter(runs.values()))[2] if runs else truth
        rows, times, found = [], [], []
        for i, fp in enumerate(fps):
            t0 = time.perf_counter()
            if cfg.brute == "full":
                m = dct.brute_force_search(fp, full)
            else:
                m = dct.brute_force_scan(fp, grid.window(centers[i], *cfg.brute_window), sched)
            dt = time.perf_counter() - t0
            times.append(dt)
            found.append(m.params)
            pd = estimate_pd(fp, sim.batch(m.params.t1, m.params.t2, m.params.df)[0])
            rows.append([i, _g(m.params.t1_ms), _g(m.params.t2_ms), _g(m.params.df),
                         _g(pd), _g(m.score), m.evaluations, f"{dt * 1e3:.3f}"])
        write_csv(out / "results_brute.csv", RESULT_FIELDS, rows)
        runs["brute"] = (times, [r[6] for r in rows], found)

    ref = runs["brute"][2] if "brute" in runs else truth
    brute_t = np.mean(runs["brute"][0]) if "brute" in runs else float("nan")
    summary = []
    report = {}
    for name, (times, evals, found) in runs.items():
        mt, st = _stats(times)
        me, se = _stats(evals)
        mism = [sum(abs(getattr(a, k) - getattr(b, k)) > 1e-9 for a, b in zip(found, ref))
                for k in ("t1", "t2", "df")]
        speed = brute_t / mt if mt > 0 else float("nan")
        summary.append([name, len(times), f"{mt * 1e3:.3f}", f"{st * 1e3:.3f}", _g(me), _g(se),
                        f"{speed:.1f}", *mism, f"{load_ms:.3f}", f"{gen_s:.3f}"])
        report[name] = {"mean_s": mt, "mean_evals": me, "sd_evals": se, "speedup": speed,
                        "mismatch": dict(zip(("t1", "t2", "df"), mism))}
    write_csv(out / "eval_summary.csv",
              ["mode", "n", "ms_mean", "ms_sd", "evals_mean", "evals_sd", "speedup",
               "mismatch_t1", "mismatch_t2", "mismatch_df", "ms_dict_load", "s_dict_generation"],
              summary)
    return report


def load_slice(cfg: RunConfig) -> SliceMaps:
    if cfg.slice == "builtin":
        return synthetic_slice()
    return SliceMaps.load(cfg.slice)


def _write_map(path, m):
    with open(path, "w") as fh:
        for row in m:
            fh.write(",".join("nan" if math.isnan(v) else f"{v:.9g}" for v in row) + "\n")


def cmd_slice(cfg: RunConfig, out: Path):
    sched = load_schedule(cfg)
    grid = cfg.grid()
    zcfg = cfg.zoom()
    maps = load_slice(cfg)
    for v in maps.voxels():
        if not grid.contains(TissueParams.from_ms(maps.t1[v], maps.t2[v], maps.df[v])):
            raise ValueError(f"voxel {v} lies off the configured search lattice")
    fps = slice_fingerprints(maps, sched)
    (out / "maps").mkdir(exist_ok=True)
    results = {}
    rows = []
    for mode, prior in (("noprior", False), ("prior", True)):
        r = quantify_slice(fps, maps.mask, grid, sched, zcfg, use_prior=prior,
                           workers=cfg.workers if not prior else 1)
        results[mode] = r
        errs = {}
        for name, est, true in (("t1", r.t1, maps.t1), ("t2", r.t2, maps.t2), ("df", r.df, maps.df)):
            _write_map(out / "maps" / f"{mode}_{name}.csv", est)
            diff = est - true
            _write_map(out / "maps" / f"{mode}_{name}_diff.csv", diff)
            errs[name] = int(np.count_nonzero(np.abs(diff[maps.mask]) > 1e-6))
        _write_map(out / "maps" / f"{mode}_pd.csv", r.pd)
        rows.append([mode, int(maps.mask.sum()), r.total_evaluations, errs["t1"], errs["t2"],
                     errs["df"], f"{r.elapsed:.3f}"])
    a, b = results["noprior"], results["prior"]
    identical = all(np.array_equal(getattr(a, k)[maps.mask], getattr(b, k)[maps.mask])
                    for k in ("t1", "t2", "df"))
    write_csv(out / "slice_summary.csv",
              ["mode", "voxels", "evals_total", "t1_errors", "t2_errors", "df_errors", "s_elapsed"],
              rows)
    vox = maps.voxels()
    write_csv(out / "results_slice.csv", ["mode"] + RESULT_FIELDS,
              [[mode] + result_row(f"{r}_{c}", results[mode].results[(r, c)])
               for mode in ("noprior", "prior") for r, c in vox])
    return {"identical": identical,
            "evals": {k: v.total_evaluations for k, v in results.items()},
            "errors": {row[0]: dict(zip(("t1", "t2", "df"), row[3:6])) for row in rows}}


def calibrated_noise(fp, level, seed, retries):
    """``(sigma, seed)`` for the first seed whose calibration converges."""
    last = None
    for k in range(retries + 1):
        s = seed + 7919 * k
        try:
            return calibrate_noise(fp, level, s), s
        except CalibrationError as exc:
            last = exc
    raise CalibrationError(f"level {level}: no convergent seed in {retries + 1} tries ({last})")


def cmd_noise(cfg: RunConfig, out: Path):
    sched = load_schedule(cfg)
    grid = cfg.grid()
    zcfg = cfg.zoom()
    sim = Simulator(sched)
    truth = TissueParams.from_ms(*cfg.target)
    fp0 = simulate_fingerprint(truth, sched)
    header = ["level", "rep", "seed", "sigma", "auto_cc", "method", "smooth_k",
              "t1_ms", "t2_ms", "df_hz", "err_t1", "err_t2", "err_df", "evals", "status"]
    rows = []
    failures = 0

    def row(level, rep, seed, sigma, auto, method, k, p, evals, status="ok"):
        if p is None:
            return [_g(level), rep, seed, "", "", method, k, "", "", "", "", "", "", "", status]
        return [_g(level), rep, seed, _g(sigma), _g(auto), method, k or 0, _g(p.t1_ms),
                _g(p.t2_ms), _g(p.df), _g(p.t1_ms - truth.t1_ms), _g(p.t2_ms - truth.t2_ms),
                _g(p.df - truth.df), evals, status]

    res = quantify(fp0, grid, sched, zcfg, sim=sim)
    rows.append(row(1.0, 0, 0, 0.0, 1.0, "zoom", None, res.params, res.evaluations))
    for li, level in enumerate(cfg.noise_levels):
        for rep in range(cfg.noise_reps):
            seed = cfg.seed + 1000 * li + 100003 * rep
            try:
                sigma, seed = calibrated_noise(fp0, level, seed, cfg.calibration_retries)
            except CalibrationError as exc:
                log.error("%s", exc)
                failures += 1
                rows.append(row(level, rep, seed, None, None, "zoom", None, None, 0,
                                "calibration_failed"))
                continue
            fp = add_noise(fp0, sigma, seed)
            auto = cc(fp0, fp)
            z = quantify(fp, grid, sched, zcfg, sim=sim)
            rows.append(row(level, rep, seed, sigma, auto, "zoom", None, z.params, z.evaluations))
            for k in cfg.smooth:
                zs = quantify(fp, grid, sched, zcfg, sim=sim, smooth_k=k,
                              smooth_frame=cfg.smooth_frame)
                rows.append(row(level, rep, seed, sigma, auto, "zoom", k, zs.params, zs.evaluations))
            if cfg.brute != "none" and any(abs(level - b) < 1e-9 for b in cfg.brute_levels):
                sub = grid if cfg.brute == "full" else grid.window(z.params, *cfg.brute_window)
                m = dct.brute_force_scan(fp, sub, sched, workers=cfg.workers)
                rows.append(row(level, rep, seed, sigma, auto, "brute", None, m.params,
                                m.evaluations))
    write_csv(out / "noise.csv", header, rows)
    return {"rows": len(rows), "calibration_failures": failures}


COMMANDS = {
    "gen-schedule": cmd_gen_schedule,
    "gen-dict": cmd_gen_dict,
    "ccmap": cmd_ccmap,
    "eval": cmd_eval,
    "slice": cmd_slice,
    "noise": cmd_noise,
}


def run(cfg: RunConfig, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.validate()
    summary = COMMANDS[cfg.command](cfg, out)
    if isinstance(summary, dict) and summary.get("calibration_failures"):
        raise CalibrationError(f"{summary['calibration_failures']} noise level(s) failed to calibrate")
    return summary
