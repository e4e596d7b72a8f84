"""Stage-by-stage orchestration with on-disk checkpoints.

Every stage reads its inputs from the output directory, writes CSV
artifacts there and records a manifest (row counts plus SHA-256 of inputs,
outputs and configuration). A stage whose manifest still matches is
skipped when resuming.
"""
from __future__ import annotations

import hashlib
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .config import PipelineConfig
from .errors import InsufficientData, NonPositiveDefinite, NoValidCell, OptimizerFailed, StageError
from .geodesy import lon_difference
from .gp import (
    BlockCovariance,
    GpField,
    difference_covariance,
    fit_mle,
    invalid_params,
    lineage_covariance,
    window_data,
)
from .io import read_csv, read_json, read_profiles, read_tracks, sha256, write_csv, write_json, write_tracks
from .mean_field import MeanFieldModel, adjusted_differences, cell_center, fit_mean_field, nearest_cell
from .pairing import pair_all, pair_table, y_columns
from .profiles import LEVEL_NAMES, ProfileTable, grid_profiles, partition_profiles
from .response import (
    SOUTHERN_BASINS,
    LevelSurface,
    hemisphere_flip,
    marginalize_crosstrack,
    marginalize_time,
    surface_from_fit,
)
from .selection import cv_curve, lambda_grid, select_lambda
from .tps import D_RANGE, TAU_RANGE, TpsSystem, build_design, coefficient_covariance, knot_grid

log = logging.getLogger(__name__)

STAGES = ("partition", "pair", "meanfield", "adjust", "gpfit", "covariance", "smooth", "cv-report", "marginalize")
VALUE_COLUMNS = [f"t_{name}" for name in LEVEL_NAMES]


def level_file(prefix, level: int) -> str:
    return f"{prefix}_{LEVEL_NAMES[level]}.csv"


def derived_seed(root, *keys) -> int:
    return int(np.random.SeedSequence([int(root), *[int(k) for k in keys]]).generate_state(1)[0])


def gp_lattice_cell(i, j, step: int):
    """Snap a 1-degree cell index to the GP lattice of the given spacing."""
    if step == 1:
        return int(i), int(j)
    return int(min(179, step * round(i / step))), int((step * round(j / step)) % 360)


# ------------------------------------------------------------ table helpers

def save_profile_table(tab: ProfileTable, path):
    df = pd.DataFrame({"float_id": tab.float_id, "cycle": tab.cycle, "lon": tab.lon, "lat": tab.lat,
                       "time": tab.time, "is_tc": tab.is_tc.astype(int)})
    for k, col in enumerate(VALUE_COLUMNS):
        df[col] = tab.values[:, k]
    write_csv(df, path)


def load_profile_table(path) -> ProfileTable:
    df = read_csv(path, dtype={"float_id": str})
    return ProfileTable(df["float_id"].to_numpy(object), df["cycle"].to_numpy(int), df["lon"].to_numpy(float),
                        df["lat"].to_numpy(float), df["time"].to_numpy(float), df[VALUE_COLUMNS].to_numpy(float),
                        df["is_tc"].to_numpy(bool))


def read_pairs(path) -> pd.DataFrame:
    return read_csv(path, dtype={"track_id": str, "basin": str, "float_id_baseline": str, "float_id_signal": str})


def read_covariance(path, level: int, lineages) -> dict:
    """{lineage: dense block} for one level."""
    df = read_csv(path)
    df = df[df["level"].astype(str) == LEVEL_NAMES[level]]
    out = {}
    for lin, g in df.groupby("lineage", sort=False):
        size = int(g["i"].max()) + 1
        block = np.zeros((size, size))
        block[g["i"].to_numpy(int), g["j"].to_numpy(int)] = g["value"].to_numpy(float)
        out[int(lin)] = block
    return {k: out[k] for k in lineages if k in out}


@dataclass
class LevelData:
    """Filtered smoothing inputs for one level."""
    level: int
    index: np.ndarray  # kept rows of the adjusted pair table
    points: np.ndarray
    y: np.ndarray
    sigma: BlockCovariance
    counts: dict


# ------------------------------------------------------------------ pipeline

class Pipeline:
    def __init__(self, config: PipelineConfig, out_dir, tracks=None, profiles=None, threads=None):
        self.config = config
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "manifests").mkdir(exist_ok=True)
        self.tracks_in = Path(tracks) if tracks else None
        self.profiles_in = Path(profiles) if profiles else None
        self.threads = int(threads or config.threads)

    # -------------------------------------------------------------- helpers

    def path(self, name) -> Path:
        return self.out / name

    @property
    def levels(self) -> list[int]:
        return self.config.level_indices()

    def _config_digest(self) -> str:
        return hashlib.sha256(self.config.to_text().encode()).hexdigest()

    def _map(self, fn, items):
        items = list(items)
        if self.threads <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.threads) as pool:
            return list(pool.map(fn, items))

    def _manifest_path(self, stage) -> Path:
        return self.out / "manifests" / f"{stage}.json"

    def _write_manifest(self, stage, inputs, outputs, counts):
        write_json({
            "stage": stage,
            "config_sha256": self._config_digest(),
            "inputs": {self._key(p): sha256(p) for p in inputs},
            "outputs": {Path(p).name: sha256(p) for p in outputs},
            "counts": {k: (int(v) if isinstance(v, (int, np.integer)) else v) for k, v in counts.items()},
        }, self._manifest_path(stage))

    def _key(self, p) -> str:
        """Artifact name inside the output directory, absolute path otherwise."""
        p = Path(p).resolve()
        return p.name if p.parent == self.out.resolve() else str(p)

    def is_current(self, stage) -> bool:
        mp = self._manifest_path(stage)
        if not mp.exists():
            return False
        m = read_json(mp)
        if m.get("config_sha256") != self._config_digest():
            return False
        for group in ("inputs", "outputs"):
            for key, digest in m[group].items():
                p = Path(key) if Path(key).is_absolute() else self.path(key)
                if not p.exists() or sha256(p) != digest:
                    return False
        return True

    def _require(self, *names):
        for n in names:
            if not self.path(n).exists():
                raise StageError("input", f"missing {n} in {self.out}; run the earlier stages first")

    # --------------------------------------------------------------- stages

    def partition(self):
        if self.tracks_in is None or self.profiles_in is None:
            raise StageError("partition", "tracks and profiles input files are required")
        try:
            tracks = read_tracks(self.tracks_in)
            raw = read_profiles(self.profiles_in)
        except (OSError, ValueError) as exc:
            raise StageError("partition", str(exc)) from exc
        if not raw:
            raise StageError("partition", f"no profiles in {self.profiles_in} (0 records)")
        table = grid_profiles(raw)
        if len(table) == 0:
            raise StageError("partition", f"none of {len(raw)} profiles cover [10, 200] dbar")
        tc, non_tc = partition_profiles(table, tracks, self.config.tc_deg, self.config.tc_before_days,
                                        self.config.tc_after_days)
        write_tracks(tracks, self.path("tracks.csv"))
        save_profile_table(table, self.path("profiles_gridded.csv"))
        self._write_manifest("partition", [self.tracks_in, self.profiles_in],
                             [self.path("tracks.csv"), self.path("profiles_gridded.csv")],
                             {"tracks": len(tracks), "profiles_read": len(raw), "profiles_gridded": len(table),
                              "tc": len(tc), "non_tc": len(non_tc)})
        log.info("partition: %d gridded profiles (%d TC, %d non-TC)", len(table), len(tc), len(non_tc))

    def pair(self):
        self._require("tracks.csv", "profiles_gridded.csv")
        tracks = read_tracks(self.path("tracks.csv"))
        table = load_profile_table(self.path("profiles_gridded.csv"))
        lineages = pair_all(tracks, table, **self.config.pairing_kwargs())
        df = pair_table(lineages, table)
        if df.empty:
            raise StageError("pair", f"no baseline/signal pairs found ({len(tracks)} tracks, {len(table)} profiles)")
        write_csv(df, self.path("pairs.csv"))
        counts = {"pairs": len(df), "lineages": df["lineage"].nunique()}
        counts.update({f"basin_{b}": int(n) for b, n in df.groupby("basin").size().items()})
        self._write_manifest("pair", [self.path("tracks.csv"), self.path("profiles_gridded.csv")],
                             [self.path("pairs.csv")], counts)
        log.info("pair: %d pairs in %d lineages", len(df), counts["lineages"])

    def _gp_cells(self, pairs: pd.DataFrame):
        first = pairs.drop_duplicates("lineage")
        i, j = nearest_cell(first["lon"].to_numpy(float), first["lat"].to_numpy(float))
        step = self.config.gp_cell_step
        return sorted({gp_lattice_cell(a, b, step) for a, b in zip(np.atleast_1d(i), np.atleast_1d(j))})

    def meanfield(self):
        self._require("profiles_gridded.csv", "pairs.csv")
        table = load_profile_table(self.path("profiles_gridded.csv"))
        non_tc = table.subset(~table.is_tc)
        pairs = read_pairs(self.path("pairs.csv"))
        gp_cells = self._gp_cells(pairs)
        centers = np.array([cell_center(*c) for c in gp_cells]).reshape(-1, 2)
        lon = np.concatenate([pairs["lon"].to_numpy(float), centers[:, 0]])
        lat = np.concatenate([pairs["lat"].to_numpy(float), centers[:, 1]])
        c = self.config
        model = fit_mean_field(lon, lat, non_tc, c.meanfield_half_width, c.meanfield_n_min, c.max_ring)
        frame = model.to_frame()
        write_csv(frame, self.path("meanfield.csv"))
        n_cells = len(model.cells)
        self._write_manifest("meanfield", [self.path("profiles_gridded.csv"), self.path("pairs.csv")],
                             [self.path("meanfield.csv")],
                             {"cells": n_cells, "valid_cells": int(model.valid.all(axis=1).sum()),
                              "non_tc_profiles": len(non_tc)})
        log.info("meanfield: %d cells fitted", n_cells)

    def adjust(self):
        self._require("profiles_gridded.csv", "pairs.csv", "meanfield.csv")
        table = load_profile_table(self.path("profiles_gridded.csv"))
        pairs = read_pairs(self.path("pairs.csv"))
        model = MeanFieldModel.from_frame(read_csv(self.path("meanfield.csv")))
        row = {(f, int(c)): k for k, (f, c) in enumerate(zip(table.float_id, table.cycle))}
        b = np.array([row[(f, int(c))] for f, c in zip(pairs["float_id_baseline"], pairs["cycle_baseline"])])
        s = np.array([row[(f, int(c))] for f, c in zip(pairs["float_id_signal"], pairs["cycle_signal"])])
        y = adjusted_differences(table.values[s], table.values[b], table.time[s], table.time[b],
                                 pairs["lon"].to_numpy(float), pairs["lat"].to_numpy(float), model,
                                 max_ring=self.config.max_ring)
        out = pairs.copy()
        out["d_analysis"] = hemisphere_flip(pairs)["d_deg"]
        for k, col in enumerate(y_columns()):
            out[col] = y[:, k]
        write_csv(out, self.path("pairs_adjusted.csv"))
        missing = int(np.isnan(y).any(axis=1).sum())
        self._write_manifest("adjust", [self.path(n) for n in ("profiles_gridded.csv", "pairs.csv", "meanfield.csv")],
                             [self.path("pairs_adjusted.csv")],
                             {"pairs": len(out), "pairs_without_mean_field": missing,
                              "southern_flipped": int(pairs["basin"].isin(SOUTHERN_BASINS).sum())})

    def gpfit(self):
        self._require("profiles_gridded.csv", "pairs.csv", "meanfield.csv")
        table = load_profile_table(self.path("profiles_gridded.csv"))
        non_tc = table.subset(~table.is_tc)
        pairs = read_pairs(self.path("pairs.csv"))
        model = MeanFieldModel.from_frame(read_csv(self.path("meanfield.csv")))
        cells = self._gp_cells(pairs)
        c = self.config
        max_obs = c.gp_max_obs if c.gp_max_obs > 0 else None

        def fit_one(task):
            cell, level = task
            seed = derived_seed(c.seed, cell[0], cell[1], level)
            try:
                clon, clat = cell_center(*cell)
                mean_cell = model.resolve(clon, clat, level, c.max_ring)
                data = window_data(cell, non_tc, level, model.coefficients(mean_cell, level), mean_cell,
                                   c.gp_half_width, c.months, max_obs, seed)
            except NoValidCell:
                return cell, level, invalid_params(0)
            try:
                params = fit_mle(data, n_starts=c.gp_n_starts, seed=seed, n_min=c.gp_n_min,
                                 nugget_alpha=c.gp_nugget_alpha)
            except (InsufficientData, OptimizerFailed) as exc:
                log.debug("GP cell %s level %s invalid: %s", cell, LEVEL_NAMES[level], exc)
                return cell, level, invalid_params(len(data))
            return cell, level, params

        field = GpField()
        results = self._map(fit_one, [(cell, lev) for cell in cells for lev in self.levels])
        for cell, level, params in results:
            field.set(cell, level, params)
        frame = field.to_frame()
        write_csv(frame, self.path("gp_params.csv"))
        self._write_manifest("gpfit", [self.path(n) for n in ("profiles_gridded.csv", "pairs.csv", "meanfield.csv")],
                             [self.path("gp_params.csv")],
                             {"cells": len(cells), "fits": len(frame), "valid": int(frame["valid"].sum())})
        log.info("gpfit: %d of %d cell-level fits valid", int(frame["valid"].sum()), len(frame))

    def covariance(self):
        self._require("pairs_adjusted.csv", "gp_params.csv")
        pairs = read_pairs(self.path("pairs_adjusted.csv"))
        field = GpField.from_frame(read_csv(self.path("gp_params.csv")))
        rows, dropped = [], {}
        groups = list(pairs.groupby("lineage", sort=False))
        for level in self.levels:
            n_drop = 0
            for lin, g in groups:
                times = np.concatenate([[g["time_baseline"].iloc[0]], g["time_signal"].to_numpy(float)])
                try:
                    p = field.resolve(float(g["lon"].iloc[0]), float(g["lat"].iloc[0]), level, self.config.max_ring)
                except NoValidCell:
                    n_drop += len(g)
                    continue
                block = difference_covariance(lineage_covariance(p, times))
                ii, jj = np.meshgrid(np.arange(len(block)), np.arange(len(block)), indexing="ij")
                rows.append(pd.DataFrame({"level": LEVEL_NAMES[level], "lineage": int(lin), "i": ii.ravel(),
                                          "j": jj.ravel(), "value": block.ravel()}))
            dropped[f"pairs_without_gp_{LEVEL_NAMES[level]}"] = n_drop
        frame = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(
            columns=["level", "lineage", "i", "j", "value"])
        write_csv(frame, self.path("covariance.csv"))
        self._write_manifest("covariance", [self.path("pairs_adjusted.csv"), self.path("gp_params.csv")],
                             [self.path("covariance.csv")], {"entries": len(frame), **dropped})

    # ------------------------------------------------------------ smoothing

    def level_data(self, level: int, pairs=None, cov_path=None) -> LevelData:
        """Apply the missing-value, hurricane, domain and variance filters for one level."""
        pairs = read_pairs(self.path("pairs_adjusted.csv")) if pairs is None else pairs
        lineages = pairs["lineage"].to_numpy(int)
        order = list(dict.fromkeys(lineages.tolist()))
        blocks = read_covariance(cov_path or self.path("covariance.csv"), level, order)
        c = self.config
        y = pairs[y_columns()[level]].to_numpy(float)
        d = pairs["d_analysis"].to_numpy(float)
        tau = pairs["tau_days"].to_numpy(float)
        full, has_cov = [], []
        for lin in order:
            size = int((lineages == lin).sum())
            blk = blocks.get(lin)
            has_cov.append(np.full(size, blk is not None))
            full.append(blk if blk is not None else np.eye(size))
        sigma = BlockCovariance(full)
        has_cov = np.concatenate(has_cov) if has_cov else np.zeros(0, bool)
        var = sigma.diagonal()
        keep_missing = np.isfinite(y) & has_cov
        keep_wind = pairs["wind_kt"].to_numpy(float) >= c.hurricane_threshold_kt
        keep_domain = (d >= D_RANGE[0]) & (d <= D_RANGE[1]) & (tau >= TAU_RANGE[0]) & (tau <= TAU_RANGE[1])
        keep_var = var > c.variance_floor
        keep = keep_missing & keep_wind & keep_domain & keep_var
        counts = {"pairs": len(y), "kept": int(keep.sum()),
                  "dropped_missing": int((~keep_missing).sum()),
                  "dropped_hurricane": int((keep_missing & ~keep_wind).sum()),
                  "dropped_domain": int((keep_missing & keep_wind & ~keep_domain).sum()),
                  "dropped_variance": int((keep_missing & keep_wind & keep_domain & ~keep_var).sum())}
        return LevelData(level, np.flatnonzero(keep), np.column_stack([d, tau])[keep], y[keep], sigma.subset(keep),
                         counts)

    def _system(self, data: LevelData) -> TpsSystem:
        c = self.config
        if len(data.y) < 4:
            raise StageError("smooth", f"level {LEVEL_NAMES[data.level]}: only {len(data.y)} pairs after filtering")
        try:
            W = data.sigma.inverse()
        except NonPositiveDefinite as exc:
            raise StageError("smooth", f"level {LEVEL_NAMES[data.level]}: {exc}") from exc
        mats = build_design(data.points, knot_grid(c.knot_spacing))
        return TpsSystem(mats, W, c.side_condition)

    def _smooth_level(self, level: int, pairs):
        c = self.config
        data = self.level_data(level, pairs)
        system = self._system(data)
        weights = 1.0 / data.sigma.diagonal()
        curve = cv_curve(system, data.y, weights, lambda_grid(c.lambda_lo, c.lambda_hi, c.lambda_n),
                         method="spectral" if c.side_condition else "direct")
        lam_min, lam_cv = select_lambda(curve, tolerance=c.lambda_tolerance)
        tps = system.fit(data.y, lam_cv)
        C = coefficient_covariance(tps, data.sigma)
        surface = surface_from_fit(LEVEL_NAMES[level], tps, C, (c.grid_nd, c.grid_nt))
        write_csv(surface.to_frame(c.alpha), self.path(level_file("grid", level)))
        write_csv(curve.to_frame(), self.path(level_file("cv", level)))
        knots = tps.knots
        fit_frame = pd.DataFrame({
            "term": ["delta"] * len(tps.delta) + ["beta_const", "beta_d", "beta_tau"],
            "d": np.concatenate([knots[:, 0], [np.nan] * 3]),
            "tau": np.concatenate([knots[:, 1], [np.nan] * 3]),
            "value": tps.coef, "lambda": lam_cv})
        write_csv(fit_frame, self.path(level_file("fit", level)))
        lam_s, lam_sc = curve.region_minimizers()
        return {"level": LEVEL_NAMES[level], **data.counts, "lambda_min": lam_min, "lambda_cv": lam_cv,
                "lambda_S": lam_s, "lambda_Sc": lam_sc,
                "trace_H": float(curve.trace_h[np.searchsorted(curve.lambdas, lam_cv)]),
                "significant_fraction": float(surface.significant(c.alpha).mean())}

    def smooth(self):
        self._require("pairs_adjusted.csv", "covariance.csv")
        pairs = read_pairs(self.path("pairs_adjusted.csv"))
        rows = self._map(lambda lev: self._smooth_level(lev, pairs), self.levels)
        summary = pd.DataFrame(rows)
        write_csv(summary, self.path("smooth_summary.csv"))
        outs = [self.path("smooth_summary.csv")] + [self.path(level_file(p, lev)) for lev in self.levels
                                                   for p in ("grid", "cv", "fit")]
        self._write_manifest("smooth", [self.path("pairs_adjusted.csv"), self.path("covariance.csv")], outs,
                             {"levels": len(rows), "pairs_kept_min": int(summary["kept"].min()),
                              "pairs_kept_max": int(summary["kept"].max())})

    def cv_report(self):
        self._require("smooth_summary.csv")
        frames = []
        summary = read_csv(self.path("smooth_summary.csv"), dtype={"level": str})
        for lev in self.levels:
            df = read_csv(self.path(level_file("cv", lev)))
            row = summary[summary["level"] == LEVEL_NAMES[lev]].iloc[0]
            df.insert(0, "level", LEVEL_NAMES[lev])
            df["selected_min"] = df["lambda"] == row["lambda_min"]
            df["selected_cv"] = df["lambda"] == row["lambda_cv"]
            frames.append(df)
        report = pd.concat(frames, ignore_index=True)
        write_csv(report, self.path("cv_report.csv"))
        self._write_manifest("cv-report", [self.path("smooth_summary.csv")] +
                             [self.path(level_file("cv", lev)) for lev in self.levels],
                             [self.path("cv_report.csv")], {"rows": len(report)})

    def level_surface(self, level: int, pairs=None) -> LevelSurface:
        """Rebuild the fit at the selected lambda, with its coefficient covariance."""
        c = self.config
        fit_frame = read_csv(self.path(level_file("fit", level)))
        lam = float(fit_frame["lambda"].iloc[0])
        data = self.level_data(level, pairs)
        system = self._system(data)
        tps = system.fit(data.y, lam)
        grid = read_csv(self.path(level_file("grid", level)))
        surf = LevelSurface.from_frame(LEVEL_NAMES[level], grid)
        surf.tps, surf.coef_cov, surf.lam = tps, coefficient_covariance(tps, data.sigma), lam
        if surf.estimate.shape != (c.grid_nd, c.grid_nt):
            raise StageError("marginalize", f"grid for level {LEVEL_NAMES[level]} has shape {surf.estimate.shape}")
        return surf

    def marginalize(self):
        self._require("pairs_adjusted.csv", "covariance.csv", "smooth_summary.csv")
        pairs = read_pairs(self.path("pairs_adjusted.csv"))
        surfaces = self._map(lambda lev: self.level_surface(lev, pairs), self.levels)
        cross = pd.concat([marginalize_crosstrack(surfaces, b).to_frame() for b in self.config.crosstrack_bands],
                          ignore_index=True)
        time = pd.concat([marginalize_time(surfaces, b).to_frame() for b in self.config.time_bins],
                         ignore_index=True)
        write_csv(cross, self.path("marginal_crosstrack.csv"))
        write_csv(time, self.path("marginal_time.csv"))
        ins = [self.path("pairs_adjusted.csv"), self.path("covariance.csv"), self.path("smooth_summary.csv")]
        ins += [self.path(level_file(p, lev)) for lev in self.levels for p in ("grid", "fit")]
        self._write_manifest("marginalize", ins, [self.path("marginal_crosstrack.csv"),
                                                  self.path("marginal_time.csv")],
                             {"crosstrack_rows": len(cross), "time_rows": len(time)})

    # ------------------------------------------------------------------ run

    def run_stage(self, stage, resume=False):
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        if resume and self.is_current(stage):
            log.info("%s: up to date, skipped", stage)
            return False
        fn = getattr(self, stage.replace("-", "_"))
        try:
            fn()
        except StageError:
            raise
        except Exception as exc:  # surface the failing stage
            raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
        return True

    def run(self, stages=STAGES, resume=True):
        for stage in stages:
            self.run_stage(stage, resume)


def run(config: PipelineConfig, tracks_file, profiles_file, out_dir, resume=True, threads=None) -> Pipeline:
    pipe = Pipeline(config, out_dir, tracks_file, profiles_file, threads)
    config.save(pipe.path("config.txt"))
    pipe.run(resume=resume)
    return pipe


def clean(out_dir):
    shutil.rmtree(out_dir, ignore_errors=True)
