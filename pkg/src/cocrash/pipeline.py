"""
Run configuration and stage execution.

A run writes into a staging directory under the output directory and moves
its artifacts into place only when every requested stage has succeeded. A
failing stage leaves its partial artifacts in ``quarantine/`` together with
``failure.txt`` and maps to a stage-specific exit code.

Single-stage commands reuse upstream artifacts already in the output
directory when their ``config_hash`` matches the current configuration and
recompute them in memory otherwise. ``analyze`` always recomputes.
"""
from __future__ import annotations

import configparser
import contextlib
import glob
import hashlib
import json
import logging
import math
import os
import platform
import shutil
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .cojump import DIRECTIONS, build_frequency_table, filter_direction, group_events, size_distribution
from .errors import CocrashError, ConfigurationError
from .jumps import DetectorConfig, detect_panel
from .liquidity import (
    DEFAULT_PERMUTATIONS,
    DEFAULT_TOP_K,
    LiquidityProfile,
    crash_weighted_dtv,
    liquid_crash_fraction,
    volume_frequency_correlation,
)
from .marketdata import DEFAULT_SESSION, PricePanel, SessionConfig, average_daily_dollar_volume, load_panel
from .nullmodel import DEFAULT_SAMPLES, ShuffleWeights, build_null
from .ranks import DEFAULT_WINDOW, correlation_curves, rank_assets, steady_states
from .synthetic import load_plan, simulate

log = logging.getLogger(__name__)

EXIT_CODES = {
    "config": 2,
    "ingest": 10,
    "detect": 11,
    "cojump": 12,
    "rank": 13,
    "null": 14,
    "liquidity": 15,
    "report": 16,
    "simulate": 17,
}
STAGING = ".staging"
QUARANTINE = "quarantine"
MANIFEST = "manifest.json"
OUTPUT_ENV = "COCRASH_OUTPUT"
SIGNIFICANT_QUANTILE = 0.99


class StageFailure(CocrashError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"{stage}: {message}")

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.stage]


@contextlib.contextmanager
def stage(name: str):
    """Re-raise any failure inside the block as a :class:`StageFailure` for ``name``."""
    try:
        yield
    except StageFailure:
        raise
    except Exception as exc:
        log.debug("stage %s failed", name, exc_info=True)
        raise StageFailure(name, f"{type(exc).__name__}: {exc}") from exc


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass(frozen=True)
class AnalysisConfig:
    direction: str = "both"
    steady_window: tuple = DEFAULT_WINDOW
    null_samples: int = DEFAULT_SAMPLES
    top_k: int = DEFAULT_TOP_K
    perm_samples: int = DEFAULT_PERMUTATIONS
    significance_level: float = 0.05

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ConfigurationError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        lo, hi = self.steady_window
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"bad steady-state window {self.steady_window}")
        if self.null_samples < 1 or self.perm_samples < 1 or self.top_k < 1:
            raise ConfigurationError("null_samples, perm_samples and top_k must be positive")
        if not 0 < self.significance_level < 1:
            raise ConfigurationError("significance_level must lie in (0, 1)")
        object.__setattr__(self, "steady_window", (int(lo), int(hi)))


def _split_list(text: str) -> list[str]:
    return [p.strip() for chunk in text.splitlines() for p in chunk.split(",") if p.strip()]


def resolve_inputs(patterns, base: Path) -> tuple[Path, ...]:
    """Expand input entries: globs, directories (their ``*.csv``) and plain files.

    Entries that match nothing are kept as given so validation can report them.
    """
    out: list[Path] = []
    for pattern in patterns:
        path = Path(pattern)
        if not path.is_absolute():
            path = base / path
        if glob.has_magic(str(path)):
            matches = sorted(Path(p) for p in glob.glob(str(path)))
            out.extend(matches or [path])
        elif path.is_dir():
            out.extend(sorted(path.glob("*.csv")))
        else:
            out.append(path)
    return tuple(out)


@dataclass(frozen=True)
class RunConfig:
    inputs: tuple = ()
    session: SessionConfig = DEFAULT_SESSION
    detector: DetectorConfig = DetectorConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    seed: int = 0
    output: Path = Path("cocrash_output")
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(Path(p) for p in self.inputs))
        object.__setattr__(self, "output", Path(self.output))
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        """Parse an INI run file; relative paths resolve against its directory."""
        path = Path(path)
        parser = configparser.ConfigParser()
        try:
            found = parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
        if not found:
            raise ConfigurationError(f"cannot read config file {path}")
        base = path.resolve().parent
        sect = {name: parser[name] if parser.has_section(name) else {} for name in
                ("input", "session", "detector", "analysis", "run")}
        try:
            det, ana, run = sect["detector"], sect["analysis"], sect["run"]
            detector = DetectorConfig(
                alpha=float(det.get("alpha", 0.05)),
                window_k=int(det.get("window_k", 270)),
                min_observations=int(det.get("min_observations", 0)),
                periodicity_pool=int(det.get("periodicity_pool", 12)),
                periodicity_scale=det.get("periodicity_scale", "wsd"),
            )
            analysis = AnalysisConfig(
                direction=ana.get("direction", "both"),
                steady_window=(int(ana.get("steady_state_min", DEFAULT_WINDOW[0])),
                               int(ana.get("steady_state_max", DEFAULT_WINDOW[1]))),
                null_samples=int(ana.get("null_samples", DEFAULT_SAMPLES)),
                top_k=int(ana.get("top_k", DEFAULT_TOP_K)),
                perm_samples=int(ana.get("perm_samples", DEFAULT_PERMUTATIONS)),
                significance_level=float(ana.get("significance_level", 0.05)),
            )
            output = Path(run.get("output", "cocrash_output"))
            return cls(
                inputs=resolve_inputs(_split_list(sect["input"].get("paths", "")), base),
                session=SessionConfig.from_section(sect["session"]),
                detector=detector,
                analysis=analysis,
                seed=int(run.get("seed", 0)),
                output=output if output.is_absolute() else base / output,
                threads=int(run.get("threads", 1)),
            )
        except (ValueError, configparser.Error) as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc

    def with_overrides(self, seed=None, threads=None, alpha=None, output=None,
                       direction=None) -> "RunConfig":
        """Apply command-line values; ``None`` keeps the configured value."""
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if threads is not None:
            cfg = replace(cfg, threads=int(threads))
        if alpha is not None:
            cfg = replace(cfg, detector=replace(cfg.detector, alpha=float(alpha)))
        if output is not None:
            cfg = replace(cfg, output=Path(output))
        if direction is not None:
            cfg = replace(cfg, analysis=replace(cfg.analysis, direction=direction))
        return cfg

    def validate(self) -> None:
        if not self.inputs:
            raise StageFailure("ingest", "no input paths configured")
        missing = [str(p) for p in self.inputs if not p.is_file()]
        if missing:
            raise StageFailure("ingest", f"input not found: {', '.join(missing)}")

    @cached_property
    def input_digests(self) -> list[dict]:
        return [{"name": p.name, "sha256": sha256_file(p)} for p in self.inputs]

    def identity(self) -> dict:
        """Everything that determines the artifacts; excludes output location and threads."""
        return {
            "analysis": asdict(self.analysis),
            "detector": asdict(self.detector),
            "inputs": self.input_digests,
            "seed": self.seed,
            "session": self.session.as_dict(),
        }

    @cached_property
    def config_hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def meta(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed}


class Run:
    """Lazily computed stage results for one configuration.

    Each accessor either loads a matching cached artifact from the output
    directory (when ``use_cache``) or computes the value, inside the stage
    that owns it.
    """

    def __init__(self, config: RunConfig, use_cache: bool = False):
        self.config = config
        self.use_cache = use_cache
        self._memo: dict = {}

    def _cached(self, name: str) -> Path | None:
        if not self.use_cache:
            return None
        path = self.config.output / name
        if path.is_file() and io.read_meta(path).get("config_hash") == self.config.config_hash:
            log.info("reusing %s", path)
            return path
        return None

    def _get(self, key, compute):
        if key not in self._memo:
            self._memo[key] = compute()
        return self._memo[key]

    def panel(self) -> PricePanel:
        def compute():
            with stage("ingest"):
                cached = self._cached(io.PANEL)
                paths = [cached] if cached else self.config.inputs
                return load_panel(paths, self.config.session, self.config.threads)
        return self._get("panel", compute)

    def assets(self) -> tuple[tuple, np.ndarray, np.ndarray]:
        """Universe, average daily dollar volume and return count per asset."""
        def compute():
            cached = self._cached(io.ASSETS)
            if cached:
                with stage("ingest"):
                    _, rows = io.read_csv(cached, io.ASSET_COLUMNS)
                    return (tuple(r["symbol"] for r in rows),
                            np.array([float(r["dtv"]) for r in rows]),
                            np.array([int(r["n_returns"]) for r in rows]))
            panel = self.panel()
            with stage("ingest"):
                dtv = np.array([average_daily_dollar_volume(panel, a) for a in panel.assets])
                n_ret = np.count_nonzero(~np.isnan(panel.returns), axis=1)
                return panel.assets, dtv, n_ret
        return self._get("assets", compute)

    def jumps(self):
        def compute():
            cached = self._cached(io.JUMPS)
            if cached:
                with stage("detect"):
                    return io.read_jumps(cached)
            panel = self.panel()
            with stage("detect"):
                return detect_panel(panel, self.config.detector, self.config.threads)
        return self._get("jumps", compute)

    def cocrashes(self):
        def compute():
            cached = self._cached(io.COCRASH_EVENTS)
            if cached:
                with stage("cojump"):
                    return io.read_cocrash(cached)
            jumps = self.jumps()
            with stage("cojump"):
                return group_events(filter_direction(jumps, self.config.analysis.direction))
        return self._get("cocrashes", compute)

    def table(self):
        def compute():
            cached = self._cached(io.CRASH_FREQUENCY)
            if cached:
                with stage("cojump"):
                    return io.read_frequency(cached)
            events, universe = self.cocrashes(), self.assets()[0]
            with stage("cojump"):
                return build_frequency_table(events, universe)
        return self._get("table", compute)

    def curves(self):
        def compute():
            cached = self._cached(io.RANK_CURVES)
            if cached:
                with stage("rank"):
                    return io.read_curves(cached)
            table = self.table()
            with stage("rank"):
                return correlation_curves(table)
        return self._get("curves", compute)

    def steady(self):
        curves = self.curves()
        with stage("rank"):
            return self._get("steady", lambda: steady_states(curves, self.config.analysis.steady_window))

    def profile(self) -> LiquidityProfile:
        assets, dtv, _ = self.assets()
        with stage("liquidity"):
            return self._get("profile", lambda: LiquidityProfile(assets, dtv, self.config.analysis.top_k))


# Stage writers: each writes its artifacts into ``out`` -----------------------

def write_ingest(run: Run, out: Path, snapshot: bool = True) -> None:
    assets, dtv, n_ret = run.assets()
    with stage("ingest"):
        if snapshot:
            run.panel().to_csv(out / io.PANEL, [f"{k}={v}" for k, v in sorted(run.config.meta.items())])
        io.write_assets(out / io.ASSETS, assets, dtv, n_ret, run.config.meta)


def write_detect(run: Run, out: Path) -> None:
    jumps = run.jumps()
    with stage("detect"):
        io.write_jumps(out / io.JUMPS, jumps, run.config.meta)


def write_cojump(run: Run, out: Path) -> None:
    events, table = run.cocrashes(), run.table()
    with stage("cojump"):
        meta = run.config.meta
        io.write_cocrash(out / io.COCRASH_EVENTS, events, meta)
        io.write_frequency(out / io.CRASH_FREQUENCY, table, meta)
        counts, ccdf = size_distribution(table)
        io.write_size_distribution(out / io.SIZE_DISTRIBUTION, counts, ccdf, meta)


def write_rank(run: Run, out: Path) -> None:
    curves, states = run.curves(), run.steady()
    with stage("rank"):
        io.write_curves(out / io.RANK_CURVES, curves, run.config.meta)
        io.write_steady_state(out / io.STEADY_STATE, states, run.config.meta)


def significance_rows(run: Run) -> list[tuple]:
    """Quantiles of the steady-state mean and of every single-offset correlation."""
    table, curves, states = run.table(), run.curves(), run.steady()
    cfg = run.config
    with stage("null"):
        steady = {s.base_size: s.mean_rho for s in states}
        by_size = {c.base_size: c for c in curves}
        rows = []
        for m in table.sizes_with_events():
            observed = [("steady_state", None, steady.get(m, math.nan))]
            curve = by_size.get(m)
            if curve is not None:
                observed += [("single", int(t), float(r)) for t, r in zip(curve.taus, curve.rhos)]
            if all(math.isnan(v) for _, _, v in observed):
                null = None
            else:
                null = build_null(rank_assets(table, m), ShuffleWeights.from_table(table, m),
                                  cfg.analysis.null_samples, cfg.seed, cfg.threads)
            for statistic, tau, rho in observed:
                q = null.quantile(rho) if null is not None else math.nan
                gaps = null.n_gaps if null is not None else 0
                degenerate = null.degenerate if null is not None else False
                rows.append((m, statistic, tau, rho, q, cfg.analysis.null_samples, cfg.seed, gaps, degenerate))
        return rows


def write_null(run: Run, out: Path) -> None:
    rows = significance_rows(run)
    with stage("null"):
        io.write_significance(out / io.SIGNIFICANCE, rows, run.config.meta)


def write_liquidity(run: Run, out: Path) -> None:
    table, events, profile = run.table(), run.cocrashes(), run.profile()
    cfg = run.config
    with stage("liquidity"):
        sizes = range(1, table.max_size + 1)
        dtv_rows, corr_rows, frac_rows = [], [], []
        for m in sizes:
            dtv_rows.append((m, crash_weighted_dtv(table, profile, m)))
            vc = volume_frequency_correlation(table, profile, m, cfg.analysis.significance_level,
                                              cfg.analysis.perm_samples, cfg.seed)
            corr_rows.append((m, vc.rho, vc.significant, vc.p_value))
            frac_rows.append((m, liquid_crash_fraction(events, profile, m), profile.k))
        io.write_dtv(out / io.DTV_BY_SIZE, dtv_rows, cfg.meta)
        io.write_vol_freq(out / io.VOL_FREQ_CORR, corr_rows, cfg.meta)
        io.write_liquid_fraction(out / io.LIQUID_FRACTION, frac_rows, cfg.meta)


REPORT_COLUMNS = ("m", "n_events", "ccdf", "steady_rho", "quantile", "dtv_m", "vol_rho",
                  "vol_significant", "liquid_fraction")


def _by_m(rows, *columns) -> dict:
    return {int(r["m"]): tuple(r[c] for c in columns) for r in rows}


def write_report(source: Path, out: Path, config: RunConfig) -> dict:
    """Collate the per-size figure tables in ``source`` into one table.

    Returns a summary with the first size whose steady-state quantile
    exceeds 0.99.
    """
    with stage("report"):
        tables = {}
        for name in (io.SIZE_DISTRIBUTION, io.STEADY_STATE, io.SIGNIFICANCE, io.DTV_BY_SIZE,
                     io.VOL_FREQ_CORR, io.LIQUID_FRACTION):
            path = source / name
            if not path.is_file():
                raise FileNotFoundError(f"{path} is missing; run analyze first")
            meta, rows = io.read_csv(path)
            if meta.get("config_hash") != config.config_hash:
                raise ConfigurationError(f"{path} was produced by a different configuration")
            tables[name] = rows
        sizes = _by_m(tables[io.SIZE_DISTRIBUTION], "f_m_events", "ccdf")
        steady = _by_m(tables[io.STEADY_STATE], "mean_rho")
        quant = _by_m([r for r in tables[io.SIGNIFICANCE] if r["statistic"] == "steady_state"], "quantile")
        dtv = _by_m(tables[io.DTV_BY_SIZE], "dtv_m")
        vol = _by_m(tables[io.VOL_FREQ_CORR], "rho", "significant")
        frac = _by_m(tables[io.LIQUID_FRACTION], "fraction")
        rows = []
        transition = None
        for m in sorted(sizes):
            q = quant.get(m, ("",))[0]
            if transition is None and q and float(q) > SIGNIFICANT_QUANTILE:
                transition = m
            rows.append((m, *sizes[m], steady.get(m, ("",))[0], q, dtv.get(m, ("",))[0],
                         *vol.get(m, ("", "")), frac.get(m, ("",))[0]))
        summary = {"transition_size": "" if transition is None else transition}
        io.write_csv(out / io.REPORT, REPORT_COLUMNS, rows, {**config.meta, **summary})
        return summary


# Orchestration -----------------------------------------------------------------

COMMANDS = {
    "ingest": write_ingest,
    "detect": write_detect,
    "cojump": write_cojump,
    "rank": write_rank,
    "null": write_null,
    "liquidity": write_liquidity,
}


def _commit(staging: Path, output: Path) -> list[str]:
    names = sorted(p.name for p in staging.iterdir())
    for name in names:
        os.replace(staging / name, output / name)
    staging.rmdir()
    return names


def _quarantine(staging: Path, output: Path, failure: StageFailure) -> Path:
    target = output / QUARANTINE
    if target.exists():
        shutil.rmtree(target)
    if staging.exists():
        staging.rename(target)
    else:
        target.mkdir(parents=True)
    (target / "failure.txt").write_text(f"stage={failure.stage}\nerror={failure}\n", encoding="utf-8")
    return target


def _fresh_staging(output: Path) -> Path:
    output.mkdir(parents=True, exist_ok=True)
    staging = output / STAGING
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir()
    return staging


def write_manifest(path: Path, config: RunConfig, artifacts: dict) -> None:
    manifest = {
        "artifacts": artifacts,
        "config": config.identity(),
        "config_hash": config.config_hash,
        "seed": config.seed,
        "versions": {
            "cocrash": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class RunResult:
    exit_code: int
    artifacts: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    failure: StageFailure | None = None


def _execute(config: RunConfig, body) -> RunResult:
    output = config.output
    staging = _fresh_staging(output)
    try:
        with stage("ingest"):
            config.validate()
            config.config_hash
        summary = body(staging) or {}
    except StageFailure as failure:
        where = _quarantine(staging, output, failure)
        log.error("%s (partial artifacts in %s)", failure, where)
        return RunResult(failure.exit_code, failure=failure)
    return RunResult(0, _commit(staging, output), summary)


def run_stage(config: RunConfig, command: str) -> RunResult:
    """Run one stage, reusing matching upstream artifacts from the output directory."""
    run = Run(config, use_cache=True)
    if command == "report":
        return _execute(config, lambda out: write_report(config.output, out, config))
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown stage {command!r}")
    return _execute(config, lambda out: COMMANDS[command](run, out))


def run_pipeline(config: RunConfig) -> RunResult:
    """The full chain from raw inputs to the figure tables, report and manifest."""
    run = Run(config, use_cache=False)

    def body(out: Path) -> dict:
        write_ingest(run, out, snapshot=False)
        write_detect(run, out)
        write_cojump(run, out)
        write_rank(run, out)
        write_null(run, out)
        write_liquidity(run, out)
        summary = write_report(out, out, config)
        digests = {p.name: sha256_file(p) for p in sorted(out.iterdir())}
        write_manifest(out / MANIFEST, config, digests)
        return summary

    return _execute(config, body)


def run_simulation(plan_path, output, seed: int | None = None) -> RunResult:
    """Simulate a plan file into ``output``: a panel snapshot plus ``ground_truth.csv``."""
    output = Path(output)
    staging = _fresh_staging(output)
    try:
        with stage("simulate"):
            plan = load_plan(plan_path, seed=seed)
            panel, truth = simulate(plan)
            digest = hashlib.sha256(Path(plan_path).read_bytes() + str(plan.seed).encode()).hexdigest()[:16]
            meta = {"config_hash": digest, "seed": plan.seed}
            panel.to_csv(staging / io.PANEL, [f"{k}={v}" for k, v in sorted(meta.items())])
            regimes = {ts: regime for ts, _, regime in plan.event_schedule}
            io.write_ground_truth(staging / io.GROUND_TRUTH, truth.events, regimes, meta)
    except StageFailure as failure:
        _quarantine(staging, output, failure)
        log.error("%s", failure)
        return RunResult(failure.exit_code, failure=failure)
    return RunResult(0, _commit(staging, output), {"events": len(truth.events)})
