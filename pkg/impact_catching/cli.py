#!/usr/bin/env python3
"""
Impact-aware catching - batch command line

Scenario files in, traces, metrics and plot-ready tables out.

    impact-catching run --config impact_catching/data/scenarios/nominal_drop_vm_vic.yaml
    impact-catching compare --out runs/compare
    impact-catching train-profile --synthetic --out profile.yaml
    impact-catching calibrate-contact --restitution 0.6
"""

import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click
import numpy as np
import pandas as pd
import yaml
from rich.console import Console
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from impact_catching import __version__
from impact_catching.config import (
    DEFAULT_CONTACT_STIFFNESS,
    DEFAULT_RESTITUTION,
    GMM_COMPONENTS,
    LOG_FORMAT,
    OBJECT_MASS,
    SCENARIO_DIR,
)
from impact_catching.errors import CatchingError, ConfigError
from impact_catching.impact_model import analytic_restitution, calibrate_damping, contact_duration
from impact_catching.metrics import MetricsReport, batch_table, compute_metrics, joint_torque_table
from impact_catching.poc_stiffness import (
    GENERATOR_VERSION,
    predict_stiffness,
    read_demonstrations,
    save_profile,
    synth_demonstrations,
    train_gmm,
)
from impact_catching.scenario import ScenarioConfig, load_scenario
from impact_catching.sim_engine import SimTrace, bounce_test, run_scenario
from impact_catching.state_estimator import write_measurements

logger = logging.getLogger(__name__)
console = Console()

MANIFEST_NAME = "manifest.yaml"
BUNDLED_COMPARISON = "nominal_drop_*.yaml"


# ============================================================
# Manifest
# ============================================================
@dataclass
class RunManifest:
    """Everything needed to reproduce a run or a comparison"""

    command: str
    configs: list[str]
    seeds: list[int]
    out_dir: str
    deterministic: bool = True
    dim: str | None = None
    measurements: str | None = None
    model_sha256: dict[str, str] = field(default_factory=dict)
    profile_sha256: dict[str, str] = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)
    version: str = __version__

    def write(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(asdict(self), sort_keys=False))
        return path

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
        try:
            return cls(**raw)
        except TypeError as e:
            raise ConfigError("manifest", f"{path} is not a run manifest: {e}") from e


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _profile_hash(cfg: ScenarioConfig) -> str:
    if cfg.poc.profile is None:
        return f"bundled-synthetic-v{GENERATOR_VERSION}"
    return file_sha256(cfg.poc.profile)


def scenario_overrides(seed: int | None, deterministic: bool, dim: str | None, measurements: str | None = None) -> dict:
    overrides: dict = {"sim": {"deterministic": deterministic}}
    if measurements is not None:
        overrides["estimator"] = {"measurements": str(Path(measurements).resolve())}
    if seed is not None:
        overrides["seed"] = seed
    if dim is not None:
        overrides["controller"] = {"dim": dim == "on"}
    return overrides


# ============================================================
# Artifacts
# ============================================================
def write_artifacts(trace: SimTrace, report: MetricsReport, out_dir: Path) -> list[str]:
    """Trace, summary and the plot-ready tables of one run"""
    frame = trace.frame
    force = frame[["time_s", "phase", "Fx", "Fy", "Fz"]].copy()
    force["F_norm"] = np.linalg.norm(frame[["Fx", "Fy", "Fz"]].to_numpy(dtype=float), axis=1)
    motion = frame[["time_s", "phase", "x", "y", "z", "vx", "vy", "vz", "x_d", "y_d", "z_d",
                    "vx_d", "vy_d", "vz_d", "obj_x", "obj_y", "obj_z", "obj_vx", "obj_vy", "obj_vz"]]
    paths = [
        trace.write_csv(out_dir / "trace.csv"),
        trace.write_summary(out_dir / "summary.json", report.to_dict()),
        write_measurements(trace.measurements, out_dir / "measurements.csv"),
    ]
    for name, table in (("force.csv", force), ("motion.csv", motion), ("torque.csv", joint_torque_table(trace))):
        table.to_csv(out_dir / name, index=False, float_format="%.9f")
        paths.append(out_dir / name)
    return [str(p) for p in paths]


def run_one(config_path: str, overrides: dict, out_dir: str) -> dict:
    """Load, simulate and write one scenario; the unit of work of every command"""
    cfg = load_scenario(config_path, overrides)
    trace = run_scenario(cfg)
    report = compute_metrics(trace)
    artifacts = write_artifacts(trace, report, Path(out_dir))
    return {
        "name": cfg.name,
        "strategy": cfg.strategy,
        "seed": cfg.seed,
        "report": report.to_dict(),
        "artifacts": artifacts,
        "model_sha256": file_sha256(cfg.arm.model),
        "profile_sha256": _profile_hash(cfg),
    }


def _fail(error: CatchingError):
    """ConfigError exits with 2, every other pipeline error with 1"""
    if isinstance(error, ConfigError):
        console.print(f"\n[bold red]❌ Invalid configuration field '{error.field}': {error}[/bold red]")
        sys.exit(2)
    console.print(f"\n[bold red]❌ Error: {error}[/bold red]")
    sys.exit(1)


def _metrics_table(title: str, rows: pd.DataFrame) -> Table:
    table = Table(title=title)
    for column in rows.columns:
        table.add_column(column, justify="left" if column in ("strategy", "outcome") else "right")
    for values in rows.itertuples(index=False):
        table.add_row(*[f"{v:.4g}" if isinstance(v, float) else str(v) for v in values])
    return table


# ============================================================
# Commands
# ============================================================
@click.group()
@click.option("--verbose", is_flag=True, help="Debug logging")
@click.version_option(__version__)
def cli(verbose: bool):
    """Impact-aware nonprehensile catching simulator"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=[logging.StreamHandler()],
    )


def _common_options(command):
    command = click.option("--dim", type=click.Choice(["on", "off"]), default=None,
                           help="Force the DIM task on or off regardless of the strategy tag")(command)
    command = click.option("--deterministic/--no-deterministic", default=True,
                           help="Run the planner inline instead of on a worker thread")(command)
    command = click.option("--seed", type=int, default=None, help="Override the scenario seed")(command)
    return command


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Scenario YAML file")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False),
              help="Re-run the scenario recorded in a run manifest")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory (default runs/<scenario>)")
@click.option("--measurements", "measurements_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Replay a recorded measurements.csv instead of the synthetic camera")
@_common_options
def run(config_path: str | None, manifest_path: str | None, out_dir: str | None, measurements_path: str | None,
        seed: int | None, deterministic: bool, dim: str | None):
    """Simulate one scenario and write its trace, summary and plot data"""
    try:
        if manifest_path is not None:
            manifest = RunManifest.read(manifest_path)
            config_path, seed, deterministic, dim = (manifest.configs[0], manifest.seeds[0], manifest.deterministic,
                                                     manifest.dim)
            measurements_path = manifest.measurements
            out_dir = out_dir or manifest.out_dir
        if config_path is None:
            raise ConfigError("config", "pass --config or --manifest")
        out = Path(out_dir) if out_dir else Path("runs") / Path(config_path).stem
        console.print(f"[bold blue]Running scenario: {config_path}[/bold blue]")

        with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"),
                      transient=True) as progress:
            progress.add_task("[cyan]Simulating...", total=None)
            result = run_one(config_path, scenario_overrides(seed, deterministic, dim, measurements_path), str(out))

        manifest = RunManifest(
            command="run", configs=[str(config_path)], seeds=[result["seed"]], out_dir=str(out),
            deterministic=deterministic, dim=dim,
            measurements=str(Path(measurements_path).resolve()) if measurements_path else None,
            model_sha256={result["name"]: result["model_sha256"]},
            profile_sha256={result["name"]: result["profile_sha256"]},
            artifacts=result["artifacts"],
        )
        manifest.artifacts.append(str(manifest.write(out / MANIFEST_NAME)))
    except CatchingError as e:
        _fail(e)

    report = MetricsReport(**result["report"])
    color = "green" if report.outcome == "caught" else "yellow"
    console.print(f"\n[bold {color}]Outcome: {report.outcome}[/bold {color}]")
    console.print(_metrics_table(result["strategy"], batch_table([(result["strategy"], report)])))
    console.print(f"[bold]Artifacts:[/bold] {out}")


@cli.command()
@click.option("--config", "config_paths", multiple=True, type=click.Path(dir_okay=False),
              help="Scenario YAML file, repeatable (default: the bundled vertical drops)")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="runs/compare", show_default=True)
@click.option("--workers", type=int, default=None, help="Parallel worker processes")
@_common_options
def compare(config_paths: tuple[str, ...], out_dir: str, workers: int | None, seed: int | None, deterministic: bool,
            dim: str | None):
    """Run several strategies and tabulate their metrics side by side"""
    paths = list(config_paths) or [str(p) for p in sorted(SCENARIO_DIR.glob(BUNDLED_COMPARISON))]
    try:
        if len(paths) < 2:
            raise ConfigError("config", f"compare needs at least two scenarios, got {len(paths)}")
        out = Path(out_dir)
        overrides = scenario_overrides(seed, deterministic, dim)
        for path in paths:
            load_scenario(path, overrides)
        # duplicated configs get their own run directory
        run_dirs = [str(out / f"{i:02d}_{Path(p).stem}") for i, p in enumerate(paths)]

        with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"),
                      transient=True) as progress:
            progress.add_task(f"[cyan]Simulating {len(paths)} scenarios...", total=None)
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run_one, paths, [overrides] * len(paths), run_dirs))

        table = batch_table([(r["strategy"], MetricsReport(**r["report"])) for r in results])
        out.mkdir(parents=True, exist_ok=True)
        table_path = out / "comparison.csv"
        table.to_csv(table_path, index=False, float_format="%.6f")
        manifest = RunManifest(
            command="compare", configs=paths, seeds=[r["seed"] for r in results], out_dir=str(out),
            deterministic=deterministic, dim=dim,
            model_sha256={r["name"]: r["model_sha256"] for r in results},
            profile_sha256={r["name"]: r["profile_sha256"] for r in results},
            artifacts=[a for r in results for a in r["artifacts"]] + [str(table_path)],
        )
        manifest.artifacts.append(str(manifest.write(out / MANIFEST_NAME)))
    except CatchingError as e:
        _fail(e)

    console.print(_metrics_table("Strategy comparison", table))
    console.print(f"[bold]Table:[/bold] {table_path}")


@cli.command("train-profile")
@click.option("--demos", "demos_path", type=click.Path(exists=True, dir_okay=False),
              help="Demonstration CSV (delta_d_m, L11..L33)")
@click.option("--synthetic", is_flag=True, help="Train on seeded synthetic demonstrations (default without --demos)")
@click.option("--components", "K", type=int, default=GMM_COMPONENTS, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--noise", type=float, default=0.01, show_default=True, help="Relative noise of synthetic demos")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="profile.yaml", show_default=True)
def train_profile(demos_path: str | None, synthetic: bool, K: int, seed: int, noise: float, out_path: str):
    """Fit the stiffness profile GMM and save it"""
    try:
        if demos_path is not None and synthetic:
            raise ConfigError("demos", "--demos and --synthetic are exclusive")
        if K < 1:
            raise ConfigError("components", f"must be at least 1, got {K}")
        demos = read_demonstrations(demos_path) if demos_path else synth_demonstrations(noise_std=noise, seed=seed)
        profile = train_gmm(demos, K, seed=seed)
        path = save_profile(profile, out_path)
    except CatchingError as e:
        _fail(e)

    start = predict_stiffness(profile, 0.0)[2, 2]
    end = predict_stiffness(profile, profile.d_h)[2, 2]
    console.print(f"\n[bold green]✓ Profile trained on {len(demos)} samples[/bold green]")
    console.print(f"[bold]Components:[/bold] {profile.K}   [bold]EM iterations:[/bold] {profile.iterations}")
    console.print(f"[bold]Mean log-likelihood:[/bold] {profile.log_likelihood:.4f}")
    console.print(f"[bold]K_zz:[/bold] {start:.1f} N/m at start, {end:.1f} N/m at d_h={profile.d_h} m")
    console.print(f"[bold]Saved:[/bold] {path} (sha256 {file_sha256(path)[:16]})")


@cli.command("calibrate-contact")
@click.option("--restitution", type=float, default=DEFAULT_RESTITUTION, show_default=True)
@click.option("--stiffness", type=float, default=DEFAULT_CONTACT_STIFFNESS, show_default=True, help="N/m")
@click.option("--mass", type=float, default=OBJECT_MASS, show_default=True, help="kg")
@click.option("--simulate/--no-simulate", default=True, help="Check with a single simulated bounce")
def calibrate_contact(restitution: float, stiffness: float, mass: float, simulate: bool):
    """Contact damping giving the requested restitution"""
    try:
        d_c = calibrate_damping(restitution, stiffness, mass)
    except ValueError as e:
        _fail(ConfigError("restitution", str(e)))

    result = {
        "stiffness": stiffness,
        "mass": mass,
        "damping": d_c,
        "restitution": analytic_restitution(stiffness, d_c, mass),
        "contact_duration_s": contact_duration(stiffness, d_c, mass),
    }
    if simulate:
        result["simulated_restitution"] = bounce_test(stiffness, restitution, mass)
    console.print_json(json.dumps(result))
    console.print(Panel(f"contact:\n  stiffness: {stiffness}\n  damping: {d_c:.6f}", title="Scenario snippet"))


if __name__ == "__main__":
    cli()
