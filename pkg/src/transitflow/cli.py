"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 validation/configuration error, 2 runtime
error, 3 non-convergence (community consensus or EM).
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .errors import NonConvergenceError, TransitFlowError, ValidationError
from .pipeline import STAGES, PipelineConfig, run_all, run_command

EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_NONCONVERGENCE = 3


def _load_config(config_path: str, out: str | None, seed: int | None) -> PipelineConfig:
    cfg = PipelineConfig.from_file(config_path)
    if out is not None:
        cfg.out_dir = Path(out).resolve()
        cfg.raw["out_dir"] = str(cfg.out_dir)
    if seed is not None:
        cfg.seed = seed
        cfg.raw["seed"] = seed
    return cfg


def _execute(command: str, config: str, out: str | None, seed: int | None, workers: int) -> None:
    try:
        cfg = _load_config(config, out, seed)
        if command == "all":
            outputs = run_all(cfg, workers=workers)
        else:
            outputs = run_command(command, cfg, workers=workers)
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except NonConvergenceError as exc:
        click.echo(f"non-convergence: {exc}", err=True)
        sys.exit(EXIT_NONCONVERGENCE)
    except TransitFlowError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    for path in outputs:
        click.echo(path)


@click.group()
def main() -> None:
    """Transit mobility-flow analysis pipeline."""


def _stage_command(name: str, help_text: str):
    @main.command(name=name, help=help_text)
    @click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False))
    @click.option("--out", default=None, help="Override the output directory.")
    @click.option("--seed", default=None, type=int, help="Override the root seed.")
    @click.option(
        "--workers",
        default=1,
        type=int,
        show_default=True,
        help="Thread pool size for per-cell community detection.",
    )
    def command(config: str, out: str | None, seed: int | None, workers: int) -> None:
        _execute(name, config, out, seed, workers)

    return command


_HELP = {
    "synth": "Generate the synthetic fixture inputs with ground truth.",
    "ingest": "Pair taps / validate trips and filter to working days.",
    "flows": "Build per-(date, period) flow matrices.",
    "communities": "Detect period community snapshots (consensus Louvain).",
    "variability": "Compute the day-by-day snapshot variability matrix.",
    "cluster": "Cluster days by variability rows (GMM with BIC).",
    "activity": "Mine worker trip chains into NxEy activity patterns.",
    "spatial": "Fit and evaluate the attraction model against gravity.",
    "temporal": "Fit the volume recurrence and feature GAMs.",
    "simulate": "Simulate test-set series from predicted parameters.",
    "report": "Collate the headline tables into the report directory.",
    "all": "Run every stage in order.",
}

for _name in list(STAGES) + ["all"]:
    _stage_command(_name, _HELP[_name])


if __name__ == "__main__":
    main()
