# app/cli.py
# Command-line entry point: riskgov simulate | loss-dist | riccati | meanfield | govern

import functools
import sys

import click

from app import __version__, create_runner
from app.config import parse_config
from app.exceptions import ConfigurationError
from app.services.run_service import run_subcommand


def run_options(func):
    """Flags shared by every subcommand."""
    @click.option('--config', 'config_path', type=click.Path(dir_okay=False),
                  help='key = value run configuration file.')
    @click.option('--seed', type=int, help='Master seed.')
    @click.option('--n-paths', type=int, help='Monte Carlo paths per estimate.')
    @click.option('--dt', type=float, help='Simulation time step (years).')
    @click.option('--out', 'output_dir', envvar='RISKGOV_OUTPUT_DIR', type=click.Path(file_okay=False),
                  help='Output directory (default: $RISKGOV_OUTPUT_DIR).')
    @click.option('--quick', is_flag=True, default=False,
                  help='CI scale: 2000 paths and dt = 1e-3, recorded in the manifest.')
    @click.option('--threads', type=int, help='Worker processes (default: $RISKGOV_THREADS or all CPUs).')
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        return func(*args, **kwargs)
    return wrapper


def _execute(subcommand, config_path, seed, n_paths, dt, output_dir, quick, threads,
             governed=True):
    overrides = {
        'seed': seed,
        'n_paths': n_paths,
        'dt': dt,
        'quick': True if quick else None,
    }
    runner = create_runner(output_dir=output_dir, threads=threads,
                           context={'subcommand': subcommand})
    try:
        cfg = parse_config(config_path, overrides, subcommand)
    except ConfigurationError as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(e.exit_code)

    code = run_subcommand(runner, subcommand, cfg, governed)
    if code == 0:
        click.echo(f"{subcommand}: results written to {runner.output_dir}")
    else:
        click.echo(f"Error: {subcommand} failed with exit code {code}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(version=__version__, prog_name='riskgov')
def cli():
    """Systemic-risk simulation, control and governance toolkit."""


@cli.command()
@run_options
def simulate(**options):
    """Simulate bank paths: paths.csv and trajectories.csv."""
    _execute('simulate', **options)


@cli.command('loss-dist')
@run_options
def loss_dist(**options):
    """Loss distribution and systemic-risk estimates."""
    _execute('loss-dist', **options)


@cli.command()
@run_options
def riccati(**options):
    """Riccati coefficients and the derived control law."""
    _execute('riccati', **options)


@cli.command()
@run_options
def meanfield(**options):
    """Mean-field paths beside the finite system's mean."""
    _execute('meanfield', **options)


@cli.command()
@run_options
@click.option('--ungoverned', is_flag=True, default=False,
              help='Hold the baseline parameters instead of running the governance search.')
def govern(ungoverned, **options):
    """Quarterly governance experiment."""
    _execute('govern', governed=not ungoverned, **options)


def main():
    cli()
