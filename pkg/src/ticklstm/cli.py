"""``ticklstm`` command line.

Every command runs one pipeline stage inside ``--workdir``. Settings come
from an INI file (``--config``) plus ``--set section.key=value``
overrides; ``ticklstm show-config`` prints the fully materialised result.

Exit codes: 0 success, 1 configuration error, 2 data error,
3 runtime/numeric error.
"""

from __future__ import annotations

import json
import logging
import sys

import click

from ._version import __version__
from .config import dump_config, load_config
from .errors import ConfigError, ConfigInvalid, DataError, TickLstmError
from .pipeline import CACHE_ENV, Workspace


class _Ctx:
    def __init__(self, config, workdir, overrides, cache_dir):
        self.config = config
        self.workdir = workdir
        self.overrides = overrides
        self.cache_dir = cache_dir

    def workspace(self) -> Workspace:
        cfg = load_config(self.config, self.overrides)
        return Workspace(self.workdir, cfg, cache_dir=self.cache_dir)


def _emit(manifest: dict) -> None:
    click.echo(f"{manifest['stage']}: " + ", ".join(sorted(manifest["outputs"])))


def _run(fn):
    """Map library errors onto exit codes."""
    try:
        return fn()
    except ConfigInvalid as exc:
        click.echo("invalid configuration:", err=True)
        for v in exc.violations:
            click.echo(f"  - {v}", err=True)
        sys.exit(1)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(2)
    except (TickLstmError, ArithmeticError) as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(3)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="ticklstm")
@click.option("--config", "-c", type=click.Path(dir_okay=False), default=None,
              help="INI experiment config (sections: data, synth, fetch, bars, label, "
                   "stationarity, split, model, train, grid, backtest).")
@click.option("--workdir", "-w", type=click.Path(file_okay=False), default="run",
              show_default=True, help="Directory holding every stage's artifacts.")
@click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
              help="Override one config value; repeatable.")
@click.option("--cache-dir", envvar=CACHE_ENV, type=click.Path(file_okay=False), default=None,
              help=f"Page and grid-cell cache (env {CACHE_ENV}; default WORKDIR/cache).")
@click.option("-v", "--verbose", count=True, help="More logging (-v info, -vv debug).")
@click.pass_context
def main(ctx, config, workdir, overrides, cache_dir, verbose):
    """Trade-by-trade data to interval bars, LSTM direction classifier and a
    costed backtest."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = _Ctx(config, workdir, list(overrides), cache_dir)


@main.command("show-config")
@click.pass_obj
def show_config(obj):
    """Print the validated config with every default filled in."""
    click.echo(_run(lambda: dump_config(load_config(obj.config, obj.overrides))), nl=False)


@main.command()
@click.pass_obj
def synth(obj):
    """Generate a seeded synthetic trade stream into trades/."""
    _emit(_run(lambda: obj.workspace().synth()))


@main.command()
@click.pass_obj
def fetch(obj):
    """Download trade history for [fetch] start_ms..end_ms into trades/."""
    _emit(_run(lambda: obj.workspace().fetch()))


@main.command()
@click.pass_obj
def resample(obj):
    """Aggregate trades into fixed-interval bars (bars/)."""
    _emit(_run(lambda: obj.workspace().resample()))


@main.command()
@click.pass_obj
def adf(obj):
    """Unit-root test every bar feature on the development range (adf/)."""
    _emit(_run(lambda: obj.workspace().adf()))


@main.command()
@click.pass_obj
def split(obj):
    """Stationarise, split into periods and build training/validation
    windows (split/)."""
    _emit(_run(lambda: obj.workspace().split()))


@main.command("train")
@click.pass_obj
def train_cmd(obj):
    """Train the LSTM on split/ and save model/model.bin."""
    _emit(_run(lambda: obj.workspace().train()))


@main.command()
@click.pass_obj
def grid(obj):
    """Search [grid] T_values x N_values; resumes from the cell cache."""
    def go():
        ws = obj.workspace()
        m = ws.grid()
        click.echo(ws.path("grid/table.txt").read_text(encoding="utf-8"), nl=False)
        return m
    _emit(_run(go))


@main.command()
@click.option("--trades", "trades_path", type=click.Path(dir_okay=False, exists=True),
              default=None, help="Evaluate on this trade CSV instead of the held-out bars.")
@click.option("--tag", default="", help="Suffix for the output directory (evaluate-TAG).")
@click.pass_obj
def evaluate(obj, trades_path, tag):
    """Stride-1 out-of-sample predictions and rolling accuracy."""
    if trades_path and not tag:
        raise click.UsageError("--trades requires --tag")
    _emit(_run(lambda: obj.workspace().evaluate(trades_path, tag)))


@main.command("backtest")
@click.option("--tag", default="", help="Use evaluate-TAG and write backtest-TAG.")
@click.pass_obj
def backtest_cmd(obj, tag):
    """Simulate the costed long/short strategy on the predictions."""
    def go():
        ws = obj.workspace()
        m = ws.backtest(tag)
        with open(ws.path(f"backtest-{tag}/summary.json" if tag else "backtest/summary.json"),
                  encoding="utf-8") as fh:
            s = json.load(fh)
        click.echo(f"trades={s['trade_count']} net={s['net_return']:.6f} "
                   f"gross={s['gross_return']:.6f} cost={s['total_cost']:.6f} "
                   f"hit_rate={s['hit_rate']:.4f}")
        return m
    _emit(_run(go))


@main.command()
@click.option("--tag", default="", help="Report on evaluate-TAG/backtest-TAG.")
@click.pass_obj
def report(obj, tag):
    """Bundle metrics and SVG plots into report/."""
    _emit(_run(lambda: obj.workspace().report(tag)))


if __name__ == "__main__":  # pragma: no cover
    main()
