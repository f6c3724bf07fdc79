import click

from .config import load_configurations, configure_logging
from .views import COMMANDS


def create_app() -> click.Group:
    @click.group("parapot")
    @click.option("--seed", type=int, default=None, help="seed of every random family (PARAPOT_SEED)")
    @click.option("--tol", type=float, default=None, help="relative tolerance of iterations (PARAPOT_TOL)")
    @click.option("--out-dir", type=click.Path(file_okay=False), default=None, help="report directory (PARAPOT_OUT_DIR)")
    @click.option("--threads", type=int, default=None, help="campaign worker threads (PARAPOT_THREADS)")
    @click.pass_context
    def app(ctx, seed, tol, out_dir, threads):
        """Parabolic potentials, capacities, heat bounds and fixed-point checks."""
        # Load configurations and logging settings
        settings = load_configurations({"seed": seed, "tol": tol, "out_dir": out_dir, "threads": threads})
        configure_logging(settings.log_level)
        ctx.obj = settings

    for command in COMMANDS:
        app.add_command(command)

    return app
