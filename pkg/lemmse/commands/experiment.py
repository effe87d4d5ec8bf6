import logging

from .. import runner
from ..errors import ConfigError
from . import command

logger = logging.getLogger(__name__)


@command
def estimate(options):
    """
    Reconstruct the queries with one estimator at one noise level
    (or at every level of --sigma-list).
    """
    return runner.run(options, "estimate")


@command
def sweep(options):
    """
    Run the estimator over --sigma-list, one subdirectory per noise level.
    """
    if not options.sigma_list:
        raise ConfigError("sweep needs --sigma-list")
    return runner.run(options, "sweep")


@command
def diagnose(options, mass_fraction: float = 0.99):
    """
    Estimate and export every per-pixel diagnostic: densities, mass
    concentration, patchwork sources, the pre-inverse tradeoff and the nearest
    training image.

    :param mass_fraction: weight fraction for the mass-concentration counts
    """
    if not options.diagnostics:
        options.diagnostics = list(runner.DIAGNOSTICS)
    if options.top_k == 0:
        raise ConfigError("diagnose needs --top-k > 0 for the mass and source maps")
    options.mass_fraction = mass_fraction
    return runner.run(options, "diagnose")
