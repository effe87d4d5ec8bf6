import logging
import os
from typing import List

import numpy as np

from .. import imageio, oracle as dense, runner
from ..errors import ConfigError, UnsupportedCombination
from ..operators import synthesize_measurement
from . import command

logger = logging.getLogger(__name__)

_ORACLES = {
    "mmse": lambda problem, y, side: dense.oracle_mmse(problem, y),
    "emmse": lambda problem, y, side: dense.oracle_e_mmse(problem, y),
    "lemmse": dense.oracle_le_mmse,
}


@command
def oracle(options, epsilon_list: List[float] = None):
    """
    Compare the optimized estimator with the dense reference implementation
    on tiny grayscale problems, and for lemmse tabulate the gap between the
    epsilon-lifted and the rank-stratified estimator.

    :param epsilon_list: lifts for the singular-limit table (lemmse only)
    """
    if options.estimator not in _ORACLES:
        raise UnsupportedCombination(
            "no dense reference for {}, expected one of {}".format(
                options.estimator, sorted(_ORACLES)
            )
        )
    if epsilon_list is not None and not epsilon_list:
        raise ConfigError("--epsilon-list needs at least one value")
    dataset, queries, forward, pre_inverse = runner.prepare(options)
    sigma = float(options.sigma)
    problem = dense.DenseProblem.from_operators(forward, pre_inverse, dataset, sigma)
    estimate = runner.make_estimator(options, forward, pre_inverse, dataset)

    rows = []
    measurements = []
    for index, (name, clean, y) in enumerate(queries):
        if y is None:
            y = synthesize_measurement(
                clean, forward, sigma, np.random.SeedSequence([int(options.seed), index])
            )
        measurements.append(y)
        fast = estimate(y, sigma).reconstruction.values.reshape(-1)
        reference = _ORACLES[options.estimator](problem, y, options.patch_side)
        gap = float(np.max(np.abs(fast - reference)))
        logger.info("%s: max-abs gap %.3g", name, gap)
        rows.append({"query": name, "max_abs_gap": gap})

    result = {
        "estimator": options.estimator,
        "sigma": sigma,
        "queries": rows,
        "max_abs_gap": max(r["max_abs_gap"] for r in rows),
    }
    if epsilon_list and options.estimator == "lemmse":
        table = dense.oracle_epsilon_limit(
            problem, measurements[0], options.patch_side, epsilon_list
        )
        result["epsilon_limit"] = {
            k: table[k] for k in ("epsilons", "gaps", "lifted_rank", "lifted_log_det", "monotone")
        }
    os.makedirs(options.output, exist_ok=True)
    imageio.write_json(os.path.join(options.output, "oracle.json"), result)
    return result


@command(experiment=False)
def compare(first: str = None, second: str = None, output: str = "lemmse-compare", peak: float = 1.0):
    """
    PSNR between two image sets paired in order (PNG directories, tensor
    files or single images), with median and interquartile range.

    :param first: reconstructions, e.g. sigma-0.2/reconstructions.npy
    :param second: references, e.g. sigma-0.2/clean.npy
    :param output: output directory for compare.csv and compare.json
    :param peak: peak signal value
    """
    if first is None or second is None:
        raise ConfigError("compare needs --first and --second")
    return runner.compare(first, second, output, peak)
