"""
Experiment plumbing behind the command line: option handling, dataset and
query loading, measurement synthesis and artifact export.
"""

import argparse
import inspect
import logging
import os
import platform
import time
from typing import List, Literal

import numpy as np
import pandas as pd
import scipy
import yaml

from . import __version__, diagnostics, imageio
from .errors import (
    ConfigError,
    DenseLimitExceeded,
    InsufficientRetention,
    ShapeMismatch,
    UnreadableFile,
    UnsupportedCombination,
)
from .estimators import ESTIMATORS, NoiseModel, Schedule
from .grid import Dataset, PatchGeometry
from .operators import (
    DenseOperator,
    build_q_matrices,
    make_center_mask,
    make_denoising,
    make_gaussian_blur,
    make_pre_inverse,
    synthesize_measurement,
)
from .util import config_hash, defer, tolerances

logger = logging.getLogger(__name__)

PRE_INVERSES = {"identity": "identity", "pinv": "pseudo_inverse", "tikhonov": "tikhonov"}
LE_FAMILY = ("lemmse", "lemmse-smooth")
DIAGNOSTICS = ("density", "mass", "sources", "tradeoff", "nearest")


def experiment_options(
    task: Literal["denoise", "inpaint", "deconv"] = "denoise",
    mask_side: int = 3,
    blur_std: float = 1.0,
    pre_inverse: Literal["identity", "pinv", "tikhonov"] = "identity",
    tikhonov_lambda: float = None,
    estimator: Literal["mmse", "aug-mmse", "emmse", "lemmse", "lemmse-smooth"] = "lemmse",
    patch_side: int = None,
    sigma: float = 0.1,
    sigma_list: List[float] = None,
    dataset: str = None,
    input: str = None,
    output: str = "lemmse-out",
    seed: int = 0,
    epsilon: float = 0.0,
    mc_samples: int = 8,
    top_k: int = tolerances.top_k,
    deterministic: bool = False,
    threads: int = 1,
    memory_budget_mib: float = tolerances.memory_budget_mib,
    query_source: Literal["synthetic", "file", "held-out"] = "synthetic",
    holdout: int = 1,
    queries: int = 50,
    operator_form: Literal["structured", "dense"] = "structured",
    diagnostics: List[str] = None,
):
    """
    Options shared by every experiment command.

    :param task: forward operator: identity, centered square mask, or Gaussian blur
    :param mask_side: side of the masked square (inpaint)
    :param blur_std: blur standard deviation in pixels (deconv)
    :param pre_inverse: B applied to measurements before estimation
    :param tikhonov_lambda: regularization strength (tikhonov)
    :param estimator: which closed-form estimator to evaluate
    :param patch_side: odd patch side (LE estimators only)
    :param sigma: noise standard deviation
    :param sigma_list: noise levels to sweep, one subdirectory each
    :param dataset: directory of PNG files or a (K, C, H, W) tensor file
    :param input: query images: clean images (synthetic) or measurements (file)
    :param output: output directory
    :param seed: root seed for measurement noise and Monte-Carlo draws
    :param epsilon: smoothing amplitude (lemmse-smooth)
    :param mc_samples: Monte-Carlo draws (lemmse-smooth)
    :param top_k: largest weights retained per pixel
    :param deterministic: fix the reduction schedule for bit-identical outputs
    :param threads: worker threads for dataset chunks
    :param memory_budget_mib: working memory per dataset chunk
    :param query_source: where queries come from
    :param holdout: number of trailing dataset images used as queries (held-out)
    :param queries: maximum number of queries per noise level
    :param operator_form: keep operators structured, or materialize them as dense matrices
    :param diagnostics: extra per-pixel outputs: density, mass, sources, tradeoff, nearest
    """
    return make_options(**dict(locals()))


def _defaults():
    return {
        name: param.default
        for name, param in inspect.signature(experiment_options).parameters.items()
    }


def load_config(path):
    """Read a YAML experiment configuration; keys may use dashes or underscores"""
    try:
        with open(path) as f:
            content = yaml.safe_load(f)
    except OSError as e:
        raise UnreadableFile("{}: {}".format(path, e)) from e
    except yaml.YAMLError as e:
        raise ConfigError("{} is not valid YAML: {}".format(path, e)) from e
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise ConfigError("{} must hold a mapping of options".format(path))
    return {str(k).replace("-", "_"): v for k, v in content.items()}


def make_options(config=None, **kwargs):
    """
    Build the experiment options: defaults, then the YAML config file, then
    keyword arguments.
    """
    defaults = _defaults()
    layers = [load_config(config)] if config else []
    layers.append(kwargs)
    for layer in layers:
        unknown = sorted(set(layer) - set(defaults))
        if unknown:
            raise ConfigError("unknown options: {}".format(", ".join(unknown)))
        defaults.update(layer)
    defaults["config"] = config
    return argparse.Namespace(**defaults)


def validate_options(options):
    """Checks that need no data; raises ConfigError subclasses"""
    if options.task not in ("denoise", "inpaint", "deconv"):
        raise ConfigError("unknown task {!r}".format(options.task))
    if options.pre_inverse not in PRE_INVERSES:
        raise ConfigError("unknown pre-inverse {!r}".format(options.pre_inverse))
    if options.estimator not in ESTIMATORS:
        raise ConfigError("unknown estimator {!r}".format(options.estimator))
    if options.pre_inverse == "tikhonov" and not (options.tikhonov_lambda or 0) > 0:
        raise ConfigError("tikhonov needs --tikhonov-lambda > 0")
    if options.estimator in LE_FAMILY:
        if options.patch_side is None:
            raise ConfigError("{} needs --patch-side".format(options.estimator))
        PatchGeometry(options.patch_side)
    elif options.patch_side is not None:
        raise ConfigError("--patch-side only applies to {}".format(", ".join(LE_FAMILY)))
    if options.task == "deconv" and not options.blur_std > 0:
        raise ConfigError("deconv needs --blur-std > 0")
    if options.task == "inpaint" and options.mask_side < 0:
        raise ConfigError("--mask-side must be >= 0")
    sigmas = options.sigma_list if options.sigma_list else [options.sigma]
    for sigma in sigmas:
        NoiseModel(float(sigma)).check()
    if options.estimator == "lemmse-smooth":
        if not options.epsilon >= 0:
            raise ConfigError("--epsilon must be >= 0")
        if options.mc_samples < 1:
            raise ConfigError("--mc-samples must be >= 1")
    if options.top_k is not None and options.top_k < 0:
        raise ConfigError("--top-k must be >= 0")
    if options.threads < 1 or not options.memory_budget_mib > 0:
        raise ConfigError("need --threads >= 1 and a positive --memory-budget-mib")
    if options.queries < 1:
        raise ConfigError("--queries must be >= 1")
    if options.dataset is None:
        raise ConfigError("--dataset is required")
    if options.query_source == "held-out":
        if options.holdout < 1:
            raise ConfigError("--holdout must be >= 1")
    elif options.input is None:
        raise ConfigError("--input is required for query source {}".format(options.query_source))
    unknown = sorted(set(options.diagnostics or []) - set(DIAGNOSTICS))
    if unknown:
        raise ConfigError(
            "unknown diagnostics {}, expected some of {}".format(unknown, DIAGNOSTICS)
        )
    return options


def validate_problem(options, shape):
    """Checks that depend on the image shape, run before any compute"""
    channels, height, width = shape
    npix = height * width
    if options.task == "inpaint" and options.mask_side > min(height, width):
        # raised by the operator factory as SideTooLarge
        make_center_mask(height, width, options.mask_side)
    if options.estimator in LE_FAMILY and options.patch_side > min(height, width):
        raise ConfigError(
            "patch side {} exceeds a {}x{} image".format(options.patch_side, height, width)
        )
    if options.operator_form == "dense" and npix > tolerances.dense_limit:
        if options.pre_inverse != "identity":
            raise UnsupportedCombination(
                "{} with a dense {} operator needs N <= {}, got {}".format(
                    options.pre_inverse, options.task, tolerances.dense_limit, npix
                )
            )
        raise DenseLimitExceeded(
            "dense operators need N <= {}, got {}".format(tolerances.dense_limit, npix)
        )


def make_operators(options, shape):
    """:returns: (forward A, PreInverseSpec B) for images of the given shape"""
    _, height, width = shape
    if options.task == "denoise":
        forward = make_denoising(height, width)
    elif options.task == "inpaint":
        forward = make_center_mask(height, width, options.mask_side)
    else:
        forward = make_gaussian_blur(height, width, options.blur_std)
    if options.operator_form == "dense":
        forward = DenseOperator(forward.dense(), height, width)
    pre_inverse = make_pre_inverse(
        PRE_INVERSES[options.pre_inverse], forward, lam=options.tikhonov_lambda
    )
    return forward, pre_inverse


def make_schedule(options):
    return Schedule(
        threads=options.threads,
        deterministic=options.deterministic,
        memory_budget_mib=options.memory_budget_mib,
    )


def make_estimator(options, forward, pre_inverse, dataset, schedule=None):
    """
    :returns: a callable (y, sigma) -> EstimateReport
    """
    schedule = schedule or make_schedule(options)
    top_k = options.top_k
    kind = options.estimator
    if kind in LE_FAMILY:
        geom = PatchGeometry(options.patch_side)
        # built on the first query, shared by every later one
        q = defer(build_q_matrices, forward, pre_inverse, geom, dataset.shape[0])

    if kind == "lemmse":

        def estimate(y, sigma):
            return ESTIMATORS[kind](
                y, forward, pre_inverse, dataset, geom, sigma, top_k=top_k, schedule=schedule, q=q
            )

    elif kind == "lemmse-smooth":

        def estimate(y, sigma):
            return ESTIMATORS[kind](
                y,
                forward,
                pre_inverse,
                dataset,
                geom,
                sigma,
                options.epsilon,
                options.mc_samples,
                options.seed,
                schedule=schedule,
                q=q,
            )

    else:

        def estimate(y, sigma):
            return ESTIMATORS[kind](
                y, forward, pre_inverse, dataset, sigma, top_k=top_k, schedule=schedule
            )

    return estimate


def _is_tensor(path):
    return str(path).lower().endswith(".npy")


def _read_queries(path):
    """(names, images) from a directory, (K, C, H, W) tensor file or single image"""
    if os.path.isdir(path) or _is_tensor(path) and imageio.load_tensor(path).ndim == 4:
        images = imageio.ingest_dataset(path)
        names = images.names or ["query-{:03d}".format(i) for i in range(len(images))]
        return names, list(images.values)
    stem = os.path.splitext(os.path.basename(path))[0]
    return [stem], [imageio.read_image(path).values]


def load_queries(options, dataset):
    """
    :returns: (dataset, queries) where queries is a list of
        (name, clean image or None, measurement or None); measurements are
        synthesized per noise level when None
    """
    if options.query_source == "held-out":
        if options.holdout >= len(dataset):
            raise ConfigError(
                "cannot hold out {} of {} images".format(options.holdout, len(dataset))
            )
        keep = np.arange(len(dataset) - options.holdout)
        held = np.arange(len(dataset) - options.holdout, len(dataset))
        names = [
            dataset.names[i] if dataset.names else "heldout-{:03d}".format(i) for i in held
        ]
        queries = [(name, dataset.values[i], None) for name, i in zip(names, held)]
        dataset = dataset.subset(keep)
    else:
        names, images = _read_queries(options.input)
        if options.query_source == "synthetic":
            queries = [(name, img, None) for name, img in zip(names, images)]
        else:
            queries = [(name, None, img) for name, img in zip(names, images)]
    for name, clean, y in queries:
        image = clean if clean is not None else y
        if image.shape != tuple(dataset.shape):
            raise ShapeMismatch(
                "query {} has shape {}, dataset images {}".format(name, image.shape, dataset.shape)
            )
    return dataset, queries[: options.queries]


def _sigma_dir(output, sigma):
    return os.path.join(output, "sigma-{:g}".format(sigma))


def _pixel_table(report, shape):
    _, height, width = shape
    n = np.arange(height * width)
    row, col = np.divmod(n, width)
    return pd.DataFrame({"pixel": n, "row": row, "col": col})


def _write_diagnostics(options, directory, y, clean, report, context):
    """Per-query diagnostics requested with --diagnostics"""
    forward, pre_inverse, dataset, sigma = context
    wanted = set(options.diagnostics or [])
    summary = {}
    table = _pixel_table(report, dataset.shape)
    if report.stratum_rank is not None:
        table["stratum_rank"] = report.stratum_rank
    if "density" in wanted:
        if sigma > 0:
            whole = diagnostics.neg_log_measurement_density(y, forward, dataset, sigma)
            summary["neg_log_measurement_density"] = whole.neg_log_density
            if options.estimator in LE_FAMILY:
                patches = diagnostics.patch_density_map(
                    y,
                    forward,
                    pre_inverse,
                    dataset,
                    options.patch_side,
                    sigma,
                    report if options.estimator == "lemmse" else None,
                )
                table["neg_log_density"] = patches.neg_log_density
                table["neg_log_density_unnormalized"] = patches.unnormalized
        else:
            logger.warning("densities are undefined at sigma = 0, skipped")
    if "mass" in wanted:
        try:
            table["mass_concentration"] = diagnostics.mass_concentration(
                report, getattr(options, "mass_fraction", 0.99)
            )
        except InsufficientRetention as e:
            logger.warning("mass concentration skipped: %s", e)
    if "sources" in wanted and report.has_top_k:
        sources = diagnostics.patchwork_source_map(report)
        table["source_id"] = sources
        imageio.write_png(
            os.path.join(directory, "sources.png"), imageio.id_palette(sources, dataset.shape[1:])
        )
    if "tradeoff" in wanted and clean is not None and options.estimator in LE_FAMILY:
        tradeoff = diagnostics.pre_inverse_tradeoff(
            forward, pre_inverse, options.patch_side, clean, dataset, sigma
        )
        imageio.write_csv(os.path.join(directory, "tradeoff.csv"), tradeoff.table)
        summary["tradeoff_mean_noise"] = tradeoff.mean_noise
    if "nearest" in wanted:
        best, dist = diagnostics.nearest_training_image(y, forward, pre_inverse, dataset)
        summary["nearest_training_image"] = {
            "id": best,
            "name": dataset.names[best] if dataset.names else None,
            "mahalanobis_sq": dist,
        }
        if dataset.shape[0] in (1, 3):
            imageio.write_png(os.path.join(directory, "nearest.png"), dataset.values[best])
    if len(table.columns) > 3:
        imageio.write_csv(os.path.join(directory, "pixels.csv"), table)
    return summary


def run_sigma(options, sigma, directory, dataset, queries, forward, pre_inverse, estimate):
    """Estimate every query at one noise level and export the artifacts"""
    os.makedirs(directory, exist_ok=True)
    summaries, rows, reconstructions, cleans = [], [], [], []
    for index, (name, clean, y) in enumerate(queries):
        query_dir = os.path.join(directory, name.rsplit(".", 1)[0])
        os.makedirs(query_dir, exist_ok=True)
        seed = None
        if y is None:
            seed = [int(options.seed), index]
            y = synthesize_measurement(clean, forward, sigma, np.random.SeedSequence(seed))
        start = time.perf_counter()
        report = estimate(y, sigma)
        elapsed = time.perf_counter() - start
        recon = report.reconstruction.values
        logger.info("%s at sigma=%g: %.3fs", name, sigma, elapsed)

        imageio.save_tensor(os.path.join(query_dir, "reconstruction.npy"), recon)
        imageio.save_tensor(os.path.join(query_dir, "measurement.npy"), y)
        if recon.shape[0] in (1, 3):
            imageio.write_png(os.path.join(query_dir, "reconstruction.png"), recon)
            imageio.write_png(os.path.join(query_dir, "measurement.png"), y)
        if report.stderr is not None:
            imageio.save_tensor(os.path.join(query_dir, "stderr.npy"), report.stderr)

        summary = report.summary()
        summary.update({"query": name, "sigma": sigma, "seed": seed, "seconds": elapsed})
        row = {"query": name, "sigma": sigma, "seconds": elapsed}
        if clean is not None:
            row["psnr_reconstruction"] = diagnostics.psnr(recon, clean)
            row["psnr_measurement"] = diagnostics.psnr(y, clean)
            summary["psnr"] = row["psnr_reconstruction"]
            cleans.append(clean)
        summary.update(
            _write_diagnostics(
                options, query_dir, y, clean, report, (forward, pre_inverse, dataset, sigma)
            )
        )
        imageio.write_json(os.path.join(query_dir, "report.json"), summary)
        summaries.append(summary)
        rows.append(row)
        reconstructions.append(recon)

    imageio.save_tensor(os.path.join(directory, "reconstructions.npy"), np.stack(reconstructions))
    if len(cleans) == len(reconstructions):
        imageio.save_tensor(os.path.join(directory, "clean.npy"), np.stack(cleans))
    metrics = pd.DataFrame(rows)
    imageio.write_csv(os.path.join(directory, "metrics.csv"), metrics)
    imageio.write_json(os.path.join(directory, "report.json"), {"sigma": sigma, "queries": summaries})
    return metrics


def manifest(options, dataset, queries, command):
    """Everything needed to reproduce a run"""
    config = {k: v for k, v in vars(options).items()}
    return {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "versions": {
            "lemmse": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "python": platform.python_version(),
        },
        "tolerances": tolerances.as_dict(),
        "files": {
            "dataset": dataset.names,
            "queries": [name for name, _, _ in queries],
        },
        "dataset_shape": [len(dataset)] + list(dataset.shape),
    }


def prepare(options):
    """Validate, load data and build operators; nothing is computed yet"""
    validate_options(options)
    dataset = imageio.ingest_dataset(options.dataset)
    dataset, queries = load_queries(options, dataset)
    validate_problem(options, dataset.shape)
    forward, pre_inverse = make_operators(options, dataset.shape)
    return dataset, queries, forward, pre_inverse


def run(options, command="estimate"):
    """
    Run an experiment and write its artifacts below ``options.output``.

    :returns: pandas DataFrame of per-query metrics over all noise levels
    """
    dataset, queries, forward, pre_inverse = prepare(options)
    os.makedirs(options.output, exist_ok=True)
    imageio.write_json(
        os.path.join(options.output, "manifest.json"),
        manifest(options, dataset, queries, command),
    )
    estimate = make_estimator(options, forward, pre_inverse, dataset)
    if options.sigma_list:
        frames = [
            run_sigma(
                options,
                float(sigma),
                _sigma_dir(options.output, float(sigma)),
                dataset,
                queries,
                forward,
                pre_inverse,
                estimate,
            )
            for sigma in options.sigma_list
        ]
        metrics = pd.concat(frames, ignore_index=True)
        imageio.write_csv(os.path.join(options.output, "metrics.csv"), metrics)
        return metrics
    return run_sigma(
        options, float(options.sigma), options.output, dataset, queries, forward, pre_inverse, estimate
    )


def _summarize(values):
    values = np.asarray(values, dtype=np.float64)
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return {"count": int(values.size), "median": None, "q25": None, "q75": None, "iqr": None}
    q25, median, q75 = np.percentile(finite, [25, 50, 75])
    return {
        "count": int(values.size),
        "median": float(median),
        "q25": float(q25),
        "q75": float(q75),
        "iqr": float(q75 - q25),
    }


def _image_set(path):
    names, images = _read_queries(path)
    return Dataset(images, names=names)


def compare(first, second, output, peak=1.0):
    """
    PSNR between two image sets, paired in order.

    :returns: (per-pair DataFrame, summary dict)
    """
    a, b = _image_set(first), _image_set(second)
    if len(a) != len(b):
        raise ShapeMismatch("cannot pair {} images with {}".format(len(a), len(b)))
    table = pd.DataFrame(
        {
            "index": np.arange(len(a)),
            "first": a.names or list(range(len(a))),
            "second": b.names or list(range(len(b))),
            "psnr": [diagnostics.psnr(x, y, peak) for x, y in zip(a.values, b.values)],
        }
    )
    summary = _summarize(table["psnr"])
    summary.update({"first": first, "second": second})
    os.makedirs(output, exist_ok=True)
    imageio.write_csv(os.path.join(output, "compare.csv"), table)
    imageio.write_json(os.path.join(output, "compare.json"), summary)
    return table, summary
