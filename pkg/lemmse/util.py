import hashlib
import json
from functools import partial

import numpy as np
from lazy_object_proxy import Proxy


def defer(func, *args, **kwargs):
    """
    Defer function invocation until an attribute is accessed
    """
    return Proxy(partial(func, *args, **kwargs))


class tolerances:
    # eigenvalues below rank * lambda_max are treated as exact zeros
    rank = 1e-10
    # relative off-support residual admitted by the degenerate densities
    support = 1e-6
    # noise levels below this take the sigma -> 0 branch
    sigma_floor = 1e-6
    # Mahalanobis units
    tie = 1e-9
    # largest N = H*W for which dense matrices are materialized
    dense_limit = 4096
    memory_budget_mib = 4096
    top_k = 64

    @classmethod
    def as_dict(cls):
        return {
            k: getattr(cls, k)
            for k in vars(cls)
            if not k.startswith("_") and not callable(getattr(cls, k))
        }


def jsonify(obj):
    """
    Recursively cast to JSON native types
    """
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    elif isinstance(obj, np.generic):
        return jsonify(obj.item())
    elif hasattr(obj, "tolist"):
        return jsonify(obj.tolist())
    elif hasattr(obj, "keys"):
        return {str(jsonify(k)): jsonify(obj[k]) for k in obj.keys()}
    elif hasattr(obj, "__len__") and not isinstance(obj, str):
        return [jsonify(v) for v in obj]
    else:
        return obj


def config_hash(options):
    """sha256 of the canonical JSON form of an options mapping"""
    payload = json.dumps(jsonify(dict(options)), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()
