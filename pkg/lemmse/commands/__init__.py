"""
Subcommand registry. Command functions take the experiment options as their
first argument; any further keyword arguments with defaults become extra
command-line flags.
"""

import inspect

_commands = {}


def command(wrapped=None, *, experiment=True):
    """
    Register a function as a ``lemmse`` subcommand named after it.

    :param experiment: whether the shared experiment options are passed first
    """

    def wrapper(func):
        try:
            spec = inspect.signature(func)
        except TypeError:
            raise TypeError("{} is not a function".format(func))
        params = list(spec.parameters.values())
        if experiment and (not params or params[0].name != "options"):
            raise ValueError("experiment commands must take `options` first")
        extra = params[1:] if experiment else params
        if any(p.default is p.empty for p in extra):
            raise ValueError("all secondary arguments of {} need defaults".format(func.__name__))
        _commands[func.__name__.replace("_", "-")] = (func, experiment)
        return func

    if wrapped is not None:
        return wrapper(wrapped)
    return wrapper
