import argparse
import importlib
import inspect
import json
import logging
import os
import sys
from pkgutil import iter_modules
from typing import Literal, get_args, get_origin

from .. import runner
from ..errors import LemmseError
from ..util import jsonify

logger = logging.getLogger(__name__)

try:
    import docutils.frontend
    import docutils.parsers.rst
    import docutils.utils
    from docutils import nodes

    class ParamHarvester(nodes.SparseNodeVisitor):
        """Collect `:param name:` field bodies from a parsed docstring"""

        tags = {"param", "parameter", "arg", "argument", "key", "keyword"}

        def visit_document(self, node):
            self.params = {}
            self.field_name = None
            self.field_list = None

        def visit_field_list(self, node):
            self.field_list = node

        def depart_field(self, node):
            if self.field_list is not None and self.field_name is not None:
                self.field_list.remove(node)
            self.field_name = None

        def visit_field_name(self, node):
            fields = node.children[0].split()
            self.field_name = fields[1] if fields[0] in self.tags and len(fields) > 1 else None

        def depart_field_body(self, node):
            body = node.astext()
            if self.field_name is not None and body:
                self.params[str(self.field_name)] = body

    def getdoc(obj):
        docstring = inspect.getdoc(obj)
        if docstring is None:
            return ("", {})
        if hasattr(docutils.frontend, "get_default_settings"):
            settings = docutils.frontend.get_default_settings(docutils.parsers.rst.Parser)
        else:
            settings = docutils.frontend.OptionParser(
                components=(docutils.parsers.rst.Parser,)
            ).get_default_values()
        doc = docutils.utils.new_document("", settings)
        harvester = ParamHarvester(doc)
        docutils.parsers.rst.Parser().parse(docstring, doc)
        doc.walkabout(harvester)
        return (doc.astext().strip(), harvester.params)

except ImportError:

    def getdoc(obj):
        docstring = inspect.getdoc(obj)
        return (docstring or "", {})


def load_commands():
    """Import every module of lemmse.commands so their commands register"""
    from .. import commands

    for info in iter_modules(commands.__path__):
        if not info.ispkg:
            importlib.import_module(commands.__name__ + "." + info.name)
    return commands._commands


def _help(param, param_help):
    text = param_help.get(param.name, "")
    if param.default is not None:
        text = "{} (default: {})".format(text, param.default).strip()
    return text


def _add_options_for_args(parser, params, param_help):
    """
    Add one flag per parameter. Flags default to SUPPRESS so that only the
    ones actually given override the config file.
    """
    for param in params:
        argname = "--" + param.name.replace("_", "-")
        kwargs = dict(default=argparse.SUPPRESS, dest=param.name, help=_help(param, param_help))
        annotation = param.annotation
        if annotation is param.empty and param.default is not None:
            annotation = type(param.default)
        if get_origin(annotation) is Literal:
            parser.add_argument(argname, choices=get_args(annotation), **kwargs)
        elif get_origin(annotation) is list:
            parser.add_argument(argname, type=get_args(annotation)[0], nargs="+", **kwargs)
        elif annotation is bool:
            parser.add_argument(argname, action="store_true", **kwargs)
            if param.default:
                parser.add_argument(
                    "--no-" + param.name.replace("_", "-"),
                    action="store_false",
                    default=argparse.SUPPRESS,
                    dest=param.name,
                )
        elif annotation is param.empty:
            parser.add_argument(argname, **kwargs)
        else:
            parser.add_argument(argname, type=annotation, **kwargs)


def make_parser(commands):
    parser = argparse.ArgumentParser(
        prog="lemmse", description="Closed-form constrained MMSE estimators"
    )
    subparsers = parser.add_subparsers(dest="command")
    subparsers.required = True
    shared = list(inspect.signature(runner.experiment_options).parameters.values())
    _, shared_help = getdoc(runner.experiment_options)

    for name, (func, experiment) in sorted(commands.items()):
        docstring, param_help = getdoc(func)
        p = subparsers.add_parser(name, help=docstring.split("\n\n")[0], description=docstring)
        p.set_defaults(command=(name, func, experiment))
        p.add_argument("--pdb", action="store_true", help="Drop into debugger on exception")
        params = list(inspect.signature(func).parameters.values())
        if experiment:
            p.add_argument("--config", help="YAML file with experiment options")
            _add_options_for_args(p, shared, shared_help)
            params = params[1:]
        _add_options_for_args(p, params, param_help)
    return parser


def _split(args, func, experiment):
    """Separate shared experiment options from the command's own arguments"""
    own = list(inspect.signature(func).parameters)
    if experiment:
        own = own[1:]
    extra = {k: args.pop(k) for k in list(args) if k in own}
    return args, extra


def _report_error(error, command, output):
    """Write error.json into the output directory if it exists, else to stderr"""
    payload = jsonify(dict(error.to_dict(), command=command))
    if output and os.path.isdir(output):
        with open(os.path.join(output, "error.json"), "w") as f:
            json.dump(payload, f, indent=2)
    else:
        json.dump(payload, sys.stderr)
        sys.stderr.write("\n")


def _configure_logging():
    level = os.environ.get("LEMMSE_LOG", "WARNING").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        level = "WARNING"
    logging.basicConfig(
        level=getattr(logging, level), format="%(asctime)s %(name)s %(levelname)s: %(message)s"
    )


def main(argv=None):
    """
    Entry point of the ``lemmse`` command.

    :returns: process exit status
    """
    import pdb
    import traceback

    _configure_logging()
    commands = load_commands()
    parser = make_parser(commands)
    args = parser.parse_args(argv).__dict__
    name, func, experiment = args.pop("command")
    do_pdb = args.pop("pdb")
    output = args.get("output")
    try:
        if experiment:
            config = args.pop("config", None)
            flags, extra = _split(args, func, experiment)
            options = runner.make_options(config, **flags)
            output = options.output
            func(options, **extra)
        else:
            func(**args)
    except LemmseError as e:
        if do_pdb:
            traceback.print_exc()
            pdb.post_mortem(sys.exc_info()[2])
        logger.error("%s: %s", e.code, e)
        _report_error(e, name, output)
        return e.exit_status
    except Exception:
        if do_pdb:
            traceback.print_exc()
            pdb.post_mortem(sys.exc_info()[2])
        raise
    return 0


def run():
    sys.exit(main())
