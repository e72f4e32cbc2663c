"""Build an argparse parser from a dataclass so experiment settings live in
one place and every field can be overridden on the command line."""

import argparse
import dataclasses
import json


def parse(cls, description: str, argv=None):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", help="JSON file with field overrides")
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if isinstance(default, (list, tuple)):
            kind = type(default[0]) if default else str
            p.add_argument(f"--{f.name.replace('_', '-')}", nargs="+", type=kind, dest=f.name)
        else:
            p.add_argument(f"--{f.name.replace('_', '-')}", type=type(default) if default is not None else str,
                           dest=f.name)
    args = p.parse_args(argv)
    values = json.load(open(args.config)) if args.config else {}
    values |= {k: v for k, v in vars(args).items() if k != "config" and v is not None}
    return cls(**values)
