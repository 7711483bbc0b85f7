"""Command-line experiment runner.

Usage::

    movingframes <subcommand> [--config FILE] [--out DIR] [--seed S] [--resolution N] [--quiet]

Configs are INI files whose sections mirror the keys of :data:`SCHEMA`.
Unknown sections or keys are hard errors.  Exit status is 0 iff every check
in the report passes.
"""
from __future__ import annotations

import argparse
import configparser
import copy
import json
import sys
from importlib import resources
from pathlib import Path

from .grid import Field

SUBCOMMANDS = ("check-identities", "coulomb", "frames", "hedgehog", "wente-constant",
               "harmonic-flow", "noether", "regularity", "decay-probe", "norms")

RANDOM_FAMILIES = {"random"}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _int_list(s):
    out = []
    for part in str(s).replace(",", " ").split():
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def _float_list(s):
    return [float(p) for p in str(s).replace(",", " ").split()]


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s):
    return None if str(s).strip().lower() in ("", "none") else int(s)


def _opt_float(s):
    return None if str(s).strip().lower() in ("", "none") else float(s)


# section -> key -> (parser, validator, description)
SCHEMA = {
    "grid": {
        "m": (int, lambda v: v in (2, 3), "domain dimension, 2 or 3"),
        "N": (int, lambda v: 8 <= v <= 512, "grid points per axis, 8..512"),
        "shape": (str, lambda v: v in ("ball", "cube-periodic"), "ball or cube-periodic"),
        "inner_cutoff": (int, lambda v: 0 <= v <= 64, "inner cutoff in cells, 0..64"),
    },
    "target": {
        "kind": (str, lambda v: v in ("sphere", "so", "grassmann"), "sphere, so or grassmann"),
        "n": (int, lambda v: 1 <= v <= 8, "sphere dimension, 1..8"),
        "k": (int, lambda v: 2 <= v <= 4, "SO(k) size, 2..4"),
        "d0": (int, lambda v: 2 <= v <= 6, "Grassmann ambient dimension, 2..6"),
    },
    "map": {
        "family": (str, lambda v: v in ("constant", "linear-projected", "perturbed", "hedgehog",
                                        "boundary-data", "random"), "map family name"),
        "amplitude": (float, lambda v: 0.0 <= v <= 10.0, "amplitude, 0..10"),
        "freq": (float, lambda v: 0.0 < v <= 16.0, "perturbation frequency, (0, 16]"),
        "seed": (_opt_int, lambda v: v is None or 0 <= v < 2**64, "seed, unsigned 64-bit"),
    },
    "solver": {
        "tol": (float, lambda v: 0.0 < v < 1.0, "solver tolerance, (0, 1)"),
        "max_iters": (int, lambda v: v >= 1, "iteration cap, >= 1"),
        "scheme": (str, lambda v: v in ("implicit", "explicit"), "implicit or explicit"),
        "tau": (_opt_float, lambda v: v is None or v > 0, "initial step size, > 0"),
    },
    "norms": {
        "stride": (_opt_int, lambda v: v is None or v >= 1, "ball-centre stride, >= 1"),
        "verbose": (_bool, lambda v: True, "write per-ball CSV"),
    },
    "experiment": {
        "resolutions": (_int_list, lambda v: len(v) >= 2 and all(8 <= n <= 512 for n in v),
                        "two or more resolutions, 8..512"),
        "amplitudes": (_float_list, lambda v: len(v) >= 1 and all(a >= 0 for a in v),
                       "non-negative amplitudes"),
        "seeds": (_int_list, lambda v: len(v) >= 1 and all(s >= 0 for s in v), "seed list or range a-b"),
        "control": (_bool, lambda v: True, "run the hedgehog negative control"),
        "control_resolutions": (_int_list, lambda v: all(8 <= n <= 512 for n in v), "control grids"),
        "control_iters": (int, lambda v: v >= 1, "control iteration cap"),
        "control_cutoff": (int, lambda v: 1 <= v <= 64, "control inner cutoff in cells, 1..64"),
        "monotonicity": (_bool, lambda v: True, "include the monotonicity check"),
        "eps_grid": (_float_list, lambda v: all(e > 0 for e in v), "BMO levels"),
    },
}

BASE = {
    "grid": {"m": 2, "N": 64, "shape": "ball", "inner_cutoff": 0},
    "target": {"kind": "sphere", "n": 2, "k": 3, "d0": 4},
    "map": {"family": "perturbed", "amplitude": 0.6, "freq": 1.0, "seed": None},
    "solver": {"tol": 1e-8, "max_iters": 5000, "scheme": "implicit", "tau": None},
    "norms": {"stride": None, "verbose": False},
    "experiment": {"resolutions": [32, 64], "amplitudes": [0.008, 0.012, 0.018, 0.025, 0.032],
                   "seeds": list(range(1, 21)), "control": True, "control_resolutions": [48, 64],
                   "control_iters": 10, "control_cutoff": 5, "monotonicity": True,
                   "eps_grid": [0.025, 0.05, 0.1]},
}

# per-subcommand defaults: the acceptance settings
DEFAULTS = {
    "check-identities": {},
    "coulomb": {},
    "frames": {"solver": {"tol": 1e-10}},
    "hedgehog": {"grid": {"m": 3, "N": 96, "inner_cutoff": 5}, "map": {"family": "hedgehog"}},
    "wente-constant": {"grid": {"N": 128}},
    "harmonic-flow": {"map": {"family": "boundary-data", "amplitude": 0.3}},
    "noether": {"map": {"family": "boundary-data", "amplitude": 0.3}},
    "regularity": {"grid": {"m": 3}, "solver": {"tol": 1e-8},
                   "experiment": {"resolutions": [48, 64], "amplitudes": [0.02, 0.11],
                                  "seeds": list(range(1, 11))}},
    "decay-probe": {"map": {"family": "boundary-data", "amplitude": 0.3}},
    "norms": {"map": {"family": "linear-projected", "amplitude": 1.0}},
}


def default_config(subcommand: str) -> dict:
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    cfg = copy.deepcopy(BASE)
    for sec, vals in DEFAULTS[subcommand].items():
        cfg[sec].update(copy.deepcopy(vals))
    return cfg


def _set(cfg, section, key, raw):
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key {section}.{key}")
    parse, ok, desc = SCHEMA[section][key]
    try:
        val = parse(raw) if isinstance(raw, str) else raw
    except ValueError as err:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({desc})") from err
    if not ok(val):
        raise ConfigError(f"{section}.{key}: value {val!r} out of range ({desc})")
    cfg[section][key] = val


def load_config(subcommand: str, text: str | None = None, overrides: dict | None = None) -> dict:
    """Merge defaults, INI text and ``{section: {key: value}}`` overrides, then validate."""
    cfg = default_config(subcommand)
    if text:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        parser.optionxform = str  # keep key case (N)
        try:
            parser.read_string(text)
        except configparser.Error as err:
            raise ConfigError(f"malformed config: {err}") from err
        for section in parser.sections():
            for key, raw in parser.items(section):
                _set(cfg, section, key, raw)
    for section, vals in (overrides or {}).items():
        for key, val in vals.items():
            _set(cfg, section, key, val)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    for section, keys in SCHEMA.items():
        for key, (_, ok, desc) in keys.items():
            if not ok(cfg[section][key]):
                raise ConfigError(f"{section}.{key}: value {cfg[section][key]!r} out of range ({desc})")
    if cfg["map"]["family"] in RANDOM_FAMILIES and cfg["map"]["seed"] is None:
        raise ConfigError("map.seed is required for the random family")
    if cfg["map"]["family"] == "hedgehog" and cfg["grid"]["inner_cutoff"] == 0:
        raise ConfigError("grid.inner_cutoff must be positive for the hedgehog family")


def load_schema() -> dict:
    """The published JSON schema of experiment reports."""
    return json.loads(resources.files(__package__).joinpath("report.schema.json").read_text())


def run(subcommand: str, cfg: dict, out_dir=None) -> dict:
    """Run one pipeline; writes artifacts under ``out_dir`` when given."""
    from . import experiments
    from .io import write_field, write_json

    runner = experiments.RUNNERS[subcommand]
    rep = runner(cfg, out_dir) if subcommand == "coulomb" else runner(cfg)
    report = rep.to_dict()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, obj in rep.artifacts.items():
            if isinstance(obj, Field):
                write_field(out / name, obj)
            else:
                (out / name).write_text(obj, newline="\n")
            written.append(name)
        report["artifacts"] = sorted(written)
        write_json(out / "report.json", report)
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="movingframes", description="moving-frame experiment runner")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, help="INI config file")
    p.add_argument("--out", type=Path, help="directory for report.json and artifacts")
    p.add_argument("--seed", type=int, help="seed for randomized map families")
    p.add_argument("--resolution", type=int, help="grid N; multi-resolution runs use N/2 and N")
    p.add_argument("--quiet", action="store_true", help="suppress the check table")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["map"] = {"seed": args.seed}
    if args.resolution is not None:
        overrides["grid"] = {"N": args.resolution}
        overrides["experiment"] = {"resolutions": [args.resolution // 2, args.resolution]}
    try:
        text = args.config.read_text() if args.config else None
        cfg = load_config(args.subcommand, text, overrides)
    except (ConfigError, OSError) as err:
        print(f"movingframes: error: {err}", file=sys.stderr)
        return 2
    report = run(args.subcommand, cfg, args.out)
    if not args.quiet:
        for c in report["checks"]:
            flag = "PASS" if c["passed"] else "FAIL"
            crit = c["criterion"] or "-"
            print(f"{flag} {crit:>3} {c['name']}: {c['value']!r} {c['comparison']} {c['threshold']!r}")
        print(f"{'PASS' if report['passed'] else 'FAIL'} {args.subcommand} "
              f"({report['timing']['wall_seconds']:.1f} s)")
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
