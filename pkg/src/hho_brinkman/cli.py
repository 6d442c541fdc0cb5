"""Command line entry point for convergence studies."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import FAMILIES, StudyConfig, run_study
from .mesh import MeshError

# flag name -> StudyConfig field
_FIELDS = {
    "family": "family",
    "mesh_dir": "mesh_dir",
    "levels": "levels",
    "first_level": "first_level",
    "k": "k",
    "r": "r",
    "mu": "mu",
    "nu": "nu",
    "tol": "tol",
    "continuation": "continuation",
    "out": "out",
}


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hho-brinkman",
        description="Manufactured-solution convergence study for the power-law Brinkman problem.",
    )
    p.add_argument("--config", type=Path, help="JSON file with any of the options below; flags override it")
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--mesh-dir", dest="mesh_dir", help="directory of *.json meshes for --family file")
    p.add_argument("--levels", type=int)
    p.add_argument("--first-level", dest="first_level", type=int)
    p.add_argument("--k", type=int, choices=(0, 1, 2))
    p.add_argument("--r", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--continuation", type=_on_off, metavar="{on,off}")
    p.add_argument("--out", help="output directory for errors.csv and friction_level*.csv")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(path: Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = set(data) - set(_FIELDS) - {"max_iter", "max_halvings"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if isinstance(data.get("continuation"), str):
        data["continuation"] = _on_off(data["continuation"])
    return data


def make_config(args: argparse.Namespace) -> StudyConfig:
    values = load_config(args.config) if args.config else {}
    for flag, name in _FIELDS.items():
        v = getattr(args, flag)
        if v is not None:
            values[name] = v
    cfg = StudyConfig(**values)
    cfg.validate()
    return cfg


def format_table(report) -> str:
    rates = report.rates()
    lines = [f"{'level':>5} {'h':>10} {'ndof_u':>8} {'newton':>6} {'err_monitored':>14} {'rate':>7}"]
    for i, lv in enumerate(report.levels):
        rate = "" if i == 0 else f"{rates[i - 1]:.3f}"
        lines.append(f"{lv.level:>5} {lv.h:>10.4e} {lv.ndof_velocity:>8} {lv.newton_iters:>6} "
                     f"{lv.err_monitored:>14.6e} {rate:>7}")
    return "\n".join(lines)


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = make_config(args)
    except (ValueError, TypeError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        report = run_study(cfg)
    except (MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(format_table(report))
    if not report.ok:
        failed = [lv.level for lv in report.levels if not lv.solved]
        print(f"solver failed on levels {failed}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(cli_main())
