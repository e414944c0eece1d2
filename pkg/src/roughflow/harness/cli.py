"""Command-line entry point: ``roughflow {flow,converge,blob,transport,presets}``."""
from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError, UsageError
from .config import SECTIONS, ExperimentConfig, apply_overrides, describe_presets, load_config, preset_config
from .experiments import StageError, run_blob_verification, run_experiment, run_flow, run_transport_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

VERBS = {
    "flow": (run_flow, "integrate once at h0 (single point or grid)"),
    "converge": (run_experiment, "step-size ladder study"),
    "blob": (run_blob_verification, "vortex-blob lattice verification"),
    "transport": (run_transport_sweep, "transport error sweep over (h, delta)"),
}


def _add_config_flags(p):
    p.add_argument("--config", help="configuration file ([section] key = value)")
    p.add_argument("--preset", help="start from a named preset (see 'presets')")
    p.add_argument("--paper-scale", dest="full_scale", action="store_true", help="restore the full-size ladder of the preset")
    for section, keys in SECTIONS.items():
        group = p.add_argument_group(f"[{section}]")
        for key in keys:
            if key == "preset":
                continue
            group.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="VALUE")


def build_parser():
    parser = argparse.ArgumentParser(prog="roughflow", description="Regularised theta-method experiments.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, (_, text) in VERBS.items():
        _add_config_flags(sub.add_parser(verb, help=text, description=text))
    sub.add_parser("presets", help="list the experiment presets")
    return parser


def resolve_config(args):
    """Preset, then config file, then individual flags."""
    cfg = preset_config(args.preset, args.full_scale) if args.preset else ExperimentConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return apply_overrides(cfg, flags).validate()


def _summary(verb, manifest):
    lines = [f"wrote {manifest.directory}"]
    res = manifest.result
    fit = getattr(res, "fit", None)
    if fit is not None:
        lines += [f"  {ln}" for ln in fit.summary_lines()]
    if verb == "blob":
        lines.append(f"  ratio_drift={res.ratio_drift:.4g}")
    return "\n".join(lines)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.verb == "presets":
        print(describe_presets())
        return EXIT_OK
    try:
        cfg = resolve_config(args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    runner = VERBS[args.verb][0]
    try:
        manifest = runner(cfg)
    except StageError as exc:
        code = EXIT_CONFIG if isinstance(exc.original, (ConfigError, UsageError)) else EXIT_NUMERIC
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(_summary(args.verb, manifest))
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
