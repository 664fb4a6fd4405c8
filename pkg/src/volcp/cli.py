"""Command-line interface.

Subcommands: generate (dataset to disk), fit (thresholds + filter bank),
run (full experiment), export-weights (Figure-style weight profile).
Exit codes: 0 success, 1 config error, 2 runtime/data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import harness, synth, trimask
from .harness import ConfigError, ExperimentConfig
from .latent import make_filter_bank


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        config = ExperimentConfig.from_json_file(args.config)
    else:
        config = ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def _cmd_generate(config: ExperimentConfig) -> None:
    meta = harness.write_dataset(config, config.out_dir)
    print(f"wrote dataset to {meta.parent}")


def _cmd_fit(config: ExperimentConfig) -> None:
    gen = config.generation_config()
    train = list(synth.iter_split(config.seed, gen, "train"))
    thresholds = trimask.fit_thresholds(train, gamma=config.gamma)
    bank = make_filter_bank(
        [config.seed, harness._FILTER_BANK_TAG],
        K=config.K,
        kernel_size=config.kernel_size,
    )
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "thresholds.json").write_text(thresholds.to_json() + "\n", encoding="utf-8")
    bank_meta = {"seed": list(bank.seed), "K": bank.K, "kernel_size": bank.kernel_size}
    (out / "filter_bank.json").write_text(
        json.dumps(bank_meta, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote thresholds.json and filter_bank.json to {out}")


def _cmd_run(config: ExperimentConfig) -> None:
    agg = harness.run_experiment(config)
    json_path, csv_path = harness.export_results(agg, config.out_dir)
    if agg.weight_profile:
        harness.export_weight_profile(
            agg.weight_profile, Path(config.out_dir) / "weights.csv"
        )
    print(f"wrote {json_path} and {csv_path}")
    for (variant, setting), st in sorted(agg.stats.items()):
        acc = "-" if st.accuracy_mean is None else f"{st.accuracy_mean:.3f}"
        print(
            f"{variant:10s} {setting:6s} coverage {st.coverage_mean:.4f} "
            f"± {st.coverage_std:.4f}  width {st.width_mean:.2f}  acc {acc}"
        )


def _cmd_export_weights(config: ExperimentConfig) -> None:
    weighted = tuple(v for v in config.cp_variants if v != "standard")
    if not weighted:
        raise ValueError("export-weights requires at least one weighted variant")
    one_trial = dataclasses.replace(config, trials=1, cp_variants=weighted)
    agg = harness.run_experiment(one_trial)
    path = harness.export_weight_profile(
        agg.weight_profile, Path(config.out_dir) / "weights.csv"
    )
    print(f"wrote {path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volcp",
        description="Calibrated predictive intervals for 3D object volumes",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "write the synthetic dataset to disk"),
        ("fit", "fit tri-mask thresholds and the latent filter bank"),
        ("run", "run the full conformal experiment"),
        ("export-weights", "export one trial's calibration weights"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=str, default=None, help="override output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "generate": _cmd_generate,
        "fit": _cmd_fit,
        "run": _cmd_run,
        "export-weights": _cmd_export_weights,
    }
    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        handlers[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # data/runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
