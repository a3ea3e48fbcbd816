"""Command-line entry point: ``coopsim {gen,run,sweep,report}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (
    AXES,
    ConfigError,
    ExperimentConfig,
    load_config,
    run_experiment,
    sweep_configs,
    write_report,
)
from .scenario import ScenarioConfig, generate_scenario, save_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopsim", description="Cooperative driving simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a scenario file")
    g.add_argument("--config", required=True, help="scenario or experiment config (JSON)")
    g.add_argument("--out", required=True, help="scenario JSON to write")

    r = sub.add_parser("run", help="run one experiment over its seed list")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("sweep", help="run one experiment per axis value")
    s.add_argument("--axis", required=True, choices=AXES)
    s.add_argument("--values", required=True,
                   help="comma-separated values (bandwidth Mb/s, latency ms, drop fraction)")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory")

    rep = sub.add_parser("report", help="tabulate run records in a directory")
    rep.add_argument("--in", dest="input", required=True)
    rep.add_argument("--format", required=True, choices=("csv", "markdown", "json"))
    return p


def _scenario_config(path: str) -> ScenarioConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if isinstance(doc, dict) and ("scenario" in doc or "mode" in doc):
        cfg = ExperimentConfig.from_dict(doc)
        return ScenarioConfig.from_dict({**cfg.scenario.to_dict(), "seed": cfg.seeds[0]})
    try:
        return ScenarioConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _parse_values(raw: str) -> list[float]:
    try:
        values = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be a comma-separated list of numbers, got {raw!r}") from None
    if not values:
        raise ConfigError("--values is empty")
    return values


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "gen":
            scenario = generate_scenario(_scenario_config(args.config))
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            save_scenario(scenario, args.out)
            print(args.out)
        elif args.command == "run":
            cfg = load_config(args.config)
            record = run_experiment(cfg)
            out = Path(args.out) / "run.json"
            _write(out, record.to_json())
            print(out)
        elif args.command == "sweep":
            base = load_config(args.config)
            configs = sweep_configs(args.axis, _parse_values(args.values), base)
            for i, cfg in enumerate(configs):
                out = Path(args.out) / f"{i:02d}_{_slug(cfg.display_label)}.json"
                _write(out, run_experiment(cfg).to_json())
                print(out)
        else:
            print(write_report(args.input, args.format))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
