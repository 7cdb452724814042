"""Command-line driver: run streams, sweep the update/fusion ablation,
materialize synthetic datasets, and serve the interactive session API."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import auxnet
from .data import SyntheticConfig, generate_synthetic, load_folder, save_folder, write_report
from .engine import (
    FUSION_ADAPTIVE,
    FUSION_FIXED,
    UPDATE_ONLINE_BATCH,
    UPDATE_SINGLE_SAMPLE,
    EngineConfig,
    ExpertPolicy,
    make_mock_generalist,
    run_stream_engine,
)
from .errors import StreamSegError
from .generalist import RemoteGeneralist
from .geometry import BOX, POINT

PROMPT_CHOICES = {"box": (BOX,), "point": (POINT,), "both": (BOX, POINT)}

# flag/config-file key -> EngineConfig field
ENGINE_FLAG_FIELDS = {
    "k": "k",
    "K": "window",
    "grid_points": "grid_points",
    "lr": "lr",
    "update_mode": "update_mode",
    "fusion_mode": "fusion_mode",
    "fixed_alpha": "fixed_alpha",
    "refine_input": "refine_input",
    "seed": "seed",
}


def parse_policy(text: str) -> ExpertPolicy:
    if text == "full":
        return ExpertPolicy("full")
    if text == "none":
        return ExpertPolicy("none")
    if text == "interactive":
        return ExpertPolicy("interactive")
    if text.startswith("fraction="):
        return ExpertPolicy("fraction", fraction=float(text.split("=", 1)[1]))
    if text.startswith("threshold="):
        return ExpertPolicy("threshold", threshold=float(text.split("=", 1)[1]))
    raise argparse.ArgumentTypeError(
        f"policy must be full|none|fraction=P|threshold=T|interactive, got {text!r}"
    )


def _parse_config_file(path: str) -> dict:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _coerce(field_name: str, value: str):
    if field_name in ("k", "window", "grid_points", "seed"):
        return int(value)
    if field_name in ("lr", "fixed_alpha"):
        return float(value)
    if field_name == "refine_input":
        return value.lower() in ("1", "true", "yes", "on")
    return value


def build_engine_config(args) -> EngineConfig:
    """Dataclass defaults <- config file <- explicit flags."""
    fields: dict = {}
    if getattr(args, "config", None):
        file_values = _parse_config_file(args.config)
        for key, value in file_values.items():
            if key == "policy":
                fields["expert_policy"] = parse_policy(value)
                continue
            if key not in ENGINE_FLAG_FIELDS:
                raise ValueError(f"unknown config key {key!r}")
            name = ENGINE_FLAG_FIELDS[key]
            fields[name] = _coerce(name, value)
    for flag, name in ENGINE_FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            fields[name] = value
    if getattr(args, "policy", None) is not None:
        fields["expert_policy"] = args.policy
    return EngineConfig(**fields)


def parse_generalist(text: str) -> tuple[str, str | None]:
    if text == "mock":
        return ("mock", None)
    if text.startswith("remote=") and len(text) > len("remote="):
        return ("remote", text.split("=", 1)[1])
    raise argparse.ArgumentTypeError(f"generalist must be mock or remote=URL, got {text!r}")


def build_samples(args):
    kinds = PROMPT_CHOICES[args.prompt]
    if args.data:
        return load_folder(args.data, prompt_kinds=kinds)
    cfg = SyntheticConfig(seed=args.seed if args.seed is not None else 0, count=args.count)
    return generate_synthetic(cfg, prompt_kinds=kinds)


def build_generalist(args, samples, seed: int):
    kind, url = args.generalist
    if kind == "mock":
        return make_mock_generalist(samples, seed=seed)
    return RemoteGeneralist(url)


def summarize(records) -> dict[str, float]:
    def mean(values):
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else float("nan")

    quarter = max(1, len(records) // 4)
    return {
        "mean_dsc_generalist": mean([r.dsc_generalist for r in records]),
        "mean_dsc_fused": mean([r.dsc_fused for r in records]),
        "mean_hd_fused": mean([r.hd_fused for r in records]),
        "mean_dsc_fused_last_quarter": mean([r.dsc_fused for r in records[-quarter:]]),
    }


def _print_summary(summary: dict) -> None:
    for key, value in summary.items():
        print(f"{key}: {value:.6f}")


def _add_engine_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, help="online-batch capacity")
    parser.add_argument("--K", type=int, help="alpha tracker window")
    parser.add_argument("--grid-points", dest="grid_points", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--update-mode", dest="update_mode",
                        choices=[UPDATE_ONLINE_BATCH, UPDATE_SINGLE_SAMPLE])
    parser.add_argument("--fusion-mode", dest="fusion_mode",
                        choices=[FUSION_ADAPTIVE, FUSION_FIXED])
    parser.add_argument("--fixed-alpha", dest="fixed_alpha", type=float)
    parser.add_argument("--refine-input", dest="refine_input", action="store_const", const=True)
    parser.add_argument("--config", help="key=value config file; flags override")


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--synthetic", action="store_true", help="seeded synthetic stream (default)")
    source.add_argument("--data", help="folder dataset with images/ and masks/")
    parser.add_argument("--count", type=int, default=200, help="synthetic sample count")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--prompt", choices=sorted(PROMPT_CHOICES), default="box")
    parser.add_argument("--generalist", type=parse_generalist, default=("mock", None),
                        help="mock or remote=URL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamseg")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a stream and write a report")
    _add_data_flags(run)
    _add_engine_flags(run)
    run.add_argument("--policy", type=parse_policy, default=None,
                     help="full|none|fraction=P|threshold=T")
    run.add_argument("--out", help="report CSV path")
    run.add_argument("--checkpoint-out", dest="checkpoint_out", help="specialist checkpoint path")

    ablate = sub.add_parser("ablate", help="2x2 sweep of update and fusion modes")
    _add_data_flags(ablate)
    _add_engine_flags(ablate)
    ablate.add_argument("--out", help="write the comparison table as CSV")

    serve = sub.add_parser("serve", help="serve the interactive session API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8787)
    serve.add_argument("--static", default=None, help="directory of UI assets to serve at /")

    gen = sub.add_parser("gen-data", help="materialize a synthetic dataset folder")
    gen.add_argument("--out", required=True)
    gen.add_argument("--count", type=int, default=200)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--image-size", dest="image_size", type=int, default=128)

    return parser


def cmd_run(args) -> int:
    cfg = build_engine_config(args)
    if cfg.expert_policy.kind == "interactive":
        print("run: interactive policy needs `streamseg serve`", file=sys.stderr)
        return 2
    samples = build_samples(args)
    generalist = build_generalist(args, samples, cfg.seed)
    engine, records = run_stream_engine(cfg, samples, generalist)
    if args.out:
        write_report(records, args.out)
    if args.checkpoint_out:
        auxnet.save_checkpoint(args.checkpoint_out, engine.aux_cfg, engine.params, engine.opt_state)
    _print_summary(summarize(records))
    return 0


def cmd_ablate(args) -> int:
    cfg = build_engine_config(args)
    samples = build_samples(args)
    rows = []
    for update_mode in (UPDATE_SINGLE_SAMPLE, UPDATE_ONLINE_BATCH):
        for fusion_mode in (FUSION_FIXED, FUSION_ADAPTIVE):
            variant = EngineConfig(
                **{
                    **{f: getattr(cfg, f) for f in (
                        "k", "window", "grid_points", "lr", "weight_decay", "refine_input",
                        "seed", "patch_size", "widths", "crop_pad", "fallback_size",
                        "steps_per_update", "refine_logit_scale",
                    )},
                    "update_mode": update_mode,
                    "fusion_mode": fusion_mode,
                    "fixed_alpha": 0.5,
                    "expert_policy": ExpertPolicy("full"),
                }
            )
            generalist = build_generalist(args, samples, variant.seed)
            records = run_stream_engine(variant, samples, generalist)[1]
            summary = summarize(records)
            rows.append((update_mode, fusion_mode, summary))

    header = f"{'update_mode':<16} {'fusion_mode':<12} {'dsc_fused':>10} {'hd_fused':>10} {'dsc_last_q':>11}"
    print(header)
    for update_mode, fusion_mode, s in rows:
        print(
            f"{update_mode:<16} {fusion_mode:<12} {s['mean_dsc_fused']:>10.4f} "
            f"{s['mean_hd_fused']:>10.2f} {s['mean_dsc_fused_last_quarter']:>11.4f}"
        )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write("update_mode,fusion_mode,mean_dsc_fused,mean_hd_fused,mean_dsc_fused_last_quarter\n")
            for update_mode, fusion_mode, s in rows:
                f.write(
                    f"{update_mode},{fusion_mode},{s['mean_dsc_fused']:.6f},"
                    f"{s['mean_hd_fused']:.6f},{s['mean_dsc_fused_last_quarter']:.6f}\n"
                )
    return 0


def cmd_serve(args) -> int:
    from .service import create_server

    server = create_server(args.host, args.port, static_dir=args.static)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_gen_data(args) -> int:
    samples = generate_synthetic(
        SyntheticConfig(seed=args.seed, count=args.count, image_size=args.image_size)
    )
    save_folder(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


COMMANDS = {
    "run": cmd_run,
    "ablate": cmd_ablate,
    "serve": cmd_serve,
    "gen-data": cmd_gen_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (StreamSegError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
