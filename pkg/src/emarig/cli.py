"""Command-line driver.

Subcommands: ``compile`` (EMA + rig + mesh -> bundle), ``synth``
(bundle + request -> rendered COLLADA clip), ``validate`` (bundle vs.
source EMA), ``dump`` (trajectory .pos dumps), ``fixture`` (generate the
synthetic test corpus).

Exit codes: 0 success, 1 usage error, 2 data/processing error,
3 validation threshold exceeded. Failures print one machine-parsable line:
``error:<module>:<code>: message``.
"""

from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path

import numpy as np

from .anim_db import build_unit_db
from .bundle import DUMP_KINDS, dump_trajectories, read_bundle
from .collada_io import write_collada
from .errors import EmarigError, NoCandidate
from .fixture import FixtureSpec, write_fixture
from .pipeline import (
    SynthesisDefaults,
    build_bundle,
    compile_model,
    load_config,
    validate_model,
)
from .unit_synth import (
    SynthesisRequest,
    join_cost,
    parse_request,
    render_plan,
    select_units,
    target_cost,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="emarig",
        description="Compile EMA motion capture into an animated tongue/teeth "
        "model and synthesize new articulatory animation from it.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile EMA data into a model bundle")
    p.add_argument("--config", required=True, help="pipeline config file")
    p.add_argument("--out", required=True, help="bundle directory or .zip path")
    p.add_argument("--no-smoothing", action="store_true", help="skip jitter smoothing")
    p.add_argument("--report", help="write per-frame residuals to this file")

    p = sub.add_parser("synth", help="select and render units from a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--request", help="e.g. 't 0.08; a 0.15; m 0.09'")
    p.add_argument("--request-file", help="file holding the request syntax")
    p.add_argument("--out", required=True, help="output COLLADA file")
    p.add_argument("--config", help="pipeline config supplying [synthesis] defaults")
    p.add_argument("--w-target", type=float, default=None)
    p.add_argument("--w-join", type=float, default=None)
    p.add_argument("--blend-window", type=float, default=None)
    p.add_argument("--velocity-weight", type=float, default=None)
    p.add_argument(
        "--exhaustive",
        action="store_true",
        help="cross-check the plan against brute-force enumeration "
        "(instances up to 5 slots x 5 candidates)",
    )

    p = sub.add_parser("validate", help="compare a bundle against source EMA")
    p.add_argument("--bundle", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--threshold", type=float, default=np.inf, help="max RMS in cm")
    p.add_argument("--no-smoothing", action="store_true")

    p = sub.add_parser("dump", help="dump trajectories as a .pos file")
    p.add_argument("--config", required=True)
    p.add_argument("--kind", required=True, choices=DUMP_KINDS)
    p.add_argument("--out", required=True)
    p.add_argument("--no-smoothing", action="store_true")

    p = sub.add_parser("fixture", help="generate the synthetic test corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sweeps", type=int, default=2)
    p.add_argument("--frames", type=int, default=600)
    p.add_argument("--rate", type=float, default=200.0)
    p.add_argument("--no-head-motion", action="store_true")

    return parser


def _cmd_compile(args) -> int:
    config = load_config(args.config)
    result = compile_model(config, smoothing_enabled=not args.no_smoothing)
    bundle = build_bundle(result, args.out)
    for line in result.report.lines():
        print(line)
    print(f"bundle            {bundle.path}")
    if args.report:
        rows = "".join(
            f"{i}\t{r!r}\n" for i, r in enumerate(result.report.residuals)
        )
        Path(args.report).write_text("frame\tmax_residual_cm\n" + rows, encoding="utf-8")
    return 0


def _brute_force_total(db, request: SynthesisRequest):
    candidates = []
    for label, _ in request.items:
        cands = sorted(
            (u for u in db if u.label == label), key=lambda u: u.source_index
        )
        if not cands:
            raise NoCandidate(label)
        candidates.append(cands)
    if len(candidates) > 5 or any(len(c) > 5 for c in candidates):
        raise UsageError(
            "--exhaustive is limited to instances of at most 5 slots x 5 candidates"
        )
    best = None
    best_seq = None
    for combo in itertools.product(*candidates):
        tl = [target_cost(u, d) for u, (_, d) in zip(combo, request.items)]
        jl = [
            join_cost(a, b, request.velocity_weight)
            for a, b in zip(combo[:-1], combo[1:])
        ]
        total = request.w_target * sum(tl) + request.w_join * sum(jl)
        seq = tuple(u.source_index for u in combo)
        if best is None or (total, seq) < (best, best_seq):
            best, best_seq = total, seq
    return best, best_seq


def _cmd_synth(args) -> int:
    if bool(args.request) == bool(args.request_file):
        raise UsageError("provide exactly one of --request / --request-file")
    text = args.request or Path(args.request_file).read_text(encoding="utf-8")
    items = parse_request(text)

    defaults = SynthesisDefaults()
    if args.config:
        defaults = load_config(args.config).synthesis
    pick = lambda flag, conf: conf if flag is None else flag
    request = SynthesisRequest(
        items=items,
        w_target=pick(args.w_target, defaults.w_target),
        w_join=pick(args.w_join, defaults.w_join),
        blend_window=pick(args.blend_window, defaults.blend_window),
        velocity_weight=pick(args.velocity_weight, defaults.velocity_weight),
    )

    loaded = read_bundle(args.bundle)
    if loaded.tier is None or loaded.clip is None:
        raise EmarigError(
            "bundle has no segmentation/animation to synthesize from", module="cli"
        )
    db = build_unit_db(loaded.clip, loaded.tier)
    plan = select_units(db, request)

    print(f"{'slot':>4}  {'label':<8}{'source':>6}  {'warp':>8}  {'target':>10}")
    for i, (unit, warp, tc) in enumerate(
        zip(plan.units, plan.warp_factors, plan.target_costs)
    ):
        print(f"{i:>4}  {unit.label:<8}{unit.source_index:>6}  {warp:>8.4f}  {tc:>10.6g}")
    for j, jc in enumerate(plan.join_costs):
        print(f"join {j}->{j + 1}: {jc:.6g}")
    print(f"total cost {plan.total:.6g}")

    if args.exhaustive:
        best, seq = _brute_force_total(db, request)
        match = best == plan.total
        print(f"exhaustive minimum {best:.6g} ({'match' if match else 'MISMATCH'})")
        if not match:
            raise EmarigError(
                f"plan cost {plan.total!r} differs from exhaustive minimum {best!r} "
                f"(sequence {seq})",
                module="unit_synth",
            )

    rendered = render_plan(plan, loaded.clip)
    Path(args.out).write_text(
        write_collada(loaded.mesh, loaded.armature, rendered), encoding="utf-8"
    )
    print(f"rendered clip of {rendered.duration:g} s -> {args.out}")
    return 0


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    loaded = read_bundle(args.bundle)
    report = validate_model(loaded, config, smoothing_enabled=not args.no_smoothing)
    for line in report.lines():
        print(line)
    if report.max_rms > args.threshold:
        print(f"FAIL: max rms {report.max_rms:.6g} cm exceeds {args.threshold:g} cm")
        return 3
    print("OK")
    return 0


def _cmd_dump(args) -> int:
    config = load_config(args.config)
    result = compile_model(config, smoothing_enabled=not args.no_smoothing)
    if args.kind == "coils":
        data = dump_trajectories(
            "coils", sweeps=result.sweeps_raw, layout=result.layout
        )
    elif args.kind == "ik_targets":
        data = dump_trajectories("ik_targets", clip=result.clip)
    else:
        data = dump_trajectories("seed_vertices", rig=result.rig, clip=result.clip)
    Path(args.out).write_bytes(data)
    print(f"wrote {len(data)} bytes -> {args.out}")
    return 0


def _cmd_fixture(args) -> int:
    spec = FixtureSpec(
        n_sweeps=args.sweeps,
        frames_per_sweep=args.frames,
        rate_hz=args.rate,
        head_motion=not args.no_head_motion,
    )
    config_path = write_fixture(args.out, spec)
    print(f"fixture written; config at {config_path}")
    return 0


_COMMANDS = {
    "compile": _cmd_compile,
    "synth": _cmd_synth,
    "validate": _cmd_validate,
    "dump": _cmd_dump,
    "fixture": _cmd_fixture,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error:cli:usage: {exc}", file=sys.stderr)
        return 1
    except EmarigError as exc:
        print(exc.diagnostic(), file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error:cli:io: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
