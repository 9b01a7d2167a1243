"""Command line entry point: ``aisc run | list | lower | image``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from aisc.harness import (
    ALL_TECHNIQUES,
    Config,
    NativeCache,
    emit_image,
    run_experiment,
    run_matrix,
    write_reports,
)
from aisc.interp import Status, read_output, run
from aisc.isa import EngineProfile, shipped_profiles
from aisc.kernels import KERNEL_NAMES, KernelError, all_kernels, generate_input, load_kernel
from aisc.models import DEFAULT_EPI, EpiTable, accuracy_loss, energy
from aisc.transforms import LoweringError, Technique, TechniqueError, lower_for_engine


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _fraction(text):
    f = float(text)
    if not 0.0 <= f < 1.0:
        raise argparse.ArgumentTypeError("fixed fraction must lie in [0, 1)")
    return f


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aisc", description="Instruction-set approximation experiments.")
    parser.add_argument("--no-jit", action="store_true", help="use the pure Python interpreter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the kernel x technique matrix")
    p.add_argument("--kernel", action="append", help="kernel name or 'all' (repeatable; default all)")
    p.add_argument("--technique", action="append", help="technique string or 'all' (repeatable; default all)")
    p.add_argument("--seed", type=_u64, default=0, help="global seed (default 0)")
    p.add_argument("--epi", type=Path, help="EPI table file (key=value lines)")
    p.add_argument("--fixed-fraction", type=_fraction, default=0.0, help="fixed share of native energy")
    p.add_argument("--budget-mult", type=float, default=100.0, help="budget as a multiple of the native count")
    p.add_argument("--replicates", type=int, default=3, help="seeds per random-drop threshold")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    p.add_argument("--out", type=Path, default=Path("aisc-out"), help="output directory")
    p.add_argument("--quiet", action="store_true")

    sub.add_parser("list", help="list kernels, techniques and engine profiles")

    p = sub.add_parser("lower", help="map a kernel onto an engine profile and run it")
    p.add_argument("--profile", required=True, help="shipped profile name or a .profile file")
    p.add_argument("--kernel", default="all", help="kernel name or 'all'")

    p = sub.add_parser("image", help="write the output image of one record as PGM")
    p.add_argument("--record", required=True, help="record id, e.g. srr_mini@dptohp")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=_u64, default=0)
    return parser


def _kernels(values):
    if not values or "all" in values:
        return KERNEL_NAMES
    for v in values:
        load_kernel(v)
    return tuple(dict.fromkeys(values))


def cmd_run(args, jit):
    epi = EpiTable.load(args.epi) if args.epi else DEFAULT_EPI
    techniques = tuple(args.technique or ["all"])
    config = Config(
        kernels=_kernels(args.kernel),
        techniques=techniques,
        seed=args.seed,
        epi=epi,
        fixed_fraction=args.fixed_fraction,
        budget_mult=args.budget_mult,
        replicates=args.replicates,
        jobs=args.jobs,
        jit=jit,
    )
    records = run_matrix(config)
    write_reports(records, config, args.out)
    if not args.quiet:
        print(f"{'record':58s} {'status':18s} {'rel_E':>7s} {'rel_I':>7s} {'loss%':>8s}")
        for r in records:
            loss = "" if r.accuracy_loss is None else f"{r.accuracy_loss:8.3f}"
            print(f"{r.record_id:58s} {r.status:18s} {r.rel_energy_var:7.3f} {r.rel_instr:7.3f} {loss:>8s}")
        print(f"{len(records)} records written to {args.out}")
    return 0


def cmd_list(_args, _jit):
    print("kernels:")
    for spec in all_kernels():
        shape = "x".join(map(str, spec.shape))
        print(f"  {spec.name:12s} {spec.metric:9s} out={spec.output}[{shape}]  {spec.description}")
    print("techniques:")
    for t in ALL_TECHNIQUES:
        print(f"  {t}")
    print("  drop:t=<float>,seed=<u64>   (explicit seed)")
    print("  multoadd:cap=<n>            (default cap 4096)")
    print("  sptohp, sptoint             (width-32 narrowing)")
    print("profiles:")
    for name, prof in shipped_profiles().items():
        print(f"  {name:12s} policy={prof.policy.value:8s} {len(prof.supported)} (opcode, width) pairs")
    return 0


def _profile(text):
    profiles = shipped_profiles()
    if text in profiles:
        return profiles[text]
    return EngineProfile.load(text)


def cmd_lower(args, jit):
    profile = _profile(args.profile)
    status = 0
    for name in _kernels([args.kernel]):
        spec = load_kernel(name)
        program = spec.program()
        try:
            outcome = lower_for_engine(program, profile)
        except LoweringError as exc:
            print(f"{name}: cannot lower onto {profile.name}: {exc}")
            status = 1
            continue
        image = generate_input(spec)
        native = run(program, image, jit=jit)
        ref = read_output(native.final_state, spec.output_region())
        res = run(outcome.program, image, outcome.hooks, budget=100 * native.stats.total_dynamic, jit=jit)
        line = f"{name}: {outcome.notes}; {res.status.value}"
        if res.status is Status.HALTED:
            out = read_output(res.final_state, spec.output_region())
            loss = accuracy_loss(spec.metric, out, ref, spec.value_range, spec.shape)
            rel = energy(res.stats) / energy(native.stats)
            line += f", rel_energy={rel:.4f}, loss={loss:.4g}%"
        print(line)
    return status


def cmd_image(args, jit):
    kernel, sep, technique = args.record.partition("@")
    if not sep:
        raise ValueError("record id must look like <kernel>@<technique>")
    config = Config(kernels=(kernel,), seed=args.seed, jit=jit)
    record = run_experiment(kernel, Technique.parse(technique), config, NativeCache(config))
    emit_image(record, args.out)
    print(f"{record.record_id}: {record.status}, wrote {args.out}")
    return 0


COMMANDS = {"run": cmd_run, "list": cmd_list, "lower": cmd_lower, "image": cmd_image}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    jit = False if args.no_jit else None
    try:
        return COMMANDS[args.command](args, jit)
    except (KernelError, TechniqueError, ValueError, OSError) as exc:
        print(f"aisc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
