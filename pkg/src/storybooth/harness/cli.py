"""``storybooth`` command line: plan, run, inspect-mask, compare.

Exit codes: 0 success, 1 validation/usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .. import __version__, kernels
from ..errors import NumericError, StoryboothError, TransportError, UsageError
from ..masks import DropoutParams, TokenGrid, block_diagonal, build_cross_mask, build_intra_mask, plan_masks
from ..plan import StoryPrompt, load_plan, serialize_plan
from ..planner import API_KEY_ENV, HttpChatClient, MockChatClient, PlannerConfig, plan_storyboard
from .compare import ABLATIONS, compare
from .config import load_run_config
from .run import canonical_json, run_storyboard, write_mask, write_subject_masks

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _grid(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("grid sides must be positive")
    return h, w


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="storybooth", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({kernels.BACKEND} kernels)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("plan", help="write a storyboard plan (mock planner unless --live)")
    sp.add_argument("--prompt", required=True)
    sp.add_argument("--frames", type=int, required=True)
    sp.add_argument("--subjects", type=int, default=2, help="subject count for the mock planner")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", type=Path, help="output file (default: stdout)")
    sp.add_argument("--live", action="store_true", help=f"query a chat endpoint; key from ${API_KEY_ENV}")
    sp.add_argument("--endpoint", default=PlannerConfig.endpoint)
    sp.add_argument("--model", default=PlannerConfig.model_name)
    sp.add_argument("--temperature", type=float, default=0.0)
    sp.add_argument("--attempts", type=int, default=3)

    sp = sub.add_parser("run", help="run the toy pipeline from a config file")
    sp.add_argument("--config", type=Path, required=True)
    sp.add_argument("--out-dir", type=Path, help="override the config's out_dir")
    sp.add_argument("--dump-masks", action="store_true", help="write every attention mask as PGM + CSV")

    sp = sub.add_parser("inspect-mask", help="rasterize a plan and dump its masks")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--plan", type=Path)
    src.add_argument("--config", type=Path)
    sp.add_argument("--grid", type=_grid, default=None, help="HxW token grid (default 8x8 or the config's)")
    sp.add_argument("--beta-d", type=float, default=None)
    sp.add_argument("--no-dropout", action="store_true")
    sp.add_argument("--seed", type=int, default=0, help="dropout seed")
    sp.add_argument("--timestep", type=int, default=1000)
    sp.add_argument("--layer", type=int, default=0)
    sp.add_argument("--out", type=Path, help="directory for PGM/CSV dumps")

    sp = sub.add_parser("compare", help="paired A/B ablation over seeds")
    sp.add_argument("--config", type=Path, required=True)
    sp.add_argument("--ablate", choices=sorted(ABLATIONS), required=True)
    sp.add_argument("--seeds", type=int, default=20)
    sp.add_argument("--first-seed", type=int, default=None)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", type=Path, help="write the comparison as JSON")
    return p


def _cmd_plan(args) -> int:
    prompt = StoryPrompt(args.prompt, args.frames)
    config = PlannerConfig(model_name=args.model, temperature=args.temperature,
                           max_attempts=args.attempts, endpoint=args.endpoint)
    if args.live:
        if not os.environ.get(API_KEY_ENV):
            raise UsageError(f"--live needs ${API_KEY_ENV}")
        client = HttpChatClient(args.endpoint)
    else:
        client = MockChatClient(args.seed, args.subjects)
    plan = plan_storyboard(prompt, config, client)
    text = serialize_plan(plan)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text, encoding="utf-8")
        print(f"wrote {args.out} ({len(plan.frames)} frames, {len(plan.subjects)} subjects, "
              f"{plan.attempt_count} attempt(s))")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_run(args) -> int:
    config = load_run_config(args.config)
    if args.out_dir is not None:
        config = replace(config, out_dir=args.out_dir)
    if config.out_dir is None:
        raise UsageError("no output directory: set out_dir in the config or pass --out-dir")
    result = run_storyboard(config, keep_masks=args.dump_masks)
    r = result.report
    print(f"{config.steps} steps, bounding={config.bounding}, merging={'on' if config.merging else 'off'}")
    for s in r.subjects:
        cons, pose = r.consistency[s], r.pose_variance[s]
        print(f"  {s}: leakage {sum(r.leakage[s]) / len(r.leakage[s]):.4f}"
              f"  consistency {'-' if cons is None else f'{cons:.4f}'}"
              f"  pose {'-' if pose is None else f'{pose:.4f}'}")
    print(f"wrote {config.out_dir / 'report.json'}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    if args.plan is not None:
        plan = load_plan(args.plan)
        hw = args.grid or (8, 8)
        beta = 0.9 if args.beta_d is None else args.beta_d
        enabled = not args.no_dropout
    else:
        cfg = load_run_config(args.config)
        plan, hw = cfg.plan, args.grid or cfg.grid
        beta = cfg.beta_d if args.beta_d is None else args.beta_d
        enabled = cfg.dropout_enabled and not args.no_dropout
    grid = TokenGrid(hw[0], hw[1], plan.prompt.frame_count)
    dropout = DropoutParams(beta, args.seed, enabled)
    masks = plan_masks(plan, grid)
    for m in masks:
        print(f"frame {m.frame} subject {m.subject}: {int(m.bits.sum())}/{m.bits.size} tokens")
        for row in m.grid2d():
            print("  " + "".join("#" if v else "." for v in row))
    intra = [build_intra_mask([m for m in masks if m.frame == f], grid, dropout, frame=f,
                              timestep=args.timestep, layer=args.layer)
             for f in range(grid.frame_count)]
    cross = build_cross_mask(masks, grid, dropout, timestep=args.timestep, layer=args.layer)
    print(f"intra masks {intra[0].size}x{intra[0].size} allow {sum(int(b.bits.sum()) for b in intra)} pairs; "
          f"cross mask {cross.size}x{cross.size} allows {int(cross.bits.sum())} pairs")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_subject_masks(args.out, masks)
        for f, block in enumerate(intra):
            write_mask(args.out, f"intra_frame{f}", block.bits)
        write_mask(args.out, "intra_blockdiag", block_diagonal(intra).bits)
        write_mask(args.out, "cross", cross.bits)
        print(f"wrote masks to {args.out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    if args.seeds < 1 or args.jobs < 1:
        raise UsageError("--seeds and --jobs must be >= 1")
    config = load_run_config(args.config)
    result = compare(config, args.ablate, args.seeds, jobs=args.jobs, first_seed=args.first_seed)
    print(result.table())
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(canonical_json(result.to_document()), encoding="utf-8")
    return EXIT_OK


_COMMANDS = {"plan": _cmd_plan, "run": _cmd_run, "inspect-mask": _cmd_inspect, "compare": _cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (NumericError, TransportError) as exc:
        print(f"storybooth: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (StoryboothError, ValueError) as exc:
        print(f"storybooth: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"storybooth: I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

