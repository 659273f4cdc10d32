#!/usr/bin/env python3
"""
MDC Mapper - Command Line Launcher
Entry point wiring the conformability checker, transform, cost models,
explorer and oracle to subcommands.
"""

import argparse
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from mdc_mapper_config import AcceleratorConfig, DbMode, PruningFlags, app_home, load_accelerator
from mdc_mapper_conformability import check_conformable
from mdc_mapper_errors import InfeasibleError, MdcMapperError, StyleError, WorkloadError
from mdc_mapper_explorer import (BaselineStyle, SearchGoal, baseline_ratios, constrained_baseline,
                                 decoupled_optimize, geomean, roofline_comparison, roofline_peak)
from mdc_mapper_loopnest import LoopNest
from mdc_mapper_notation import render_mdc, transform_to_mdc
from mdc_mapper_offchip_cost import optimize_offchip
from mdc_mapper_onchip_cost import analyze_mapping
from mdc_mapper_oracle import compare_with_model
from mdc_mapper_reports import (OutputFormat, check_frame, cost_frame, frame, load_mapping, render,
                                search_frame, space_frame, space_summary_frame)
from mdc_mapper_space import Mapping, aggregate_space_stats, enumerate_onchip, space_size
from mdc_mapper_workloads import conformability_suite, load_workload_file

# --- Constants ---
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - [%(funcName)s] - %(message)s'
LOG_FILE_NAME = "mdc_mapper.log"
SUBCOMMANDS = ("check", "transform", "cost", "optimize", "baseline", "roofline", "verify", "space-size")

logger = logging.getLogger("MdcMapperLauncher")


def configure_logging(verbose: bool = False) -> None:
    """Reports go to stdout, so log records go to stderr and the log file."""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    log_dir = app_home() / "logs"
    file_error = None
    try:
        log_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_dir / LOG_FILE_NAME, mode='a'))
    except OSError as e:
        file_error = e
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, handlers=handlers)
    logging.getLogger().setLevel(logging.DEBUG if verbose else logging.INFO)
    if file_error is not None:
        logger.warning(f"Logging to stderr only; cannot create {log_dir}: {file_error}")


@dataclass(frozen=True)
class RunConfig:
    command: str
    accelerator: str = "p1"
    workload: Optional[str] = None
    operators: Tuple[str, ...] = ()
    mapping: Optional[Path] = None
    goals: Tuple[str, ...] = tuple(g.value for g in SearchGoal)
    styles: Tuple[str, ...] = tuple(s.value for s in BaselineStyle)
    flags: PruningFlags = field(default_factory=PruningFlags)
    utilization_bound: Optional[float] = None
    max_parallel_loops: Optional[int] = None
    output: OutputFormat = OutputFormat.TABLE
    seed: int = 0
    workers: int = 1
    suite: bool = False
    compare: bool = False
    verbose: bool = False

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        flags = PruningFlags(factor_tiles=not args.no_factor_pruning,
                             utilization=not args.no_utilization_pruning,
                             db_mode=DbMode(args.db_mode),
                             absent_loop_factor=not args.no_absent_loop_factor)
        return cls(
            command=args.command,
            accelerator=args.accelerator,
            workload=getattr(args, "workload", None),
            operators=tuple(args.operator or ()),
            mapping=Path(args.mapping) if getattr(args, "mapping", None) else None,
            goals=tuple(args.goals) if args.goals else tuple(g.value for g in SearchGoal),
            styles=tuple(getattr(args, "styles", None) or (s.value for s in BaselineStyle)),
            flags=flags,
            utilization_bound=args.utilization_bound,
            max_parallel_loops=args.max_parallel_loops,
            output=OutputFormat(args.format),
            seed=args.seed,
            workers=max(1, args.workers),
            suite=getattr(args, "suite", False),
            compare=getattr(args, "compare", False),
            verbose=args.verbose,
        )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-a", "--accelerator", default="p1", help="config file or preset name (p1, p2)")
    common.add_argument("--operator", action="append", help="only these entries of the workload file")
    common.add_argument("--goals", nargs="+", choices=[g.value for g in SearchGoal])
    common.add_argument("--format", choices=[f.value for f in OutputFormat], default=OutputFormat.TABLE.value)
    common.add_argument("--workers", type=int, default=1, help="processes scoring on-chip candidates")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--no-factor-pruning", action="store_true")
    common.add_argument("--no-utilization-pruning", action="store_true")
    common.add_argument("--utilization-bound", type=float)
    common.add_argument("--max-parallel-loops", type=int)
    common.add_argument("--db-mode", choices=[m.value for m in DbMode], default=DbMode.EXACT.value)
    common.add_argument("--no-absent-loop-factor", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mdc-mapper", description="Map loop nests onto spatial accelerators.")
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", parents=[common], help="conformability report")
    check.add_argument("workload", nargs="?")
    check.add_argument("--suite", action="store_true", help="check the built-in operator table")

    for name, text in (("transform", "print the directive program of a mapping"),
                       ("cost", "score a mapping file"),
                       ("verify", "compare the analytical model with the simulator")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("workload")
        p.add_argument("--mapping", help="mapping JSON file")

    sub.add_parser("optimize", parents=[common], help="decoupled search").add_argument("workload")
    base = sub.add_parser("baseline", parents=[common], help="mapping-style searches vs the decoupled search")
    base.add_argument("workload")
    base.add_argument("--styles", nargs="+", choices=[s.value for s in BaselineStyle])
    roof = sub.add_parser("roofline", parents=[common], help="roofline bounds")
    roof.add_argument("workload")
    roof.add_argument("--compare", action="store_true", help="also run the search and report achieved GOPS")
    sub.add_parser("space-size", parents=[common], help="search space cardinalities").add_argument("workload")
    return parser


class MdcMapperLauncher:
    def __init__(self, config: RunConfig, out: TextIO):
        self.config = config
        self.out = out
        self.commands: Dict[str, Callable[[], Tuple[Any, Any]]] = {
            "check": self.run_check,
            "transform": self.run_transform,
            "cost": self.run_cost,
            "optimize": self.run_optimize,
            "baseline": self.run_baseline,
            "roofline": self.run_roofline,
            "verify": self.run_verify,
            "space-size": self.run_space_size,
        }
        self._hw: Optional[AcceleratorConfig] = None

    # --- inputs ---
    @property
    def hw(self) -> AcceleratorConfig:
        if self._hw is None:
            hw = load_accelerator(self.config.accelerator)
            self._hw = hw.with_overrides(utilization_bound=self.config.utilization_bound,
                                         max_parallel_loops=self.config.max_parallel_loops)
        return self._hw

    def nests(self) -> List[LoopNest]:
        nests = load_workload_file(self.config.workload)
        if self.config.operators:
            wanted = set(self.config.operators)
            nests = [n for n in nests if n.name in wanted]
            missing = wanted - {n.name for n in nests}
            if missing:
                raise WorkloadError(f"Operators {sorted(missing)} are not in {self.config.workload}.")
        return nests

    def single_nest(self) -> LoopNest:
        nests = self.nests()
        if len(nests) != 1:
            raise WorkloadError(f"{self.config.command} needs exactly one operator; "
                                f"{self.config.workload} has {len(nests)} (use --operator).")
        return nests[0]

    def mapping_for(self, nest: LoopNest) -> Mapping:
        if self.config.mapping is not None:
            return load_mapping(self.config.mapping, nest)
        if self.config.command == "verify":
            return self.sample_mapping(nest)
        result = decoupled_optimize(nest, self.hw, [SearchGoal.RUNTIME], self.config.flags, self.config.workers)
        return result.for_goal(SearchGoal.RUNTIME).mapping

    def sample_mapping(self, nest: LoopNest) -> Mapping:
        """A seed-chosen valid mapping at the off-chip optimum."""
        flags = self.config.flags
        plan = optimize_offchip(nest, self.hw, flags)
        candidates = list(enumerate_onchip(nest, self.hw, plan.t3, flags))
        if not candidates and flags.utilization:
            flags = replace(flags, utilization=False)
            candidates = list(enumerate_onchip(nest, self.hw, plan.t3, flags))
        if not candidates:
            raise InfeasibleError(f"No on-chip mapping of '{nest.name}' to sample.")
        rng = np.random.default_rng(self.config.seed)
        order2, t2, t1 = candidates[int(rng.integers(len(candidates)))]
        logger.info(f"Sampled candidate {len(candidates)} choices with seed {self.config.seed}")
        return Mapping(t1=t1, t2=t2, order2=order2, t3=plan.t3, order3=plan.order3, layout=plan.layout)

    # --- subcommands; each returns (json data, flat frame) ---
    def run_check(self):
        if self.config.suite or not self.config.workload:
            nests = [row.nest for row in conformability_suite()]
        else:
            nests = self.nests()
        reports = [check_conformable(n) for n in nests]
        return [r.to_dict() for r in reports], check_frame(reports)

    def run_transform(self):
        nest = self.single_nest()
        mapping = self.mapping_for(nest)
        text = render_mdc(transform_to_mdc(mapping, nest))
        if self.config.output == OutputFormat.TABLE:
            return None, text
        return {"name": nest.name, "mapping": mapping.to_dict(), "mdc": text}, frame([{"operator": nest.name, "mdc": text}])

    def run_cost(self):
        nest = self.single_nest()
        mapping = self.mapping_for(nest)
        report = analyze_mapping(transform_to_mdc(mapping, nest), nest, self.hw, layout=mapping.layout,
                                 flags=self.config.flags)
        return report.to_dict(), cost_frame([report])

    def run_optimize(self):
        results = [decoupled_optimize(n, self.hw, self.config.goals, self.config.flags, self.config.workers)
                   for n in self.nests()]
        data = {"accelerator": self.hw.to_dict(), "flags": self.config.flags.to_dict(),
                "results": [r.to_dict() for r in results]}
        return data, search_frame(results)

    def run_baseline(self):
        goals = ("energy", "runtime")
        operators = []
        rows = []
        ratios: Dict[str, List[Dict[str, float]]] = {s: [] for s in self.config.styles}
        for nest in self.nests():
            ours = decoupled_optimize(nest, self.hw, goals, self.config.flags, self.config.workers)
            entry: Dict[str, Any] = {"name": nest.name, "decoupled": ours.to_dict(), "styles": {}}
            for style in self.config.styles:
                try:
                    theirs = constrained_baseline(nest, self.hw, style, goals, self.config.flags, self.config.workers)
                except StyleError as e:
                    logger.warning(f"{style} skipped for '{nest.name}': {e.message}")
                    entry["styles"][style] = {"error": e.message}
                    rows.append({"operator": nest.name, "style": style, "speedup": None, "energy_reduction": None})
                    continue
                r = baseline_ratios(ours, theirs)
                ratios[style].append(r)
                entry["styles"][style] = {"result": theirs.to_dict(), "ratios": r}
                rows.append({"operator": nest.name, "style": style, **r})
            operators.append(entry)
        summary = {s: {"speedup": geomean([r["speedup"] for r in v]),
                       "energy_reduction": geomean([r["energy_reduction"] for r in v])}
                   for s, v in ratios.items() if v}
        for style, g in summary.items():
            rows.append({"operator": "geomean", "style": style, **g})
        return {"operators": operators, "geomean": summary}, frame(rows)

    def run_roofline(self):
        rows = []
        for nest in self.nests():
            peak = roofline_peak(nest, self.hw)
            row = {"operator": nest.name, **peak.to_dict()}
            if self.config.compare:
                result = decoupled_optimize(nest, self.hw, [SearchGoal.RUNTIME], self.config.flags,
                                            self.config.workers)
                row.update(roofline_comparison(nest, self.hw, result.for_goal(SearchGoal.RUNTIME).report))
            rows.append(row)
        return {"peak_gops": self.hw.peak_gops, "operators": rows}, frame(rows)

    def run_verify(self):
        nest = self.single_nest()
        mapping = self.mapping_for(nest)
        diff = compare_with_model(transform_to_mdc(mapping, nest), nest, self.hw)
        rows = [{"field": k, **v} for k, v in diff["fields"].items()]
        return {**diff, "mapping": mapping.to_dict()}, frame(rows)

    def run_space_size(self):
        named = [(n.name, space_size(n, self.hw, self.config.flags)) for n in self.nests()]
        summary = aggregate_space_stats([s for _, s in named])
        data = {"operators": {name: s.to_dict() for name, s in named}, "summary": summary}
        if self.config.output == OutputFormat.TABLE:
            text = space_frame(named).to_string(index=False) + "\n\n" + \
                space_summary_frame(summary).to_string(index=False) + "\n"
            return data, text
        return data, space_frame(named)

    def run(self) -> int:
        data, flat = self.commands[self.config.command]()
        text = flat if isinstance(flat, str) and (data is None or self.config.output == OutputFormat.TABLE) \
            else render(data, flat, self.config.output)
        self.out.write(text)
        return 0


def run_cli(argv: Optional[Sequence[str]] = None, out: Optional[TextIO] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.verbose)
    try:
        config = RunConfig.from_args(args)
        return MdcMapperLauncher(config, out or sys.stdout).run()
    except MdcMapperError as e:
        logger.error(f"{args.command} failed: {e.message}")
        print(f"mdc-mapper {args.command}: {e.message}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"mdc-mapper {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(run_cli())
