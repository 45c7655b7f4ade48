"""Command-line driver: ``contract-bench``, ``ite``, ``sweep`` and ``ed``.

Settings come from built-in defaults, then an optional flat ``key=value`` file
(``--config``), then command-line flags; later sources win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import ed as ed_mod
from .ite import TRACE_COLUMNS, IteConfig, IteError, ite_run
from .lattice import build_double_layer, init_uniform, save_checkpoint
from .networks import all_ones_network, random_network
from .observables import REPORT_COLUMNS, ContractOptions, full_report, report_row, write_report_csv
from .parallel import count_cross_worker_steps, execute_plan_parallel
from .plan import PlanError, estimate_cost, execute_plan_sequential, plan_quadrant, plan_row
from .tensor import MemoryCeilingError, default_mem_ceiling

log = logging.getLogger("pepsim")

SUBCOMMANDS = ("contract-bench", "ite", "sweep", "ed")
BENCH_COLUMNS = ["L", "chi", "plan", "scalar", "seconds", "peak_elements", "messages", "bytes"]


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


@dataclass
class RunConfig:
    command: str = ""
    lh: int = 2
    lw: int = 2
    l_min: int = 4
    l_max: int = 8
    chi: int = 2
    chi_max: int = 2
    epsilon: float = 0.01
    j: float = 1.0
    gamma: float = 1.0
    gamma_min: float = 0.0
    gamma_max: float = 4.0
    gamma_step: float = 0.5
    tau: float = 3.0
    steps: int = 100
    energy_eval_period: int = 2
    plan: str = ""  # empty: quadrant, or both plans for contract-bench
    bands: int = 4
    parallel: bool = False
    random: bool = False
    reuse_state: bool = False
    early_stop: bool = False
    seed: int = 0
    mem_ceiling: int = 0  # 0: PEPS_MEM_CEILING or the built-in default
    out: str = ""
    dump_plan: bool = False

    def validate(self) -> list[str]:
        errs = []
        if self.command not in SUBCOMMANDS:
            errs.append(f"command: must be one of {', '.join(SUBCOMMANDS)}")
        if self.command in ("ite", "sweep", "ed"):
            if self.lh < 2:
                errs.append("lh: must be >= 2")
            if self.lw < 2:
                errs.append("lw: must be >= 2")
        if self.command == "ed" and self.lh * self.lw > ed_mod.MAX_SITES:
            errs.append(f"lh*lw: exact diagonalization is limited to {ed_mod.MAX_SITES} sites")
        if self.command == "contract-bench":
            if self.l_min < 2:
                errs.append("l_min: must be >= 2")
            if self.l_max < self.l_min:
                errs.append("l_max: must be >= l_min")
            if not 1 <= self.bands <= 4:
                errs.append("bands: must lie in 1..4")
        if self.chi < 1:
            errs.append("chi: must be >= 1")
        if self.chi_max < 1:
            errs.append("chi_max: must be >= 1")
        if not 0.0 <= self.epsilon < 1.0:
            errs.append("epsilon: must lie in [0, 1)")
        if self.tau < 0:
            errs.append("tau: must be >= 0")
        if self.steps < 1:
            errs.append("steps: must be >= 1")
        if self.energy_eval_period < 1:
            errs.append("energy_eval_period: must be >= 1")
        if self.plan not in ("", "row", "quadrant"):
            errs.append("plan: must be row or quadrant")
        if self.command == "sweep":
            if self.gamma_step <= 0:
                errs.append("gamma_step: must be > 0")
            if self.gamma_max < self.gamma_min:
                errs.append("gamma_max: must be >= gamma_min")
        if self.mem_ceiling < 0:
            errs.append("mem_ceiling: must be >= 0")
        if not 0 <= self.seed < 2**64:
            errs.append("seed: must be a 64-bit unsigned integer")
        return errs

    @property
    def ceiling(self) -> int:
        return self.mem_ceiling or default_mem_ceiling()

    def contract_options(self) -> ContractOptions:
        return ContractOptions(self.plan or "quadrant", self.parallel, self.ceiling)

    def ite_config(self, gamma: float | None = None) -> IteConfig:
        return IteConfig(
            J=self.j,
            gamma=self.gamma if gamma is None else gamma,
            tau=self.tau,
            steps=self.steps,
            epsilon=self.epsilon,
            chi_max=self.chi_max,
            energy_eval_period=self.energy_eval_period,
            early_stop_tol=1e-8 if self.early_stop else None,
            contract=self.contract_options(),
        )

    def gamma_grid(self) -> list[float]:
        n = int(math.floor((self.gamma_max - self.gamma_min) / self.gamma_step + 1e-9))
        return [round(self.gamma_min + k * self.gamma_step, 12) for k in range(n + 1)]


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str, errors: list[str]):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        errors.append(f"{key}: cannot parse {raw!r} as {kind}")
        return None


def read_config_file(path: str | Path, errors: list[str]) -> dict:
    values = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"{path}:{n}: expected key=value")
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES or key == "command":
            errors.append(f"{key}: unknown key")
            continue
        val = _coerce(key, raw, errors)
        if val is not None:
            values[key] = val
    return values


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pepsim", description="Exact PEPS contraction and ITE for the transverse-field Ising model.")
    sub = p.add_subparsers(dest="command", metavar="{contract-bench,ite,sweep,ed}")
    S = argparse.SUPPRESS

    def common(sp):
        sp.add_argument("--config", default=S, help="flat key=value file; flags override it")
        sp.add_argument("--lh", type=int, default=S)
        sp.add_argument("--lw", type=int, default=S)
        sp.add_argument("--chi", type=int, default=S)
        sp.add_argument("--chi-max", dest="chi_max", type=int, default=S)
        sp.add_argument("--epsilon", type=float, default=S)
        sp.add_argument("--j", type=float, default=S)
        sp.add_argument("--gamma", type=float, default=S)
        sp.add_argument("--gamma-min", dest="gamma_min", type=float, default=S)
        sp.add_argument("--gamma-max", dest="gamma_max", type=float, default=S)
        sp.add_argument("--gamma-step", dest="gamma_step", type=float, default=S)
        sp.add_argument("--tau", type=float, default=S)
        sp.add_argument("--steps", type=int, default=S)
        sp.add_argument("--energy-eval-period", dest="energy_eval_period", type=int, default=S)
        sp.add_argument("--plan", default=S, help="row or quadrant")
        sp.add_argument("--parallel", action="store_true", default=S)
        sp.add_argument("--seed", type=int, default=S)
        sp.add_argument("--mem-ceiling", dest="mem_ceiling", type=lambda s: int(float(s)), default=S)
        sp.add_argument("--out", default=S, help="output directory")
        sp.add_argument("--dump-plan", dest="dump_plan", action="store_true", default=S)
        return sp

    bench = common(sub.add_parser("contract-bench", help="contract all-ones (or random) closed L x L networks"))
    bench.add_argument("--l-min", dest="l_min", type=int, default=S)
    bench.add_argument("--l-max", dest="l_max", type=int, default=S)
    bench.add_argument("--bands", type=int, default=S, help="row-band count for the row plan")
    bench.add_argument("--random", action="store_true", default=S, help="splitmix64 random entries instead of ones")
    ite = common(sub.add_parser("ite", help="imaginary-time evolution from the uniform state"))
    ite.add_argument("--early-stop", dest="early_stop", action="store_true", default=S)
    sweep = common(sub.add_parser("sweep", help="ITE + observables over a gamma grid"))
    sweep.add_argument("--reuse-state", dest="reuse_state", action="store_true", default=S)
    sweep.add_argument("--early-stop", dest="early_stop", action="store_true", default=S)
    common(sub.add_parser("ed", help="exact ground state and observables"))
    return p


def parse_config(argv: list[str]) -> RunConfig:
    """Parse flags (and an optional config file); raises ConfigError listing every problem."""
    ns = vars(build_parser().parse_args(argv))
    errors: list[str] = []
    values: dict = {}
    path = ns.pop("config", None)
    if path is not None:
        try:
            values.update(read_config_file(path, errors))
        except OSError as exc:
            errors.append(f"config: {exc}")
    values.update(ns)
    cfg = RunConfig(**values)
    errors.extend(cfg.validate())
    if errors:
        raise ConfigError(errors)
    return cfg


# -- subcommands -------------------------------------------------------------


def _out_dir(cfg: RunConfig) -> Path | None:
    if not cfg.out:
        return None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_plan(cfg: RunConfig, plan, name: str) -> None:
    out = _out_dir(cfg)
    if out is not None:
        (out / f"plan_{name}.txt").write_text(plan.dumps())
    else:
        sys.stderr.write(f"# plan {name}\n{plan.dumps()}")


def bench_rows(cfg: RunConfig):
    plans = [cfg.plan] if cfg.plan else ["row", "quadrant"]
    for L in range(cfg.l_min, cfg.l_max + 1):
        net = random_network(L, L, cfg.chi, cfg.seed) if cfg.random else all_ones_network(L, L, cfg.chi)
        for kind in plans:
            plan = plan_row(net, min(cfg.bands, L)) if kind == "row" else plan_quadrant(net)
            if cfg.dump_plan:
                _dump_plan(cfg, plan, f"L{L}_{kind}")
            predicted = estimate_cost(net, plan)
            messages = count_cross_worker_steps(plan)
            row = {"L": L, "chi": cfg.chi, "plan": kind, "peak_elements": predicted.peak_elements}
            if predicted.peak_elements > cfg.ceiling:
                yield {**row, "scalar": "OOM", "seconds": "", "messages": messages, "bytes": ""}
                continue
            t0 = time.perf_counter()
            try:
                if cfg.parallel:
                    value, stats, cost = execute_plan_parallel(net, plan, cfg.ceiling)
                    messages, nbytes = stats.messages_sent, stats.bytes_sent
                else:
                    value, cost = execute_plan_sequential(net, plan, cfg.ceiling)
                    nbytes = ""
            except MemoryCeilingError:
                yield {**row, "scalar": "OOM", "seconds": "", "messages": messages, "bytes": ""}
                continue
            seconds = time.perf_counter() - t0
            scalar = repr(value) if cfg.random else repr(float(np.log2(value)))
            yield {**row, "scalar": scalar, "seconds": f"{seconds:.6f}", "peak_elements": cost.peak_elements,
                   "messages": messages, "bytes": nbytes}


def cmd_contract_bench(cfg: RunConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    out = _out_dir(cfg)
    fh = open(out / "contract_bench.csv", "w", newline="") if out else None
    writers = [csv.DictWriter(stdout, BENCH_COLUMNS, lineterminator="\n")]
    if fh:
        writers.append(csv.DictWriter(fh, BENCH_COLUMNS, lineterminator="\n"))
    try:
        for w in writers:
            w.writeheader()
        for row in bench_rows(cfg):
            for w in writers:
                w.writerow(row)
            stdout.flush()
    finally:
        if fh:
            fh.close()
    return 0


def _final_contraction_metrics(lat, cfg: RunConfig) -> dict:
    net = build_double_layer(lat)
    plan = plan_row(net) if cfg.plan == "row" else plan_quadrant(net)
    if cfg.parallel:
        _, stats, cost = execute_plan_parallel(net, plan, cfg.ceiling)
        return {"peak_elements": cost.peak_elements, "messages_sent": stats.messages_sent,
                "bytes_sent": stats.bytes_sent, "message_stats": stats.to_json()}
    cost = estimate_cost(net, plan)
    return {"peak_elements": cost.peak_elements, "messages_sent": 0, "bytes_sent": 0}


def cmd_ite(cfg: RunConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    out = _out_dir(cfg)
    icfg = cfg.ite_config()
    if cfg.dump_plan:
        net = build_double_layer(init_uniform(cfg.lh, cfg.lw))
        _dump_plan(cfg, plan_row(net) if cfg.plan == "row" else plan_quadrant(net), f"{cfg.lh}x{cfg.lw}_{cfg.plan or 'quadrant'}")
    trace_fh = open(out / "trace.csv", "w", newline="") if out else None
    if trace_fh:
        trace_fh.write(",".join(TRACE_COLUMNS) + "\n")

    def on_trace(e):
        if trace_fh:
            trace_fh.write(f"{e.step},{e.energy!r},{e.norm!r},{e.max_chi},{e.elapsed_s:.6f}\n")
            trace_fh.flush()

    t0 = time.perf_counter()
    try:
        res = ite_run(icfg, init_uniform(cfg.lh, cfg.lw), on_trace=on_trace)
    finally:
        if trace_fh:
            trace_fh.close()
    t_report = time.perf_counter()
    rep = full_report(res.lattice, cfg.j, cfg.gamma, cfg.contract_options())
    report_seconds = time.perf_counter() - t_report
    runtime = time.perf_counter() - t0
    row = report_row(rep, cfg.gamma, cfg.j, cfg.chi_max, cfg.epsilon, res.steps_done, runtime)
    text = write_report_csv([row])
    stdout.write(text)
    if out:
        (out / "report.csv").write_text(text)
        save_checkpoint(res.lattice, out / "state.peps")
        metrics = {
            "one_body_seconds": res.times.one_body,
            "two_body_seconds": res.times.two_body,
            "normalize_seconds": res.times.normalize,
            "expectation_seconds": res.times.expectation,
            "report_seconds": report_seconds,
            "total_seconds": runtime,
            "max_discarded_weight": res.max_discarded,
            **_final_contraction_metrics(res.lattice, cfg),
            "config": asdict(cfg),
        }
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    return 0


def sweep_rows(cfg: RunConfig):
    lat0 = init_uniform(cfg.lh, cfg.lw)
    prev = None
    for g in cfg.gamma_grid():
        t0 = time.perf_counter()
        try:
            start = prev if (cfg.reuse_state and prev is not None) else lat0
            res = ite_run(cfg.ite_config(g), start)
            rep = full_report(res.lattice, cfg.j, g, cfg.contract_options())
            prev = res.lattice
            row = report_row(rep, g, cfg.j, cfg.chi_max, cfg.epsilon, res.steps_done, time.perf_counter() - t0)
            row["error"] = ""
        except (IteError, MemoryCeilingError, ArithmeticError, ValueError) as exc:
            log.warning("gamma=%s failed: %s", g, exc)
            row = {k: "" for k in REPORT_COLUMNS}
            row.update(gamma=repr(float(g)), J=repr(float(cfg.j)), Lh=str(cfg.lh), Lw=str(cfg.lw),
                       error=f"{type(exc).__name__}: {exc}")
        yield row


def cmd_sweep(cfg: RunConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    out = _out_dir(cfg)
    cols = REPORT_COLUMNS + ["error"]
    fh = open(out / "sweep.csv", "w", newline="") if out else None
    writers = [csv.DictWriter(stdout, cols, lineterminator="\n")]
    if fh:
        writers.append(csv.DictWriter(fh, cols, lineterminator="\n"))
    try:
        for w in writers:
            w.writeheader()
        for row in sweep_rows(cfg):
            for w in writers:
                w.writerow(row)
            stdout.flush()
            if fh:
                fh.flush()
    finally:
        if fh:
            fh.close()
    return 0


def cmd_ed(cfg: RunConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    t0 = time.perf_counter()
    res = ed_mod.ground_state(cfg.lh, cfg.lw, cfg.j, cfg.gamma)
    rep = ed_mod.ed_observables(res, cfg.j, cfg.gamma)
    row = report_row(rep, cfg.gamma, cfg.j, runtime_s=time.perf_counter() - t0)
    row["ground_energy"] = repr(res.ground_energy)
    text = write_report_csv([row], ["ground_energy"])
    stdout.write(text)
    out = _out_dir(cfg)
    if out:
        (out / "ed.csv").write_text(text)
    return 0


COMMANDS = {"contract-bench": cmd_contract_bench, "ite": cmd_ite, "sweep": cmd_sweep, "ed": cmd_ed}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        for e in exc.errors:
            sys.stderr.write(f"error: {e}\n")
        return 2
    try:
        return COMMANDS[cfg.command](cfg)
    except (PlanError, MemoryCeilingError, IteError, ed_mod.EdError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
