"""Command-line front end: ``repalgo run | verify | sweep``."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import List, Optional, Sequence

from . import verify as verify_mod
from .config import parse_scenario
from .consensus import AgreementViolation
from .core_types import Behavior, ConfigError
from .metrics import records_to_csv, summarize, sweep_to_csv, write_records
from .netsim import ScenarioConfig, Simulation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_PROPERTY = 4
EXIT_AGREEMENT = 5

SWEEP_PARAMS = ("p_th", "honest_stake_fraction", "illicit_rate")

log = logging.getLogger("repalgo")


def apply_overrides(config: ScenarioConfig, rounds=None, rng_seed=None, no_reputation=False) -> ScenarioConfig:
    if rounds is not None:
        config = replace(config, rounds=rounds)
    if rng_seed is not None:
        config = replace(config, rng_seed=rng_seed)
    if no_reputation:
        config = replace(config, params=replace(config.params, reputation_enabled=False))
    return config.validate()


def rescale_honest_stake(config: ScenarioConfig, fraction: float) -> ScenarioConfig:
    """Redistribute the (unchanged) total stake so honest accounts hold ``fraction`` of it.

    Within each group stakes keep their relative sizes; rounding uses largest
    remainders so the total is preserved exactly.
    """
    if not 0 < fraction < 1:
        raise ConfigError([f"honest_stake_fraction must be in (0, 1), got {fraction}"])
    honest = [a for a in config.accounts if a.honest]
    other = [a for a in config.accounts if not a.honest]
    if not honest or not other:
        raise ConfigError(["honest_stake_fraction sweep needs both honest and non-honest accounts"])
    total = config.total_stake
    new_stake = {}
    for group, share in ((honest, round(fraction * total)), (other, total - round(fraction * total))):
        weights = [max(a.stake, 1) for a in group]
        wsum = sum(weights)
        exact = [share * w / wsum for w in weights]
        base = [int(x) for x in exact]
        order = sorted(range(len(group)), key=lambda n: (base[n] - exact[n], group[n].id))
        for n in order[: share - sum(base)]:
            base[n] += 1
        new_stake.update({a.id: s for a, s in zip(group, base)})
    accounts = tuple(replace(a, stake=new_stake[a.id]) for a in config.accounts)
    return replace(config, accounts=accounts)


def sweep_config(config: ScenarioConfig, param: str, value: float) -> ScenarioConfig:
    if param == "p_th":
        try:
            params = replace(config.params, p_th=value)
        except ConfigError as exc:
            raise ConfigError([f"p_th={value}: {e}" for e in exc.errors])
        return replace(config, params=params).validate()
    if param == "honest_stake_fraction":
        return rescale_honest_stake(config, value).validate()
    if param == "illicit_rate":
        if not any(a.behavior is Behavior.ILLICIT_PROPOSER for a in config.accounts):
            raise ConfigError(["illicit_rate sweep needs at least one illicit_proposer account"])
        accounts = tuple(replace(a, illicit_rate=value) if a.behavior is Behavior.ILLICIT_PROPOSER else a
                         for a in config.accounts)
        return replace(config, accounts=accounts).validate()
    raise ConfigError([f"unknown sweep parameter {param!r}; expected one of {list(SWEEP_PARAMS)}"])


def sweep_row(param: str, value: float, config: ScenarioConfig) -> dict:
    sim = Simulation(config)
    records = sim.run()
    s = summarize(records)
    rep = sim.illicit_reputation
    return {
        "parameter": param,
        "value": value,
        "rounds": s.rounds,
        "mean_ratio_hm": s.mean_ratio_hm,
        "mean_l_hat": s.mean_l_hat,
        "empty_block_rate": s.empty_block_rate,
        "illicit_inclusion_rate": s.illicit_inclusion_rate,
        "mean_illicit_reputation": sum(rep) / len(rep) if rep else None,
    }


def _sweep_job(args):
    return sweep_row(*args)


def run_sweep(config: ScenarioConfig, param: str, values: Sequence[float], jobs: int = 1) -> List[dict]:
    configs = [sweep_config(config, param, v) for v in values]  # fail fast before simulating
    tasks = [(param, v, c) for v, c in zip(values, configs)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_job, tasks))
    return [_sweep_job(t) for t in tasks]


def _parse_values(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError([f"--values must be a comma-separated list of numbers, got {text!r}"])


def _emit(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", newline="") as fh:
        fh.write(text)


def cmd_run(args) -> int:
    config = apply_overrides(parse_scenario(args.config), args.rounds, args.rng_seed, args.no_reputation)
    records = Simulation(config).run()
    if args.out:
        write_records(args.out, records)
    else:
        sys.stdout.write(records_to_csv(records))
    s = summarize(records)
    ratio = "n/a" if s.mean_ratio_hm is None else f"{s.mean_ratio_hm:.4f}"
    print(f"rounds={s.rounds} empty_block_rate={s.empty_block_rate:.4f} "
          f"illicit_inclusion_rate={s.illicit_inclusion_rate:.4f} mean_ratio_hm={ratio} "
          f"mean_steps={s.mean_steps:.2f}", file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify_mod.run_all(quick=args.quick)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_PROPERTY if failed else EXIT_OK


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise ConfigError([f"unknown sweep parameter {args.param!r}; expected one of {list(SWEEP_PARAMS)}"])
    values = _parse_values(args.values)
    if not values:
        raise ConfigError(["--values is empty"])
    config = apply_overrides(parse_scenario(args.config), args.rounds, args.rng_seed, args.no_reputation)
    rows = run_sweep(config, args.param, values, args.jobs)
    _emit(args.out, sweep_to_csv(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repalgo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_flags(p):
        p.add_argument("--config", required=True, metavar="PATH", help="scenario JSON file")
        p.add_argument("--out", metavar="PATH", help="output CSV (default: stdout)")
        p.add_argument("--rounds", type=int, metavar="N", help="override the scenario round count")
        p.add_argument("--rng-seed", type=int, metavar="N", help="override the scenario seed")
        p.add_argument("--no-reputation", action="store_true", help="force the reputation-free baseline")

    run = sub.add_parser("run", help="simulate a scenario and write per-round records")
    scenario_flags(run)
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run the closed-form oracle checks")
    ver.add_argument("--quick", action="store_true", help="fewer Monte Carlo samples")
    ver.set_defaults(func=cmd_verify)

    sw = sub.add_parser("sweep", help="one summary row per parameter value")
    scenario_flags(sw)
    sw.add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_PARAMS)}")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--jobs", type=int, default=1, help="parallel simulations")
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for err in exc.errors:
            print(f"  - {err}", file=sys.stderr)
        return EXIT_CONFIG
    except AgreementViolation as exc:
        print(f"agreement violation: {exc}", file=sys.stderr)
        for node, entry in sorted((exc.trace or {}).items()):
            print(f"  node {node}: {entry}", file=sys.stderr)
        return EXIT_AGREEMENT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
