"""Command-line entry point.

Reports go to standard output (JSON, or CSV for row tables); diagnostics go
to standard error. Exit codes: 0 success, 1 invalid input, 2 a computed
result contradicts a proven bound or the solver lost precision.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.bounds import optimal_lambda, ratio_bound, search_worst_case, verify_pointwise
from src.config import C_GRID, DEFAULT_LAMBDA, LADDER_EPS, get_database_url
from src.database import ResultStore
from src.errors import LabError, PropertyViolation, ValidationError
from src.instance_parser import InstanceParser
from src.ladder import build_ladder, check_lambda, interval_masses
from src.mechanisms import evaluate
from src.montecarlo import cross_validate, simulate
from src.secondbest import build_lp, discretize, export_lp, second_best
from src.simplex import PIVOT_RULES

logger = logging.getLogger(__name__)


class LabArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting with status 2."""

    def error(self, message):
        raise ValidationError(message)


def build_parser() -> LabArgumentParser:
    parser = LabArgumentParser(prog='gftlab', description='Gains-from-trade laboratory for bilateral trade')
    parser.add_argument('--db', help='SQLAlchemy URL of the run archive (default: DATABASE_URL)')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('evaluate', help='FB, fixed price, seller and buyer pricing for an instance')
    p.add_argument('instance')

    p = sub.add_parser('verify', help='check the per-cost bound on a G-quantile grid')
    p.add_argument('instance')
    p.add_argument('--lambda', dest='lam', type=float, default=DEFAULT_LAMBDA)
    p.add_argument('--c-grid', type=int, default=C_GRID)
    p.add_argument('--format', choices=('csv', 'json'), default='csv')

    p = sub.add_parser('ladder', help='quantile ladder of the buyer distribution from a cost')
    p.add_argument('instance')
    p.add_argument('--lambda', dest='lam', type=float, default=DEFAULT_LAMBDA)
    p.add_argument('--c', type=float, required=True)
    p.add_argument('--eps', type=float, default=LADDER_EPS)

    sub.add_parser('lambda-opt', help='quantile parameter minimising the approximation factor')

    p = sub.add_parser('second-best', help='solve the discretised second-best LP')
    p.add_argument('instance')
    p.add_argument('--grid', nargs=2, type=int, metavar=('N', 'M'), required=True)
    p.add_argument('--export-lp', metavar='PATH')
    p.add_argument('--pivot-rule', choices=PIVOT_RULES, default='auto')

    p = sub.add_parser('sample', help='Monte Carlo estimate of a mechanism\'s GFT')
    p.add_argument('instance')
    p.add_argument('--mechanism', default='all',
                   help='fb, fixed, seller, buyer, mixture(a), or all (default)')
    p.add_argument('-n', type=int, default=1_000_000)
    p.add_argument('--seed', type=int, required=True)

    p = sub.add_parser('search', help='random-restart search for instances with a large FB ratio')
    p.add_argument('--trials', type=int, default=200)
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--knots', type=int, default=6)
    p.add_argument('--max-evals', type=int, default=40)

    p = sub.add_parser('history', help='list archived runs')
    p.add_argument('--limit', type=int, default=10)
    return parser


def _emit_json(obj: Any) -> None:
    print(json.dumps(obj, indent=2))


def _emit_csv(header: List[str], rows) -> None:
    writer = csv.writer(sys.stdout, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)


def cmd_evaluate(args, state: Dict[str, Any]) -> None:
    report = evaluate(InstanceParser.load(args.instance))
    state['summary'] = report
    _emit_json(report)


def cmd_verify(args, state: Dict[str, Any]) -> None:
    lam = check_lambda(args.lam)
    inst = InstanceParser.load(args.instance)
    report = verify_pointwise(inst, lam, args.c_grid)
    scale = inst.frame.scale

    summary = report.summary()
    summary['aggregate'] = {k: v * scale for k, v in summary['aggregate'].items()}
    summary['mechanisms'] = {k: v * scale for k, v in summary['mechanisms'].items()}
    summary['min_slack'] *= scale
    state['summary'] = summary

    if args.format == 'csv':
        _emit_csv(
            ['c', 'fb_c', 'sp_c', 'bp_c', 'bound_rhs', 'slack'],
            ([inst.frame.from_unit(r.c), r.fb_c * scale, r.sp_c * scale, r.bp_c * scale,
              r.bound_rhs * scale, r.slack * scale] for r in report.rows)
        )
    else:
        _emit_json(summary)

    if not report.holds:
        raise PropertyViolation(
            f"Bound violated at lambda={lam}: min slack {report.min_slack:.3e}, checks {report.checks}"
        )


def cmd_ladder(args, state: Dict[str, Any]) -> None:
    lam = check_lambda(args.lam)
    inst = InstanceParser.load(args.instance)
    frame = inst.frame
    ladder = build_ladder(inst.buyer, lam, frame.to_unit(args.c), args.eps)
    rows = [(k, frame.from_unit(point), mass, tail) for k, point, mass, tail in interval_masses(ladder)]
    state['summary'] = {'depth': ladder.depth, 'residual_tail': ladder.residual_tail}
    _emit_csv(['k', 'point', 'mass', 'residual_tail'], rows)


def cmd_lambda_opt(args, state: Dict[str, Any]) -> None:
    lam_star, bound = optimal_lambda()
    report = {'lambda_star': lam_star, 'bound': bound, 'bound_at_half': ratio_bound(0.5)}
    state['summary'] = report
    _emit_json(report)


def cmd_second_best(args, state: Dict[str, Any]) -> None:
    inst = InstanceParser.load(args.instance)
    n, m = args.grid
    if args.export_lp:
        Path(args.export_lp).write_text(export_lp(build_lp(discretize(inst, n, m))))
        logger.info(f"Wrote LP model to {args.export_lp}")
    sol = second_best(inst, n, m, args.pivot_rule)
    report = sol.to_json(inst.frame.scale)
    state['summary'] = report
    _emit_json(report)


def cmd_sample(args, state: Dict[str, Any]) -> None:
    inst = InstanceParser.load(args.instance)
    if args.mechanism == 'all':
        reports = cross_validate(inst, args.n, args.seed)
        payload = [r.to_json() for r in reports]
        flagged = [r.mechanism for r in reports if r.flagged]
    else:
        report = simulate(inst, args.mechanism, args.n, args.seed)
        payload = report.to_json()
        flagged = [report.mechanism] if report.flagged else []
    state['summary'] = payload
    _emit_json(payload)
    if flagged:
        raise PropertyViolation(f"Simulation disagrees with the analytic value or fails its audits for {flagged}")


def cmd_search(args, state: Dict[str, Any]) -> None:
    worst = search_worst_case(args.trials, args.seed, args.knots, args.max_evals)
    report = {'ratio': worst.ratio, 'trial': worst.trial, 'instance': worst.instance.to_json()}
    state['summary'] = report
    _emit_json(report)


def cmd_history(args, state: Dict[str, Any]) -> None:
    url = args.db or get_database_url()
    if not url:
        raise ValidationError("history needs --db or DATABASE_URL")
    store = ResultStore(url)
    store.init_db()
    _emit_json(store.recent(args.limit))


COMMANDS = {
    'evaluate': cmd_evaluate,
    'verify': cmd_verify,
    'ladder': cmd_ladder,
    'lambda-opt': cmd_lambda_opt,
    'second-best': cmd_second_best,
    'sample': cmd_sample,
    'search': cmd_search,
    'history': cmd_history,
}


def _archive(url: str, command: str, argv: List[str], code: int, summary: Optional[dict]) -> None:
    try:
        store = ResultStore(url)
        store.init_db()
        store.record(command, argv, code, summary)
    except Exception as e:
        logger.warning(f"Could not archive run: {str(e)}")


def run(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    state: Dict[str, Any] = {'summary': None}
    try:
        COMMANDS[args.command](args, state)
        code = 0
    except LabError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        code = e.exit_code

    url = args.db or get_database_url()
    if url and args.command != 'history':
        _archive(url, args.command, argv, code, state['summary'])
    return code


def main() -> None:
    sys.exit(run())
