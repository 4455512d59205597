"""Case files, reports and the command-line interface.

The report keeps the forensic scientist's output (likelihoods and likelihood
ratios, which never depend on priors) apart from the court's output
(posteriors, odds and verdicts, which do).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np

from .inference import (
    DECISION_MODES,
    DEFAULT_THETA,
    CaseResult,
    InferenceError,
    PriorConfig,
    StructureError,
    Verdict,
    category_prior_grid,
    decide,
    likelihood_table,
    pi_h_grid,
    posterior_factorized,
    posterior_general,
    sensitivity_sweep,
)
from .model import CategoryCatalog, CategoryModel, Evidence, ModelError, count_likelihood_evaluations
from .oracle import OracleError, discrepancy_report, mc_checks, quadrature_checks
from .synth import ScenarioSpec, calibration_experiment, error_rate_experiment

log = logging.getLogger("forensic_posterior")

SCHEMA_VERSION = 1
RENORMALIZE_TOL = 1e-9

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_H1 = 10


class CaseFileError(ValueError):
    """A case or scenario file that does not parse or validate; names the offending path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class PriorRenormalizedWarning(UserWarning):
    pass


_number = {"type": "number"}
_vector = {"type": "array", "items": _number, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_prob_map = {"type": "object", "additionalProperties": _number}

_CATALOG_SCHEMA = {
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "object",
        "additionalProperties": False,
        "required": ["id", "label", "mean", "between_cov", "within_cov"],
        "properties": {
            "id": {"type": "string", "minLength": 1, "pattern": r"^[A-Za-z0-9_.-]+$"},
            "label": {"type": "string"},
            "mean": _vector,
            "between_cov": _matrix,
            "within_cov": _matrix,
        },
    },
}
_PRIORS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["suspect", "trace", "h1_given_category"],
    "properties": {"suspect": _prob_map, "trace": _prob_map, "h1_given_category": _prob_map},
}

CASE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "catalog", "priors", "evidence"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "catalog": _CATALOG_SCHEMA,
        "priors": _PRIORS_SCHEMA,
        "evidence": {
            "type": "object",
            "additionalProperties": False,
            "required": ["suspect_recordings", "trace_recordings"],
            "properties": {"suspect_recordings": _matrix, "trace_recordings": _matrix},
        },
        "threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "catalog", "priors"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "catalog": _CATALOG_SCHEMA,
        "priors": _PRIORS_SCHEMA,
        "truth_priors": _PRIORS_SCHEMA,
        "recordings_per_side": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "suspect": {"type": "integer", "minimum": 1},
                "trace": {"type": "integer", "minimum": 1},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}


def _reject_constant(name: str):
    raise CaseFileError("$", f"non-finite number {name} is not allowed")


def _load_json(text: str, schema: dict) -> dict:
    try:
        data = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise CaseFileError("$", f"malformed JSON: {exc}") from None
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise CaseFileError(_path(e.absolute_path), e.message)
    return data


def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _parse_catalog(items: list[dict]) -> CategoryCatalog:
    cats = []
    for i, c in enumerate(items):
        try:
            cats.append(CategoryModel(c["id"], c["label"], c["mean"], c["between_cov"], c["within_cov"]))
        except (ModelError, ValueError) as exc:
            raise CaseFileError(f"$.catalog[{i}]", str(exc)) from None
    try:
        return CategoryCatalog(tuple(cats))
    except ModelError as exc:
        raise CaseFileError("$.catalog", str(exc)) from None


def _simplex(weights: dict[str, float], path: str, catalog: CategoryCatalog) -> dict[str, float]:
    for k, v in weights.items():
        if k not in catalog:
            raise CaseFileError(f"{path}.{k}", "unknown category id")
        if v < 0:
            raise CaseFileError(f"{path}.{k}", f"negative probability {v}")
    total = math.fsum(weights.values())
    if abs(total - 1.0) > RENORMALIZE_TOL:
        raise CaseFileError(path, f"probabilities sum to {total!r}, not 1")
    if total != 1.0:
        warnings.warn(f"{path} sums to {total!r}; renormalized", PriorRenormalizedWarning, stacklevel=3)
        weights = {k: v / total for k, v in weights.items()}
    return weights


def _parse_priors(d: dict, path: str, catalog: CategoryCatalog) -> PriorConfig:
    suspect = _simplex(d["suspect"], f"{path}.suspect", catalog)
    trace = _simplex(d["trace"], f"{path}.trace", catalog)
    for k, v in d["h1_given_category"].items():
        if k not in catalog:
            raise CaseFileError(f"{path}.h1_given_category.{k}", "unknown category id")
        if not 0.0 <= v <= 1.0:
            raise CaseFileError(f"{path}.h1_given_category.{k}", f"probability {v} outside [0, 1]")
    try:
        prior = PriorConfig(suspect, trace, d["h1_given_category"])
        prior.check_against(catalog)
    except ValueError as exc:
        raise CaseFileError(path, str(exc)) from None
    return prior


@dataclass(frozen=True)
class CaseFile:
    catalog: CategoryCatalog
    prior: PriorConfig
    evidence: Evidence
    threshold: float = DEFAULT_THETA
    schema_version: int = SCHEMA_VERSION


def parse_case_file(text: str) -> CaseFile:
    data = _load_json(text, CASE_SCHEMA)
    catalog = _parse_catalog(data["catalog"])
    prior = _parse_priors(data["priors"], "$.priors", catalog)
    ev = data["evidence"]
    try:
        evidence = Evidence(ev["suspect_recordings"], ev["trace_recordings"])
        evidence.check_dim(catalog.dim)
    except ModelError as exc:
        raise CaseFileError("$.evidence", str(exc)) from None
    return CaseFile(catalog, prior, evidence, float(data.get("threshold", DEFAULT_THETA)))


def _catalog_json(catalog: CategoryCatalog) -> list[dict]:
    return [
        {
            "id": c.id,
            "label": c.label,
            "mean": c.mean.tolist(),
            "between_cov": c.between_cov.tolist(),
            "within_cov": c.within_cov.tolist(),
        }
        for c in catalog
    ]


def _priors_json(prior: PriorConfig) -> dict:
    return {
        "suspect": dict(prior.suspect),
        "trace": dict(prior.trace),
        "h1_given_category": dict(prior.h1_given_category),
    }


def serialize_case_file(case: CaseFile) -> str:
    data = {
        "schema_version": case.schema_version,
        "catalog": _catalog_json(case.catalog),
        "priors": _priors_json(case.prior),
        "evidence": {
            "suspect_recordings": case.evidence.suspect_recordings.tolist(),
            "trace_recordings": case.evidence.trace_recordings.tolist(),
        },
        "threshold": case.threshold,
    }
    return json.dumps(data, indent=2) + "\n"


def parse_scenario_file(text: str, seed: int | None = None) -> ScenarioSpec:
    data = _load_json(text, SCENARIO_SCHEMA)
    catalog = _parse_catalog(data["catalog"])
    prior = _parse_priors(data["priors"], "$.priors", catalog)
    truth = None
    if "truth_priors" in data:
        truth = _parse_priors(data["truth_priors"], "$.truth_priors", catalog)
    per_side = data.get("recordings_per_side", {})
    return ScenarioSpec(
        catalog,
        prior,
        suspect_recordings=per_side.get("suspect", 1),
        trace_recordings=per_side.get("trace", 1),
        seed=data.get("seed", 0) if seed is None else seed,
        truth_prior=truth,
    )


def bundled_case_path(name: str = "running_example.json") -> Path:
    return Path(__file__).parent / "data" / name


# -- reports -----------------------------------------------------------------

def _fmt(v: Any) -> str:
    if isinstance(v, Verdict):
        return v.value
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _log10(x: float) -> float:
    return math.log10(x) if x > 0 else -math.inf


def _lin(log_value: float) -> float:
    return math.exp(log_value) if log_value < 709.0 else math.inf


Entries = list[tuple[str, Any]]


@dataclass
class Report:
    """Ordered key/value sections; keys and their order are stable."""

    scientist: Entries | None = None
    court: Entries | None = None
    oracle: Entries | None = None
    verdict: Verdict | None = None
    extra: dict[str, Entries] = field(default_factory=dict)

    def sections(self) -> list[tuple[str, Entries]]:
        out = [(n, s) for n, s in (("scientist", self.scientist), ("court", self.court), ("oracle", self.oracle)) if s is not None]
        return out + list(self.extra.items())

    def render(self, output: str = "text") -> str:
        lines = []
        for name, entries in self.sections():
            if output == "machine":
                lines += [f"{name}.{k}={_fmt(v)}" for k, v in entries]
            else:
                lines.append(f"[{name}]")
                width = max((len(k) for k, _ in entries), default=0)
                lines += [f"  {k.ljust(width)}  {_fmt(v)}" for k, v in entries]
                lines.append("")
        return "\n".join(lines).rstrip("\n") + "\n"


def scientist_section(catalog: CategoryCatalog, evidence: Evidence) -> Entries:
    """Likelihood-side quantities only; no prior enters."""
    table = likelihood_table(evidence, catalog)
    ref = catalog.ids[0]
    out: Entries = [
        ("dim", catalog.dim),
        ("n_suspect_recordings", evidence.suspect_recordings.shape[0]),
        ("n_trace_recordings", evidence.trace_recordings.shape[0]),
        ("reference_category", ref),
    ]
    for k in catalog.ids:
        log_rh = table.log_rh(k)
        ls = table.suspect[k] - table.suspect[ref]
        lr = table.trace[k] - table.trace[ref]
        out += [
            (f"suspect.loglik.{k}", table.suspect[k]),
            (f"trace.loglik.{k}", table.trace[k]),
            (f"same_source.loglik.{k}", table.same_source[k]),
            (f"suspect.log_lr.{k}", ls),
            (f"suspect.log10_lr.{k}", ls / math.log(10)),
            (f"trace.log_lr.{k}", lr),
            (f"trace.log10_lr.{k}", lr / math.log(10)),
            (f"log_rh.{k}", log_rh),
            (f"log10_rh.{k}", log_rh / math.log(10)),
            (f"rh.{k}", _lin(log_rh)),
        ]
    return out


def court_section(result: CaseResult, evaluations: int) -> Entries:
    out: Entries = [
        ("method", result.method),
        ("theta", result.theta),
        ("intersection", ",".join(result.intersection) or "-"),
        ("likelihood_evaluations", evaluations),
    ]
    for name, post in (("suspect_posterior", result.suspect_posterior), ("trace_posterior", result.trace_posterior)):
        if post is None:
            continue
        for k in result.category_ids:
            out += [(f"{name}.{k}", post[k]), (f"log10_{name}.{k}", _log10(post[k]))]
    for k, p in result.h1_posterior.items():
        out += [(f"h1_posterior.{k}", p), (f"log10_h1_posterior.{k}", _log10(p))]
    if result.log_lr_components is not None:
        for name, v in zip(("log_ra", "log_rg", "log_rh"), result.log_lr_components):
            out.append((name, v))
    if result.odds_components is not None:
        for name, o in zip(("odds_a", "odds_g", "odds_h"), result.odds_components):
            out += [(name, o), (f"log10_{name}", _log10(o))]
    out += [
        ("posterior", result.posterior),
        ("log10_posterior", _log10(result.posterior)),
        ("odds", result.odds),
        ("log10_odds", _log10(result.odds)),
    ]
    if result.additive is not None:
        out += [
            ("additive_odds", result.additive.approx),
            ("epsilon", result.additive.epsilon),
            ("epsilon_bound_ok", result.additive.bound_ok),
        ]
    for mode, v in result.verdicts.items():
        out.append((f"verdict.{mode}", v))
    return out


def oracle_section(case: CaseFile) -> Entries:
    rep = discrepancy_report(case.evidence, case.catalog, case.prior)
    return [
        ("formula_posterior", rep.formula_posterior),
        ("exact_posterior", rep.exact_posterior),
        ("absolute_gap", rep.absolute_gap),
        ("relative_gap", rep.relative_gap),
    ]


def run_case(
    case: CaseFile,
    mode: str = "general",
    theta: float | None = None,
    rule: str = "exact",
    scientist: bool = True,
    court: bool = True,
    oracle: bool = False,
) -> Report:
    """Evaluate a case file into a report; ``report.verdict`` follows ``rule``."""
    theta = case.threshold if theta is None else theta
    report = Report()
    if scientist:
        report.scientist = scientist_section(case.catalog, case.evidence)
    if court:
        fn = {"general": posterior_general, "factorized": posterior_factorized}[mode]
        with count_likelihood_evaluations() as counter:
            result = fn(case.evidence, case.catalog, case.prior, theta)
        log.info("court: %d likelihood evaluations", counter.count)
        report.court = court_section(result, counter.count)
        report.verdict = decide(result, theta, rule)
        report.court.append(("decision_rule", rule))
        report.court.append(("decision", report.verdict))
    if oracle:
        report.oracle = oracle_section(case)
    return report


# -- CLI ---------------------------------------------------------------------

def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CaseFileError(path, f"cannot read file: {exc.strerror}") from None


def _linspace_arg(text: str) -> list[float]:
    try:
        a, b, n = text.split(":")
        return np.linspace(float(a), float(b), int(n)).tolist()
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b:n, got {text!r}") from None


def _prior_grid_arg(text: str) -> tuple[str, str, list[float]]:
    try:
        side, cid, rest = text.split(":", 2)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected side:category:a:b:n, got {text!r}") from None
    if side not in ("suspect", "trace"):
        raise argparse.ArgumentTypeError(f"side must be suspect or trace, got {side!r}")
    return side, cid, _linspace_arg(rest)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", choices=("text", "machine"), default="text")
    common.add_argument(
        "--log-domain", action="store_true", help="accepted for compatibility; log values are always emitted"
    )
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="forensic-posterior",
        description="Same-source posterior and likelihood ratios over relevant sub-populations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a case file")
    p.add_argument("file")

    p = sub.add_parser("lr", parents=[common], help="scientist output: likelihoods and LRs only")
    p.add_argument("file")

    p = sub.add_parser("posterior", parents=[common], help="court output: posteriors and odds")
    p.add_argument("file")
    p.add_argument("--mode", choices=("general", "factorized"), default="general")

    p = sub.add_parser("decide", parents=[common], help="apply a reasonable-doubt threshold")
    p.add_argument("file")
    p.add_argument("--theta", type=float, default=None, help="default: the file's threshold, else 1e-4")
    p.add_argument("--rule", choices=DECISION_MODES, default="exact")
    p.add_argument("--mode", choices=("general", "factorized"), default="general")

    p = sub.add_parser("report", parents=[common], help="scientist, court and oracle sections together")
    p.add_argument("file")
    p.add_argument("--mode", choices=("general", "factorized"), default="general")
    p.add_argument("--no-oracle", action="store_true")

    p = sub.add_parser("sweep", parents=[common], help="posterior over a grid of priors")
    p.add_argument("file")
    p.add_argument("--pi-h", type=_linspace_arg, help="a:b:n grid for every H1 prior")
    p.add_argument(
        "--prior-grid", type=_prior_grid_arg, action="append", default=[],
        help="side:category:a:b:n, vary one category weight (repeatable)",
    )
    p.add_argument("--theta", type=float, default=None)

    p = sub.add_parser("simulate", parents=[common], help="synthetic calibration or error-rate study")
    p.add_argument("--spec", required=True)
    p.add_argument("--cases", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--calibration", action="store_true")
    g.add_argument("--error-rates", action="store_true")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--theta", type=float, default=DEFAULT_THETA)
    p.add_argument("--rule", choices=DECISION_MODES, default="exact")
    p.add_argument("--source", choices=("formula", "oracle"), default="formula")

    p = sub.add_parser("oracle", parents=[common], help="numerical cross-checks")
    p.add_argument("file")
    p.add_argument("--check", choices=("marginal", "joint", "posterior"), default="posterior")
    p.add_argument("--mc-samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_sweep(case: CaseFile, args) -> Report:
    grid = [case.prior]
    if args.pi_h:
        grid = [q for p in grid for q in pi_h_grid(p, args.pi_h)]
    for side, cid, values in args.prior_grid:
        grid = [q for p in grid for q in category_prior_grid(p, side, cid, values)]
    theta = case.threshold if args.theta is None else args.theta
    rows = sensitivity_sweep(case.evidence, case.catalog, grid, theta)
    entries: Entries = [("rows", len(rows))]
    for i, row in enumerate(rows):
        for k in case.catalog.ids:
            entries.append((f"{i}.suspect_prior.{k}", row.prior.suspect.get(k, 0.0)))
        for k in case.catalog.ids:
            entries.append((f"{i}.trace_prior.{k}", row.prior.trace.get(k, 0.0)))
        for k, v in row.prior.h1_given_category.items():
            entries.append((f"{i}.h1_prior.{k}", v))
        entries += [
            (f"{i}.posterior", row.posterior),
            (f"{i}.log10_posterior", _log10(row.posterior)),
            (f"{i}.odds", row.odds),
            (f"{i}.log10_odds", _log10(row.odds)),
            (f"{i}.verdict", row.verdict),
        ]
    return Report(extra={"sweep": entries})


def _cmd_simulate(args) -> Report:
    spec = parse_scenario_file(_read(args.spec), args.seed)
    if args.calibration:
        table = calibration_experiment(spec, args.cases, args.bins, args.source)
        entries: Entries = [("cases", args.cases), ("source", args.source), ("seed", spec.seed)]
        for i, b in enumerate(table):
            entries += [
                (f"bin.{i}.lower", b.lower),
                (f"bin.{i}.upper", b.upper),
                (f"bin.{i}.count", b.count),
                (f"bin.{i}.mean_predicted", b.mean_predicted),
                (f"bin.{i}.h1_frequency", b.h1_frequency),
                (f"bin.{i}.std_error", b.std_error),
                (f"bin.{i}.flagged", b.flagged),
            ]
        return Report(extra={"calibration": entries})
    r = error_rate_experiment(spec, args.cases, args.theta, args.rule, args.source)
    return Report(
        extra={
            "error_rates": [
                ("cases", r.n_cases),
                ("source", args.source),
                ("seed", spec.seed),
                ("theta", r.theta),
                ("rule", r.mode),
                ("true_h1", r.true_h1),
                ("found_h1", r.found_h1),
                ("false_h1", r.false_h1),
                ("false_h2", r.false_h2),
                ("false_h1_rate", r.false_h1_rate),
                ("false_h1_ci_low", r.false_h1_ci[0]),
                ("false_h1_ci_high", r.false_h1_ci[1]),
                ("false_h2_rate", r.false_h2_rate),
                ("false_h2_ci_low", r.false_h2_ci[0]),
                ("false_h2_ci_high", r.false_h2_ci[1]),
                ("mean_h2_posterior_found_h1", r.mean_h2_posterior_found_h1),
            ]
        }
    )


def _cmd_oracle(case: CaseFile, args) -> Report:
    if args.check == "posterior":
        return Report(oracle=oracle_section(case))
    entries: Entries = []
    wanted = ("suspect", "trace") if args.check == "marginal" else ("same_source",)
    if case.catalog.dim <= 2:
        entries.append(("method", "quadrature"))
        for name, cid, closed, quad in quadrature_checks(case.evidence, case.catalog):
            if name in wanted:
                entries += [
                    (f"{name}.{cid}.closed_form", closed),
                    (f"{name}.{cid}.quadrature", quad),
                    (f"{name}.{cid}.relative_error", abs(math.expm1(quad - closed))),
                ]
    else:
        entries.append(("method", "monte_carlo"))
        for name, cid, closed, est, se in mc_checks(case.evidence, case.catalog, args.mc_samples, args.seed):
            if name in wanted:
                entries += [
                    (f"{name}.{cid}.closed_form", closed),
                    (f"{name}.{cid}.mc_estimate", est),
                    (f"{name}.{cid}.mc_std_error", se),
                    (f"{name}.{cid}.z", (est - closed) / se if se > 0 else 0.0),
                ]
    return Report(oracle=entries)


def _error(kind: str, message: str, output: str) -> None:
    if output == "machine":
        print(f"error.kind={kind}\nerror.message={message}", file=sys.stderr)
    else:
        print(f"error ({kind}): {message}", file=sys.stderr)


def cli(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    output = args.output
    try:
        if args.command == "simulate":
            report = _cmd_simulate(args)
            status = EXIT_OK
        else:
            case = parse_case_file(_read(args.file))
            status = EXIT_OK
            if args.command == "validate":
                report = Report(
                    extra={
                        "validate": [
                            ("ok", True),
                            ("categories", len(case.catalog)),
                            ("dim", case.catalog.dim),
                            ("threshold", case.threshold),
                        ]
                    }
                )
            elif args.command == "lr":
                report = run_case(case, court=False)
            elif args.command == "posterior":
                report = run_case(case, mode=args.mode, scientist=False)
            elif args.command == "decide":
                report = run_case(case, mode=args.mode, theta=args.theta, rule=args.rule, scientist=False)
                status = EXIT_H1 if report.verdict is Verdict.H1 else EXIT_OK
            elif args.command == "report":
                report = run_case(case, mode=args.mode, oracle=not args.no_oracle)
            elif args.command == "sweep":
                report = _cmd_sweep(case, args)
            else:
                report = _cmd_oracle(case, args)
    except StructureError as exc:
        _error("structure", str(exc), output)
        return EXIT_VALIDATION
    except (CaseFileError, ModelError) as exc:
        _error("validation", str(exc), output)
        return EXIT_VALIDATION
    except (InferenceError, OracleError, FloatingPointError, np.linalg.LinAlgError) as exc:
        _error("numeric", str(exc), output)
        return EXIT_NUMERIC
    except ValueError as exc:
        _error("validation", str(exc), output)
        return EXIT_VALIDATION
    sys.stdout.write(report.render(output))
    return status


def main() -> None:
    sys.exit(cli())
