"""``cebag`` command line.

Exit codes: 0 ok, 2 invalid input, 3 degenerate evaluation (one label class),
4 endpoint lacks per-token logprobs, 5 some collection tasks failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import metrics, report, synthetic, traceio
from .collector import EndpointClient, EndpointConfig, collect_batch, load_tasks, resolve_api_key
from .errors import CapabilityError, DegenerateLabelsError, ValidationError
from .scoring import DEFAULT_LAMBDA_GRID, score_sample

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DEGENERATE = 3
EXIT_INCAPABLE = 4
EXIT_PARTIAL = 5


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _external(text: str) -> tuple[str, str]:
    name, sep, path = text.partition("=")
    if not sep or not name or not path:
        raise argparse.ArgumentTypeError(f"expected name=path, got {text!r}")
    return name, path


def _load_scores_any(path: Path):
    if traceio.sniff_kind(path) == "scores":
        return traceio.load_scores(path)
    return [score_sample(p) for p in traceio.load_corpus(path)]


def cmd_score(args) -> int:
    scores = [score_sample(p) for p in traceio.load_corpus(args.input)]
    traceio.save_scores(scores, args.output)
    print(f"scored {len(scores)} samples -> {args.output}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    src = Path(args.input)
    scores = _load_scores_any(src)
    external = {}
    for name, path in args.external or []:
        with open(path, "rb") as fh:
            external[name] = traceio.read_external_scores(fh)
    reports = metrics.evaluate_scores(
        scores,
        external,
        green_threshold=args.green_threshold,
        lambda_grid=args.lambda_grid,
        stability_thresholds=args.thresholds,
        detectors=args.detectors,
    )
    sys.stdout.write(report.render_eval(reports))
    out = Path(args.out) if args.out else src.with_name(src.name + ".eval.json")
    out.write_text(
        report.report_json(reports, source=src.name, n_samples=len(scores), green_threshold=args.green_threshold),
        encoding="utf-8",
    )
    out.with_suffix(".csv").write_text(report.render_eval(reports, "csv"), encoding="utf-8")
    print(f"report -> {out} (+ {out.with_suffix('.csv').name})", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    src = Path(args.input)
    scores = _load_scores_any(src)
    if any(s.green_score is None for s in scores):
        raise ValidationError("sweep needs a green_score on every sample")
    reports = metrics.evaluate_scores(
        scores,
        green_threshold=args.green_threshold,
        lambda_grid=args.lambda_grid,
        stability_thresholds=args.thresholds,
    )
    labels = metrics.derive_labels(scores, args.green_threshold)
    lam_sweep = metrics.lambda_sweep(scores, labels, args.lambda_grid)
    best = metrics.best_lambda(lam_sweep)[0]

    st_header, st_rows = report.stability_rows(reports)
    lam_rows = report.lambda_rows(lam_sweep, best)
    out = sys.stdout
    out.write("AUC (%) across GREEN thresholds\n")
    out.write(report.aligned(st_header, st_rows))
    out.write(f"\nlambda sweep at green threshold {args.green_threshold} (best lambda = {best})\n")
    out.write(report.aligned(report.LAMBDA_COLUMNS, lam_rows))
    st_csv = report.to_csv(st_header, st_rows)
    lam_csv = report.to_csv(report.LAMBDA_COLUMNS, lam_rows)
    if args.out_dir:
        d = Path(args.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "stability.csv").write_text(st_csv, encoding="utf-8")
        (d / "lambda_sweep.csv").write_text(lam_csv, encoding="utf-8")
    else:
        out.write("\n" + st_csv + "\n" + lam_csv)
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            spec = synthetic.SyntheticSpec.from_dict(json.load(fh))
    else:
        spec = synthetic.get_preset(args.preset)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.green_coupling is not None:
        spec = synthetic.with_coupling(spec, args.green_coupling)
    corpus = synthetic.generate_corpus(spec)
    traceio.save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} samples -> {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_pmi_check(args) -> int:
    res = synthetic.run_pmi_trials(
        args.size, args.trials, args.seed, corrupt=1e-9 if args.corrupt_identity else 0.0
    )
    print(
        f"pmi-check: {res.trials} tables, {res.cells} cells, "
        f"max |gain - pmi| = {res.max_abs_diff:.3e}, violations = {res.violations} "
        f"(tolerance {res.tolerance:g})"
    )
    return EXIT_OK if res.ok else 1


def cmd_collect(args) -> int:
    cfg = EndpointConfig(
        base_url=args.endpoint,
        model_name=args.model,
        api_key=resolve_api_key(args.credentials),
        timeout=args.timeout,
        max_in_flight=args.max_in_flight,
        retry_budget=args.retry_budget,
        log_bodies=args.log_bodies,
    )
    tasks = load_tasks(args.tasks)
    with EndpointClient(cfg, base_dir=Path(args.tasks).resolve().parent) as client:
        client.probe()
        summary = collect_batch(
            tasks, client, args.out, resume=args.resume,
            progress=lambda msg: print(msg, file=sys.stderr),
        )
    print(
        f"collected {summary.succeeded}, failed {summary.failed}, skipped {summary.skipped} "
        f"(of {len(tasks)} tasks)"
    )
    return EXIT_PARTIAL if summary.failed else EXIT_OK


def cmd_report(args) -> int:
    doc, reports = report.load_report_json(Path(args.input).read_text(encoding="utf-8"))
    if args.format == "text":
        sys.stdout.write(f"source: {doc.get('source')}  samples: {doc.get('n_samples')}  "
                         f"green threshold: {doc.get('green_threshold')}\n")
    sys.stdout.write(report.render_eval(reports, args.format))
    if args.stability:
        header, rows = report.stability_rows(reports)
        render = {"csv": report.to_csv, "markdown": report.markdown}.get(args.format, report.aligned)
        sys.stdout.write("\n" + render(header, rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cebag", description="Deterministic hallucination detection from log-probability traces.")
    p.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("score", help="compute detector scores for a corpus")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_score)

    def eval_opts(sp):
        sp.add_argument("input", help="corpus or score file")
        sp.add_argument("--green-threshold", type=float, default=metrics.DEFAULT_GREEN_THRESHOLD)
        sp.add_argument("--thresholds", type=_float_list, default=list(metrics.DEFAULT_STABILITY_THRESHOLDS),
                        help="GREEN thresholds for the stability sweep")
        sp.add_argument("--lambda-grid", type=_float_list, default=list(DEFAULT_LAMBDA_GRID))

    e = sub.add_parser("eval", help="AUC/AUG table per detector")
    eval_opts(e)
    e.add_argument("--detectors", type=lambda t: [x for x in t.split(",") if x], default=None)
    e.add_argument("--external", type=_external, action="append", metavar="NAME=PATH",
                   help="externally computed scores, one {sample_id, score} object per line")
    e.add_argument("--out", help="JSON report path (CSV twin written next to it)")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="GREEN-threshold stability and lambda sweeps")
    eval_opts(w)
    w.add_argument("--out-dir", help="write stability.csv and lambda_sweep.csv here instead of stdout")
    w.set_defaults(func=cmd_sweep)

    y = sub.add_parser("synth", help="generate a synthetic labelled corpus")
    g = y.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", help=f"one of {sorted(synthetic.PRESETS)}")
    g.add_argument("--spec", help="JSON file with SyntheticSpec fields")
    y.add_argument("--seed", type=int)
    y.add_argument("--green-coupling", type=float)
    y.add_argument("--out", required=True)
    y.set_defaults(func=cmd_synth)

    m = sub.add_parser("pmi-check", help="verify gain == PMI on random discrete joints")
    m.add_argument("--size", type=int, default=16, help="max table side")
    m.add_argument("--trials", type=int, default=100)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--corrupt-identity", action="store_true", help=argparse.SUPPRESS)
    m.set_defaults(func=cmd_pmi_check)

    c = sub.add_parser("collect", help="collect traces from an inference endpoint")
    c.add_argument("tasks")
    c.add_argument("--endpoint", required=True, help="base URL, e.g. http://host:8000/v1")
    c.add_argument("--model", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--max-in-flight", type=int, default=4)
    c.add_argument("--resume", action="store_true")
    c.add_argument("--timeout", type=float, default=120.0)
    c.add_argument("--retry-budget", type=int, default=2)
    c.add_argument("--credentials", help="JSON file with an api_key (else $CEBAG_API_KEY)")
    c.add_argument("--log-bodies", action="store_true", help="log full request/response bodies")
    c.set_defaults(func=cmd_collect)

    r = sub.add_parser("report", help="render a saved eval report")
    r.add_argument("input")
    r.add_argument("--format", choices=("text", "markdown", "csv"), default="text")
    r.add_argument("--stability", action="store_true", help="also render the threshold sweep")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose or getattr(args, "log_bodies", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DegenerateLabelsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except CapabilityError as exc:
        print(f"error: endpoint incapable: {exc}", file=sys.stderr)
        return EXIT_INCAPABLE
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
