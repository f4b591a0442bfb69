"""Command-line interface.

Exit codes: 0 success, 2 usage or config error, 3 numerical failure,
4 file/format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import synth
from .errors import ArgumentError, FormatError, NumericalError, WandaError
from .model_store import load_calibration, load_checkpoint, save_calibration, save_checkpoint
from .numerics import NormKind
from .pipeline import Comparison, PruneConfig, compare_methods, evaluate, oracle_best_row, prune_model
from .prune_core import NM, Grouping, Metric, Ratio, compute_scores, prune_quota, select_mask, verify_reduction
from .reconstruct import UpdatePolicy

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
REDUCTION_TOL = 1e-6
CLI_ORACLE_MAX = 12


class UsageError(ArgumentError):
    pass


def _dims(text: str) -> list[int]:
    try:
        dims = [int(p) for p in text.split(",")]
    except ValueError:
        raise UsageError(f"--dims must be comma-separated integers, got {text!r}") from None
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise UsageError(f"--dims needs at least two positive sizes, got {text!r}")
    return dims


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def cmd_gen_model(args) -> int:
    save_checkpoint(synth.gen_random_model(_dims(args.dims), args.seed), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gen_calib(args) -> int:
    if not (0.0 <= args.outlier_frac <= 1.0):
        raise UsageError(f"--outlier-frac must lie in [0, 1], got {args.outlier_frac}")
    batch = synth.gen_outlier_batch(args.tokens, args.dim, args.outlier_frac, args.outlier_scale, args.seed)
    save_calibration(batch, args.out)
    print(f"wrote {args.out} ({batch.n_tokens} x {batch.c_in})")
    return EXIT_OK


def _config_from_args(args) -> PruneConfig:
    if args.sparsity is not None and args.nm is not None:
        raise UsageError("give either --sparsity or --nm, not both")
    target = NM.parse(args.nm) if args.nm is not None else Ratio(0.5 if args.sparsity is None else args.sparsity)
    return PruneConfig(
        metric=Metric(args.method),
        grouping=Grouping.parse(args.group),
        target=target,
        update=UpdatePolicy.parse(args.update),
        norm=NormKind(args.norm),
        lam=None if args.lam == "auto" else _float(args.lam, "--lambda"),
        seed=args.seed,
    )


def _float(text: str, flag: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"{flag} expects a number or 'auto', got {text!r}") from None


def cmd_prune(args) -> int:
    cfg = _config_from_args(args)
    model = load_checkpoint(args.model)
    batch = load_calibration(args.calib)
    pruned, report = prune_model(model, batch, cfg, threads=args.threads)
    save_checkpoint(pruned, args.out)
    _write_json(args.report, report.to_dict())
    if args.csv:
        Path(args.csv).write_text(Comparison([(cfg.label, report)]).to_csv(), encoding="utf-8")
    for r in report.layers:
        print(f"{r.layer_name}: sparsity {r.achieved_sparsity:.4f}  rel error {r.recon_error_rel:.6g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate(load_checkpoint(args.dense), load_checkpoint(args.pruned), load_calibration(args.calib))
    for r in report.layers:
        print(f"{r.layer_name}: sparsity {r.achieved_sparsity:.4f}  fro {r.recon_error_fro:.6g}  rel {r.recon_error_rel:.6g}")
    print(f"output rel error {report.totals['output_error_rel']:.6g}")
    if args.report:
        _write_json(args.report, report.to_dict())
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        spec = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}: malformed JSON ({exc})") from exc
    entries = spec.get("configs") if isinstance(spec, dict) else spec
    if not isinstance(entries, list) or not entries:
        raise UsageError("config file needs a non-empty 'configs' array")
    configs = [PruneConfig.from_dict(e) for e in entries]
    table = compare_methods(load_checkpoint(args.model), load_calibration(args.calib), configs, threads=args.threads)
    for label, rep in table.rows:
        t = rep.totals
        print(f"{label}: sparsity {t['achieved_sparsity']:.4f}  mean rel error {t['recon_error_rel']:.6g}")
    if args.report:
        _write_json(args.report, table.to_dict())
    if args.csv:
        Path(args.csv).write_text(table.to_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_check_reduction(args) -> int:
    rng = synth.make_rng(args.seed, 2)
    w = rng.standard_normal((args.rows, args.cols))
    x = rng.standard_normal((args.tokens, args.cols))
    dev = verify_reduction(w, x)
    ok = dev < REDUCTION_TOL
    print(f"max relative deviation {dev:.3e} ({'ok' if ok else 'FAIL'}, tol {REDUCTION_TOL:g})")
    return EXIT_OK if ok else 1


def cmd_oracle(args) -> int:
    if not (1 <= args.cin <= CLI_ORACLE_MAX):
        raise UsageError(f"--cin must lie in [1, {CLI_ORACLE_MAX}], got {args.cin}")
    if not (0.0 <= args.sparsity < 1.0):
        raise UsageError(f"--sparsity must lie in [0, 1), got {args.sparsity}")
    w = synth.gen_random_model([args.cin, args.rows], args.seed).layers[0].weight.astype(np.float64)
    x = synth.gen_outlier_batch(args.tokens, args.cin, args.outlier_frac, args.outlier_scale, args.seed).data
    x = x.astype(np.float64)
    k = prune_quota(args.cin, args.sparsity)
    best = np.array([oracle_best_row(w[i], x, k)[1] for i in range(args.rows)])
    print(f"rows {args.rows}, inputs {args.cin}, pruned per row {k}")
    print(f"{'method':<10} {'mean error':>12} {'mean excess':>12} {'optimal rows':>13}")
    print(f"{'oracle':<10} {best.mean():>12.6g} {0.0:>12.6g} {1.0:>13.2%}")
    for metric in Metric:
        mask = select_mask(compute_scores(metric, w, x), Grouping("output"), Ratio(args.sparsity))
        errs = np.linalg.norm(x @ (w * mask - w).T, axis=0)
        hit = np.mean(errs <= best * (1 + 1e-9) + 1e-12)
        print(f"{metric.value:<10} {errs.mean():>12.6g} {(errs - best).mean():>12.6g} {hit:>13.2%}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wanda", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-model", help="write a random layered model")
    g.add_argument("--dims", required=True, help="comma-separated layer widths, e.g. 64,64,64")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_model)

    g = sub.add_parser("gen-calib", help="write a calibration batch with outlier features")
    g.add_argument("--tokens", type=int, default=512)
    g.add_argument("--dim", type=int, default=64)
    g.add_argument("--outlier-frac", type=float, default=synth.DEFAULT_OUTLIER_FRAC)
    g.add_argument("--outlier-scale", type=float, default=synth.DEFAULT_OUTLIER_SCALE)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_calib)

    g = sub.add_parser("prune", help="prune a checkpoint layer by layer")
    g.add_argument("--model", required=True)
    g.add_argument("--calib", required=True)
    g.add_argument("--method", choices=[m.value for m in Metric], default="wanda")
    g.add_argument("--group", default="per-output", help="per-output|per-layer|per-input|in:K|out:K")
    g.add_argument("--sparsity", type=float)
    g.add_argument("--nm", help="structured N:M target, e.g. 2:4")
    g.add_argument("--update", default="none", help="none|sequential|iterative:K")
    g.add_argument("--lambda", dest="lam", default="auto")
    g.add_argument("--norm", choices=[n.value for n in NormKind], default="l2")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--out", required=True)
    g.add_argument("--report", required=True)
    g.add_argument("--csv")
    g.set_defaults(func=cmd_prune)

    g = sub.add_parser("eval", help="reconstruction errors of a pruned model against its dense original")
    g.add_argument("--dense", required=True)
    g.add_argument("--pruned", required=True)
    g.add_argument("--calib", required=True)
    g.add_argument("--report")
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("compare", help="run several pruning configs from a JSON file")
    g.add_argument("--model", required=True)
    g.add_argument("--calib", required=True)
    g.add_argument("--config", required=True)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--report")
    g.add_argument("--csv")
    g.set_defaults(func=cmd_compare)

    g = sub.add_parser("check-reduction", help="check that diagonal second-order scores equal wanda squared")
    g.add_argument("--rows", type=int, default=64)
    g.add_argument("--cols", type=int, default=64)
    g.add_argument("--tokens", type=int, default=256)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_check_reduction)

    g = sub.add_parser("oracle", help="per-method error against the exhaustive optimum")
    g.add_argument("--cin", type=int, required=True)
    g.add_argument("--rows", type=int, default=32)
    g.add_argument("--sparsity", type=float, default=0.5)
    g.add_argument("--tokens", type=int, default=128)
    g.add_argument("--outlier-frac", type=float, default=synth.DEFAULT_OUTLIER_FRAC)
    g.add_argument("--outlier-scale", type=float, default=synth.DEFAULT_OUTLIER_SCALE)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except WandaError as exc:  # pragma: no cover - every subclass is handled above
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
