"""Command-line interface: brainalign <subcommand>."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as dm
from .errors import BrainalignError
from .pipeline import (
    run_component_regression,
    run_probe_task,
    run_rsa,
    run_rsa_trajectory,
    run_voxelwise_regression,
    validate_manifest_tree,
    write_synth_dataset,
)
from .probe import ProbeConfig
from .report import emit_report, load_score_table
from .stats import correlate_alignment_performance
from .stm import cochlear_envelope, load_wav, modulation_features
from .synth import SynthSpec


def _write_json(payload, out):
    if out is None or out == "-":
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(json.dumps(payload, indent=2))


def _cmd_validate(args):
    summary = validate_manifest_tree(args.manifest)
    _write_json(summary, args.out)
    print(f"manifest OK: {summary['catalog_stimuli']} stimuli, "
          f"{len(summary['models'])} models, {len(summary['responses'])} response files")
    return 0


def _cmd_regress(args):
    manifest = dm.load_manifest(args.manifest)
    result = run_voxelwise_regression(
        manifest, args.model, args.dataset,
        subjects=args.subject or None, seed=args.seed, region=args.region,
    )
    if args.components:
        result["component_r2"] = run_component_regression(
            manifest, args.model, seed=args.seed)["component_r2"]
    _write_json(result, args.out)
    print(f"{args.model} on {args.dataset}: R2_m = {result['r2_m']:.4f}")
    return 0


def _cmd_rsa(args):
    manifest = dm.load_manifest(args.manifest)
    if args.trajectory:
        records = run_rsa_trajectory(manifest, args.model, args.dataset,
                                     layers=args.layer or None, region=args.region)
        _write_json({"model_id": args.model, "dataset_id": args.dataset,
                     "records": records}, args.out)
        print(f"{args.model}: {len(records)} (step, layer) trajectory records")
        return 0
    result = run_rsa(manifest, args.model, args.dataset, method=args.method,
                     region=args.region, seed=args.seed,
                     export_rdm_dir=args.export_rdms)
    _write_json(result, args.out)
    print(f"{args.model} on {args.dataset} [{result['method']}]: "
          f"rho_m = {result['rho_m']:.4f}")
    return 0


def _cmd_stm_extract(args):
    catalog = dm.load_catalog(args.catalog)
    base = Path(args.catalog).parent
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for e in catalog.entries:
        if not e.audio_path:
            raise BrainalignError(f"{e.stimulus_id}: no audio_path in catalog")
        w = load_wav(base / e.audio_path)
        tf = cochlear_envelope(w, n_channels=args.n_channels, out_rate=args.out_rate)
        rows.append(modulation_features(tf))
        print(f"extracted {e.stimulus_id}: {rows[-1].size} features")
    matrix = np.asarray(rows)
    npy_path = outdir / "spectrotemporal_l1.npy"
    dm.save_matrix(npy_path, matrix)
    fragment = {
        "catalog": str(Path(args.catalog).resolve()),
        "activations": [
            {"model_id": "spectrotemporal", "layer_id": 1, "path": npy_path.name}
        ],
    }
    (outdir / "manifest_fragment.json").write_text(json.dumps(fragment, indent=2))
    print(f"wrote {npy_path} ({matrix.shape[0]} x {matrix.shape[1]})")
    return 0


def _cmd_probe(args):
    manifest = dm.load_manifest(args.manifest)
    cfg = ProbeConfig(hidden_layers=args.hidden_layers, seed=args.seed,
                      max_iter=args.max_iter)
    result = run_probe_task(manifest, args.model, args.task, cfg)
    _write_json(result, args.out)
    print(f"{args.model} on {result['task']}: {result['metric_name']} = "
          f"{result['metric']:.4f}")
    return 0


def _cmd_correlate(args):
    table = load_score_table(args.scores)
    cells = correlate_alignment_performance(table, filter_threshold=args.threshold)
    _write_json(cells.to_jsonable(), args.out)
    print(f"correlated {len(cells.row_labels)} alignment metrics x "
          f"{len(cells.col_labels)} performance columns over {cells.n_models} models")
    return 0


def _cmd_report(args):
    table = load_score_table(args.scores)
    cells = None
    with_overall = [r for r in table.rows if r.overall is not None]
    if len(with_overall) >= 3:
        try:
            cells = correlate_alignment_performance(table)
        except BrainalignError:
            cells = None
    written = emit_report(table, cells, args.out_dir, topline=args.topline)
    for p in written:
        print(f"wrote {p}")
    return 0


def _cmd_synth(args):
    raw = json.loads(Path(args.spec).read_text())
    spec = SynthSpec(
        n_stimuli=raw.get("n_stimuli", 165),
        n_layers=raw.get("n_layers", 4),
        dims=tuple(raw.get("dims", ())),
        signal_layer=raw.get("signal_layer", 1),
        snr=raw.get("snr", 4.0),
        n_subjects=raw.get("n_subjects", 3),
        n_voxels=raw.get("n_voxels", 200),
        seed=raw.get("seed", 0),
    )
    manifest_path = write_synth_dataset(spec, args.out_dir)
    print(f"wrote synthetic dataset with manifest {manifest_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brainalign",
                                description="Model-brain alignment analysis toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="load and validate everything a manifest references")
    v.add_argument("--manifest", required=True)
    v.add_argument("--out", default=None)
    v.set_defaults(fn=_cmd_validate)

    r = sub.add_parser("regress", help="voxel-wise nested-CV encoding scores")
    r.add_argument("--manifest", required=True)
    r.add_argument("--model", required=True)
    r.add_argument("--dataset", required=True)
    r.add_argument("--subject", action="append", help="restrict to these subjects")
    r.add_argument("--components", action="store_true",
                   help="also regress the six-component matrix")
    r.add_argument("--region", default=None)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default=None)
    r.set_defaults(fn=_cmd_regress)

    s = sub.add_parser("rsa", help="representational similarity against subject responses")
    s.add_argument("--manifest", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--method", choices=["max", "cv"], default="max")
    s.add_argument("--region", default=None)
    s.add_argument("--trajectory", action="store_true",
                   help="treat the model as a checkpoint series")
    s.add_argument("--layer", type=int, action="append",
                   help="layers for the trajectory analysis")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--export-rdms", default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=_cmd_rsa)

    e = sub.add_parser("stm-extract", help="run the spectro-temporal baseline over a catalog")
    e.add_argument("--catalog", required=True)
    e.add_argument("--out-dir", required=True)
    e.add_argument("--n-channels", type=int, default=211)
    e.add_argument("--out-rate", type=float, default=200.0)
    e.set_defaults(fn=_cmd_stm_extract)

    b = sub.add_parser("probe", help="train and evaluate a downstream probe")
    b.add_argument("--manifest", required=True)
    b.add_argument("--model", required=True)
    b.add_argument("--task", required=True)
    b.add_argument("--hidden-layers", type=int, default=0)
    b.add_argument("--max-iter", type=int, default=500)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None)
    b.set_defaults(fn=_cmd_probe)

    c = sub.add_parser("correlate", help="alignment vs performance correlation table")
    c.add_argument("--scores", required=True)
    c.add_argument("--threshold", type=float, default=None,
                   help="keep models with overall score above this")
    c.add_argument("--out", default=None)
    c.set_defaults(fn=_cmd_correlate)

    t = sub.add_parser("report", help="emit CSV/JSON/SVG report for a score table")
    t.add_argument("--scores", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--topline", type=float, default=None)
    t.set_defaults(fn=_cmd_report)

    y = sub.add_parser("synth", help="generate a manifest-compatible synthetic dataset")
    y.add_argument("--spec", required=True)
    y.add_argument("--out-dir", required=True)
    y.set_defaults(fn=_cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except BrainalignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
