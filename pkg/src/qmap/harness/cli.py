"""Command-line entry point: ``qmap <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from qmap.fit.dti import FitError, dti_maps
from qmap.fit.noddi import NoddiFitter
from qmap.forward.dataset import DatasetError, generate_dataset, read_dataset
from qmap.forward.simulate import SimConfig, SimulationError
from qmap.harness.experiment import ExperimentError, run_experiment
from qmap.harness.metrics import MetricError, nrmse_per_parameter
from qmap.harness.phantom import DTI_NAMES, NODDI_NAMES
from qmap.qmatrix import QmatrixConfig, QmatrixShapeError
from qmap.regressor.infer import InferenceError, infer_volume
from qmap.regressor.io import WeightFileError, load_network, save_network
from qmap.regressor.network import NetworkError, init_network, mlp_spec, resconv_spec
from qmap.regressor.train import TrainConfig, TrainingError, train
from qmap.scheme import GradientScheme, SchemeError, condition_number, group_shells, select_subset
from qmap.volume import Volume, VolumeFormatError, read_volume, write_volume

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DATA_ERRORS = (SchemeError, DatasetError, VolumeFormatError, WeightFileError, InferenceError,
               QmatrixShapeError, NetworkError, MetricError, SimulationError, OSError)
NUMERIC_ERRORS = (TrainingError, FloatingPointError, np.linalg.LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _snr_range(text: str):
    if text.lower() == "none":
        return None
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from exc
    if not 0 < lo <= hi:
        raise argparse.ArgumentTypeError("SNR bounds must satisfy 0 < LO <= HI")
    return lo, hi


def _load_scheme(path: str) -> GradientScheme:
    p = Path(path)
    if not p.exists() and path in ("dti_a", "dti_b", "noddi_a", "noddi_b"):
        return GradientScheme.builtin(path)
    return GradientScheme.load(p)


def cmd_scheme(args) -> int:
    scheme = _load_scheme(args.inp)
    if args.action == "stats":
        shells = group_shells(scheme)
        out = {"n_dw": len(scheme), "n_b0": scheme.n_b0, "shells": [
            {"b": float(s.b), "n": int(len(s.indices))} for s in shells.shells]}
        try:
            out["condition_number"] = float(condition_number(scheme))
        except SchemeError as exc:
            out["condition_number"] = None
            out["note"] = str(exc)
        print(json.dumps(out, indent=2))
        return EXIT_OK
    if args.k is None:
        raise UsageError("subset needs --k")
    sub = select_subset(scheme, args.k, n_candidates=args.candidates, seed=args.seed)
    text = sub.to_text()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    _log(f"condition number {condition_number(sub):.4f}")
    return EXIT_OK


def cmd_gen(args) -> int:
    q_cfg = QmatrixConfig.for_model(args.model, q_n=args.qn, variant=args.variant)
    cfg = SimConfig.for_model(args.model, n_protons=args.protons)
    ds = generate_dataset(args.model, args.n, cfg, q_cfg, seed=args.seed, path=args.out,
                          snr_range=args.snr)
    _log(f"wrote {len(ds)} samples, input {ds.inputs.shape[1:]}, seed {args.seed}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = read_dataset(args.dataset)
    out_dim = ds.labels.shape[1]
    if args.net == "mlp":
        if ds.q_n:
            raise DatasetError("an MLP needs a padded-signal dataset, not Qmatrices")
        spec = mlp_spec(ds.model, out_dim, width=ds.channels, seed=args.seed)
    else:
        if not ds.q_n:
            raise DatasetError("resconv needs a Qmatrix dataset")
        enc = {k: v for k, v in ds.meta.get("input", {}).items() if k != "kind"}
        q_cfg = QmatrixConfig(**enc) if enc else QmatrixConfig.for_model(ds.model, q_n=ds.q_n)
        spec = resconv_spec(ds.inputs.shape[1:], out_dim, model=ds.model,
                            encoding={"kind": "qmatrix", **q_cfg.to_dict()}, seed=args.seed,
                            head=args.head)
    net = init_network(spec)
    cfg = TrainConfig(epochs=args.epochs, batch=args.batch, seed=args.seed)
    net, hist = train(net, ds.inputs, ds.labels, cfg, log=_log)
    save_network(args.out, net)
    _log(f"best epoch {hist.best_epoch + 1}, {hist.seconds:.1f} s, seed {args.seed}")
    return EXIT_OK


def _mask(path, shape):
    if path is None:
        return None
    m = read_volume(path).data
    m = m[..., 0] if m.shape != shape and m.shape[:-1] == shape else m
    if m.shape != shape:
        raise InferenceError(f"mask shape {m.shape} does not match volume {shape}")
    return m > 0


def cmd_infer(args) -> int:
    net = load_network(args.weights)
    scheme = _load_scheme(args.scheme)
    vol = read_volume(args.signals)
    mask = _mask(args.mask, vol.data.shape[:-1])
    maps = infer_volume(net, vol.data, scheme, mask)
    names = DTI_NAMES if net.spec.model == "dti" else NODDI_NAMES
    write_volume(args.out, Volume(maps, names, net.spec.model))
    return EXIT_OK


def cmd_fit(args) -> int:
    scheme = _load_scheme(args.scheme)
    vol = read_volume(args.signals)
    if vol.data.shape[-1] != len(scheme):
        raise InferenceError(f"volume has {vol.data.shape[-1]} signals, scheme {len(scheme)}")
    spatial = vol.data.shape[:-1]
    mask = _mask(args.mask, spatial)
    mask = np.ones(spatial, dtype=bool) if mask is None else mask
    data = vol.data.astype(float)
    if args.model == "dti":
        out = np.zeros(spatial + (4,))
        out[mask] = dti_maps(data[mask], scheme).stack()
        names = DTI_NAMES
    else:
        out = np.zeros(spatial + (3,))
        out[mask] = NoddiFitter(scheme).fit_many(data[mask])
        names = NODDI_NAMES
    write_volume(args.out, Volume(out, names, args.model))
    return EXIT_OK


def cmd_eval(args) -> int:
    pred, ref = read_volume(args.pred), read_volume(args.ref)
    if pred.data.shape != ref.data.shape:
        raise MetricError(f"prediction {pred.data.shape} and reference {ref.data.shape} differ")
    spatial = ref.data.shape[:-1]
    mask = _mask(args.mask, spatial)
    names = ref.names or tuple(f"p{i}" for i in range(ref.data.shape[-1]))
    scores = nrmse_per_parameter(pred.data, ref.data, names, mask)
    report = {"nrmse": {n: {"mean": v, "std": 0.0} for n, v in scores.items()},
              "pred": str(args.pred), "ref": str(args.ref)}
    Path(args.out).write_text(json.dumps(report, indent=2))
    print(json.dumps(scores))
    return EXIT_OK


def cmd_experiment(args) -> int:
    report = run_experiment(args.config, log=_log)
    for row in report.rows:
        vals = ", ".join(f"{k} {v['mean']:.2f}±{v['std']:.2f}%" for k, v in row["nrmse"].items())
        print(f"{row['method']:>14s} {row['scheme']:>10s}: {vals}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qmap", description="Scheme-agnostic diffusion parameter mapping.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("scheme", help="scheme statistics or condition-number subset selection")
    s.add_argument("action", choices=["stats", "subset"])
    s.add_argument("--in", dest="inp", required=True, help="scheme file or builtin name")
    s.add_argument("--k", type=int)
    s.add_argument("--candidates", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_scheme)

    g = sub.add_parser("gen", help="simulate a training dataset")
    g.add_argument("--model", choices=["dti", "noddi"], required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--qn", type=int, default=20)
    g.add_argument("--variant", choices=["2d", "3d"], default="2d")
    g.add_argument("--snr", type=_snr_range, default=(30.0, 100.0), help="LO:HI or none")
    g.add_argument("--protons", type=int, default=10_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a network on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--net", choices=["resconv", "mlp"], default="resconv")
    t.add_argument("--head", choices=["gap", "flatten"], default="gap")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch", type=int, default=100)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="estimate parameter maps with trained weights")
    i.add_argument("--weights", required=True)
    i.add_argument("--scheme", required=True)
    i.add_argument("--signals", required=True)
    i.add_argument("--mask")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    f = sub.add_parser("fit", help="conventional model fitting")
    f.add_argument("--model", choices=["dti", "noddi"], required=True)
    f.add_argument("--scheme", required=True)
    f.add_argument("--signals", required=True)
    f.add_argument("--mask")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="NRMSE of predicted maps against reference maps")
    e.add_argument("--pred", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--mask")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="run a JSON-configured experiment")
    x.add_argument("--config", required=True)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qmap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExperimentError as exc:
        print(f"qmap: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc.cause, NUMERIC_ERRORS + (FitError,)) else EXIT_DATA
    except NUMERIC_ERRORS as exc:
        print(f"qmap: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FitError as exc:
        print(f"qmap: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DATA_ERRORS as exc:
        print(f"qmap: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
