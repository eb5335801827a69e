"""Config-driven pipeline: simulate, train, infer on phantoms, evaluate."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qmap.fit.dti import dti_maps
from qmap.fit.noddi import NoddiFitter
from qmap.forward.dataset import SimulatedSamples, encode_samples, pad_signals, simulate_samples
from qmap.forward.simulate import SimConfig
from qmap.harness.metrics import nrmse_per_parameter
from qmap.harness.phantom import make_phantom, phantom_signals
from qmap.harness.stats import wilcoxon_rank_sum
from qmap.qmatrix import QmatrixConfig
from qmap.regressor.infer import infer_volume
from qmap.regressor.io import save_network
from qmap.regressor.network import Network, init_network, mlp_spec, resconv_spec
from qmap.regressor.train import TrainConfig, train
from qmap.scheme import GradientScheme, select_subset
from qmap.volume import Volume, write_volume

LABEL_DIM = {"dti": 4, "noddi": 3}


class ExperimentError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class EvalReport:
    """Per-parameter NRMSE rows (mean and std over phantoms), timings and the config echo."""

    rows: list = field(default_factory=list)
    comparisons: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)

    def row(self, method: str, scheme: str) -> dict:
        for r in self.rows:
            if r["method"] == method and r["scheme"] == scheme:
                return r
        raise KeyError((method, scheme))

    def mean_nrmse(self, method: str, scheme: str) -> float:
        """Average over parameters of the per-parameter mean NRMSE."""
        r = self.row(method, scheme)
        return float(np.mean([v["mean"] for v in r["nrmse"].values()]))

    def to_dict(self) -> dict:
        return {"rows": self.rows, "comparisons": self.comparisons, "timings": self.timings,
                "training": self.training, "config": self.config}


DEFAULTS = {
    "model": "dti",
    "seed": 0,
    "out_dir": None,
    "train": {"n_samples": 50000, "epochs": 10, "snr": [30.0, 100.0], "n_protons": 10000,
              "engine": "moment", "batch": 100, "lr0": 1e-3, "decay": 0.87, "val_fraction": 0.1},
    "networks": [{"name": "resconv", "kind": "resconv", "q_n": 20}],
    "eval": {"schemes": ["dti_a", "dti_b"], "phantoms": 5, "shape": [16, 16, 4], "snr": 50.0,
             "n_protons": 10000, "conventional": True},
}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


def resolve_scheme(entry) -> tuple[str, GradientScheme]:
    """A scheme entry is a builtin name, a file path, or
    ``{"builtin"|"path": ..., "subset": k, "seed": s, "name": ...}``."""
    if isinstance(entry, str):
        entry = {"builtin": entry} if "/" not in entry and "." not in entry else {"path": entry}
    if "builtin" in entry:
        scheme, name = GradientScheme.builtin(entry["builtin"]), entry["builtin"]
    else:
        scheme, name = GradientScheme.load(entry["path"]), Path(entry["path"]).stem
    if "subset" in entry:
        scheme = select_subset(scheme, entry["subset"], seed=entry.get("seed", 0))
        name = f"{name}_k{entry['subset']}"
    return entry.get("name", name), scheme


def _network_for(net_cfg: dict, model: str, seed: int) -> tuple[Network, QmatrixConfig | None]:
    kind = net_cfg.get("kind", "resconv")
    out_dim = LABEL_DIM[model]
    if kind == "mlp":
        spec = mlp_spec(model, out_dim, width=net_cfg.get("width"), seed=seed)
        return init_network(spec), None
    q_cfg = QmatrixConfig.for_model(model, q_n=net_cfg.get("q_n", 20),
                                    variant=net_cfg.get("variant", "2d"))
    opts = {k: net_cfg[k] for k in ("channels", "blocks", "hidden", "head", "coords", "features",
                                 "first_kernel")
            if k in net_cfg}
    spec = resconv_spec(q_cfg.shape, out_dim, model=model,
                        encoding={"kind": "qmatrix", **q_cfg.to_dict()}, seed=seed, **opts)
    return init_network(spec), q_cfg


def _conventional_maps(model: str, signals: np.ndarray, scheme: GradientScheme, mask) -> np.ndarray:
    if model == "dti":
        out = np.zeros(mask.shape + (4,))
        out[mask] = dti_maps(signals[mask], scheme).stack()
        return out
    out = np.zeros(mask.shape + (3,))
    out[mask] = NoddiFitter(scheme).fit_many(signals[mask])
    return out


def run_experiment(config, log=None) -> EvalReport:
    """Run the pipeline described by ``config`` (a dict or a JSON file path).

    Stages: ``gen`` simulates one training pool per distinct acquisition
    (random schemes, or a fixed ``train_scheme`` for scheme-locked
    networks); ``train`` fits every network; ``infer`` and ``eval`` score
    each network, and the conventional fit, on every evaluation scheme
    over several phantoms. Writes ``report.json``, weights and maps when
    ``out_dir`` is set.
    """
    if not isinstance(config, dict):
        config = json.loads(Path(config).read_text())
    cfg = _merge(DEFAULTS, config)
    model, seed = cfg["model"], int(cfg["seed"])
    out_dir = Path(cfg["out_dir"]) if cfg["out_dir"] else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    say = log or (lambda msg: None)
    report = EvalReport(config=cfg)
    tc = cfg["train"]
    train_cfg = TrainConfig(batch=tc["batch"], lr0=tc["lr0"], decay=tc["decay"], epochs=tc["epochs"],
                            val_fraction=tc["val_fraction"], seed=seed)
    sim_cfg = SimConfig.for_model(model, n_protons=tc["n_protons"])

    stage = "gen"
    try:
        t0 = time.perf_counter()
        pools: dict = {}
        for net_cfg in cfg["networks"]:
            key = net_cfg.get("train_scheme")
            if key in pools:
                continue
            fixed = resolve_scheme(key)[1] if key else None
            say(f"gen: simulating {tc['n_samples']} {model} samples"
                + (f" on {key}" if key else " on random schemes"))
            pools[key] = simulate_samples(model, tc["n_samples"], sim_cfg, seed, tuple(tc["snr"]),
                                          tc["engine"], fixed)
        report.timings["gen"] = time.perf_counter() - t0

        stage = "train"
        t0 = time.perf_counter()
        nets = {}
        for net_cfg in cfg["networks"]:
            name = net_cfg["name"]
            samples: SimulatedSamples = pools[net_cfg.get("train_scheme")]
            net, q_cfg = _network_for(net_cfg, model, seed)
            if q_cfg is None:
                x = pad_signals(samples.signals, net.spec.input_shape[0])
            else:
                x = encode_samples(samples, q_cfg)
            say(f"train: {name} ({net.n_weights} weights)")
            net, hist = train(net, x, samples.labels.astype(np.float32), train_cfg,
                              log=lambda m, n=name: say(f"  {n} {m}"))
            nets[name] = net
            report.training[name] = hist.to_dict()
            if out_dir:
                save_network(out_dir / f"{name}.qnet", net)
        report.timings["train"] = time.perf_counter() - t0

        stage = "infer"
        ev = cfg["eval"]
        t0 = time.perf_counter()
        per_phantom: dict = {}
        for pi in range(int(ev["phantoms"])):
            phantom = make_phantom(model, tuple(ev["shape"]), seed=seed + 1000 + pi)
            for si, entry in enumerate(ev["schemes"]):
                sname, scheme = resolve_scheme(entry)
                sig = phantom_signals(phantom, scheme, ev["snr"], seed=seed + 2000 + 97 * pi + si,
                                      cfg=SimConfig.for_model(model, n_protons=ev["n_protons"]))
                methods = {name: infer_volume(net, sig, scheme, phantom.mask)
                           for name, net in nets.items()}
                if ev.get("conventional", True):
                    methods["conventional"] = _conventional_maps(model, sig, scheme, phantom.mask)
                for mname, maps in methods.items():
                    scores = nrmse_per_parameter(maps, phantom.reference, phantom.names,
                                                 np.broadcast_to(phantom.mask[..., None], maps.shape)[..., 0])
                    per_phantom.setdefault((mname, sname), []).append(scores)
                    if out_dir and pi == 0:
                        write_volume(out_dir / f"{mname}_{sname}.vol",
                                     Volume(maps, phantom.names, model))
                if out_dir and pi == 0:
                    write_volume(out_dir / f"reference_{sname}.vol",
                                 Volume(phantom.reference, phantom.names, model))
        report.timings["infer"] = time.perf_counter() - t0

        stage = "eval"
        for (mname, sname), scores in per_phantom.items():
            names = list(scores[0])
            report.rows.append({
                "method": mname, "scheme": sname, "n_phantoms": len(scores),
                "nrmse": {n: {"mean": float(np.mean([s[n] for s in scores])),
                              "std": float(np.std([s[n] for s in scores])),
                              "values": [float(s[n]) for s in scores]} for n in names},
            })
        schemes = [resolve_scheme(e)[0] for e in ev["schemes"]]
        methods = sorted({m for m, _ in per_phantom})
        for m in methods:
            for i, a in enumerate(schemes):
                for b in schemes[i + 1:]:
                    ra, rb = report.row(m, a), report.row(m, b)
                    report.comparisons.append({
                        "method": m, "schemes": [a, b],
                        "p": {n: wilcoxon_rank_sum(ra["nrmse"][n]["values"], rb["nrmse"][n]["values"]).p
                              for n in ra["nrmse"]}})
    except ExperimentError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise ExperimentError(stage, exc) from exc

    if out_dir:
        (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    return report
