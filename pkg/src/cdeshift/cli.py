"""Command-line interface.

Every subcommand writes its outputs plus a ``manifest.json`` (argument hash,
seeds, library versions) into ``--out``.  Failures print a JSON error object
on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .cde_nn import fit_nn_cde
from .cde_series import tune_series
from .data import DataError, Sample, SplitSpec, load_table, save_table, split, standardize
from .diagnostics import diagnose
from .grid import DensityGrid, expected_functional, read_catalog, uniform_grid, write_catalog
from .losses import densities, evaluate
from .persist import load_model, save_model
from .pipeline import Grids, PipelineError, fit_combined, fit_weights_stage
from .simulate import OracleSpec, SelectionScheme, make_oracle, rejection_sample
from .stacking import stack
from .weights import clean_zero_weights, predict_beta

SUBCOMMANDS = ("simulate", "clean", "fit-weights", "fit-cde", "stack", "select-vars", "pipeline",
               "evaluate", "diagnose", "predict", "functional")

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["labeled", "unlabeled", "split", "seed", "output_dir"],
    "additionalProperties": False,
    "properties": {
        "labeled": {"type": "string"},
        "unlabeled": {"type": "string"},
        "pool": {"type": "string"},
        "split": {
            "type": "object",
            "required": ["train", "validation", "test", "seed"],
            "additionalProperties": False,
            "properties": {
                "train": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "validation": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "test": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "grids": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                k: {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}}
                for k in ("M", "N", "B", "eps_ker", "I", "J", "eps_series")
            },
        },
        "corrected": {"type": "boolean"},
        "beta_selection": {"enum": ["forward", "exhaustive", "none"]},
        "cde_selection": {"enum": ["forward", "exhaustive", "none"]},
        "G": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "B_boot": {"type": "integer", "minimum": 0},
        "response_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "output_dir": {"type": "string"},
    },
}


class CliError(Exception):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


# -- helpers -----------------------------------------------------------------


def _versions():
    import scipy

    out = {"cdeshift": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
           "python": platform.python_version(), "kernel_backend": _kernels.BACKEND}
    if _kernels.NUMBA_OK:
        import numba

        out["numba"] = numba.__version__
    return out


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(type(o).__name__)


def _manifest(out: Path, command: str, params: dict, seeds: dict, extra: dict | None = None):
    man = {"command": command, "parameters": params, "config_hash": _hash(params), "seeds": seeds,
           "versions": _versions(), **(extra or {})}
    _write_json(out / "manifest.json", man)
    return man


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _ints(s):
    return [int(v) for v in str(s).split(",") if v.strip()]


def _floats(s):
    return [float(v) for v in str(s).split(",") if v.strip()]


def _params(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func",)}


def _std(sample: Sample, stats):
    return standardize(sample, stats)


def _load(path, labeled, response_range=None):
    return load_table(path, has_response=labeled, response_range=response_range)


def _model_stats(header):
    st = header.get("standardization")
    return None if st is None else [tuple(p) for p in st]


def _prepare_for_model(sample: Sample, header) -> Sample:
    names = header.get("covariate_names")
    if names is not None and list(sample.covariate_names) != list(names):
        raise CliError(f"input columns {list(sample.covariate_names)} do not match model columns {names}", "input")
    stats = _model_stats(header)
    return sample if stats is None else standardize(sample, stats)


class TablePredictor:
    """Serves stored density rows for known covariate matrices."""

    def __init__(self):
        self._table = {}

    def add(self, X, d: DensityGrid):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if len(d) != X.shape[0]:
            raise CliError(f"catalog has {len(d)} rows but data has {X.shape[0]}", "catalog")
        self._table[X.tobytes()] = d

    def predict(self, X):
        key = np.ascontiguousarray(X, dtype=np.float64).tobytes()
        if key not in self._table:
            raise CliError("no catalog rows for the requested covariates", "catalog")
        return self._table[key]


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args):
    out = _outdir(args.out)
    if args.mode == "oracle":
        spec = OracleSpec(d=args.d, n_labeled=args.n_labeled, n_unlabeled=args.n_unlabeled, shift=args.shift,
                          noise=args.noise, seed=args.seed, shift_kind=args.shift_kind,
                          beta_params=tuple(_floats(args.beta_params)))
        o = make_oracle(spec)
        save_table(o.labeled, out / "labeled.csv")
        save_table(o.unlabeled.unlabeled(), out / "unlabeled.csv")
        save_table(o.unlabeled, out / "unlabeled_truth.csv")
        sizes = {"labeled": o.labeled.n, "unlabeled": o.unlabeled.n}
        extra = {"scheme": spec.shift_kind, "sizes": sizes, "pool_size": None}
    else:
        if not args.pool:
            raise CliError("--pool is required for --mode scheme", "pool")
        pool = _load(args.pool, labeled=True)
        bias = args.bias_column
        j = pool.covariate_names.index(bias) if bias in pool.covariate_names else None
        if j is None:
            raise CliError(f"bias column {bias!r} not in pool", "bias_column")
        if args.rescale_bias:
            X = pool.covariates.copy()
            col = X[:, j]
            X[:, j] = (col - col.min()) / (col.max() - col.min())
            pool = Sample(X, pool.response, pool.covariate_names)
        scheme = SelectionScheme(args.scheme, bias_column=bias, seed=args.seed)
        photo = rejection_sample(pool, scheme)
        save_table(photo.unlabeled(), out / "unlabeled.csv")
        save_table(photo, out / "unlabeled_truth.csv")
        extra = {"scheme": scheme.name, "beta_params": list(scheme.beta_params), "pool_size": pool.n,
                 "sizes": {"unlabeled": photo.n}}
    _manifest(out, "simulate", _params(args), {"seed": args.seed}, extra)
    return 0


def cmd_clean(args):
    out = _outdir(args.out)
    pool = _load(args.pool, True)
    cur = _load(args.labeled, True)
    unl = _load(args.unlabeled, False)
    stats = standardize(cur).standardization
    res = clean_zero_weights(_std(pool, stats), _std(cur, stats), _std(unl, stats), args.target_size,
                             _ints(args.m_grid), seed=args.seed)
    chosen = pool.take(_match_rows(_std(pool, stats).covariates, res.sample.covariates))
    save_table(chosen, out / "cleaned.csv")
    _manifest(out, "clean", _params(args), {"seed": args.seed},
              {"zero_fraction": res.zero_fraction, "n_nonzero": res.n_nonzero, "prelim_M": res.prelim_M,
               "size": res.sample.n})
    return 0


def _match_rows(full, subset):
    index = {row.tobytes(): i for i, row in enumerate(np.ascontiguousarray(full))}
    return np.array([index[row.tobytes()] for row in np.ascontiguousarray(subset)], dtype=np.int64)


def _columns(sample, names):
    if not names:
        return None
    out = []
    for n in names.split(","):
        if n not in sample.covariate_names:
            raise CliError(f"unknown column {n!r}", "columns")
        out.append(sample.covariate_names.index(n))
    return out


def cmd_fit_weights(args):
    out = _outdir(args.out)
    LT, UT = _load(args.labeled_train, True), _load(args.unlabeled_train, False)
    LV, UV = _load(args.labeled_val, True), _load(args.unlabeled_val, False)
    stats = standardize(LT).standardization
    LTs, UTs, LVs, UVs = (_std(s, stats) for s in (LT, UT, LV, UV))
    cols = _columns(LT, args.columns)
    if cols is not None:
        from .weights import select_M

        model = select_M(LTs, UTs, LVs, UVs, _ints(args.m_grid), cols)
        trace = None
    else:
        model, trace = fit_weights_stage(LTs, UTs, LVs, UVs, _ints(args.m_grid), args.select)
    header = save_model(model, out / "weights.npz",
                        {"standardization": stats, "covariate_names": list(LT.covariate_names)})
    save_table(LT.with_weights(predict_beta(model, LTs.covariates)), out / "labeled_train_weighted.csv")
    save_table(LV.with_weights(predict_beta(model, LVs.covariates)), out / "labeled_val_weighted.csv")
    _manifest(out, "fit-weights", _params(args), {}, {
        "M": model.M, "covariate_subset": [LT.covariate_names[i] for i in model.covariate_subset],
        "loss_table": header["model"]["loss_table"],
        "selection": None if trace is None else trace.to_dict()})
    return 0


def cmd_fit_cde(args):
    out = _outdir(args.out)
    LT, LV = _load(args.labeled_train, True), _load(args.labeled_val, True)
    UV = _load(args.unlabeled_val, False) if args.unlabeled_val else None
    stats = standardize(LT).standardization
    LTs, LVs = _std(LT, stats), _std(LV, stats)
    UVs = _std(UV, stats) if UV is not None else None
    if args.corrected and (LT.weights is None or LV.weights is None or UVs is None):
        raise CliError("--corrected needs beta columns on labeled tables and --unlabeled-val", "corrected")
    grid = uniform_grid(args.grid_size)
    subset = _columns(LT, args.columns)
    if args.method in ("nn", "ker-nn"):
        variant = "histogram" if args.method == "nn" else "kernel"
        model = fit_nn_cde(LTs, variant, _ints(args.N), LVs, UVs, B_grid=_ints(args.B), eps_grid=_floats(args.eps),
                           corrected=args.corrected, covariate_subset=subset, grid=grid)
    else:
        model = tune_series(LTs, _ints(args.I), _ints(args.J), _floats(args.eps), LVs, UVs, args.corrected, subset,
                            grid)
    header = save_model(model, out / "model.npz",
                        {"standardization": stats, "covariate_names": list(LT.covariate_names)})
    _manifest(out, "fit-cde", _params(args), {}, {"model": header["model"] | {"loss_table": None},
                                                   "loss_table": header["model"]["loss_table"],
                                                   "hyperparameters": model.hyperparameters()})
    return 0


def cmd_stack(args):
    out = _outdir(args.out)
    loaded = [load_model(p) for p in args.models]
    headers = [h for _, h in loaded]
    if any(h.get("standardization") != headers[0].get("standardization") for h in headers):
        raise CliError("component models were standardized differently", "models")
    LV = _prepare_for_model(_load(args.labeled_val, True), headers[0])
    UV = _prepare_for_model(_load(args.unlabeled_val, False), headers[0])
    if LV.weights is None:
        LV = LV.with_weights(np.ones(LV.n))
    model = stack([m for m, _ in loaded], LV, UV)
    save_model(model, out / "model.npz", {k: headers[0].get(k) for k in ("standardization", "covariate_names")})
    _manifest(out, "stack", _params(args), {}, {"alpha": model.alpha, "objective": model.objective_value,
                                                 "B_matrix": model.B_matrix, "b_vector": model.b_vector})
    return 0


def _grids_from(cfg: dict) -> Grids:
    g = Grids()
    for k, v in (cfg or {}).items():
        cast = int if k in ("M", "N", "B", "I", "J") else float
        setattr(g, k, tuple(cast(x) for x in v))
    return g


def _grids_from_args(args) -> Grids:
    g = Grids()
    for k in ("M", "N", "B", "I", "J"):
        v = getattr(args, f"g_{k}", None)
        if v:
            setattr(g, k, tuple(_ints(v)))
    for k in ("eps_ker", "eps_series"):
        v = getattr(args, f"g_{k}", None)
        if v:
            setattr(g, k, tuple(_floats(v)))
    return g


def cmd_select_vars(args):
    out = _outdir(args.out)
    LT, UT = _load(args.labeled_train, True), _load(args.unlabeled_train, False)
    LV, UV = _load(args.labeled_val, True), _load(args.unlabeled_val, False)
    stats = standardize(LT).standardization
    LTs, UTs, LVs, UVs = (_std(s, stats) for s in (LT, UT, LV, UV))
    grids = _grids_from_args(args)
    names = LT.covariate_names
    if args.target == "beta":
        model, trace = fit_weights_stage(LTs, UTs, LVs, UVs, grids.M, args.mode)
        result = {"target": "beta", "trace": trace.to_dict(), "M": model.M}
    else:
        res = fit_combined(LTs, LVs, UTs, UVs, grids, beta_selection=args.mode, cde_selection=args.mode,
                           grid=uniform_grid(args.grid_size))
        trace = res.cde_trace
        result = {"target": "cde", "trace": trace.to_dict(), "beta_trace": res.beta_trace.to_dict()}
    result["selected_names"] = [names[i] for i in trace.subset]
    _write_json(out / "selection.json", result)
    _manifest(out, "select-vars", _params(args), {}, {"selected": result["selected_names"]})
    return 0


def load_config(path) -> dict:
    import jsonschema

    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config: {exc}", "config") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = [str(p) for p in exc.absolute_path]
        if exc.validator == "required":
            path.append(next(k for k in exc.validator_value if k not in exc.instance))
        field = ".".join(path) or "config"
        raise CliError(exc.message, field) from exc
    base = Path(path).parent
    for key in ("labeled", "unlabeled", "pool"):
        if key in cfg:
            p = Path(cfg[key])
            p = p if p.is_absolute() else base / p
            if not p.exists():
                raise CliError(f"file not found: {p}", key)
            cfg[key] = str(p)
    out = Path(cfg["output_dir"])
    cfg["output_dir"] = str(out if out.is_absolute() else base / out)
    sp = cfg["split"]
    try:
        SplitSpec(sp["train"], sp["validation"], sp["test"], sp["seed"])
    except DataError as exc:
        raise CliError(str(exc), "split") from exc
    return cfg


def run_pipeline(cfg: dict):
    """Execute a validated pipeline config; returns ``(result, output_dir)``."""
    out = _outdir(cfg["output_dir"])
    rr = cfg.get("response_range")
    L = _load(cfg["labeled"], True, rr)
    U = load_table(cfg["unlabeled"], has_response="z" in _header(cfg["unlabeled"]), response_range=rr)
    sp = cfg["split"]
    LT, LV, LTe = split(L, SplitSpec(sp["train"], sp["validation"], sp["test"], sp["seed"]))
    UT, UV, UTe = split(U, SplitSpec(sp["train"], sp["validation"], sp["test"], sp["seed"] + 1))
    stats = standardize(LT).standardization
    LT, LV, LTe, UT, UV, UTe = (_std(s, stats) for s in (LT, LV, LTe, UT, UV, UTe))
    grid = uniform_grid(cfg.get("G", 200))
    res = fit_combined(LT, LV, UT.unlabeled(), UV.unlabeled(), _grids_from(cfg.get("grids")),
                       corrected=cfg.get("corrected", True), beta_selection=cfg.get("beta_selection", "forward"),
                       cde_selection=cfg.get("cde_selection", "forward"), grid=grid, labeled_test=LTe,
                       unlabeled_test=UTe if UTe.response is not None else UTe.unlabeled(),
                       B_boot=cfg.get("B_boot", 0), seed=cfg["seed"])
    names = list(L.covariate_names)
    extra = {"standardization": stats, "covariate_names": names}
    header = save_model(res.model, out / "model.npz", extra)
    if res.weight_model is not None:
        save_model(res.weight_model, out / "weights.npz", extra)
    write_catalog(res.model.predict(UTe.covariates), out / "catalog.csv")
    _write_json(out / "losses.json", {k: v.to_dict() for k, v in res.reports.items()})
    _write_json(out / "selection.json", {
        "beta": None if res.beta_trace is None else res.beta_trace.to_dict(),
        "cde": res.cde_trace.to_dict(),
        "selected_names": [names[i] for i in res.subset],
        "validation_loss": res.validation_loss,
        "candidates": res.candidate_losses,
    })
    comps = {k: {"method": c.method, **c.hyperparameters()} for k, c in res.components.items()}
    _manifest(out, "pipeline", cfg, {"seed": cfg["seed"], "split_seed": sp["seed"]}, {
        "model": {"alpha": res.model.alpha, "components": comps, "subset": [names[i] for i in res.subset]},
        "weights": None if res.weight_model is None else {
            "M": res.weight_model.M, "covariate_subset": [names[i] for i in res.weight_model.covariate_subset]},
        "series_eigenvalues": header["model"]["components"][0].get("eigenvalues"),
        "basis": "cosine",
    })
    return res, out


def _header(path):
    with open(path) as fh:
        return [h.strip() for h in fh.readline().split(",")]


def cmd_pipeline(args):
    cfg = load_config(args.config)
    try:
        run_pipeline(cfg)
    except PipelineError as exc:
        raise CliError(exc.message, f"stage:{exc.stage}") from exc
    return 0


def _predictor_for(args, samples):
    """Model predictor, or a catalog-backed predictor over the given samples."""
    if args.model:
        model, header = load_model(args.model)
        return model, [(_prepare_for_model(s, header) if s is not None else None) for s in samples]
    tp = TablePredictor()
    cats = [args.catalog_labeled, args.catalog_unlabeled]
    for s, c in zip(samples, cats):
        if s is not None:
            if c is None:
                raise CliError("a catalog is needed for every evaluation table", "catalog")
            tp.add(s.covariates, read_catalog(c))
    return tp, samples


def cmd_evaluate(args):
    out = _outdir(args.out)
    L = _load(args.labeled, True) if args.labeled else None
    if args.unlabeled:
        U = load_table(args.unlabeled, has_response="z" in _header(args.unlabeled))
    else:
        U = None
    pred, (L, U) = _predictor_for(args, [L, U])
    if args.variant == "shift_corrected" and L is not None and L.weights is None:
        raise CliError("shift-corrected loss needs a beta column on the labeled table", "labeled")
    rep = evaluate(pred, args.variant, L, U, B_boot=args.bootstrap, seed=args.seed)
    row = rep.to_dict()
    (out / "losses.jsonl").write_text(json.dumps(row, sort_keys=True, default=_default) + "\n")
    print(json.dumps(row, sort_keys=True, default=_default))
    _manifest(out, "evaluate", _params(args), {"seed": args.seed})
    return 0


def cmd_diagnose(args):
    out = _outdir(args.out)
    T = _load(args.labeled_test, True)
    pred, (T,) = _predictor_for(args, [T])
    rep = diagnose(pred, T, np.linspace(0.05, 0.95, 19), np.linspace(0.1, 0.9, 9), args.hpd_alpha,
                   self_normalize=not args.literal_n)
    _write_json(out / "diagnostics.json", rep.to_dict())
    with (out / "qq.csv").open("w") as fh:
        fh.write("c,c_hat\n")
        for c, ch in rep.qq:
            fh.write(f"{c:.12g},{ch:.12g}\n")
    with (out / "coverage.csv").open("w") as fh:
        fh.write("alpha,alpha_hat,ci_low,ci_high\n")
        for row in rep.coverage:
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")
    _manifest(out, "diagnose", _params(args), {})
    return 0


def emit_catalog(model, unlabeled: Sample, path) -> int:
    """Score every row and write the density catalog; returns the row count."""
    if unlabeled.n == 0:
        G = model.components[0].grid.size if hasattr(model, "components") else model.grid.size
        return write_catalog(DensityGrid(uniform_grid(G), np.empty((0, G)), True), path)
    return write_catalog(densities(model, unlabeled.covariates), path)


def cmd_predict(args):
    model, header = load_model(args.model)
    S = _prepare_for_model(load_table(args.input, has_response=False), header) if not _has_z(args.input) \
        else _prepare_for_model(load_table(args.input, has_response=True), header)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    n = emit_catalog(model, S, out_path)
    _manifest(out_path.parent, "predict", _params(args), {}, {"rows": n})
    return 0


def _has_z(path):
    return "z" in _header(path)


def cmd_functional(args):
    cat = read_catalog(args.catalog)
    g = np.loadtxt(args.g, delimiter=",", ndmin=1).ravel()
    vals = expected_functional(cat, g) if len(cat) else np.empty(0)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w") as fh:
        fh.write("value\n")
        for v in np.atleast_1d(vals):
            fh.write(f"{v:.12g}\n")
    _manifest(out_path.parent, "functional", _params(args), {}, {"rows": int(np.size(vals))})
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdeshift", description="Conditional density estimation under covariate shift")
    p.add_argument("--threads", type=int, default=None, help="cap on numba worker threads")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True

    s = sub.add_parser("simulate", help="generate oracle data or a beta-biased photometric sample")
    s.add_argument("--mode", choices=["oracle", "scheme"], default="oracle")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--n-labeled", type=int, default=1000)
    s.add_argument("--n-unlabeled", type=int, default=1000)
    s.add_argument("--shift", type=float, default=0.0)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--shift-kind", choices=["location", "beta", "support"], default="location")
    s.add_argument("--beta-params", default="18,4")
    s.add_argument("--pool")
    s.add_argument("--scheme", choices=["scheme1", "scheme2", "scheme3"], default="scheme1")
    s.add_argument("--bias-column", default="r")
    s.add_argument("--rescale-bias", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("clean", help="replace zero-weight labeled rows from a larger pool")
    s.add_argument("--pool", required=True)
    s.add_argument("--labeled", required=True)
    s.add_argument("--unlabeled", required=True)
    s.add_argument("--target-size", type=int, required=True)
    s.add_argument("--m-grid", default="1,2,4,8,16,32")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_clean)

    def data4(s):
        s.add_argument("--labeled-train", required=True)
        s.add_argument("--unlabeled-train", required=True)
        s.add_argument("--labeled-val", required=True)
        s.add_argument("--unlabeled-val", required=True)

    s = sub.add_parser("fit-weights", help="fit nearest-neighbor importance weights")
    data4(s)
    s.add_argument("--m-grid", default="1,2,4,8,16,32")
    s.add_argument("--columns", default=None, help="comma-separated covariates (skips selection)")
    s.add_argument("--select", choices=["forward", "exhaustive", "none"], default="none")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_weights)

    s = sub.add_parser("fit-cde", help="tune one conditional density estimator")
    s.add_argument("--method", choices=["nn", "ker-nn", "series"], required=True)
    s.add_argument("--corrected", action="store_true")
    s.add_argument("--labeled-train", required=True)
    s.add_argument("--labeled-val", required=True)
    s.add_argument("--unlabeled-val")
    s.add_argument("--N", default="5,10,20,40")
    s.add_argument("--B", default="5,10,20")
    s.add_argument("--eps", default=None, help="bandwidth grid (kernel or Gram)")
    s.add_argument("--I", default="5,10,20")
    s.add_argument("--J", default="5,10,20")
    s.add_argument("--columns", default=None)
    s.add_argument("--grid-size", type=int, default=200)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_cde)

    s = sub.add_parser("stack", help="combine fitted models with simplex weights")
    s.add_argument("--models", nargs="+", required=True)
    s.add_argument("--labeled-val", required=True)
    s.add_argument("--unlabeled-val", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stack)

    s = sub.add_parser("select-vars", help="covariate selection for weights or densities")
    data4(s)
    s.add_argument("--target", choices=["beta", "cde"], default="cde")
    s.add_argument("--mode", choices=["forward", "exhaustive"], default="forward")
    for k in ("M", "N", "B", "I", "J", "eps_ker", "eps_series"):
        s.add_argument(f"--grid-{k.replace('_', '-')}", dest=f"g_{k}", default=None)
    s.add_argument("--grid-size", type=int, default=200)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_select_vars)

    s = sub.add_parser("pipeline", help="run the full procedure from a JSON config")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_pipeline)

    def model_or_catalog(s):
        s.add_argument("--model")
        s.add_argument("--catalog-labeled")
        s.add_argument("--catalog-unlabeled")

    s = sub.add_parser("evaluate", help="loss report for a model or stored catalogs")
    model_or_catalog(s)
    s.add_argument("--variant", choices=["labeled_only", "shift_corrected", "oracle"], required=True)
    s.add_argument("--labeled")
    s.add_argument("--unlabeled")
    s.add_argument("--bootstrap", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("diagnose", help="Q-Q, PIT/KS and HPD coverage diagnostics")
    s.add_argument("--model")
    s.add_argument("--catalog-labeled")
    s.add_argument("--labeled-test", required=True)
    s.add_argument("--hpd-alpha", type=float, default=0.95)
    s.add_argument("--literal-n", action="store_true", help="divide weighted sums by n instead of the weight total")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_diagnose, catalog_unlabeled=None)

    s = sub.add_parser("predict", help="write a density catalog for new covariates")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("functional", help="integrate a tabulated g(z) against catalog densities")
    s.add_argument("--catalog", required=True)
    s.add_argument("--g", required=True, help="file with G comma- or newline-separated values")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_functional)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads and _kernels.NUMBA_OK:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    if getattr(args, "command", None) == "fit-cde" and args.eps is None:
        args.eps = "0.25,1,4" if args.method == "series" else "0.0005,0.002,0.008"
    try:
        return args.func(args)
    except CliError as exc:
        _fail(str(exc), exc.field)
    except (ValueError, OSError, KeyError) as exc:
        _fail(str(exc), type(exc).__name__)
    return 1


def _fail(message, field):
    sys.stderr.write(json.dumps({"error": message, "field": field}) + "\n")


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
