"""Save and load fitted models as ``.npz`` archives with a JSON header."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .cde_nn import NnCdeModel, _MarginalModel
from .cde_series import SeriesModel, SpectralBasis
from .grid import uniform_grid
from .stacking import StackedModel
from .weights import WeightModel


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def model_state(model, prefix=""):
    """``(meta, arrays)`` describing ``model``; array keys carry ``prefix``."""
    if isinstance(model, WeightModel):
        meta = {"kind": "weights", "M": model.M, "covariate_subset": list(model.covariate_subset),
                "loss_table": _jsonable(model.loss_table)}
        arrays = {"labeled_train": model.labeled_train, "unlabeled_train": model.unlabeled_train}
    elif isinstance(model, NnCdeModel):
        meta = {"kind": "nn", "method": model.method, "variant": model.variant, "N": model.N, "B": model.B,
                "epsilon": model.epsilon, "covariate_subset": list(model.covariate_subset), "G": int(model.grid.size),
                "corrected": model.corrected, "loss_table": _jsonable(model.loss_table),
                "histogram_convention": "bin mass * B / total mass, sampled on grid, trapezoid-renormalized"}
        arrays = {"covariates": model.covariates, "response": model.response, "weights": model.weights}
    elif isinstance(model, SeriesModel):
        meta = {"kind": "series", "I": model.I, "J": model.J, "epsilon": model.epsilon,
                "covariate_subset": list(model.covariate_subset), "G": int(model.grid.size),
                "basis": model.basis_name, "corrected": model.corrected,
                "eigenvalues": _jsonable(model.eigvals), "loss_table": _jsonable(model.loss_table)}
        arrays = {"covariates": model.basis.covariates, "eigvals": model.basis.eigvals,
                  "eigvecs": model.basis.eigvecs, "response": model.response, "coeffs": model.coeffs}
    elif isinstance(model, StackedModel):
        comps, arrays = [], {"alpha": model.alpha}
        if model.B_matrix is not None:
            arrays["B_matrix"] = model.B_matrix
            arrays["b_vector"] = model.b_vector
        for i, c in enumerate(model.components):
            m, a = model_state(c, f"{prefix}c{i}/")
            comps.append(m)
            arrays.update({k[len(prefix):]: v for k, v in a.items()})
        meta = {"kind": "stacked", "components": comps, "alpha": _jsonable(model.alpha),
                "objective_value": float(model.objective_value), "covariate_subset": list(model.covariate_subset),
                "loss_table": _jsonable(model.loss_table)}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return meta, {prefix + k: np.asarray(v) for k, v in arrays.items()}


def model_from_state(meta, arrays, prefix=""):
    a = lambda k: arrays[prefix + k]  # noqa: E731
    kind = meta["kind"]
    if kind == "weights":
        return WeightModel(a("labeled_train"), a("unlabeled_train"), meta["M"], tuple(meta["covariate_subset"]),
                           tuple(tuple(t) for t in meta.get("loss_table", ())))
    if kind == "nn":
        cls = _MarginalModel if meta.get("method") == "marginal" else NnCdeModel
        return cls(a("covariates"), a("response"), a("weights"), meta["variant"], meta["N"], B=meta["B"],
                   epsilon=meta["epsilon"], covariate_subset=tuple(meta["covariate_subset"]),
                   grid=uniform_grid(meta["G"]), corrected=meta["corrected"],
                   loss_table=tuple(tuple(t) for t in meta.get("loss_table", ())))
    if kind == "series":
        basis = SpectralBasis(a("covariates"), meta["epsilon"], a("eigvals"), a("eigvecs"))
        return SeriesModel(basis, a("response"), meta["I"], meta["J"], a("coeffs"), tuple(meta["covariate_subset"]),
                           uniform_grid(meta["G"]), meta["basis"], meta["corrected"],
                           tuple(tuple(t) for t in meta.get("loss_table", ())))
    if kind == "stacked":
        comps = [model_from_state(m, arrays, f"{prefix}c{i}/") for i, m in enumerate(meta["components"])]
        return StackedModel(tuple(comps), a("alpha"), meta["objective_value"],
                            arrays.get(prefix + "B_matrix"), arrays.get(prefix + "b_vector"),
                            tuple(meta.get("covariate_subset", ())),
                            tuple(tuple(t) for t in meta.get("loss_table", ())))
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path, extra: dict | None = None) -> dict:
    """Write ``model`` to ``path`` (``.npz``); ``extra`` goes into the header.

    Returns the header dictionary.
    """
    meta, arrays = model_state(model)
    header = {"model": meta, **_jsonable(extra or {})}
    buf = io.BytesIO()
    np.savez(buf, __header__=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())
    return header


def load_model(path):
    """Return ``(model, header)``."""
    with np.load(Path(path), allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    header = json.loads(arrays.pop("__header__").tobytes().decode())
    return model_from_state(header["model"], arrays), header
