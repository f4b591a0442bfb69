"""Layer-by-layer pruning of a whole checkpoint, plus evaluation helpers.

Layers are pruned first to last.  Each layer's metric is computed from the
activations that reach it through the already-pruned upstream layers, and
the pruned layer then produces the input for the next one.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import ActivationOverflowError, ArgumentError, ConfigError, ShapeError
from .model_store import CalibrationBatch, ModelCheckpoint
from .numerics import NormKind, as_matrix
from .prune_core import (
    NM,
    PER_OUTPUT,
    Grouping,
    Metric,
    Ratio,
    apply_mask,
    compute_scores,
    select_mask,
    select_nm_mask,
)
from .reconstruct import UpdatePolicy, build_hessian, iterative_prune_update, sequential_update

REL_EPS = 1e-12
ORACLE_MAX_INPUTS = 20


@dataclass(frozen=True)
class PruneConfig:
    metric: Metric = Metric.WANDA
    grouping: Grouping = PER_OUTPUT
    target: Ratio | NM = Ratio(0.5)
    update: UpdatePolicy = UpdatePolicy()
    norm: NormKind = NormKind.L2
    lam: float | None = None  # None: 1% of mean diag(X^T X)
    seed: int = 0
    name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        object.__setattr__(self, "norm", NormKind(self.norm))
        if not isinstance(self.target, (Ratio, NM)):
            object.__setattr__(self, "target", Ratio(float(self.target)))
        if isinstance(self.target, NM) and self.grouping != PER_OUTPUT:
            raise ConfigError(f"N:M sparsity requires per-output grouping, got {self.grouping}")
        if self.update.kind == "iterative":
            if isinstance(self.target, NM):
                raise ConfigError("iterative update supports ratio targets only")
            if self.grouping not in (PER_OUTPUT, Grouping("input", self.update.blocksize)):
                raise ConfigError(
                    f"iterative:{self.update.blocksize} defines its own (input, {self.update.blocksize}) "
                    f"groups; grouping {self.grouping} conflicts"
                )
        if self.lam is not None and self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return f"{self.metric.value}/{self.grouping}/{self.target}/{self.update}"

    def to_dict(self) -> dict:
        d = {
            "method": self.metric.value,
            "group": str(self.grouping),
            "update": str(self.update),
            "norm": self.norm.value,
            "lambda": "auto" if self.lam is None else self.lam,
            "seed": self.seed,
        }
        if isinstance(self.target, NM):
            d["nm"] = str(self.target)
        else:
            d["sparsity"] = self.target.s
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PruneConfig":
        """Build from the same vocabulary the CLI flags use."""
        unknown = set(d) - {"method", "group", "update", "norm", "lambda", "seed", "sparsity", "nm", "name"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "sparsity" in d and "nm" in d:
            raise ConfigError("give either 'sparsity' or 'nm', not both")
        try:
            target = NM.parse(d["nm"]) if "nm" in d else Ratio(float(d.get("sparsity", 0.5)))
            lam = d.get("lambda", "auto")
            return cls(
                metric=Metric(d.get("method", "wanda")),
                grouping=Grouping.parse(d.get("group", "per-output")),
                target=target,
                update=UpdatePolicy.parse(d.get("update", "none")),
                norm=NormKind(d.get("norm", "l2")),
                lam=None if lam == "auto" else float(lam),
                seed=int(d.get("seed", 0)),
                name=d.get("name"),
            )
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ArgumentError):
                raise
            raise ConfigError(str(exc)) from exc


@dataclass
class LayerRecord:
    layer_name: str
    target: str
    achieved_sparsity: float
    recon_error_fro: float
    recon_error_rel: float
    metric_time_ms: float


@dataclass
class PruneReport:
    layers: list[LayerRecord]
    totals: dict
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "layers": [asdict(r) for r in self.layers], "totals": self.totals}


def _check_finite(x: np.ndarray, layer: str) -> None:
    if not np.all(np.isfinite(x)):
        raise ActivationOverflowError(f"non-finite activations after layer {layer!r}", layer=layer)


def _propagate(x: np.ndarray, weight: np.ndarray, layer) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        y = layer.activation.apply(x @ weight.astype(np.float64).T)
    _check_finite(y, layer.name)
    return y


def forward(model: ModelCheckpoint, x) -> np.ndarray:
    """Model output for a (tokens, c_in) input, in float64."""
    x = as_matrix(x, "x")
    for layer in model.layers:
        x = _propagate(x, layer.weight, layer)
    return x


def forward_collect(model: ModelCheckpoint, batch: CalibrationBatch | np.ndarray) -> list[np.ndarray]:
    """Input matrix of every layer (float64), element 0 being the batch itself."""
    x = as_matrix(batch.data if isinstance(batch, CalibrationBatch) else batch, "batch")
    if x.shape[1] != model.c_in:
        raise ShapeError(f"batch has {x.shape[1]} features, model expects {model.c_in}")
    inputs = []
    for layer in model.layers:
        inputs.append(x)
        x = _propagate(x, layer.weight, layer)
    return inputs


def recon_error(w, w_pruned, x) -> tuple[float, float]:
    """Frobenius and relative change of the layer output ``x @ w.T``."""
    w = as_matrix(w, "w")
    w_pruned = as_matrix(w_pruned, "w_pruned")
    x = as_matrix(x, "x")
    if w.shape != w_pruned.shape or x.shape[1] != w.shape[1]:
        raise ShapeError(f"shapes disagree: w {w.shape}, w_pruned {w_pruned.shape}, x {x.shape}")
    fro = float(np.linalg.norm(x @ (w - w_pruned).T))
    ref = float(np.linalg.norm(x @ w.T))
    return fro, fro / max(ref, REL_EPS)


def _summarize(records: list[LayerRecord], model: ModelCheckpoint, pruned_count: int, out_rel: float) -> dict:
    total = sum(l.weight.size for l in model.layers)
    return {
        "achieved_sparsity": pruned_count / total,
        "recon_error_fro": math.sqrt(sum(r.recon_error_fro**2 for r in records)),
        "recon_error_rel": sum(r.recon_error_rel for r in records) / len(records),
        "metric_time_ms": sum(r.metric_time_ms for r in records),
        "output_error_rel": out_rel,
    }


def prune_layer(w32: np.ndarray, x: np.ndarray, cfg: PruneConfig, threads: int = 1):
    """Prune one weight matrix against its input activations.

    Returns (float32 pruned weight, kept mask, metric time in ms).
    """
    w64 = w32.astype(np.float64)
    if cfg.update.kind == "iterative":
        t0 = time.perf_counter()
        w_new, mask = iterative_prune_update(
            w64, x, cfg.metric, cfg.target.s, cfg.update.blocksize, cfg.lam, cfg.norm, threads
        )
        elapsed = (time.perf_counter() - t0) * 1e3
    else:
        t0 = time.perf_counter()
        scores = compute_scores(cfg.metric, w64, x, cfg.norm, cfg.lam)
        elapsed = (time.perf_counter() - t0) * 1e3
        if isinstance(cfg.target, NM):
            mask = select_nm_mask(scores, cfg.target.n, cfg.target.m)
        else:
            mask = select_mask(scores, cfg.grouping, cfg.target)
        if cfg.update.kind == "sequential":
            w_new = sequential_update(w64, mask, build_hessian(x, cfg.lam), threads)
        else:
            w_new = w32
    out = apply_mask(np.asarray(w_new, dtype=np.float32), mask)
    return out, mask, elapsed


def prune_model(
    model: ModelCheckpoint,
    batch: CalibrationBatch,
    cfg: PruneConfig,
    threads: int = 1,
    propagate: bool = True,
) -> tuple[ModelCheckpoint, PruneReport]:
    """Prune every layer in order; see the module docstring for the data flow.

    ``propagate=False`` feeds each layer the dense model's activations
    instead (used to measure the effect of live propagation).
    """
    x = as_matrix(batch.data, "batch")
    if x.shape[1] != model.c_in:
        raise ShapeError(f"batch has {x.shape[1]} features, model expects {model.c_in}")
    dense_inputs = None if propagate else forward_collect(model, batch)
    records, weights, pruned_count = [], [], 0
    for k, layer in enumerate(model.layers):
        if dense_inputs is not None:
            x = dense_inputs[k]
        w_out, mask, elapsed = prune_layer(layer.weight, x, cfg, threads)
        fro, rel = recon_error(layer.weight, w_out, x)
        n_pruned = int(mask.size - np.count_nonzero(mask))
        pruned_count += n_pruned
        records.append(LayerRecord(layer.name, str(cfg.target), n_pruned / mask.size, fro, rel, elapsed))
        weights.append(w_out)
        x = _propagate(x, w_out, layer)
    pruned = model.replace_weights(weights)
    dense_out = forward(model, batch.data)
    out_rel = float(np.linalg.norm(forward(pruned, batch.data) - dense_out)) / max(
        float(np.linalg.norm(dense_out)), REL_EPS
    )
    report = PruneReport(records, _summarize(records, model, pruned_count, out_rel), cfg.to_dict())
    return pruned, report


def evaluate(dense: ModelCheckpoint, pruned: ModelCheckpoint, batch: CalibrationBatch) -> PruneReport:
    """Per-layer errors of a pruned model against its dense original.

    Each layer is measured on the activations the pruned model feeds it.
    Sparsity counts exact zeros in the pruned weights.
    """
    if len(dense.layers) != len(pruned.layers):
        raise ShapeError("models have different layer counts")
    for a, b in zip(dense.layers, pruned.layers):
        if a.weight.shape != b.weight.shape:
            raise ShapeError(f"layer {a.name!r}: shapes {a.weight.shape} vs {b.weight.shape}")
    inputs = forward_collect(pruned, batch)
    records, zeros = [], 0
    for a, b, x in zip(dense.layers, pruned.layers, inputs):
        fro, rel = recon_error(a.weight, b.weight, x)
        nz = int(b.weight.size - np.count_nonzero(b.weight))
        zeros += nz
        records.append(LayerRecord(a.name, "eval", nz / b.weight.size, fro, rel, 0.0))
    dense_out = forward(dense, batch.data)
    out_rel = float(np.linalg.norm(forward(pruned, batch.data) - dense_out)) / max(
        float(np.linalg.norm(dense_out)), REL_EPS
    )
    return PruneReport(records, _summarize(records, dense, zeros, out_rel))


def _unrank_combination(n: int, k: int, rank: int) -> list[int]:
    """The rank-th k-subset of range(n) in lexicographic order."""
    out, start = [], 0
    for slot in range(k):
        for v in range(start, n):
            block = math.comb(n - v - 1, k - slot - 1)
            if rank < block:
                out.append(v)
                start = v + 1
                break
            rank -= block
    return out


def oracle_best_row(w_row, x, prune_count: int, backend: str | None = None) -> tuple[np.ndarray, float]:
    """Exhaustive search for the prune set of a row with least output change.

    No weight update: pruned entries are simply zeroed.  Returns the kept
    mask and ``||X w' - X w||_2``.  Near-ties (within rounding) resolve to
    the lexicographically smallest pruned index set.
    """
    w_row = np.asarray(w_row, dtype=np.float64)
    x = as_matrix(x, "x")
    n = w_row.size
    if n > ORACLE_MAX_INPUTS:
        raise ArgumentError(f"oracle enumerates subsets; at most {ORACLE_MAX_INPUTS} inputs, got {n}")
    if x.shape[1] != n:
        raise ShapeError(f"x has {x.shape[1]} columns, row has {n} entries")
    if not (0 <= prune_count <= n):
        raise ArgumentError(f"prune_count must lie in [0, {n}], got {prune_count}")
    gram = x.T @ x
    errs = kernels.subset_sq_errors(gram, w_row, prune_count, backend=backend)
    # rounding bound for w_P^T G w_P: |G_ab| <= max diag(G)
    scale = float(np.abs(w_row).sum()) ** 2 * float(np.max(np.diagonal(gram), initial=0.0))
    best = int(np.flatnonzero(errs <= errs.min() + 1e-12 * scale)[0])
    kept = np.ones(n, dtype=bool)
    kept[_unrank_combination(n, prune_count, best)] = False
    return kept, math.sqrt(max(float(errs[best]), 0.0))


def oracle_best_mask_row(w_row, x, prune_count: int) -> np.ndarray:
    return oracle_best_row(w_row, x, prune_count)[0]


@dataclass
class Comparison:
    rows: list[tuple[str, PruneReport]]

    def to_dict(self) -> dict:
        return {"configs": [{"label": label, **rep.to_dict()} for label, rep in self.rows]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["config", "layer_name", "target", "achieved_sparsity", "recon_error_fro", "recon_error_rel", "metric_time_ms"]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for label, rep in self.rows:
            for r in rep.layers:
                d = asdict(r)
                writer.writerow([label] + [d[c] for c in cols[1:]])
        return buf.getvalue()


def compare_methods(
    model: ModelCheckpoint, batch: CalibrationBatch, configs, threads: int = 1
) -> Comparison:
    configs = list(configs)
    if not configs:
        raise ArgumentError("compare_methods needs at least one config")
    return Comparison([(cfg.label, prune_model(model, batch, cfg, threads)[1]) for cfg in configs])
