"""Independent oracles: a literal dense attention reference, a central
finite-difference gradient checker, and the ablation grid runner.

The dense reference reimplements one attention block with plain Python
loops and math.exp/math.erf; it shares no code with the production path
beyond primitive arithmetic, so agreement is meaningful evidence.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, HwgatError
from .model import HWGAT, GraphAttentionBlock, ModelConfig
from .training import TrainConfig, evaluate, label_smoothed_ce, train_loop


def _dense_layer_norm(x: list[list[float]], scale, shift, eps: float):
    out = []
    dim = len(x[0])
    for row in x:
        mean = sum(row) / dim
        var = sum((v - mean) ** 2 for v in row) / dim
        inv = 1.0 / math.sqrt(var + eps)
        out.append([(v - mean) * inv * float(scale[a]) + float(shift[a])
                    for a, v in enumerate(row)])
    return out


def _dense_matmul(x: list[list[float]], w) -> list[list[float]]:
    rows, inner = len(x), len(x[0])
    cols = w.shape[1]
    return [[sum(x[i][a] * float(w[a, d]) for a in range(inner))
             for d in range(cols)] for i in range(rows)]


def dense_attention_reference(x: np.ndarray, block: GraphAttentionBlock,
                              bias_slot: int = 0) -> np.ndarray:
    """Literal evaluation of one attention block on a single (n, c) block.

    Reads the block's weights as data and evaluates normalization, per-head
    attention with the block's bias table (and multiplicative mask in the
    compatibility mode), the output projection, residuals, and the
    feed-forward sub-block entirely with Python scalar arithmetic.
    """
    n, dim = x.shape
    heads, hd = block.heads, block.head_dim
    scale = block.scale
    bias = np.asarray(block.bias_tables()[bias_slot], dtype=np.float64)
    mult = None
    if block.mult_mask is not None:
        mult = np.asarray(block.mult_mask[bias_slot], dtype=np.float64)
    xs = [[float(v) for v in row] for row in np.asarray(x, dtype=np.float64)]

    normed = _dense_layer_norm(xs, block.ln1.scale.value, block.ln1.shift.value,
                               block.ln1.eps)
    concat = [[0.0] * dim for _ in range(n)]
    for u in range(heads):
        cols = slice(u * hd, (u + 1) * hd)
        q = _dense_matmul(normed, block.query.weight.value[:, cols])
        k = _dense_matmul(normed, block.key.weight.value[:, cols])
        v = _dense_matmul(normed, block.value.weight.value[:, cols])
        for i in range(n):
            logits = []
            for j in range(n):
                dot = sum(q[i][d] * k[j][d] for d in range(hd)) * scale
                if mult is not None:
                    dot *= mult[i, j]
                logits.append(dot + float(bias[i, j]))
            finite = [l for l in logits if l != -math.inf]
            peak = max(finite)
            weights = [0.0 if l == -math.inf else math.exp(l - peak)
                       for l in logits]
            total = sum(weights)
            weights = [w / total for w in weights]
            for d in range(hd):
                concat[i][u * hd + d] = sum(
                    weights[j] * v[j][d] for j in range(n))

    proj = _dense_matmul(concat, block.out.weight.value)
    bias_o = block.out.bias.value
    z = [[xs[i][a] + proj[i][a] + float(bias_o[a]) for a in range(dim)]
         for i in range(n)]

    ff_in = _dense_layer_norm(z, block.ln2.scale.value, block.ln2.shift.value,
                              block.ln2.eps)
    hidden = _dense_matmul(ff_in, block.ff.inner.weight.value)
    hb = block.ff.inner.bias.value
    hidden = [[0.5 * (h + float(hb[a])) * (1.0 + math.erf((h + float(hb[a])) / math.sqrt(2.0)))
               for a, h in enumerate(row)] for row in hidden]
    back = _dense_matmul(hidden, block.ff.outer.weight.value)
    ob = block.ff.outer.bias.value
    out = [[z[i][a] + back[i][a] + float(ob[a]) for a in range(dim)]
           for i in range(n)]
    return np.asarray(out)


@dataclass
class FDEntry:
    name: str
    max_rel_err: float
    argmax: tuple
    analytic: float
    numeric: float


@dataclass
class FDReport:
    precision: str
    step: float
    floor: float
    entries: list[FDEntry]

    @property
    def max_rel_err(self) -> float:
        return max(e.max_rel_err for e in self.entries)

    @property
    def worst(self) -> FDEntry:
        return max(self.entries, key=lambda e: e.max_rel_err)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err <= tolerance

    def failing(self, tolerance: float) -> list[FDEntry]:
        return [e for e in self.entries if e.max_rel_err > tolerance]


DEFAULT_FD_STEP = {"float32": 1e-3, "float64": 1e-5}

# components below float32 gradient resolution are checked absolutely,
# at PROMOTED_FD_FLOOR times the caller's relative tolerance
PROMOTED_FD_FLOOR = 1e-2


def fd_gradient_check(model: HWGAT, inputs: np.ndarray, targets: np.ndarray,
                      smoothing: float = 0.0, step: float | None = None,
                      floor: float = 1e-8,
                      frozen_masks: dict | None = None,
                      analytic_grads: dict | None = None) -> FDReport:
    """Central finite differences of the batch loss for every parameter.

    ``frozen_masks`` pins attention dropout so the perturbed losses stay on
    one smooth branch; ``analytic_grads`` (name -> array) substitutes the
    gradients under test, which lets fault-injection tests confirm that a
    corrupted tensor is actually flagged.
    """
    if step is None:
        step = DEFAULT_FD_STEP[model.cfg.dtype]
    training = frozen_masks is not None

    def loss_value() -> float:
        logits = model.forward(inputs, training=training,
                               frozen_masks=frozen_masks)
        loss, _ = label_smoothed_ce(logits, targets, smoothing)
        return loss

    if analytic_grads is None:
        model.zero_grad()
        logits = model.forward(inputs, training=training,
                               frozen_masks=frozen_masks)
        _, dlogits = label_smoothed_ce(logits, targets, smoothing)
        model.backward(dlogits)
        analytic_grads = {name: p.grad.copy() for name, p in model.named_params()}

    entries = []
    for name, p in model.named_params():
        grad = analytic_grads[name]
        worst = (0.0, (), 0.0, 0.0)
        flat = p.value.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for idx in range(flat.size):
            saved = flat[idx]
            flat[idx] = saved + step
            up = loss_value()
            flat[idx] = saved - step
            down = loss_value()
            flat[idx] = saved
            numeric = (up - down) / (2.0 * step)
            analytic = float(gflat[idx])
            denom = max(abs(analytic), abs(numeric), floor)
            rel = abs(analytic - numeric) / denom
            if rel >= worst[0]:
                worst = (rel, np.unravel_index(idx, p.value.shape),
                         analytic, numeric)
        entries.append(FDEntry(name, worst[0], worst[1], worst[2], worst[3]))
    return FDReport(model.cfg.dtype, step, floor, entries)


def promote_to_double(model: HWGAT) -> HWGAT:
    """Float64 twin evaluating the same function the float32 model rounds.

    Weights and the Fourier frequency buffer are copied bit-exactly (the
    float32 values, widened), so the twin is the exact-arithmetic reference
    for this particular model, not a freshly seeded float64 model.
    """
    cfg = dict(model.cfg.to_dict())
    cfg["dtype"] = "float64"
    twin = HWGAT(ModelConfig.from_dict(cfg))
    for (name, src), (twin_name, dst) in zip(model.named_params(),
                                             twin.named_params()):
        assert name == twin_name
        dst.value[...] = src.value
    twin.embed.freqs = model.embed.freqs.astype(np.float64)
    return twin


def fd_check_promoted(model: HWGAT, inputs: np.ndarray, targets: np.ndarray,
                      smoothing: float = 0.0,
                      frozen_masks: dict | None = None,
                      floor: float = PROMOTED_FD_FLOOR) -> FDReport:
    """Check a float32 model's analytic gradients against a float64 oracle.

    A finite-difference quotient evaluated in float32 carries round-off of
    roughly eps32 * |loss| / step, around 1e-4 absolute, which swamps any
    per-component relative tolerance near 1e-3.  The quotient is therefore
    evaluated on a float64 twin of the model while the gradients under test
    stay the float32 ones.  The report's precision field names the checked
    gradients; its step is the float64 default.
    """
    if model.cfg.dtype != "float32":
        raise ConfigError(
            f"fd_check_promoted expects a float32 model, got {model.cfg.dtype}")
    training = frozen_masks is not None
    model.zero_grad()
    logits = model.forward(inputs, training=training,
                           frozen_masks=frozen_masks)
    _, dlogits = label_smoothed_ce(logits, targets, smoothing)
    model.backward(dlogits)
    grads = {name: p.grad.astype(np.float64)
             for name, p in model.named_params()}
    twin = promote_to_double(model)
    report = fd_gradient_check(twin, inputs.astype(np.float64), targets,
                               smoothing, frozen_masks=frozen_masks,
                               analytic_grads=grads, floor=floor)
    return FDReport("float32", report.step, report.floor, report.entries)


def run_ablation_grid(base_model: dict, base_train: dict,
                      axes: dict[str, list], train_seqs, val_seqs,
                      out_dir: str) -> list[dict]:
    """Train/evaluate the full Cartesian product of the axes.

    Axis keys must name ModelConfig or TrainConfig fields.  A failing
    combination is recorded as an error row and the grid continues.  Rows
    are appended to ablation.jsonl under out_dir in grid order.
    """
    model_fields = {f.name for f in fields(ModelConfig)}
    train_fields = {f.name for f in fields(TrainConfig)}
    for key in axes:
        if key not in model_fields and key not in train_fields:
            raise ConfigError(f"unknown ablation axis {key!r}")
        if not axes[key]:
            raise ConfigError(f"ablation axis {key!r} has no values")
    os.makedirs(out_dir, exist_ok=True)
    table_path = os.path.join(out_dir, "ablation.jsonl")
    keys = sorted(axes)
    rows = []
    with open(table_path, "w", encoding="utf-8") as log:
        for combo_idx, values in enumerate(itertools.product(*(axes[k] for k in keys))):
            combo = dict(zip(keys, values))
            row = dict(combo)
            run_dir = os.path.join(out_dir, f"run{combo_idx:03d}")
            try:
                model_cfg = ModelConfig.from_dict({
                    **base_model,
                    **{k: v for k, v in combo.items() if k in model_fields},
                })
                train_cfg = TrainConfig.from_dict({
                    **base_train,
                    **{k: v for k, v in combo.items() if k in train_fields},
                })
                model = HWGAT(model_cfg)
                result = train_loop(model, train_seqs, val_seqs, train_cfg,
                                    run_dir)
                final = evaluate(model, val_seqs, train_cfg.batch_size)
                row.update(status="ok", epochs=result.epochs_run,
                           best_val_loss=result.best_val_loss,
                           top1=final["top1"], top5=final["top5"])
            except HwgatError as exc:
                row.update(status=f"error ({exc.category})", detail=str(exc))
            rows.append(row)
            log.write(json.dumps(row) + "\n")
            log.flush()
    return rows
