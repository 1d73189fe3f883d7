"""Training loops for quantized MLPs on synthetic data.

Every optimizer shares one loop: take the primal weights of the current
state, evaluate loss and gradient there, optionally Adam-precondition, apply
the optimizer's step, then raise beta on its schedule. Quantization is only
made exact at the end, by rounding the best-validation iterate onto the
levels.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import nn
from .optimizers import (
    AdamState,
    BetaSchedule,
    OptimizerState,
    StepSizeSchedule,
    adam_precondition,
    bc_ste_step,
    epsilon_gamma,
    finalize_quantize,
    gd_proj_step,
    md_softmax_step,
    md_tanh_step,
    pgd_step,
    stable_md_step,
)
from .projections import Projection, QuantLevels, clamp_interior

log = logging.getLogger(__name__)

OPTIMIZERS = ("md_closed", "md_stable", "gd_proj", "bc_ste", "pgd", "float_ref")
PROJECTIONS = ("tanh", "shifted_tanh", "softmax", "sign", "none")


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class AdamConfig:
    enabled: bool = True
    b1: float = 0.9
    b2: float = 0.999
    eps_hat: float = 1e-8
    on: str = "primal"  # precondition the loss gradient, or the dual-space gradient


@dataclass(frozen=True)
class DataConfig:
    kind: str = "xor-blobs"
    n: int = 2000
    noise: float = 0.25
    seed: Optional[int] = None  # defaults to the run seed


@dataclass(frozen=True)
class TrainConfig:
    space: str = "w"
    projection: str = "tanh"
    optimizer: str = "md_stable"
    levels: Optional[Tuple[float, ...]] = None
    lr: StepSizeSchedule = field(default_factory=StepSizeSchedule)
    beta: BetaSchedule = field(default_factory=BetaSchedule)
    adam: AdamConfig = field(default_factory=AdamConfig)
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    arch: Tuple[int, ...] = (2, 16, 16, 2)
    log_every: int = 50
    init_scale: float = 0.05
    val_fraction: float = 0.125

    def quant_levels(self) -> QuantLevels:
        if self.levels is not None:
            return QuantLevels(tuple(self.levels))
        if self.projection == "shifted_tanh":
            return QuantLevels.ternary()
        return QuantLevels.binary()

    def make_projection(self) -> Optional[Projection]:
        if self.projection == "none":
            return None
        if self.projection == "softmax":
            return Projection("softmax", len(self.quant_levels()))
        return Projection(self.projection)

    def validate(self):
        if self.space not in ("w", "u"):
            raise ConfigError(f"space must be 'w' or 'u', got {self.space!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if self.projection not in PROJECTIONS:
            raise ConfigError(f"unknown projection {self.projection!r}")
        if (self.space == "u") != (self.projection == "softmax"):
            raise ConfigError("u-space goes with the softmax projection and vice versa")
        if (self.optimizer == "bc_ste") != (self.projection == "sign"):
            raise ConfigError("bc_ste goes with the sign projection and vice versa")
        if self.optimizer == "float_ref" and self.projection != "none":
            raise ConfigError("float_ref trains unconstrained weights; use projection 'none'")
        if self.optimizer == "pgd" and self.projection != "none":
            raise ConfigError("pgd works on the box directly; use projection 'none'")
        if self.optimizer in ("md_closed", "md_stable", "gd_proj") and self.projection in ("none", "sign"):
            raise ConfigError(f"{self.optimizer} needs a differentiable projection")
        levels = self.quant_levels()
        if self.projection in ("tanh", "sign") and levels.levels != (-1.0, 1.0):
            raise ConfigError(f"{self.projection} projection quantizes to {{-1, 1}}")
        if self.projection == "shifted_tanh" and levels.levels != (-1.0, 0.0, 1.0):
            raise ConfigError("shifted_tanh quantizes to {-1, 0, 1}")
        if self.space == "u" and self.adam.on not in ("primal", "dual"):
            raise ConfigError("adam.on must be 'primal' or 'dual'")
        if self.epochs < 1 or self.batch_size < 1 or self.log_every < 1:
            raise ConfigError("epochs, batch_size and log_every must be positive")
        if len(self.arch) < 2 or self.arch[0] != 2:
            raise ConfigError("arch must start with the 2-D input")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        return self


@dataclass
class TrainRecord:
    iter: int
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    beta: float
    eta: float
    frac_quantized: float
    grad_norm: float
    quantized_test_acc: float


RECORD_COLUMNS = tuple(f.name for f in fields(TrainRecord))


# -- parameter spaces ---------------------------------------------------------


def u_space_bind(m: int, levels: QuantLevels):
    """Uniform simplex rows for ``m`` parameters and the map ``u -> w = u q``."""
    q = levels.q
    u = np.full((m, len(q)), 1.0 / len(q))

    def materialize(u_rows):
        return np.asarray(u_rows) @ q

    return u, materialize


def u_space_grad(grad_w, levels: QuantLevels):
    """Chain rule through ``w = u q``: ``dL/du_{j,l} = dL/dw_j * q_l``."""
    return np.outer(grad_w, levels.q)


def frac_quantized(params, levels: QuantLevels, tol=1e-2, space="w"):
    params = np.asarray(params, dtype=np.float64)
    if params.size == 0:
        return 1.0
    if space == "u":
        return float(np.mean(params.max(axis=-1) > 1.0 - tol))
    dist = np.min(np.abs(params[..., None] - levels.q), axis=-1)
    return float(np.mean(dist < tol))


# -- training -----------------------------------------------------------------


@dataclass
class TrainResult:
    config: TrainConfig
    model: nn.MlpModel  # final model: rounded onto the levels unless float_ref
    records: List[TrainRecord]
    final_state: OptimizerState
    best_iter: int
    best_val_acc: float
    final_test_acc: float
    final_float_test_acc: float
    levels: QuantLevels

    @property
    def quantized_vector(self):
        return self.model.to_vector()


def _split_validation(data: nn.Dataset, frac: float):
    n_val = max(1, int(round(frac * len(data.y_train))))
    return (data.x_train[n_val:], data.y_train[n_val:],
            data.x_train[:n_val], data.y_train[:n_val])


def _init_state(cfg: TrainConfig, template: nn.MlpModel, rng, levels):
    m = template.n_params
    proj = cfg.make_projection()
    beta0 = cfg.beta(0)
    if cfg.optimizer == "float_ref":
        return OptimizerState(primal=template.to_vector())
    if cfg.optimizer == "pgd":
        return OptimizerState(primal=rng.uniform(-cfg.init_scale, cfg.init_scale, m))
    if cfg.space == "u":
        # uniform rows are a saddle of the ReLU net (all weights 0), so the
        # dual gets the same small noise as in w-space
        dual = rng.uniform(-cfg.init_scale, cfg.init_scale, (m, len(levels)))
    else:
        dual = rng.uniform(-cfg.init_scale, cfg.init_scale, m)
    state = OptimizerState.from_dual(dual, proj, beta0)
    if cfg.optimizer == "md_closed":
        state.dual = None
    return state


def _weights(cfg, state, levels):
    if cfg.space == "u":
        return state.primal @ levels.q
    return state.primal


def _step(cfg, state, g, eta, levels):
    opt = cfg.optimizer
    if opt == "md_stable":
        return stable_md_step(state, g, eta)
    if opt == "gd_proj":
        return gd_proj_step(state, g, eta)
    if opt == "bc_ste":
        return bc_ste_step(state, g, eta)
    if opt == "pgd":
        lo, hi = levels.lo, levels.hi
        return OptimizerState(primal=pgd_step(state.primal, g, eta, (lo, hi)),
                              step=state.step + 1, adam=state.adam)
    if opt == "float_ref":
        return OptimizerState(primal=state.primal - eta * g, step=state.step + 1, adam=state.adam)
    # md_closed
    proj = state.projection
    if proj.kind == "tanh":
        primal = md_tanh_step(state.primal, g, eta, state.beta)
    elif proj.kind == "softmax":
        primal = md_softmax_step(state.primal, g, eta, state.beta)
    else:
        # no closed form: grad Phi_beta = P_beta^{-1} is inverted numerically
        x = proj.inverse(clamp_interior(state.primal), state.beta)
        primal = proj.project(x - eta * g, state.beta)
    primal = proj.clamp(primal)
    return OptimizerState(primal=primal, beta=state.beta, step=state.step + 1,
                          projection=proj, adam=state.adam)


def _quantize(cfg, primal, levels):
    if cfg.space == "u":
        return finalize_quantize(primal, levels, "u")
    return finalize_quantize(primal, levels, "w")


def train(cfg: TrainConfig) -> TrainResult:
    cfg.validate()
    levels = cfg.quant_levels()
    data_seed = cfg.seed if cfg.data.seed is None else cfg.data.seed
    data = nn.generate_dataset(cfg.data.kind, cfg.data.n, cfg.data.noise, data_seed)
    if data.classes != cfg.arch[-1]:
        raise ConfigError(f"arch ends with {cfg.arch[-1]} outputs but data has {data.classes} classes")
    x_tr, y_tr, x_val, y_val = _split_validation(data, cfg.val_fraction)

    rng = np.random.default_rng(cfg.seed)
    template = nn.init_mlp(cfg.arch, rng)
    state = _init_state(cfg, template, rng, levels)
    if cfg.adam.enabled:
        state.adam = AdamState.zeros_like(state.primal)

    n_train = len(y_tr)
    iters_per_epoch = math.ceil(n_train / cfg.batch_size)
    total = cfg.epochs * iters_per_epoch
    quantized = cfg.optimizer != "float_ref"
    space = cfg.space

    records: List[TrainRecord] = []
    best = (-1.0, -1, None)
    loss_sum, loss_count, grad_norm = 0.0, 0, 0.0
    k = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if quantized and cfg.optimizer not in ("pgd",):
                state = state.with_beta(cfg.beta(k))
            eta = cfg.lr(k)
            w = _weights(cfg, state, levels)
            loss, grads, _ = nn.loss_and_grad(template.with_vector(w), x_tr[idx], y_tr[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at iteration {k} (epoch {epoch}); "
                                       f"beta={state.beta}, eta={eta}")
            gw = grads.to_vector()
            grad_norm = float(np.linalg.norm(gw))
            g = u_space_grad(gw, levels) if space == "u" else gw
            if cfg.optimizer == "gd_proj" and cfg.adam.on == "dual":
                g = state.projection.vjp(state.dual, g, state.beta)
                if state.adam is not None:
                    g, state.adam = adam_precondition(g, state.adam, cfg.adam.b1, cfg.adam.b2, cfg.adam.eps_hat)
                state = stable_md_step(state, g, eta)
            else:
                if state.adam is not None:
                    g, state.adam = adam_precondition(g, state.adam, cfg.adam.b1, cfg.adam.b2, cfg.adam.eps_hat)
                state = _step(cfg, state, g, eta, levels)
            loss_sum += loss
            loss_count += 1
            k += 1

            if k % cfg.log_every == 0 or k == total:
                w = _weights(cfg, state, levels)
                model = template.with_vector(w)
                val_acc = nn.accuracy(model, x_val, y_val)
                if val_acc >= best[0]:
                    best = (val_acc, k, state.copy())
                q_model = template.with_vector(_weights_q(cfg, state.primal, levels))
                records.append(TrainRecord(
                    iter=k,
                    epoch=epoch,
                    train_loss=loss_sum / loss_count,
                    train_acc=nn.accuracy(model, x_tr, y_tr),
                    test_acc=nn.accuracy(model, data.x_test, data.y_test),
                    beta=float(state.beta),
                    eta=float(eta),
                    frac_quantized=frac_quantized(state.primal, levels, space=space),
                    grad_norm=grad_norm,
                    quantized_test_acc=nn.accuracy(q_model, data.x_test, data.y_test),
                ))
                loss_sum, loss_count = 0.0, 0
                log.debug("iter %d loss %.4f test %.3f", k, records[-1].train_loss, records[-1].test_acc)

    best_val, best_iter, best_state = best
    float_model = template.with_vector(_weights(cfg, best_state, levels))
    if quantized:
        final_model = template.with_vector(_weights_q(cfg, best_state.primal, levels))
    else:
        final_model = float_model
    return TrainResult(
        config=cfg,
        model=final_model,
        records=records,
        final_state=state,
        best_iter=best_iter,
        best_val_acc=best_val,
        final_test_acc=nn.accuracy(final_model, data.x_test, data.y_test),
        final_float_test_acc=nn.accuracy(float_model, data.x_test, data.y_test),
        levels=levels,
    )


def _weights_q(cfg, primal, levels):
    return _quantize(cfg, primal, levels)


def epsilon_discreteness_violations(state: OptimizerState, eps=1e-3, margin=1.001):
    """Count duals beyond ``margin * gamma(beta, eps)`` whose primal is not eps-close to +-1.

    Uses the state's current beta in the role of the cap.
    """
    gamma = margin * epsilon_gamma(state.beta, eps)
    far = np.abs(state.dual) >= gamma
    bad = far & (1.0 - np.abs(state.primal) >= eps)
    return int(bad.sum()), int(far.sum())


# -- output -------------------------------------------------------------------


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def records_to_csv(records: List[TrainRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in RECORD_COLUMNS])
    return buf.getvalue()


def summary(result: TrainResult) -> dict:
    vec = result.quantized_vector
    hist = {}
    if result.config.optimizer != "float_ref":
        for q in result.levels.levels:
            hist[repr(q)] = int(np.sum(vec == q))
    last = result.records[-1]
    return {
        "config": config_to_dict(result.config),
        "final": {
            "best_iter": result.best_iter,
            "best_val_acc": result.best_val_acc,
            "float_test_acc": result.final_float_test_acc,
            "quantized_test_acc": result.final_test_acc,
            "last_frac_quantized": last.frac_quantized,
            "last_beta": last.beta,
            "n_params": int(vec.size),
            "fully_quantized": bool(np.all(np.isin(vec, result.levels.q))),
        },
        "weight_histogram": hist,
    }


def write_outputs(result: TrainResult, out_dir) -> Tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "records.csv"
    json_path = out / "summary.json"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(records_to_csv(result.records))
    with open(json_path, "w", newline="\n", encoding="utf-8") as fh:
        json.dump(summary(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


# -- config (de)serialization -------------------------------------------------

_NESTED = {"lr": StepSizeSchedule, "beta": BetaSchedule, "adam": AdamConfig, "data": DataConfig}


def config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["arch"] = list(cfg.arch)
    d["levels"] = None if cfg.levels is None else list(cfg.levels)
    return d


def _build(cls, raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        where = ", ".join(f"{path}.{k}" if path else k for k in unknown)
        raise ConfigError(f"unknown config key(s): {where}")
    kwargs = {}
    for name, value in raw.items():
        key = f"{path}.{name}" if path else name
        if cls is TrainConfig and name in _NESTED:
            kwargs[name] = _build(_NESTED[name], value, key)
            continue
        if name in ("arch", "levels") and value is not None:
            if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
                raise ConfigError(f"{key}: expected a list of numbers")
            value = tuple(int(v) for v in value) if name == "arch" else tuple(float(v) for v in value)
        else:
            value = _coerce(known[name], value, key)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from None


def _coerce(f, value, key):
    default = f.default
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if value is None:
        if "Optional" in t:
            return None
        raise ConfigError(f"{key}: may not be null")
    if "bool" in t:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean")
        return value
    if "int" in t and "float" not in t:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer")
        return value
    if "float" in t:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number")
        return float(value)
    if "str" in t:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string")
        return value
    return value if default is None else type(default)(value)


def config_from_dict(raw: dict) -> TrainConfig:
    return _build(TrainConfig, raw, "").validate()


def load_config(path) -> TrainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)
