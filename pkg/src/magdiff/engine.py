"""Training loop and reverse-diffusion sampler for the conditional field interpolator."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import diffcalc as dc
from . import losses
from .denoiser import DenoiserConfig, as_constants, denoise, init_params, load_checkpoint, on_graph, save_checkpoint
from .geodata import NormStats, ScatterSet, denormalize, make_instance, normalize_apply, normalize_fit
from .mask import MaskScheduleConfig, full_mask, k_of_t, sq_distances, topk_mask
from .metrics import MetricsRecord, metrics
from .schedule import NoiseSchedule, make_schedule, reverse_step, strided_steps, x0_coefficients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    steps_per_epoch: int = 100
    lr: float = 1e-3
    lam: float = 0.1
    k_min: int = 32
    k_max: int = 1000
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    k_v: int = 8
    d: int = 64
    D: int = 64
    cond_fraction: float = 0.9
    instance_size: int | None = None
    seed: int = 0
    disable_pim: bool = False
    disable_pic: bool = False
    # multiply the kriging term by alpha_bar_t**2; x0_hat errors scale like 1/sqrt(alpha_bar_t),
    # so the squared-variogram gap otherwise blows up by ~1/alpha_bar_t**2 at large t
    kriging_ab_weight: bool = True
    # "cosine" anneals lr to lr_floor * lr over the run; "constant" keeps it fixed
    lr_decay: str = "cosine"
    lr_floor: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.lr_decay not in ("cosine", "constant"):
            raise ValueError("lr_decay must be 'cosine' or 'constant'")
        if not 0 <= self.lr_floor <= 1:
            raise ValueError("lr_floor must be in [0, 1]")

    def lr_at(self, step: int) -> float:
        """Learning rate for 1-based optimizer ``step``."""
        if self.lr_decay == "constant":
            return self.lr
        n = self.epochs * self.steps_per_epoch
        frac = 0.5 * (1.0 + math.cos(math.pi * (step - 1) / n))
        return self.lr * (self.lr_floor + (1.0 - self.lr_floor) * frac)

    @property
    def mask_config(self) -> MaskScheduleConfig:
        return MaskScheduleConfig(self.k_min, self.k_max, self.T)

    @property
    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(self.d, self.D)

    @property
    def effective_lambda(self) -> float:
        return 0.0 if self.disable_pic else self.lam


@dataclass(frozen=True)
class SampleConfig:
    """Reverse-chain settings. ``n_samples`` independent chains are averaged per target.

    ``variance`` picks sigma^2 of each respaced step: ``"posterior"`` (default) or ``"beta"``.
    """

    steps: int = 10
    seed: int = 0
    n_samples: int = 16
    variance: str = "posterior"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.variance not in ("posterior", "beta"):
            raise ValueError("variance must be 'posterior' or 'beta'")


@dataclass
class Model:
    """Trained weights plus everything needed to interpolate in nT."""

    params: dict[str, np.ndarray]
    config: TrainConfig
    stats: NormStats

    @property
    def schedule(self) -> NoiseSchedule:
        c = self.config
        return make_schedule(c.T, c.beta_start, c.beta_end)

    def manifest(self) -> dict:
        return {"format": 1, "train_config": asdict(self.config),
                "norm": {"mean": self.stats.mean, "std": self.stats.std}}

    def save(self, path) -> None:
        save_checkpoint(path, self.params, self.manifest())

    @classmethod
    def load(cls, path) -> "Model":
        params, man = load_checkpoint(path)
        cfg = TrainConfig(**man["train_config"])
        return cls(params, cfg, NormStats(man["norm"]["mean"], man["norm"]["std"]))


@dataclass(frozen=True)
class StepResult:
    loss_eps: float
    loss_kriging: float
    loss_total: float
    t: int


def _mask_for(d2: np.ndarray, t: int, cfg: TrainConfig, mcfg: MaskScheduleConfig | None = None):
    if cfg.disable_pim:
        return full_mask(*d2.shape)
    return topk_mask(d2, k_of_t(t, mcfg or cfg.mask_config))


def _losses(inst: ScatterSet, p: Mapping[str, dc.Tensor], t: int, eps: np.ndarray, schedule: NoiseSchedule,
            cfg: TrainConfig, d2: np.ndarray | None = None, neighbors: np.ndarray | None = None):
    """Loss terms for fixed (t, eps); returns (l_eps, l_kriging or None, total)."""
    lam = cfg.effective_lambda
    n_ta = len(inst.ta_values)
    if lam > 0 and n_ta <= cfg.k_v:
        raise ValueError(f"instance has {n_ta} targets; kriging loss needs more than k_v={cfg.k_v}")
    ab = schedule.ab(t)
    x_t = np.sqrt(ab) * inst.ta_values + np.sqrt(1.0 - ab) * eps
    if d2 is None:
        d2 = sq_distances(inst.ta_coords, inst.obs_coords)
    mask = _mask_for(d2, t, cfg)
    eps_hat = denoise(p, t, inst.ta_coords, x_t, inst.obs_coords, inst.obs_values, mask, schedule.T)
    l_eps = losses.epsilon_loss(eps[:, None], eps_hat)
    if lam == 0:
        return l_eps, None, l_eps
    a, b = x0_coefficients(t, schedule)
    x0_hat = dc.sub(dc.constant(a * x_t[:, None]), dc.scale(eps_hat, b))
    l_kr = losses.kriging_loss(inst.ta_values, x0_hat, inst.ta_coords, cfg.k_v, neighbors)
    if cfg.kriging_ab_weight:
        l_kr = dc.scale(l_kr, ab * ab)
    return l_eps, l_kr, losses.total_loss(l_eps, l_kr, lam)


def train_step(inst: ScatterSet, params: Mapping[str, np.ndarray], opt: dc.AdamState, schedule: NoiseSchedule,
               cfg: TrainConfig, rng: np.random.Generator, d2: np.ndarray | None = None,
               neighbors: np.ndarray | None = None, lr: float | None = None):
    """One optimizer step on one (normalized) instance, at ``lr`` (default ``cfg.lr``).

    Returns ``(StepResult, new_params, new_opt_state)``.
    """
    t = int(rng.integers(1, schedule.T + 1))
    eps = rng.standard_normal(len(inst.ta_values))
    g = dc.Graph()
    l_eps, l_kr, total = _losses(inst, on_graph(g, params), t, eps, schedule, cfg, d2, neighbors)
    grads = dc.backward(g, total)
    new_params, new_opt = dc.adam_step(params, grads, opt, cfg.lr if lr is None else lr)
    res = StepResult(float(l_eps.data), 0.0 if l_kr is None else float(l_kr.data), float(total.data), t)
    return res, new_params, new_opt


def probe_loss(params: Mapping[str, np.ndarray], cfg: TrainConfig, probes, schedule: NoiseSchedule | None = None) -> float:
    """Mean total loss over fixed ``(instance, t, eps)`` draws; no parameter update.

    Scoring one fixed probe set over the course of training removes the
    per-step variance that comes from sampling t.
    """
    schedule = schedule or make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    p = as_constants(params)
    return float(np.mean([float(_losses(inst, p, t, eps, schedule, cfg)[2].data) for inst, t, eps in probes]))


def make_probes(coords, values, cfg: TrainConfig, n: int, seed: int):
    """``n`` fixed ``(instance, t, eps)`` draws on normalized values, for :func:`probe_loss`."""
    rng = np.random.default_rng(seed)
    z = normalize_apply(values, normalize_fit(values))
    out = []
    for _ in range(n):
        inst = make_instance(coords, z, cfg.cond_fraction, rng, cfg.instance_size)
        out.append((inst, int(rng.integers(1, cfg.T + 1)), rng.standard_normal(len(inst.ta_values))))
    return out


def train(coords, values, cfg: TrainConfig, log_path=None, progress: Callable[[int, StepResult, dict], None] | None = None,
          init: Mapping[str, np.ndarray] | None = None) -> tuple[Model, list[StepResult]]:
    """Fit a model on raw (nT) training samples. Deterministic given ``cfg.seed``.

    ``progress(step, result, params)`` is called after every optimizer step.
    """
    coords = np.asarray(coords, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    stats = normalize_fit(values)
    z = normalize_apply(values, stats)
    schedule = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    params = dict(init) if init is not None else init_params(cfg.denoiser_config, int(seeds[0].generate_state(1)[0]))
    opt = dc.AdamState.zeros_like(params)
    rng = np.random.default_rng(seeds[1])
    history: list[StepResult] = []
    n_steps = cfg.epochs * cfg.steps_per_epoch
    fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
    try:
        if fh:
            fh.write("step,loss_eps,loss_kriging,loss_total\n")
        for step in range(1, n_steps + 1):
            inst = make_instance(coords, z, cfg.cond_fraction, rng, cfg.instance_size)
            res, params, opt = train_step(inst, params, opt, schedule, cfg, rng, lr=cfg.lr_at(step))
            history.append(res)
            if fh:
                fh.write(f"{step},{res.loss_eps!r},{res.loss_kriging!r},{res.loss_total!r}\n")
            if not np.isfinite(res.loss_total):
                raise FloatingPointError(f"non-finite loss at step {step}")
            if progress:
                progress(step, res, params)
            if step % cfg.steps_per_epoch == 0:
                recent = history[-cfg.steps_per_epoch:]
                log.info("epoch %d  loss_eps %.4f  loss_kriging %.4f", step // cfg.steps_per_epoch,
                         np.mean([r.loss_eps for r in recent]), np.mean([r.loss_kriging for r in recent]))
    finally:
        if fh:
            fh.close()
    return Model(params, cfg, stats), history


def sample_normalized(params: Mapping[str, np.ndarray], cfg: TrainConfig, m_co, x_co, m_ta, steps: int,
                      rng: np.random.Generator, schedule: NoiseSchedule | None = None,
                      k_override: MaskScheduleConfig | None = None, variance: str = "posterior") -> np.ndarray:
    """Reverse chain over ``steps`` strided timesteps, on normalized values."""
    m_co = np.asarray(m_co, dtype=np.float64).reshape(-1, 2)
    m_ta = np.asarray(m_ta, dtype=np.float64).reshape(-1, 2)
    x_co = np.asarray(x_co, dtype=np.float64).reshape(-1)
    if len(m_co) == 0:
        raise ValueError("empty condition set")
    if len(m_co) != len(x_co):
        raise ValueError("condition coordinates and values differ in length")
    schedule = schedule or make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    kept = strided_steps(schedule.T, steps)
    sub = schedule.respaced(kept)
    mcfg = k_override or cfg.mask_config
    d2 = sq_distances(m_ta, m_co)
    p = as_constants(params)
    x = rng.standard_normal(len(m_ta))
    for j in range(len(kept), 0, -1):
        tau = kept[j - 1]
        mask = _mask_for(d2, tau, cfg, mcfg)
        eps_hat = denoise(p, tau, m_ta, x, m_co, x_co, mask, cfg.T).data[:, 0]
        z = rng.standard_normal(len(m_ta)) if j > 1 else np.zeros(len(m_ta))
        x = reverse_step(x, eps_hat, j, sub, z, variance)
    return x


def interpolate(model: Model, m_co, x_co, m_ta, scfg: SampleConfig = SampleConfig(),
                chunk: int = 1024, k_override: MaskScheduleConfig | None = None) -> np.ndarray:
    """Predict nT values at ``m_ta`` from raw (nT) conditions.

    Targets never attend to each other, so they are processed in chunks;
    each chunk draws its noise from its own child seed.
    """
    m_ta = np.asarray(m_ta, dtype=np.float64).reshape(-1, 2)
    if len(np.asarray(x_co).reshape(-1)) == 0:
        raise ValueError("empty condition set")
    z_co = normalize_apply(x_co, model.stats)
    schedule = model.schedule
    # every chain of every target is an independent row, so replicate targets
    reps = np.repeat(m_ta, scfg.n_samples, axis=0)
    draws = np.empty(len(reps))
    n_chunks = max(1, -(-len(reps) // chunk))
    seeds = np.random.SeedSequence(scfg.seed).spawn(n_chunks)
    for c in range(n_chunks):
        sl = slice(c * chunk, (c + 1) * chunk)
        rng = np.random.default_rng(seeds[c])
        draws[sl] = sample_normalized(model.params, model.config, m_co, z_co, reps[sl], scfg.steps, rng,
                                      schedule, k_override, scfg.variance)
    out = draws.reshape(len(m_ta), scfg.n_samples).mean(axis=1)
    return denormalize(out, model.stats)


def evaluate(model: Model, m_co, x_co, m_ta, x_ta, scfg: SampleConfig = SampleConfig(), **kw) -> tuple[MetricsRecord, np.ndarray]:
    pred = interpolate(model, m_co, x_co, m_ta, scfg, **kw)
    return metrics(x_ta, pred), pred


VARIANTS = {
    "full": {},
    "w/o PIM": {"disable_pim": True},
    "w/o PIC": {"disable_pic": True},
}


def ablate(train_set, test_set, variants: Sequence[str], base: TrainConfig, scfg: SampleConfig = SampleConfig(),
           seeds: Iterable[int] = (0,), dump: Callable[[str, int, np.ndarray], None] | None = None) -> list[dict]:
    """Train and score each variant per seed. ``train_set``/``test_set`` are ``(coords, values)`` pairs.

    Returns one row per variant with metrics averaged over seeds plus the
    per-seed RMSE values.
    """
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown or not variants:
        raise KeyError(f"unknown ablation variant(s): {unknown or 'none given'}; choose from {list(VARIANTS)}")
    seeds = list(seeds)
    rows = []
    for name in variants:
        recs = []
        for seed in seeds:
            cfg = replace(base, seed=seed, **VARIANTS[name])
            model, _ = train(*train_set, cfg)
            rec, pred = evaluate(model, *train_set, test_set[0], test_set[1], replace(scfg, seed=seed))
            if dump:
                dump(name, seed, pred)
            recs.append(rec)
        row = {"variant": name}
        for key in ("rmse", "mae", "mape", "mse"):
            row[key] = float(np.mean([getattr(r, key) for r in recs]))
        row["rmse_per_seed"] = [r.rmse for r in recs]
        rows.append(row)
    return rows


def sweep_steps(model: Model, cond, test, steps_list=(5, 10, 20, 30, 40, 50), seed: int = 0,
                n_samples: int = SampleConfig.n_samples, variance: str = SampleConfig.variance) -> list[dict]:
    rows = []
    for s in steps_list:
        t0 = time.perf_counter()
        rec, _ = evaluate(model, cond[0], cond[1], test[0], test[1], SampleConfig(s, seed, n_samples, variance))
        rows.append({"steps": s, **rec.as_dict(), "seconds": time.perf_counter() - t0})
    return rows
