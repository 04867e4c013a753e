"""Training procedures: supervised PSNR maximization and the two-cycle
adversarial setup with critic update ratios.

Determinism contract: every stochastic choice (batch order, task sampling,
interpolation coefficients, weight init) is derived from the config seed
plus structural counters (iteration, substream), never from global RNG
state. Resuming from a checkpoint therefore reproduces the uninterrupted
run exactly: the batch stream is fast-forwarded by the number of batches
the completed iterations consumed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import Checkpoint, save_checkpoint
from .data import Batch, PairedDataset, sample_batches
from .layers import Module
from .losses import (
    LossWeights,
    adversarial_loss,
    conditional_loss,
    critic_loss,
    cycle_loss,
    gradient_penalty,
    identity_loss,
    mse,
    psnr_loss,
    total_generator_loss,
)
from .metrics import psnr, ssim
from .models import Critic, GSGN, ModelConfig, StyleClassifier, desk_config

MODES = ("supervised-single", "supervised-all", "supervised-multitask",
         "unpaired-single", "unpaired-multitask")


@dataclass
class TrainConfig:
    """Optimization knobs shared by all training modes.

    Adam runs at a constant learning rate (1e-4 reference schedule);
    adversarial phases use beta1 0.5, supervised ones 0.9. critic_ratio
    is the number of critic updates per generator update: 30 for
    image-level data, 40 is the convention for weakly aligned patch
    datasets. Desk-scale presets in the tests override learning rate and
    batch size for 64x64 synthetic runs.
    """

    iterations: int = 1000
    batch_size: int = 8
    learning_rate: float = 1e-4
    beta1_supervised: float = 0.9
    beta1_adversarial: float = 0.5
    beta2: float = 0.999
    critic_ratio: int = 30
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    eval_every: int = 0
    checkpoint_every: int = 0
    critic_width: int = 16
    critic_stages: int = 4
    classifier_width: int = 16
    classifier_stages: int = 3

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be > 0")
        if self.critic_ratio < 1:
            raise ValueError("critic_ratio must be >= 1")

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "weights"}
        d["weights"] = dict(self.weights.__dict__)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


class RunLog:
    """Per-iteration loss components; refuses non-finite entries."""

    def __init__(self):
        self.entries: List[dict] = []

    def append(self, entry: dict) -> None:
        for k, v in entry.items():
            if isinstance(v, float) and not np.isfinite(v):
                raise ad.NonFiniteError(f"non-finite log value {k}={v}")
        self.entries.append(entry)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e) + "\n" for e in self.entries)

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())


class Adam:
    def __init__(self, module: Module, lr: float, beta1: float,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.named = list(module.named_parameters())
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.named:
            if p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise ad.NonFiniteError(f"non-finite gradient for {name}")
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.named:
            p.grad = None

    def state_tensors(self, prefix: str) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for name in self.m:
            out[f"{prefix}.m.{name}"] = self.m[name]
            out[f"{prefix}.v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, prefix: str, tensors: Dict[str, np.ndarray],
                           t: int) -> None:
        for name in self.m:
            self.m[name] = tensors[f"{prefix}.m.{name}"].astype(np.float32).copy()
            self.v[name] = tensors[f"{prefix}.v.{name}"].astype(np.float32).copy()
        self.t = t


def one_hot(task_ids: np.ndarray, task_count: int) -> np.ndarray:
    z = np.zeros((len(task_ids), task_count), dtype=np.float32)
    z[np.arange(len(task_ids)), task_ids] = 1.0
    return z


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


# -- supervised ---------------------------------------------------------------

def _masked_mse(out, target, masks: np.ndarray):
    # zero padding is input formatting, not content: exclude it
    m = Tensor(masks[:, None, :, :].astype(np.float32))
    d = ad.sub(out, target)
    total = ad.sum_(ad.mul(ad.mul(d, d), m))
    count = float(masks.sum()) * out.shape[1]
    return ad.mul(total, 1.0 / count)


def supervised_step(model: GSGN, batch: Batch, opt: Adam,
                    task_count: int = 0) -> dict:
    """One gradient step minimizing log10(MSE), i.e. ascending PSNR."""
    x = Tensor(batch.sources)
    y = Tensor(batch.targets)
    z = None
    if model.cfg.norm_mode == "adaptive":
        z = Tensor(one_hot(batch.task_ids, task_count or model.cfg.task_count))
    out = model(x, z)
    if batch.masks is not None:
        err = _masked_mse(out, y, batch.masks)
    else:
        err = mse(out, y)
    loss = ad.log10(ad.clamp(err, lo=1e-10))
    ad.backward(loss)
    opt.step()
    opt.zero_grad()
    return {"log10_mse": loss.item(), "mse": err.item(),
            "psnr_loss": -loss.item()}


# -- unpaired two-cycle ---------------------------------------------------------

@dataclass
class CycleModels:
    g_st: GSGN
    g_ts: GSGN
    d_s: Critic
    d_t: Critic
    classifier: Optional[StyleClassifier]


def _sample_style(rng: np.random.Generator, n: int,
                  task_count: int) -> Tuple[np.ndarray, np.ndarray]:
    ids = rng.integers(0, task_count, size=n)
    return ids, one_hot(ids, task_count)


def _critic_update(models: CycleModels, batch: Batch, weights: LossWeights,
                   opt_ds: Adam, opt_dt: Adam, task_count: int,
                   rng: np.random.Generator) -> dict:
    xs = Tensor(batch.sources)
    xt = Tensor(batch.targets)
    n = batch.sources.shape[0]
    with ad.no_grad():
        if task_count:
            _, z_rand = _sample_style(rng, n, task_count)
            fake_t = models.g_st(xs, Tensor(z_rand))
            fake_s = models.g_ts(xt, Tensor(one_hot(batch.task_ids,
                                                    task_count)))
        else:
            fake_t = models.g_st(xs)
            fake_s = models.g_ts(xt)
    u_t = rng.uniform(size=n)
    u_s = rng.uniform(size=n)
    lam_t, norms_t = gradient_penalty(models.d_t, xt, fake_t, u_t)
    lam_s, norms_s = gradient_penalty(models.d_s, xs, fake_s, u_s)
    loss_t = critic_loss(ad.mean_(models.d_t(xt)),
                         ad.mean_(models.d_t(fake_t)),
                         ad.mean_(lam_t), weights)
    loss_s = critic_loss(ad.mean_(models.d_s(xs)),
                         ad.mean_(models.d_s(fake_s)),
                         ad.mean_(lam_s), weights)
    total = ad.add(loss_t, loss_s)
    ad.backward(total)
    opt_dt.step()
    opt_ds.step()
    opt_dt.zero_grad()
    opt_ds.zero_grad()
    return {"critic_loss_t": loss_t.item(), "critic_loss_s": loss_s.item(),
            "grad_norm": float((norms_t.mean() + norms_s.mean()) / 2.0)}


def cycle_step(models: CycleModels, stream: Iterator[Batch],
               cfg: TrainConfig, opts: Dict[str, Adam], task_count: int,
               iteration: int) -> dict:
    """critic_ratio critic updates (fresh batches and interpolation draws
    each), then one generator update over both cycles, then one classifier
    update on real target samples (multitask only)."""
    critic_logs = []
    for k in range(cfg.critic_ratio):
        batch = next(stream)
        rng = _rng(cfg.seed, 1, iteration, k)
        critic_logs.append(_critic_update(models, batch, cfg.weights,
                                          opts["d_s"], opts["d_t"],
                                          task_count, rng))

    batch = next(stream)
    rng = _rng(cfg.seed, 2, iteration)
    xs = Tensor(batch.sources)
    xt = Tensor(batch.targets)
    n = batch.sources.shape[0]
    if task_count:
        _, z_rand = _sample_style(rng, n, task_count)
        z = Tensor(z_rand)
        zt = Tensor(one_hot(batch.task_ids, task_count))
        fake_t = models.g_st(xs, z)
        cyc_s = models.g_ts(fake_t, z)
        fake_s = models.g_ts(xt, zt)
        cyc_t = models.g_st(fake_s, zt)
    else:
        fake_t = models.g_st(xs)
        cyc_s = models.g_ts(fake_t)
        fake_s = models.g_ts(xt)
        cyc_t = models.g_st(fake_s)

    adv = ad.add(adversarial_loss(ad.mean_(models.d_t(fake_t))),
                 adversarial_loss(ad.mean_(models.d_s(fake_s))))
    cyc = cycle_loss(xs, cyc_s, xt, cyc_t)
    ident = identity_loss(xs, fake_t, xt, fake_s)
    if task_count and cfg.weights.conditional > 0:
        cond = conditional_loss(z, models.classifier(fake_t))
    else:
        cond = Tensor(np.zeros((), dtype=np.float32))
    total = total_generator_loss(cyc, ident, adv, cond, cfg.weights)
    ad.backward(total)
    opts["g_st"].step()
    opts["g_ts"].step()
    opts["g_st"].zero_grad()
    opts["g_ts"].zero_grad()
    # discard spillover grads: critics/classifier are never updated from
    # the generator objective
    models.d_s.zero_grad()
    models.d_t.zero_grad()
    if models.classifier is not None:
        models.classifier.zero_grad()

    cls_loss = None
    if task_count and cfg.weights.conditional > 0:
        zt = Tensor(one_hot(batch.task_ids, task_count))
        closs = conditional_loss(zt, models.classifier(xt))
        ad.backward(closs)
        opts["classifier"].step()
        opts["classifier"].zero_grad()
        cls_loss = closs.item()

    return {
        "critic_updates": len(critic_logs),
        "grad_norms": [c["grad_norm"] for c in critic_logs],
        "critic_loss_t": critic_logs[-1]["critic_loss_t"],
        "critic_loss_s": critic_logs[-1]["critic_loss_s"],
        "gen_total": total.item(),
        "cycle": cyc.item(),
        "identity": ident.item(),
        "adversarial": adv.item(),
        "conditional": cond.item(),
        "classifier_loss": cls_loss,
    }


# -- validation -----------------------------------------------------------------

def evaluate_model(model: GSGN, samples, task_count: int = 0,
                   batch: int = 16, compute_ssim: bool = False) -> dict:
    """Mean PSNR (and optionally SSIM) of model outputs on paired samples.

    Padded samples are cropped to their content mask before scoring.
    """
    from .data import crop_to_mask
    psnrs, ssims = [], []
    with ad.no_grad():
        for start in range(0, len(samples), batch):
            chunk = samples[start:start + batch]
            x = Tensor(np.stack([s.source for s in chunk]))
            z = None
            if model.cfg.norm_mode == "adaptive":
                ids = np.array([s.task_id for s in chunk])
                z = Tensor(one_hot(ids, task_count or model.cfg.task_count))
            out = model(x, z, clamp_output=True).data
            for i, s in enumerate(chunk):
                got, want = out[i], s.target
                if s.mask is not None:
                    got = crop_to_mask(got, s.mask)
                    want = crop_to_mask(want, s.mask)
                psnrs.append(psnr(got, want))
                if compute_ssim:
                    ssims.append(ssim(got, want))
    res = {"psnr": float(np.mean(psnrs))}
    if compute_ssim:
        res["ssim"] = float(np.mean(ssims))
    return res


# -- full runs -------------------------------------------------------------------

def _build_models(mode: str, base_cfg: ModelConfig, task_count: int,
                  cfg: TrainConfig):
    if mode.endswith("multitask"):
        gen_cfg = replace(base_cfg, norm_mode="adaptive",
                          task_count=task_count)
    else:
        gen_cfg = base_cfg
    g_st = GSGN(gen_cfg, _rng(cfg.seed, 10))
    if mode.startswith("supervised"):
        return gen_cfg, g_st, None
    g_ts = GSGN(gen_cfg, _rng(cfg.seed, 11))
    d_s = Critic(_rng(cfg.seed, 12), cfg.critic_width, cfg.critic_stages)
    d_t = Critic(_rng(cfg.seed, 13), cfg.critic_width, cfg.critic_stages)
    classifier = None
    if mode.endswith("multitask"):
        classifier = StyleClassifier(task_count, _rng(cfg.seed, 14),
                                     cfg.classifier_width,
                                     cfg.classifier_stages)
    return gen_cfg, g_st, CycleModels(g_st, g_ts, d_s, d_t, classifier)


def _pack_checkpoint(mode: str, gen_cfg: ModelConfig, task_names, g_st: GSGN,
                     cycle_models, opts: Dict[str, Adam], iteration: int,
                     cfg: TrainConfig, extra_meta: dict) -> Checkpoint:
    tensors: Dict[str, np.ndarray] = {}
    for name, arr in g_st.state_dict().items():
        tensors[f"model.{name}"] = arr
    if cycle_models is not None:
        aux = {"g_ts": cycle_models.g_ts, "d_s": cycle_models.d_s,
               "d_t": cycle_models.d_t}
        if cycle_models.classifier is not None:
            aux["classifier"] = cycle_models.classifier
        for key, mod in aux.items():
            for name, arr in mod.state_dict().items():
                tensors[f"aux.{key}.{name}"] = arr
    adam_t = {}
    for key, opt in opts.items():
        tensors.update(opt.state_tensors(f"optim.{key}"))
        adam_t[key] = opt.t
    meta = {"iteration": iteration, "mode": mode, "adam_t": adam_t,
            "train_config": cfg.to_dict()}
    meta.update(extra_meta)
    return Checkpoint(config=gen_cfg, task_names=list(task_names),
                      tensors=tensors, meta=meta)


def _restore(ckpt: Checkpoint, g_st: GSGN, cycle_models,
             opts: Dict[str, Adam]) -> int:
    g_st.load_state_dict(ckpt.model_state("model."))
    if cycle_models is not None:
        aux = {"g_ts": cycle_models.g_ts, "d_s": cycle_models.d_s,
               "d_t": cycle_models.d_t}
        if cycle_models.classifier is not None:
            aux["classifier"] = cycle_models.classifier
        for key, mod in aux.items():
            mod.load_state_dict(ckpt.model_state(f"aux.{key}."))
    for key, opt in opts.items():
        opt.load_state_tensors(f"optim.{key}", ckpt.tensors,
                               ckpt.meta["adam_t"][key])
    return int(ckpt.meta["iteration"])


def run_training(mode: str, dataset: PairedDataset,
                 model_cfg: Optional[ModelConfig] = None,
                 train_cfg: Optional[TrainConfig] = None,
                 out_dir=None,
                 resume_from: Optional[Checkpoint] = None
                 ) -> Tuple[Checkpoint, RunLog]:
    """Run one training mode end to end; returns the final-state checkpoint
    (resumable) and the run log. When out_dir is given, periodic
    checkpoints, the best-validation checkpoint, and the log are written
    there."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    cfg = train_cfg or TrainConfig()
    base_cfg = model_cfg or desk_config()
    task_count = len(dataset.task_names)
    if mode.endswith("multitask") and task_count < 1:
        raise ValueError("multitask mode needs task names in the dataset")
    train_samples = dataset.split("train")
    if not train_samples:
        raise ValueError("empty training split")

    gen_cfg, g_st, cycle_models = _build_models(mode, base_cfg,
                                                task_count, cfg)
    supervised = mode.startswith("supervised")
    if supervised:
        opts = {"g_st": Adam(g_st, cfg.learning_rate, cfg.beta1_supervised,
                             cfg.beta2)}
    else:
        opts = {
            "g_st": Adam(cycle_models.g_st, cfg.learning_rate,
                         cfg.beta1_adversarial, cfg.beta2),
            "g_ts": Adam(cycle_models.g_ts, cfg.learning_rate,
                         cfg.beta1_adversarial, cfg.beta2),
            "d_s": Adam(cycle_models.d_s, cfg.learning_rate,
                        cfg.beta1_adversarial, cfg.beta2),
            "d_t": Adam(cycle_models.d_t, cfg.learning_rate,
                        cfg.beta1_adversarial, cfg.beta2),
        }
        if cycle_models.classifier is not None:
            opts["classifier"] = Adam(cycle_models.classifier,
                                      cfg.learning_rate,
                                      cfg.beta1_adversarial, cfg.beta2)

    start_iter = 0
    if resume_from is not None:
        if resume_from.meta.get("mode") != mode:
            raise ValueError("checkpoint was produced by a different mode")
        start_iter = _restore(resume_from, g_st, cycle_models, opts)

    sample_mode = "paired" if supervised else "unpaired"
    stream = sample_batches(train_samples, cfg.batch_size, cfg.seed,
                            sample_mode)
    per_iter = 1 if supervised else cfg.critic_ratio + 1
    for _ in range(start_iter * per_iter):
        next(stream)

    log = RunLog()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    best_psnr = -np.inf

    for it in range(start_iter, cfg.iterations):
        t0 = time.perf_counter()
        if supervised:
            entry = supervised_step(g_st, next(stream), opts["g_st"],
                                    task_count)
        else:
            entry = cycle_step(cycle_models, stream, cfg, opts,
                               task_count if mode.endswith("multitask") else 0,
                               it)
        entry["iteration"] = it + 1
        entry["seconds"] = round(time.perf_counter() - t0, 6)

        done = it + 1
        if cfg.eval_every and done % cfg.eval_every == 0:
            val = evaluate_model(g_st, dataset.split("val"), task_count)
            entry["val_psnr"] = val["psnr"]
            if out_dir is not None and val["psnr"] > best_psnr:
                best_psnr = val["psnr"]
                ck = _pack_checkpoint(mode, gen_cfg, dataset.task_names,
                                      g_st, cycle_models, opts, done, cfg,
                                      {"best_val_psnr": best_psnr})
                save_checkpoint(ck, out_dir / "best.gsgn")
        log.append(entry)
        if (out_dir is not None and cfg.checkpoint_every
                and done % cfg.checkpoint_every == 0):
            ck = _pack_checkpoint(mode, gen_cfg, dataset.task_names, g_st,
                                  cycle_models, opts, done, cfg, {})
            save_checkpoint(ck, out_dir / f"iter{done:07d}.gsgn")

    final = _pack_checkpoint(mode, gen_cfg, dataset.task_names, g_st,
                             cycle_models, opts, cfg.iterations, cfg, {})
    if out_dir is not None:
        save_checkpoint(final, out_dir / "final.gsgn")
        log.write(out_dir / "train_log.jsonl")
    return final, log
