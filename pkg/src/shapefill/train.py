"""Adversarial training loop, checkpointing, and the gradient-check harness."""

from __future__ import annotations

import dataclasses
import json
import os
import shutil
from dataclasses import dataclass, field

import numpy as np
import torch

from . import losses as L
from .errors import CheckpointError, InvalidInputError, TrainingDiverged
from .features import ToyClassifier, load_extractor, save_extractor, train_toy_classifier
from .losses import LossWeights
from .model import Discriminator, ModelConfig, TwoStreamInpainter
from .samples import FilterConfig, InpaintingSample, cut_hole
from .shapesworld import load_dataset, read_shapesworld_manifest


@dataclass
class TrainConfig:
    data_dir: str = ""
    out_dir: str = ""
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 2e-4
    betas: tuple[float, float] = (0.0, 0.99)
    batch_size: int = 16
    steps: int = 1000
    checkpoint_interval: int = 250
    log_interval: int = 1
    seed: int = 0
    object_data: bool = True       # False: replace instance holes with random boxes
    gan_variant: str = "wgan-gp"   # or "nonsat"
    ema: bool = True
    ema_decay: float = 0.999
    deterministic: bool = True     # single-threaded, fully seeded
    fx_steps: int = 300            # perceptual-backbone training budget
    inject_nan_at: int | None = None  # diagnostic fault injection

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 1:
            raise InvalidInputError("batch_size and steps must be >= 1")
        if self.checkpoint_interval < 1 or self.log_interval < 1:
            raise InvalidInputError("intervals must be >= 1")
        if self.gan_variant not in ("wgan-gp", "nonsat"):
            raise InvalidInputError(f"unknown gan_variant {self.gan_variant!r}")


class TrainState:
    """Generator, discriminator, their optimizers, EMA shadow, and RNG."""

    def __init__(self, cfg: TrainConfig):
        self.generator = TwoStreamInpainter(cfg.model)
        self.discriminator = Discriminator(cfg.model)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=cfg.lr, betas=cfg.betas)
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=cfg.lr, betas=cfg.betas)
        self.step = 0
        self.rng = torch.Generator().manual_seed(cfg.seed)
        self.ema = {k: v.detach().clone() for k, v in self.generator.state_dict().items()}

    def update_ema(self, decay: float) -> None:
        with torch.no_grad():
            for k, v in self.generator.state_dict().items():
                if v.dtype.is_floating_point:
                    self.ema[k].mul_(decay).add_(v, alpha=1.0 - decay)
                else:
                    self.ema[k].copy_(v)


def batch_to_tensors(batch: list[InpaintingSample]) -> dict[str, torch.Tensor]:
    if not batch:
        raise InvalidInputError("batch must be nonempty")
    return {
        "masked": torch.from_numpy(np.stack([s.masked_image for s in batch])),
        "hole": torch.from_numpy(np.stack([s.hole for s in batch]))[:, None],
        "target": torch.from_numpy(np.stack([s.target for s in batch])),
        "one_hot": torch.from_numpy(np.stack([s.one_hot for s in batch])),
    }


def random_box_masks(batch: list[InpaintingSample], rng: np.random.Generator,
                     filter_cfg: FilterConfig | None = None,
                     aspect_range: tuple[float, float] = (0.5, 2.0)) -> list[InpaintingSample]:
    """Replace each instance hole with a random rectangle of comparable area."""
    filter_cfg = filter_cfg or FilterConfig()
    out = []
    for s in batch:
        H, W = s.hole.shape
        frac = rng.uniform(filter_cfg.min_frac, filter_cfg.max_frac)
        aspect = np.exp(rng.uniform(np.log(aspect_range[0]), np.log(aspect_range[1])))
        h = int(np.clip(round(np.sqrt(frac * H * W * aspect)), 1, H))
        w = int(np.clip(round(frac * H * W / h), 1, W))
        r0 = int(rng.integers(0, H - h + 1))
        c0 = int(rng.integers(0, W - w + 1))
        hole = np.zeros((H, W), dtype=np.float32)
        hole[r0:r0 + h, c0:c0 + w] = 1.0
        out.append(InpaintingSample(cut_hole(s.target, hole), hole, s.target,
                                    s.category, s.one_hot))
    return out


def _check_losses_finite(state: TrainState, values: dict[str, float],
                         last_checkpoint: str | None) -> None:
    bad = [k for k, v in values.items() if not np.isfinite(v)]
    if bad:
        raise TrainingDiverged(f"non-finite losses at step {state.step}: {bad}", last_checkpoint)


def train_step(batch: dict[str, torch.Tensor], state: TrainState, cfg: TrainConfig,
               fx: ToyClassifier, last_checkpoint: str | None = None) -> dict[str, float]:
    """One discriminator update (with gradient penalty) then one generator update."""
    G, D = state.generator, state.discriminator
    masked, hole = batch["masked"], batch["hole"]
    target, one_hot = batch["target"], batch["one_hot"]
    B = masked.shape[0]
    use_wgan = cfg.gan_variant == "wgan-gp"

    # discriminator update
    z = torch.randn(B, cfg.model.z_dim, generator=state.rng)
    with torch.no_grad():
        fake = G(masked, hole, z, teacher_one_hot=one_hot)["composite"]
    d_real = D(target)
    d_fake = D(fake)
    critic = (L.gan_loss_d if use_wgan else L.hinge_loss_d)(d_real, d_fake)
    gp = L.gradient_penalty(D, target, fake, rng=state.rng) if use_wgan else \
        torch.zeros(())
    loss_d = critic + cfg.weights.gradient_penalty * gp
    state.opt_d.zero_grad()
    loss_d.backward()
    state.opt_d.step()

    # generator update
    z = torch.randn(B, cfg.model.z_dim, generator=state.rng)
    out = G(masked, hole, z, teacher_one_hot=one_hot)
    scores = D(out["composite"])
    l_gan = (L.gan_loss_g if use_wgan else L.hinge_loss_g)(scores)
    l_perc = L.perceptual_loss(out["composite"], target, fx)
    if cfg.model.use_pce:
        l_cls = L.class_loss(out["class_prediction"].probabilities, one_hot)
    else:
        l_cls = torch.zeros(())
    loss_g = L.total_generator_loss(l_perc, l_gan, l_cls, cfg.weights)
    state.opt_g.zero_grad()
    loss_g.backward()
    state.opt_g.step()
    if cfg.ema:
        state.update_ema(cfg.ema_decay)

    state.step += 1
    if cfg.inject_nan_at is not None and state.step == cfg.inject_nan_at:
        with torch.no_grad():
            next(iter(G.parameters())).fill_(float("nan"))

    metrics = {
        "step": state.step,
        "loss_d": float(loss_d.detach()),
        "critic": float(critic.detach()),
        "gp": float(gp.detach()),
        "loss_g": float(loss_g.detach()),
        "loss_gan_g": float(l_gan.detach()),
        "loss_perc": float(l_perc.detach()),
    }
    if cfg.model.use_pce:
        metrics["loss_cls"] = float(l_cls.detach())
    _check_losses_finite(state, {k: v for k, v in metrics.items() if k != "step"},
                         last_checkpoint)
    for p in G.parameters():
        if not torch.isfinite(p).all():
            raise TrainingDiverged(f"non-finite generator parameters at step {state.step}",
                                   last_checkpoint)
    return metrics


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(out_dir: str, state: TrainState, cfg: TrainConfig,
                    categories: dict[int, str], name: str | None = None) -> str:
    """Atomic write: fill a temp directory, then rename into place."""
    final = os.path.join(out_dir, name or f"step_{state.step:06d}")
    tmp = final + ".tmp"
    os.makedirs(tmp, exist_ok=True)
    torch.save(state.generator.state_dict(), os.path.join(tmp, "generator.pt"))
    torch.save(state.discriminator.state_dict(), os.path.join(tmp, "discriminator.pt"))
    torch.save({"opt_g": state.opt_g.state_dict(), "opt_d": state.opt_d.state_dict()},
               os.path.join(tmp, "optimizer.pt"))
    torch.save(state.ema, os.path.join(tmp, "ema.pt"))
    meta = {
        "model_config": dataclasses.asdict(cfg.model),
        "categories": {str(k): v for k, v in categories.items()},
        "step": state.step,
        "rng_state": state.rng.get_state().numpy().tobytes().hex(),
    }
    with open(os.path.join(tmp, "meta.json"), "w") as f:
        json.dump(meta, f, indent=1)
    if os.path.exists(final):
        shutil.rmtree(final)
    os.replace(tmp, final)
    return final


def load_checkpoint(path: str, cfg: TrainConfig | None = None) -> tuple[TrainState, dict]:
    """Restore a TrainState (and metadata) from a checkpoint directory."""
    meta_path = os.path.join(path, "meta.json")
    try:
        with open(meta_path) as f:
            meta = json.load(f)
        model_cfg = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v
                                   for k, v in meta["model_config"].items()})
        cfg = cfg or TrainConfig(model=model_cfg)
        cfg = dataclasses.replace(cfg, model=model_cfg)
        state = TrainState(cfg)
        state.generator.load_state_dict(
            torch.load(os.path.join(path, "generator.pt"), weights_only=True))
        state.discriminator.load_state_dict(
            torch.load(os.path.join(path, "discriminator.pt"), weights_only=True))
        opt = torch.load(os.path.join(path, "optimizer.pt"), weights_only=True)
        state.opt_g.load_state_dict(opt["opt_g"])
        state.opt_d.load_state_dict(opt["opt_d"])
        state.ema = torch.load(os.path.join(path, "ema.pt"), weights_only=True)
        state.step = meta["step"]
        rng_bytes = bytes.fromhex(meta["rng_state"])
        state.rng.set_state(torch.from_numpy(np.frombuffer(rng_bytes, dtype=np.uint8).copy()))
    except (OSError, json.JSONDecodeError, KeyError, RuntimeError, TypeError) as e:
        raise CheckpointError(f"cannot load checkpoint {path}: {e}") from e
    return state, meta


def load_generator(path: str, use_ema: bool = True) -> tuple[TwoStreamInpainter, dict]:
    """Inference-side loader: just the generator (EMA weights by default)."""
    try:
        with open(os.path.join(path, "meta.json")) as f:
            meta = json.load(f)
        model_cfg = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v
                                   for k, v in meta["model_config"].items()})
        G = TwoStreamInpainter(model_cfg)
        weights_file = "ema.pt" if use_ema else "generator.pt"
        G.load_state_dict(torch.load(os.path.join(path, weights_file), weights_only=True))
    except (OSError, json.JSONDecodeError, KeyError, RuntimeError, TypeError) as e:
        raise CheckpointError(f"cannot load checkpoint {path}: {e}") from e
    return G.eval(), meta


# -- full runs ----------------------------------------------------------------

def prepare_feature_extractor(cfg: TrainConfig, dataset: list[InpaintingSample]) -> ToyClassifier:
    path = os.path.join(cfg.out_dir, "perceptual_fx.pt")
    if os.path.exists(path):
        return load_extractor(path)
    fx = train_toy_classifier(dataset, cfg.model.num_classes,
                              steps=cfg.fx_steps, seed=cfg.seed)
    save_extractor(fx, path)
    return fx


def fit(cfg: TrainConfig, resume: str | None = None) -> str:
    """Train to cfg.steps, checkpointing on the way; returns the final path."""
    if cfg.deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)
    os.makedirs(cfg.out_dir, exist_ok=True)

    manifest = read_shapesworld_manifest(cfg.data_dir)
    dataset = load_dataset(manifest)
    if not dataset:
        raise InvalidInputError(f"no usable samples in {cfg.data_dir}")
    fx = prepare_feature_extractor(cfg, dataset)

    if resume is not None:
        state, _ = load_checkpoint(resume, cfg)
        log_mode = "a"
    else:
        state = TrainState(cfg)
        log_mode = "w"

    with open(os.path.join(cfg.out_dir, "resolved_config.json"), "w") as f:
        json.dump(dataclasses.asdict(cfg), f, indent=1, default=str)

    box_rng = np.random.default_rng(cfg.seed + 1)
    sample_rng = np.random.default_rng(cfg.seed + 2)
    last_checkpoint = resume
    log_path = os.path.join(cfg.out_dir, "train_log.ndjson")
    with open(log_path, log_mode) as log:
        while state.step < cfg.steps:
            idx = sample_rng.integers(len(dataset), size=cfg.batch_size)
            batch = [dataset[i] for i in idx]
            if not cfg.object_data:
                batch = random_box_masks(batch, box_rng)
            try:
                metrics = train_step(batch_to_tensors(batch), state, cfg, fx,
                                     last_checkpoint=last_checkpoint)
            except TrainingDiverged:
                save_path = os.path.join(cfg.out_dir, "DIVERGED")
                with open(save_path, "w") as f:
                    f.write(f"step {state.step}; last checkpoint: {last_checkpoint}\n")
                raise
            if state.step % cfg.log_interval == 0 or state.step == cfg.steps:
                log.write(json.dumps(metrics) + "\n")
            if state.step % cfg.checkpoint_interval == 0:
                last_checkpoint = save_checkpoint(cfg.out_dir, state, cfg,
                                                  manifest.categories)
    final = save_checkpoint(cfg.out_dir, state, cfg, manifest.categories,
                            name="final")
    return final


# -- gradient checking --------------------------------------------------------

@dataclass
class GradCheckEntry:
    group: str
    status: str            # "pass" | "fail" | "skipped"
    max_rel_err: float
    checked: int


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e.status != "fail" for e in self.entries)


def _rel_err(a: float, n: float) -> float:
    scale = max(abs(a), abs(n))
    if scale < 1e-7:
        return 0.0
    return abs(a - n) / scale


def _fd_group(objective, params: list[torch.Tensor], n_probe: int, step: float,
              rng: np.random.Generator) -> tuple[float, int]:
    """Compare autograd gradients to central finite differences on sampled entries."""
    for p in params:
        p.grad = None
    loss = objective()
    loss.backward()
    worst, checked = 0.0, 0
    for p in params:
        grad = p.grad
        if grad is None:
            continue
        flat = p.data.view(-1)
        for _ in range(min(n_probe, flat.numel())):
            i = int(rng.integers(flat.numel()))
            orig = flat[i].item()

            def central(h):
                flat[i] = orig + h
                hi = objective().item()
                flat[i] = orig - h
                lo = objective().item()
                flat[i] = orig
                return (hi - lo) / (2.0 * h)

            analytic = grad.view(-1)[i].item()
            err = _rel_err(analytic, central(step))
            if err >= 1e-4:
                # piecewise-linear activations make the larger step cross a
                # kink occasionally; re-estimate on a finer stencil
                err = min(err, _rel_err(analytic, central(step * 1e-2)))
            worst = max(worst, err)
            checked += 1
    return worst, checked


def grad_check(model_cfg: ModelConfig | None = None, tolerance: float = 1e-3,
               step: float = 1e-4, n_probe: int = 4, seed: int = 0,
               extra_groups: dict[str, list[torch.Tensor]] | None = None) -> GradCheckReport:
    """64-bit finite-difference verification of every parameter group.

    Uses a micro configuration by default. The objective exercises the full
    generator (weighted output sum + class loss) and each loss separately.
    """
    model_cfg = model_cfg or ModelConfig(image_size=16, num_scales=2, channels=(8, 16),
                                         num_classes=2, z_dim=8, h_dim=8)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    dtype = torch.float64

    G = TwoStreamInpainter(model_cfg).to(dtype)
    D = Discriminator(model_cfg).to(dtype)
    B, N, C = 2, model_cfg.image_size, model_cfg.num_classes
    hole = torch.zeros(B, 1, N, N, dtype=dtype)
    hole[:, :, N // 4: 3 * N // 4, N // 4: 3 * N // 4] = 1.0
    target = torch.tanh(torch.randn(B, 3, N, N, dtype=dtype))
    masked = target * (1.0 - hole)
    z = torch.randn(B, model_cfg.z_dim, dtype=dtype)
    one_hot = torch.eye(C, dtype=dtype)[torch.arange(B) % C]
    R = torch.randn(B, 3, N, N, dtype=dtype)

    def model_objective():
        out = G(masked, hole, z, teacher_one_hot=one_hot)
        s = (out["output"] * R).sum()
        return s + L.class_loss(out["class_prediction"].probabilities, one_hot)

    groups = {
        "context_encoder": list(G.context_encoder.parameters()),
        "semantic_encoder": list(G.semantic_encoder.parameters()),
        "class_head": list(G.class_head.parameters()),
        "latent_mapping": list(G.mapping.parameters()),
        "decoder": list(G.decoder.parameters()),
    }
    groups.update(extra_groups or {})
    entries = []
    for name, params in groups.items():
        if not params:
            entries.append(GradCheckEntry(name, "skipped", 0.0, 0))
            continue
        worst, checked = _fd_group(model_objective, params, n_probe, step, rng)
        entries.append(GradCheckEntry(
            name, "pass" if worst < tolerance else "fail", worst, checked))

    # class loss: analytic softmax identity, checked at the logits
    logits = torch.randn(B, C, dtype=dtype, requires_grad=True)
    probs = torch.softmax(logits, dim=1)
    L.class_loss(probs, one_hot).backward()
    analytic = (probs.detach() - one_hot) / B
    err = (logits.grad - analytic).abs().max().item()
    entries.append(GradCheckEntry("class_loss_logits",
                                  "pass" if err < 1e-6 else "fail", err, logits.numel()))

    # perceptual loss w.r.t. the generated image
    from .features import IdentityExtractor
    img = torch.randn(B, 3, N, N, dtype=dtype, requires_grad=True)
    fx = IdentityExtractor()

    def perc_objective():
        return L.perceptual_loss(img, target, fx)

    worst, checked = _fd_group(perc_objective, [img], n_probe, step, rng)
    entries.append(GradCheckEntry("perceptual_loss",
                                  "pass" if worst < tolerance else "fail", worst, checked))

    # gradient penalty w.r.t. discriminator parameters (fixed interpolation)
    def gp_objective():
        gen = torch.Generator().manual_seed(seed)
        return L.gradient_penalty(D, target, masked, rng=gen)

    d_params = list(D.parameters())
    worst, checked = _fd_group(gp_objective, d_params, 2, step, rng)
    entries.append(GradCheckEntry("gradient_penalty",
                                  "pass" if worst < tolerance else "fail", worst, checked))
    return GradCheckReport(entries, tolerance)
