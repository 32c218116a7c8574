"""Training loop: teacher step, self-labeling, then the conditional GAN step."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .autodiff import Parameter, backward, no_grad
from .data import Dataset, MixtureSpec, make_mixture_dataset, mask_labels, sample_batch
from .losses import LABEL_SOURCES, discriminator_loss, generator_loss, teacher_loss
from .metrics import (
    alignment_accuracy,
    dominant_class_ratio_curve,
    frechet_distance,
    mode_coverage,
    summarize,
)
from .nets import (
    Discriminator,
    Generator,
    Teacher,
    generator_forward,
    init_discriminator,
    init_generator,
    init_teacher,
    teacher_forward,
)
from .optim import AdamState, MomentumState, adam_step, nesterov_step
from .self_labeling import AugmentConfig, argmax_labels, ema_update, label_batch, label_reliability

log = logging.getLogger(__name__)

CURVE_THRESHOLDS = (0.0, 0.25, 0.5, 0.75, 0.95)


class NumericalError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class RunConfig:
    # data
    n_components: int = 8
    dim: int = 2
    radius: float = 4.0
    sigma: float = 0.2
    n_train: int = 10000
    n_eval: int = 5000
    label_rate: float = 0.0
    # method
    n_classes: int = 10
    threshold: float = 0.95
    ema_decay: float = 0.999
    ema_warmup: int = 1
    label_source: str = "real"
    g_loss: str = "hinge"
    gamma: float = 10.0
    # augmentation noise as fractions of the training data's coordinate std
    weak_sigma: float = 0.01
    strong_sigma: float = 0.1
    strong_dropout: float = 0.0
    # networks
    latent_dim: int = 2
    g_width: int = 128
    d_width: int = 128
    t_width: int = 64
    # optimisation
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.999
    lr_c: float = 0.03
    momentum: float = 0.9
    batch_label: int = 128
    batch_std: int = 64
    teacher_steps: int = 1
    # schedule
    iterations: int = 2000
    eval_interval: int = 500
    eval_samples: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError("ema_decay must lie in [0, 1]")
        if not 0.0 <= self.label_rate <= 1.0:
            raise ValueError("label_rate must lie in [0, 1]")
        if min(self.batch_label, self.batch_std) < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.batch_std > self.batch_label:
            raise ValueError("batch_std must not exceed batch_label")
        if self.label_source not in LABEL_SOURCES:
            raise ValueError(f"label_source must be one of {LABEL_SOURCES}")
        if self.g_loss not in ("hinge", "nonsaturating"):
            raise ValueError("g_loss must be 'hinge' or 'nonsaturating'")
        if self.iterations < 0 or self.eval_interval < 1 or self.teacher_steps < 0:
            raise ValueError("iterations >= 0, eval_interval >= 1, teacher_steps >= 0 required")

    def mixture(self) -> MixtureSpec:
        return MixtureSpec(self.n_components, self.dim, self.radius, self.sigma, self.seed)

    def augment(self, data_scale: float = 1.0) -> AugmentConfig:
        return AugmentConfig(self.weak_sigma * data_scale, self.strong_sigma * data_scale, self.strong_dropout)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def echo(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_dict().items())

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        return dataclasses.replace(self, **_coerce(overrides))

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        pairs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            pairs[k.strip()] = v.strip()
        return cls(**_coerce(pairs))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())


def _coerce(pairs: dict[str, str]) -> dict[str, Any]:
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    out = {}
    for k, v in pairs.items():
        if k not in types:
            raise ValueError(f"unknown config key {k!r}")
        if not isinstance(v, str):
            out[k] = v
        elif types[k] in ("int", int):
            out[k] = int(v)
        elif types[k] in ("float", float):
            out[k] = float(v)
        else:
            out[k] = v
    return out


@dataclass
class RunReport:
    losses: list[dict[str, float]] = field(default_factory=list)
    evals: list[dict[str, Any]] = field(default_factory=list)
    timing: dict[str, float] = field(default_factory=dict, compare=False)

    @property
    def final(self) -> dict[str, Any]:
        return self.evals[-1] if self.evals else {}

    def to_json(self) -> dict[str, Any]:
        return {"losses": self.losses, "evals": self.evals}


@dataclass
class TrainState:
    config: RunConfig
    gen: Generator
    disc: Discriminator
    teacher: Teacher
    opt_g: AdamState
    opt_d: AdamState
    opt_c: MomentumState
    rng: np.random.Generator
    iteration: int = 0
    report: RunReport = field(default_factory=RunReport)


@dataclass
class Datasets:
    train: Dataset
    held_out: Dataset
    centers: np.ndarray

    @property
    def scale(self) -> float:
        return float(self.train.x.std(axis=0).mean())


def make_datasets(config: RunConfig) -> Datasets:
    spec = config.mixture()
    train = make_mixture_dataset(spec, config.n_train, seed=config.seed)
    train = mask_labels(train, config.label_rate, seed=config.seed + 1)
    held_out = make_mixture_dataset(spec, config.n_eval, seed=config.seed + 7919)
    return Datasets(train, held_out, spec.center_array())


def init_state(config: RunConfig) -> TrainState:
    rng = np.random.default_rng(config.seed)
    K = config.n_classes
    gen = init_generator(rng, config.latent_dim, K, config.dim, (config.g_width,) * 3)
    disc = init_discriminator(rng, config.dim, K, (config.d_width,) * 3)
    teacher = init_teacher(rng, config.dim, K, (config.t_width,) * 2)
    return TrainState(
        config, gen, disc, teacher,
        AdamState(config.lr_g, config.beta1, config.beta2),
        AdamState(config.lr_d, config.beta1, config.beta2),
        MomentumState(config.lr_c, config.momentum),
        rng,
    )


def _finite(value: float, iteration: int, term: str) -> None:
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {term} at iteration {iteration}")


def effective_decay(cfg: RunConfig, iteration: int) -> float:
    """Configured decay, optionally capped by (1 + t) / (10 + t) early in training."""
    if not cfg.ema_warmup:
        return cfg.ema_decay
    return min(cfg.ema_decay, (1.0 + iteration) / (10.0 + iteration))


def train_step(state: TrainState, data: Datasets, timing: dict[str, float] | None = None) -> dict[str, float]:
    cfg, rng, it = state.config, state.rng, state.iteration
    gen, disc, teacher = state.gen, state.disc, state.teacher
    aug = cfg.augment(data.scale)
    t0 = time.perf_counter()

    z = rng.standard_normal((cfg.batch_std, cfg.latent_dim))
    c = rng.integers(0, cfg.n_classes, size=cfg.batch_std)
    batch = sample_batch(data.train, cfg.batch_label, rng)
    with no_grad():
        x_f = generator_forward(z, c, gen).data

    # teacher: trained on detached fakes only
    l_c = 0.0
    for _ in range(cfg.teacher_steps):
        holder = {}

        def teacher_grads(lookahead):
            p = {k: Parameter(k, v) for k, v in lookahead.items()}
            loss = teacher_loss(x_f, c, teacher, aug, rng, params=p)
            holder["loss"] = loss.item()
            return backward(loss, p)

        nesterov_step(teacher.params, teacher_grads, state.opt_c)
        l_c = holder["loss"]
        _finite(l_c, it, "l_c")
    ema_update(teacher.ema, teacher.params, effective_decay(cfg, it))
    sl = label_batch(batch.x, teacher, aug, cfg.threshold, rng)
    t1 = time.perf_counter()

    d_loss = discriminator_loss(batch, x_f, c, sl, disc, cfg.gamma, cfg.label_source, n_standard=cfg.batch_std)
    total_d = d_loss.l_d
    _finite(total_d.item(), it, "l_d")
    adam_step(disc.params, backward(total_d, disc.params), state.opt_d)
    t2 = time.perf_counter()

    g_loss = generator_loss(z, c, gen, disc, nonsaturating=cfg.g_loss == "nonsaturating",
                            conditional=cfg.label_source != "none")
    total_g = g_loss.l_g
    _finite(total_g.item(), it, "l_g")
    adam_step(gen.params, backward(total_g, gen.params), state.opt_g)
    t3 = time.perf_counter()

    row = {"iteration": it + 1, **d_loss.floats()}
    g_vals = g_loss.floats()
    row.update(l_g_u=g_vals["l_g_u"], l_g_c=g_vals["l_g_c"], l_g=g_vals["l_g"], l_c=l_c)
    row["selected"] = float(sl.mask.mean())
    for k in ("l_d_u", "l_d_c", "r1", "l_g_u", "l_g_c"):
        _finite(row[k], it, k)
    if timing is not None:
        timing["teacher"] = timing.get("teacher", 0.0) + t1 - t0
        timing["discriminator"] = timing.get("discriminator", 0.0) + t2 - t1
        timing["generator"] = timing.get("generator", 0.0) + t3 - t2
    state.iteration += 1
    return row


def teacher_labels(x: np.ndarray, teacher: Teacher) -> tuple[np.ndarray, np.ndarray]:
    """EMA-teacher labels and reliabilities without augmentation."""
    with no_grad():
        logits = teacher_forward(x, teacher, use_ema=True).data
    labels = argmax_labels(logits)
    return labels, label_reliability(logits, labels)


def sample_fakes(state: TrainState, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    cfg = state.config
    z = rng.standard_normal((n, cfg.latent_dim))
    c = rng.integers(0, cfg.n_classes, size=n)
    with no_grad():
        return generator_forward(z, c, state.gen).data, c


def evaluate(state: TrainState, data: Datasets) -> dict[str, Any]:
    cfg = state.config
    rng = np.random.default_rng([cfg.seed, state.iteration, 1])
    fakes, _ = sample_fakes(state, cfg.eval_samples, rng)
    real = data.held_out
    labels, rel = teacher_labels(real.x, state.teacher)
    curve = dominant_class_ratio_curve(real.y, labels, rel, CURVE_THRESHOLDS)
    return {
        "iteration": state.iteration,
        "frechet": frechet_distance(summarize(real.x), summarize(fakes)),
        "coverage": mode_coverage(fakes, data.centers, 3 * cfg.sigma),
        "accuracy": alignment_accuracy(labels, real.y, cfg.n_classes, cfg.n_components),
        "eval_selected": float((rel >= cfg.threshold).mean()),
        "curve_thresholds": list(CURVE_THRESHOLDS),
        "curve_values": [None if np.isnan(v) else float(v) for v in curve.values],
        "curve_counts": [int(n) for n in curve.counts],
    }


def train(
    config: RunConfig,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    stop_at: int | None = None,
) -> RunReport:
    """Run (or resume) training up to ``stop_at`` (default: config.iterations)."""
    state = load_checkpoint(resume_from) if resume_from is not None else init_state(config)
    if resume_from is not None and state.config != config:
        raise CheckpointError("checkpoint was written by a different config")
    data = make_datasets(config)
    until = config.iterations if stop_at is None else min(stop_at, config.iterations)
    timing = state.report.timing
    while state.iteration < until:
        row = train_step(state, data, timing)
        state.report.losses.append(row)
        if state.iteration % config.eval_interval == 0 or state.iteration == config.iterations:
            t = time.perf_counter()
            ev = evaluate(state, data)
            lo = max(0, state.iteration - config.eval_interval)
            ev["train_selected"] = float(np.mean([r["selected"] for r in state.report.losses[lo:]]))
            state.report.evals.append(ev)
            timing["evaluation"] = timing.get("evaluation", 0.0) + time.perf_counter() - t
            log.info("iter %d  fd=%.4f  acc=%.3f  cov=%d", state.iteration, ev["frechet"], ev["accuracy"], ev["coverage"])
            if out_dir is not None:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                save_checkpoint(Path(out_dir) / "last.ckpt", state)
    if out_dir is not None:
        write_outputs(state, Path(out_dir))
    return state.report


# ------------------------------------------------------------------ outputs


def write_outputs(state: TrainState, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg, report = state.config, state.report
    (out / "config.echo").write_text(cfg.echo())
    summary = {
        "seed": cfg.seed,
        "iteration": state.iteration,
        "config": cfg.to_dict(),
        "final": report.final,
        "best_frechet": min((e["frechet"] for e in report.evals), default=None),
        "evals": report.evals,
    }
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    (out / "timing.json").write_text(json.dumps(report.timing, indent=2, sort_keys=True))
    with open(out / "losses.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "metric", "value"])
        for row in report.losses:
            for k, v in row.items():
                if k != "iteration":
                    w.writerow([row["iteration"], k, repr(v)])
        for ev in report.evals:
            for k in ("frechet", "coverage", "accuracy", "eval_selected", "train_selected"):
                w.writerow([ev["iteration"], k, repr(ev[k])])
    write_curves(report.evals, out / "curves.csv")
    save_checkpoint(out / "final.ckpt", state)


def write_curves(evals: list[dict[str, Any]], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "threshold", "dominant_ratio", "count"])
        for ev in evals:
            for th, v, n in zip(ev["curve_thresholds"], ev["curve_values"], ev["curve_counts"]):
                w.writerow([ev["iteration"], th, "undefined" if v is None else repr(v), n])


# --------------------------------------------------------------- checkpoints

MAGIC = b"UNIGANCK"
FORMAT_VERSION = 1


def _tensor_items(state: TrainState):
    yield from ((f"g/{k}", p.data) for k, p in state.gen.params.items())
    yield from ((f"d/{k}", p.data) for k, p in state.disc.params.items())
    yield from ((f"c/{k}", p.data) for k, p in state.teacher.params.items())
    yield from ((f"ema/{k}", p.data) for k, p in state.teacher.ema.items())
    for tag, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        yield from ((f"{tag}.m/{k}", a) for k, a in opt.m.items())
        yield from ((f"{tag}.v/{k}", a) for k, a in opt.v.items())
    yield from ((f"opt_c.vel/{k}", a) for k, a in state.opt_c.velocity.items())


def checkpoint_bytes(state: TrainState) -> bytes:
    meta = {
        "config": state.config.to_dict(),
        "iteration": state.iteration,
        "adam_t": [state.opt_g.t, state.opt_d.t],
        "rng": state.rng.bit_generator.state,
        "report": state.report.to_json(),
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<Q", len(meta_bytes)))
    buf.write(meta_bytes)
    items = list(_tensor_items(state))
    buf.write(struct.pack("<I", len(items)))
    for name, arr in items:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, state: TrainState) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(state))
    tmp.replace(path)


def load_checkpoint(path) -> TrainState:
    """Parse and verify a checkpoint; nothing is returned unless the whole file checks out."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 4 + 32 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt)")
    try:
        return _parse_checkpoint(body, path)
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint: {exc}") from exc


def _parse_checkpoint(body: bytes, path) -> TrainState:
    view = memoryview(body)
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", view, pos)
    pos += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    (meta_len,) = struct.unpack_from("<Q", view, pos)
    pos += 8
    meta = json.loads(bytes(view[pos:pos + meta_len]))
    pos += meta_len
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos:pos + nlen]).decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", view, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", view, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) * 8
        tensors[name] = np.frombuffer(bytes(view[pos:pos + size]), dtype="<f8").reshape(shape).astype(np.float64)
        pos += size
    if pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after tensor table")

    config = RunConfig(**meta["config"])
    state = init_state(config)

    def fill(params, prefix):
        for k, p in params.items():
            key = f"{prefix}/{k}"
            if key not in tensors or tensors[key].shape != p.data.shape:
                raise CheckpointError(f"{path}: missing or misshapen tensor {key}")
            p.data = tensors[key]

    fill(state.gen.params, "g")
    fill(state.disc.params, "d")
    fill(state.teacher.params, "c")
    fill(state.teacher.ema, "ema")
    for tag, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        opt.m = {k.split("/", 1)[1]: a for k, a in tensors.items() if k.startswith(f"{tag}.m/")}
        opt.v = {k.split("/", 1)[1]: a for k, a in tensors.items() if k.startswith(f"{tag}.v/")}
    state.opt_g.t, state.opt_d.t = meta["adam_t"]
    state.opt_c.velocity = {k.split("/", 1)[1]: a for k, a in tensors.items() if k.startswith("opt_c.vel/")}
    state.rng.bit_generator.state = meta["rng"]
    state.iteration = meta["iteration"]
    state.report = RunReport(meta["report"]["losses"], meta["report"]["evals"])
    return state
