"""Three-stage curriculum training: warm-up on integer scales, pre-learning
on the arbitrary-scale grid, then full training with randomized reference
resolution. Alternative single-stage strategies (random / fixed-hr /
fixed-lr) reuse the same loop with a different task sampler.

All stochastic choices flow through one numpy PCG64 generator whose state is
checkpointed, so an interrupted run resumed from disk reproduces the
uninterrupted loss trajectory bit-for-bit in single-threaded mode.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from . import kspace, phantom
from .geometry import ScaleTask, effective_scale
from .losses import LAMBDA_K, LossReport, full_loss, psnr
from .model import (DualArbNet, ModelConfig, load_parameter_arrays,
                    named_parameter_arrays)

STRATEGIES = ("cur-random", "random", "fixed-hr", "fixed-lr")

STAGE_WARMUP = "warm-up"
STAGE_PRELEARN = "pre-learning"
STAGE_FULL = "full-training"

WARMUP_SCALES = (2.0, 3.0, 4.0)
SCALE_GRID = tuple(i / 10.0 for i in range(10, 41))  # 1.0 .. 4.0 step 0.1

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class CurriculumSchedule:
    warmup_epochs: int = 2
    prelearn_epochs: int = 4
    fulltrain_epochs: int = 14
    warmup_lr: float = 5e-5
    prelearn_lr: float = 1e-4
    fulltrain_lr0: float = 1e-4
    halving_period: int = 40

    def __post_init__(self):
        counts = (self.warmup_epochs, self.prelearn_epochs, self.fulltrain_epochs)
        if any(c < 0 for c in counts):
            raise ValueError("epoch counts must be >= 0")
        if sum(counts) == 0:
            raise ValueError("at least one stage must be nonzero")
        if self.halving_period < 1:
            raise ValueError("halving period must be >= 1")

    @property
    def total_epochs(self) -> int:
        return self.warmup_epochs + self.prelearn_epochs + self.fulltrain_epochs

    @classmethod
    def full_scale(cls) -> "CurriculumSchedule":
        return cls(warmup_epochs=10, prelearn_epochs=40, fulltrain_epochs=150)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CurriculumSchedule":
        return cls(**d)


@dataclass(frozen=True)
class StageParams:
    stage: str
    lr: float
    scale_sampler: str     # "fixed-set" | "grid"
    ref_mode_sampler: str  # "always-hr" | "always-lr" | "uniform-lr-hr"


def stage_for_epoch(schedule: CurriculumSchedule, epoch: int,
                    strategy: str = "cur-random") -> StageParams:
    """Piecewise-constant stage parameters at a given epoch."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch >= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} beyond schedule end ({schedule.total_epochs})")
    if strategy != "cur-random":
        # single uniform phase: grid scales, step-decayed lr, fixed ref sampler
        ref = {"random": "uniform-lr-hr", "fixed-hr": "always-hr",
               "fixed-lr": "always-lr"}[strategy]
        lr = schedule.fulltrain_lr0 * 0.5 ** (epoch // schedule.halving_period)
        return StageParams(stage=strategy, lr=lr, scale_sampler="grid",
                           ref_mode_sampler=ref)
    if epoch < schedule.warmup_epochs:
        return StageParams(STAGE_WARMUP, schedule.warmup_lr, "fixed-set", "always-hr")
    if epoch < schedule.warmup_epochs + schedule.prelearn_epochs:
        return StageParams(STAGE_PRELEARN, schedule.prelearn_lr, "grid", "always-hr")
    in_stage = epoch - schedule.warmup_epochs - schedule.prelearn_epochs
    lr = schedule.fulltrain_lr0 * 0.5 ** (in_stage // schedule.halving_period)
    return StageParams(STAGE_FULL, lr, "grid", "uniform-lr-hr")


def sample_task(stage: StageParams, rng: np.random.Generator,
                scale_filter=None, continuous_ref: bool = False):
    """Draw (s_nominal, ref_mode) for one batch.

    ``scale_filter`` optionally restricts the scale set (used when the
    dataset cannot host HR windows for the largest scales). With
    ``continuous_ref`` the randomized-reference stages draw a reference
    scale from the grid instead of the binary LR/HR choice; the mode is
    then the tuple ("custom", s_ref).
    """
    scales = WARMUP_SCALES if stage.scale_sampler == "fixed-set" else SCALE_GRID
    if scale_filter is not None:
        scales = tuple(s for s in scales if scale_filter(s))
        if not scales:
            raise ValueError("no feasible scales under the given filter")
    s = scales[int(rng.integers(len(scales)))]
    if stage.ref_mode_sampler == "always-hr":
        mode = "HR"
    elif stage.ref_mode_sampler == "always-lr":
        mode = "LR"
    elif continuous_ref:
        mode = ("custom", SCALE_GRID[int(rng.integers(len(SCALE_GRID)))])
    else:
        mode = ("LR", "HR")[int(rng.integers(2))]
    return s, mode


def ref_mode_label(mode) -> str:
    return mode if isinstance(mode, str) else f"custom:{mode[1]:g}"


def dihedral(arr: np.ndarray, g: int) -> np.ndarray:
    """Apply one of the 8 square symmetries (0 is the identity)."""
    if not 0 <= g <= 7:
        raise ValueError(f"dihedral element must be in 0..7, got {g}")
    a = np.asarray(arr)
    if g >= 4:
        a = a[:, ::-1]
    k = g % 4
    if k % 2 == 1 and a.shape[0] != a.shape[1]:
        raise ValueError("90-degree rotation requires a square patch")
    return np.ascontiguousarray(np.rot90(a, k))


class TrainingData:
    """In-memory slice pairs plus the bookkeeping the sampler needs."""

    def __init__(self, pairs: list[tuple[np.ndarray, np.ndarray]], ids: list[str]):
        if not pairs:
            raise ValueError("empty training set")
        self.pairs = pairs
        self.ids = ids
        self.min_dim = min(min(t.shape) for t, _ in pairs)

    @classmethod
    def from_manifest(cls, manifest: phantom.DatasetManifest) -> "TrainingData":
        pairs, ids = [], []
        for entry in manifest.entries:
            tar, ref = manifest.load_pair(entry)
            pairs.append((tar.pixels, ref.pixels))
            ids.append(f"{entry.subject_id}/{entry.slice_id}")
        return cls(pairs, ids)


@dataclass
class TrainBatch:
    tar_lr: torch.Tensor   # (B,1,p,p)
    ref: torch.Tensor      # (B,1,ref_h,ref_w)
    hr: torch.Tensor       # (B,1,h,h)
    mask: torch.Tensor     # (h,h)
    task: ScaleTask
    s_nominal: float
    ref_mode: str
    sample_ids: list


def sample_batch(data: TrainingData, s_nominal: float, ref_mode: str,
                 rng: np.random.Generator, batch_size: int = 6,
                 lr_patch: int = 32) -> TrainBatch:
    """Extract ``batch_size`` aligned patch triples for one shared task.

    Per sample the draw order is: slice index, window row, window column,
    dihedral element. Augmentation happens on the HR windows before
    degradation; array flips do not commute with the spectrum crop (the
    reflection axes of the HR and LR grids differ by half an LR pixel), so
    degrading afterwards is what keeps the triple consistent.
    """
    h, s_exact = effective_scale(lr_patch, s_nominal)
    if h > data.min_dim:
        raise ValueError(
            f"HR window {h} exceeds smallest training slice ({data.min_dim})"
        )
    tar_lr, ref_in, hr, taken = [], [], [], []
    for _ in range(batch_size):
        idx = int(rng.integers(len(data.pairs)))
        tar_full, ref_full = data.pairs[idx]
        y0 = int(rng.integers(tar_full.shape[0] - h + 1))
        x0 = int(rng.integers(tar_full.shape[1] - h + 1))
        g = int(rng.integers(8))
        tw = dihedral(tar_full[y0:y0 + h, x0:x0 + h], g).astype(np.float64)
        rw = dihedral(ref_full[y0:y0 + h, x0:x0 + h], g).astype(np.float64)
        tar_lr.append(kspace.degrade_array(tw, s_exact))
        if ref_mode == "HR":
            ref_in.append(rw)
        elif ref_mode == "LR":
            ref_in.append(kspace.degrade_array(rw, s_exact))
        else:
            ref_in.append(kspace.degrade_array(rw, float(ref_mode[1])))
        hr.append(tw)
        taken.append(data.ids[idx])

    def stack(arrs):
        return torch.from_numpy(np.stack(arrs)[:, None].astype(np.float32))

    ref_dims = ref_in[0].shape
    mode_name = ref_mode if isinstance(ref_mode, str) else "custom"
    task = ScaleTask.from_dims((h, h), (lr_patch, lr_patch), ref_dims, mode_name)
    mask = kspace.lowpass_mask((h, h), (lr_patch, lr_patch))
    return TrainBatch(
        tar_lr=stack(tar_lr), ref=stack(ref_in), hr=stack(hr),
        mask=torch.from_numpy(mask.values.astype(np.float32)),
        task=task, s_nominal=s_nominal, ref_mode=ref_mode_label(ref_mode),
        sample_ids=taken,
    )


def train_step(model: DualArbNet, optimizer: torch.optim.Optimizer,
               batch: TrainBatch, lambda_k: float = LAMBDA_K,
               use_k: bool = True) -> LossReport:
    model.train()
    sr = model(batch.tar_lr, batch.ref, batch.task)
    total, report = full_loss(sr, batch.hr, batch.mask, lambda_k, use_k)
    if not math.isfinite(report.l_full):
        raise FloatingPointError(
            f"non-finite loss ({report}) on samples {batch.sample_ids}"
        )
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    return report


def validate(model: DualArbNet, pairs, scales=(2.0, 4.0)) -> dict[float, float]:
    """Mean full-slice PSNR per scale on HR-reference tasks."""
    model.eval()
    out = {}
    with torch.no_grad():
        for s in scales:
            vals = []
            for tar, ref in pairs:
                lr = kspace.degrade_array(tar, s)
                task = ScaleTask.from_dims(tar.shape, lr.shape, ref.shape, "HR")
                sr = model(lr.astype(np.float32), ref.astype(np.float32), task)
                vals.append(psnr(sr[0, 0].numpy().astype(np.float64),
                                 np.asarray(tar, dtype=np.float64)))
            out[float(s)] = float(np.mean(vals))
    return out


# --- state and checkpointing -------------------------------------------------


@dataclass
class TrainState:
    model: DualArbNet
    optimizer: torch.optim.Adam
    schedule: CurriculumSchedule
    strategy: str
    lambda_k: float
    use_k: bool
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    best_valid_psnr: float = float("-inf")


def init_state(config: ModelConfig, schedule: CurriculumSchedule,
               strategy: str = "cur-random", seed: int = 0,
               lambda_k: float = LAMBDA_K, use_k: bool = True) -> TrainState:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    model = DualArbNet(config)
    optimizer = torch.optim.Adam(model.parameters(), lr=schedule.warmup_lr,
                                 betas=ADAM_BETAS, eps=ADAM_EPS, foreach=False)
    rng = np.random.default_rng(seed)
    return TrainState(model=model, optimizer=optimizer, schedule=schedule,
                      strategy=strategy, lambda_k=lambda_k, use_k=use_k, rng=rng)


def save_checkpoint(state: TrainState, path) -> None:
    arrays = dict(named_parameter_arrays(state.model))
    adam_steps = {}
    for name, p in state.model.named_parameters():
        st = state.optimizer.state.get(p)
        if not st:
            continue
        arrays[f"adam.exp_avg.{name}"] = st["exp_avg"].numpy()
        arrays[f"adam.exp_avg_sq.{name}"] = st["exp_avg_sq"].numpy()
        adam_steps[name] = int(st["step"].item())
    extra = {
        "epoch": state.epoch,
        "step": state.step,
        "best_valid_psnr": state.best_valid_psnr,
        "rng_state": state.rng.bit_generator.state,
        "schedule": state.schedule.to_dict(),
        "strategy": state.strategy,
        "lambda_k": state.lambda_k,
        "use_k": state.use_k,
        "adam_steps": adam_steps,
    }
    ckpt.save_archive(path, state.model.config.to_dict(), arrays, extra)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> TrainState:
    config_dict, arrays, extra = ckpt.load_archive(path)
    config = ModelConfig.from_dict(config_dict)
    if expected_config is not None and expected_config != config:
        raise ckpt.CheckpointError(
            f"checkpoint config {config} conflicts with requested {expected_config}"
        )
    schedule = CurriculumSchedule.from_dict(extra["schedule"])
    state = init_state(config, schedule, extra["strategy"],
                       lambda_k=extra["lambda_k"], use_k=extra["use_k"])
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    load_parameter_arrays(state.model, params)
    adam_steps = extra.get("adam_steps", {})
    for name, p in state.model.named_parameters():
        if name not in adam_steps:
            continue
        state.optimizer.state[p] = {
            "step": torch.tensor(float(adam_steps[name])),
            "exp_avg": torch.from_numpy(arrays[f"adam.exp_avg.{name}"].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"adam.exp_avg_sq.{name}"].copy()),
        }
    state.rng.bit_generator.state = extra["rng_state"]
    state.epoch = int(extra["epoch"])
    state.step = int(extra["step"])
    state.best_valid_psnr = float(extra["best_valid_psnr"])
    return state


# --- the loop -----------------------------------------------------------------


@dataclass
class TrainResult:
    out_dir: Path
    epochs_run: int
    best_valid_psnr: float
    valid_history: list = field(default_factory=list)

    @property
    def log_path(self) -> Path:
        return self.out_dir / "train_log.jsonl"

    @property
    def best_path(self) -> Path:
        return self.out_dir / "ckpt_best.zip"

    @property
    def last_path(self) -> Path:
        return self.out_dir / "ckpt_last.zip"


def train(data_dir, out_dir, config: ModelConfig | None = None,
          schedule: CurriculumSchedule | None = None,
          strategy: str = "cur-random", seed: int = 0,
          lambda_k: float = LAMBDA_K, use_k: bool = True,
          batch_size: int = 6, lr_patch: int = 32,
          steps_per_epoch: int | None = None,
          valid_scales=(2.0, 4.0), resume=None,
          stop_after_epochs: int | None = None, quiet: bool = False,
          continuous_ref: bool = False) -> TrainResult:
    """Run (or resume) the training loop; writes checkpoints and a JSONL log."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = phantom.load_dataset(data_dir)
    data = TrainingData.from_manifest(manifests["train"])
    valid_pairs = []
    for entry in manifests["valid"].entries:
        t, r = manifests["valid"].load_pair(entry)
        valid_pairs.append((t.pixels.astype(np.float64), r.pixels.astype(np.float64)))

    if resume is not None:
        state = load_checkpoint(resume, expected_config=config)
    else:
        state = init_state(config or ModelConfig(),
                           schedule or CurriculumSchedule(),
                           strategy, seed, lambda_k, use_k)
    schedule = state.schedule
    if steps_per_epoch is None:
        steps_per_epoch = len(data.pairs)

    def feasible(s: float) -> bool:
        return effective_scale(lr_patch, s)[0] <= data.min_dim

    skipped = [s for s in set(WARMUP_SCALES) | set(SCALE_GRID) if not feasible(s)]
    result = TrainResult(out_dir=out_dir, epochs_run=0,
                         best_valid_psnr=state.best_valid_psnr)
    with open(result.log_path, "a") as log:

        def emit(record):
            log.write(json.dumps(record) + "\n")
            log.flush()

        if skipped and state.epoch == 0:
            emit({"event": "skipped-scales", "scales": sorted(skipped),
                  "reason": f"HR window exceeds smallest slice ({data.min_dim})"})

        epochs_this_call = 0
        while state.epoch < schedule.total_epochs:
            if stop_after_epochs is not None and epochs_this_call >= stop_after_epochs:
                break
            epoch = state.epoch
            stage = stage_for_epoch(schedule, epoch, state.strategy)
            for group in state.optimizer.param_groups:
                group["lr"] = stage.lr
            last = None
            for _ in range(steps_per_epoch):
                s_nom, ref_mode = sample_task(stage, state.rng, feasible,
                                              continuous_ref)
                batch = sample_batch(data, s_nom, ref_mode, state.rng,
                                     batch_size, lr_patch)
                report = train_step(state.model, state.optimizer, batch,
                                    state.lambda_k, state.use_k)
                state.step += 1
                last = report
                emit({"epoch": epoch, "step": state.step, "stage": stage.stage,
                      "lr": stage.lr, "l_rec": report.l_rec, "l_k": report.l_k,
                      "l_full": report.l_full, "s": s_nom,
                      "s_exact": batch.task.s_tar, "ref_mode": batch.ref_mode})
            scores = validate(state.model, valid_pairs, valid_scales)
            mean_psnr = float(np.mean(list(scores.values())))
            state.epoch = epoch + 1
            if mean_psnr > state.best_valid_psnr:
                state.best_valid_psnr = mean_psnr
                save_checkpoint(state, result.best_path)
            save_checkpoint(state, result.last_path)
            emit({"event": "valid", "epoch": epoch,
                  "psnr": {str(k): v for k, v in scores.items()},
                  "mean_psnr": mean_psnr,
                  "best_valid_psnr": state.best_valid_psnr})
            result.valid_history.append({"epoch": epoch, **scores})
            epochs_this_call += 1
            if not quiet:
                tail = " ".join(f"x{k:g}={v:.2f}" for k, v in scores.items())
                print(f"epoch {epoch:3d} [{stage.stage}] lr={stage.lr:.1e} "
                      f"l_full={last.l_full if last else float('nan'):.4f} "
                      f"valid {tail}")

    result.epochs_run = epochs_this_call
    result.best_valid_psnr = state.best_valid_psnr
    return result
