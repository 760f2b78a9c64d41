"""Training, evaluation, checkpointing, and the ablation harness.

Training is plain Adam at a fixed step size with per-iteration supervision
on every prediction of the feedback loop. Runs are deterministic given the
config and seed on a single device: the batch order comes from a seeded
generator whose state is checkpointed alongside the weights.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import body as body_model
from . import camera
from .body import BodyParams, TemplateBody, body_from_bytes, body_to_bytes
from .config import RunConfig, get_spec
from .errors import CheckpointMismatchError, ConfigurationError, TrainingDivergedError
from .losses import total_loss_terms
from .maf import LoopConfig, MAFNetwork
from .metrics import mpjpe, oks, pa_mpjpe, pve, seg_scores
from .raster import IUVMap, downsample_iuv, rasterize_iuv
from .synth import SynthDataset

CHECKPOINT_VERSION = 1


@dataclass
class TrainTensors:
    """Dataset stacked into training dtype, auxiliary targets at head resolution."""

    images: torch.Tensor     # (S, 3, H, W)
    keypoints: torch.Tensor  # (S, K, 2)
    joints: torch.Tensor     # (S, K, 3)
    pose6d: torch.Tensor     # (S, K, 6)
    shape: torch.Tensor      # (S, B)
    aux_part: torch.Tensor   # (S, h, w) long
    aux_u: torch.Tensor      # (S, h, w)
    aux_v: torch.Tensor      # (S, h, w)

    def __len__(self) -> int:
        return self.images.shape[0]


def stack_dataset(dataset: SynthDataset, aux_size: int) -> TrainTensors:
    parts, us, vs = [], [], []
    for s in dataset.samples:
        small = downsample_iuv(s.iuv, aux_size, aux_size)
        parts.append(small.part)
        us.append(small.u)
        vs.append(small.v)
    f32 = torch.float32
    return TrainTensors(
        images=torch.as_tensor(np.stack([s.image for s in dataset.samples]), dtype=f32),
        keypoints=torch.as_tensor(np.stack([s.keypoints for s in dataset.samples]), dtype=f32),
        joints=torch.as_tensor(np.stack([s.joints for s in dataset.samples]), dtype=f32),
        pose6d=torch.stack([s.params.pose for s in dataset.samples]).to(f32),
        shape=torch.stack([s.params.shape for s in dataset.samples]).to(f32),
        aux_part=torch.as_tensor(np.stack(parts), dtype=torch.long),
        aux_u=torch.as_tensor(np.stack(us), dtype=f32),
        aux_v=torch.as_tensor(np.stack(vs), dtype=f32))


def loop_from_config(config: RunConfig) -> LoopConfig:
    return LoopConfig(iterations=config.iterations, feedback_mode=config.feedback_mode,
                      init_mode=config.init_mode, pyramidal=config.pyramidal,
                      share_regressor=config.share_regressor,
                      detach_sample_coords=config.detach_sample_coords)


def build_network(config: RunConfig, body: TemplateBody) -> MAFNetwork:
    return MAFNetwork(get_spec(config.preset), body, loop_from_config(config))


def batch_mpjpe_mm(joints: torch.Tensor, gt_joints: torch.Tensor, root: int = 0) -> float:
    pred = joints - joints[:, root : root + 1]
    gt = gt_joints - gt_joints[:, root : root + 1]
    return float((pred - gt).norm(dim=-1).mean() * 1000.0)


def _train_log_columns(iterations: int) -> list[str]:
    cols = ["step", "total"]
    cols += [f"reg_{t}" for t in range(1, iterations + 1)]
    cols += ["loss_pi", "loss_uv"]
    cols += [f"probe_mpjpe_{t}" for t in range(1, iterations + 1)]
    return cols


def save_checkpoint(path, model: MAFNetwork, optimizer, step: int, config: RunConfig,
                    batch_state: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"version": CHECKPOINT_VERSION, "preset": config.preset,
            "fingerprint": config.fingerprint(), "step": step, "seed": config.seed,
            "channels": model.spec.channels, "iterations": config.iterations,
            "feedback_mode": config.feedback_mode, "init_mode": config.init_mode}
    payload = {
        "meta": meta,
        "config": config.to_dict(),
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "torch_rng": torch.get_rng_state(),
        "batch_state": json.dumps(batch_state),
        "body": body_to_bytes(model.body),
    }
    torch.save(payload, path)
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path, expect_config: RunConfig | None = None) -> dict:
    payload = torch.load(path, weights_only=False)
    if expect_config is not None:
        got = payload["meta"]["fingerprint"]
        want = expect_config.fingerprint()
        if got != want:
            raise CheckpointMismatchError(
                f"checkpoint fingerprint {got} does not match config {want} "
                f"(checkpoint preset {payload['meta']['preset']!r})")
    return payload


def model_from_checkpoint(path, expect_config: RunConfig | None = None
                          ) -> tuple[MAFNetwork, RunConfig]:
    payload = load_checkpoint(path, expect_config)
    config = RunConfig.from_mapping(payload["config"])
    body = body_from_bytes(payload["body"])
    model = build_network(config, body)
    model.load_state_dict(payload["model"])
    model.eval()
    return model, config


def train_model(config: RunConfig, dataset: SynthDataset, out_dir,
                resume_from=None) -> Path:
    """Train per config, write train_log.csv and checkpoint.pt; returns checkpoint path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = get_spec(config.preset)
    if dataset.body.n_joints != spec.n_joints or dataset.body.n_vertices != spec.n_verts:
        raise ConfigurationError("dataset body does not match the preset")
    tensors = stack_dataset(dataset, spec.pyramid_sizes[-1])
    n_samples = len(tensors)
    weights = config.loss_weights()

    start_step = 0
    if resume_from is None:
        torch.manual_seed(config.seed)
        model = build_network(config, dataset.body)
        model.set_mean_params(dataset.mean_params())
        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        batch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 101]))
        log_rows: list[list] = []
    else:
        payload = load_checkpoint(resume_from, config)
        model = build_network(config, body_from_bytes(payload["body"]))
        model.load_state_dict(payload["model"])
        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        optimizer.load_state_dict(payload["optimizer"])
        torch.set_rng_state(payload["torch_rng"])
        batch_rng = np.random.default_rng()
        batch_rng.bit_generator.state = json.loads(payload["batch_state"])
        start_step = payload["meta"]["step"]
        log_rows = []

    probe_n = min(config.probe_size, n_samples)
    probe_images = tensors.images[:probe_n]
    probe_joints = tensors.joints[:probe_n]

    columns = _train_log_columns(config.iterations)
    ckpt_path = out / "checkpoint.pt"

    for step in range(start_step + 1, config.steps + 1):
        batch = batch_rng.choice(n_samples, size=min(config.batch_size, n_samples),
                                 replace=n_samples < config.batch_size)
        batch = np.sort(batch)
        model.train()
        if config.aux_enabled:
            trace, aux_logits = model.run(tensors.images[batch], return_aux=True)
        else:
            trace, aux_logits = model.run(tensors.images[batch]), None
        terms = total_loss_terms(
            trace, tensors.keypoints[batch], tensors.joints[batch],
            tensors.pose6d[batch], tensors.shape[batch], weights,
            aux_logits=aux_logits, gt_part=tensors.aux_part[batch],
            gt_u=tensors.aux_u[batch], gt_v=tensors.aux_v[batch])
        loss = terms["total"]
        if not bool(torch.isfinite(loss)):
            dump = {"step": step, "batch_ids": [int(i) for i in batch],
                    "terms": {k: float(v.detach()) for k, v in terms.items()}}
            (out / "diverged.json").write_text(json.dumps(dump, indent=2))
            raise TrainingDivergedError(f"non-finite loss at step {step}; see {out / 'diverged.json'}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        model.eval()
        with torch.no_grad():
            probe_trace = model.run(probe_images)
        probe_mpjpe = [batch_mpjpe_mm(probe_trace.joints[t], probe_joints)
                       for t in range(config.iterations)]
        row = [step, float(loss.detach())]
        row += [float(terms[f"reg_{t}"].detach()) for t in range(1, config.iterations + 1)]
        row += [float(terms["loss_pi"].detach()) if "loss_pi" in terms else 0.0,
                float(terms["loss_uv"].detach()) if "loss_uv" in terms else 0.0]
        row += probe_mpjpe
        log_rows.append(row)

        if config.checkpoint_every and step % config.checkpoint_every == 0 and step < config.steps:
            save_checkpoint(out / f"checkpoint_{step:06d}.pt", model, optimizer, step,
                            config, batch_rng.bit_generator.state)

    save_checkpoint(ckpt_path, model, optimizer, config.steps, config,
                    batch_rng.bit_generator.state)
    log_path = out / "train_log.csv"
    fresh = resume_from is None or not log_path.exists()
    with open(log_path, "w" if fresh else "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(columns)
        writer.writerows(log_rows)
    return ckpt_path


@dataclass
class EvalResult:
    rows: list[dict]                 # per-sample final-iteration metrics
    per_iteration: dict[str, list[list[float]]]  # metric -> [iteration][sample]
    summary: dict

    def mean(self, key: str, iteration: int = -1) -> float:
        return float(np.mean(self.per_iteration[key][iteration]))


def evaluate_model(model: MAFNetwork, dataset: SynthDataset, batch_size: int = 32,
                   with_segmentation: bool = False, with_aux_accuracy: bool = False,
                   include_mean_pose_row: bool = False) -> EvalResult:
    """Run the loop over a dataset and compute the metric suite.

    Per-iteration MPJPE/PA-MPJPE/PVE are tracked for every prediction of the
    trace; OKS and (optionally) reprojected-segmentation scores use the final
    iteration. `include_mean_pose_row` prepends the mean-parameter estimate
    as iteration 0.
    """
    model.eval()
    spec = model.spec
    tensors = stack_dataset(dataset, spec.pyramid_sizes[-1])
    res = dataset.resolution
    n = len(tensors)
    t_iters = model.loop.iterations

    gt_meshes = []
    for s in dataset.samples:
        gt_meshes.append(body_model.forward(s.params, dataset.body).vertices.numpy())

    offsets = range(0, n, batch_size)
    iters = list(range(t_iters))
    per_iter = {"mpjpe": [[] for _ in iters], "pa_mpjpe": [[] for _ in iters],
                "pve": [[] for _ in iters]}
    mean_rows = {"mpjpe": [], "pa_mpjpe": [], "pve": []}
    rows = []
    aux_correct = aux_total = 0

    with torch.no_grad():
        for off in offsets:
            idx = slice(off, min(off + batch_size, n))
            images = tensors.images[idx]
            if with_aux_accuracy:
                trace, logits = model.run(images, return_aux=True)
                pred_part = logits[:, : spec.n_parts + 1].argmax(dim=1)
                gt_part = tensors.aux_part[idx]
                fg = gt_part > 0
                aux_correct += int((pred_part[fg] == gt_part[fg]).sum())
                aux_total += int(fg.sum())
            else:
                trace = model.run(images)

            if include_mean_pose_row:
                mean_theta = model.mean_theta.unsqueeze(0).expand(images.shape[0], -1)
                verts0, joints0, _ = model._body_state(mean_theta)
            for b in range(images.shape[0]):
                s = off + b
                gt_j = tensors.joints[idx][b].numpy().astype(np.float64)
                gt_v = gt_meshes[s]
                if include_mean_pose_row:
                    mean_rows["mpjpe"].append(mpjpe(joints0[b].numpy(), gt_j))
                    mean_rows["pa_mpjpe"].append(pa_mpjpe(joints0[b].numpy(), gt_j))
                    mean_rows["pve"].append(pve(verts0[b].numpy(), gt_v))
                for t in iters:
                    pj = trace.joints[t][b].numpy().astype(np.float64)
                    pv = trace.vertices[t][b].numpy().astype(np.float64)
                    per_iter["mpjpe"][t].append(mpjpe(pj, gt_j))
                    per_iter["pa_mpjpe"][t].append(pa_mpjpe(pj, gt_j))
                    per_iter["pve"][t].append(pve(pv, gt_v))

                sample = dataset.samples[s]
                pred_kp_pix = camera.to_pixel(trace.keypoints[-1][b].double(), res, res).numpy()
                gt_kp_pix = camera.to_pixel(
                    torch.as_tensor(sample.keypoints, dtype=torch.float64), res, res).numpy()
                row = {"sample_id": sample.sample_id,
                       "mpjpe": per_iter["mpjpe"][-1][-1],
                       "pa_mpjpe": per_iter["pa_mpjpe"][-1][-1],
                       "pve": per_iter["pve"][-1][-1],
                       "oks": oks(pred_kp_pix, gt_kp_pix, float(sample.area))}
                if with_segmentation:
                    pred_iuv = _predicted_iuv(model, trace, b, dataset, res)
                    scores = seg_scores(pred_iuv.part, sample.iuv.part, dataset.body.n_parts)
                    row.update(scores)
                rows.append(row)

    if include_mean_pose_row:
        for key in per_iter:
            per_iter[key] = [mean_rows[key]] + per_iter[key]
    summary = {"count": n}
    for key in ("mpjpe", "pa_mpjpe", "pve", "oks"):
        if key == "oks":
            summary["mean_oks"] = float(np.mean([r["oks"] for r in rows]))
        else:
            summary[f"mean_{key}"] = float(np.mean(per_iter[key][-1]))
    if with_segmentation:
        for key in ("fb_accuracy", "fb_f1", "part_accuracy", "part_f1"):
            summary[f"mean_{key}"] = float(np.mean([r[key] for r in rows]))
    if with_aux_accuracy:
        summary["aux_part_accuracy"] = aux_correct / max(aux_total, 1)
    return EvalResult(rows=rows, per_iteration=per_iter, summary=summary)


def _predicted_iuv(model: MAFNetwork, trace, b: int, dataset: SynthDataset, res: int) -> IUVMap:
    theta = trace.thetas[-1][b].double()
    params = BodyParams.from_flat(theta, model.spec.n_joints, model.spec.n_shape)
    mesh = body_model.forward(params, dataset.body)
    return rasterize_iuv(mesh, dataset.body, params.camera, res, res)


ABLATION_COLUMNS = ["mode", "init", "iteration", "seed", "mpjpe", "pa_mpjpe", "pve"]

DEFAULT_ABLATION_MODES = (("global", "grid"), ("grid", "grid"), ("mesh_aligned", "grid"))


def ablation_matrix(config: RunConfig, train_ds: SynthDataset, val_ds: SynthDataset,
                    seeds: list[int], out_dir,
                    modes=DEFAULT_ABLATION_MODES) -> list[dict]:
    """Train each (feedback, init) mode per seed and tabulate val metrics per iteration.

    The mean-pose-mesh init variants also report the iteration-0 (mean
    parameter) mesh, mirroring how initialization ablations are read.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for feedback_mode, init_mode in modes:
        pyramidal = feedback_mode != "global"
        for seed in seeds:
            run_cfg = replace(config, feedback_mode=feedback_mode, init_mode=init_mode,
                              pyramidal=pyramidal, share_regressor=not pyramidal,
                              seed=seed)
            run_dir = out / f"{feedback_mode}_{init_mode}_s{seed}"
            ckpt = train_model(run_cfg, train_ds, run_dir)
            model, _ = model_from_checkpoint(ckpt, run_cfg)
            include_m0 = init_mode == "mean_pose_mesh"
            result = evaluate_model(model, val_ds, include_mean_pose_row=include_m0)
            first_iter = 0 if include_m0 else 1
            for t_idx, iteration in enumerate(range(first_iter, run_cfg.iterations + 1)):
                rows.append({
                    "mode": feedback_mode, "init": init_mode, "iteration": iteration,
                    "seed": seed,
                    "mpjpe": float(np.mean(result.per_iteration["mpjpe"][t_idx])),
                    "pa_mpjpe": float(np.mean(result.per_iteration["pa_mpjpe"][t_idx])),
                    "pve": float(np.mean(result.per_iteration["pve"][t_idx]))})
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return rows
