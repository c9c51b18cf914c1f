"""Training loop: Adam, linear warm-up into cosine annealing, L1 objective,
batch size one, with loss and validation-PSNR curves written as JSON."""

from __future__ import annotations

import argparse
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

from .data import IhiDataset
from .model import IhrutNet, NetConfig, count_parameters


@dataclass
class TrainConfig:
    stages: int = 5
    width: int = 16
    window: int = 8
    heads: int = 2
    epochs: int = 300
    max_steps: int = 0          # 0: bounded by epochs only
    lr: float = 1e-4
    warmup_steps: int = 50
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    val_every: int = 1          # epochs between validation passes

    def net_config(self) -> NetConfig:
        return NetConfig(stages=self.stages, width=self.width,
                         window=self.window, heads=self.heads)


def psnr(x: torch.Tensor, ref: torch.Tensor) -> float:
    mse = torch.mean((x.double() - ref.double()) ** 2)
    if mse == 0:
        return math.inf
    peak = ref.double().max()
    return float(10.0 * torch.log10(peak * peak / mse))


def _schedule(step: int, total: int, warmup: int) -> float:
    if step < warmup:
        return (step + 1) / warmup
    t = (step - warmup) / max(total - warmup, 1)
    return 0.5 * (1.0 + math.cos(math.pi * min(t, 1.0)))


def train(dataset: IhiDataset, cfg: TrainConfig, out_dir,
          train_samples=None, val_samples=None, stop_at_psnr: float | None = None):
    """Returns (model, curves dict); writes checkpoint.pt and curves.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)

    train_set = train_samples if train_samples is not None else dataset.split("train")
    val_set = val_samples if val_samples is not None else dataset.split("test")
    if not train_set:
        raise ValueError("empty training split")

    ops = dataset.operators()
    model = IhrutNet(ops, cfg.net_config())
    loss_fn = nn.L1Loss()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=tuple(cfg.betas))
    total_steps = cfg.max_steps or cfg.epochs * len(train_set)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda s: _schedule(s, total_steps, cfg.warmup_steps))

    curves = {"loss": [], "val_psnr": [], "parameters": count_parameters(model)}
    step = 0
    done = False
    for epoch in range(cfg.epochs):
        model.train()
        for sample in train_set:
            opt.zero_grad()
            pred = model(sample.y[None])
            loss = loss_fn(pred, sample.gt[None])
            loss.backward()
            opt.step()
            sched.step()
            curves["loss"].append(float(loss.item()))
            step += 1
            if stop_at_psnr is not None and step % 25 == 0:
                if _validate(model, train_set) >= stop_at_psnr:
                    done = True
                    break
            if cfg.max_steps and step >= cfg.max_steps:
                done = True
                break
        if val_set and (epoch % cfg.val_every == 0 or done or epoch == cfg.epochs - 1):
            curves["val_psnr"].append({"epoch": epoch, "step": step,
                                       "psnr": _validate(model, val_set)})
        if done:
            break

    save_checkpoint(model, dataset, cfg, out_dir / "checkpoint.pt")
    with open(out_dir / "curves.json", "w") as f:
        json.dump(curves, f)
    return model, curves


@torch.no_grad()
def _validate(model, samples) -> float:
    model.eval()
    vals = [psnr(model(s.y[None])[0], s.gt) for s in samples]
    model.train()
    return sum(vals) / len(vals)


def save_checkpoint(model: IhrutNet, dataset: IhiDataset, cfg: TrainConfig, path):
    torch.save({
        "state_dict": model.state_dict(),
        "net_config": asdict(cfg),
        "target_rate": dataset.target_rate,
        "dataset_root": str(dataset.root),
    }, path)


def load_checkpoint(path, dataset_root=None):
    blob = torch.load(path, weights_only=False)
    cfg = TrainConfig(**{k: v for k, v in blob["net_config"].items()
                         if k in TrainConfig.__dataclass_fields__})
    root = dataset_root or blob["dataset_root"]
    dataset = IhiDataset(root)
    model = IhrutNet(dataset.operators(), cfg.net_config())
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, dataset, blob


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="train the unfolding reconstruction network")
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--stages", type=int, default=5)
    parser.add_argument("--width", type=int, default=16)
    parser.add_argument("--epochs", type=int, default=300)
    parser.add_argument("--max-steps", type=int, default=0)
    parser.add_argument("--lr", type=float, default=1e-4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    cfg = TrainConfig(stages=args.stages, width=args.width, epochs=args.epochs,
                      max_steps=args.max_steps, lr=args.lr, seed=args.seed)
    dataset = IhiDataset(args.dataset)
    _, curves = train(dataset, cfg, args.out)
    last_val = curves["val_psnr"][-1]["psnr"] if curves["val_psnr"] else float("nan")
    print(f"trained {curves['parameters']} parameters; final val PSNR {last_val:.2f} dB")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
