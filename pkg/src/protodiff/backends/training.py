"""Epsilon-prediction training loop for the toy denoiser."""

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ParameterError, TrainingError
from ..schedule import build_schedule
from .base import Condition
from .toy_model import DEFAULT_VOCAB, NULL_TOKEN, ToyBackend, ToyUNet

log = logging.getLogger(__name__)


@dataclass
class TrainSpec:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 2e-3
    val_fraction: float = 0.1
    seed: int = 0
    null_prob: float = 0.1
    log_every: int = 100
    divergence_frac: float = 0.2
    val_probes_per_image: int = 4


def _prepare(samples, vocab):
    index = {word: i for i, word in enumerate(vocab)}
    null_id = index[NULL_TOKEN]
    images, id_rows = [], []
    max_len = 1
    for sample in samples:
        images.append(
            torch.from_numpy(sample.image.astype(np.float32)).permute(2, 0, 1) / 127.5 - 1.0
        )
        ids = [index[w] for w in sample.prompt.words] + [index[sample.scenario]]
        id_rows.append(ids)
        max_len = max(max_len, len(ids))
    token_ids = torch.full((len(samples), max_len), null_id, dtype=torch.long)
    token_mask = torch.zeros((len(samples), max_len), dtype=torch.bool)
    for i, ids in enumerate(id_rows):
        token_ids[i, : len(ids)] = torch.tensor(ids)
        token_mask[i, : len(ids)] = True
    return torch.stack(images), token_ids, token_mask, null_id


def train_toy_denoiser(
    samples,
    spec: TrainSpec,
    train_steps: int = 1000,
    ddim_steps: int = 200,
    vocab=DEFAULT_VOCAB,
):
    """Train a ToyUNet on the corpus; returns (backend, training log).

    Standard epsilon-MSE objective at uniformly sampled timesteps with
    conditioning dropout for the null embedding. Raises TrainingError when
    the loss exceeds its initial level after 20% of the budget.
    """
    if not samples:
        raise ParameterError("training dataset is empty")
    for sample in samples:
        missing = [w for w in (*sample.prompt.words, sample.scenario) if w not in vocab]
        if missing:
            raise ParameterError(f"sample {sample.stem} uses words outside vocab: {missing}")

    torch.manual_seed(spec.seed)
    model = ToyUNet(vocab_size=len(vocab))
    schedule = build_schedule(train_steps, ddim_steps)
    abar = torch.from_numpy(schedule.alpha_bar).to(torch.float32)

    images, token_ids, token_mask, null_id = _prepare(samples, vocab)
    n = len(samples)
    split_rng = np.random.default_rng(spec.seed)
    perm = split_rng.permutation(n)
    n_val = int(round(spec.val_fraction * n)) if n > 1 else 0
    val_idx = torch.from_numpy(perm[:n_val].copy())
    train_idx = torch.from_numpy(perm[n_val:].copy())

    optimizer = torch.optim.Adam(model.parameters(), lr=spec.lr)
    gen = torch.Generator().manual_seed(spec.seed + 1)
    history = []
    initial_losses = []
    recent = []
    model.train()
    for step in range(spec.steps):
        rows = train_idx[torch.randint(0, len(train_idx), (spec.batch_size,), generator=gen)]
        x0 = images[rows]
        t = torch.randint(0, train_steps, (spec.batch_size,), generator=gen)
        eps = torch.randn(x0.shape, generator=gen)
        a = abar[t][:, None, None, None]
        z_t = torch.sqrt(a) * x0 + torch.sqrt(1.0 - a) * eps
        ids = token_ids[rows].clone()
        mask = token_mask[rows].clone()
        drop = torch.rand(spec.batch_size, generator=gen) < spec.null_prob
        ids[drop] = null_id
        mask[drop] = False
        mask[drop, 0] = True
        pred = model(z_t, t.to(torch.float32), ids, mask)
        loss = F.mse_loss(pred, eps)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        value = float(loss.detach())
        if len(initial_losses) < 10:
            initial_losses.append(value)
        recent.append(value)
        if len(recent) > 50:
            recent.pop(0)
        if step + 1 == max(1, int(spec.divergence_frac * spec.steps)) and spec.steps >= 50:
            baseline = float(np.mean(initial_losses))
            current = float(np.mean(recent))
            if current > baseline:
                raise TrainingError(
                    f"diverged: loss {current:.4f} after {step + 1} steps exceeds "
                    f"initial {baseline:.4f} (lr={spec.lr}, batch={spec.batch_size})"
                )
        if step % spec.log_every == 0 or step + 1 == spec.steps:
            history.append({"step": step, "loss": value})

    model.eval()
    backend = ToyBackend(model=model, schedule=schedule, vocab=vocab)
    if len(val_idx) > 0:
        val_mse, zero_mse = validation_epsilon_mse(
            backend, images[val_idx], token_ids[val_idx], token_mask[val_idx], spec
        )
        history.append({"step": spec.steps, "val_mse": val_mse, "zero_mse": zero_mse})
        log.info("validation eps-MSE %.4f (zero-predictor %.4f)", val_mse, zero_mse)
    return backend, history


def validation_epsilon_mse(backend: ToyBackend, images, token_ids, token_mask, spec: TrainSpec):
    """Held-out epsilon-MSE on fixed seeded probes plus the zero-predictor MSE."""
    abar = torch.from_numpy(backend.schedule.alpha_bar).to(torch.float32)
    gen = torch.Generator().manual_seed(spec.seed + 7919)
    model = backend.model
    total_err = 0.0
    total_ref = 0.0
    count = 0
    with torch.no_grad():
        for _ in range(spec.val_probes_per_image):
            t = torch.randint(0, backend.schedule.train_steps, (len(images),), generator=gen)
            eps = torch.randn(images.shape, generator=gen)
            a = abar[t][:, None, None, None]
            z_t = torch.sqrt(a) * images + torch.sqrt(1.0 - a) * eps
            pred = model(z_t, t.to(torch.float32), token_ids, token_mask)
            total_err += float(((pred - eps) ** 2).sum())
            total_ref += float((eps**2).sum())
            count += eps.numel()
    return total_err / count, total_ref / count


def corpus_condition(sample) -> Condition:
    """Training-time conditioning for one corpus sample."""
    return Condition(words=sample.prompt.words, scenario=sample.scenario)
