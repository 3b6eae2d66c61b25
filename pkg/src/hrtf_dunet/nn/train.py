"""Training loops for the D-UNet, the AE-GAN and the cascaded pipeline.

Datasets are arrays in network layout, ``(N, C, B)``. Every loop is
single-threaded and draws all randomness from ``numpy.random.default_rng(seed)``,
so a (seed, config, dataset) triple always gives the same parameters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ..data import read_container, write_container
from ..errors import ContainerError, DataError, NumericalAbort
from . import losses
from .models import CoeffDenoiser, CoeffDiscriminator, CoeffUpsampler
from .optim import Adam

HISTORY_KEYS = ("l1", "cosine", "adv_g", "adv_d")


@dataclass
class TrainState:
    """Snapshot of a training run.

    ``params`` maps prefixed parameter and buffer names to arrays;
    ``moments`` holds the Adam first/second moments under ``m.<name>`` and
    ``v.<name>``. ``models`` keeps the live modules and is not serialised.
    """

    params: dict
    moments: dict
    epoch: int
    step: int
    seed: int
    history: dict = field(default_factory=lambda: {k: [] for k in HISTORY_KEYS})
    models: dict = field(default_factory=dict, repr=False)


def _check_pair(x, y, what):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.ndim != 3 or y.ndim != 3 or x.shape[0] != y.shape[0] or x.shape[2] != y.shape[2]:
        raise DataError(f"{what}: inputs {x.shape} and targets {y.shape} do not pair up")
    if x.shape[0] == 0:
        raise DataError(f"{what}: empty dataset")
    return x, y


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    nb = max(1, math.ceil(n / batch_size))
    return np.array_split(order, nb)


def _finite(value, where):
    if not math.isfinite(value):
        raise NumericalAbort(f"non-finite loss ({value}) at {where}")


def _named(models):
    """Prefixed (name, Param) pairs across several modules, in a fixed order."""
    out = []
    for prefix, mod in models.items():
        out.extend((f"{prefix}.{n}", p) for n, p in mod.named_params())
    return out


def _snapshot(state, models, optims):
    params = {}
    for prefix, mod in models.items():
        params.update({f"{prefix}.{k}": v for k, v in mod.state_dict().items()})
    moments = {}
    for prefix, opt in optims.items():
        names = [n for n, _ in _named({prefix: models[prefix]})]
        for n, m, v in zip(names, opt.m, opt.v):
            moments[f"m.{n}"] = m.copy()
            moments[f"v.{n}"] = v.copy()
    state.params, state.moments = params, moments
    state.step = max((o.t for o in optims.values()), default=0)
    state.models = dict(models)
    return state


def _record(history, sums, count):
    for k in HISTORY_KEYS:
        history[k].append(sums.get(k, 0.0) / max(count, 1))


# ---------------------------------------------------------------------- D-UNet


def train_dunet(noisy, clean, cfg, epochs, seed, batch_size=16, lr=1e-3, lambda_cos=1.0,
                model=None):
    """Fit a ``CoeffDenoiser`` mapping noisy to clean coefficients.

    Loss per batch: L1 + lambda_cos * mean per-sample cosine loss, both on
    raw coefficients.
    """
    noisy, clean = _check_pair(noisy, clean, "train_dunet")
    rng = np.random.default_rng(seed)
    if model is None:
        model = CoeffDenoiser(cfg, np.random.default_rng([seed, 1]))
        model.fit_normalisation(noisy, clean)
    opt = Adam(model.params(), lr=lr)
    state = TrainState({}, {}, 0, 0, int(seed))
    model.train()
    for epoch in range(epochs):
        sums, count = {}, 0
        for idx in _batches(noisy.shape[0], batch_size, rng):
            pred = model.forward(noisy[idx])
            l1, cos, grad = losses.reconstruction_grad(pred, clean[idx], lambda_cos)
            _finite(l1 + lambda_cos * cos, f"D-UNet epoch {epoch}")
            opt.zero_grad()
            model.backward(grad)
            opt.step()
            sums["l1"] = sums.get("l1", 0.0) + l1
            sums["cosine"] = sums.get("cosine", 0.0) + cos
            count += 1
        _record(state.history, sums, count)
        state.epoch += 1
    model.eval()
    return _snapshot(state, {"dunet": model}, {"dunet": opt})


# ---------------------------------------------------------------------- AE-GAN


def _disc_step(disc, opt, real, fake):
    real_logits = disc.forward(real)
    _, dr, _ = losses.discriminator_grad(real_logits, real_logits)
    opt.zero_grad()
    disc.backward(dr)
    fake_logits = disc.forward(fake)
    loss, _, df = losses.discriminator_grad(real_logits, fake_logits)
    disc.backward(df)
    opt.step()
    return loss


def discriminator_accuracy(disc, real, fake):
    disc.eval()
    acc = 0.5 * (np.mean(disc.forward(real) > 0) + np.mean(disc.forward(fake) < 0))
    disc.train()
    return float(acc)


def train_aegan(low, high, cfg, epochs, seed, batch_size=16, lr=1e-3, lambda_cos=1.0,
                lambda_adv=0.01, train_generator=True, generator=None, discriminator=None):
    """Alternating discriminator / generator updates.

    The generator loss is L1 + lambda_cos * cosine + lambda_adv * the
    non-saturating adversarial term. With ``lambda_adv = 0`` the
    discriminator still trains but never reaches the generator.
    ``train_generator=False`` freezes the generator (used to probe the
    discriminator).
    """
    low, high = _check_pair(low, high, "train_aegan")
    if low.shape[1] != cfg.in_channels or high.shape[1] != cfg.out_channels:
        raise DataError(
            f"AE-GAN expects {cfg.in_channels} -> {cfg.out_channels} channels, "
            f"got {low.shape[1]} -> {high.shape[1]}"
        )
    rng = np.random.default_rng(seed)
    if generator is None:
        generator = CoeffUpsampler(cfg, np.random.default_rng([seed, 2]))
        generator.fit_normalisation(low, high)
    if discriminator is None:
        discriminator = CoeffDiscriminator(cfg, np.random.default_rng([seed, 3]))
        discriminator.fit_normalisation(high)
    g_opt = Adam(generator.params(), lr=lr)
    d_opt = Adam(discriminator.params(), lr=lr)
    state = TrainState({}, {}, 0, 0, int(seed))
    generator.train(train_generator)
    discriminator.train()
    for epoch in range(epochs):
        sums, count = {}, 0
        for idx in _batches(low.shape[0], batch_size, rng):
            if idx.size < 2:
                continue
            fake = generator.forward(low[idx])
            d_loss = _disc_step(discriminator, d_opt, high[idx], fake)
            _finite(d_loss, f"discriminator epoch {epoch}")
            sums["adv_d"] = sums.get("adv_d", 0.0) + d_loss
            if train_generator:
                l1, cos, grad = losses.reconstruction_grad(fake, high[idx], lambda_cos)
                adv, dlogit = losses.generator_adv_grad(discriminator.forward(fake))
                _finite(l1 + lambda_cos * cos + lambda_adv * adv, f"generator epoch {epoch}")
                if lambda_adv != 0.0:
                    grad = grad + lambda_adv * discriminator.backward(dlogit)
                g_opt.zero_grad()
                generator.backward(grad)
                g_opt.step()
                sums["l1"] = sums.get("l1", 0.0) + l1
                sums["cosine"] = sums.get("cosine", 0.0) + cos
                sums["adv_g"] = sums.get("adv_g", 0.0) + adv
            count += 1
        _record(state.history, sums, count)
        state.epoch += 1
    generator.eval()
    discriminator.eval()
    return _snapshot(state, {"generator": generator, "discriminator": discriminator},
                     {"generator": g_opt, "discriminator": d_opt})


# -------------------------------------------------------------- end to end


def joint_gradients(denoiser, generator, noisy_low, high, lambda_cos=1.0, discriminator=None,
                    lambda_adv=0.0, clean_low=None, lambda_den=0.0):
    """One cascaded forward/backward pass; fills ``Param.grad`` of both networks.

    The upsampler's loss gradient with respect to its input is fed into the
    denoiser's backward pass. Returns the loss terms as a dict.
    """
    denoiser.zero_grad()
    generator.zero_grad()
    u = denoiser.forward(noisy_low)
    y = generator.forward(u)
    l1, cos, grad = losses.reconstruction_grad(y, high, lambda_cos)
    terms = {"l1": l1, "cosine": cos}
    if discriminator is not None and lambda_adv != 0.0:
        adv, dlogit = losses.generator_adv_grad(discriminator.forward(y))
        grad = grad + lambda_adv * discriminator.backward(dlogit)
        terms["adv_g"] = adv
    du = generator.backward(grad)
    if clean_low is not None and lambda_den != 0.0:
        dl1, dcos, dgrad = losses.reconstruction_grad(u, clean_low, lambda_cos)
        du = du + lambda_den * dgrad
        terms["den"] = dl1 + lambda_cos * dcos
    denoiser.backward(du)
    return terms


def train_end_to_end(noisy_low, high, dunet_cfg, aegan_cfg, epochs, seed, batch_size=16,
                     lr=1e-3, lambda_cos=1.0, lambda_adv=0.01, clean_low=None, lambda_den=0.0,
                     denoiser=None, generator=None, discriminator=None,
                     freeze_upsampler=False):
    """Cascaded training: upsampler losses backpropagate through the D-UNet
    and both networks step together. Pass pre-trained modules to fine-tune."""
    noisy_low, high = _check_pair(noisy_low, high, "train_end_to_end")
    if dunet_cfg.io_channels != aegan_cfg.in_channels:
        raise DataError(
            f"D-UNet emits {dunet_cfg.io_channels} channels, AE-GAN expects {aegan_cfg.in_channels}"
        )
    if noisy_low.shape[1] != dunet_cfg.io_channels or high.shape[1] != aegan_cfg.out_channels:
        raise DataError("dataset channels do not match the configs")
    rng = np.random.default_rng(seed)
    if denoiser is None:
        denoiser = CoeffDenoiser(dunet_cfg, np.random.default_rng([seed, 1]))
        denoiser.fit_normalisation(noisy_low, noisy_low if clean_low is None else clean_low)
    if generator is None:
        generator = CoeffUpsampler(aegan_cfg, np.random.default_rng([seed, 2]))
        denoiser.eval()
        generator.fit_normalisation(denoiser.forward(noisy_low), high)
    if discriminator is None:
        discriminator = CoeffDiscriminator(aegan_cfg, np.random.default_rng([seed, 3]))
        discriminator.fit_normalisation(high)
    opt = Adam(denoiser.params() + ([] if freeze_upsampler else generator.params()), lr=lr)
    d_opt = Adam(discriminator.params(), lr=lr)
    state = TrainState({}, {}, 0, 0, int(seed))
    denoiser.train()
    generator.train(not freeze_upsampler)
    discriminator.train()
    use_adv = lambda_adv != 0.0 and not freeze_upsampler
    for epoch in range(epochs):
        sums, count = {}, 0
        for idx in _batches(noisy_low.shape[0], batch_size, rng):
            if use_adv and idx.size < 2:
                continue
            cl = None if clean_low is None else clean_low[idx]
            if use_adv:
                fake = generator.forward(denoiser.forward(noisy_low[idx]))
                d_loss = _disc_step(discriminator, d_opt, high[idx], fake)
                _finite(d_loss, f"discriminator epoch {epoch}")
                sums["adv_d"] = sums.get("adv_d", 0.0) + d_loss
            terms = joint_gradients(denoiser, generator, noisy_low[idx], high[idx], lambda_cos,
                                    discriminator if use_adv else None, lambda_adv, cl, lambda_den)
            _finite(sum(terms.values()), f"end-to-end epoch {epoch}")
            opt.step()
            for k in ("l1", "cosine", "adv_g"):
                sums[k] = sums.get(k, 0.0) + terms.get(k, 0.0)
            count += 1
        _record(state.history, sums, count)
        state.epoch += 1
    for mod in (denoiser, generator, discriminator):
        mod.eval()
    models = {"dunet": denoiser, "generator": generator, "discriminator": discriminator}
    return _snapshot_joint(state, models, opt, d_opt, freeze_upsampler)


def _snapshot_joint(state, models, opt, d_opt, freeze_upsampler):
    _snapshot(state, models, {"discriminator": d_opt})
    trainable = {"dunet": models["dunet"]}
    if not freeze_upsampler:
        trainable["generator"] = models["generator"]
    for (n, _), m, v in zip(_named(trainable), opt.m, opt.v):
        state.moments[f"m.{n}"] = m.copy()
        state.moments[f"v.{n}"] = v.copy()
    state.step = max(opt.t, d_opt.t)
    return state


# ------------------------------------------------------------------ persistence


def save_state(state, path):
    """Checkpoint to the container format (f32 payload, names in the manifest)."""
    arrays = []
    chunks = []
    offset = 0
    for group, table in (("param", state.params), ("moment", state.moments)):
        for name in sorted(table):
            a = np.asarray(table[name], dtype="<f4")
            arrays.append({"group": group, "name": name, "shape": list(a.shape),
                           "offset": offset})
            chunks.append(a.tobytes())
            offset += a.size
    manifest = {
        "kind": "train_state",
        "epoch": int(state.epoch),
        "step": int(state.step),
        "seed": int(state.seed),
        "history": {k: [float(v) for v in state.history[k]] for k in HISTORY_KEYS},
        "arrays": arrays,
    }
    write_container(path, manifest, b"".join(chunks))


def load_state(path):
    manifest, payload = read_container(path)
    if manifest.get("kind") != "train_state":
        raise ContainerError(f"{path}: not a training checkpoint")
    flat = np.frombuffer(payload, dtype="<f4").astype(float)
    params, moments = {}, {}
    try:
        for entry in manifest["arrays"]:
            size = int(np.prod(entry["shape"], dtype=int))
            start = int(entry["offset"])
            if start + size > flat.size:
                raise ContainerError(f"{path}: payload too short for {entry['name']}")
            a = flat[start:start + size].reshape(entry["shape"])
            (params if entry["group"] == "param" else moments)[entry["name"]] = a
        history = {k: list(manifest["history"][k]) for k in HISTORY_KEYS}
        return TrainState(params, moments, int(manifest["epoch"]), int(manifest["step"]),
                          int(manifest["seed"]), history)
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerError(f"{path}: malformed checkpoint manifest ({exc!r})") from None


def load_into(module, state, prefix):
    """Copy the ``prefix.*`` entries of a checkpoint into ``module``."""
    sub = {k[len(prefix) + 1:]: v for k, v in state.params.items() if k.startswith(prefix + ".")}
    module.load_state_dict(sub)
    return module


def write_history_csv(state, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch",) + HISTORY_KEYS)
        for e in range(state.epoch):
            w.writerow([e + 1] + [repr(float(state.history[k][e])) for k in HISTORY_KEYS])
