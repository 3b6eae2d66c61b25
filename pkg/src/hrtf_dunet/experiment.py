"""End-to-end experiment: synthesise, degrade, denoise, upsample, evaluate.

The configuration is a JSON object whose keys are the fields of
:class:`ExperimentConfig`; unknown keys are rejected. Nested objects
(``synth``, ``dunet``, ``aegan``, ``epochs``) accept the fields of the
corresponding dataclass only.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data, denoise, metrics, report, sh, upsample
from .errors import ConfigError
from .noise import DEFAULT_SOURCES, NoiseSpec, degrade_set
from .nn import losses, models, train

log = logging.getLogger(__name__)

DENOISE_METHODS = ("identity", "spectral-subtraction", "wavelet-db7", "kalman", "dunet")
UPSAMPLE_METHODS = ("sh", "barycentric", "aegan", "hrtf-dunet", "selection-1", "selection-2")
ALL_METHODS = DENOISE_METHODS + UPSAMPLE_METHODS
ALL_METRICS = ("lsd", "ild", "itd", "csl")


@dataclass(frozen=True)
class Epochs:
    dunet: int = 60
    aegan: int = 30
    end_to_end: int = 30


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on. ``snr_db = None`` disables the noise."""

    n_train: int = 16
    n_test: int = 41
    grid_size: int = 100
    synth: dict = field(default_factory=dict)
    noise: str = "white"
    snr_db: float | None = 5.0
    num_sources: int = DEFAULT_SOURCES
    sparsity: tuple = data.SUPPORTED_SPARSITY
    methods: tuple = ALL_METHODS
    metrics: tuple = ALL_METRICS
    high_order: int = 5
    seed: int = 0
    realizations: int = 2
    epochs: dict = field(default_factory=dict)
    batch_size: int = 16
    learning_rate: float = 1e-3
    lambda_cos: float = 1.0
    lambda_adv: float = 0.01
    lambda_den: float = 0.0
    dunet: dict = field(default_factory=dict)
    aegan: dict = field(default_factory=dict)
    sh_ridge_grid: tuple = (1e-6, 1e-3, 1e-2, 0.1, 0.3, 1.0, 3.0, 10.0)
    plot_position: int = 0
    plot_subjects: int = 1
    out: str = "results"

    def __post_init__(self):
        for name in ("sparsity", "methods", "metrics", "sh_ridge_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        _check_keys(self.synth, data.SynthConfig, "synth")
        _check_keys(self.epochs, Epochs, "epochs")
        _check_keys(self.dunet, models.DUNetConfig, "dunet", exclude=("order",))
        _check_keys(self.aegan, models.AeGanConfig, "aegan",
                    exclude=("low_order", "high_order"))
        if self.n_train < 2 or self.n_test < 1:
            raise ConfigError("need n_train >= 2 and n_test >= 1")
        if self.realizations < 1 or self.batch_size < 2:
            raise ConfigError("need realizations >= 1 and batch_size >= 2")
        if sh.num_coeffs(self.high_order) > self.grid_size:
            raise ConfigError(f"high_order {self.high_order} does not fit a {self.grid_size}-point grid")
        if self.noise not in ("white", "pink"):
            raise ConfigError(f"noise must be 'white' or 'pink', got {self.noise!r}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if not self.metrics:
            raise ConfigError("at least one metric is required")
        bad = [m for m in self.methods if m not in ALL_METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(ALL_METHODS)}")
        bad = [m for m in self.metrics if m not in ALL_METRICS]
        if bad:
            raise ConfigError(f"unknown metrics {bad}; choose from {list(ALL_METRICS)}")
        for s in self.sparsity:
            if not isinstance(s, int) or not 1 <= s <= self.grid_size:
                raise ConfigError(f"sparsity {s!r} outside [1, {self.grid_size}]")
            if s < 3 and "barycentric" in self.methods:
                raise ConfigError(f"barycentric interpolation needs >= 3 points, sparsity {s}")
        if not 0 <= self.plot_position < self.grid_size:
            raise ConfigError("plot_position outside the grid")
        try:
            self.synth_config()
            self.epoch_counts()
            self.dunet_config(self.high_order)
            self.aegan_config(0)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    # -- derived configs
    def synth_config(self):
        kw = dict(self.synth)
        kw.setdefault("population_seed", self.seed)
        return data.SynthConfig(**kw)

    def epoch_counts(self):
        return Epochs(**self.epochs)

    def dunet_config(self, order):
        return models.DUNetConfig(order=order, **self.dunet)

    def aegan_config(self, low_order):
        return models.AeGanConfig(low_order=low_order, high_order=self.high_order, **self.aegan)

    def noise_spec(self, seed):
        return NoiseSpec(self.noise, self.snr_db if self.snr_db is not None else 0.0,
                         self.num_sources, seed)

    def low_order(self, sparsity):
        return min(sh.max_order_for_points(sparsity), self.high_order - 1)

    def to_dict(self):
        return dataclasses.asdict(self)


def _check_keys(given, cls, where, exclude=()):
    if not isinstance(given, dict):
        raise ConfigError(f"{where} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)} - set(exclude)
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {unknown}")


def config_from_dict(obj, **overrides):
    if not isinstance(obj, dict):
        raise ConfigError("configuration must be a JSON object")
    obj = dict(obj)
    obj.update({k: v for k, v in overrides.items() if v is not None})
    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {unknown}")
    try:
        return ExperimentConfig(**obj)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, **overrides):
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(obj, **overrides)


# ------------------------------------------------------------------- seeds


def subject_seed(cfg, split, i):
    return cfg.seed * 1_000_003 + (0 if split == "test" else 500_000) + i


def noise_seed(cfg, split, i, realization=0):
    base = cfg.seed * 1_000_003 + (200_000 if split == "test" else 700_000)
    return base + i * cfg.realizations + realization


# ---------------------------------------------------------------- cohort data


@dataclass
class Cohort:
    clean: list            # HrirSet per subject
    noisy: list            # list (per subject) of HrirSet realisations
    ref: list              # clean HrtfSet per subject
    high: np.ndarray       # clean order-H coefficients, network layout (N, C, B)


def _degrade(cfg, hrirs, seed):
    if cfg.snr_db is None:
        return hrirs
    return degrade_set(hrirs, cfg.noise_spec(seed))


def channels(hrtfs, order, lam=None):
    return sh.sht_fit(hrtfs.db_field(), hrtfs.positions, order, lam).to_channels()


def build_cohort(cfg, grid, split):
    n = cfg.n_test if split == "test" else cfg.n_train
    reps = 1 if split == "test" else cfg.realizations
    scfg = cfg.synth_config()
    clean = [data.synth_subject(scfg.replace(seed=subject_seed(cfg, split, i)), grid)
             for i in range(n)]
    noisy = [[_degrade(cfg, h, noise_seed(cfg, split, i, r)) for r in range(reps)]
             for i, h in enumerate(clean)]
    ref = [data.hrir_to_hrtf(h) for h in clean]
    high = np.stack([channels(r, cfg.high_order) for r in ref])
    return Cohort(clean, noisy, ref, high)


def _from_channels(chan, order, grid, template):
    """HrtfSet on ``grid`` from network-layout coefficients; phase from ``template``."""
    db = sh.sht_eval(sh.ShCoeffTensor.from_channels(chan, order), grid)
    return template.with_db_field(db)


def _nearest_phase_template(sparse, grid):
    """A full-grid HrtfSet whose phase comes from the nearest sparse position."""
    idx = upsample.nearest_indices(sparse.positions, grid)
    return data.HrtfSet(data.as_positions(grid), sparse.frequencies, sparse.magnitude[idx],
                        sparse.phase[idx], sparse.sample_rate)


# ----------------------------------------------------------------- metrics


def evaluate(reference, processed, ref_high, high_order, wanted):
    out = {}
    if "lsd" in wanted:
        out["lsd"] = metrics.lsd_error(reference, processed)
    if "ild" in wanted:
        out["ild"] = metrics.ild_error(reference, processed)
    if "itd" in wanted:
        out["itd"] = metrics.itd_error(reference, processed)
    if "csl" in wanted:
        out["csl"] = losses.cosine_loss(channels(processed, high_order), ref_high)
    return out


# ------------------------------------------------------------------- runner


class Runner:
    def __init__(self, cfg, out_dir=None):
        self.cfg = cfg
        self.out = Path(out_dir if out_dir is not None else cfg.out)
        self.grid = sh.fibonacci_grid(cfg.grid_size)
        self.rows = []
        self.outputs = {}

    # -- bookkeeping
    def _record(self, method, sparsity, per_subject):
        per_subject = list(per_subject)
        for i, (ref, proc) in enumerate(per_subject):
            vals = evaluate(ref, proc, self.test.high[i], self.cfg.high_order, self.cfg.metrics)
            for name, v in vals.items():
                self.rows.append((f"test-{i:03d}", method, sparsity, name, v))
        self.outputs[(method, sparsity)] = [p for _, p in per_subject]

    def _write_intermediates(self):
        d = self.out / "data"
        for i in range(self.cfg.n_test):
            data.save_container(self.test.clean[i], d / f"test-{i:03d}-clean.hrir")
            data.save_container(self.test.noisy[i][0], d / f"test-{i:03d}-noisy.hrir")
        c = self.out / "coeffs"
        freqs = self.test.ref[0].frequencies
        for i in range(self.cfg.n_test):
            sh.save_coeffs(sh.ShCoeffTensor.from_channels(self.test.high[i], self.cfg.high_order),
                           c / f"test-{i:03d}-clean.shc", freqs)

    def _checkpoint(self, state, name):
        d = self.out / "checkpoints"
        d.mkdir(parents=True, exist_ok=True)
        train.save_state(state, d / f"{name}.ckpt")
        train.write_history_csv(state, d / f"{name}-history.csv")

    # -- stages
    def prepare(self):
        cfg = self.cfg
        log.info("synthesising %d train / %d test subjects", cfg.n_train, cfg.n_test)
        self.train = build_cohort(cfg, self.grid, "train")
        self.test = build_cohort(cfg, self.grid, "test")
        self.test_noisy = [data.hrir_to_hrtf(n[0]) for n in self.test.noisy]
        self.train_noisy = [[data.hrir_to_hrtf(h) for h in reps] for reps in self.train.noisy]

    def run_denoisers(self):
        cfg, p = self.cfg, self.cfg.grid_size
        wanted = [m for m in DENOISE_METHODS if m in cfg.methods]
        if "identity" in wanted:
            self._record("identity", p, zip(self.test.ref, self.test_noisy))
        kalman_ratio = denoise.KALMAN_QR_RATIO
        if "kalman" in wanted and cfg.snr_db is not None:
            clean = np.stack([h.irs for h in self.train.clean])
            noisy = np.stack([reps[0].irs for reps in self.train.noisy])
            kalman_ratio = denoise.tune_kalman_ratio(clean, noisy)
        for method in ("spectral-subtraction", "wavelet-db7", "kalman"):
            if method in wanted:
                kw = {"kalman_ratio": kalman_ratio} if method == "kalman" else {}
                procs = [data.hrir_to_hrtf(denoise.denoise_set(n[0], method, **kw))
                         for n in self.test.noisy]
                self._record(method, p, zip(self.test.ref, procs))
        if "dunet" in wanted:
            h = cfg.high_order
            x = np.stack([channels(n, h) for reps in self.train_noisy for n in reps])
            y = np.repeat(self.train.high, cfg.realizations, axis=0)
            state = train.train_dunet(x, y, cfg.dunet_config(h), cfg.epoch_counts().dunet, cfg.seed,
                                      cfg.batch_size, cfg.learning_rate, cfg.lambda_cos)
            self._checkpoint(state, "dunet")
            model = state.models["dunet"]
            out = model.forward(np.stack([channels(n, h) for n in self.test_noisy]))
            procs = [_from_channels(o, h, self.grid, n) for o, n in zip(out, self.test_noisy)]
            self._record("dunet", p, zip(self.test.ref, procs))

    def tune_sh_ridge(self, idx, order):
        """Relative ridge weight minimising mean training LSD for SH interpolation."""
        basis_scale = sh.gram_default_lambda(sh.real_sh_basis(order, self.grid[idx])) / 1e-6
        best = None
        for rel in self.cfg.sh_ridge_grid:
            lam = rel * basis_scale
            err = np.mean([
                metrics.lsd_error(ref, upsample.sh_upsample(reps[0].subset(idx), self.grid, order, lam))
                for ref, reps in zip(self.train.ref, self.train_noisy)
            ])
            if best is None or err < best[0]:
                best = (err, lam)
        return best[1]

    def run_upsamplers(self, sparsity):
        cfg = self.cfg
        wanted = [m for m in UPSAMPLE_METHODS if m in cfg.methods]
        if not wanted:
            return
        idx = data.subsample_indices(self.grid, sparsity, cfg.seed)
        low = cfg.low_order(sparsity)
        sparse_test = [n.subset(idx) for n in self.test_noisy]
        templates = [_nearest_phase_template(s, self.grid) for s in sparse_test]
        if "sh" in wanted:
            order = sh.max_order_for_points(sparsity)
            lam = self.tune_sh_ridge(idx, order)
            procs = [upsample.sh_upsample(s, self.grid, order, lam) for s in sparse_test]
            self._record("sh", sparsity, zip(self.test.ref, procs))
        if "barycentric" in wanted:
            procs = [upsample.barycentric_upsample(s, self.grid) for s in sparse_test]
            self._record("barycentric", sparsity, zip(self.test.ref, procs))
        neural = [m for m in ("aegan", "hrtf-dunet") if m in wanted]
        if neural:
            x = np.stack([channels(n.subset(idx), low) for reps in self.train_noisy for n in reps])
            y = np.repeat(self.train.high, cfg.realizations, axis=0)
            xt = np.stack([channels(s, low) for s in sparse_test])
            ep = cfg.epoch_counts()
            common = dict(batch_size=cfg.batch_size, lr=cfg.learning_rate,
                          lambda_cos=cfg.lambda_cos, lambda_adv=cfg.lambda_adv)
        if "aegan" in wanted:
            state = train.train_aegan(x, y, cfg.aegan_config(low), ep.aegan, cfg.seed, **common)
            self._checkpoint(state, f"aegan-s{sparsity}")
            out = state.models["generator"].forward(xt)
            procs = [_from_channels(o, cfg.high_order, self.grid, t) for o, t in zip(out, templates)]
            self._record("aegan", sparsity, zip(self.test.ref, procs))
        if "hrtf-dunet" in wanted:
            clean_low = None
            if cfg.lambda_den:
                clean_low = np.repeat(
                    np.stack([channels(r.subset(idx), low) for r in self.train.ref]),
                    cfg.realizations, axis=0)
            state = train.train_end_to_end(
                x, y, cfg.dunet_config(low), cfg.aegan_config(low), ep.end_to_end, cfg.seed,
                clean_low=clean_low, lambda_den=cfg.lambda_den, **common)
            self._checkpoint(state, f"hrtf-dunet-s{sparsity}")
            out = state.models["generator"].forward(state.models["dunet"].forward(xt))
            procs = [_from_channels(o, cfg.high_order, self.grid, t) for o, t in zip(out, templates)]
            self._record("hrtf-dunet", sparsity, zip(self.test.ref, procs))
        for mode, name in (("generic", "selection-1"), ("distinct", "selection-2")):
            if name in wanted:
                pick = self.selection(mode)
                self._record(name, sparsity, ((r, self.train.ref[pick]) for r in self.test.ref))

    def selection(self, mode):
        key = f"_selection_{mode}"
        if not hasattr(self, key):
            setattr(self, key, upsample.select_hrtf(self.train.ref, mode))
        return getattr(self, key)

    def plots(self):
        d = self.out / "figures"
        d.mkdir(parents=True, exist_ok=True)
        pos = self.cfg.plot_position
        f = self.test.ref[0].frequencies
        for (method, sparsity), procs in sorted(self.outputs.items()):
            for i in range(min(self.cfg.plot_subjects, len(procs))):
                curves = {
                    "reference": self.test.ref[i].magnitude_db()[pos, 0],
                    "noisy": self.test_noisy[i].magnitude_db()[pos, 0],
                    method: procs[i].magnitude_db()[pos, 0],
                }
                report.magnitude_svg(
                    d / f"magnitude-test-{i:03d}-{method}-s{sparsity}.svg", f, curves,
                    f"test-{i:03d}, position {pos}, left ear, {method} ({sparsity} points)")

    def run(self):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.json").write_text(json.dumps(self.cfg.to_dict(), indent=1, sort_keys=True))
        self.prepare()
        self._write_intermediates()
        self.run_denoisers()
        for s in self.cfg.sparsity:
            log.info("sparsity %d", s)
            self.run_upsamplers(s)
        report.write_metrics(self.rows, self.out / "metrics.csv")
        written = report.report(self.out / "metrics.csv", self.out)
        self.plots()
        return [self.out / "metrics.csv"] + written


def run_experiment(cfg, out_dir=None):
    """Run the configured experiment; returns the paths of the written CSV/SVG reports."""
    return Runner(cfg, out_dir).run()
