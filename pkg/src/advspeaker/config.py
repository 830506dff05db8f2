"""Experiment configuration: a single JSON document binding corpus,
front-end, model, training, and evaluation sections, with dotted-path
overrides, invariant validation, and a stable fingerprint that every
artifact embeds.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .attacks import AttackSpec
from .data import SynthConfig
from .frontend import FrontendConfig
from .losses import LossWeights, SinkhornSettings
from .model import SpeakerCNNConfig
from .training import PAPER_LR_SCHEDULE, TrainConfig
from .util import fingerprint


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class CorpusSection:
    kind: str = "synthetic"              # "synthetic" | "wav_dir"
    root: str | None = None              # wav_dir only
    split_seed: int = 0                  # wav_dir only
    num_speakers: int = 10
    utterances_per_speaker: int = 40
    duration_s: float = 1.0
    sample_rate: int = 16000
    seed: int = 100
    rms: float = 0.05
    noise_snr_db: float = 20.0
    f0_range: tuple[float, float] = (110.0, 320.0)
    harmonics: int = 5
    tilt: float = 0.45

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            num_speakers=self.num_speakers,
            utterances_per_speaker=self.utterances_per_speaker,
            duration_s=self.duration_s, sample_rate=self.sample_rate,
            seed=self.seed, rms=self.rms, noise_snr_db=self.noise_snr_db,
            f0_range=tuple(self.f0_range), harmonics=self.harmonics, tilt=self.tilt)


@dataclass
class ScenarioSection:
    kind: str                            # clean|fgsm|pgd|cw|fs|hybrid|transfer|epsilon_sweep|iteration_sweep
    attack: str = "pgd"                  # inner attack for transfer/sweeps
    iterations: int | None = None
    epsilon: float | None = None
    epsilons: list[float] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)


SCENARIO_KINDS = ("clean", "fgsm", "pgd", "cw", "fs", "hybrid", "transfer",
                  "epsilon_sweep", "iteration_sweep")


@dataclass
class EvalSection:
    batch_size: int = 40
    split: str = "test"
    epsilon: float = 0.002
    margin: float = 50.0
    seed: int = 0
    target_checkpoint: str | None = None
    source_checkpoint: str | None = None
    full_grid: bool = False
    scenarios: list[ScenarioSection] = field(default_factory=lambda: [
        ScenarioSection("clean"), ScenarioSection("fgsm"),
        ScenarioSection("pgd", iterations=10), ScenarioSection("cw", iterations=10),
        ScenarioSection("fs", iterations=10), ScenarioSection("hybrid", iterations=10),
    ])


@dataclass
class ReportSection:
    checkpoints: list[tuple[str, str]] = field(default_factory=list)
    iterations: list[int] = field(default_factory=lambda: [10, 40])


@dataclass
class ExperimentConfig:
    seed: int = 7
    output_dir: str = "runs/experiment"
    deterministic: bool = True
    corpus: CorpusSection = field(default_factory=CorpusSection)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    model: SpeakerCNNConfig = field(default_factory=SpeakerCNNConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=30))
    eval: EvalSection = field(default_factory=EvalSection)
    report: ReportSection = field(default_factory=ReportSection)

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed, "output_dir": self.output_dir,
            "deterministic": self.deterministic,
            "corpus": asdict(self.corpus),
            "frontend": asdict(self.frontend),
            "model": asdict(self.model),
            "train": {
                "epochs": self.train.epochs, "batch_size": self.train.batch_size,
                "lr_schedule": [list(x) for x in self.train.lr_schedule],
                "momentum": self.train.momentum, "w1": self.train.w1,
                "w2": self.train.w2, "defense": self.train.defense,
                "segment_length": self.train.segment_length,
                "checkpoint_every": self.train.checkpoint_every,
                "attack": {
                    "beta": self.train.attack.weights.beta,
                    "gamma": self.train.attack.weights.gamma,
                    "zeta": self.train.attack.weights.zeta,
                    "epsilon": self.train.attack.epsilon,
                    "alpha": self.train.attack.alpha,
                    "iterations": self.train.attack.iterations,
                    "random_init": self.train.attack.random_init,
                    "margin": self.train.attack.margin,
                },
                "sinkhorn": asdict(self.train.sinkhorn),
            },
            "eval": {
                "batch_size": self.eval.batch_size, "split": self.eval.split,
                "epsilon": self.eval.epsilon, "margin": self.eval.margin,
                "seed": self.eval.seed,
                "target_checkpoint": self.eval.target_checkpoint,
                "source_checkpoint": self.eval.source_checkpoint,
                "full_grid": self.eval.full_grid,
                "scenarios": [asdict(s) for s in self.eval.scenarios],
            },
            "report": {
                "checkpoints": [list(x) for x in self.report.checkpoints],
                "iterations": list(self.report.iterations),
            },
        }
        d["corpus"]["f0_range"] = list(d["corpus"]["f0_range"])
        d["model"]["channels"] = list(d["model"]["channels"])
        return d

    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())


def _dataclass_from(cls, payload: dict, context: str):
    try:
        return cls(**payload)
    except TypeError as exc:
        raise ConfigError([f"{context}: {exc}"]) from exc
    except ValueError as exc:
        raise ConfigError([f"{context}: {exc}"]) from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = copy.deepcopy(raw)
    violations: list[str] = []

    corpus_raw = raw.get("corpus", {})
    if "f0_range" in corpus_raw:
        corpus_raw["f0_range"] = tuple(corpus_raw["f0_range"])
    model_raw = raw.get("model", {})
    if "channels" in model_raw:
        model_raw["channels"] = tuple(model_raw["channels"])
    train_raw = raw.get("train", {})
    attack_raw = train_raw.pop("attack", {})
    sinkhorn_raw = train_raw.pop("sinkhorn", {})
    eval_raw = raw.get("eval", {})
    scenarios_raw = eval_raw.pop("scenarios", None)
    report_raw = raw.get("report", {})

    corpus = _dataclass_from(CorpusSection, corpus_raw, "corpus")
    frontend = _dataclass_from(FrontendConfig, raw.get("frontend", {}), "frontend")
    model = _dataclass_from(SpeakerCNNConfig, model_raw, "model")
    weights = LossWeights(attack_raw.pop("beta", 1.0), attack_raw.pop("gamma", 1.0),
                          attack_raw.pop("zeta", 1.0))
    attack_defaults = dict(epsilon=0.002, alpha=0.002 / 5, iterations=10,
                           random_init=True, margin=50.0)
    attack_defaults.update(attack_raw)
    attack = _dataclass_from(AttackSpec, dict(weights=weights, **attack_defaults), "train.attack")
    sinkhorn = _dataclass_from(SinkhornSettings, sinkhorn_raw, "train.sinkhorn")
    if "lr_schedule" in train_raw:
        train_raw["lr_schedule"] = tuple((int(e), float(r)) for e, r in train_raw["lr_schedule"])
    train_defaults = dict(epochs=30)
    train_defaults.update(train_raw)
    train = _dataclass_from(TrainConfig, dict(train_defaults, attack=attack,
                                              sinkhorn=sinkhorn), "train")
    scenarios = None
    if scenarios_raw is not None:
        scenarios = [_dataclass_from(ScenarioSection, s, f"eval.scenarios[{i}]")
                     for i, s in enumerate(scenarios_raw)]
    eval_section = _dataclass_from(EvalSection, eval_raw, "eval")
    if scenarios is not None:
        eval_section.scenarios = scenarios
    if "checkpoints" in report_raw:
        report_raw["checkpoints"] = [tuple(x) for x in report_raw["checkpoints"]]
    report = _dataclass_from(ReportSection, report_raw, "report")

    known = {"seed", "output_dir", "deterministic", "corpus", "frontend", "model",
             "train", "eval", "report"}
    for key in raw:
        if key not in known:
            violations.append(f"unknown top-level key {key!r}")
    if violations:
        raise ConfigError(violations)

    return ExperimentConfig(
        seed=int(raw.get("seed", 7)),
        output_dir=str(raw.get("output_dir", "runs/experiment")),
        deterministic=bool(raw.get("deterministic", True)),
        corpus=corpus, frontend=frontend, model=model, train=train,
        eval=eval_section, report=report)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from exc
    return config_from_dict(raw)


def parse_override(expr: str) -> tuple[list[str], object]:
    """'train.epochs=5' -> (['train', 'epochs'], 5); values parse as JSON,
    falling back to a bare string."""
    if "=" not in expr:
        raise ConfigError([f"override {expr!r} is not of the form path.key=value"])
    path, _, value = expr.partition("=")
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigError([f"override {expr!r} has an empty path"])
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return keys, parsed


def apply_overrides(raw: dict, overrides) -> dict:
    raw = copy.deepcopy(raw)
    for expr in overrides:
        keys, value = parse_override(expr)
        node = raw
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError([f"override {expr!r}: {key} is not a section"])
        node[keys[-1]] = value
    return raw


# ---------------------------------------------------------------------------
# validation

REFERENCE_EPSILON = 0.002


def validate(config: ExperimentConfig) -> tuple[list[str], list[str]]:
    """(violations, warnings). Violations make the config unusable; warnings
    flag values that diverge from the reference experimental defaults."""
    violations: list[str] = []
    warnings_: list[str] = []

    if config.corpus.kind not in ("synthetic", "wav_dir"):
        violations.append(f"corpus.kind: unknown kind {config.corpus.kind!r}")
    if config.corpus.kind == "wav_dir" and not config.corpus.root:
        violations.append("corpus.root: required when corpus.kind is wav_dir")
    if config.corpus.kind == "synthetic":
        if config.model.num_speakers != config.corpus.num_speakers:
            violations.append(
                f"model.num_speakers ({config.model.num_speakers}) != "
                f"corpus.num_speakers ({config.corpus.num_speakers})")
        if config.corpus.sample_rate != config.frontend.sample_rate:
            violations.append("corpus.sample_rate != frontend.sample_rate")

    attack = config.train.attack
    if attack.epsilon <= 0:
        violations.append("train.attack.epsilon: must be > 0")
    if config.eval.epsilon < 0:
        violations.append("eval.epsilon: must be >= 0")
    if config.eval.split not in ("train", "test", "all"):
        violations.append(f"eval.split: unknown split {config.eval.split!r}")
    for i, scenario in enumerate(config.eval.scenarios):
        if scenario.kind not in SCENARIO_KINDS:
            violations.append(f"eval.scenarios[{i}].kind: unknown kind {scenario.kind!r}")
        if scenario.kind == "epsilon_sweep" and not scenario.epsilons:
            violations.append(f"eval.scenarios[{i}]: epsilon_sweep needs epsilons")
        if scenario.kind == "iteration_sweep" and not scenario.counts:
            violations.append(f"eval.scenarios[{i}]: iteration_sweep needs counts")
        if scenario.kind == "transfer" and not config.eval.source_checkpoint:
            violations.append(f"eval.scenarios[{i}]: transfer needs eval.source_checkpoint")
        if scenario.epsilon is not None and scenario.epsilon < 0:
            violations.append(f"eval.scenarios[{i}].epsilon: must be >= 0")

    # receptive-field check: the training segment must survive the stack
    from .model import min_input_samples

    try:
        needed = min_input_samples(config.model, config.frontend)
        if config.train.segment_length < needed:
            violations.append(
                f"train.segment_length ({config.train.segment_length}) below the "
                f"model receptive field ({needed} samples)")
    except ValueError:
        pass  # model/frontend construction already reported above

    if attack.epsilon != REFERENCE_EPSILON:
        warnings_.append(
            f"train.attack.epsilon = {attack.epsilon:g} differs from the reference "
            f"budget {REFERENCE_EPSILON}")
    if config.eval.epsilon not in (0.0, attack.epsilon):
        warnings_.append(
            f"eval.epsilon ({config.eval.epsilon:g}) != train.attack.epsilon "
            f"({attack.epsilon:g}); budget sweeps do this deliberately")
    return violations, warnings_


# ---------------------------------------------------------------------------
# shipped presets

def desk_preset(defense: str) -> ExperimentConfig:
    """Desk-scale synthetic-corpus preset for one defense kind."""
    attack = AttackSpec(LossWeights(1, 1, 1), epsilon=0.002, alpha=0.002 / 5,
                        iterations=10, random_init=True, margin=50.0)
    train = TrainConfig(epochs=30, batch_size=32, lr_schedule=PAPER_LR_SCHEDULE,
                        momentum=0.9, w1=1.0, w2=1.0, defense=defense,
                        attack=attack, segment_length=8000,
                        sinkhorn=SinkhornSettings(0.01, 300, 1e-6),
                        checkpoint_every=10)
    fe = FrontendConfig(sample_rate=16000, window_length=256, hop_length=128,
                        fft_size=256, mel_bins=32, log_floor=1e-6)
    name = defense.replace("_", "-")
    return ExperimentConfig(
        seed=7, output_dir=f"runs/desk-{name}", deterministic=True,
        corpus=CorpusSection(), frontend=fe,
        model=SpeakerCNNConfig.tiny(10), train=train,
        eval=EvalSection(batch_size=40, target_checkpoint=f"runs/desk-{name}/checkpoint.npz"))


def full_scale_preset() -> ExperimentConfig:
    """Full-scale settings (251 speakers, 200 epochs); documented, not run in CI."""
    attack = AttackSpec(LossWeights(1, 1, 1), epsilon=0.002, alpha=0.002 / 5,
                        iterations=10, random_init=True, margin=50.0)
    train = TrainConfig(epochs=200, batch_size=32, lr_schedule=PAPER_LR_SCHEDULE,
                        momentum=0.9, w1=1.0, w2=1.0, defense="hat", attack=attack,
                        segment_length=48000, sinkhorn=SinkhornSettings(0.01, 1000, 1e-6),
                        checkpoint_every=10)
    return ExperimentConfig(
        seed=7, output_dir="runs/paper-hat", deterministic=True,
        corpus=CorpusSection(kind="wav_dir", root="data/librispeech-train-clean-100",
                             num_speakers=251),
        frontend=FrontendConfig(), model=SpeakerCNNConfig(), train=train,
        eval=EvalSection(batch_size=32, target_checkpoint="runs/paper-hat/checkpoint.npz"))


BUILTIN_PRESETS = {
    "desk-standard": lambda: desk_preset("standard"),
    "desk-fgsm-at": lambda: desk_preset("fgsm_at"),
    "desk-pgd-at": lambda: desk_preset("pgd_at"),
    "desk-fs-at": lambda: desk_preset("fs_at"),
    "desk-hat": lambda: desk_preset("hat"),
    "paper-hat": full_scale_preset,
}


def write_preset_files(directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, factory in BUILTIN_PRESETS.items():
        path = directory / f"{name}.json"
        path.write_text(json.dumps(factory().to_dict(), indent=2, sort_keys=True) + "\n")
        written.append(path)
    return written
