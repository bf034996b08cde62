"""Day-partitioned cross validation, training loops, scenarios and reports."""
from __future__ import annotations

import ast
import configparser
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .classifiers import (ClassifierConfig, ClassifierModel, LabelPrediction, bce_loss,
                          classifier_rows, pad_soft)
from .data import PAD, Instance, Vocabulary, build_vocab, read_instances
from .metrics import bleu_report, classification_report
from .seq2res import Seq2ResConfig, Seq2ResModel, forward_teacher_batch, generate_batch

log = logging.getLogger(__name__)

SCENARIOS = ("No_Sep", "S2S_Sep", "GT_Sep")

ADLMR_ACTIVITIES = (
    "Fill medication dispenser", "Hang up clothes", "Move couch and table",
    "Read on couch (user B)", "Water plants", "Sweep kitchen floor", "Play checkers",
    "Set out dinner ingredients", "Set dinner table", "Read on couch (user A)",
    "Pay electric bill", "Prepare picnic basket", "Retrieve dishes",
    "Pack supplies in basket", "Pack food in basket",
)

FOLD_ASSUMPTION = ("folds 1-6 test consecutive day triples 1-18, folds 7-10 consecutive "
                   "pairs 19-26 (boundaries assumed)")
ACCURACY_NOTE = "accuracy = exact match of predicted and true label sets"
INIT_NOTE = "classifiers: fresh seeded initialisation per scenario and fold; one Seq2Res per fold"
DATA_ENV = "MULTIRES_DATA"  # overrides data.instances when set


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


# ------------------------------------------------------------------- folds

@dataclass(frozen=True)
class FoldPlan:
    days: tuple[int, ...]
    folds: tuple[tuple[int, ...], ...]

    def test_days(self, k: int) -> tuple[int, ...]:
        """Test days of fold ``k`` (1-based)."""
        return self.folds[k - 1]

    def train_days(self, k: int) -> tuple[int, ...]:
        test = set(self.test_days(k))
        return tuple(d for d in self.days if d not in test)


def consecutive_folds(day_ids: Sequence[int], sizes: Sequence[int]) -> FoldPlan:
    days = tuple(sorted(day_ids))
    if sum(sizes) != len(days):
        raise ValueError(f"fold sizes {list(sizes)} do not cover {len(days)} days")
    folds, start = [], 0
    for s in sizes:
        folds.append(days[start:start + s])
        start += s
    return FoldPlan(days, tuple(folds))


def make_fold_plan(day_ids: Sequence[int]) -> FoldPlan:
    """Ten folds over 26 days: six test triples, then four test pairs."""
    if len(set(day_ids)) != 26 or len(day_ids) != 26:
        raise ValueError(f"fold plan needs exactly 26 distinct days, got {len(day_ids)}")
    return consecutive_folds(day_ids, [3] * 6 + [2] * 4)


# ------------------------------------------------------------------ config

@dataclass
class TrainingConfig:
    sep_epochs: int = 300
    sep_lr: float = 1e-3
    sep_half_period: int = 80
    cls_epochs: int = 100
    cls_lr: float = 1e-4
    cls_half_period: int = 0  # 0 keeps the rate constant
    batch_size: int = 100
    checkpoint_every: int = 20


@dataclass
class DataConfig:
    instances: str = ""
    width: int = 16
    step: int = 3
    n_labels: int = 15
    label_names: tuple[str, ...] = ADLMR_ACTIVITIES


@dataclass
class RunConfig:
    seq2res: Seq2ResConfig = field(default_factory=Seq2ResConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    scenarios: tuple[str, ...] = SCENARIOS
    models: tuple[str, ...] = ("bn", "q2l")
    folds: tuple[int, ...] = ()  # empty means every fold
    fold_layout: str = "adlmr"  # "adlmr" (26 days) or "equal"
    n_folds: int = 10
    bleu_specials: bool = True
    bleu_smoothing: bool = True
    seed: int = 0
    output_dir: str = "reports"
    jobs: int = 1

    def validate(self) -> None:
        bad = [s for s in self.scenarios if s not in SCENARIOS]
        if bad:
            raise ConfigError(f"unknown scenario {bad[0]!r}; choose from {SCENARIOS}")
        bad = [m for m in self.models if m not in ("bn", "q2l")]
        if bad:
            raise ConfigError(f"unknown model {bad[0]!r}; choose 'bn' or 'q2l'")
        if self.fold_layout not in ("adlmr", "equal"):
            raise ConfigError(f"fold_layout must be 'adlmr' or 'equal', got {self.fold_layout!r}")
        if self.training.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if len(self.data.label_names) != self.data.n_labels:
            self.data.label_names = tuple(f"activity_{i + 1}" for i in range(self.data.n_labels))

    def label_name(self, k: int) -> str:
        return self.data.label_names[k]


_SECTIONS = {"seq2res": Seq2ResConfig, "classifier": ClassifierConfig,
             "training": TrainingConfig, "data": DataConfig}


def _parse_value(text: str, current):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        value = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        value = text
    if isinstance(current, tuple):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        return tuple(value) if isinstance(value, (list, tuple)) else (value,)
    if isinstance(current, float) and isinstance(value, int):
        return float(value)
    return value


def _apply(obj, key: str, text: str, where: str) -> None:
    names = {f.name for f in fields(obj)}
    if key not in names:
        raise ConfigError(f"unknown key {key!r} in [{where}]")
    current = getattr(obj, key)
    value = _parse_value(text, current)
    if not isinstance(current, tuple) and type(value) is not type(current):
        raise ConfigError(f"[{where}] {key}: expected {type(current).__name__}, got {text!r}")
    setattr(obj, key, value)


def load_config(path) -> RunConfig:
    """Read a sectioned ``key = value`` file (``#`` comments; TOML-compatible subset)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = RunConfig()
    for section in parser.sections():
        if section == "run":
            target = cfg
        elif section in _SECTIONS:
            target = getattr(cfg, section)
        else:
            raise ConfigError(f"unknown section [{section}]")
        for key, text in parser.items(section):
            _apply(target, key, text, section)
    try:
        cfg.classifier.__post_init__()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Full configuration snapshot in the same format ``load_config`` reads."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        if isinstance(v, str):
            return '"' + v.replace('"', "'") + '"'
        return repr(v)

    lines = ["[run]"]
    for f in fields(cfg):
        if f.name not in _SECTIONS:
            lines.append(f"{f.name} = {fmt(getattr(cfg, f.name))}")
    for name in _SECTIONS:
        lines.append(f"\n[{name}]")
        for key, value in asdict(getattr(cfg, name)).items():
            lines.append(f"{key} = {fmt(value)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- encoding

def encode_padded(seqs: Sequence[Sequence[str]], vocab: Vocabulary) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = vocab.encode(s)
    return out


def fold_vocab(train: Sequence[Instance]) -> Vocabulary:
    return build_vocab(t for inst in train for t in inst.window)


def _batches(n: int, size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def _rngs(seed: int, *tags: int):
    """Independent generators for initialisation, shuffling and dropout."""
    return tuple(np.random.default_rng([seed, *tags, i]) for i in range(3))


# -------------------------------------------------------------- seq2res

@dataclass
class TrainResult:
    model: object
    history: list[float]


def train_seq2res(cfg: RunConfig, train: Sequence[Instance], vocab: Vocabulary,
                  seed: int | None = None, out_dir: Path | None = None,
                  epochs: int | None = None, on_epoch=None) -> TrainResult:
    """Teacher-forced cross-entropy training with Adam and step-decayed learning rate.

    ``on_epoch(epoch, model)`` runs after every epoch; a true return value stops training.
    """
    if not train:
        raise ValueError("train_seq2res: empty training set")
    seed = cfg.seed if seed is None else seed
    tc = cfg.training
    epochs = tc.sep_epochs if epochs is None else epochs
    init_rng, shuffle_rng, drop_rng = _rngs(seed, 1)
    model = Seq2ResModel(len(vocab), cfg.seq2res, init_rng)
    model.train(True, drop_rng)
    X = encode_padded([i.window for i in train], vocab)
    Y = encode_padded([i.target_sep for i in train], vocab)
    params, names = model.parameters(), [n for n, _ in model.named_parameters()]
    state = nx.AdamState.for_params(params, lr=tc.sep_lr)
    history = []
    for epoch in range(epochs):
        state.lr = nx.lr_schedule(tc.sep_lr, epoch, tc.sep_half_period)
        total, count = 0.0, 0
        for idx in _batches(len(X), tc.batch_size, shuffle_rng):
            model.zero_grad()
            _, loss = forward_teacher_batch(model, X[idx], Y[idx])
            if not math.isfinite(loss.item()):
                raise DivergenceError(f"seq2res loss became {loss.item()} at epoch {epoch}")
            nx.backward(loss)
            nx.adam_step(params, state, names)
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(total / count)
        log.debug("seq2res epoch %d loss %.4f", epoch, history[-1])
        if out_dir is not None and tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
            save_model(model, vocab, out_dir / f"seq2res_epoch{epoch + 1:03d}.ckpt")
        if on_epoch is not None and on_epoch(epoch, model):
            break
    model.eval()
    if out_dir is not None:
        save_model(model, vocab, out_dir / "seq2res.ckpt")
    return TrainResult(model, history)


def separation_outputs(model: Seq2ResModel, instances: Sequence[Instance], vocab: Vocabulary,
                       batch_size: int = 100):
    X = encode_padded([i.window for i in instances], vocab)
    gens = []
    for start in range(0, len(X), batch_size):
        gens.extend(generate_batch(model, X[start:start + batch_size]))
    return gens


def evaluate_separation(model: Seq2ResModel, instances: Sequence[Instance], vocab: Vocabulary,
                        specials: bool = True, smoothing: bool = True, gens=None) -> dict:
    gens = separation_outputs(model, instances, vocab) if gens is None else gens
    preds = [g.tokens for g in gens]
    refs = [vocab.encode(i.target_sep) for i in instances]
    if not specials:
        keep = lambda seq: [t for t in seq if t > 3]  # noqa: E731
        preds, refs = [keep(p) for p in preds], [keep(r) or [PAD] for r in refs]
    report = bleu_report(preds, refs, [sorted(i.label_set) for i in instances], smoothing=smoothing)
    report["generations"] = gens
    return report


# ----------------------------------------------------------- classifiers

def classifier_inputs(scenario: str, instances: Sequence[Instance], vocab: Vocabulary,
                      sep_model: Seq2ResModel | None = None, gens=None) -> dict:
    """Keyword arguments for :meth:`ClassifierModel.logits` under a scenario."""
    if scenario == "No_Sep":
        return {"ids": encode_padded([i.window for i in instances], vocab)}
    if scenario == "GT_Sep":
        return {"ids": encode_padded([i.gt_separated() for i in instances], vocab)}
    if scenario == "S2S_Sep":
        if gens is None:
            if sep_model is None:
                raise ValueError("S2S_Sep needs a trained Seq2Res model")
            gens = separation_outputs(sep_model, instances, vocab)
        soft, mask = pad_soft([classifier_rows(g) for g in gens], len(vocab))
        return {"soft": soft, "mask": mask}
    raise ValueError(f"unknown scenario {scenario!r}")


def _take(inputs: dict, idx) -> dict:
    return {k: v[idx] for k, v in inputs.items()}


def train_classifier(cfg: RunConfig, train: Sequence[Instance], vocab: Vocabulary, scenario: str,
                     head: str | None = None, sep_model: Seq2ResModel | None = None,
                     seed: int | None = None, out_dir: Path | None = None,
                     epochs: int | None = None, gens=None) -> TrainResult:
    """BCE training of a BiGRU classifier on scenario-specific inputs."""
    if scenario == "S2S_Sep" and sep_model is None and gens is None:
        raise ValueError("train_classifier: S2S_Sep requires sep_model")
    if not train:
        raise ValueError("train_classifier: empty training set")
    seed = cfg.seed if seed is None else seed
    tc = cfg.training
    epochs = tc.cls_epochs if epochs is None else epochs
    ccfg = ClassifierConfig(**{**asdict(cfg.classifier), **({"head": head} if head else {})})
    init_rng, shuffle_rng, drop_rng = _rngs(seed, 2, SCENARIOS.index(scenario), ("bn", "q2l").index(ccfg.head))
    model = ClassifierModel(len(vocab), cfg.data.n_labels, ccfg, init_rng)
    model.train(True, drop_rng)
    inputs = classifier_inputs(scenario, train, vocab, sep_model, gens)
    Y = np.array([i.target_labels for i in train], dtype=nx.DTYPE)
    params, names = model.parameters(), [n for n, _ in model.named_parameters()]
    state = nx.AdamState.for_params(params, lr=tc.cls_lr)
    history = []
    for epoch in range(epochs):
        if tc.cls_half_period:
            state.lr = nx.lr_schedule(tc.cls_lr, epoch, tc.cls_half_period)
        total = 0.0
        for idx in _batches(len(Y), tc.batch_size, shuffle_rng):
            model.zero_grad()
            loss = bce_loss(model.probs(**_take(inputs, idx)), Y[idx])
            if not math.isfinite(loss.item()):
                raise DivergenceError(f"classifier loss became {loss.item()} at epoch {epoch}")
            nx.backward(loss)
            nx.adam_step(params, state, names)
            total += loss.item() * len(idx)
        history.append(total / len(Y))
        if out_dir is not None and tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
            save_model(model, vocab, out_dir / f"classifier_epoch{epoch + 1:03d}.ckpt")
    model.eval()
    if out_dir is not None:
        save_model(model, vocab, out_dir / "classifier.ckpt")
    return TrainResult(model, history)


def predict_classifier(model: ClassifierModel, inputs: dict, batch_size: int = 100) -> list[LabelPrediction]:
    model.eval()
    n = len(next(iter(inputs.values())))
    out = []
    with nx.no_grad():
        for start in range(0, n, batch_size):
            idx = slice(start, start + batch_size)
            probs = model.probs(**_take(inputs, idx)).data
            out.extend(LabelPrediction.from_probs(p, model.config.threshold) for p in probs)
    return out


# ----------------------------------------------------------- checkpoints

def save_model(model, vocab: Vocabulary, path: Path, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(model, Seq2ResModel):
        meta = {"kind": "seq2res", "config": asdict(model.config)}
    else:
        meta = {"kind": "classifier", "config": asdict(model.config), "n_labels": model.n_labels}
    meta["vocab"] = vocab.itos[4:]
    meta.update(extra or {})
    nx.save_checkpoint(path, model.state_dict(), meta)


def load_model(path, with_meta: bool = False):
    """Returns ``(model, vocab)`` rebuilt from a checkpoint (plus the metadata if asked)."""
    state, meta = nx.load_checkpoint(path)
    vocab = Vocabulary(meta["vocab"])
    if meta["kind"] == "seq2res":
        model = Seq2ResModel(len(vocab), Seq2ResConfig(**meta["config"]))
    else:
        model = ClassifierModel(len(vocab), meta["n_labels"], ClassifierConfig(**meta["config"]))
    model.load_state_dict(state)
    model.eval()
    return (model, vocab, meta) if with_meta else (model, vocab)


# -------------------------------------------------------------- reports

@dataclass
class MetricReport:
    """``records`` rows are ``(scenario, model, class, metric, fold, value)``; fold 0 is unused."""

    records: list[tuple[str, str, str, str, int, float]] = field(default_factory=list)
    config_text: str = ""
    seed: int = 0
    wall_clock: float = 0.0

    def add(self, scenario, model, cls, metric, fold, value) -> None:
        self.records.append((scenario, model, cls, metric, int(fold), float(value)))

    def folds(self) -> list[int]:
        return sorted({r[4] for r in self.records})

    def summary(self) -> dict[tuple[str, str, str, str], tuple[float, float | None, int]]:
        """Mean and sample std (n - 1) across folds; std is ``None`` for a single fold."""
        groups: dict = {}
        for sc, m, c, metric, _, v in self.records:
            groups.setdefault((sc, m, c, metric), []).append(v)
        out = {}
        for key, vals in groups.items():
            arr = np.asarray(vals)
            std = float(arr.std(ddof=1)) if len(arr) > 1 else None
            out[key] = (float(arr.mean()), std, len(arr))
        return out

    def records_text(self) -> str:
        """Machine-readable lines: scenario, model, class, metric, value, std (tab separated)."""
        lines = ["scenario\tmodel\tclass\tmetric\tvalue\tstd"]
        for (sc, m, c, metric), (mean, std, _) in sorted(self.summary().items()):
            lines.append(f"{sc}\t{m}\t{c}\t{metric}\t{mean:.6f}\t{'' if std is None else f'{std:.6f}'}")
        return "\n".join(lines) + "\n"

    def fold_records_text(self) -> str:
        lines = ["scenario\tmodel\tclass\tmetric\tfold\tvalue"]
        for sc, m, c, metric, k, v in sorted(self.records):
            lines.append(f"{sc}\t{m}\t{c}\t{metric}\t{k}\t{v:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_fold_records(cls, text: str) -> "MetricReport":
        rep = cls()
        for line in text.splitlines()[1:]:
            if line.strip():
                sc, m, c, metric, k, v = line.split("\t")
                rep.add(sc, m, c, metric, int(k), float(v))
        return rep


def _cell(mean: float, std: float | None, scale: float = 100.0, digits: int = 2) -> str:
    s = f"{mean * scale:.{digits}f}"
    return s + (f" ({std * scale:.{digits}f})" if std is not None else " (-)")


def render_tables(report: MetricReport) -> str:
    """Plain-text tables laid out like the separation and recognition result tables."""
    summ = report.summary()
    out = [f"# {ACCURACY_NOTE}", f"# fold layout: {FOLD_ASSUMPTION}",
           f"# {INIT_NOTE}",
           f"# folds evaluated: {', '.join(map(str, report.folds()))}; seed {report.seed}", ""]
    bleu_rows = sorted((k, v) for k, v in summ.items() if k[0] == "separation" and k[3] == "bleu")
    if bleu_rows:
        out.append("Resident separation (Seq2Res), mean BLEU (std)")
        width = max(len(k[2]) for k, _ in bleu_rows) + 2
        for (sc, m, c, metric), (mean, std, _) in bleu_rows:
            if c != "overall":
                out.append(f"  {c:<{width}}{_cell(mean, std, 1.0, 4)}")
        for (sc, m, c, metric), (mean, std, _) in bleu_rows:
            if c == "overall":
                out.append(f"  {'Overall BLEU':<{width}}{_cell(mean, std, 1.0, 4)}")
        out.append("")
    rec = sorted({(k[0], k[1]) for k in summ if k[0] in SCENARIOS},
                 key=lambda p: (SCENARIOS.index(p[0]), p[1]))
    if rec:
        out.append(f"{'Scenario':<10}{'Model':<12}{'Accuracy (%)':<18}{'Macro-F1 (%)':<18}")
        for sc, m in rec:
            acc = summ.get((sc, m, "all", "accuracy"))
            f1 = summ.get((sc, m, "all", "macro_f1"))
            out.append(f"{sc:<10}{'BiGRU+' + m.upper():<12}{_cell(*acc[:2]):<18}{_cell(*f1[:2]):<18}")
        out.append("")
        for sc, m in rec:
            classes = sorted({k[2] for k in summ if k[:2] == (sc, m) and k[2] != "all"})
            if not classes:
                continue
            out.append(f"Per-class BiGRU+{m.upper()} ({sc}): precision / recall / F1 (%)")
            width = max(len(c) for c in classes) + 2
            for c in classes:
                vals = [summ[(sc, m, c, k)][0] * 100 for k in ("precision", "recall", "f1")]
                out.append(f"  {c:<{width}}" + " / ".join(f"{v:6.2f}" for v in vals))
            out.append("")
    return "\n".join(out)


# ------------------------------------------------------------------ runs

def load_instance_dir(path) -> list[Instance]:
    files = sorted(Path(path).glob("day*.tsv"))
    if not files:
        raise FileNotFoundError(f"no day*.tsv instance files in {path}")
    out = []
    for f in files:
        out.extend(read_instances(f))
    return out


def plan_for(cfg: RunConfig, day_ids: Sequence[int]) -> FoldPlan:
    if cfg.fold_layout == "adlmr":
        return make_fold_plan(day_ids)
    days = sorted(day_ids)
    base, extra = divmod(len(days), cfg.n_folds)
    sizes = [base + (1 if i < extra else 0) for i in range(cfg.n_folds)]
    return consecutive_folds(days, [s for s in sizes if s])


def run_fold(cfg: RunConfig, instances: Sequence[Instance], plan: FoldPlan, k: int,
             out_root: Path | None = None) -> MetricReport:
    """Train and evaluate every requested scenario/model on fold ``k``."""
    report = MetricReport(seed=cfg.seed)
    test_days = set(plan.test_days(k))
    train = [i for i in instances if i.day_id not in test_days]
    test = [i for i in instances if i.day_id in test_days]
    if not train or not test:
        raise ValueError(f"fold {k}: empty train or test split")
    vocab = fold_vocab(train)
    fold_seed = cfg.seed * 1000 + k
    sep_dir = out_root / "separation" / "seq2res" / f"fold{k}" if out_root else None
    sep = train_seq2res(cfg, train, vocab, seed=fold_seed, out_dir=sep_dir).model
    train_gens = separation_outputs(sep, train, vocab) if "S2S_Sep" in cfg.scenarios else None
    bleu = evaluate_separation(sep, test, vocab, cfg.bleu_specials, cfg.bleu_smoothing)
    report.add("separation", "seq2res", "overall", "bleu", k, bleu["overall"])
    for c, v in bleu["per_class"].items():
        report.add("separation", "seq2res", cfg.label_name(c), "bleu", k, v)
    if sep_dir is not None:
        with open(sep_dir / "generations.txt", "w") as fh:
            for inst, g in zip(test, bleu["generations"]):
                fh.write(f"{inst.day_id}:{inst.window_start}\t{' '.join(vocab.decode(g.tokens))}"
                         f"\t{'truncated' if g.truncated else 'complete'}\n")
    for scenario in cfg.scenarios:
        test_inputs = classifier_inputs(scenario, test, vocab, sep,
                                        bleu["generations"] if scenario == "S2S_Sep" else None)
        for head in cfg.models:
            cdir = out_root / scenario / head / f"fold{k}" if out_root else None
            model = train_classifier(cfg, train, vocab, scenario, head, sep, seed=fold_seed,
                                     out_dir=cdir, gens=train_gens).model
            preds = predict_classifier(model, test_inputs)
            scores = classification_report([p.predicted_set for p in preds],
                                           [i.label_set for i in test], cfg.data.n_labels)
            report.add(scenario, head, "all", "accuracy", k, scores.accuracy)
            report.add(scenario, head, "all", "macro_f1", k, scores.macro_f1)
            for c in range(cfg.data.n_labels):
                name = cfg.label_name(c)
                report.add(scenario, head, name, "precision", k, scores.precision[c])
                report.add(scenario, head, name, "recall", k, scores.recall[c])
                report.add(scenario, head, name, "f1", k, scores.f1[c])
            if cdir is not None:
                write_predictions(cdir / "predictions.tsv", test, preds, cfg)
                (cdir / "metrics.tsv").write_text(
                    f"accuracy\t{scores.accuracy:.6f}\nmacro_f1\t{scores.macro_f1:.6f}\n")
    return report


def write_predictions(path: Path, instances, preds, cfg: RunConfig) -> None:
    """One line per instance: id, probabilities (6 decimals), predicted label names."""
    with open(path, "w") as fh:
        for inst, p in zip(instances, preds):
            names = ",".join(cfg.label_name(c) for c in sorted(p.predicted_set))
            fh.write(f"{inst.day_id}:{inst.window_start}\t"
                     + " ".join(f"{x:.6f}" for x in p.probs) + f"\t{names}\n")


def _run_fold_job(args):
    cfg, instances, plan, k, out_root = args
    return run_fold(cfg, instances, plan, k, out_root)


def run_all(cfg: RunConfig, instances: Sequence[Instance] | None = None) -> MetricReport:
    """The fold x scenario x model grid; writes ``<output_dir>/report.txt`` and record files."""
    cfg.validate()
    t0 = time.perf_counter()
    if instances is None:
        instances = load_instance_dir(os.environ.get(DATA_ENV) or cfg.data.instances)
    plan = plan_for(cfg, sorted({i.day_id for i in instances}))
    folds = cfg.folds or tuple(range(1, len(plan.folds) + 1))
    out_root = Path(cfg.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, instances, plan, k, out_root) for k in folds]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            parts = list(pool.map(_run_fold_job, jobs))
    else:
        parts = [_run_fold_job(j) for j in jobs]
    report = MetricReport(config_text=dump_config(cfg), seed=cfg.seed)
    for part in parts:
        report.records.extend(part.records)
    report.wall_clock = time.perf_counter() - t0
    write_report(report, out_root)
    return report


def write_report(report: MetricReport, out_root: Path) -> None:
    out_root = Path(out_root)
    (out_root / "config.ini").write_text(report.config_text)
    (out_root / "metrics.tsv").write_text(report.records_text())
    (out_root / "fold_metrics.tsv").write_text(report.fold_records_text())
    (out_root / "report.txt").write_text(render_tables(report))
    # kept apart so the metric files stay byte-identical across reruns
    (out_root / "timing.txt").write_text(f"wall_clock_seconds\t{report.wall_clock:.1f}\n")
