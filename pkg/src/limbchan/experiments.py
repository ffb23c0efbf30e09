"""Lead/disease scenarios and the ResNet vs ResNet++ comparison protocol."""
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import UnknownScenario
from .metrics import generalization_report
from .models import ImputerConfig, ResNetPlusPlus, baseline_config, stage2_config
from .preprocess import ChannelConfig, select_channels
from .train import TrainConfig, seeded_rng, stage2_inputs, train_classifier, train_imputer
from .wfdb import HEALTHY

SCENARIO_LEADS = {1: ("II", "III", "aVF"), 2: ("V1", "V2", "V3")}
INFERO_MI = ("Myocardial Infarction: inferior",)
ANTERO_MI = (
    "Myocardial Infarction: anterior",
    "Myocardial Infarction: antero-septal",
    "Myocardial Infarction: antero-lateral",
)
# split sizes reported for the full PTB subset; informational only
REPORTED_SPLIT_SIZES = {1: (7246, 10794)}


@dataclass
class SplitSpec:
    scenario_id: int
    leads: ChannelConfig
    train_classes: frozenset
    train_fraction: float
    seed: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    group_by_record: bool = False


def scenario_classes(scenario_id, antero_classes=ANTERO_MI):
    if scenario_id == 1:
        return frozenset(INFERO_MI + (HEALTHY,))
    if scenario_id == 2:
        return frozenset(tuple(antero_classes) + (HEALTHY,))
    raise UnknownScenario(f"unknown scenario {scenario_id!r}; expected 1 or 2")


def build_scenario(scenario_id, dataset, seed=0, train_fraction=0.8, antero_classes=ANTERO_MI,
                   group_by_record=False):
    """Train split: ``train_fraction`` of each in-scope class; everything else
    (other classes included) goes to test.

    With ``group_by_record`` whole records are assigned to one side.
    """
    if scenario_id not in SCENARIO_LEADS:
        raise UnknownScenario(f"unknown scenario {scenario_id!r}; expected 1 or 2")
    leads = ChannelConfig.resolve(SCENARIO_LEADS[scenario_id], dataset.channel_names)
    classes = scenario_classes(scenario_id, antero_classes)
    rng = seeded_rng(seed, f"scenario-{scenario_id}")
    names = np.array(dataset.class_names, dtype=object)
    train = []
    for cls in sorted(classes):
        idx = np.flatnonzero(names == cls)
        if idx.size == 0:
            continue
        if group_by_record:
            if dataset.record_ids is None:
                raise ValueError("record-level grouping needs record ids")
            rids = np.array(dataset.record_ids, dtype=object)[idx]
            uniq = sorted(set(rids))
            chosen = rng.permutation(len(uniq))[: int(round(train_fraction * len(uniq)))]
            keep = {uniq[i] for i in chosen}
            train.extend(i for i, r in zip(idx, rids) if r in keep)
        else:
            k = int(round(train_fraction * idx.size))
            train.extend(rng.permutation(idx)[:k])
    train_idx = np.sort(np.asarray(train, dtype=np.int64))
    if group_by_record:
        # a record with frames in several classes must not leak into test
        train_recs = {dataset.record_ids[i] for i in train_idx}
        taken = set(train_idx.tolist())
        test_idx = np.array([i for i in range(len(dataset))
                             if i not in taken and dataset.record_ids[i] not in train_recs],
                            dtype=np.int64)
    else:
        test_idx = np.setdiff1d(np.arange(len(dataset)), train_idx)
    return SplitSpec(scenario_id, leads, classes, train_fraction, seed, train_idx, test_idx, group_by_record)


@dataclass
class ComparisonConfig:
    imputer: ImputerConfig = field(default_factory=ImputerConfig)
    stage2: object = field(default_factory=stage2_config)
    baseline: object = field(default_factory=baseline_config)
    imputer_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100))
    classifier_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50, clip_norm=None))
    input_mode: str = "imputed_signal"
    # frames the unsupervised stage may see: "train" or "all" (labels unused)
    imputer_data: str = "train"


def desk_config(width=16, kernel_size=9, hidden=32, imputer_epochs=40, classifier_epochs=30):
    """Narrow models and short schedules for the synthetic benchmark.

    Layer counts match the full configuration; only widths, kernel length
    and epochs shrink.
    """
    w = width
    return ComparisonConfig(
        imputer=ImputerConfig(hidden=hidden),
        stage2=stage2_config(stem_width=w, blocks=((w, 1),) * 3, kernel_size=kernel_size),
        baseline=baseline_config(stem_width=w, blocks=((w, 1), (2 * w, 2), (2 * w, 1), (4 * w, 2), (4 * w, 1)),
                                 kernel_size=kernel_size),
        imputer_train=TrainConfig(epochs=imputer_epochs, learning_rate=3e-3, validation_fraction=0.0,
                                  patience=None),
        classifier_train=TrainConfig(epochs=classifier_epochs, validation_fraction=0.0, patience=None,
                                     clip_norm=None),
    )


@dataclass
class ComparisonRow:
    class_name: str
    n: int
    baseline_f1: float
    resnetpp_f1: float
    baseline_rate: float
    resnetpp_rate: float
    in_training: bool

    @property
    def delta(self):
        return self.resnetpp_f1 - self.baseline_f1


@dataclass
class ComparisonReport:
    scenario_id: int
    seed: int
    rows: list
    baseline: object
    resnetpp: object
    models: dict = field(default_factory=dict, repr=False)

    def row(self, class_name):
        for r in self.rows:
            if r.class_name == class_name:
                return r
        raise KeyError(class_name)

    def lines(self):
        out = ["\t".join(("class", "n", "in_training", "baseline_f1", "resnetpp_f1", "delta",
                          "baseline_rate", "resnetpp_rate"))]
        for r in self.rows:
            out.append("\t".join((r.class_name, str(r.n), str(int(r.in_training)), f"{r.baseline_f1:.6f}",
                                  f"{r.resnetpp_f1:.6f}", f"{r.delta:+.6f}", f"{r.baseline_rate:.6f}",
                                  f"{r.resnetpp_rate:.6f}")))
        out.append("\t".join(("overall", str(sum(r.n for r in self.rows)), "",
                              f"{self.baseline.overall.f1:.6f}", f"{self.resnetpp.overall.f1:.6f}",
                              f"{self.resnetpp.overall.f1 - self.baseline.overall.f1:+.6f}", "", "")))
        return out


def predict_labels(probs):
    return (np.asarray(probs)[:, 1] >= 0.5).astype(np.int64)


def batched_probs(fn, x, batch_size=64):
    out = []
    with ad.no_grad():
        for i in range(0, len(x), batch_size):
            out.append(fn(x[i : i + batch_size]))
    return np.concatenate(out, axis=0) if out else np.zeros((0, 2))


def run_comparison(dataset, split, configs=None, seed=0, log_sink=None):
    """Train both models on the same train split and score every test class."""
    cfg = configs or ComparisonConfig()
    icfg = dataclasses.replace(cfg.imputer, leads=split.leads.leads)
    imp_train = dataclasses.replace(cfg.imputer_train, seed=seed)
    cls_train = dataclasses.replace(cfg.classifier_train, seed=seed)
    train = dataset.subset(split.train_idx)
    test = dataset.subset(split.test_idx)
    imp_data = dataset if cfg.imputer_data == "all" else train

    imputer = train_imputer(imp_data, None, icfg, imp_train, log_sink=log_sink).model
    stage2 = train_classifier(train, imputer, cfg.stage2, cls_train, input_mode=cfg.input_mode,
                              log_sink=log_sink).model
    base = train_classifier(train, None, cfg.baseline, cls_train, leads=split.leads.leads,
                            log_sink=log_sink).model
    pp = ResNetPlusPlus(imputer, stage2, cfg.input_mode).eval()

    x_test = select_channels(test, split.leads).data
    feats = stage2_inputs(imputer, x_test, cfg.input_mode)
    pp_pred = predict_labels(batched_probs(stage2.classify, feats))
    base_pred = predict_labels(batched_probs(base.classify, x_test))
    rep_pp = generalization_report(pp_pred, test.labels, test.record_ids)
    rep_base = generalization_report(base_pred, test.labels, test.record_ids)
    rows = []
    for rb, rp in zip(rep_base.rows, rep_pp.rows):
        rows.append(ComparisonRow(rb.class_name, rb.n, rb.f1, rp.f1, rb.rate, rp.rate,
                                  rb.class_name in split.train_classes))
    return ComparisonReport(split.scenario_id, seed, rows, rep_base, rep_pp,
                            {"imputer": imputer, "stage2": stage2, "baseline": base, "resnetpp": pp})
