"""Command-line entry point: ``limbchan <command> [options]``.

Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.
"""
import argparse
import configparser
import dataclasses
import hashlib
import io
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .archive import read_archive, write_archive
from .errors import LimbchanError, UnknownScenario
from .experiments import (
    SCENARIO_LEADS,
    ComparisonConfig,
    batched_probs,
    build_scenario,
    predict_labels,
    run_comparison,
)
from .metrics import format_table, generalization_report, report_lines
from .models import ClassifierConfig, ImputerConfig, baseline_config, stage2_config
from .preprocess import ChannelConfig, build_dataset, select_channels
from .synthetic import HELD_OUT_CLASS, TRAINED_CLASS, SyntheticSpec, make_synthetic_dataset
from .train import (
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    stage2_inputs,
    train_classifier,
    train_imputer,
)
from .wfdb import CLASS_NAMES, find_records, load_record

log = logging.getLogger("limbchan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ config


@dataclass
class RunConfig:
    """Everything a command needs, loadable from an INI file."""

    seed: int = 0
    scenario: int = 1
    train_fraction: float = 0.8
    group_by_patient: bool = False
    leads: tuple = ()
    input_mode: str = "imputed_signal"
    imputer_data: str = "train"
    imputer: ImputerConfig = field(default_factory=ImputerConfig)
    stage2: ClassifierConfig = field(default_factory=stage2_config)
    baseline: ClassifierConfig = field(default_factory=baseline_config)
    imputer_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100))
    classifier_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50, clip_norm=None))
    synthetic: SyntheticSpec = field(default_factory=lambda: SyntheticSpec(
        class_fractions={TRAINED_CLASS: 0.3, HELD_OUT_CLASS: 0.2}))

    SECTIONS = ("imputer", "stage2", "baseline", "imputer_train", "classifier_train", "synthetic")

    def scenario_leads(self):
        return tuple(self.leads) if self.leads else SCENARIO_LEADS.get(self.scenario, ())

    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["run"] = {f.name: _fmt(getattr(self, f.name)) for f in dataclasses.fields(self)
                     if f.name not in self.SECTIONS}
        for name in self.SECTIONS:
            obj = getattr(self, name)
            cp[name] = {f.name: _fmt(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                        if f.name != "mixing"}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self):
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()

    @classmethod
    def from_ini(cls, text):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_string(text)
        unknown = set(cp.sections()) - set(cls.SECTIONS) - {"run"}
        if unknown:
            raise UsageError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        base = cls()
        kw = {}
        if cp.has_section("run"):
            kw.update(_parse_section(cls, base, cp["run"], skip=cls.SECTIONS))
        for name in cls.SECTIONS:
            obj = getattr(base, name)
            if cp.has_section(name):
                obj = dataclasses.replace(obj, **_parse_section(type(obj), obj, cp[name]))
            kw[name] = obj
        return cls(**kw)


def _fmt(val):
    if val is None:
        return "none"
    if isinstance(val, dict):
        return ";".join(f"{k}={v}" for k, v in val.items())
    if isinstance(val, tuple):
        if val and isinstance(val[0], tuple):
            return ";".join(",".join(str(x) for x in item) for item in val)
        return ",".join(str(x) for x in val)
    return str(val)


def _parse(text, default, key):
    text = text.strip()
    if text.lower() == "none":
        return None
    try:
        if isinstance(default, bool):
            if text.lower() not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, dict):
            out = {}
            for item in filter(None, text.split(";")):
                k, _, v = item.rpartition("=")
                out[k.strip()] = float(v)
            return out
        if isinstance(default, tuple):
            if default and isinstance(default[0], tuple):
                return tuple(tuple(int(x) for x in item.split(",")) for item in text.split(";") if item)
            items = tuple(t.strip() for t in text.split(",") if t.strip())
            if default and isinstance(default[0], float):
                return tuple(float(t) for t in items)
            return items
    except ValueError:
        raise UsageError(f"bad value for {key}: {text!r}") from None
    return text


def _parse_section(cls, base, section, skip=()):
    names = {f.name for f in dataclasses.fields(cls)} - set(skip) - {"mixing"}
    kw = {}
    for key, text in section.items():
        if key not in names:
            raise UsageError(f"unknown config key {section.name}.{key}")
        default = getattr(base, key)
        if default is None:
            # optional numeric fields
            default = 0.0 if key == "clip_norm" else 0
        kw[key] = _parse(text, default, f"{section.name}.{key}")
    return kw


def load_run_config(args):
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = RunConfig.from_ini(path.read_text(encoding="utf-8"))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "scenario", None) is not None:
        cfg.scenario = args.scenario
    if getattr(args, "leads", None):
        cfg.leads = tuple(t.strip() for t in args.leads.split(",") if t.strip())
    if getattr(args, "group_by_patient", False):
        cfg.group_by_patient = True
    if getattr(args, "epochs", None) is not None:
        cfg.imputer_train = dataclasses.replace(cfg.imputer_train, epochs=args.epochs)
        cfg.classifier_train = dataclasses.replace(cfg.classifier_train, epochs=args.epochs)
    for name in ("imputer_train", "classifier_train"):
        setattr(cfg, name, dataclasses.replace(getattr(cfg, name), seed=cfg.seed))
    cfg.synthetic = dataclasses.replace(cfg.synthetic, seed=cfg.seed)
    if cfg.input_mode not in ("imputed_signal", "latent_sequence"):
        raise UsageError(f"input_mode must be imputed_signal or latent_sequence, got {cfg.input_mode!r}")
    if cfg.imputer_data not in ("train", "all"):
        raise UsageError(f"imputer_data must be train or all, got {cfg.imputer_data!r}")
    if not 0.0 < cfg.train_fraction < 1.0:
        raise UsageError("train_fraction must be in (0, 1)")
    return cfg


# ------------------------------------------------------------------ run dir


def _prepare_out(out, products, force):
    out = Path(out)
    clash = [p for p in products if (out / p).exists()]
    if clash and not force:
        raise UsageError(f"{out / clash[0]} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, command, cfg, extra=None, prefix=""):
    """Echo the effective config and write a manifest with its hash and seed."""
    (out / f"{prefix}config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["run"] = {
        "command": command,
        "seed": str(cfg.seed),
        "config_sha256": cfg.digest(),
        "version": __version__,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    for k, v in (extra or {}).items():
        cp["run"][k] = str(v)
    with open(out / f"{prefix}manifest.ini", "w", encoding="utf-8") as fh:
        cp.write(fh)


def _load_archive(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"archive not found: {path}")
    return read_archive(path)


def _split(ds, cfg):
    if cfg.scenario not in SCENARIO_LEADS:
        raise UnknownScenario(f"unknown scenario {cfg.scenario!r}; expected 1 or 2")
    return build_scenario(cfg.scenario, ds, seed=cfg.seed, train_fraction=cfg.train_fraction,
                          group_by_record=cfg.group_by_patient)


def _subset(ds, split, which):
    if which == "all":
        return ds
    return ds.subset(split.train_idx if which == "train" else split.test_idx)


# ------------------------------------------------------------------ commands


def cmd_ingest(args):
    data_dir = args.data_dir or os.environ.get("LIMBCHAN_DATA_DIR")
    if not data_dir:
        raise UsageError("no data directory given and LIMBCHAN_DATA_DIR is unset")
    if not Path(data_dir).is_dir():
        raise FileNotFoundError(f"data directory not found: {data_dir}")
    paths = find_records(data_dir)
    if not paths:
        raise LimbchanError(f"no records found under {data_dir}")
    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    records, skipped = [], []
    for p in paths:
        try:
            records.append(load_record(p))
        except (LimbchanError, OSError) as exc:
            if args.strict:
                raise LimbchanError(f"{p}: {exc}") from exc
            skipped.append((p, exc))
    for p, exc in skipped:
        print(f"skipped {p}: {type(exc).__name__}: {exc}", file=sys.stderr)
    ds = build_dataset(records, baseline=args.baseline)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_archive(out, ds)
    counts = {}
    for lab in ds.labels:
        counts[lab.class_name] = counts.get(lab.class_name, 0) + 1
    for name in CLASS_NAMES:
        if name in counts:
            print(f"{name}\t{counts[name]}")
    print(f"total\t{len(ds)}")
    print(f"records\t{len(records)} loaded, {len(skipped)} skipped")
    return EXIT_OK


def cmd_synth(args):
    cfg = load_run_config(args)
    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    spec = cfg.synthetic
    if args.frames is not None:
        spec = dataclasses.replace(spec, n_frames=args.frames)
    ds = make_synthetic_dataset(spec)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_archive(out, ds)
    print(f"wrote {len(ds)} frames to {out}")
    return EXIT_OK


def cmd_train(args):
    cfg = load_run_config(args)
    if args.stage == "classifier" and not args.imputer:
        raise UsageError("--stage classifier needs --imputer CHECKPOINT")
    ds = _load_archive(args.archive)
    split = _split(ds, cfg)
    train = _subset(ds, split, args.split)
    leads = cfg.scenario_leads()
    out = _prepare_out(args.out, [f"{args.stage}.lcw", f"{args.stage}.ini"], args.force)
    with open(out / f"{args.stage}.log", "w", encoding="utf-8") as sink:
        if args.stage == "imputer":
            icfg = dataclasses.replace(cfg.imputer, leads=leads)
            pool = ds if cfg.imputer_data == "all" else train
            model = train_imputer(pool, None, icfg, cfg.imputer_train, log_sink=sink).model
        elif args.stage == "classifier":
            imputer, _ = load_checkpoint(args.imputer)
            model = train_classifier(train, imputer, cfg.stage2, cfg.classifier_train,
                                     input_mode=cfg.input_mode, log_sink=sink).model
        else:
            model = train_classifier(train, None, cfg.baseline, cfg.classifier_train, leads=leads,
                                     log_sink=sink).model
    extra = {"run": {"seed": cfg.seed, "scenario": cfg.scenario, "input_mode": cfg.input_mode}}
    save_checkpoint(out / args.stage, model, "imputer" if args.stage == "imputer" else "classifier", extra)
    _write_manifest(out, f"train --stage {args.stage}", cfg, {"archive": args.archive, "stage": args.stage},
                    prefix=f"{args.stage}.")
    print(f"wrote {out / (args.stage + '.lcw')}")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = load_run_config(args)
    ds = _load_archive(args.archive)
    model, side = load_checkpoint(args.model)
    if side["model"]["kind"] != "classifier":
        raise UsageError(f"{args.model} is not a classifier checkpoint")
    split = _split(ds, cfg)
    part = _subset(ds, split, args.split)
    if args.imputer:
        imputer, _ = load_checkpoint(args.imputer)
        mode = side["run"]["input_mode"] if side.has_section("run") else cfg.input_mode
        x = select_channels(part, imputer.channel_config).data
        feats = stage2_inputs(imputer, x, mode)
    else:
        feats = select_channels(part, ChannelConfig.resolve(cfg.scenario_leads(), part.channel_names)).data
    preds = predict_labels(batched_probs(model.classify, feats))
    rep = generalization_report(preds, part.labels, part.record_ids)
    out = _prepare_out(args.out, ["report.tsv"], args.force)
    name = "resnetpp" if args.imputer else "model"
    (out / "report.tsv").write_text("\n".join(report_lines(rep, name)) + "\n", encoding="utf-8")
    if rep.record_level is not None:
        (out / "report_records.tsv").write_text("\n".join(report_lines(rep.record_level, name)) + "\n",
                                                encoding="utf-8")
    _write_manifest(out, "evaluate", cfg, {"archive": args.archive, "model": args.model, "split": args.split})
    print(format_table(rep, f"{args.split} split, {len(part)} frames"))
    return EXIT_OK


def cmd_compare(args):
    cfg = load_run_config(args)
    if args.archive:
        ds = _load_archive(args.archive)
    else:
        ds = make_synthetic_dataset(cfg.synthetic)
    split = _split(ds, cfg)
    if cfg.leads:
        split.leads = ChannelConfig.resolve(cfg.leads, ds.channel_names)
    out = _prepare_out(args.out, ["comparison.tsv"], args.force)
    configs = ComparisonConfig(cfg.imputer, cfg.stage2, cfg.baseline, cfg.imputer_train,
                               cfg.classifier_train, cfg.input_mode, cfg.imputer_data)
    with open(out / "compare.log", "w", encoding="utf-8") as sink:
        rep = run_comparison(ds, split, configs, seed=cfg.seed, log_sink=sink)
    text = "\n".join(rep.lines()) + "\n"
    (out / "comparison.tsv").write_text(text, encoding="utf-8")
    _write_manifest(out, "compare", cfg, {"archive": args.archive or "synthetic",
                                          "train_frames": len(split.train_idx),
                                          "test_frames": len(split.test_idx)})
    print(text, end="")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="single source of randomness")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--scenario", type=int, help="1 (II, III, aVF) or 2 (V1, V2, V3)")
    scen.add_argument("--leads", help="comma separated lead names overriding the scenario")
    scen.add_argument("--group-by-patient", action="store_true", help="keep each record on one side of the split")

    p = _Parser(prog="limbchan", description="Limited-lead ECG imputation and classification.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="WFDB records to a frame archive")
    s.add_argument("data_dir", nargs="?", help="defaults to $LIMBCHAN_DATA_DIR")
    s.add_argument("--out", required=True)
    s.add_argument("--strict", action="store_true", help="fail on the first unreadable record")
    s.add_argument("--baseline", action="store_true", help="subtract a moving-median baseline")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic benchmark archive")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common, scen], help="train one stage")
    s.add_argument("--stage", required=True, choices=("imputer", "classifier", "baseline"))
    s.add_argument("--archive", required=True)
    s.add_argument("--imputer", help="imputer checkpoint (classifier stage)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--split", choices=("train", "all"), default="train")
    s.add_argument("--out", required=True, help="run directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common, scen], help="score a classifier")
    s.add_argument("--archive", required=True)
    s.add_argument("--model", required=True, help="classifier checkpoint")
    s.add_argument("--imputer", help="imputer checkpoint for ResNet++")
    s.add_argument("--split", choices=("train", "test", "all"), default="test")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("compare", parents=[common, scen], help="ResNet vs ResNet++ on one scenario")
    s.add_argument("--archive", help="frame archive; the synthetic benchmark when omitted")
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help and --version exit 0, malformed command lines exit 1
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, UnknownScenario) as exc:
        print(f"limbchan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LimbchanError, OSError, configparser.Error, KeyError, ValueError) as exc:
        print(f"limbchan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"limbchan: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
