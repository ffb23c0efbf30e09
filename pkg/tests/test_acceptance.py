"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line; the lines are also
collected in ``RESULTS`` and repeated in the pytest terminal summary.
The synthetic experiments (3 to 5) take a few minutes on one core.
"""
import contextlib
import time

import numpy as np
import pytest

import gradcheck
import metric_oracle as oracle
from grad_cases import CASES
from limbchan import autodiff as ad
from limbchan import cli
from limbchan.errors import MalformedHeader, TruncatedPayload, UnsupportedFormat, ZeroGain
from limbchan.experiments import build_scenario, desk_config, run_comparison
from limbchan.layers import GruParams, gru_cell_step
from limbchan.metrics import f1_score, generalization_report
from limbchan.models import (
    ClassifierModel,
    ImputerConfig,
    ImputerModel,
    ResNetPlusPlus,
    baseline_config,
    stage2_config,
)
from limbchan.preprocess import downsample, select_channels
from limbchan.synthetic import HELD_OUT_CLASS, TRAINED_CLASS, SyntheticSpec, make_synthetic_dataset
from limbchan.train import TrainConfig, seeded_rng, train_imputer
from limbchan.wfdb import HEALTHY, decode_adc, format_header, parse_header, read_signals

RESULTS = []


@contextlib.contextmanager
def criterion(number, title):
    """Record a pass/fail line for the enclosed assertions."""
    start = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        line = f"criterion {number:2d} FAIL  {title}: {type(exc).__name__}: {exc}".splitlines()[0]
        RESULTS.append(line)
        print(line)
        raise
    extra = "  ".join(f"{k}={v}" for k, v in detail.items())
    line = f"criterion {number:2d} PASS  {title} ({time.perf_counter() - start:.1f}s) {extra}".rstrip()
    RESULTS.append(line)
    print(line)


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_01_gradients():
    with criterion(1, "finite-difference gradients") as d:
        start = time.perf_counter()
        worst = 0.0
        for name, case in CASES.items():
            for seed in range(20):
                err = gradcheck.check(*case(np.random.default_rng(1000 + seed)))
                assert err < 1e-4, f"{name} seed {seed}: {err:.2e}"
                worst = max(worst, err)
        elapsed = time.perf_counter() - start
        assert elapsed < 120, f"took {elapsed:.0f}s"
        d["cases"] = len(CASES)
        d["worst"] = f"{worst:.1e}"


def test_02_gru_cell_fidelity():
    with criterion(2, "GRU cell against its gate equations"):
        rng = np.random.default_rng(11)
        p = GruParams(4, 6, rng, freeze_bias=True)
        x, s = rng.normal(size=(5, 4)), rng.normal(size=(5, 6))
        v = {k: getattr(p, k).value for k in ("U_z", "U_r", "U_h", "W_z", "W_r", "W_h")}
        z = sig(x @ v["U_z"] + s @ v["W_z"])
        r = sig(x @ v["U_r"] + s @ v["W_r"])
        h = np.tanh(x @ v["U_h"] + (s * r) @ v["W_h"])
        ref = (1 - z) * h + z * s
        np.testing.assert_allclose(gru_cell_step(x, s, p).value, ref, rtol=0, atol=1e-12)

        # saturate the gates: r == 1 and z == 0 exactly in float64
        q = GruParams(4, 6, rng)
        for name in ("U_z", "W_z", "U_r", "W_r"):
            getattr(q, name).value[:] = 0.0
        q.b_r.value[:] = 100.0
        q.b_z.value[:] = -100.0
        q.b_h.value[:] = 0.0
        rnn = np.tanh(x @ q.U_h.value + s @ q.W_h.value)
        assert np.array_equal(gru_cell_step(x, s, q).value, rnn)


def test_03_imputation_oracle():
    with criterion(3, "imputer on noise-free linear mixing") as d:
        ds = make_synthetic_dataset(SyntheticSpec(n_frames=256, T=192, class_fractions={}, seed=0))
        cfg = TrainConfig(epochs=60, batch_size=32, learning_rate=3e-3, validation_fraction=0.0,
                          patience=None, seed=0)
        assert cfg.epochs <= 200
        model = train_imputer(ds, None, ImputerConfig(hidden=32), cfg).model
        x = select_channels(ds, model.channel_config).data
        with ad.no_grad():
            pred = np.concatenate([model.impute(x[i : i + 64]).value for i in range(0, len(x), 64)])
        ratio = np.mean((pred - ds.data) ** 2) / ds.data.var()
        d["mse/var"] = f"{ratio:.4f}"
        assert ratio <= 0.01


def test_04_trained_class_f1():
    with criterion(4, "ResNet++ on the trained class") as d:
        ds = make_synthetic_dataset(SyntheticSpec(n_frames=256, class_fractions={TRAINED_CLASS: 0.5}, seed=0))
        split = build_scenario(1, ds, seed=0)
        rep = run_comparison(ds, split, desk_config(), seed=0)
        f1 = rep.row(TRAINED_CLASS).resnetpp_f1
        d["f1"] = f"{f1:.3f}"
        assert f1 >= 0.99


def test_05_cross_distribution_advantage():
    with criterion(5, "held-out class advantage over the baseline") as d:
        spec = SyntheticSpec(n_frames=512, class_fractions={TRAINED_CLASS: 0.3, HELD_OUT_CLASS: 0.2}, seed=0)
        ds = make_synthetic_dataset(spec)
        split = build_scenario(1, ds, seed=0)
        row = run_comparison(ds, split, desk_config(), seed=0).row(HELD_OUT_CLASS)
        assert not row.in_training
        d["resnet++"] = f"{row.resnetpp_f1:.3f}"
        d["resnet"] = f"{row.baseline_f1:.3f}"
        assert row.resnetpp_f1 >= row.baseline_f1 + 0.05


def test_06_metric_oracle():
    with criterion(6, "metrics against a counting oracle") as d:
        rng = np.random.default_rng(2024)
        cases = [(np.zeros(7, int), [HEALTHY] * 7), (np.zeros(5, int), ["Cardiomyopathy"] * 5),
                 (np.ones(4, int), [HEALTHY] * 4)]
        cases += [oracle.random_case(rng) for _ in range(1000 - len(cases))]
        for pred, names in cases:
            truth = [n != HEALTHY for n in names]
            m = f1_score(pred, truth)
            assert (m.tp, m.fp, m.fn, m.tn) == oracle.counts(pred, truth)
            assert m.f1 == oracle.f1(pred, truth)
            expect = oracle.class_rows(list(pred), names)
            rows = generalization_report(pred, names).rows
            assert {r.class_name: (r.n, r.rate, r.f1) for r in rows} == expect
        d["sets"] = len(cases)


HEADER = """s0010_re 3 1000 4
s0010_re.dat 16 2000(0)/mV 16 0 -489 -8337 0 i
s0010_re.dat 16 2000(12)/mV 16 0 -458 -16369 0 ii
s0010_re.dat 16 2000/mV 16 5 31 -16361 0 iii
# Reason for admission: Myocardial infarction
"""


def test_07_parser_fidelity():
    with criterion(7, "WFDB parsing and scenario leads"):
        h = parse_header(HEADER)
        assert parse_header(format_header(h)) == h
        values = np.array([[-32768, 0, 32767], [1, -1, 2], [-489, -458, 31], [100, 200, 300]], dtype="<i2")
        np.testing.assert_array_equal(decode_adc(h, values.tobytes()), values)
        expected = (values.astype(np.float64) - np.array([0, 12, 5])) / 2000.0
        assert np.array_equal(read_signals(h, values.tobytes()).signal, expected)
        for text, err in [("rec 1 1000\n", MalformedHeader),
                          ("rec 1 1000 10\nr.dat 212 200 16 0 0 0 0 i\n", UnsupportedFormat)]:
            with pytest.raises(err):
                parse_header(text)
        with pytest.raises(TruncatedPayload):
            read_signals(h, b"\x00" * 23)
        with pytest.raises(ZeroGain):
            read_signals(parse_header("r 1 1000 2\nr.dat 16 0(0)/mV 16 0 0 0 0 i\n"), b"\x00" * 4)
        ds = make_synthetic_dataset(SyntheticSpec(n_frames=4, class_fractions={}))
        assert set(build_scenario(1, ds).leads.leads) == {"II", "III", "aVF"}
        assert set(build_scenario(2, ds).leads.leads) == {"V1", "V2", "V3"}


def test_08_resampler():
    with criterion(8, "1000 Hz to 64 Hz resampling") as d:
        t = np.arange(10000) / 1000.0
        y = downsample(np.sin(2 * np.pi * 5.0 * t), 1000, 64)[64:-64]
        amp = np.sqrt(2 * np.mean(y**2))
        y = downsample(np.sin(2 * np.pi * 450.0 * t), 1000, 64)[64:-64]
        atten = -20 * np.log10(np.sqrt(2 * np.mean(y**2)) + 1e-300)
        d["5Hz amplitude"] = f"{amp:.4f}"
        d["450Hz dB"] = f"{atten:.0f}"
        assert abs(amp - 1.0) <= 0.02
        assert atten >= 40


def test_09_determinism(tmp_path):
    with criterion(9, "reproducible training and batch-invariant evaluation"):
        cfg = tmp_path / "small.ini"
        cfg.write_text("[imputer]\nhidden = 8\nencoder_layers = 1\ndecoder_layers = 1\n"
                       "[imputer_train]\nepochs = 2\n[synthetic]\nn_frames = 40\nT = 32\n")
        arc = tmp_path / "s.lcb"
        assert cli.main(["synth", "--config", str(cfg), "--out", str(arc)]) == 0
        blobs = []
        for run in ("a", "b"):
            argv = ["train", "--stage", "imputer", "--config", str(cfg), "--archive", str(arc),
                    "--seed", "5", "--out", str(tmp_path / run)]
            assert cli.main(argv) == 0
            blobs.append((tmp_path / run / "imputer.lcw").read_bytes())
        assert blobs[0] == blobs[1]

        imp = ImputerModel(ImputerConfig(hidden=8, encoder_layers=1, decoder_layers=1), seeded_rng(0, "a"))
        clf = ClassifierModel(stage2_config(stem_width=4, blocks=((4, 1),), kernel_size=5), seeded_rng(0, "b"))
        pp = ResNetPlusPlus(imp, clf).eval()
        x = np.random.default_rng(3).normal(size=(6, 32, 3))
        batch = pp.predict(x)
        single = np.stack([pp.predict(x[i]) for i in range(len(x))])
        np.testing.assert_allclose(single, batch, rtol=0, atol=1e-6)


def test_10_architecture_counts():
    with criterion(10, "layer counts of the built models"):
        rng = np.random.default_rng(0)
        assert ImputerModel(ImputerConfig(), rng).n_gru_layers == 5
        assert len(ClassifierModel(stage2_config(), rng).conv_layers()) == 7
        assert len(ClassifierModel(baseline_config(), rng).conv_layers()) == 13
