"""Ten end-to-end gates, one test each: shapes, filters, feature and
silhouette oracles, gradients, then the full synthetic-corpus protocol
(learnability, offset asymmetry, electrode attribution, subject
clustering, determinism)."""

import time

import numpy as np
import pytest
import torch

from eegmatch.analysis import _hjorth_block, silhouette
from eegmatch.modelzoo import build_model, forward_one_way, forward_two_way
from eegmatch.preprocess import bandpass_filter, notch_filter

from .oracles import (
    brute_activity,
    brute_complexity,
    brute_differential_entropy,
    brute_mobility,
    brute_petrosian,
    brute_silhouette,
    fft_amplitude,
)
from .protocol import determinism_view, run_full_protocol

pytestmark = pytest.mark.acceptance

FS = 1000.0


def test_01_shape_contract():
    t0 = time.perf_counter()
    torch.manual_seed(0)
    eeg = torch.randn(1, 64, 3000)
    video = torch.randn(1, 768, 75)
    for spec in ("ECVG", "ECVL", "ECVT", "ECD3VG", "ECVG-768", "O-baseline"):
        model = build_model(spec)
        model.eval()
        with torch.no_grad():
            t_eeg = model.eeg_branch(eeg).shape[-1]
            t_vid = model.video_branch(video).shape[-1]
        assert t_eeg == t_vid == 75, f"{spec}: T_out {t_eeg}/{t_vid}"
        if model.spec.mode == "one_way":
            p = forward_one_way(model, eeg[0], video[0])
        else:
            p = forward_two_way(model, eeg[0], video[0], torch.randn(768, 75))
        assert 0.0 < p < 1.0, f"{spec}: head output {p}"
    assert time.perf_counter() - t0 < 60.0


def test_02_filter_suite():
    t0 = time.perf_counter()

    def atten_db(filtered, raw, freq):
        return 20.0 * np.log10(fft_amplitude(raw, FS, freq) / fft_amplitude(filtered, FS, freq))

    t = np.arange(int(40 * FS)) / FS
    for freq, apply, kind, bound in [
        (50.0, lambda x: notch_filter(x, FS), "notch stop", 20.0),
        (10.0, lambda x: notch_filter(x, FS), "notch pass", -1.0),
        (0.2, lambda x: bandpass_filter(x, FS), "band-pass low stop", 20.0),
        (350.0, lambda x: bandpass_filter(x, FS), "band-pass high stop", 20.0),
    ]:
        probe = np.sin(2 * np.pi * freq * t)
        db = atten_db(apply(probe[None, :])[0], probe, freq)
        if bound > 0:
            assert db >= bound, f"{kind} @ {freq} Hz: {db:.2f} dB < {bound}"
        else:
            assert db <= -bound, f"{kind} @ {freq} Hz: {db:.2f} dB > {-bound}"
    assert time.perf_counter() - t0 < 60.0


def test_03_feature_oracles():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(200, 2000))
        x = rng.standard_normal(n) * float(rng.uniform(0.1, 10)) + float(rng.uniform(-5, 5))
        act, mob, comp, de, pfd = (float(v[0]) for v in _hjorth_block(x[None, :]))
        for got, want in [
            (act, brute_activity(x)),
            (mob, brute_mobility(x)),
            (comp, brute_complexity(x)),
            (de, brute_differential_entropy(x)),
            (pfd, brute_petrosian(x)),
        ]:
            assert abs(got - want) <= 1e-9 * max(1.0, abs(want))

    gauss = np.random.default_rng(30).standard_normal(3000)
    de = float(_hjorth_block(gauss[None, :])[3][0])
    assert abs(de - 1.4189) <= 0.05


def test_04_silhouette_oracle():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(10, 200))
        d = int(rng.integers(1, 12))
        k = int(rng.integers(2, 5))
        X = rng.standard_normal((n, d)) + rng.integers(0, 3, (n, 1))
        labels = rng.integers(0, k, n)
        labels[:k] = np.arange(k)  # every label present
        got, _ = silhouette(X, labels.tolist())
        assert abs(got - brute_silhouette(X, labels.tolist())[0]) <= 1e-9

    X = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    s, _ = silhouette(X, [0, 0, 1, 1])
    b = (10.0 + np.sqrt(101.0)) / 2.0
    assert abs(s - (b - 1.0) / b) <= 1e-12
    assert abs(s - 0.9001) <= 5e-4


def test_05_gradient_check():
    torch.manual_seed(5)
    model = build_model("ECVG", eeg_samples=120, video_frames=3).double()
    model.eval()
    eeg = torch.randn(1, 64, 120, dtype=torch.float64, requires_grad=True)
    va = torch.randn(1, 768, 3, dtype=torch.float64)
    vb = torch.randn(1, 768, 3, dtype=torch.float64)
    logit = model(eeg, va, vb).sum()
    (grad,) = torch.autograd.grad(logit, eeg)

    rng = np.random.default_rng(0)
    eps = 1e-6
    for _ in range(5):
        c, t = int(rng.integers(64)), int(rng.integers(120))
        vals = {}
        for sign in (1.0, -1.0):
            perturbed = eeg.detach().clone()
            perturbed[0, c, t] += sign * eps
            with torch.no_grad():
                vals[sign] = model(perturbed, va, vb).sum().item()
        fd = (vals[1.0] - vals[-1.0]) / (2 * eps)
        an = grad[0, c, t].item()
        assert abs(fd - an) < 1e-4 * max(1.0, abs(fd), abs(an))


def test_06_end_to_end_learnability(protocol_metrics):
    bal = protocol_metrics["balanced"]
    assert bal["epochs_run"] <= 50
    assert bal["train_seconds"] <= 1200.0
    assert bal["test_accuracy"] >= 0.60, f"balanced test accuracy {bal['test_accuracy']:.4f}"


def test_07_offset_asymmetry(protocol_metrics):
    sweep = protocol_metrics["sweep"]
    at_minus3 = sweep["balanced"][-3.0]
    assert 0.45 <= at_minus3 <= 0.55, f"balanced @ -3 s: {at_minus3:.4f}"
    at_minus7 = sweep["imbalanced"][-7.0]
    assert at_minus7 < 0.50, f"imbalanced @ -7 s: {at_minus7:.4f}"
    at_plus1 = sweep["imbalanced"][1.0]
    assert at_plus1 >= 0.60, f"imbalanced @ +1 s: {at_plus1:.4f}"


def test_08_channel_attribution(protocol_metrics):
    cam = protocol_metrics["gradcam"]
    assert cam["top8"] == cam["planted"], (
        f"top-8 attribution {cam['top8']} != planted {cam['planted']}"
    )


def test_09_subject_clustering(protocol_metrics):
    sil = protocol_metrics["silhouette"]
    assert sil["traditional"] > 0.2, f"traditional silhouette {sil['traditional']:.4f}"
    assert sil["deep"] < 0.05, f"deep silhouette {sil['deep']:.4f}"


def test_10_determinism(protocol_metrics, tmp_path_factory):
    again = run_full_protocol(tmp_path_factory.mktemp("protocol_run2"))
    assert determinism_view(again) == determinism_view(protocol_metrics)
