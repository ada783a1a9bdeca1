"""Classifier, loss, assembly, trainer, ablations, and serialization."""

import numpy as np
import pytest

from ffcdnn.capsule import ClassCapsules
from ffcdnn.config import PipelineConfig
from ffcdnn.dataio import load_model, save_model
from ffcdnn.errors import InputDataError
from ffcdnn.fourier import idft_batch
from ffcdnn.model import (
    BaseMLP,
    CNNBaseline,
    FFCDNN,
    FFCSoftmax,
    StressClass,
    ablation_variant,
    build_model,
    classify,
    cross_validate,
    margin_loss,
    margin_loss_batch,
    stratified_folds,
    train,
)
from ffcdnn.synth import ClassSignature, generate, stack_patches

TINY = dict(k=1, K1=8, band_low=1, band_high=3, K2=3, d_p=2, d_c=4, K3=3,
            batch_size=8, epochs=4, seed=21)

TINY_SIGNATURES = {
    StressClass.YELLOW_RUST: ClassSignature(StressClass.YELLOW_RUST, (1, 1), (1, 1)),
    StressClass.NITROGEN_DEFICIENCY: ClassSignature(
        StressClass.NITROGEN_DEFICIENCY, (2, 3), (2, 3)),
}


def capsules_with_norms(norms, dim=4, rng=None):
    rng = rng or np.random.default_rng(0)
    vectors = []
    for n in norms:
        v = rng.standard_normal(dim)
        v = v / np.linalg.norm(v) * n if n > 0 else np.zeros(dim)
        vectors.append(v)
    return ClassCapsules(np.array(vectors))


class TestClassify:
    def test_argmax_on_lengths(self):
        pred = classify(capsules_with_norms([0.9, 0.1, 0.1]))
        assert pred.label is StressClass.HEALTHY
        assert not pred.tie
        assert all(0.0 <= v < 1.0 for v in pred.lengths)

    def test_all_equal_ties_to_lowest_with_flag(self):
        pred = classify(capsules_with_norms([0.0, 0.0, 0.0]))
        assert pred.label is StressClass.HEALTHY
        assert pred.tie and pred.margin == 0.0

    def test_scaling_preserves_label(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            vectors = rng.standard_normal((3, 5))
            base = classify(ClassCapsules(
                vectors / (1 + np.linalg.norm(vectors, axis=1, keepdims=True))))
            for s in (0.1, 0.5, 2.0, 9.0):
                scaled = vectors * s
                scaled = scaled / (1 + np.linalg.norm(scaled, axis=1, keepdims=True))
                assert classify(ClassCapsules(scaled)).label is base.label

    def test_margin_is_top_gap(self):
        pred = classify(capsules_with_norms([0.8, 0.6, 0.1]))
        acts = np.array(pred.lengths)
        top2 = np.sort(acts)[::-1][:2]
        assert pred.margin == pytest.approx(top2[0] - top2[1], abs=1e-15)


class TestMarginLoss:
    def test_inside_margins_is_zero(self):
        caps = capsules_with_norms([0.95, 0.05, 0.05])
        assert margin_loss(caps, StressClass.HEALTHY) == 0.0

    def test_all_zero_lengths(self):
        caps = capsules_with_norms([0.0, 0.0, 0.0])
        assert margin_loss(caps, 0) == pytest.approx(0.81, abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(2)
        m_plus, m_minus, lam = 0.9, 0.1, 0.5
        for _ in range(50):
            norms = rng.uniform(0.0, 0.99, 3)
            label = int(rng.integers(0, 3))
            got = margin_loss(capsules_with_norms(norms, rng=rng), label,
                              m_plus, m_minus, lam)
            want = 0.0
            for h in range(3):
                if h == label:
                    want += max(0.0, m_plus - norms[h]) ** 2
                else:
                    want += lam * max(0.0, norms[h] - m_minus) ** 2
            assert got == pytest.approx(want, rel=1e-9, abs=1e-12)

    def test_zero_iff_margin_conditions(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            norms = rng.uniform(0.0, 0.99, 3)
            label = int(rng.integers(0, 3))
            loss = margin_loss(capsules_with_norms(norms, rng=rng), label)
            satisfied = norms[label] >= 0.9 and all(
                norms[h] <= 0.1 for h in range(3) if h != label)
            assert (loss == 0.0) == satisfied

    def test_bad_label_rejected(self):
        with pytest.raises(InputDataError):
            margin_loss_batch(np.zeros((1, 3, 4)), np.array([5]))


class TestForward:
    def test_zero_patch_gives_tie(self):
        cfg = PipelineConfig(**TINY).validate()
        model = FFCDNN(cfg)
        from ffcdnn.vi import AgentPatch
        capsules, pred = model.classify_patch(AgentPatch(np.zeros((1, 1, 8, 2))))
        assert np.all(capsules.vectors == 0.0)
        assert pred.tie and pred.label is StressClass.HEALTHY

    def test_bitwise_deterministic_given_seed(self):
        cfg = PipelineConfig(**TINY).validate()
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 1, 1, 8, 2))
        a = FFCDNN(cfg).forward(FFCDNN(cfg).prepare(x), training=False)
        b = FFCDNN(cfg).forward(FFCDNN(cfg).prepare(x), training=False)
        assert np.array_equal(a, b)

    def test_out_of_band_perturbation_leaves_prediction(self):
        cfg = PipelineConfig(seed=33).validate()  # defaults: K1=52, band 2..15
        model = FFCDNN(cfg)
        rng = np.random.default_rng(6)
        x = rng.standard_normal((5, 3, 3, 52, 2))
        base_pred = model.predict(model.prepare(x))

        # synthesize an out-of-band perturbation through the inverse transform
        t = np.arange(52)
        perturb = np.zeros(52)
        for outside_bin, amp in ((0, 2.0), (1, 1.5), (16, 1.0), (20, 0.7), (26, 0.4)):
            spec = np.zeros(52, dtype=complex)
            spec[outside_bin] = amp
            if 0 < outside_bin < 52:
                spec[52 - outside_bin] = np.conj(spec[outside_bin])
            perturb = perturb + idft_batch(spec).real
        moved = x + perturb[None, None, None, :, None]
        assert np.array_equal(model.predict(model.prepare(moved)), base_pred)


def tiny_dataset(n=60, noise=0.0, seed=30, severity=100.0):
    cfg = PipelineConfig(**TINY).validate()
    cfg = cfg.replace(noise_sigma=noise, drift_gain=0.0, pixel_jitter=0.0,
                      severity_min=severity, severity_max=severity,
                      lai_stress_gain=0.8, lcc_stress_gain=0.8,
                      pheno_width_low=6.0, pheno_width_high=8.0)
    samples = generate(cfg, n=n, seed=seed, signatures=TINY_SIGNATURES)
    x, y, sev = stack_patches(samples)
    return cfg, x, y


class TestTrainer:
    def test_separable_set_reaches_full_training_accuracy(self):
        cfg, x, y = tiny_dataset(n=60)
        cfg = cfg.replace(epochs=30)
        model = FFCDNN(cfg)
        train(model, x, y, cfg)
        assert float(np.mean(model.predict(model.prepare(x)) == y)) == 1.0

    def test_same_seed_identical_loss_curves(self):
        cfg, x, y = tiny_dataset(n=30, noise=0.05)
        h1 = train(FFCDNN(cfg), x, y, cfg)
        h2 = train(FFCDNN(cfg), x, y, cfg)
        assert h1.losses == h2.losses

    def test_one_epoch_reduces_loss(self):
        cfg, x, y = tiny_dataset(n=40, noise=0.05)
        model = FFCDNN(cfg)
        prepared = model.prepare(x)
        before, _, _ = margin_loss_batch(model.forward(prepared, training=True), y)
        train(model, x, y, cfg, epochs=1)
        after, _, _ = margin_loss_batch(model.forward(prepared, training=True), y)
        assert after < before

    def test_wall_clock_monotone(self):
        cfg, x, y = tiny_dataset(n=30)
        history = train(FFCDNN(cfg), x, y, cfg, epochs=3)
        assert history.wall_clock == sorted(history.wall_clock)
        assert history.epochs == 3

    def test_missing_class_rejected(self):
        cfg, x, y = tiny_dataset(n=30)
        mask = y != 2
        with pytest.raises(InputDataError, match="class"):
            train(FFCDNN(cfg), x[mask], y[mask], cfg)

    def test_validation_accuracy_tracked(self):
        cfg, x, y = tiny_dataset(n=40)
        history = train(FFCDNN(cfg), x[:30], y[:30], cfg, val_x=x[30:],
                        val_labels=y[30:], epochs=2)
        assert len(history.val_oa) == 2
        assert all(v is not None for v in history.val_oa)


class TestAblationsAndBaseline:
    def test_base_zero_input_uniform(self):
        cfg = PipelineConfig(**TINY).validate()
        model = BaseMLP(cfg)
        probs = model.probabilities((np.zeros((4, 16)),))
        assert np.allclose(probs, 1.0 / 3.0, atol=1e-12)

    def test_variant_kinds(self):
        cfg = PipelineConfig(**TINY).validate()
        assert isinstance(ablation_variant("base", cfg), BaseMLP)
        assert isinstance(ablation_variant("ffc", cfg), FFCSoftmax)
        assert isinstance(ablation_variant("ffc_only", cfg), FFCSoftmax)
        assert isinstance(ablation_variant("full", cfg), FFCDNN)
        with pytest.raises(InputDataError):
            ablation_variant("cnn", cfg)
        with pytest.raises(InputDataError):
            build_model("mystery", cfg)

    def test_full_variant_is_the_forward_model(self):
        cfg = PipelineConfig(**TINY).validate()
        variant = ablation_variant("full", cfg)
        direct = FFCDNN(cfg)
        rng = np.random.default_rng(8)
        x = rng.standard_normal((3, 1, 1, 8, 2))
        assert np.array_equal(
            variant.forward(variant.prepare(x), training=False),
            direct.forward(direct.prepare(x), training=False),
        )

    def test_cnn_zero_weights_uniform(self):
        cfg = PipelineConfig(**TINY).validate()
        model = CNNBaseline(cfg)
        for p in model.params():
            p.value = np.zeros_like(p.value)
        rng = np.random.default_rng(9)
        logits = model.forward(model.prepare(rng.standard_normal((5, 1, 1, 8, 2))))
        assert np.allclose(logits, 0.0, atol=1e-15)

    def test_cnn_deterministic_and_trainable(self):
        cfg, x, y = tiny_dataset(n=24)
        h1 = train(CNNBaseline(cfg), x, y, cfg, epochs=2)
        h2 = train(CNNBaseline(cfg), x, y, cfg, epochs=2)
        assert h1.losses == h2.losses
        assert h1.losses[1] < h1.losses[0] * 1.5

    def test_ablation_accuracy_ordering_smoke(self):
        # Scaled-down echo of the benchmark ordering: the full model should
        # beat the raw-series affine floor on a separable set.
        cfg, x, y = tiny_dataset(n=90, noise=0.25, seed=31)
        cfg = cfg.replace(epochs=12)
        scores = {}
        for kind in ("base", "full"):
            model = build_model(kind, cfg)
            train(model, x[:60], y[:60], cfg)
            scores[kind] = float(np.mean(model.predict(model.prepare(x[60:])) == y[60:]))
        assert scores["full"] >= scores["base"]


class TestCrossValidation:
    def test_stratified_folds_cover_everything(self):
        labels = np.array([0] * 10 + [1] * 10 + [2] * 10)
        folds = stratified_folds(labels, 5, seed=3)
        assert sorted(np.concatenate(folds).tolist()) == list(range(30))
        for fold in folds:
            assert len(fold) == 6
            assert set(labels[fold]) == {0, 1, 2}

    def test_small_class_rejected(self):
        labels = np.array([0] * 10 + [1] * 3 + [2] * 10)
        with pytest.raises(InputDataError):
            stratified_folds(labels, 5, seed=3)

    def test_five_fold_protocol_runs(self):
        cfg, x, y = tiny_dataset(n=30)
        results = cross_validate("base", x, y, cfg.replace(epochs=2), n_folds=5)
        assert len(results) == 5
        covered = np.concatenate([r["val_indices"] for r in results])
        assert sorted(covered.tolist()) == list(range(30))


class TestSerialization:
    def test_round_trip_preserves_predictions(self, tmp_path):
        cfg, x, y = tiny_dataset(n=30)
        model = FFCDNN(cfg)
        train(model, x, y, cfg, epochs=2)
        path = tmp_path / "model.ffcm"
        save_model(path, model, cfg)
        loaded, loaded_cfg = load_model(path)
        assert loaded_cfg.seed == cfg.seed
        assert np.array_equal(loaded.predict(loaded.prepare(x)),
                              model.predict(model.prepare(x)))

    def test_version_mismatch_refused(self, tmp_path):
        cfg, x, y = tiny_dataset(n=30)
        model = FFCDNN(cfg)
        path = tmp_path / "model.ffcm"
        save_model(path, model, cfg)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(InputDataError, match="version"):
            load_model(path)

    def test_bad_magic_refused(self, tmp_path):
        path = tmp_path / "bogus.ffcm"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(InputDataError, match="magic"):
            load_model(path)

    def test_cnn_round_trip(self, tmp_path):
        cfg, x, y = tiny_dataset(n=24)
        model = CNNBaseline(cfg)
        train(model, x, y, cfg, epochs=1)
        save_model(tmp_path / "cnn.ffcm", model, cfg)
        loaded, _ = load_model(tmp_path / "cnn.ffcm")
        assert isinstance(loaded, CNNBaseline)
        assert np.array_equal(loaded.predict(loaded.prepare(x)),
                              model.predict(model.prepare(x)))
