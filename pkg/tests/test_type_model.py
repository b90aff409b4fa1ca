import numpy as np
import pytest

from glyphlearn import autodiff as ad
from glyphlearn.config import RunConfig
from glyphlearn.drawing import CharacterType
from glyphlearn.errors import ContractError
from glyphlearn.gmm import SamplerConfig, gmm_log_pdf
from glyphlearn.nets import (
    WeightTape,
    attention_keys,
    attention_read,
    encode_canvases,
    flatten_encoding,
    gmm_params_from_raw,
    init_weights,
    location_head_raw,
    lstm_step,
    stroke_head_raw,
    termination_head_logit,
)
from glyphlearn.render import blank_canvas, f_render_t
from glyphlearn.rng import substream
from glyphlearn.type_model import (
    dataset_nll,
    generate_type,
    tensors_from_type,
    tensors_with_free_coords,
    train_mle,
    type_log_prob,
    type_log_prob_batch,
)

from oracles import fd_gradient, rel_err

CFG = RunConfig()


@pytest.fixture(scope="module")
def weights():
    return init_weights(CFG.arch, CFG.canvas_size, substream(0, "test/init"))


def sample_type():
    return CharacterType(
        starts=[np.array([30.0, 40.0]), np.array([62.0, 25.0])],
        trajectories=[
            np.array([[0.0, 0.0], [12.0, 6.0], [24.0, -2.0]]),
            np.array([[0.0, 0.0], [0.0, 28.0], [8.0, 40.0]]),
        ],
    )


class TestHeads:
    def test_mixture_weights_form_simplex(self, weights):
        tape = WeightTape(weights)
        enc = flatten_encoding(encode_canvases(tape, ad.constant(blank_canvas(105)[None])))
        raw = location_head_raw(tape, enc).value[0]
        gmm = gmm_params_from_raw(raw, CFG.arch.mixture_components, CFG.arch.sigma_floor)
        assert gmm.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(gmm.scales >= CFG.arch.sigma_floor)
        assert np.all(np.abs(gmm.corrs) < 1)

    def test_identical_canvases_identical_outputs(self, weights):
        tape = WeightTape(weights)
        canvas = blank_canvas(105)
        canvas[40:42, 30:60] = 0.8
        stack = ad.constant(np.stack([canvas, canvas]))
        enc = flatten_encoding(encode_canvases(tape, stack))
        raw = location_head_raw(tape, enc).value
        assert np.array_equal(raw[0], raw[1])
        tl = termination_head_logit(tape, enc).value
        assert tl[0, 0] == tl[1, 0]

    def test_single_pixel_perturbation_changes_location_output(self, weights):
        tape = WeightTape(weights)
        canvas = blank_canvas(105)
        canvas[40:42, 30:60] = 0.8
        other = canvas.copy()
        other[70, 70] = 1.0
        enc = flatten_encoding(encode_canvases(tape, ad.constant(np.stack([canvas, other]))))
        raw = location_head_raw(tape, enc).value
        assert np.max(np.abs(raw[0] - raw[1])) > 1e-12

    def test_encoder_grid_prediction_matches_forward(self, weights):
        tape = WeightTape(weights)
        enc = encode_canvases(tape, ad.constant(blank_canvas(105)[None]))
        c, h, w = weights.encoder_grid()
        assert enc.shape == (1, c, h, w)


class TestLogProb:
    def test_reevaluation_is_exact(self, weights):
        ct = sample_type()
        a = type_log_prob(ct, weights, CFG.render)
        b = type_log_prob(ct, weights, CFG.render)
        assert a == b

    def test_discrete_factors_are_log_probabilities(self, weights):
        # stop / termination contributions alone must be <= 0: scoring a
        # drawing with huge coordinate density cannot make them positive
        ct = sample_type()
        lp = type_log_prob(ct, weights, CFG.render)
        assert np.isfinite(lp)

    def test_batch_matches_single(self, weights):
        types = [sample_type(), CharacterType([np.array([50.0, 50.0])], [np.array([[0.0, 0.0], [20.0, 10.0]])])]
        tape = WeightTape(weights)
        batch = type_log_prob_batch(tape, [tensors_from_type(t) for t in types], CFG.render).value
        singles = [type_log_prob(t, weights, CFG.render) for t in types]
        assert np.allclose(batch, singles, atol=1e-9)

    def test_one_stroke_manual_head_composition(self, weights):
        """Straight-line composition of the heads must equal the batched scorer."""
        ct = CharacterType([np.array([38.0, 47.0])], [np.array([[0.0, 0.0], [14.0, 9.0], [30.0, 12.0]])])
        got = type_log_prob(ct, weights, CFG.render)

        arch = weights.arch
        k = arch.mixture_components
        scale = weights.norm_scale
        tape = WeightTape(weights)
        total = 0.0

        c0 = blank_canvas(105)
        enc0 = encode_canvases(tape, ad.constant(c0[None]))
        flat0 = flatten_encoding(enc0)
        loc_raw = location_head_raw(tape, flat0).value[0]
        y_norm = ct.starts[0] * scale - 1.0
        total += float(gmm_log_pdf(gmm_params_from_raw(loc_raw, k, arch.sigma_floor), y_norm).value)
        total += weights.coord_jacobian

        keys, values = attention_keys(tape, enc0)
        h = ad.constant(np.zeros((1, arch.lstm_hidden)))
        c = ad.constant(np.zeros((1, arch.lstm_hidden)))
        deltas = np.diff(ct.trajectories[0], axis=0) * scale
        prev = np.zeros(2)
        for t, delta in enumerate(deltas):
            read = attention_read(tape, keys, values, h)
            x = ad.concat([ad.constant(np.concatenate([prev, y_norm])[None]), read], axis=1)
            h, c = lstm_step(tape, x, h, c)
            raw = stroke_head_raw(tape, h).value[0]
            total += float(gmm_log_pdf(gmm_params_from_raw(raw[: 6 * k], k, arch.sigma_floor), delta).value)
            total += weights.coord_jacobian
            p_stop = 1 / (1 + np.exp(-raw[6 * k]))
            total += float(np.log(p_stop) if t == len(deltas) - 1 else np.log1p(-p_stop))
            prev = delta

        ctrl = ad.constant(ct.starts[0][None] + ct.trajectories[0])
        c1 = f_render_t(ctrl, ad.constant(c0), 105, CFG.render).value
        term_logit = termination_head_logit(
            tape, flatten_encoding(encode_canvases(tape, ad.constant(c1[None])))
        ).value[0, 0]
        total += float(np.log(1 / (1 + np.exp(-term_logit))))

        assert got == pytest.approx(total, abs=1e-9)

    def test_gradient_matches_fd_through_canvas_rebuild(self, weights):
        ct = sample_type()
        starts = [ad.Tensor(s.copy()) for s in ct.starts]
        free = [ad.Tensor(t[1:].copy()) for t in ct.trajectories]
        tape = WeightTape(weights, constant=True)
        root = type_log_prob_batch(tape, [tensors_with_free_coords(starts, free)], CFG.render)[0]
        grads = ad.gradient(root, starts + free)

        def f_start0(v):
            ct2 = sample_type()
            ct2.starts[0] = v
            return type_log_prob(ct2, weights, CFG.render)

        def f_traj1(v):
            ct2 = sample_type()
            ct2.trajectories[1] = np.vstack([[0.0, 0.0], v])
            return type_log_prob(ct2, weights, CFG.render)

        fd_start = fd_gradient(f_start0, ct.starts[0].copy(), step=1e-4)
        fd_traj = fd_gradient(f_traj1, ct.trajectories[1][1:].copy(), step=1e-4)
        assert rel_err(grads[0], fd_start) < 1e-3
        assert rel_err(grads[3], fd_traj) < 1e-3


class TestGenerate:
    def test_forced_termination_gives_single_stroke(self, weights):
        forced = weights.copy()
        forced.tensors["term.out.b"] = np.array([1000.0])
        for seed in range(5):
            ct = generate_type(forced, SamplerConfig(1.0), CFG.render, substream(seed, "gen"))
            assert ct.kappa == 1

    def test_caps_guarantee_termination(self, weights):
        never = weights.copy()
        never.tensors["term.out.b"] = np.array([-1000.0])
        ct = generate_type(never, SamplerConfig(1.0), CFG.render, substream(0, "gen"))
        assert ct.kappa == CFG.arch.max_strokes

    def test_seeded_determinism(self, weights):
        a = generate_type(weights, SamplerConfig(0.7), CFG.render, substream(7, "gen"))
        b = generate_type(weights, SamplerConfig(0.7), CFG.render, substream(7, "gen"))
        assert a.kappa == b.kappa
        for x, y in zip(a.starts, b.starts):
            assert np.array_equal(x, y)
        for x, y in zip(a.trajectories, b.trajectories):
            assert np.array_equal(x, y)

    def test_samples_satisfy_invariants_and_score_finitely(self, weights):
        for seed in range(25):
            ct = generate_type(weights, SamplerConfig(0.8), CFG.render, substream(seed, "gen2"))
            ct.validate()
            assert np.isfinite(type_log_prob(ct, weights, CFG.render))


class TestTraining:
    def _toy_corpus(self, n=12):
        rng = np.random.default_rng(5)
        corpus = []
        for _ in range(n):
            jitter = rng.normal(0, 1.5, 2)
            corpus.append(
                CharacterType(
                    [np.array([30.0, 50.0]) + jitter],
                    [np.array([[0.0, 0.0], [20.0, 2.0], [42.0, 0.0]]) + np.vstack([[0, 0], rng.normal(0, 0.8, (2, 2))])],
                )
            )
        return corpus

    def test_loss_decreases_on_tiny_corpus(self):
        cfg = RunConfig()
        cfg.train.epochs = 4
        cfg.train.batch_size = 6
        cfg.train.holdout_fraction = 0.25
        cfg.seed = 3
        corpus = self._toy_corpus()
        w, report = train_mle(corpus, cfg)
        assert report.heldout_nll[-1] < report.init_heldout_nll
        assert report.train_nll[-1] < report.init_train_nll

    def test_single_example_overfit_is_monotone_after_warmup(self):
        cfg = RunConfig()
        cfg.train.epochs = 6
        cfg.train.batch_size = 1
        cfg.train.holdout_fraction = 0.0
        cfg.seed = 4
        corpus = self._toy_corpus(1)
        _, report = train_mle(corpus, cfg)
        tail = report.train_nll[1:]
        assert all(b <= a + 1e-6 for a, b in zip(tail, tail[1:]))

    def test_corpus_order_does_not_matter_in_canonical_mode(self):
        cfg = RunConfig()
        cfg.train.epochs = 2
        cfg.train.batch_size = 4
        cfg.train.holdout_fraction = 0.2
        cfg.seed = 9
        corpus = self._toy_corpus(8)
        w1, r1 = train_mle(corpus, cfg)
        shuffled = [corpus[i] for i in np.random.default_rng(0).permutation(len(corpus))]
        w2, r2 = train_mle(shuffled, cfg)
        assert r1.train_nll == r2.train_nll
        for k in w1.tensors:
            assert np.array_equal(w1.tensors[k], w2.tensors[k])

    def test_quantized_weights_are_float32_representable(self):
        cfg = RunConfig()
        cfg.train.epochs = 1
        cfg.train.batch_size = 4
        cfg.train.holdout_fraction = 0.0
        w, _ = train_mle(self._toy_corpus(4), cfg)
        for arr in w.tensors.values():
            assert np.array_equal(arr, arr.astype(np.float32).astype(np.float64))

    def test_empty_corpus_rejected(self):
        with pytest.raises(ContractError):
            train_mle([], RunConfig())

    def test_dataset_nll_matches_mean_of_singles(self, weights):
        corpus = self._toy_corpus(3)
        mean_nll = dataset_nll(corpus, weights, CFG.render)
        singles = [-type_log_prob(c, weights, CFG.render) for c in corpus]
        assert mean_nll == pytest.approx(np.mean(singles), abs=1e-9)
