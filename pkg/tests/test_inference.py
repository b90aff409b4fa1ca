import itertools

import numpy as np
import pytest
from scipy import ndimage

from glyphlearn.config import RunConfig
from glyphlearn.drawing import CharacterToken, CharacterType
from glyphlearn.errors import DataError
from glyphlearn.inference import (
    LatentSplit,
    ParseVars,
    build_posterior,
    latent_split_of,
    normalize_log_weights,
    optimize_parse,
    parses_from_dict,
    parses_to_dict,
    refit_token,
    refit_tokens_batch,
    score_types,
    search_order_directions,
    select_top_k,
    token_image_score,
)
from glyphlearn.nets import init_weights
from glyphlearn.proposals import propose_parses
from glyphlearn.render import PixelMap, image_log_lik, render_token, RenderParams
from glyphlearn.rng import substream
from glyphlearn.skeleton import extract_skeleton, thin
from glyphlearn.splines import fit_minimal_spline
from glyphlearn.token_model import TokenNoiseParams
from glyphlearn.type_model import type_log_prob

from oracles import pixel_degree_graph
from shapes import bar_image, plus_image, ring_image, translate_image

CFG = RunConfig()


@pytest.fixture(scope="module")
def weights():
    return init_weights(CFG.arch, CFG.canvas_size, substream(0, "inf/init"))


@pytest.fixture(scope="module")
def noise():
    return TokenNoiseParams()


class TestSkeleton:
    def test_plus_sign_structure(self):
        g = extract_skeleton(plus_image())
        assert len(g.endpoints) == 4
        assert len(g.junctions) == 1
        assert len(g.edges) == 4
        ep, jn, cyc = pixel_degree_graph(thin(plus_image()))
        assert (len(g.endpoints), len(g.junctions), g.n_cycles) == (ep, jn, cyc)

    def test_bar_structure(self):
        g = extract_skeleton(bar_image())
        assert len(g.endpoints) == 2
        assert len(g.junctions) == 0
        assert len(g.edges) == 1
        ep, jn, cyc = pixel_degree_graph(thin(bar_image()))
        assert (len(g.endpoints), len(g.junctions), g.n_cycles) == (ep, jn, cyc)

    def test_ring_structure(self):
        g = extract_skeleton(ring_image())
        assert len(g.endpoints) == 0
        assert g.n_cycles == 1
        ep, _, cyc = pixel_degree_graph(thin(ring_image()))
        assert (len(g.endpoints), g.n_cycles) == (ep, cyc)

    def test_blank_image_rejected(self):
        with pytest.raises(DataError):
            extract_skeleton(np.zeros((105, 105), dtype=np.uint8))

    def test_topology_preserved(self):
        # connected components of the skeleton match the ink region's
        for img in (plus_image(), bar_image(), ring_image()):
            two = img.copy()
            two[5:8, 5:30] = 1  # add a detached bar
            n_ink = ndimage.label(two, structure=np.ones((3, 3)))[1]
            n_skel = ndimage.label(thin(two), structure=np.ones((3, 3)))[1]
            assert n_ink == n_skel

    def test_every_pixel_on_edge_or_node(self):
        for img in (plus_image(), bar_image(), ring_image()):
            g = extract_skeleton(img)
            covered = set()
            for e in g.edges:
                covered.update((int(y), int(x)) for x, y in e.path)
            for n in g.nodes:
                covered.update(n.pixels)
            assert len(covered) == g.n_pixels


class TestProposals:
    def test_single_edge_graph_one_candidate(self):
        g = extract_skeleton(bar_image())
        cands = propose_parses(g, 40, substream(0, "w"))
        assert len(cands) == 1
        assert cands[0].kappa == 1

    def test_plus_contains_two_bar_segmentation(self):
        g = extract_skeleton(plus_image())
        hits = 0
        for seed in range(10):
            cands = propose_parses(g, 200, substream(seed, "w2"))
            ok = any(
                c.kappa == 2
                and all(np.ptp(s[:, 0]) < 2 or np.ptp(s[:, 1]) < 2 for s in c.strokes)
                for c in cands
            )
            hits += ok
        assert hits == 10

    def test_coverage_invariant(self):
        g = extract_skeleton(plus_image())
        for c in propose_parses(g, 100, substream(3, "w3")):
            assert c.coverage(g) >= 0.95


class TestOrderDirectionSearch:
    def _candidate(self, seed=0):
        g = extract_skeleton(plus_image())
        return propose_parses(g, 100, substream(seed, "cand"))[0]

    def test_two_stroke_count_is_eight(self, weights):
        cand = self._candidate()
        assert cand.kappa == 2
        out = search_order_directions(cand, weights, CFG, substream(0, "s"))
        assert out.configs_scored == 8

    def test_matches_brute_force_enumeration(self, weights):
        cand = self._candidate()
        out = search_order_directions(cand, weights, CFG, substream(0, "s"))
        # independent brute force: refit every config separately, score singly
        best = -np.inf
        for perm in itertools.permutations(range(cand.kappa)):
            for flips in itertools.product((False, True), repeat=cand.kappa):
                splines = []
                for i in perm:
                    path = cand.strokes[i][::-1] if flips[i] else cand.strokes[i]
                    splines.append(
                        fit_minimal_spline(path, CFG.spline.residual_threshold, CFG.spline.max_control)
                    )
                ct = CharacterType.from_splines(splines)
                best = max(best, type_log_prob(ct, weights, CFG.render))
        assert out.score == pytest.approx(best, abs=1e-6)

    def test_returned_score_at_least_identity(self, weights):
        cand = self._candidate(seed=1)
        out = search_order_directions(cand, weights, CFG, substream(1, "s"))
        identity = CharacterType.from_splines(
            [
                fit_minimal_spline(s, CFG.spline.residual_threshold, CFG.spline.max_control)
                for s in cand.strokes
            ]
        )
        assert out.score >= type_log_prob(identity, weights, CFG.render) - 1e-9

    def test_symmetric_stroke_tie_breaks_canonically(self, weights):
        # a perfectly symmetric horizontal bar: both directions score equally
        # under a freshly-symmetric... scores may differ slightly; force a tie
        # by duplicating the same stroke reversed and checking the canonical rule
        g = extract_skeleton(bar_image())
        cand = propose_parses(g, 10, substream(5, "w"))[0]
        out = search_order_directions(cand, weights, CFG, substream(2, "s"))
        # whichever direction wins must be deterministic across reruns
        out2 = search_order_directions(cand, weights, CFG, substream(3, "s"))
        assert out.directions == out2.directions
        assert np.allclose(out.ctype.starts[0], out2.ctype.starts[0])

    def test_reversal_reverses_fitted_control_points(self):
        t = np.linspace(0, np.pi, 60)
        arc = np.stack([50 + 25 * np.cos(t), 50 + 20 * np.sin(t)], axis=1)
        fwd = fit_minimal_spline(arc, 1.0)
        if len(fwd.control_points) >= 2:
            rev = fit_minimal_spline(arc[::-1], 1.0)
            assert np.allclose(rev.control_points, fwd.control_points[::-1], atol=0.3)


class TestSelectTopK:
    def test_fewer_candidates_than_k(self, weights):
        g = extract_skeleton(plus_image())
        cands = propose_parses(g, 100, substream(0, "t"))
        scored = [search_order_directions(c, weights, CFG, substream(i, "t")) for i, c in enumerate(cands)]
        top = select_top_k(scored, 5)
        assert len(top) == len(cands) <= 5

    def test_sorted_and_matches_full_sort(self, weights):
        g = extract_skeleton(plus_image())
        cands = propose_parses(g, 150, substream(1, "t"))
        scored = [search_order_directions(c, weights, CFG, substream(i, "t2")) for i, c in enumerate(cands)]
        top = select_top_k(scored, 2)
        scores = [s.score for s in top]
        assert scores == sorted(scores, reverse=True)
        oracle = sorted((s.score for s in scored), reverse=True)[:2]
        assert scores == oracle


class TestOptimize:
    def test_final_objective_at_least_initial(self, weights, noise):
        cfg = RunConfig()
        cfg.inference.opt_steps = 40
        bar = bar_image()
        ct = CharacterType([np.array([32.0, 52.0])], [np.array([[0.0, 0.0], [20.0, 0.0], [40.0, 0.0]])])
        parse, res = optimize_parse(ct, CharacterToken.from_type(ct), bar, weights, noise, cfg)
        assert res.objective >= res.initial_objective
        assert parse.log_weight == res.objective

    def test_latent_split_roundtrip_exact(self):
        ct = CharacterType(
            [np.array([30.0, 40.0]), np.array([60.0, 20.0])],
            [np.array([[0.0, 0.0], [10.0, 5.0]]), np.array([[0.0, 0.0], [0.0, 30.0], [5.0, 44.0]])],
        )
        pv = ParseVars.initial(ct, 1.7, 0.03)
        z = pv.flatten()
        assert z.size == pv.dim
        back = pv.unflatten(z)
        assert np.array_equal(back.flatten(), z)
        rng = np.random.default_rng(0)
        z2 = rng.normal(size=pv.dim)
        assert np.array_equal(pv.unflatten(z2).flatten(), z2)

    def test_noiseless_reconstruction_close_to_oracle(self, weights, noise):
        cfg = RunConfig()
        ct = CharacterType([np.array([30.0, 52.0])], [np.array([[0.0, 0.0], [22.0, 0.0], [45.0, 0.0]])])
        tok = CharacterToken.from_type(ct)
        rp = RenderParams(sigma=0.6, eps=0.001)
        pm = render_token(tok, rp, cfg.canvas_size, cfg.render)
        image = (pm.probabilities > 0.5).astype(np.uint8)
        oracle_rp = RenderParams(sigma=0.6, eps=cfg.render.eps_min)
        oracle_ll = image_log_lik(image, render_token(tok, oracle_rp, cfg.canvas_size, cfg.render))

        parses = build_posterior(image, weights, noise, cfg, substream(0, "nl"))
        best = parses[0]
        got_ll = image_log_lik(
            image, render_token(best.token, RenderParams(best.sigma, best.eps), cfg.canvas_size, cfg.render)
        )
        assert got_ll >= oracle_ll - 0.05 * abs(oracle_ll)


class TestPosterior:
    def test_weights_normalize_and_map_is_single_stroke(self, weights, noise):
        cfg = RunConfig()
        cfg.inference.opt_steps = 60
        parses = build_posterior(bar_image(), weights, noise, cfg, substream(2, "p"))
        assert sum(p.weight for p in parses) == pytest.approx(1.0, abs=1e-9)
        assert parses[0].ctype.kappa == 1
        for p in parses:
            p.validate()

    def test_weight_shift_invariance(self):
        logw = np.array([-100.0, -103.0, -110.0])
        a = normalize_log_weights(logw)
        b = normalize_log_weights(logw + 1234.5)
        assert np.allclose(a, b, atol=1e-12)

    def test_deterministic_given_seed(self, weights, noise):
        cfg = RunConfig()
        cfg.inference.opt_steps = 25
        cfg.inference.n_walks = 50
        a = build_posterior(bar_image(), weights, noise, cfg, substream(7, "d"))
        b = build_posterior(bar_image(), weights, noise, cfg, substream(7, "d"))
        assert len(a) == len(b)
        for pa, pb in zip(a, b):
            assert pa.log_weight == pb.log_weight
            assert np.array_equal(pa.token.affine, pb.token.affine)

    def test_serialization_roundtrip(self, weights, noise):
        cfg = RunConfig()
        cfg.inference.opt_steps = 25
        cfg.inference.n_walks = 50
        parses = build_posterior(bar_image(), weights, noise, cfg, substream(8, "s"))
        data = parses_to_dict(parses, cfg.canvas_size)
        back = parses_from_dict(data)
        assert len(back) == len(parses)
        for pa, pb in zip(parses, back):
            assert pa.log_weight == pb.log_weight
            assert np.array_equal(pa.ctype.starts[0], pb.ctype.starts[0])

    def test_latent_split_of_parse(self, weights, noise):
        cfg = RunConfig()
        cfg.inference.opt_steps = 25
        cfg.inference.n_walks = 50
        parses = build_posterior(bar_image(), weights, noise, cfg, substream(9, "l"))
        ls = latent_split_of(parses[0])
        assert ls.kappa == parses[0].ctype.kappa
        assert ls.dim == ls.vars.dim
        assert np.array_equal(ls.vars.unflatten(ls.z_c).flatten(), ls.z_c)


class TestRefit:
    def _bar_parse(self, weights, noise, cfg):
        return build_posterior(bar_image(), weights, noise, cfg, substream(3, "r"))[0]

    def test_refit_to_self_recovers_own_score(self, weights, noise):
        cfg = RunConfig()
        cfg.inference.opt_steps = 80
        parse = self._bar_parse(weights, noise, cfg)
        own = token_image_score(parse, bar_image(), weights, noise, cfg)
        _, score = refit_token(parse, bar_image(), weights, noise, cfg)
        assert score >= own - 0.01 * abs(own)

    def test_translated_image_recovers_affine_shift(self, weights):
        # stiff start/trajectory noise funnels the displacement into the
        # affine shift instead of splitting it across redundant channels
        cfg = RunConfig()
        cfg.inference.opt_steps = 80
        cfg.inference.refit_steps = 150
        stiff = TokenNoiseParams(sigma_loc=0.1, sigma_traj=0.1)
        parse = self._bar_parse(weights, stiff, cfg)
        shifted = translate_image(bar_image(), 3, -2)
        token, *_ = refit_tokens_batch([parse], shifted, weights, stiff, cfg)[0]
        assert abs(token.affine[2] - 3.0) <= 1.0
        assert abs(token.affine[3] - (-2.0)) <= 1.0

    def test_score_below_bernoulli_optimum(self, weights, noise):
        cfg = RunConfig()
        cfg.inference.opt_steps = 40
        parse = self._bar_parse(weights, noise, cfg)
        img = plus_image()
        _, score = refit_token(parse, img, weights, noise, cfg)
        bound = image_log_lik(img, PixelMap(np.clip(img.astype(float), 1e-6, 1 - 1e-6)))
        assert np.isfinite(score)
        assert score <= bound

    def test_refit_keeps_type_fixed(self, weights, noise):
        cfg = RunConfig()
        cfg.inference.opt_steps = 30
        cfg.inference.refit_steps = 30
        parse = self._bar_parse(weights, noise, cfg)
        before = [s.copy() for s in parse.ctype.starts]
        refit_token(parse, plus_image(), weights, noise, cfg)
        for a, b in zip(parse.ctype.starts, before):
            assert np.array_equal(a, b)
