"""Posterior construction over stroke programs for a binary image.

Pipeline: skeletonize, propose segmentations with random walks, pick stroke
order/directions by enumerating (or sampling) configurations under the
concept prior, keep the top-K, then jointly ascend the full log-density
(prior + token noise + image likelihood) over every continuous variable of
all K parses at once. Parse weights are the normalized joint densities.

All K parses share one computation graph per ascent step, so the encoder
and recurrent passes amortize across parses; that is what makes repeated
posterior construction viable on a single core.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .drawing import CharacterToken, CharacterType
from .errors import ContractError, DataError
from .nets import NetworkWeights, WeightTape
from .proposals import CandidateParse, propose_parses
from .render import as_binary_image, image_log_lik_t, prob_map_t
from .skeleton import extract_skeleton
from .splines import Spline, fit_minimal_spline
from .token_model import TokenNoiseParams, apply_affine_t, token_log_prob_t
from .type_model import tensors_with_free_coords, type_log_prob_batch

Array = np.ndarray


# ---------------------------------------------------------------------------
# latent bookkeeping


@dataclass
class ParseVars:
    """Continuous latent state of one parse (numpy side)."""

    type_starts: list[Array]
    type_free: list[Array]  # trajectories minus the pinned first row
    token_starts: list[Array]
    token_trajs: list[Array]
    affine: Array
    sigma: float
    eps: float

    @classmethod
    def initial(cls, ctype: CharacterType, sigma: float, eps: float) -> "ParseVars":
        """Token initialized at the type (zero noise, identity warp)."""
        return cls(
            [s.copy() for s in ctype.starts],
            [t[1:].copy() for t in ctype.trajectories],
            [s.copy() for s in ctype.starts],
            [t.copy() for t in ctype.trajectories],
            np.array([1.0, 1.0, 0.0, 0.0]),
            sigma,
            eps,
        )

    def arrays(self) -> list[Array]:
        return (
            self.type_starts
            + self.type_free
            + self.token_starts
            + self.token_trajs
            + [self.affine, np.array([self.sigma]), np.array([self.eps])]
        )

    def flatten(self) -> Array:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @property
    def dim(self) -> int:
        return sum(a.size for a in self.arrays())

    def unflatten(self, z: Array) -> "ParseVars":
        """Exact inverse of ``flatten`` against this instance's shapes."""
        z = np.asarray(z, dtype=np.float64)
        if z.size != self.dim:
            raise ContractError(f"latent vector has {z.size} entries, expected {self.dim}")
        out = []
        pos = 0
        for a in self.arrays():
            out.append(z[pos : pos + a.size].reshape(a.shape).copy())
            pos += a.size
        k = len(self.type_starts)
        return ParseVars(
            out[:k],
            out[k : 2 * k],
            out[2 * k : 3 * k],
            out[3 * k : 4 * k],
            out[4 * k],
            float(out[4 * k + 1][0]),
            float(out[4 * k + 2][0]),
        )

    def to_type(self) -> CharacterType:
        trajs = [np.vstack([[0.0, 0.0], f]) for f in self.type_free]
        return CharacterType([s.copy() for s in self.type_starts], trajs)

    def to_token(self) -> CharacterToken:
        return CharacterToken(
            [s.copy() for s in self.token_starts],
            [t.copy() for t in self.token_trajs],
            self.affine.copy(),
        )


@dataclass
class LatentSplit:
    """Discrete configuration plus the flattened continuous block."""

    kappa: int
    stroke_lengths: tuple[int, ...]
    order: tuple[int, ...]
    directions: tuple[bool, ...]
    paths_digest: str
    vars: ParseVars

    @property
    def z_c(self) -> Array:
        return self.vars.flatten()

    @property
    def dim(self) -> int:
        return self.vars.dim

    def discrete_key(self) -> tuple:
        return (self.kappa, self.stroke_lengths, self.paths_digest)


@dataclass
class Parse:
    """One weighted mode of the approximate posterior."""

    ctype: CharacterType
    token: CharacterToken
    sigma: float
    eps: float
    log_weight: float  # unnormalized log joint density at the optimum
    weight: float  # normalized
    provenance: dict = field(default_factory=dict)

    def validate(self) -> "Parse":
        self.ctype.validate()
        self.token.validate_against(self.ctype)
        if not (0.0 <= self.weight <= 1.0):
            raise ContractError(f"parse weight {self.weight} outside [0, 1]")
        return self


def normalize_log_weights(log_w: Array) -> Array:
    log_w = np.asarray(log_w, dtype=np.float64)
    shift = log_w - log_w.max()
    w = np.exp(shift)
    return w / w.sum()


# ---------------------------------------------------------------------------
# discrete search: stroke order and directions


def _paths_digest(strokes: list[Array]) -> str:
    h = hashlib.sha1()
    for s in strokes:
        h.update(np.round(s).astype(np.int64).tobytes())
        h.update(b"|")
    return h.hexdigest()


@dataclass
class ScoredCandidate:
    candidate: CandidateParse  # strokes reordered/redirected to the best config
    ctype: CharacterType
    score: float
    order: tuple[int, ...]
    directions: tuple[bool, ...]
    configs_scored: int


def _config_space_size(kappa: int) -> int:
    return math.factorial(kappa) * 2**kappa


def search_order_directions(
    candidate: CandidateParse,
    weights: NetworkWeights,
    cfg: RunConfig,
    rng: np.random.Generator,
) -> ScoredCandidate:
    """Pick the stroke order and directions that the prior scores highest.

    All order x direction configurations are enumerated when their count is
    within ``inference.exhaustive_cap``; beyond that a uniform sample of
    ``random_search_budget`` configurations (identity always included) is
    scored instead. Score ties within 1e-9 break toward the configuration
    whose sequence of start coordinates is lexicographically smallest
    (leftmost-topmost starts first).
    """
    icfg = cfg.inference
    kappa = candidate.kappa
    splines: list[tuple[Spline, Spline]] = []
    for path in candidate.strokes:
        sp = fit_minimal_spline(path, cfg.spline.residual_threshold, cfg.spline.max_control)
        splines.append((sp, Spline(sp.control_points[::-1].copy())))

    total = _config_space_size(kappa)
    if total <= icfg.exhaustive_cap:
        configs = [
            (perm, flips)
            for perm in itertools.permutations(range(kappa))
            for flips in itertools.product((False, True), repeat=kappa)
        ]
    else:
        configs = [(tuple(range(kappa)), (False,) * kappa)]
        seen = {configs[0]}
        while len(configs) < icfg.random_search_budget:
            perm = tuple(rng.permutation(kappa).tolist())
            flips = tuple(bool(b) for b in rng.integers(0, 2, kappa))
            if (perm, flips) not in seen:
                seen.add((perm, flips))
                configs.append((perm, flips))
            if len(seen) >= total:
                break

    types = [
        CharacterType.from_splines([splines[i][1 if flips[i] else 0] for i in perm])
        for perm, flips in configs
    ]
    scores = score_types(types, weights, cfg)

    best = float(np.max(scores))
    tied = [i for i, s in enumerate(scores) if s >= best - 1e-9]

    def canonical_key(i):
        return tuple(float(v) for t in types[i].starts for v in t)

    winner = min(tied, key=canonical_key)
    perm, flips = configs[winner]
    strokes = [
        candidate.strokes[i][::-1].copy() if flips[i] else candidate.strokes[i].copy()
        for i in perm
    ]
    return ScoredCandidate(
        CandidateParse(strokes, candidate.walk_id),
        types[winner],
        float(scores[winner]),
        tuple(perm),
        tuple(flips[i] for i in perm),
        len(configs),
    )


def score_types(types: list[CharacterType], weights: NetworkWeights, cfg: RunConfig, chunk: int = 32) -> Array:
    """Prior log-density of each drawing (forward only, batched)."""
    from .type_model import tensors_from_type

    tape = WeightTape(weights, constant=True)
    out = np.empty(len(types))
    for i in range(0, len(types), chunk):
        part = [tensors_from_type(t) for t in types[i : i + chunk]]
        out[i : i + len(part)] = type_log_prob_batch(tape, part, cfg.render).value
    return out


def select_top_k(scored: list[ScoredCandidate], k: int) -> list[ScoredCandidate]:
    """Best-scoring candidates, ties broken by walk id (full sort)."""
    ordered = sorted(scored, key=lambda s: (-s.score, s.candidate.walk_id))
    return ordered[:k]


# ---------------------------------------------------------------------------
# continuous optimization


class _ParseLeaves:
    """Tape leaves for one parse's continuous variables.

    With ``const_type`` the type coordinates become gradient-free constants,
    so token refits cannot drag the concept program along."""

    def __init__(self, pv: ParseVars, const_type: bool = False):
        tmaker = (lambda a: ad.constant(a.copy())) if const_type else (lambda a: Tensor(a.copy()))
        self.type_starts = [tmaker(a) for a in pv.type_starts]
        self.type_free = [tmaker(a) for a in pv.type_free]
        self.token_starts = [Tensor(a.copy()) for a in pv.token_starts]
        self.token_trajs = [Tensor(a.copy()) for a in pv.token_trajs]
        self.affine = Tensor(pv.affine.copy())
        self.sigma = Tensor(np.asarray(pv.sigma))
        self.eps = Tensor(np.asarray(pv.eps))

    def all(self) -> list[Tensor]:
        return (
            self.type_starts
            + self.type_free
            + self.token_starts
            + self.token_trajs
            + [self.affine, self.sigma, self.eps]
        )


def _joint_objective(
    tape: WeightTape,
    leaves: list[_ParseLeaves],
    image: Array,
    noise: TokenNoiseParams,
    cfg: RunConfig,
    include_type: bool = True,
) -> Tensor:
    """Stacked log P(psi, theta, I) for every parse; returns (P,)."""
    rcfg = cfg.render
    size = cfg.canvas_size
    sig_eps_prior = -np.log(rcfg.sigma_max - rcfg.sigma_min) - np.log(
        rcfg.eps_max - rcfg.eps_min
    )
    parts = []
    if include_type:
        items = [tensors_with_free_coords(l.type_starts, l.type_free) for l in leaves]
        type_terms = type_log_prob_batch(tape, items, rcfg)
    for p, l in enumerate(leaves):
        type_tensors = tensors_with_free_coords(l.type_starts, l.type_free)
        tok = token_log_prob_t(
            l.token_starts, l.token_trajs, l.affine, type_tensors.starts, type_tensors.rels, noise
        )
        warped = apply_affine_t(l.token_starts, l.token_trajs, l.affine)
        pmap = prob_map_t(warped, l.sigma, l.eps, size, rcfg)
        img_ll = image_log_lik_t(image, pmap)
        total = ad.add(ad.add(tok, img_ll), sig_eps_prior)
        if include_type:
            total = ad.add(total, type_terms[p])
        parts.append(ad.reshape(total, (1,)))
    return ad.concat(parts, axis=0)


@dataclass
class OptimizeResult:
    vars: ParseVars
    objective: float  # best objective seen (>= objective at initialization)
    initial_objective: float
    grad_norm_per_dim: float  # at the final iterate
    hit_non_finite: bool


def _cosine_lr(base: float, step: int, total: int) -> float:
    return base * 0.5 * (1.0 + np.cos(np.pi * step / max(total, 1)))


def optimize_parses(
    inits: list[ParseVars],
    image: Array,
    weights: NetworkWeights,
    noise: TokenNoiseParams,
    cfg: RunConfig,
    steps: int | None = None,
    lr: float | None = None,
    include_type: bool = True,
    freeze_type: bool = False,
) -> list[OptimizeResult]:
    """Joint adaptive-moment ascent of every parse's continuous variables.

    One shared graph per step scores all parses; each parse has independent
    Adam state. The best iterate per parse is retained (monotone-accept),
    sigma/eps are box-projected after every step, and a parse whose step
    turns non-finite reverts to its last finite iterate and is flagged.
    """
    icfg = cfg.inference
    rcfg = cfg.render
    steps = icfg.opt_steps if steps is None else steps
    lr = icfg.opt_lr if lr is None else lr
    image = as_binary_image(image, cfg.canvas_size)

    current = [pv.unflatten(pv.flatten()) for pv in inits]  # defensive copies
    templates = current
    m = [np.zeros(pv.dim) for pv in current]
    v = [np.zeros(pv.dim) for pv in current]
    best_z = [pv.flatten() for pv in current]
    best_obj = [-np.inf] * len(current)
    init_obj = [0.0] * len(current)
    flags = [False] * len(current)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    last_grad = [np.zeros(pv.dim) for pv in current]

    for step in range(steps + 1):
        tape = WeightTape(weights, constant=True)
        leaves = [_ParseLeaves(pv, const_type=freeze_type) for pv in current]
        totals = _joint_objective(tape, leaves, image, noise, cfg, include_type)
        objs = totals.value.copy()
        root = ad.reduce_sum(totals)
        all_leaves = [t for l in leaves for t in l.all()]
        grads = ad.gradient(root, all_leaves)

        pos = 0
        for p, l in enumerate(leaves):
            n_leaves = len(l.all())
            gvec = np.concatenate([np.asarray(g).ravel() for g in grads[pos : pos + n_leaves]])
            pos += n_leaves
            obj = float(objs[p])
            if step == 0:
                init_obj[p] = obj
            if np.isfinite(obj) and obj > best_obj[p]:
                best_obj[p] = obj
                best_z[p] = current[p].flatten()
            if not np.isfinite(obj) or not np.all(np.isfinite(gvec)):
                flags[p] = True
                current[p] = templates[p].unflatten(best_z[p])
                m[p][:] = 0.0
                v[p][:] = 0.0
                continue
            last_grad[p] = gvec
            if step == steps:
                continue
            t = step + 1
            m[p] = beta1 * m[p] + (1 - beta1) * gvec
            v[p] = beta2 * v[p] + (1 - beta2) * gvec * gvec
            mhat = m[p] / (1 - beta1**t)
            vhat = v[p] / (1 - beta2**t)
            z = current[p].flatten() + _cosine_lr(lr, step, steps) * mhat / (
                np.sqrt(vhat) + adam_eps
            )
            z[-2] = np.clip(z[-2], rcfg.sigma_min, rcfg.sigma_max)
            z[-1] = np.clip(z[-1], rcfg.eps_min, rcfg.eps_max)
            current[p] = templates[p].unflatten(z)

    out = []
    for p in range(len(current)):
        pv = templates[p].unflatten(best_z[p])
        out.append(
            OptimizeResult(
                vars=pv,
                objective=best_obj[p],
                initial_objective=init_obj[p],
                grad_norm_per_dim=float(np.linalg.norm(last_grad[p]) / max(pv.dim, 1)),
                hit_non_finite=flags[p],
            )
        )
    return out


def optimize_parse(
    ctype: CharacterType,
    token: CharacterToken,
    image: Array,
    weights: NetworkWeights,
    noise: TokenNoiseParams,
    cfg: RunConfig,
) -> tuple[Parse, OptimizeResult]:
    """Single-parse continuous ascent starting from mid-box blur and noise."""
    rcfg = cfg.render
    pv = ParseVars(
        [s.copy() for s in ctype.starts],
        [t[1:].copy() for t in ctype.trajectories],
        [s.copy() for s in token.starts],
        [t.copy() for t in token.trajectories],
        token.affine.copy(),
        0.5 * (rcfg.sigma_min + rcfg.sigma_max),
        0.5 * (rcfg.eps_min + rcfg.eps_max),
    )
    res = optimize_parses([pv], image, weights, noise, cfg)[0]
    parse = Parse(
        ctype=res.vars.to_type(),
        token=res.vars.to_token(),
        sigma=res.vars.sigma,
        eps=res.vars.eps,
        log_weight=res.objective,
        weight=1.0,
        provenance={"non_finite": res.hit_non_finite},
    )
    return parse.validate(), res


# ---------------------------------------------------------------------------
# posterior assembly


def build_posterior(
    image: Array,
    weights: NetworkWeights,
    noise: TokenNoiseParams,
    cfg: RunConfig,
    rng: np.random.Generator,
    k: int | None = None,
) -> list[Parse]:
    """Full bottom-up + continuous-refinement posterior for one image."""
    icfg = cfg.inference
    k = icfg.top_k if k is None else k
    image = as_binary_image(image, cfg.canvas_size)
    if image.sum() == 0:
        raise DataError("empty image: no ink pixels")
    graph = extract_skeleton(image, icfg.junction_merge_radius)
    candidates = propose_parses(graph, icfg.n_walks, rng, icfg.angle_scale_deg, icfg.cover_frac)
    if not candidates:
        raise DataError("no covering parse candidates were proposed")
    candidates = sorted(candidates, key=lambda c: (c.kappa, c.walk_id))[: icfg.max_candidates]

    scored = [search_order_directions(c, weights, cfg, rng) for c in candidates]
    top = select_top_k(scored, k)

    rcfg = cfg.render
    inits = [
        ParseVars.initial(s.ctype, 0.5 * (rcfg.sigma_min + rcfg.sigma_max), 0.5 * (rcfg.eps_min + rcfg.eps_max))
        for s in top
    ]
    results = optimize_parses(inits, image, weights, noise, cfg)

    log_w = np.array([r.objective for r in results])
    w = normalize_log_weights(log_w)
    parses = []
    for sc, res, lw, wi in zip(top, results, log_w, w):
        parses.append(
            Parse(
                ctype=res.vars.to_type(),
                token=res.vars.to_token(),
                sigma=res.vars.sigma,
                eps=res.vars.eps,
                log_weight=float(lw),
                weight=float(wi),
                provenance={
                    "walk_id": sc.candidate.walk_id,
                    "order": list(sc.order),
                    "directions": list(sc.directions),
                    "paths_digest": _paths_digest(sc.candidate.strokes),
                    "prior_score": sc.score,
                    "initial_objective": res.initial_objective,
                    "non_finite": res.hit_non_finite,
                    "grad_norm_per_dim": res.grad_norm_per_dim,
                },
            ).validate()
        )
    order = sorted(
        range(len(parses)), key=lambda i: (-parses[i].log_weight, parses[i].provenance["walk_id"])
    )
    return [parses[i] for i in order]


def latent_split_of(parse: Parse) -> LatentSplit:
    """Discrete/continuous split of a parse's latent state."""
    pv = ParseVars(
        [s.copy() for s in parse.ctype.starts],
        [t[1:].copy() for t in parse.ctype.trajectories],
        [s.copy() for s in parse.token.starts],
        [t.copy() for t in parse.token.trajectories],
        parse.token.affine.copy(),
        parse.sigma,
        parse.eps,
    )
    return LatentSplit(
        kappa=parse.ctype.kappa,
        stroke_lengths=tuple(parse.ctype.stroke_lengths),
        order=tuple(parse.provenance.get("order", range(parse.ctype.kappa))),
        directions=tuple(parse.provenance.get("directions", [False] * parse.ctype.kappa)),
        paths_digest=parse.provenance.get("paths_digest", ""),
        vars=pv,
    )


# ---------------------------------------------------------------------------
# token refit (classification workhorse)


def refit_tokens_batch(
    parses: list[Parse],
    new_image: Array,
    weights: NetworkWeights,
    noise: TokenNoiseParams,
    cfg: RunConfig,
) -> list[tuple[CharacterToken, float, float, float]]:
    """Re-fit each parse's token (and blur/noise) to a new image, type fixed.

    Returns (token', sigma', eps', score) per parse with
    score = max_theta log P(image | theta) P(theta | psi) plus the flat
    blur/noise prior constants.
    """
    inits = []
    for parse in parses:
        inits.append(
            ParseVars(
                [s.copy() for s in parse.ctype.starts],
                [t[1:].copy() for t in parse.ctype.trajectories],
                [s.copy() for s in parse.token.starts],
                [t.copy() for t in parse.token.trajectories],
                parse.token.affine.copy(),
                parse.sigma,
                parse.eps,
            )
        )
    results = optimize_parses(
        inits,
        new_image,
        weights,
        noise,
        cfg,
        steps=cfg.inference.refit_steps,
        lr=cfg.inference.refit_lr,
        include_type=False,
        freeze_type=True,
    )
    return [(res.vars.to_token(), res.vars.sigma, res.vars.eps, res.objective) for res in results]


def refit_token(
    parse: Parse,
    new_image: Array,
    weights: NetworkWeights,
    noise: TokenNoiseParams,
    cfg: RunConfig,
) -> tuple[CharacterToken, float]:
    """Single-parse wrapper; returns (refit token, score)."""
    token, _, _, score = refit_tokens_batch([parse], new_image, weights, noise, cfg)[0]
    return token, score


def token_image_score(
    parse: Parse, image: Array, weights: NetworkWeights, noise: TokenNoiseParams, cfg: RunConfig
) -> float:
    """log P(image | theta) + log P(theta | psi) + blur/noise prior constants
    evaluated at the parse's stored state (no optimization)."""
    tape = WeightTape(weights, constant=True)
    pv = ParseVars(
        [s.copy() for s in parse.ctype.starts],
        [t[1:].copy() for t in parse.ctype.trajectories],
        [s.copy() for s in parse.token.starts],
        [t.copy() for t in parse.token.trajectories],
        parse.token.affine.copy(),
        parse.sigma,
        parse.eps,
    )
    leaves = _ParseLeaves(pv)
    total = _joint_objective(tape, [leaves], as_binary_image(image, cfg.canvas_size), noise, cfg, include_type=False)
    return float(total.value[0])


def joint_gradient_fn(
    parse: Parse, image: Array, weights: NetworkWeights, noise: TokenNoiseParams, cfg: RunConfig
):
    """(f0, grad_fn) of the joint log-density over a parse's flattened
    continuous latent; used by the curvature-based marginal bound."""
    template = latent_split_of(parse).vars
    img = as_binary_image(image, cfg.canvas_size)

    def value_and_grad(z: Array):
        pv = template.unflatten(z)
        tape = WeightTape(weights, constant=True)
        leaves = _ParseLeaves(pv)
        total = _joint_objective(tape, [leaves], img, noise, cfg)
        grads = ad.gradient(total, leaves.all())
        gvec = np.concatenate([np.asarray(g).ravel() for g in grads])
        return float(total.value[0]), gvec

    f0, _ = value_and_grad(template.flatten())

    def grad_fn(z: Array) -> Array:
        return value_and_grad(z)[1]

    return f0, grad_fn, template


# ---------------------------------------------------------------------------
# serialization ("gns/1" JSON schema)


def parses_to_dict(parses: list[Parse], canvas_size: int) -> dict:
    def stroke_list(starts, trajs):
        return [
            {"start": list(map(float, s)), "rel_points": [[float(a), float(b)] for a, b in t]}
            for s, t in zip(starts, trajs)
        ]

    return {
        "schema": "gns/1",
        "canvas": [canvas_size, canvas_size],
        "parses": [
            {
                "log_weight_unnorm": p.log_weight,
                "weight": p.weight,
                "render": {"sigma": p.sigma, "eps": p.eps},
                "type": {"strokes": stroke_list(p.ctype.starts, p.ctype.trajectories)},
                "token": {
                    "strokes": stroke_list(p.token.starts, p.token.trajectories),
                    "affine": list(map(float, p.token.affine)),
                },
                "provenance": {
                    k: (v if not isinstance(v, (np.floating, np.integer)) else float(v))
                    for k, v in p.provenance.items()
                },
            }
            for p in parses
        ],
    }


def parses_from_dict(data: dict) -> list[Parse]:
    if data.get("schema") != "gns/1":
        raise DataError(f"unsupported parse schema {data.get('schema')!r}")
    out = []
    for rec in data["parses"]:
        tstrokes = rec["type"]["strokes"]
        kstrokes = rec["token"]["strokes"]
        ctype = CharacterType(
            [np.asarray(s["start"]) for s in tstrokes],
            [np.asarray(s["rel_points"]) for s in tstrokes],
        )
        token = CharacterToken(
            [np.asarray(s["start"]) for s in kstrokes],
            [np.asarray(s["rel_points"]) for s in kstrokes],
            np.asarray(rec["token"]["affine"]),
        )
        out.append(
            Parse(
                ctype=ctype,
                token=token,
                sigma=float(rec["render"]["sigma"]),
                eps=float(rec["render"]["eps"]),
                log_weight=float(rec["log_weight_unnorm"]),
                weight=float(rec["weight"]),
                provenance=dict(rec.get("provenance", {})),
            ).validate()
        )
    return out
