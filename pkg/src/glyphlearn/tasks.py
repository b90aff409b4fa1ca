"""Concept-level tasks on top of the approximate posterior: one-shot
classification, maximum a posteriori parsing, new-exemplar generation,
unconditional concept generation, and the marginal-likelihood lower bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .drawing import CharacterToken, CharacterType
from .errors import ContractError, NumericalError
from .gmm import SamplerConfig
from .inference import (
    Parse,
    build_posterior,
    joint_gradient_fn,
    latent_split_of,
    normalize_log_weights,
    refit_tokens_batch,
)
from .laplace import LaplaceTerm, laplace_log_integral, logsumexp_values
from .nets import NetworkWeights
from .render import PixelMap, RenderParams, render_token, sample_binary_image
from .rng import fork
from .token_model import TokenNoiseParams, sample_token
from .type_model import generate_type

Array = np.ndarray

# reference values from full-scale background-set training runs; reported
# for context in task output, never asserted at desk scale
FULL_SCALE_REFERENCE = {
    "classification_error_rate": 0.057,
    "marginal_ll": -383.2,
    "marginal_ll_per_dim": -0.0348,
    "image_size": [105, 105],
}


def ll_per_dim(log_lik: float, width: int, height: int) -> float:
    """Log-likelihood per pixel dimension."""
    return log_lik / float(width * height)


# ---------------------------------------------------------------------------
# classification


@dataclass
class ClassificationEpisode:
    """One-shot episode: one training image per class, test images to label."""

    train_images: list[Array]
    test_images: list[Array]
    train_labels: list[str] = field(default_factory=list)
    test_labels: list[str] | None = None

    def __post_init__(self):
        if len(self.train_images) < 2:
            raise ContractError("an episode needs at least 2 classes")
        if not self.train_labels:
            self.train_labels = [str(i) for i in range(len(self.train_images))]
        if len(self.train_labels) != len(set(self.train_labels)):
            raise ContractError("one training image per class: labels must be unique")


@dataclass
class ClassificationResult:
    predictions: list[str]
    forward: Array  # (n_test, n_class) log P(test | train)
    reverse: Array  # (n_test, n_class) log P(train | test)
    log_p_train: Array  # (n_class,) log P(train image)
    two_way: Array  # forward + reverse - log_p_train
    accuracy: float | None

    def to_dict(self) -> dict:
        out = {
            "schema": "gns/1",
            "predictions": self.predictions,
            "forward": self.forward.tolist(),
            "reverse": self.reverse.tolist(),
            "log_p_train": self.log_p_train.tolist(),
            "two_way": self.two_way.tolist(),
            "reference": FULL_SCALE_REFERENCE,
        }
        if self.accuracy is not None:
            out["accuracy"] = self.accuracy
        return out


def forward_score(
    train_parses: list[Parse],
    test_image: Array,
    weights: NetworkWeights,
    noise: TokenNoiseParams,
    cfg: RunConfig,
) -> float:
    """log of the posterior-weighted best token refit of one image's parses
    onto another image."""
    refits = refit_tokens_batch(train_parses, test_image, weights, noise, cfg)
    logw = np.log(np.maximum([p.weight for p in train_parses], 1e-300))
    return logsumexp_values(lw + r[3] for lw, r in zip(logw, refits))


def classify_episode(
    episode: ClassificationEpisode,
    weights: NetworkWeights,
    noise: TokenNoiseParams,
    cfg: RunConfig,
    rng: np.random.Generator,
    posteriors: dict | None = None,
    parallel_map=None,
) -> ClassificationResult:
    """Two-way Bayesian-score classification of every test image.

    The forward term refits each training parse to the test image; the
    reverse term refits each test parse to the training image and is
    normalized by the training image's own evidence (log-sum-exp of its
    unnormalized parse weights).
    """
    pmap = parallel_map or (lambda f, xs: [f(x) for x in xs])
    n_class = len(episode.train_images)
    n_test = len(episode.test_images)

    if posteriors is None:
        posteriors = {}
    streams = fork(rng, n_class + n_test)
    keyed = [(("train", c), episode.train_images[c], streams[c]) for c in range(n_class)]
    keyed += [
        (("test", t), episode.test_images[t], streams[n_class + t]) for t in range(n_test)
    ]
    missing = [job for job in keyed if job[0] not in posteriors]

    def build_one(job):
        key, image, stream = job
        return key, build_posterior(image, weights, noise, cfg, stream)

    for key, parses in pmap(build_one, missing):
        posteriors[key] = parses

    log_p_train = np.array(
        [
            logsumexp_values(p.log_weight for p in posteriors[("train", c)])
            for c in range(n_class)
        ]
    )

    pairs = [(t, c) for t in range(n_test) for c in range(n_class)]

    def score_pair(pair):
        t, c = pair
        fwd = forward_score(
            posteriors[("train", c)], episode.test_images[t], weights, noise, cfg
        )
        rev = forward_score(
            posteriors[("test", t)], episode.train_images[c], weights, noise, cfg
        )
        return fwd, rev

    scored = pmap(score_pair, pairs)
    forward = np.empty((n_test, n_class))
    reverse = np.empty((n_test, n_class))
    for (t, c), (fwd, rev) in zip(pairs, scored):
        forward[t, c] = fwd
        reverse[t, c] = rev
    two_way = forward + reverse - log_p_train[None, :]
    picks = np.argmax(two_way, axis=1)  # ties resolve to the lower class index
    predictions = [episode.train_labels[i] for i in picks]
    accuracy = None
    if episode.test_labels is not None:
        accuracy = float(
            np.mean([p == t for p, t in zip(predictions, episode.test_labels)])
        )
    return ClassificationResult(predictions, forward, reverse, log_p_train, two_way, accuracy)


# ---------------------------------------------------------------------------
# parsing


def parse_map(parses: list[Parse]) -> CharacterType:
    """The maximum a posteriori stroke program; ties break to the lowest
    parse index."""
    if not parses:
        raise ContractError("no parses")
    best = int(np.argmax([p.weight for p in parses]))
    return parses[best].ctype


# ---------------------------------------------------------------------------
# exemplar generation


def exemplar_weights(parses: list[Parse], temperature: float) -> Array:
    """Tempered, renormalized parse weights: log w'_k = log ~w_k / T."""
    logw = np.array([p.log_weight for p in parses])
    return normalize_log_weights(logw / temperature)


@dataclass
class Exemplar:
    image: Array
    token: CharacterToken
    parse_index: int
    prob_map: PixelMap


def generate_exemplars(
    parses: list[Parse],
    n: int,
    weights: NetworkWeights,
    noise: TokenNoiseParams,
    cfg: RunConfig,
    rng: np.random.Generator,
    temperature: float | None = None,
) -> list[Exemplar]:
    """New exemplars of the concept behind a posterior: draw a parse from
    tempered weights, resample its token, render with the parse's optimized
    blur and pixel noise, and sample a binary image."""
    temperature = cfg.tasks.exemplar_temperature if temperature is None else temperature
    probs = exemplar_weights(parses, temperature)
    out = []
    for _ in range(n):
        k = int(rng.choice(len(parses), p=probs))
        parse = parses[k]
        token = sample_token(parse.ctype, noise, rng)
        pm = render_token(
            token, RenderParams(parse.sigma, parse.eps), cfg.canvas_size, cfg.render
        )
        image = sample_binary_image(pm, rng)
        out.append(Exemplar(image, token, k, pm))
    return out


# ---------------------------------------------------------------------------
# concept generation


def generate_concepts(
    n: int,
    weights: NetworkWeights,
    cfg: RunConfig,
    rng: np.random.Generator,
    temperature: float | None = None,
) -> list[tuple[CharacterType, PixelMap]]:
    """Unconditional concepts sampled from the prior at reduced temperature,
    rendered through a noiseless token (mode token, mid-box blur, small
    pixel noise)."""
    temperature = cfg.tasks.concept_temperature if temperature is None else temperature
    sampler = SamplerConfig(temperature)
    out = []
    for stream in fork(rng, n):
        ctype = generate_type(weights, sampler, cfg.render, stream)
        token = CharacterToken.from_type(ctype)
        pm = render_token(
            token,
            RenderParams(cfg.tasks.concept_sigma, cfg.tasks.concept_eps),
            cfg.canvas_size,
            cfg.render,
        )
        out.append((ctype, pm))
    return out


# ---------------------------------------------------------------------------
# marginal likelihood


@dataclass
class MarginalEstimate:
    log_lower_bound: float
    per_parse_terms: list[float]
    dims: list[int]
    image_size: tuple[int, int]
    flags: list[dict]
    dropped: int

    @property
    def ll_per_dim(self) -> float:
        return ll_per_dim(self.log_lower_bound, *self.image_size)

    def to_dict(self) -> dict:
        return {
            "schema": "gns/1",
            "log_lower_bound": self.log_lower_bound,
            "per_parse_terms": self.per_parse_terms,
            "dims": self.dims,
            "image_size": list(self.image_size),
            "ll_per_dim": self.ll_per_dim,
            "flags": self.flags,
            "dropped": self.dropped,
            "reference": FULL_SCALE_REFERENCE,
        }


def marginal_log_lik(
    parses: list[Parse],
    image: Array,
    weights: NetworkWeights,
    noise: TokenNoiseParams,
    cfg: RunConfig,
) -> MarginalEstimate:
    """Lower bound on log P(image): a Gaussian-curvature integral at each
    parse's optimum, summed over distinct discrete configurations.

    Parses sharing a discrete configuration keep only their best-scoring
    mode (the bound sums each configuration once); a parse whose curvature
    evaluation fails is dropped with a flag.
    """
    if not parses:
        raise ContractError("no parses")
    by_discrete: dict[tuple, Parse] = {}
    for p in parses:
        key = latent_split_of(p).discrete_key()
        if key not in by_discrete or p.log_weight > by_discrete[key].log_weight:
            by_discrete[key] = p

    terms: list[float] = []
    dims: list[int] = []
    flags: list[dict] = []
    dropped = 0
    for key, parse in sorted(by_discrete.items(), key=lambda kv: -kv[1].log_weight):
        try:
            f0, grad_fn, template = joint_gradient_fn(parse, image, weights, noise, cfg)
            term: LaplaceTerm = laplace_log_integral(
                f0,
                grad_fn,
                template.flatten(),
                rel_step=cfg.tasks.hessian_step,
                jitter0=cfg.tasks.hessian_jitter,
            )
        except NumericalError as err:
            dropped += 1
            flags.append({"dropped": True, "reason": str(err)})
            continue
        terms.append(term.log_integral)
        dims.append(term.dim)
        flags.append({"jittered": term.jittered, "jitter": term.jitter})
    if not terms:
        raise NumericalError("every parse was dropped; no marginal estimate")
    size = cfg.canvas_size
    return MarginalEstimate(
        log_lower_bound=logsumexp_values(terms),
        per_parse_terms=terms,
        dims=dims,
        image_size=(size, size),
        flags=flags,
        dropped=dropped,
    )
