"""Autoregressive concept prior over character drawings.

A drawing is generated one stroke at a time with a grayscale canvas as
memory: the canvas conditions a mixture-density location head for the next
stroke's start, a recurrent mixture-density stroke model (with additive
attention over the encoded canvas) for its offsets, and a termination head
that decides whether the character is finished. Scoring teacher-forces the
same loop on a drawing's own strokes, so the exact log-density and its
gradients (including paths through the rendered canvases) are available.

Scoring batches arbitrary sets of drawings into one graph; the canvases of
every drawing are encoded in a single CNN pass, strokes are scored in a
padded, masked recurrent unroll, and per-drawing totals come from segment
sums. This keeps the per-drawing overhead small enough for single-core use.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RenderConfig, RunConfig
from .drawing import CharacterType
from .errors import ContractError, NumericalError
from .gmm import GmmParams, SamplerConfig, gmm_sample
from .nets import (
    NetworkWeights,
    WeightTape,
    attention_keys,
    attention_read,
    encode_canvases,
    flatten_encoding,
    gmm_params_from_raw,
    init_weights,
    location_head_raw,
    lstm_step,
    mdn_log_pdf_rows,
    mdn_pieces,
    stroke_head_raw,
    termination_head_logit,
)
from .render import blank_canvas, f_render_t
from .rng import substream

Array = np.ndarray


def _stable_sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@dataclass
class TypeTensors:
    """Tape-facing view of one drawing's continuous parameters."""

    starts: list[Tensor]  # each (2,)
    rels: list[Tensor]  # each (d_i + 1, 2); row 0 must be (0, 0)

    @property
    def kappa(self) -> int:
        return len(self.starts)


def tensors_from_type(ctype: CharacterType) -> TypeTensors:
    """Constant-leaf view (training/scoring of fixed drawings)."""
    return TypeTensors(
        [ad.constant(s) for s in ctype.starts],
        [ad.constant(t) for t in ctype.trajectories],
    )


def tensors_with_free_coords(starts: list[Tensor], free_trajs: list[Tensor]) -> TypeTensors:
    """Leaf view for continuous optimization: the pinned first relative point
    stays a constant; only rows 1..d of each trajectory are free."""
    rels = [ad.concat([ad.constant(np.zeros((1, 2))), ft], axis=0) for ft in free_trajs]
    return TypeTensors(list(starts), rels)


# ---------------------------------------------------------------------------
# batched teacher-forced log-density


def type_log_prob_batch(
    tape: WeightTape, items: list[TypeTensors], rcfg: RenderConfig
) -> Tensor:
    """Joint log-density of each drawing under the prior; returns (T,).

    Densities over start locations and offsets are evaluated in normalized
    canvas units and corrected to pixel units with the constant rescaling
    Jacobian; stroke-stop and character-termination factors are Bernoulli.
    """
    if not items:
        raise ContractError("empty batch")
    weights = tape.weights
    arch = weights.arch
    size = weights.canvas_size
    scale = weights.norm_scale
    k = arch.mixture_components

    # -- canvases ------------------------------------------------------
    blank = ad.constant(blank_canvas(size))
    canvases: list[Tensor] = []
    base_rows: list[int] = []
    for it in items:
        base_rows.append(len(canvases))
        canvas = blank
        canvases.append(canvas)
        for s, rel in zip(it.starts, it.rels):
            ctrl = ad.add(ad.reshape(s, (1, 2)), rel)
            canvas = f_render_t(ctrl, canvas, size, rcfg)
            canvases.append(canvas)

    stack = ad.concat([ad.reshape(c, (1, size, size)) for c in canvases], axis=0)
    enc = encode_canvases(tape, stack)
    enc_flat = flatten_encoding(enc)

    # -- location terms --------------------------------------------------
    loc_rows, loc_pts, loc_item = [], [], []
    for t, it in enumerate(items):
        for i, s in enumerate(it.starts):
            loc_rows.append(base_rows[t] + i)
            loc_pts.append(ad.reshape(s, (1, 2)))
            loc_item.append(t)
    loc_in = enc_flat[np.asarray(loc_rows)]
    loc_raw = location_head_raw(tape, loc_in)
    y_norm = ad.sub(ad.mul(ad.concat(loc_pts, axis=0), scale), 1.0)
    loc_terms = mdn_log_pdf_rows(*mdn_pieces(loc_raw, k, arch.sigma_floor), y_norm)

    # -- termination terms ------------------------------------------------
    term_rows, term_sign, term_item = [], [], []
    for t, it in enumerate(items):
        kappa = it.kappa
        for i in range(1, kappa + 1):
            term_rows.append(base_rows[t] + i)
            # sigmoid(logit) is the stop probability; last stroke stops
            term_sign.append(-1.0 if i == kappa else 1.0)
            term_item.append(t)
    term_logit = ad.reshape(termination_head_logit(tape, enc_flat[np.asarray(term_rows)]), (-1,))
    term_terms = ad.mul(-1.0, ad.softplus(ad.mul(ad.constant(np.asarray(term_sign)), term_logit)))

    # -- stroke trajectories ----------------------------------------------
    stroke_rows, stroke_item, stroke_d = [], [], []
    stroke_y, stroke_deltas = [], []
    for t, it in enumerate(items):
        for i, (s, rel) in enumerate(zip(it.starts, it.rels)):
            d = rel.shape[0] - 1
            if d < 1:
                raise ContractError("stroke needs at least one offset")
            stroke_rows.append(base_rows[t] + i)
            stroke_item.append(t)
            stroke_d.append(d)
            stroke_y.append(ad.reshape(s, (1, 2)))
            stroke_deltas.append(ad.sub(rel[1:], rel[:-1]))  # (d, 2) px
    n_strokes = len(stroke_rows)
    maxd = max(stroke_d)

    enc_strokes = enc[np.asarray(stroke_rows)]
    keys, values = attention_keys(tape, enc_strokes)
    ys = ad.sub(ad.mul(ad.concat(stroke_y, axis=0), scale), 1.0)  # (B, 2)

    zero_row = ad.constant(np.zeros((1, 2)))
    prev_stack, target_stack = [], []
    for d, deltas in zip(stroke_d, stroke_deltas):
        pieces_t = [deltas]
        if maxd - d > 0:
            pieces_t.append(ad.constant(np.zeros((maxd - d, 2))))
        target = ad.concat(pieces_t, axis=0) if len(pieces_t) > 1 else deltas
        prev_pieces = [zero_row, deltas]
        if maxd - d - 1 > 0:
            prev_pieces.append(ad.constant(np.zeros((maxd - d - 1, 2))))
        prev = ad.concat(prev_pieces, axis=0)[:maxd]
        target_stack.append(ad.reshape(target, (1, maxd, 2)))
        prev_stack.append(ad.reshape(prev, (1, maxd, 2)))
    targets = ad.mul(ad.concat(target_stack, axis=0), scale)  # (B, maxd, 2) normalized
    prevs = ad.mul(ad.concat(prev_stack, axis=0), scale)

    d_arr = np.asarray(stroke_d)
    h = ad.constant(np.zeros((n_strokes, arch.lstm_hidden)))
    c = ad.constant(np.zeros((n_strokes, arch.lstm_hidden)))
    traj_total: Tensor | None = None
    for step in range(maxd):
        read = attention_read(tape, keys, values, h)
        x = ad.concat([prevs[:, step, :], ys, read], axis=1)
        h, c = lstm_step(tape, x, h, c)
        raw = stroke_head_raw(tape, h)
        logpdf = mdn_log_pdf_rows(*mdn_pieces(raw[:, : 6 * k], k, arch.sigma_floor), targets[:, step, :])
        stop_logit = raw[:, 6 * k]
        signs = np.where(d_arr == step + 1, -1.0, 1.0)  # last offset stops
        stop_terms = ad.mul(-1.0, ad.softplus(ad.mul(ad.constant(signs), stop_logit)))
        mask = ad.constant((d_arr > step).astype(np.float64))
        contrib = ad.mul(mask, ad.add(logpdf, stop_terms))
        traj_total = contrib if traj_total is None else ad.add(traj_total, contrib)

    # -- per-item totals ---------------------------------------------------
    n_items = len(items)
    total = ad.segment_sum(loc_terms, np.asarray(loc_item), n_items)
    total = ad.add(total, ad.segment_sum(term_terms, np.asarray(term_item), n_items))
    total = ad.add(total, ad.segment_sum(traj_total, np.asarray(stroke_item), n_items))
    jac = np.zeros(n_items)
    for t, it in enumerate(items):
        n_points = it.kappa + sum(r.shape[0] - 1 for r in it.rels)
        jac[t] = n_points * weights.coord_jacobian
    return ad.add(total, ad.constant(jac))


def type_log_prob(ctype: CharacterType, weights: NetworkWeights, rcfg: RenderConfig) -> float:
    """Exact log-density of one drawing (plain number)."""
    ctype.validate()
    tape = WeightTape(weights)
    return float(type_log_prob_batch(tape, [tensors_from_type(ctype)], rcfg).value[0])


# ---------------------------------------------------------------------------
# ancestral sampling


def generate_type(
    weights: NetworkWeights,
    sampler: SamplerConfig,
    rcfg: RenderConfig,
    rng: np.random.Generator,
) -> CharacterType:
    """Sample a new concept stroke-by-stroke with the canvas as memory.

    The stroke and termination caps guarantee termination regardless of what
    the learned stop probabilities do.
    """
    arch = weights.arch
    size = weights.canvas_size
    scale = weights.norm_scale
    k = arch.mixture_components
    temp = sampler.temperature
    tape = WeightTape(weights)

    canvas = blank_canvas(size)
    starts: list[Array] = []
    trajs: list[Array] = []
    for stroke_i in range(arch.max_strokes):
        enc = encode_canvases(tape, ad.constant(canvas[None, :, :]))
        enc_flat = flatten_encoding(enc)
        loc_raw = location_head_raw(tape, enc_flat).value[0]
        loc_gmm = gmm_params_from_raw(loc_raw, k, arch.sigma_floor)
        y_norm = gmm_sample(loc_gmm, sampler, rng)
        y = (y_norm + 1.0) / scale

        keys, values = attention_keys(tape, enc)
        h = ad.constant(np.zeros((1, arch.lstm_hidden)))
        c = ad.constant(np.zeros((1, arch.lstm_hidden)))
        prev = np.zeros(2)
        deltas_px: list[Array] = []
        for _ in range(arch.max_steps):
            read = attention_read(tape, keys, values, h)
            x = ad.constant(np.concatenate([prev, y_norm])[None, :])
            x = ad.concat([x, read], axis=1)
            h, c = lstm_step(tape, x, h, c)
            raw = stroke_head_raw(tape, h).value[0]
            gmm = gmm_params_from_raw(raw[: 6 * k], k, arch.sigma_floor)
            delta_norm = gmm_sample(gmm, sampler, rng)
            deltas_px.append(delta_norm / scale)
            prev = delta_norm
            stop_p = _stable_sigmoid(raw[6 * k] / temp)
            if rng.random() < stop_p:
                break
        rel = np.concatenate([np.zeros((1, 2)), np.cumsum(deltas_px, axis=0)], axis=0)
        starts.append(y)
        trajs.append(rel)

        ctrl = ad.constant(y[None, :] + rel)
        canvas = f_render_t(ctrl, ad.constant(canvas), size, rcfg).value
        term_logit = termination_head_logit(
            tape, flatten_encoding(encode_canvases(tape, ad.constant(canvas[None, :, :])))
        ).value[0, 0]
        term_p = _stable_sigmoid(term_logit / temp)
        if rng.random() < term_p:
            break
    return CharacterType(starts, trajs)


# ---------------------------------------------------------------------------
# maximum-likelihood training


@dataclass
class TrainReport:
    epochs: int
    train_nll: list[float] = field(default_factory=list)
    heldout_nll: list[float] = field(default_factory=list)
    init_heldout_nll: float = float("nan")
    init_train_nll: float = float("nan")
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "train_nll": self.train_nll,
            "heldout_nll": self.heldout_nll,
            "init_train_nll": self.init_train_nll,
            "init_heldout_nll": self.init_heldout_nll,
            "seconds": self.seconds,
        }


def dataset_nll(
    corpus: list[CharacterType], weights: NetworkWeights, rcfg: RenderConfig, chunk: int = 32
) -> float:
    """Mean negative log-density over a corpus (forward only)."""
    if not corpus:
        raise ContractError("empty corpus")
    tape = WeightTape(weights)
    total = 0.0
    for i in range(0, len(corpus), chunk):
        part = [tensors_from_type(c) for c in corpus[i : i + chunk]]
        total += float(-type_log_prob_batch(tape, part, rcfg).value.sum())
    return total / len(corpus)


def _clip_global_norm(grads: dict[str, Array], max_norm: float) -> dict[str, Array]:
    total = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        return {k: g * factor for k, g in grads.items()}
    return grads


def train_mle(
    corpus: list[CharacterType],
    cfg: RunConfig,
    weights: NetworkWeights | None = None,
    log=None,
) -> tuple[NetworkWeights, TrainReport]:
    """Fit the prior by stochastic gradient descent on mean NLL.

    Adaptive-moment updates (step ``cfg.train.lr``), gradient-norm clipping,
    deterministic batching from the run seed. With ``canonical_order`` the
    corpus is sorted by content digest first, so the input ordering cannot
    influence batch composition. Final weights are rounded to float32
    resolution, making checkpoint round-trips lossless.
    """
    if not corpus:
        raise ContractError("empty corpus")
    tcfg = cfg.train
    rcfg = cfg.render
    if weights is None:
        weights = init_weights(cfg.arch, cfg.canvas_size, substream(cfg.seed, "train/init"))
    weights = weights.copy()

    items = list(corpus)
    if tcfg.canonical_order:
        items.sort(key=lambda c: c.digest())
    rng = substream(cfg.seed, "train/batches")
    n_hold = int(round(tcfg.holdout_fraction * len(items)))
    if n_hold > 0:
        hold_idx = set(rng.choice(len(items), size=n_hold, replace=False).tolist())
    else:
        hold_idx = set()
    train_set = [c for i, c in enumerate(items) if i not in hold_idx]
    hold_set = [c for i, c in enumerate(items) if i in hold_idx]
    if not train_set:
        raise ContractError("holdout fraction leaves no training data")

    report = TrainReport(epochs=tcfg.epochs)
    report.init_train_nll = dataset_nll(train_set, weights, rcfg)
    if hold_set:
        report.init_heldout_nll = dataset_nll(hold_set, weights, rcfg)

    m = {k: np.zeros_like(v) for k, v in weights.tensors.items()}
    v = {k: np.zeros_like(val) for k, val in weights.tensors.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    start = time.time()

    for epoch in range(tcfg.epochs):
        perm = rng.permutation(len(train_set))
        epoch_nll = 0.0
        for b0 in range(0, len(train_set), tcfg.batch_size):
            batch_ids = perm[b0 : b0 + tcfg.batch_size]
            batch = [tensors_from_type(train_set[i]) for i in batch_ids]
            tape = WeightTape(weights)
            totals = type_log_prob_batch(tape, batch, rcfg)
            loss = ad.mul(-1.0 / len(batch), ad.reduce_sum(totals))
            loss_val = float(loss.value)
            if not np.isfinite(loss_val):
                raise NumericalError(
                    f"non-finite loss in epoch {epoch}, batch starting at {b0} "
                    f"(corpus digests {[train_set[i].digest()[:8] for i in batch_ids[:3]]}...)"
                )
            epoch_nll += loss_val * len(batch)
            ad.gradient(loss, list(tape.leaves.values()))
            grads = _clip_global_norm(tape.grads(), tcfg.grad_clip)
            step += 1
            corr1 = 1.0 - beta1**step
            corr2 = 1.0 - beta2**step
            for name, g in grads.items():
                m[name] = beta1 * m[name] + (1 - beta1) * g
                v[name] = beta2 * v[name] + (1 - beta2) * g * g
                weights.tensors[name] -= (
                    tcfg.lr * (m[name] / corr1) / (np.sqrt(v[name] / corr2) + eps)
                )
        report.train_nll.append(epoch_nll / len(train_set))
        if hold_set:
            report.heldout_nll.append(dataset_nll(hold_set, weights, rcfg))
        if log is not None:
            ho = report.heldout_nll[-1] if hold_set else float("nan")
            log(f"epoch {epoch + 1}/{tcfg.epochs} train_nll={report.train_nll[-1]:.3f} heldout_nll={ho:.3f}")
    report.seconds = time.time() - start
    final = weights.quantized()
    return final, report
