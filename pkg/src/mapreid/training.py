"""Training configuration and the joint metric-learning + mAP training loop."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .core import LabeledSet, cosine_similarity, l2_normalize
from .data import SyntheticSpec, pk_sampler
from .errors import InvalidConfig, MapReidError
from .evaluation import evaluate
from .histmap import BinGrid, chain_to_embeddings, map_loss_backward, map_loss_forward
from .losses import ClassifierHead, LossReport, batch_hard_triplet_loss, combine_losses, cross_entropy_loss
from .model import EmbeddingModel, SgdOptimizer, normalize_with_backward, sgd_step, step_decay

log = logging.getLogger(__name__)

LOG_HEADER = "step\tl_id\tl_triplet\tl_map\tl_total\tactive_triplets"


@dataclass
class TrainConfig:
    p: int = 16
    k: int = 4
    epochs: int = 20
    steps_per_epoch: int = 10
    learning_rate: float = 3.5e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_step: int = 0
    lr_gamma: float = 0.1
    margin: float = 0.3
    m_bins: int = 40
    bin_lo: float = -1.0
    bin_hi: float = 1.0
    tau: float = 1e-12
    w_id: float = 1.0
    w_triplet: float = 1.0
    w_map: float = 1.0
    hidden: str = "128"
    out_dim: int = 64
    seed: int = 0
    eval_every: int = 0
    max_rank: int = 20
    camera_filter: bool = False
    relabel_clothing: bool = False
    data_dir: str = ""
    # synthetic data, used when data_dir is empty
    syn_num_identities: int = 400
    syn_instances_per_identity: int = 8
    syn_dim: int = 32
    syn_intra_sigma: float = 0.3
    syn_inter_scale: float = 1.5
    syn_clothing_clusters: int = 4
    syn_clothing_shift_sigma: float = 2.0

    @property
    def steps(self):
        return self.epochs * self.steps_per_epoch

    @property
    def loss_weights(self):
        return (self.w_id, self.w_triplet, self.w_map)

    @property
    def hidden_widths(self):
        return tuple(int(w) for w in self.hidden.split(",") if w.strip())

    @property
    def grid(self):
        return BinGrid(self.m_bins, self.bin_lo, self.bin_hi)

    def synthetic_spec(self):
        return SyntheticSpec(self.syn_num_identities, self.syn_instances_per_identity, self.syn_dim,
                             self.syn_intra_sigma, self.syn_inter_scale, self.syn_clothing_clusters,
                             self.syn_clothing_shift_sigma, self.seed)

    def validate(self):
        checks = [
            (self.p >= 2, "p must be >= 2"),
            (self.k >= 2, "k must be >= 2"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.steps_per_epoch >= 1, "steps_per_epoch must be >= 1"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (0 <= self.momentum < 1, "momentum must lie in [0, 1)"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (self.lr_step >= 0, "lr_step must be >= 0"),
            (0 < self.lr_gamma <= 1, "lr_gamma must lie in (0, 1]"),
            (self.margin >= 0, "margin must be >= 0"),
            (self.m_bins >= 2, "m_bins must be >= 2"),
            (self.bin_lo < self.bin_hi, "bin_lo must be < bin_hi"),
            (self.tau > 0, "tau must be > 0"),
            (min(self.loss_weights) >= 0, "loss weights must be >= 0"),
            (self.out_dim >= 1, "out_dim must be >= 1"),
            (self.seed >= 0, "seed must be >= 0"),
            (self.eval_every >= 0, "eval_every must be >= 0"),
            (self.max_rank >= 1, "max_rank must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidConfig(msg)
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise InvalidConfig(f"{f.name} must be finite")
        try:
            widths = self.hidden_widths
        except ValueError:
            raise InvalidConfig(f"hidden must be comma-separated integers, got {self.hidden!r}") from None
        if any(w < 1 for w in widths):
            raise InvalidConfig("hidden widths must be >= 1")
        return self

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def as_text_dict(self):
        return {k: _fmt(v) for k, v in self.items()}

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(name, kind, raw):
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            low = str(raw).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return str(raw)
    except ValueError:
        raise InvalidConfig(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def parse_config_text(text):
    """``key = value`` lines (``#`` comments) into a dict of raw strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"config line {lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(file_values=None, overrides=None):
    """Defaults < config file < flag overrides; unknown keys are rejected."""
    known = {f.name: _TYPES[f.type] if isinstance(f.type, str) else f.type for f in fields(TrainConfig)}
    merged = {}
    for source in (file_values or {}, overrides or {}):
        for k, v in source.items():
            if v is None:
                continue
            if k not in known:
                raise InvalidConfig(f"unknown config key {k!r}")
            merged[k] = _coerce(k, known[k], v)
    return TrainConfig(**merged).validate()


# -- loop -----------------------------------------------------------------------

@dataclass
class TrainResult:
    model: EmbeddingModel
    head: ClassifierHead
    optimizer: SgdOptimizer
    reports: list = field(default_factory=list)
    log_lines: list = field(default_factory=list)
    evals: list = field(default_factory=list)  # (step, EvalResult)
    steps_done: int = 0


def init_model(config: TrainConfig, input_dim, num_classes):
    rng = np.random.default_rng(config.seed)
    model = EmbeddingModel.build(input_dim, (*config.hidden_widths, config.out_dim), rng)
    head = ClassifierHead.init(num_classes, config.out_dim, rng)
    opt = SgdOptimizer(config.learning_rate, config.momentum, config.weight_decay)
    return model, head, opt


def batch_stream(data: LabeledSet, config: TrainConfig):
    epoch = 0
    while True:
        for batch in pk_sampler(data, config.p, config.k, config.seed, epoch):
            yield batch
        epoch += 1


def loss_and_grads(model, head, x, labels, rows, config: TrainConfig):
    """Forward all three losses on one batch; returns the report and the parameter gradients.

    ``rows`` are dataset row ids, used so the within-batch similarity masks a
    sample against its own (possibly duplicated) copies.
    """
    f, cache = model.forward(x)
    l_id, df_id, head_grads = cross_entropy_loss(f, labels, head)
    l_t, df_t, active = batch_hard_triplet_loss(f, labels, config.margin, return_active=True)
    unit, norm_back = normalize_with_backward(f)
    sim = cosine_similarity(unit, unit, labels, labels, rows, rows)
    grid = config.grid
    l_map, state = map_loss_forward(sim, grid, config.tau)
    d_sim = map_loss_backward(state, sim, grid)
    d_q, d_g = chain_to_embeddings(d_sim, unit, unit)
    df_map = norm_back(d_q + d_g)
    w_id, w_t, w_map = config.loss_weights
    report = combine_losses(l_id, l_t, l_map, config.loss_weights, active)
    grads, _ = model.backward(cache, w_id * df_id + w_t * df_t + w_map * df_map)
    return report, grads, [w_id * g for g in head_grads]


def train(config: TrainConfig, data: LabeledSet, eval_sets=None, on_step=None):
    """Run ``config.steps`` SGD steps on P x K batches of ``data``.

    ``eval_sets`` is an optional ``(query, gallery)`` pair evaluated every
    ``eval_every`` epochs and at the end.
    """
    config.validate()
    num_classes = int(data.identity.max()) + 1
    model, head, opt = init_model(config, data.d, num_classes)
    result = TrainResult(model, head, opt)
    stream = batch_stream(data, config)
    for step in range(config.steps):
        batch = next(stream)
        rows = batch.indices
        epoch = step // config.steps_per_epoch
        lr = step_decay(config.learning_rate, epoch, config.lr_step, config.lr_gamma)
        try:
            report, grads, head_grads = loss_and_grads(
                model, head, data.embeddings[rows], data.identity[rows], rows, config)
            sgd_step(opt, model, grads, head.params(), head_grads, lr=lr)
        except MapReidError as exc:
            if exc.args:
                exc.args = (f"training step {step}: {exc.args[0]}",) + exc.args[1:]
            raise
        result.reports.append(report)
        line = report.log_line(step)
        result.log_lines.append(line)
        result.steps_done = step + 1
        if on_step is not None:
            on_step(step, report, line)
        end_of_epoch = (step + 1) % config.steps_per_epoch == 0
        if eval_sets is not None and config.eval_every and end_of_epoch and (epoch + 1) % config.eval_every == 0:
            result.evals.append((step + 1, evaluate_model(model, *eval_sets, config=config)))
    if eval_sets is not None:
        result.evals.append((result.steps_done, evaluate_model(model, *eval_sets, config=config)))
    return result


def evaluate_model(model, query: LabeledSet, gallery: LabeledSet | None = None, config=None,
                   max_rank=None, camera_filter=None):
    """Embed with ``model`` (``None`` = raw features), normalize, and run exact evaluation.

    With ``gallery=None`` the set is evaluated against itself, self-matches masked.
    """
    config = config or TrainConfig()
    max_rank = config.max_rank if max_rank is None else max_rank
    camera_filter = config.camera_filter if camera_filter is None else camera_filter
    embed = (lambda s: s.embeddings) if model is None else (lambda s: model.embed(s.embeddings))
    q = l2_normalize(embed(query))
    if gallery is None:
        idx = np.arange(query.n)
        sim = cosine_similarity(q, q, query.identity, query.identity, idx, idx)
        g_cam = query.camera
    else:
        g = l2_normalize(embed(gallery))
        sim = cosine_similarity(q, g, query.identity, gallery.identity)
        g_cam = gallery.camera
    return evaluate(sim, min(max_rank, sim.shape[1]), camera_filter, query.camera, g_cam)
