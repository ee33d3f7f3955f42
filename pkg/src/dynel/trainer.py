"""Joint training: REINFORCE over mention order, margin loss over entities.

One sampled rollout produces everything an update needs.  During training
the history and linked-entity list are teacher-forced to gold while the
correctness flags record what the selector would actually have picked;
during evaluation predicted entities populate the history and action
selection is greedy.  The combined update descends

    margin_loss  -  rl_weight * mean_episodes( sum_t R(t) * log pi(a_t) )

which realises the ascent rule on the ordering objective alongside the
supervised entity loss.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Document, EmbeddingStore
from .local_attn import context_feature, local_scores_attn
from .model import ModelParams, build_model, save_checkpoint
from .policy import (
    ActionWindow,
    LinkingState,
    action_representation,
    advance,
    select_action,
)
from .rewards import (
    EpisodeOutcome,
    TransitionRewards,
    reward_trace,
)
from .selector import candidate_distribution

__all__ = [
    "TrainConfig",
    "Episode",
    "Adam",
    "rollout",
    "policy_objective",
    "reinforce_step",
    "margin_loss",
    "train",
    "TrainResult",
]

log = logging.getLogger(__name__)

GAMMA1_GRID = (1e-3, 7.5e-4, 5e-4, 2.5e-4, 1e-4)
WINDOW_GRID = (2, 3, 4, 5, 6, 7, None)  # None = whole document
REWARD_KINDS = ("r1", "r2-1", "r2-2", "r3")


@dataclass(frozen=True)
class TrainConfig:
    """All knobs of one run.  Defaults are the documented paper profile;
    tests and desk experiments override sizes downward."""

    gamma: float = 0.9
    rl_weight: float = 1e-4            # weight of the ordering objective
    margin: float = 0.01
    lr: float = 2e-4
    lr_after: float = 1e-4
    val_acc_threshold: float = 0.9
    epochs: int = 300
    window: int | None = 4             # None = unrestricted (whole document)
    policy_top_k: int = 7
    selector_top_k: int = 7
    reward: str = "r1"                 # r1 | r2-1 | r2-2 | r3
    transition: tuple[float, float, float, float] = (0.0, -2.0, -1.0, 0.0)
    seed: int = 0
    episodes_per_doc: int = 2
    local_model: str = "attn"          # attn | transformer
    features: tuple[str, ...] = ("coherence", "prior", "type", "neighborhood", "local")
    feature_norm: bool = True
    fusion: str = "ffn"
    fusion_hidden: int = 32
    top_words: int = 25
    drop_rate: float = 0.1
    # transformer sizes (paper profile)
    encoder_layers: int = 4
    attention_heads: int = 6
    head_dim: int = 50
    model_dim: int = 300
    encoder_ff_dim: int = 600
    head_hidden: int = 100
    max_seq_len: int = 512
    max_candidates: int = 8

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if self.rl_weight < 0:
            raise ValueError("rl_weight must be >= 0")
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1 or None")
        if self.reward not in REWARD_KINDS:
            raise ValueError(f"reward must be one of {REWARD_KINDS}")
        if self.episodes_per_doc < 1:
            raise ValueError("episodes_per_doc must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = "L" if self.window is None else self.window
        d["features"] = list(self.features)
        d["transition"] = list(self.transition)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("window") in ("L", "l"):
            d["window"] = None
        if "features" in d:
            d["features"] = tuple(d["features"])
        if "transition" in d:
            d["transition"] = tuple(float(x) for x in d["transition"])
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def transition_rewards(self) -> TransitionRewards:
        return TransitionRewards(*self.transition)


@dataclass
class Episode:
    """One full pass over a document's mentions."""

    doc_id: str
    order: tuple[int, ...]
    log_probs: list[Tensor]
    flags: tuple[bool, ...]
    predicted: tuple[str, ...]
    predicted_prob: tuple[float, ...]
    history_entities: tuple[str, ...]
    rewards: tuple[float, ...]
    sampled: bool
    margin: Tensor | None = None
    margin_terms: int = 0


class _DocCache:
    """Per-document forward tensors shared by the episodes of one update."""

    def __init__(self, doc: Document, store: EmbeddingStore, params: ModelParams,
                 mode: str, rng: np.random.Generator | None):
        self.doc = doc
        self.mention_repr: dict[int, Tensor] = {}
        self.local_feature: dict[int, Tensor] = {}
        self.action_rep: dict[int, Tensor] = {}
        for m in doc.mentions:
            feat = context_feature(m, store, params.local_attn)
            self.mention_repr[m.position] = feat
            if params.local_model == "attn":
                raw = local_scores_attn(m, store, params.local_attn, feat=feat)
                local_feat, weights = raw, ad.softmax(raw)
            else:
                local_feat, weights = params.local_scores(m, store, mode=mode, rng=rng)
            self.local_feature[m.position] = local_feat
            cand_mat = Tensor(np.stack([store.entity(c.entity_id) for c in m.candidates]))
            self.action_rep[m.position] = action_representation(feat, cand_mat, weights)


def rollout(
    doc: Document,
    store: EmbeddingStore,
    params: ModelParams,
    config: TrainConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    order: Sequence[int] | None = None,
    score_order: bool = False,
    cache: _DocCache | None = None,
) -> Episode:
    """Roll one episode; ``order`` forces the mention sequence.

    Forced orders bypass the policy entirely unless ``score_order`` is set,
    in which case the policy distribution is still evaluated and the forced
    action's log-probability recorded (the order must then respect the
    window discipline).  Train mode samples actions and teacher-forces gold
    entities into the history; eval mode is greedy with predicted history.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    training = mode == "train"
    if training and rng is None:
        raise ValueError("train mode needs an rng")
    mentions = {m.position: m for m in doc.mentions}
    n_mentions = len(doc.mentions)
    if order is not None:
        if sorted(order) != sorted(mentions):
            raise ValueError("forced order must be a permutation of mention positions")

    if cache is None:
        cache = _DocCache(doc, store, params, mode, rng)

    window_size = config.window if config.window is not None else n_mentions
    window = ActionWindow(window_size, tuple(sorted(mentions)))
    state = LinkingState.initial(params.policy)

    chosen_order: list[int] = []
    log_probs: list[Tensor] = []
    flags: list[bool] = []
    predicted: list[str] = []
    predicted_prob: list[float] = []
    history_entities: list[str] = []
    margin_terms: list[Tensor] = []

    for step in range(n_mentions):
        if order is not None and not score_order:
            pos = order[step]
        else:
            pos, logp, _ = select_action(
                state, window, cache.action_rep, params.policy,
                mode="sample" if training else "greedy", rng=rng,
                force=order[step] if order is not None else None,
            )
            log_probs.append(logp)
        mention = mentions[pos]
        chosen_order.append(pos)

        probs = candidate_distribution(
            mention,
            tuple(history_entities),
            store,
            params.selector,
            cache.local_feature[pos],
            training=training,
            rng=rng,
        )
        pick = int(np.argmax(probs.data))
        pick_id = mention.candidates[pick].entity_id
        predicted.append(pick_id)
        predicted_prob.append(float(probs.data[pick]))
        flags.append(pick_id == mention.gold)

        if training:
            gold_idx = next(
                (i for i, c in enumerate(mention.candidates) if c.entity_id == mention.gold),
                None,
            )
            if gold_idx is None:
                log.debug("mention %s: gold %r not in candidates; margin term skipped",
                          mention.id, mention.gold)
            else:
                gold_prob = ad.item(probs, gold_idx)
                hinge = ad.relu(probs - gold_prob + config.margin)
                margin_terms.append(ad.tsum(hinge))

        linked_id = mention.gold if training else pick_id
        if training:
            assert linked_id == mention.gold  # teacher forcing invariant
        history_entities.append(linked_id)
        if order is None or score_order:
            pair = ad.concat([cache.mention_repr[pos], Tensor(store.entity(linked_id))])
            state, window = advance(state, window, pos, pair, mention.id, linked_id)
        else:
            # bypassed orders skip the policy state and its window discipline
            window = ActionWindow(window.window_size,
                                  tuple(p for p in window.unresolved if p != pos))

    outcome = EpisodeOutcome(tuple(flags), gamma=config.gamma)
    rewards = reward_trace(
        config.reward, outcome,
        lam=config.transition_rewards(),
        per_step_prob=tuple(predicted_prob),
    )

    margin = None
    if margin_terms:
        margin = margin_terms[0]
        for term in margin_terms[1:]:
            margin = ad.add(margin, term)

    return Episode(
        doc_id=doc.id,
        order=tuple(chosen_order),
        log_probs=log_probs,
        flags=tuple(flags),
        predicted=tuple(predicted),
        predicted_prob=tuple(predicted_prob),
        history_entities=tuple(history_entities),
        rewards=rewards,
        sampled=training and order is None,
        margin=margin,
        margin_terms=len(margin_terms),
    )


def policy_objective(episodes: Sequence[Episode]) -> Tensor:
    """Monte-Carlo ordering objective: mean over episodes of sum_t R(t) log pi."""
    if not episodes:
        raise ValueError("no episodes")
    terms: list[Tensor] = []
    for ep in episodes:
        total: Tensor | None = None
        for r, logp in zip(ep.rewards, ep.log_probs):
            piece = logp * r
            total = piece if total is None else ad.add(total, piece)
        if total is not None:
            terms.append(total)
    if not terms:
        return Tensor(0.0)
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return acc * (1.0 / len(episodes))


def reinforce_step(episodes: Sequence[Episode], scale: float = 1.0) -> float:
    """Accumulate descent gradients of the negated ordering objective.

    A subsequent ``theta -= lr * grad`` step then ascends the objective,
    which is exactly the classic update rule.  Returns the Monte-Carlo
    objective estimate.
    """
    for ep in episodes:
        if ep.log_probs and not ep.sampled:
            raise ValueError(
                "reinforce_step needs sampled episodes; greedy rollouts carry no "
                "exploration signal"
            )
    obj = policy_objective(episodes)
    ad.backward(obj * (-scale))
    return float(obj.data)


def margin_loss(
    doc: Document,
    store: EmbeddingStore,
    params: ModelParams,
    config: TrainConfig,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Hinge ranking loss over one teacher-forced pass of the document."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    ep = rollout(doc, store, params, config, mode="train", rng=rng)
    return ep.margin if ep.margin is not None else Tensor(0.0)


class Adam:
    """Adam over a fixed parameter list (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, params: Sequence[Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1**self.t)
            vhat = self.v[i] / (1 - b2**self.t)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)


@dataclass
class TrainResult:
    params: ModelParams
    metrics: list[dict]
    best_val_accuracy: float
    config: TrainConfig


def _accuracy(episodes: Sequence[Episode]) -> float:
    total = sum(len(ep.flags) for ep in episodes)
    correct = sum(sum(ep.flags) for ep in episodes)
    return correct / total if total else 0.0


def evaluate(
    docs: Sequence[Document],
    store: EmbeddingStore,
    params: ModelParams,
    config: TrainConfig,
) -> list[Episode]:
    """Greedy predicted-history rollouts (no gradients recorded)."""
    with ad.no_grad():
        return [rollout(doc, store, params, config, mode="eval") for doc in docs]


def train(
    train_docs: Sequence[Document],
    val_docs: Sequence[Document],
    store: EmbeddingStore,
    config: TrainConfig,
    params: ModelParams | None = None,
    checkpoint_on_divergence: str | None = None,
) -> TrainResult:
    """Full training loop; returns the best-validation parameters."""
    from .local_transformer import TransformerConfig

    init_rng, data_rng = np.random.default_rng(config.seed).spawn(2)
    if params is None:
        params = build_model(
            store,
            init_rng,
            local_model=config.local_model,
            top_words=config.top_words,
            policy_top_k=config.policy_top_k,
            selector_top_k=config.selector_top_k,
            fusion_hidden=config.fusion_hidden,
            features=config.features,
            feature_norm=config.feature_norm,
            fusion=config.fusion,
            transformer_config=TransformerConfig(
                layers=config.encoder_layers,
                heads=config.attention_heads,
                head_dim=config.head_dim,
                model_dim=config.model_dim,
                ff_dim=config.encoder_ff_dim,
                hidden=config.head_hidden,
                max_seq_len=config.max_seq_len,
                max_candidates=config.max_candidates,
                drop_rate=config.drop_rate,
            ) if config.local_model == "transformer" else None,
        )
    optimizer = Adam(params.parameters())

    metrics: list[dict] = []
    best_acc = -1.0
    best_arrays = params.snapshot()
    lr = config.lr
    lr_dropped = False

    for epoch in range(config.epochs):
        doc_order = data_rng.permutation(len(train_docs))
        epoch_margin = 0.0
        epoch_objective = 0.0
        for di in doc_order:
            doc = train_docs[int(di)]
            cache = _DocCache(doc, store, params, "train", data_rng)
            episodes = [
                rollout(doc, store, params, config, mode="train", rng=data_rng, cache=cache)
                for _ in range(config.episodes_per_doc)
            ]
            margins = [ep.margin for ep in episodes if ep.margin is not None]
            loss: Tensor = Tensor(0.0)
            if margins:
                acc = margins[0]
                for m in margins[1:]:
                    acc = ad.add(acc, m)
                loss = acc * (1.0 / len(margins))
            obj = policy_objective(episodes)
            loss = ad.add(loss, obj * (-config.rl_weight))
            if not np.isfinite(loss.data):
                if checkpoint_on_divergence:
                    save_checkpoint(params, checkpoint_on_divergence,
                                    meta={"diverged_at_epoch": epoch, "doc": doc.id})
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, document {doc.id}"
                )
            optimizer.zero_grad()
            ad.backward(loss)
            optimizer.step(lr)
            epoch_margin += float(loss.data)
            epoch_objective += float(obj.data)

        val_eps = evaluate(val_docs, store, params, config) if val_docs else []
        val_acc = _accuracy(val_eps) if val_eps else float("nan")
        if val_eps and val_acc > best_acc:
            best_acc = val_acc
            best_arrays = params.snapshot()
        if not lr_dropped and val_eps and val_acc > config.val_acc_threshold:
            lr = config.lr_after
            lr_dropped = True
        metrics.append(
            {
                "epoch": epoch,
                "train_loss": epoch_margin / max(len(train_docs), 1),
                "ordering_objective": epoch_objective / max(len(train_docs), 1),
                "ordering_objective_abs": abs(epoch_objective) / max(len(train_docs), 1),
                "val_accuracy": val_acc,
                "lr": lr,
                "seed": config.seed,
            }
        )

    if val_docs:
        params.restore(best_arrays)
    return TrainResult(params=params, metrics=metrics,
                       best_val_accuracy=best_acc, config=config)
