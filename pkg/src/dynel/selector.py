"""Candidate entity selection from fused per-candidate features.

Five scalar features per candidate: coherence with previously linked
entities, the mention-entity prior, a pluggable type score, coherence
with the KG neighborhood of the linked entities, and the local score.
Features can be individually disabled, optionally z-normalised across the
candidate set, and are fused either by a small feed-forward network or by
a plain sum (handy for analytic oracles).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiagonalBilinear, Tensor
from .corpus import EmbeddingStore, Mention
from .nn import FeedForward

__all__ = [
    "SelectorParams",
    "FEATURE_NAMES",
    "linked_context_feature",
    "coherence_score",
    "coherence_scores",
    "neighborhood_scores",
    "candidate_distribution",
]

FEATURE_NAMES = ("coherence", "prior", "type", "neighborhood", "local")


@dataclass
class SelectorParams:
    linked_coherence: DiagonalBilinear      # candidate vs pooled linked entities
    neighborhood_coherence: DiagonalBilinear  # candidate vs pooled KG neighborhood
    fusion: FeedForward | None              # None -> plain sum of features
    top_entities: int = 7
    features: tuple[str, ...] = FEATURE_NAMES
    feature_norm: bool = True

    @classmethod
    def build(
        cls,
        dim: int,
        rng: np.random.Generator,
        hidden: int = 32,
        top_entities: int = 7,
        features: tuple[str, ...] = FEATURE_NAMES,
        feature_norm: bool = True,
        fusion: str = "ffn",
    ) -> "SelectorParams":
        unknown = set(features) - set(FEATURE_NAMES)
        if unknown:
            raise ValueError(f"unknown selector features: {sorted(unknown)}")
        if not features:
            raise ValueError("at least one selector feature is required")
        if fusion == "ffn":
            net = FeedForward.build([len(features), hidden, 1], rng, ["relu", "none"])
        elif fusion == "sum":
            net = None
        else:
            raise ValueError(f"unknown fusion mode {fusion!r}")
        return cls(
            DiagonalBilinear.ones(dim),
            DiagonalBilinear.ones(dim),
            net,
            top_entities,
            tuple(features),
            feature_norm,
        )

    def parameters(self) -> dict[str, Tensor]:
        out = {
            "selector.linked_coherence": self.linked_coherence.diag,
            "selector.neighborhood_coherence": self.neighborhood_coherence.diag,
        }
        if self.fusion is not None:
            for i, p in enumerate(self.fusion.parameters()):
                out[f"selector.fusion.{i}"] = p
        return out


def _attention_pool(
    cand_mat: Tensor, pool_vecs: np.ndarray, bilinear: DiagonalBilinear, top_k: int
) -> Tensor:
    """Pool ``pool_vecs`` rows, attended by their best candidate match."""
    pool = Tensor(pool_vecs)
    table = ad.matmul(cand_mat, ad.transpose(ad.mul(pool, bilinear.diag)))
    scores = ad.tmax(table, axis=0)
    if pool_vecs.shape[0] > top_k:
        keep = np.sort(np.argsort(-scores.data, kind="stable")[:top_k])
        scores = ad.gather(scores, keep)
        pool = ad.gather_rows(pool, keep)
    weights = ad.softmax(scores)
    return ad.matmul(weights, pool)


def linked_context_feature(
    cand_mat: Tensor,
    linked_ids: tuple[str, ...],
    store: EmbeddingStore,
    params: SelectorParams,
) -> Tensor:
    """Pooled vector of previously linked entities; zeros when none exist."""
    if not linked_ids:
        return Tensor(np.zeros(store.dim))
    vecs = np.stack([store.entity(e) for e in linked_ids])
    return _attention_pool(cand_mat, vecs, params.linked_coherence, params.top_entities)


def coherence_score(candidate_vec: Tensor, pooled: Tensor, params: SelectorParams) -> Tensor:
    return ad.bilinear_score(candidate_vec, params.linked_coherence, pooled)


def coherence_scores(cand_mat: Tensor, pooled: Tensor, params: SelectorParams) -> Tensor:
    return ad.matmul(cand_mat, ad.mul(params.linked_coherence.diag, pooled))


def neighborhood_scores(
    cand_mat: Tensor,
    linked_ids: tuple[str, ...],
    store: EmbeddingStore,
    params: SelectorParams,
) -> Tensor:
    """Coherence with the union of KG neighbors of the linked entities."""
    n = cand_mat.data.shape[0]
    neighbor_ids = sorted(set().union(*[store.neighbors(e) for e in linked_ids], set()))
    if not neighbor_ids:
        return Tensor(np.zeros(n))
    vecs = np.stack([store.entity(e) for e in neighbor_ids])
    pooled = _attention_pool(cand_mat, vecs, params.neighborhood_coherence, params.top_entities)
    return ad.matmul(cand_mat, ad.mul(params.neighborhood_coherence.diag, pooled))


def _znorm_columns(mat: Tensor) -> Tensor:
    n = mat.data.shape[0]
    mean = ad.tsum(mat, axis=0) * (1.0 / n)
    centered = ad.sub(mat, mean)
    var = ad.tsum(ad.mul(centered, centered), axis=0) * (1.0 / n)
    return ad.div(centered, ad.sqrt(var + 1e-12))


def candidate_distribution(
    mention: Mention,
    linked_ids: tuple[str, ...],
    store: EmbeddingStore,
    params: SelectorParams,
    local_scores: Tensor,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Probability over the mention's candidates, in candidate order."""
    n = len(mention.candidates)
    cand_mat = Tensor(np.stack([store.entity(c.entity_id) for c in mention.candidates]))
    if local_scores.data.shape != (n,):
        raise ad.ShapeError("local_scores must hold one value per candidate")

    columns: list[Tensor] = []
    for name in params.features:
        if name == "coherence":
            pooled = linked_context_feature(cand_mat, linked_ids, store, params)
            columns.append(coherence_scores(cand_mat, pooled, params))
        elif name == "prior":
            columns.append(Tensor(mention.priors))
        elif name == "type":
            columns.append(
                Tensor(
                    np.array(
                        [store.type_score(mention.id, c.entity_id) for c in mention.candidates]
                    )
                )
            )
        elif name == "neighborhood":
            columns.append(neighborhood_scores(cand_mat, linked_ids, store, params))
        elif name == "local":
            columns.append(local_scores)

    feats = ad.transpose(ad.stack(columns))
    if params.feature_norm:
        feats = _znorm_columns(feats)
    if params.fusion is None:
        logits = ad.tsum(feats, axis=1)
    else:
        logits = ad.reshape(params.fusion.apply(feats, training=training, rng=rng), (n,))
    return ad.softmax(logits)
