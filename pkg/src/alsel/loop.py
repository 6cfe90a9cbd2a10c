"""Pool-based selection loop: init, batch selection, simulated oracle.

The loop owns all label-state mutation. Every random choice flows from a
named seed, ties break by ascending image_id, and the append-only history
lets the final labeled set be replayed exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Callable, Mapping, Sequence

import numpy as np

from .dataset import DatasetIndex, Detection, LabelState
from .density import GmmModel, fit_gmm, select_k
from .errors import DomainError
from .scoring import DEFAULT_MIN_SCORE, ImageScoreReport, Strategy, score_pool
from .weights import CategoryWeightTable, build_weight_table

STATE_VERSION = 1

DetectorAdapter = Callable[[Sequence[str], Sequence[str]], dict[str, list[Detection]]]
Evaluator = Callable[[Sequence[str]], dict[str, float]]


@dataclass
class IterationState:
    index: DatasetIndex
    labeled: list[str]
    pool: list[str]
    k: int
    t: int
    init_fraction: float
    batch_fraction: float
    seed: int
    history: list[dict] = field(default_factory=list)

    def check_partition(self) -> None:
        all_ids = set(self.index.images)
        if set(self.labeled) | set(self.pool) != all_ids or set(self.labeled) & set(self.pool):
            raise DomainError("labeled/pool sets do not partition the dataset")

    @property
    def labeled_fraction(self) -> float:
        return len(self.labeled) / len(self.index.images)


@dataclass(frozen=True)
class WeightManifest:
    weights: dict[str, float]  # image_id -> 1.0 or 2.0

    def marked_ids(self) -> list[str]:
        return sorted(i for i, w in self.weights.items() if w == 2.0)


def batch_size_for(total_images: int, fraction: float, pool_size: int) -> int:
    return min(math.ceil(fraction * total_images), pool_size)


def init_state(
    index: DatasetIndex,
    init_fraction: float,
    seed: int,
    t: int = 0,
    batch_fraction: float = 0.0,
) -> IterationState:
    """Seeded uniform initialization of the labeled set (without replacement)."""
    if not 0 < init_fraction < 1:
        raise DomainError("init_fraction must be in (0, 1)")
    ids = sorted(index.images)
    if not ids:
        raise DomainError("cannot initialize on an empty dataset")
    n_init = math.ceil(init_fraction * len(ids))
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(ids), size=n_init, replace=False).tolist())
    labeled = [ids[i] for i in chosen]
    labeled_set = set(labeled)
    pool = [i for i in ids if i not in labeled_set]
    for image_id in labeled:
        index.label_state[image_id] = LabelState.LABELED
    state = IterationState(
        index=index,
        labeled=labeled,
        pool=pool,
        k=0,
        t=t,
        init_fraction=init_fraction,
        batch_fraction=batch_fraction,
        seed=seed,
        history=[{"k": 0, "event": "init", "selected": list(labeled)}],
    )
    state.check_partition()
    return state


def select_batch(
    reports: Sequence[ImageScoreReport], state: IterationState, batch_size: int
) -> list[str]:
    """Top-scoring pool images, descending u_s, ties by ascending image_id."""
    pool = set(state.pool)
    covered = {r.image_id for r in reports}
    if covered != pool:
        raise DomainError("score reports must cover exactly the pool")
    if batch_size > len(state.pool):
        raise DomainError(f"batch size {batch_size} exceeds pool size {len(state.pool)}")
    ranked = sorted(reports, key=lambda r: (-r.u_s, r.image_id))
    return [r.image_id for r in ranked[:batch_size]]


def select_random(state: IterationState, batch_size: int, seed: int) -> list[str]:
    """Seeded uniform batch from the pool, reproducible across runs."""
    if batch_size > len(state.pool):
        raise DomainError(f"batch size {batch_size} exceeds pool size {len(state.pool)}")
    pool = sorted(state.pool)
    # fold the iteration counter in so successive batches differ
    rng = np.random.default_rng([seed, state.k])
    chosen = sorted(rng.choice(len(pool), size=batch_size, replace=False).tolist())
    return [pool[i] for i in chosen]


def apply_oracle(state: IterationState, selected: Sequence[str], record: dict | None = None) -> IterationState:
    """Reveal ground truth for selected pool images; increments k."""
    pool = set(state.pool)
    for image_id in selected:
        if image_id not in pool:
            raise DomainError(f"image {image_id!r} is not in the pool")
    selected_set = set(selected)
    if len(selected_set) != len(selected):
        raise DomainError("duplicate ids in selection")
    state.labeled = sorted(set(state.labeled) | selected_set)
    state.pool = [i for i in state.pool if i not in selected_set]
    for image_id in selected:
        state.index.label_state[image_id] = LabelState.LABELED
    state.k += 1
    entry = {"k": state.k, "event": "select", "selected": sorted(selected)}
    if record:
        entry.update(record)
    state.history.append(entry)
    state.check_partition()
    return state


def mark_double_weights(
    lc_reports: Sequence[ImageScoreReport], fraction: float
) -> WeightManifest:
    """Mark the most-uncertain labeled images for doubled training weight."""
    if not 0 < fraction < 1:
        raise DomainError("fraction must be in (0, 1)")
    ranked = sorted(lc_reports, key=lambda r: (-r.u_s, r.image_id))
    n_marked = math.ceil(fraction * len(ranked))
    weights = {r.image_id: 1.0 for r in ranked}
    for r in ranked[:n_marked]:
        weights[r.image_id] = 2.0
    return WeightManifest(weights=weights)


@dataclass(frozen=True)
class LoopConfig:
    strategy: Strategy
    init_fraction: float = 0.1
    batch_fraction: float = 0.1
    iterations: int = 4
    seed_init: int = 0
    seed_random: int = 1
    seed_gmm: int = 2
    k_min: int = 1
    k_max: int = 8
    min_score: float = DEFAULT_MIN_SCORE
    w1_floor: float = 10.0


def _fit_density(state: IterationState, cfg: LoopConfig) -> GmmModel:
    features = np.asarray(
        [(max(o.w, o.h), min(o.w, o.h)) for o in state.index.labeled_objects()],
        dtype=np.float64,
    )
    if features.size == 0:
        raise DomainError("no labeled objects to fit the size density on")
    k_max = min(cfg.k_max, features.shape[0])
    k = select_k(features, min(cfg.k_min, k_max), k_max, cfg.seed_gmm)
    return fit_gmm(features, k, cfg.seed_gmm).model


def _weight_snapshot(table: CategoryWeightTable) -> dict:
    return {
        "categories": list(table.categories),
        "n": list(table.n),
        "p": list(table.p),
        "w1": list(table.w1),
        "w2": list(table.w2),
        "sum": table.x_sum,
        "C": table.cat_count,
    }


def run_loop(
    index: DatasetIndex,
    cfg: LoopConfig,
    detector: DetectorAdapter,
    evaluator: Evaluator | None = None,
    out_dir: str | Path | None = None,
    config_digest: str = "",
) -> IterationState:
    """Run init plus T select/annotate iterations; returns the final state.

    Per-iteration artifacts (state file, selections) are persisted under
    out_dir when given; an adapter failure persists the last completed
    iteration before propagating.
    """
    state = init_state(
        index, cfg.init_fraction, cfg.seed_init, t=cfg.iterations, batch_fraction=cfg.batch_fraction
    )
    if evaluator is not None:
        state.history[0]["metrics"] = evaluator(state.labeled)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _persist(state, out, config_digest)
    n_total = len(index.images)
    for _ in range(cfg.iterations):
        try:
            record: dict = {"strategy": cfg.strategy.value}
            size = batch_size_for(n_total, cfg.batch_fraction, len(state.pool))
            if cfg.strategy is Strategy.RANDOM:
                selected = select_random(state, size, cfg.seed_random)
            else:
                detections = detector(state.labeled, state.pool)
                table = build_weight_table(state.index, cfg.w1_floor)
                model = _fit_density(state, cfg) if cfg.strategy is Strategy.WCR else None
                reports = score_pool(
                    state.pool, detections, table, model, cfg.strategy, cfg.min_score
                )
                selected = select_batch(reports, state, size)
                record["weights"] = _weight_snapshot(table)
            apply_oracle(state, selected, record)
            if evaluator is not None:
                state.history[-1]["metrics"] = evaluator(state.labeled)
        except Exception:
            if out is not None:
                _persist(state, out, config_digest)
            raise
        if out is not None:
            _persist(state, out, config_digest)
            (out / f"selected_k{state.k}.txt").write_text(
                "".join(f"{i}\n" for i in state.history[-1]["selected"])
            )
    return state


def state_to_dict(state: IterationState, config_digest: str = "") -> dict:
    return {
        "version": STATE_VERSION,
        "seed": state.seed,
        "k": state.k,
        "t": state.t,
        "config_digest": config_digest,
        "init_fraction": state.init_fraction,
        "batch_fraction": state.batch_fraction,
        "labeled": list(state.labeled),
        "pool": list(state.pool),
        "history": state.history,
    }


def _persist(state: IterationState, out: Path, config_digest: str) -> None:
    (out / "state.json").write_text(
        json.dumps(state_to_dict(state, config_digest), sort_keys=True, indent=1) + "\n"
    )


def load_state(stream: IO, index: DatasetIndex) -> IterationState:
    data = json.load(stream)
    if data.get("version") != STATE_VERSION:
        raise DomainError(f"unsupported state version {data.get('version')!r}")
    labeled = list(data["labeled"])
    for image_id in labeled:
        index.label_state[image_id] = LabelState.LABELED
    state = IterationState(
        index=index,
        labeled=labeled,
        pool=list(data["pool"]),
        k=int(data["k"]),
        t=int(data["t"]),
        init_fraction=float(data["init_fraction"]),
        batch_fraction=float(data["batch_fraction"]),
        seed=int(data["seed"]),
        history=list(data["history"]),
    )
    state.check_partition()
    return state


def replay_labeled(history: Sequence[Mapping]) -> set[str]:
    """Re-derive the labeled set from an append-only history log."""
    labeled: set[str] = set()
    for entry in history:
        labeled.update(entry["selected"])
    return labeled


def diff_histories(history_a: Sequence[Mapping], history_b: Sequence[Mapping]) -> dict:
    """Selection-overlap summary between two runs (per iteration and total)."""
    per_iteration = []
    for ea, eb in zip(history_a, history_b):
        sa, sb = set(ea["selected"]), set(eb["selected"])
        per_iteration.append(
            {
                "k": ea["k"],
                "shared": len(sa & sb),
                "only_a": len(sa - sb),
                "only_b": len(sb - sa),
            }
        )
    ta, tb = replay_labeled(history_a), replay_labeled(history_b)
    return {
        "per_iteration": per_iteration,
        "total_shared": len(ta & tb),
        "total_only_a": len(ta - tb),
        "total_only_b": len(tb - ta),
        "total_different": len(ta ^ tb),
    }


def merge_selections(history_a: Sequence[Mapping], history_b: Sequence[Mapping]) -> list[str]:
    """Union of two runs' selections, deduplicated, sorted by image_id.

    Reconstruction of a merged-selection training set; the original
    merge order is not recoverable, so ids break ties.
    """
    return sorted(replay_labeled(history_a) | replay_labeled(history_b))


def write_weight_manifest(manifest: WeightManifest, stream: IO, meta_line: str | None = None) -> None:
    if meta_line:
        stream.write(f"# {meta_line}\n")
    stream.write("image_id,weight\n")
    for image_id in sorted(manifest.weights):
        stream.write(f"{image_id},{manifest.weights[image_id]}\n")
