"""Evolutionary search over the classifier's system instruction.

A pool of candidate instructions is generated by an optimizer model from a
meta-prompt, scored by validation macro-F1, and refreshed iteration by
iteration: roulette-wheel selection picks parents in proportion to fitness,
and the meta-prompt directive moves from exploration to combination
(crossover/mutation) to literal refinement as the run progresses. The
classifier itself is never modified.
"""

import enum
import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeneration, NotEvaluated

logger = logging.getLogger(__name__)


class Strategy(enum.Enum):
    EXPLORATION = "exploration"
    COMBINATION = "combination"
    REFINEMENT = "refinement"


_DIRECTIVES = {
    Strategy.EXPLORATION: (
        "Generate diverse new instructions that take clearly different "
        "angles from one another."
    ),
    Strategy.COMBINATION: (
        "Create new instructions by crossover and mutation of the "
        "best-performing instructions above: combine their strongest "
        "elements and vary the details."
    ),
    Strategy.REFINEMENT: (
        "Rephrase the instructions above with literal wording adjustments, "
        "keeping their meaning intact, to find phrasings that work better."
    ),
}


@dataclass
class PromptCandidate:
    id: int
    instruction_text: str
    strategy: Strategy
    iteration_born: int
    parent_ids: tuple[int, ...] = ()
    fitness: float | None = None

    def set_fitness(self, value: float) -> None:
        if self.fitness is not None:
            raise ValueError(f"candidate {self.id} already evaluated")
        self.fitness = float(value)


@dataclass(frozen=True)
class OptimizerConfig:
    m: int = 20  # initial pool size
    r: int = 5  # parents selected / candidates generated per iteration
    max_iterations: int = 10
    patience: int = 3  # stop after this many stagnant iterations
    exemplar_count: int = 2
    seed: int = 0
    subsample_fraction: float = 1.0
    # optional explicit phase schedule: {strategy: (first_iter, last_iter)}
    phase_schedule: tuple[tuple[str, int, int], ...] | None = None

    def __post_init__(self):
        if not 1 <= self.r <= self.m:
            raise ValueError("need 1 <= r <= m")
        if self.patience > self.max_iterations and self.max_iterations > 0:
            raise ValueError("patience cannot exceed max_iterations")
        if not 0 < self.subsample_fraction <= 1.0:
            raise ValueError("subsample_fraction must be in (0, 1]")

    def strategy_for(self, iteration: int) -> Strategy:
        if self.phase_schedule:
            for name, first, last in self.phase_schedule:
                if first <= iteration <= last:
                    return Strategy(name)
            return Strategy.REFINEMENT
        third = max(1, -(-self.max_iterations // 3))  # ceil(P/3)
        if iteration <= third:
            return Strategy.EXPLORATION
        if iteration <= 2 * third:
            return Strategy.COMBINATION
        return Strategy.REFINEMENT


class OptimizerLog:
    """Versioned append-only record of an optimization run."""

    VERSION = 1

    def __init__(self, run_id: str, seed: int):
        self.run_id = run_id
        self.seed = seed
        self.iterations: list[dict] = []

    def append(self, entry: dict) -> None:
        if self.iterations and entry["best_fitness"] < self.iterations[-1]["best_fitness"]:
            raise ValueError("best-so-far fitness decreased; log corrupted")
        self.iterations.append(entry)

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {"run_id": self.run_id, "seed": self.seed, "version": self.VERSION},
                sort_keys=True,
            )
        ]
        lines.extend(json.dumps(entry, sort_keys=True) for entry in self.iterations)
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


def _candidate_entry(c: PromptCandidate) -> dict:
    return {
        "id": c.id,
        "instruction": c.instruction_text,
        "fitness": c.fitness,
        "strategy": c.strategy.value,
        "parents": list(c.parent_ids),
        "iteration_born": c.iteration_born,
    }


def initial_meta_prompt(exemplars=(), task_hint: str = "") -> str:
    lines = [
        "You design system instructions for a classifier that must name a "
        "physical activity from statistical sensor features.",
        task_hint
        or "The classifier sees labeled reference samples followed by an "
        "unlabeled candidate and must answer with one allowed label.",
        _DIRECTIVES[Strategy.EXPLORATION],
    ]
    if exemplars:
        lines.append("Example classifier inputs:")
        for i, exemplar in enumerate(exemplars, start=1):
            lines.append(f"--- exemplar {i} ---")
            lines.append(exemplar)
    return "\n".join(lines)


def build_meta_prompt(selected: list[PromptCandidate], strategy: Strategy, exemplars=()) -> str:
    """Selected instructions verbatim with fitness, then the phase directive."""
    if not selected:
        raise ValueError("selected candidates must be non-empty")
    lines = ["Previously evaluated instructions with their validation fitness:"]
    for c in selected:
        lines.append(f"[fitness={c.fitness:.4f}] {c.instruction_text}")
    lines.append(_DIRECTIVES[strategy])
    if exemplars:
        lines.append("Example classifier inputs:")
        for i, exemplar in enumerate(exemplars, start=1):
            lines.append(f"--- exemplar {i} ---")
            lines.append(exemplar)
    return "\n".join(lines)


def generate_candidates(opt_client, meta_prompt: str, n: int) -> list[str]:
    """n distinct non-empty instruction texts from the optimizer model.

    Duplicate or empty generations are retried up to 3 times; whatever
    distinct texts were collected are returned (with fewer than n only after
    retries are exhausted).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seen: dict[str, None] = {}
    for _ in range(3):
        for text in opt_client.generate(meta_prompt, n - len(seen)):
            text = text.strip()
            if text and text not in seen:
                seen[text] = None
        if len(seen) >= n:
            break
    if not seen:
        raise DegenerateGeneration("optimizer model produced no usable instructions")
    if len(seen) < n:
        logger.warning(
            "optimizer model yielded %d distinct instructions of %d requested",
            len(seen), n,
        )
    return list(seen)[:n]


def roulette_select(candidates: list[PromptCandidate], r: int, rng) -> list[PromptCandidate]:
    """r sequential fitness-proportional draws without replacement.

    All-zero fitness degenerates to uniform selection.
    """
    for c in candidates:
        if c.fitness is None:
            raise NotEvaluated(f"candidate {c.id} has no fitness yet")
    if r > len(candidates):
        raise ValueError(f"cannot select {r} from {len(candidates)} candidates")
    remaining = list(candidates)
    chosen = []
    for _ in range(r):
        weights = np.array([c.fitness for c in remaining], dtype=np.float64)
        total = weights.sum()
        probs = weights / total if total > 0 else np.full(len(remaining), 1.0 / len(remaining))
        idx = int(rng.choice(len(remaining), p=probs))
        chosen.append(remaining.pop(idx))
    return chosen


def evaluate_fitness(instruction: str, validation_windows, pipeline) -> float:
    """Macro-F1 of the full retrieve/prompt/classify loop on the validation set."""
    from .evaluation import evaluate_predictions

    if not validation_windows:
        raise ValueError("validation set must be non-empty")
    true_labels = []
    predicted = []
    for window in validation_windows:
        if window.label is None:
            raise ValueError(f"validation window {window.segment_id} has no label")
        prediction = pipeline.classify_window(window, instruction=instruction)
        true_labels.append(window.label)
        predicted.append(prediction.label)
    report = evaluate_predictions(true_labels, predicted)
    return report.macro_f1


def optimize(
    config: OptimizerConfig,
    opt_client,
    fitness,
    exemplars=(),
    run_id: str | None = None,
) -> tuple[PromptCandidate, OptimizerLog]:
    """Run the full search loop; returns the best candidate ever evaluated.

    `fitness` maps an instruction text to a score in [0, 1]. Iteration 0
    evaluates the m initial candidates; each later iteration selects r
    parents, generates r successors under the current phase directive, and
    evaluates them. The run stops after max_iterations, or once the best
    fitness has not improved for `patience` consecutive iterations.
    """
    rng = np.random.default_rng(config.seed)
    log = OptimizerLog(run_id=run_id or f"opt-seed{config.seed}", seed=config.seed)

    next_id = 0
    pool: list[PromptCandidate] = []
    texts = generate_candidates(opt_client, initial_meta_prompt(exemplars), config.m)
    for text in texts:
        pool.append(
            PromptCandidate(
                id=next_id,
                instruction_text=text,
                strategy=Strategy.EXPLORATION,
                iteration_born=0,
            )
        )
        next_id += 1
    for candidate in pool:
        candidate.set_fitness(fitness(candidate.instruction_text))
    best = max(pool, key=lambda c: (c.fitness, -c.id))
    log.append(
        {
            "iteration": 0,
            "strategy": Strategy.EXPLORATION.value,
            "candidates": [_candidate_entry(c) for c in pool],
            "selected_ids": [],
            "best_id": best.id,
            "best_fitness": best.fitness,
        }
    )

    stagnant = 0
    for iteration in range(1, config.max_iterations + 1):
        if stagnant >= config.patience:
            break
        strategy = config.strategy_for(iteration)
        selected = roulette_select(pool, config.r, rng)
        meta = build_meta_prompt(selected, strategy, exemplars)
        new_texts = generate_candidates(opt_client, meta, config.r)
        parent_ids = tuple(c.id for c in selected)
        fresh = []
        for text in new_texts:
            fresh.append(
                PromptCandidate(
                    id=next_id,
                    instruction_text=text,
                    strategy=strategy,
                    iteration_born=iteration,
                    parent_ids=parent_ids if strategy is not Strategy.EXPLORATION else (),
                )
            )
            next_id += 1
        for candidate in fresh:
            candidate.set_fitness(fitness(candidate.instruction_text))
        pool.extend(fresh)
        challenger = max(fresh, key=lambda c: (c.fitness, -c.id))
        if challenger.fitness > best.fitness:
            best = challenger
            stagnant = 0
        else:
            stagnant += 1
        log.append(
            {
                "iteration": iteration,
                "strategy": strategy.value,
                "candidates": [_candidate_entry(c) for c in fresh],
                "selected_ids": list(parent_ids),
                "best_id": best.id,
                "best_fitness": best.fitness,
            }
        )
    return best, log


def optimize_prompt(
    config: OptimizerConfig,
    pipeline,
    validation_windows,
    opt_client,
    run_id: str | None = None,
) -> tuple[PromptCandidate, OptimizerLog]:
    """Spec-level entry: fitness is validation macro-F1 through the pipeline."""
    windows = list(validation_windows)
    if not windows:
        raise ValueError("validation set must be non-empty")
    if config.subsample_fraction < 1.0:
        rng = np.random.default_rng(config.seed)
        keep = max(1, int(round(config.subsample_fraction * len(windows))))
        idx = rng.choice(len(windows), size=keep, replace=False)
        windows = [windows[i] for i in sorted(idx)]
    exemplars = []
    for window in windows[: config.exemplar_count]:
        bundle = pipeline.bundle_for(window)
        exemplars.append(f"LABEL: {window.label}\n{bundle.texts[0]}")

    def fitness(instruction: str) -> float:
        return evaluate_fitness(instruction, windows, pipeline)

    return optimize(config, opt_client, fitness, exemplars=exemplars, run_id=run_id)


class MockInstructionClient:
    """Seeded offline generator of instruction variants."""

    _OPENERS = (
        "Classify the candidate window by matching its statistics to the "
        "labeled samples.",
        "Decide which activity the candidate shows by weighing similarity "
        "to every labeled sample.",
        "Compare per-channel means, spreads, and peak counts between the "
        "candidate and the references.",
        "Treat the labeled samples as prototypes and pick the closest "
        "activity for the candidate.",
    )
    _EMPHASES = (
        "Prioritize the whole-window statistics before the sub-segments.",
        "Give extra weight to start/mid/end differences when classes are close.",
        "Discount single outlier channels when the rest agree.",
        "Mind the peak counts; periodic motion shows up there first.",
        "Reason step by step across channels before answering.",
        "Lean on the retrieval scores when samples disagree.",
    )

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def generate(self, meta_prompt: str, n: int) -> list[str]:
        out = []
        for _ in range(max(n, 0)):
            opener = self._OPENERS[int(self.rng.integers(len(self._OPENERS)))]
            emphasis = self._EMPHASES[int(self.rng.integers(len(self._EMPHASES)))]
            nonce = int(self.rng.integers(1000, 10000))
            out.append(f"{opener} {emphasis} (v{nonce})")
        return out


class ChatInstructionClient:
    """Adapter asking a chat client for numbered instruction lists."""

    SYSTEM = (
        "You write candidate system instructions for a sensor-activity "
        "classifier. Output only the instructions, numbered, one per line."
    )

    def __init__(self, chat_client):
        self.chat_client = chat_client

    def generate(self, meta_prompt: str, n: int) -> list[str]:
        from .classify import PromptBundle

        bundle = PromptBundle(
            system_text=self.SYSTEM,
            user_text=f"{meta_prompt}\n\nWrite exactly {n} instructions.",
            label_set=(),
            labeled_samples=(),
        )
        reply = self.chat_client.reply(bundle)
        out = []
        for line in reply.splitlines():
            line = re.sub(r"^\s*(?:\d+[.)]\s*|[-*]\s+)", "", line).strip()
            if line:
                out.append(line)
        return out[:n]
