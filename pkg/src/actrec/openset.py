"""Open-set protocols: withheld-class splits, label-space modes, and
free-text labeling of unseen activities.

A split withholds whole activity classes from indexing; their windows appear
only at test time. The classifier's label space either includes the withheld
true labels (anchor available) or collapses them into one placeholder.
"""

import enum
import re
import string
from dataclasses import dataclass

import numpy as np

from .classify import PromptBundle
from .embed import ProviderConfig, embed_batch
from .errors import EmptyLabel, TooFewClasses, UnknownClass
from .evaluation import evaluate_predictions
from .ingest import SensorWindow
from .pipeline import ActivityPipeline

PLACEHOLDER_LABEL = "unseen_activity"


class LabelSpaceMode(enum.Enum):
    TRUE_LABEL_AVAILABLE = "available"
    TRUE_LABEL_HIDDEN = "hidden"


@dataclass(frozen=True)
class OpenSetSplit:
    known_classes: tuple[str, ...]
    withheld_classes: tuple[str, ...]
    openness: float
    indexing_ids: tuple[int, ...]
    validation_ids: tuple[int, ...]
    test_ids: tuple[int, ...]

    def label_space(self, mode: LabelSpaceMode) -> tuple[str, ...]:
        if mode is LabelSpaceMode.TRUE_LABEL_HIDDEN:
            return tuple(sorted(self.known_classes)) + (PLACEHOLDER_LABEL,)
        return tuple(sorted(set(self.known_classes) | set(self.withheld_classes)))


def withheld_count(openness: float, n_classes: int) -> int:
    """round-half-up(openness * classes), floored at 1."""
    return max(1, int(np.floor(openness * n_classes + 0.5)))


def make_openset_split(
    windows: list[SensorWindow],
    openness: float,
    seed: int,
    holdout_fraction: float = 0.2,
    validation_fraction: float = 0.0,
) -> OpenSetSplit:
    """Withhold a seeded random subset of classes entirely from indexing.

    Known-class windows are split per class into indexing / validation /
    test; withheld-class windows all go to test.
    """
    if not 0.0 < openness < 1.0:
        raise ValueError("openness must lie in (0, 1)")
    windows = [w for w in windows if w.label is not None]
    classes = sorted({w.label for w in windows})
    if len(classes) < 2:
        raise TooFewClasses(f"need at least 2 classes, found {len(classes)}")
    rng = np.random.default_rng(seed)
    n_withheld = withheld_count(openness, len(classes))
    if n_withheld >= len(classes):
        n_withheld = len(classes) - 1
    withheld = sorted(
        rng.choice(classes, size=n_withheld, replace=False).tolist()
    )
    known = sorted(set(classes) - set(withheld))

    indexing_ids: list[int] = []
    validation_ids: list[int] = []
    test_ids: list[int] = []
    by_class: dict[str, list[SensorWindow]] = {}
    for w in windows:
        by_class.setdefault(w.label, []).append(w)
    for label in classes:
        group = by_class[label]
        if label in withheld:
            test_ids.extend(w.segment_id for w in group)
            continue
        n = len(group)
        order = rng.permutation(n)
        n_test = max(1, int(round(holdout_fraction * n))) if n > 1 else 0
        n_val = int(round(validation_fraction * n))
        for pos, idx in enumerate(order):
            if pos < n_test:
                test_ids.append(group[idx].segment_id)
            elif pos < n_test + n_val:
                validation_ids.append(group[idx].segment_id)
            else:
                indexing_ids.append(group[idx].segment_id)
    return OpenSetSplit(
        known_classes=tuple(known),
        withheld_classes=tuple(withheld),
        openness=openness,
        indexing_ids=tuple(sorted(indexing_ids)),
        validation_ids=tuple(sorted(validation_ids)),
        test_ids=tuple(sorted(test_ids)),
    )


def leave_one_class_out(windows: list[SensorWindow], withheld_class: str) -> OpenSetSplit:
    """All windows of one class become the test set; the rest index."""
    classes = sorted({w.label for w in windows if w.label is not None})
    if withheld_class not in classes:
        raise UnknownClass(f"class {withheld_class!r} not present in dataset")
    indexing_ids = [w.segment_id for w in windows if w.label != withheld_class]
    test_ids = [w.segment_id for w in windows if w.label == withheld_class]
    return OpenSetSplit(
        known_classes=tuple(c for c in classes if c != withheld_class),
        withheld_classes=(withheld_class,),
        openness=1.0 / len(classes),
        indexing_ids=tuple(sorted(indexing_ids)),
        validation_ids=(),
        test_ids=tuple(sorted(test_ids)),
    )


def openset_classify(
    pipeline: ActivityPipeline,
    split: OpenSetSplit,
    mode: LabelSpaceMode,
    test_window: SensorWindow,
):
    """Standard pipeline classification under the split's label space."""
    return pipeline.classify_window(
        test_window, label_set=split.label_space(mode)
    )


_LEADIN = re.compile(r"^\s*\w+\s*:\s*")


def normalize_label(text: str) -> str:
    """Lowercase, strip a single `word:` lead-in and punctuation."""
    text = _LEADIN.sub("", text.strip(), count=1)
    text = text.translate(str.maketrans("", "", string.punctuation))
    return " ".join(text.lower().split())


def generate_unseen_label(client, contexts, candidate_bundle) -> str:
    """Ask for a short free-text activity name for an out-of-set candidate."""
    context_lines = []
    for ctx in contexts:
        context_lines.append(f"known neighbor labeled {ctx.label}:")
        context_lines.append(ctx.feature_texts[0])
    user_text = "\n".join(
        [
            "None of the known activities matches this candidate well.",
            "Closest known samples for contrast:",
            *context_lines,
            "Candidate statistics:",
            candidate_bundle.texts[0],
            "Name the candidate's activity in at most 4 words.",
        ]
    )
    bundle = PromptBundle(
        system_text=(
            "You name physical activities from wearable sensor statistics. "
            "Answer with just a short activity name."
        ),
        user_text=user_text,
        label_set=(),
        labeled_samples=(),
    )
    for _ in range(2):
        reply = client.reply(bundle)
        label = normalize_label(reply)
        if label:
            return label
    raise EmptyLabel("label model returned only empty replies")


class NearestContextLabeler:
    """Offline stand-in for a label-generating model: names the candidate
    after its highest-scoring retrieved neighbor."""

    def reply(self, bundle: PromptBundle) -> str:
        match = re.search(r"known neighbor labeled (.+?):", bundle.user_text)
        return match.group(1) if match else ""


def map_label_semantic(
    generated_label: str, class_names, embed_cfg: ProviderConfig
) -> tuple[str, float]:
    """Embed the generated label and every class name; return the argmax-cosine
    class. Ties break lexicographically."""
    class_names = sorted(class_names)
    if not class_names:
        raise ValueError("class_names must be non-empty")
    if len(class_names) == 1:
        return class_names[0], 1.0
    vectors = embed_batch(embed_cfg, [generated_label, *class_names])
    query = vectors[0].values
    best_name, best_score = None, -np.inf
    for name, vec in zip(class_names, vectors[1:]):
        score = float(np.dot(query, vec.values))
        if score > best_score:
            best_name, best_score = name, score
    return best_name, best_score


def openset_report(
    true_labels,
    predicted_labels,
    split: OpenSetSplit,
    mode: LabelSpaceMode,
    include_placeholder: bool = True,
    labeling_results: dict | None = None,
) -> dict:
    """Macro-F1 over known classes (plus the placeholder in hidden mode),
    with an extra section describing the withheld classes."""
    true_labels = list(true_labels)
    if mode is LabelSpaceMode.TRUE_LABEL_HIDDEN:
        withheld = set(split.withheld_classes)
        true_labels = [
            PLACEHOLDER_LABEL if t in withheld else t for t in true_labels
        ]
    label_set = list(split.label_space(mode))
    if mode is LabelSpaceMode.TRUE_LABEL_HIDDEN and not include_placeholder:
        label_set = [l for l in label_set if l != PLACEHOLDER_LABEL]
        pairs = [
            (t, p)
            for t, p in zip(true_labels, predicted_labels)
            if t != PLACEHOLDER_LABEL and p != PLACEHOLDER_LABEL
        ]
        true_labels = [t for t, _ in pairs]
        predicted_labels = [p for _, p in pairs]
    report = evaluate_predictions(true_labels, predicted_labels, label_set)
    out = report.to_dict()
    out["withheld"] = {
        "classes": list(split.withheld_classes),
        "openness": split.openness,
        "mode": mode.value,
    }
    if labeling_results:
        out["withheld"]["labeling"] = labeling_results
    return out
