from __future__ import annotations

import json
import random

import pytest

from storyforge.corpus import StoryItem

WORDS = (
    "river", "lamp", "quiet", "storm", "letter", "garden", "train", "promise",
    "window", "song", "march", "ember", "harbor", "violin", "orchard", "mirror",
    "candle", "meadow", "sparrow", "anchor",
)


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    status = "PASS" if report.passed else "FAIL"
    name = report.nodeid.split("::")[-1]
    print(f"\nACCEPTANCE {status}: {name}", flush=True)


def make_sentence(rng: random.Random, n_tokens: int) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(n_tokens)).capitalize() + "."


def make_item(rng: random.Random, item_id: str, n_refs: int = 1) -> StoryItem:
    return StoryItem(
        id=item_id,
        premise=make_sentence(rng, 5),
        initial=make_sentence(rng, 6),
        original_ending=make_sentence(rng, 6) + " " + make_sentence(rng, 6),
        counterfactual=make_sentence(rng, 6),
        edited_endings=tuple(make_sentence(rng, 11) for _ in range(n_refs)),
    )


def write_curation_corpus(path, n_items: int, seed: int = 11, gens: int = 3) -> None:
    """Synthetic curation input: story fields plus per-item generations."""
    rng = random.Random(seed)
    with open(path, "w", encoding="utf-8") as handle:
        for i in range(n_items):
            item = make_item(rng, f"s{i:05d}", n_refs=1)
            payload = item.to_payload()
            payload["generations"] = [
                {
                    "source_tag": f"m{k}",
                    "text": make_sentence(rng, 8 + rng.randrange(7)),
                }
                for k in range(gens)
            ]
            handle.write(json.dumps(payload) + "\n")


@pytest.fixture
def worked_example() -> StoryItem:
    """The classmates story used throughout as a known-good item."""
    return StoryItem(
        id="classmates",
        premise="Alex and Blair were classmates.",
        initial="They secretly liked each other.",
        original_ending=(
            "Alex gave in to desire and asked Blair on a date. "
            "They got married after graduation."
        ),
        counterfactual="They secretly hated each other.",
        edited_endings=(
            "Alex decided to speak up and confronted Blair. "
            "Surprisingly, they resolved their issues. "
            "Since then, they've become lifelong friends.",
        ),
    )
