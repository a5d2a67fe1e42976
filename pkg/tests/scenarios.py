"""Shared synthetic scenarios with injected registry defects."""
from functools import lru_cache

from pvregistry import reconcile as rc
from pvregistry import synth

# 950 systems, 160 of them large; 50 of the 790 ordinary ones are registered twice -> 1,000 entries
DEFECT_SCENE = synth.SceneSpec(seed=13, n_buildings=950, n_large=160, multi_entry_share=50 / 790,
                               render_maps=False)
# observed defect magnitudes: 3.2% duplicates, 24 + 21 of 160 large entries, 5 inflated x10
DEFECT_PERTURB = synth.PerturbSpec(duplicate_rate=0.032, n_inflated=5, inflation_factor=10.0,
                                   n_false_address=24, n_deleted=21, seed=7)


@lru_cache(maxsize=4)
def defect_scenario(scene_spec=DEFECT_SCENE, perturb=DEFECT_PERTURB):
    """Returns (scene, perturbed official entries, manifest, report); cached, treat as read-only."""
    scene = synth.generate(scene_spec)
    official, manifest = synth.perturb_official(scene.truth.official, perturb)
    report = rc.build_report(scene.truth.registry, official)
    return scene, official, manifest, report


def class_scores(found, expected):
    """(precision, recall) of a recovered set against the injected set; empty vs empty is perfect."""
    found, expected = set(found), set(expected)
    tp = len(found & expected)
    precision = tp / len(found) if found else (1.0 if not expected else 0.0)
    recall = tp / len(expected) if expected else (1.0 if not found else 0.0)
    return precision, recall


def recovery(report, manifest):
    """Per-class (precision, recall) keyed by defect class."""
    return {
        "duplicates": class_scores(report.duplicate_ids, manifest["duplicates"]),
        "inflated": class_scores([x.entry_id for x in report.inflated], manifest["inflated"]),
        "false_address": class_scores(report.false_address_candidates, manifest["false_address"]),
        "missing": class_scores(report.missing_in_official, manifest["deleted_keys"]),
        "multi_entry": class_scores([k for k, _ in report.multi_entry_addresses], manifest["multi_entry_keys"]),
    }
