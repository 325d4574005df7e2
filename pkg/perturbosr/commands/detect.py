#
# License: See LICENSE.md file
#

import numpy as np
import pandas as pd

import perturbosr
from perturbosr.detect.pipeline import default_stages, run_pipeline, save_detectors
from perturbosr.detect.tree import dump_tree
from perturbosr.utils import write_text_artifact

from .base_command import DETECTORS_FILE, RESULTS_FILE, Command

logger = perturbosr.logging.get_logger(__name__)

TREE_FILE = "tree.txt"
STAGE2_FEATURE_NAMES = ("posterior_unknown", "mu", "max_prob")


def results_frame(results, truth=None):
    frame = pd.DataFrame({
        "sample_id": [r.sample_id for r in results],
        "final_label": [r.final_label for r in results],
        "provenance": [r.provenance.value for r in results],
        "mu": [r.mu for r in results],
    })
    if truth is not None:
        frame.insert(1, "true_label", np.asarray(truth)[frame["sample_id"].to_numpy()])
    return frame


class Detect(Command):
    name = "detect"
    help = "Run the two-stage unknown detection on an open set"
    argv = [("--split", {"choices": ["val", "test"], "default": "test", "help": "Open set to label (default: test)"})]

    def run(self):
        split = self.load_split()
        model = self.load_model()
        which = getattr(self.args, "split", "test")
        X, truth = split.open_set(which)
        cfg = self.config.pipeline

        stage1, stage2 = default_stages(cfg)
        results = run_pipeline(model, split.train.features, split.train.labels, X, cfg, stage1=stage1, stage2=stage2)
        write_text_artifact(
            self.path(RESULTS_FILE),
            "results",
            results_frame(results, truth),
            split=which,
            unknown_label=split.unknown_label,
        )
        save_detectors(self.path(DETECTORS_FILE), stage1.model, stage2.tree, cfg.stage2_features)
        artifacts = [self.path(RESULTS_FILE), self.path(DETECTORS_FILE)]

        if stage2.tree is not None:
            names = STAGE2_FEATURE_NAMES if cfg.stage2_features == "probability_space" else None
            with open(self.path(TREE_FILE), "w") as f:
                f.write(dump_tree(stage2.tree, names) + "\n")
            artifacts.append(self.path(TREE_FILE))
        return artifacts
