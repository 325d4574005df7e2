#
# License: See LICENSE.md file
#

import pandas as pd

import perturbosr
from perturbosr.detect.pipeline import AblationMode, ablate
from perturbosr.metrics import evaluate, report_row
from perturbosr.utils import write_text_artifact

from .base_command import Command

logger = perturbosr.logging.get_logger(__name__)

ABLATION_FILE = "ablation.csv"


class Ablate(Command):
    name = "ablate"
    help = "Compare the detector with stages switched off"
    argv = [("--split", {"choices": ["val", "test"], "default": "test", "help": "Open set to label (default: test)"})]

    def run(self):
        split = self.load_split()
        model = self.load_model()
        which = getattr(self.args, "split", "test")
        X, truth = split.open_set(which)

        rows = []
        for mode in AblationMode:
            results = ablate(mode, model, split.train.features, split.train.labels, X, self.config.pipeline)
            report = evaluate(truth, [r.final_label for r in results], split.unknown_label)
            rows.append({"mode": mode.value, **report_row(report)})
            logger.info("Ablation mode finished", mode=mode.value, accuracy=round(report.accuracy, 4))

        frame = pd.DataFrame(rows)
        write_text_artifact(self.path(ABLATION_FILE), "ablation", frame, split=which)
        print(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
        return [self.path(ABLATION_FILE)]
