#
# License: See LICENSE.md file
#

import os

import pandas as pd

import perturbosr
from perturbosr.metrics import evaluate, format_report, report_row
from perturbosr.utils import read_text_header, write_text_artifact

from .base_command import RESULTS_FILE, Command

logger = perturbosr.logging.get_logger(__name__)

REPORT_TEXT = "report.txt"
REPORT_CSV = "report.csv"


def read_results(path):
    """Returns the results table and the unknown label recorded in its header (None when absent)."""
    if not os.path.isfile(path):
        logger.error("Results file '%s' couldn't be found, or isn't a file!", path)
        raise FileNotFoundError(path)
    kind, fields, skip = read_text_header(path)
    if kind not in (None, "results"):
        raise ValueError(f"{path}: expected a results file, found '{kind}'")
    frame = pd.read_csv(path, skiprows=skip)
    for column in ("true_label", "final_label"):
        if column not in frame.columns:
            raise KeyError(f"{path}: column '{column}' is missing")
    unknown_label = int(fields["unknown_label"]) if "unknown_label" in fields else None
    return frame, unknown_label


class Evaluate(Command):
    name = "eval"
    help = "Compute accuracy, precision, recall, F1 and the detection rate of a results file"
    argv = [("--results", {"default": None, "help": "Results file to evaluate (default: results.csv of the run)"})]

    def run(self):
        path = getattr(self.args, "results", None) or self.require(RESULTS_FILE)
        frame, unknown_label = read_results(path)
        report = evaluate(frame["true_label"].to_numpy(), frame["final_label"].to_numpy(), unknown_label)
        text = format_report(report)
        print(text, end="")

        with open(self.path(REPORT_TEXT), "w") as f:
            f.write(text)
        write_text_artifact(
            self.path(REPORT_CSV),
            "report",
            pd.DataFrame([report_row(report)]),
            unknown_label=report.unknown_label,
        )
        return [self.path(REPORT_TEXT), self.path(REPORT_CSV)]
