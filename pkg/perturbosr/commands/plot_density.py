#
# License: See LICENSE.md file
#

import os

import pandas as pd

import perturbosr
from perturbosr.metrics import density_histogram, support_overlap
from perturbosr.utils import read_text_header, write_text_artifact

from .base_command import UNCERTAINTY_FILE, Command

logger = perturbosr.logging.get_logger(__name__)

try:
    import matplotlib
    from matplotlib.figure import Figure
except ImportError:
    matplotlib = None
    Figure = None

DENSITY_FILE = "density.csv"
DENSITY_IMAGE = "density.svg"


def render_density(table, path):
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(1, 1, 1)
    width = table["bin_right"] - table["bin_left"]
    for column, label in (("known_density", "known"), ("unknown_density", "unknown")):
        ax.bar(table["bin_left"], table[column], width=width, align="edge", alpha=0.5, label=label)
    ax.set_xlabel("predictive uncertainty")
    ax.set_ylabel("density")
    ax.legend()
    # Fixed id salt and no date, so reruns are byte-identical
    with matplotlib.rc_context({"svg.hashsalt": "perturbosr"}):
        fig.savefig(path, format="svg", metadata={"Date": None})


class PlotDensity(Command):
    name = "plot-density"
    help = "Histogram the uncertainty of known and unknown samples"
    argv = [
        ("--bins", {"type": int, "default": 30, "help": "Number of shared histogram bins"}),
        ("--svg", {"action": "store_true", "help": "Also render the histogram as an SVG image (needs matplotlib)"}),
        ("--uncertainty", {"default": None, "help": "Uncertainty file (default: uncertainty.csv of the run)"}),
    ]

    def run(self):
        path = getattr(self.args, "uncertainty", None) or self.require(UNCERTAINTY_FILE)
        if not os.path.isfile(path):
            logger.error("Uncertainty file '%s' couldn't be found, or isn't a file!", path)
            raise FileNotFoundError(path)
        _, _, skip = read_text_header(path)
        frame = pd.read_csv(path, skiprows=skip)
        for column in ("mu", "is_unknown"):
            if column not in frame.columns:
                raise KeyError(f"{path}: column '{column}' is missing")

        bins = getattr(self.args, "bins", 30)
        table = density_histogram(frame["mu"].to_numpy(), frame["is_unknown"].to_numpy(), bins)
        overlap = support_overlap(table)
        write_text_artifact(self.path(DENSITY_FILE), "density", table, bins=len(table), support_overlap=overlap)
        logger.info("Density histogram written", support_overlap=round(overlap, 4))
        artifacts = [self.path(DENSITY_FILE)]

        if getattr(self.args, "svg", False):
            if Figure is None:
                logger.warning("%s: Missing dependency \"matplotlib\". Image rendering disabled", __name__)
            else:
                render_density(table, self.path(DENSITY_IMAGE))
                artifacts.append(self.path(DENSITY_IMAGE))
        return artifacts
