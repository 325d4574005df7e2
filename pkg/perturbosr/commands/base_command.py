#
# License: See LICENSE.md file
#
"""
Base class of the command-line commands. A command declares its own flags in `argv`, reads its inputs from the
output directory and writes its artifacts back into it, so commands compose through files only.
"""

import os

import perturbosr
from perturbosr.config import config_hash
from perturbosr.core.network import load_model
from perturbosr.data import apply_manifest, load_csv, read_manifest
from perturbosr.utils import write_run_metadata

logger = perturbosr.logging.get_logger(__name__)

DATASET_FILE = "dataset.csv"
SPLIT_FILE = "split.json"
MODEL_FILE = "model.ckpt"
UNCERTAINTY_FILE = "uncertainty.csv"
RESULTS_FILE = "results.csv"
DETECTORS_FILE = "detectors.ckpt"


class Command:
    name = ""
    help = ""
    argv = []

    def __init__(self, config, args):
        self.config = config
        self.args = args
        self.output_dir = config.output_dir

    def path(self, filename):
        return os.path.join(self.output_dir, filename)

    def require(self, filename):
        path = self.path(filename)
        if not os.path.isfile(path):
            logger.error("Input '%s' couldn't be found; run the command that produces it first", path)
            raise FileNotFoundError(path)
        return path

    def run(self):
        raise Exception("Not implemented!")

    def execute(self):
        os.makedirs(self.output_dir, exist_ok=True)
        artifacts = self.run()
        artifacts.append(write_run_metadata(self.output_dir, self.name, config_hash(self.config), self.config.seed))
        for path in artifacts:
            logger.info("Wrote %s", path)
        return artifacts

    def load_split(self):
        ds = load_csv(self.require(DATASET_FILE), label_column="label")
        return apply_manifest(ds, read_manifest(self.require(SPLIT_FILE)))

    def load_model(self):
        return load_model(self.require(MODEL_FILE))
