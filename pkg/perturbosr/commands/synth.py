#
# License: See LICENSE.md file
#

import perturbosr
from perturbosr.data import load_csv, make_open_split, save_csv, synth_blobs, write_manifest

from .base_command import DATASET_FILE, SPLIT_FILE, Command

logger = perturbosr.logging.get_logger(__name__)


class Synth(Command):
    name = "synth"
    help = "Generate (or ingest) the dataset and draw the open-set split"
    argv = []

    def run(self):
        data = self.config.data
        if data.source == "synth":
            ds, unknown_ids = synth_blobs(
                data.num_known,
                data.num_unknown,
                data.per_class,
                data.dim,
                overlap=data.overlap,
                seed=self.config.seed,
                sigma=data.sigma,
            )
        else:
            ds = load_csv(data.csv_path, data.label_column)
            unknown_ids = None

        split = make_open_split(ds, data.unknown_fraction, self.config.seed, unknown_class_ids=unknown_ids)
        save_csv(ds, self.path(DATASET_FILE))
        write_manifest(split, self.path(SPLIT_FILE))
        logger.info(
            "Dataset ready",
            samples=len(ds),
            known=split.num_known,
            unknown=len(split.unknown_class_ids),
            train=len(split.train),
        )
        return [self.path(DATASET_FILE), self.path(SPLIT_FILE)]
