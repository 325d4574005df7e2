#
# License: See LICENSE.md file
#

import pandas as pd

import perturbosr
from perturbosr.config import GridSpec
from perturbosr.utils import write_text_artifact

from .base_command import Command
from .gridsearch import jobs_argument, run_cells, validation_tasks

logger = perturbosr.logging.get_logger(__name__)

SENSITIVITY_FILE = "sensitivity.csv"


class Sensitivity(Command):
    name = "sensitivity"
    help = "Vary one swept parameter at a time over its grid values, the others fixed at the configured values"
    argv = [jobs_argument]

    def run(self):
        points = []
        for parameter in GridSpec.PARAMETERS:
            for value in getattr(self.config.grid, parameter):
                points.append((parameter, value))
        configs = [self.config.with_cell(**{parameter: value}) for parameter, value in points]
        rows = run_cells(validation_tasks(self, configs), getattr(self.args, "jobs", 1))

        frame = pd.DataFrame([{"parameter": p, "value": v, **row} for (p, v), row in zip(points, rows)])
        write_text_artifact(self.path(SENSITIVITY_FILE), "sensitivity", frame, objective="val_accuracy")
        return [self.path(SENSITIVITY_FILE)]
