#
# License: See LICENSE.md file
#

import json
import multiprocessing

import pandas as pd

import perturbosr
from perturbosr.config import GridSpec
from perturbosr.detect.pipeline import run_pipeline
from perturbosr.metrics import evaluate, report_row
from perturbosr.utils import write_text_artifact

from .base_command import Command

logger = perturbosr.logging.get_logger(__name__)

GRID_FILE = "grid.csv"
BEST_FILE = "grid_best.json"

jobs_argument = ("--jobs", {"type": int, "default": 1, "help": "Evaluate cells in this many processes"})


def evaluate_cell(task):
    model, train_X, train_y, X, truth, unknown_label, pipeline_cfg = task
    results = run_pipeline(model, train_X, train_y, X, pipeline_cfg)
    return report_row(evaluate(truth, [r.final_label for r in results], unknown_label))


def run_cells(tasks, jobs=1):
    """Evaluates every task; the rows come back in task order whatever the number of processes."""
    if jobs < 1:
        raise ValueError(f"jobs must be positive, got {jobs}")
    if jobs > 1 and len(tasks) > 1:
        with multiprocessing.Pool(min(jobs, len(tasks))) as pool:
            return pool.map(evaluate_cell, tasks)
    return [evaluate_cell(task) for task in tasks]


def best_index(rows, objective="Accuracy"):
    """
    Index of the row with the highest objective. Ties keep the earliest row, which is the first cell in grid order.

    ```python
    >>> best_index([{"Accuracy": 0.5}, {"Accuracy": 0.75}, {"Accuracy": 0.75}])
    1

    ```
    """
    if len(rows) == 0:
        raise ValueError("No grid cells were evaluated")
    best = 0
    for index, row in enumerate(rows):
        if row[objective] > rows[best][objective]:
            best = index
    return best


def validation_tasks(command, configs):
    split = command.load_split()
    model = command.load_model()
    X, truth = split.open_set("val")
    if len(X) == 0:
        raise ValueError("The validation open set is empty")
    return [(model, split.train.features, split.train.labels, X, truth, split.unknown_label, c.pipeline)
            for c in configs]


class GridSearch(Command):
    name = "gridsearch"
    help = "Exhaustive sweep of the grid on the validation open set"
    argv = [jobs_argument]

    def run(self):
        grid = self.config.grid
        cells = grid.cells()
        configs = [self.config.with_cell(**cell) for cell in cells]
        logger.info("Grid search started", cells=len(cells))
        rows = run_cells(validation_tasks(self, configs), getattr(self.args, "jobs", 1))

        best = best_index(rows)
        frame = pd.DataFrame([{"index": i, **cell, **row} for i, (cell, row) in enumerate(zip(cells, rows))])
        frame["best"] = (frame["index"] == best).astype(int)
        write_text_artifact(self.path(GRID_FILE), "grid", frame, objective="val_accuracy", cells=len(cells))
        with open(self.path(BEST_FILE), "w") as f:
            json.dump({"index": best, "cell": cells[best], "metrics": rows[best]}, f, indent=2, sort_keys=True)
            f.write("\n")

        print(
            "best: " + " ".join(f"{name}={cells[best][name]}" for name in GridSpec.PARAMETERS) +
            f" accuracy={rows[best]['Accuracy']:.4f}"
        )
        return [self.path(GRID_FILE), self.path(BEST_FILE)]
