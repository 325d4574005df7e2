#
# License: See LICENSE.md file
#

import numpy as np
import pandas as pd

import perturbosr
from perturbosr.core.perturbation import make_ensemble
from perturbosr.core.uncertainty import uncertainty_scores
from perturbosr.metrics import separation_auc
from perturbosr.utils import write_text_artifact

from .base_command import UNCERTAINTY_FILE, Command

logger = perturbosr.logging.get_logger(__name__)


class Uncertainty(Command):
    name = "uncertainty"
    help = "Score the predictive uncertainty of every open-set sample"
    argv = [("--split", {"choices": ["val", "test"], "default": "test", "help": "Open set to score (default: test)"})]

    def run(self):
        split = self.load_split()
        model = self.load_model()
        which = getattr(self.args, "split", "test")
        X, truth = split.open_set(which)
        ensemble = make_ensemble(model, self.config.pipeline.perturb)
        mu = uncertainty_scores(model, ensemble, X)
        is_unknown = truth == split.unknown_label

        frame = pd.DataFrame({
            "sample_id": np.arange(len(X)),
            "mu": mu,
            "true_label": truth,
            "is_unknown": is_unknown.astype(np.int64),
        })
        write_text_artifact(
            self.path(UNCERTAINTY_FILE),
            "uncertainty",
            frame,
            split=which,
            unknown_label=split.unknown_label,
        )
        if is_unknown.any() and (~is_unknown).any():
            logger.info("Known/unknown separation", auc=round(separation_auc(mu[~is_unknown], mu[is_unknown]), 4))
        return [self.path(UNCERTAINTY_FILE)]
