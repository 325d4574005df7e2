#
# License: See LICENSE.md file
#

import pandas as pd

import perturbosr
from perturbosr.core.network import NetworkSpec, init_network, mean_loss, save_model, train
from perturbosr.utils import derive_seed, write_text_artifact

from .base_command import MODEL_FILE, Command

logger = perturbosr.logging.get_logger(__name__)


class Train(Command):
    name = "train"
    help = "Train the base classifier on the known classes"
    argv = [("--loss-history", {"action": "store_true", "help": "Also write the mean training loss of every epoch"})]

    def run(self):
        split = self.load_split()
        spec = NetworkSpec(split.train.feature_dim, self.config.hidden_dims, split.num_known)
        model = init_network(spec, derive_seed(self.config.seed, "init"))
        history = []
        model = train(model, split.train.features, split.train.labels, self.config.train, loss_history=history)
        logger.info(
            "Training finished",
            epochs=self.config.train.epochs,
            loss=round(history[-1], 6),
            val_loss=round(mean_loss(model, split.val_known.features, split.val_known.labels), 6)
            if len(split.val_known) else None,
        )

        save_model(model, self.path(MODEL_FILE))
        artifacts = [self.path(MODEL_FILE)]
        if getattr(self.args, "loss_history", False):
            frame = pd.DataFrame({"epoch": range(1, len(history) + 1), "loss": history})
            write_text_artifact(self.path("loss.csv"), "loss", frame)
            artifacts.append(self.path("loss.csv"))
        return artifacts
