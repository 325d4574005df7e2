#
# License: See LICENSE.md file
#

# imports
from perturbosr.commands.synth import Synth # isort:skip
from perturbosr.commands.train import Train # isort:skip
from perturbosr.commands.uncertainty import Uncertainty # isort:skip
from perturbosr.commands.detect import Detect # isort:skip
from perturbosr.commands.evaluate import Evaluate # isort:skip
from perturbosr.commands.gridsearch import GridSearch # isort:skip
from perturbosr.commands.plot_density import PlotDensity # isort:skip
from perturbosr.commands.ablate import Ablate # isort:skip
from perturbosr.commands.sensitivity import Sensitivity # isort:skip
# imports end

COMMANDS = (Synth, Train, Uncertainty, Detect, Evaluate, GridSearch, PlotDensity, Ablate, Sensitivity)


def parser_arguments():
    for command in COMMANDS:
        yield command.name, command.help, command.argv


def get_command(name):
    for command in COMMANDS:
        if command.name == name:
            return command
    raise KeyError(f"Unknown command: {name}")
