#
# License: See LICENSE.md file
#
"""
The commands of the `perturbosr` command line. Each reads its inputs from, and writes its artifacts to, the run's
output directory.
"""
