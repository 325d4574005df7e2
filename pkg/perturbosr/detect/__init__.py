#
# License: See LICENSE.md file
#
"""
The detectors that refine the uncertainty threshold: mixtures and subclass discriminant analysis for stage one, a
classification tree for stage two, and the pipeline joining them.
"""
