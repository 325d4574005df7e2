#
# License: See LICENSE.md file
#
"""
The base classifier, its perturbed ensemble and the uncertainty score derived from the two.
"""
