#
# License: See LICENSE.md file
#

import numpy as np
import pytest

import perturbosr

np.set_printoptions(threshold=2**32)
np.set_printoptions(linewidth=np.inf)


@pytest.fixture(autouse=True)
def doctest_fixtures(doctest_namespace):
    perturbosr.logging.log_level("ERROR")
    doctest_namespace["np"] = np
    doctest_namespace["perturbosr"] = perturbosr
    yield None
    perturbosr.logging.log_level("WARNING")
