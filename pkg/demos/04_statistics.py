"""
The statistics layer on its own
===============================

Mann-Whitney U in exact and normal mode, unclamped Bonferroni, a one-way
ANOVA and a seeded bootstrap interval.
"""

import numpy as np

from serpaudit.stats import anova_oneway, bonferroni, bootstrap_ci, mann_whitney_u

rng = np.random.default_rng(0)
same = rng.beta(2, 5, size=6)
diff = rng.beta(5, 2, size=6)

# small untied samples: the exact null distribution is cheap
for mode in ("exact", "normal"):
    r = mann_whitney_u(same, diff, mode=mode)
    print(mode, "U =", r.statistic, "p =", round(r.p_value, 5))

# the adjusted p is raw p times the family size, never capped
loose = mann_whitney_u([0.1, 0.5, 0.3], [0.2, 0.4, 0.6], mode="exact")
print("adjusted:", bonferroni([loose], 12)[0].p_adjusted)

print(anova_oneway([[1, 2, 3], [2, 3, 4], [3, 4, 5]]).statistic)

# block-seeded: the same seed gives the same interval whatever the worker count
ci = bootstrap_ci(rng.random(200), resamples=5000, seed=1)
print(f"mean {ci.mean:.3f}, 95% CI [{ci.lo:.3f}, {ci.hi:.3f}]")
