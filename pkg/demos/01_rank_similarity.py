"""
Comparing two result pages
==========================

How the divergence score D behaves on small hand-made rankings, and why
ten results are enough at persistence 0.7.
"""

from serpaudit.metrics import (
    common_top_k,
    d_metric,
    edit_distance,
    prefix_weight,
    rbo_ext,
    rbo_min,
    to_category_sequence,
)
from serpaudit.model import MetricConfig, RankedResult

# two pages that agree on the top result and swap the next two
page_a = ["wiki", "news1", "news2", "blog", "shop"]
page_b = ["wiki", "news2", "news1", "shop", "blog"]

print("RBO (extrapolated):", round(rbo_ext(page_a, page_b), 4))
print("RBO (truncated):   ", round(rbo_min(page_a, page_b), 4))
print("D:                 ", round(d_metric(page_a, page_b), 4))

# same swap, but at the bottom: top-weighting makes it count less
page_c = ["wiki", "news1", "news2", "shop", "blog"]
print("D, swap at ranks 4-5:", round(d_metric(page_a, page_c), 4))

# identical pages score exactly 0, disjoint pages exactly 1
print(d_metric(page_a, list(page_a)), d_metric(page_a, ["x", "y", "z"]))

# a lower p spreads less weight into the tail
for p in (0.5, 0.7, 0.9):
    print(f"p={p}: D={d_metric(page_a, page_b, MetricConfig(p=p)):.4f}, "
          f"weight in top 10={prefix_weight(p, 10):.4f}")

# the older count-based measures for comparison
print("edit distance:", edit_distance(page_a, page_b), "common in top 3:", common_top_k(page_a, page_b))

# content view: map domains to categories, repeated categories get occurrence indexes
catmap = {"nyt.com": "News", "bbc.co.uk": "News", "wikipedia.org": "Reference"}
res = [RankedResult(1, "https://nyt.com/a"), RankedResult(2, "https://wikipedia.org/b"),
       RankedResult(3, "https://bbc.co.uk/c")]
print(to_category_sequence(res, catmap))
