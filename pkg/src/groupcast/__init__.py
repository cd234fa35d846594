"""groupcast: group health underwriting with two-stage cost prediction.

Member-level claims history feeds a boosted-tree cost model whose
per-member predictions aggregate to a group pmpm; a second, group-level
model adjusts that aggregate with enrollment dynamics. An actuarial
rating baseline (experience and manual rates blended by credibility)
anchors the trend ratios underwriters act on.
"""

__version__ = "0.1.0"
