"""Analytics for anonymized call detail records: per-individual activity and
mobility metrics, night-time home detection, home-density grids with rank
correlations and area classes, temporal/demographic pattern reports, and a
synthetic corpus generator with recoverable planted structure.
"""

__version__ = "0.1.0"
