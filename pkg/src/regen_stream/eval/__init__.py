from .metrics import CAP_DB, lsd, sdr, si_sdr
from .ranking import (CATEGORIES, DIRECTIONS, MetricTable, MetricTableError, RankingResult, parse_metric_table,
                      rank_column, rank_models, read_metric_table, table_to_csv)

__all__ = [
    "CAP_DB", "lsd", "sdr", "si_sdr",
    "CATEGORIES", "DIRECTIONS", "MetricTable", "MetricTableError", "RankingResult", "parse_metric_table",
    "rank_column", "rank_models", "read_metric_table", "table_to_csv",
]
