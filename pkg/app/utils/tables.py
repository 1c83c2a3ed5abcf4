"""
CSV output shared by all experiments: ',' separator, '.' decimal, UTF-8, LF
line endings and 17 significant digits so values survive a round trip.
"""

import logging
from pathlib import Path
from typing import Sequence, Union

import pandas as pd

from app.utils.exceptions import OutputError, SchemaMismatch

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def write_table(table: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Write a DataFrame without its index; parent directories are created."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n', encoding='utf-8')
    except OSError as e:
        raise OutputError(f"could not write {path}: {e}") from e
    logger.debug("wrote %d rows to %s", len(table), path)
    return path


def read_table(path: Union[str, Path], required_columns: Sequence[str] = ()) -> pd.DataFrame:
    """Read a results CSV and check that the expected columns are present."""
    path = Path(path)
    try:
        table = pd.read_csv(path, encoding='utf-8')
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SchemaMismatch(f"could not read {path} as CSV: {e}") from e
    missing = [column for column in required_columns if column not in table.columns]
    if missing:
        raise SchemaMismatch(f"{path} lacks columns {missing}")
    return table
