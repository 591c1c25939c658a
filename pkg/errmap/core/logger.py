"""
Logging of pipeline operations and training metrics to CSV.
"""

import csv
import threading
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

from ..config.settings import LOGS_DIR, OPERATION_LOG_HEADERS, TRAINING_LOG_HEADERS


class OperationLogger:
    """A class to handle logging of pipeline operations to CSV."""

    def __init__(self, log_dir: Union[str, Path] = LOGS_DIR):
        """
        Initialize the OperationLogger.

        Args:
            log_dir: Directory to store log files
        """
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.log_file = self.log_dir / f"errmap_operations_{datetime.now().strftime('%Y%m%d')}.csv"
        self._lock = threading.Lock()

        if not self.log_file.exists():
            with open(self.log_file, "w", newline="") as f:
                csv.writer(f).writerow(OPERATION_LOG_HEADERS)

    def log_operation(
        self,
        operation_type: str = "",
        case_id: Optional[str] = None,
        mask_index: Optional[int] = None,
        iteration: Optional[int] = None,
        success: bool = True,
        message: Optional[str] = None,
        error_code: Optional[Any] = None,
    ) -> None:
        """
        Append one operation to the CSV file.

        Args:
            operation_type: Upper-case tag such as GEN_DATA_CASE_SUCCESS
            case_id: Case the operation concerned ("SYSTEM" when omitted)
            mask_index: Generated-mask index, if any
            iteration: Training iteration, if any
            success: Whether the operation succeeded
            message: Free text, typically the error text on failure
            error_code: Exception class name or other code
        """
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        row = [
            timestamp,
            operation_type,
            case_id or "SYSTEM",
            "" if mask_index is None else mask_index,
            "" if iteration is None else iteration,
            "True" if success else "False",
            message or "",
            str(error_code) if error_code is not None else "",
        ]
        with self._lock, open(self.log_file, "a", newline="") as f:
            csv.writer(f).writerow(row)

    def get_logs(self) -> pd.DataFrame:
        """
        Get all logs as a DataFrame.

        Returns:
            pd.DataFrame: DataFrame containing all logs
        """
        if not self.log_file.exists():
            return pd.DataFrame(columns=OPERATION_LOG_HEADERS)
        return pd.read_csv(self.log_file, dtype={"case_id": str})

    def get_logs_by_case(self, case_id: str) -> pd.DataFrame:
        logs = self.get_logs()
        return logs[logs["case_id"] == case_id]


class TrainingLog:
    """
    Append-only training metrics CSV.

    Rows carry no timestamps so two runs with the same configuration write
    byte-identical files.
    """

    def __init__(self, path: Union[str, Path], resume_from: Optional[int] = None):
        """
        Args:
            path: CSV file
            resume_from: When set, keep only the rows with iteration <= this
                value and append after them; otherwise start a fresh file
        """
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if resume_from is not None and self.path.exists():
            with open(self.path, newline="") as f:
                rows = list(csv.reader(f))
            kept = [r for r in rows[1:] if r and int(r[0]) <= resume_from]
            with open(self.path, "w", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(TRAINING_LOG_HEADERS)
                writer.writerows(kept)
        else:
            with open(self.path, "w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(TRAINING_LOG_HEADERS)

    def append(self, iteration: int, losses: Dict[str, float], lr: float) -> None:
        row = [iteration] + [_format(losses[k]) for k in TRAINING_LOG_HEADERS[1:-1]] + [_format(lr)]
        with open(self.path, "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(row)

    def read(self) -> pd.DataFrame:
        return pd.read_csv(self.path)


def _format(value: float) -> str:
    if value is None or np.isnan(value):
        return ""
    return repr(float(value))
