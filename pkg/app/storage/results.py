import json
import hashlib
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional
import pandas as pd
from app.config import Config


class ResultStore:
    """Writes result records as canonical JSON or a CSV projection"""

    def __init__(self, base_path: str = None):
        self.base_path = Path(base_path or Config.RESULTS_PATH)

    def resolve(self, out: str) -> Path:
        """Bare file names land in the results directory"""
        path = Path(out)
        if path.parent == Path("."):
            self.base_path.mkdir(parents=True, exist_ok=True)
            return self.base_path / path
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    @staticmethod
    def to_json(record: Dict) -> str:
        return json.dumps(record, indent=2, sort_keys=True, default=_jsonable) + "\n"

    @staticmethod
    def to_frame(rows: List[Dict]) -> pd.DataFrame:
        frame = pd.DataFrame(rows)
        if "direction" not in frame.columns:
            frame = frame.reindex(sorted(frame.columns), axis=1)
        return frame

    def write(self, record: Dict, rows: Optional[List[Dict]] = None,
              format: str = "json", out: Optional[str] = None) -> Optional[Path]:
        """Emit to stdout when out is None, else to a file; returns the file path"""
        if format == "json":
            text = self.to_json(record)
        elif format == "csv":
            frame = self.to_frame(rows if rows is not None else [flatten(record.get("outputs", {}))])
            text = frame.to_csv(index=False)
        else:
            raise ValueError(f"Unsupported format: {format}")

        if out is None:
            sys.stdout.write(text)
            sys.stdout.flush()
            return None
        filepath = self.resolve(out)
        filepath.write_text(text)
        return filepath

    def compute_hash(self, data: Any) -> str:
        """Compute SHA256 hash of data"""
        if isinstance(data, (dict, list)):
            data_str = json.dumps(data, sort_keys=True, default=_jsonable)
        elif isinstance(data, pd.DataFrame):
            data_str = data.to_json()
        else:
            data_str = str(data)

        return hashlib.sha256(data_str.encode()).hexdigest()


def flatten(outputs: Dict, prefix: str = "") -> Dict:
    """One CSV row from nested outputs; lists become JSON strings"""
    row = {}
    for key, value in outputs.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            row.update(flatten(value, f"{name}."))
        elif isinstance(value, (list, tuple)):
            row[name] = json.dumps(value, default=_jsonable)
        else:
            row[name] = value
    return row


def _jsonable(value: Any):
    if hasattr(value, "tolist"):
        return value.tolist()
    if hasattr(value, "value"):
        return value.value
    raise TypeError(f"not JSON serializable: {type(value).__name__}")
