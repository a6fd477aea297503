# utils.py

import yaml
import os
import logging
import json
import math
import re
from datetime import datetime
from typing import Any, Dict

import numpy as np
import pandas as pd

# Configure logger
logger = logging.getLogger(__name__)

# Floats travel through json.dumps as marked strings and are unquoted afterwards.
_FLOAT_MARK = "@@float:"
_FLOAT_PATTERN = re.compile('"' + re.escape(_FLOAT_MARK) + '([^"]*)"')


def load_config(file_path):
    """
    Load configuration from a YAML file.

    Args:
        file_path (str): The path to the YAML configuration file.

    Returns:
        dict: A dictionary containing configuration values.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If there is an error parsing the YAML file.
    """
    if not os.path.exists(file_path):
        raise FileNotFoundError(f"The configuration file '{file_path}' does not exist.")

    try:
        with open(file_path, 'r') as file:
            config = yaml.safe_load(file)
            logger.info(f"Loaded configuration from {file_path}")
            return config
    except yaml.YAMLError as e:
        raise ValueError(f"Error parsing the YAML configuration file '{file_path}': {e}")


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """
    Recursively merge `override` into a copy of `base`; nested dicts are merged,
    everything else in `override` replaces the value in `base`.
    """
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _mark_floats(obj: Any) -> Any:
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return bool(obj) if obj is not None else None
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not math.isfinite(value):
            return None
        return _FLOAT_MARK + format(value, ".17g")
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(key): _mark_floats(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_mark_floats(item) for item in obj]
    return obj


def dumps_report(report: Dict[str, Any]) -> str:
    """
    Deterministic JSON: keys sorted, floats with 17 significant digits,
    NaN and infinities as null.
    """
    text = json.dumps(_mark_floats(report), sort_keys=True, indent=2, ensure_ascii=True)
    return _FLOAT_PATTERN.sub(r"\1", text) + "\n"


def write_report(report: Dict[str, Any], file_path: str) -> None:
    """
    Write a report with dumps_report, creating the target directory if needed.
    """
    directory = os.path.dirname(file_path)
    if directory and not os.path.exists(directory):
        try:
            os.makedirs(directory)
            logger.info(f"Created directory: {directory}")
        except OSError as e:
            raise OSError(f"Failed to create directory {directory}: {e}") from e
    try:
        with open(file_path, 'w', encoding='utf-8') as report_file:
            report_file.write(dumps_report(report))
        logger.info(f"Successfully wrote report to {file_path}")
    except OSError as e:
        raise IOError(f"Failed to write to file {file_path}: {e}") from e


def write_data_to_file(data, file_path):
    """
    Writes the provided data to a file. A dictionary is written as a report
    (see write_report); a pandas DataFrame is written to CSV.
    Ensures that the target directory exists.
    """
    if isinstance(data, dict):
        write_report(data, file_path)
        return
    if not isinstance(data, pd.DataFrame):
        raise TypeError("Unsupported data type. Only dict and pandas DataFrame are supported.")
    directory = os.path.dirname(file_path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory)
        logger.info(f"Created directory: {directory}")
    try:
        data.to_csv(file_path, index=False)
        logger.info(f"Successfully wrote DataFrame to CSV file at {file_path}")
    except Exception as e:
        raise IOError(f"Failed to write to file {file_path}: {e}") from e


def generate_dynamic_output_file_name(filename, output_file_type="json", output_folder="./data/output"):
    """
    Function that creates a dynamic file name so that the file
    will be written into the appropriate folder, with an optional filetype.
    """
    # "data/input/example1.json" -> "example1"
    base_name = os.path.splitext(os.path.basename(filename))[0]

    if not os.path.exists(output_folder):
        os.makedirs(output_folder)

    # Create a timestamp in the format YYYYMMDD_HHMMSS
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    output_filename = f"results_{base_name}_{timestamp}.{output_file_type}"
    return os.path.join(output_folder, output_filename)
