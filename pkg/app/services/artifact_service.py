"""Shared plumbing for the plain-text artifact formats"""
import logging
import os
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from app.exceptions import FormatError, IoFailure

logger = logging.getLogger(__name__)


def format_floats(values: Iterable[float]) -> str:
    """Shortest repr of each float; parses back bit-exactly"""
    return " ".join(repr(float(v)) for v in values)


def parse_floats(tokens: Sequence[str], line: int) -> np.ndarray:
    try:
        return np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as e:
        raise FormatError(f"expected numbers: {str(e)}", line)


def write_lines(path: str, lines: Iterable[str]) -> None:
    try:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            for line in lines:
                handle.write(line)
                handle.write("\n")
    except OSError as e:
        logger.error(f"Error writing {path}: {str(e)}")
        raise IoFailure(f"Error writing {path}: {str(e)}")


def read_lines(path: str) -> List[str]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return handle.read().splitlines()
    except OSError as e:
        logger.error(f"Error reading {path}: {str(e)}")
        raise IoFailure(f"Error reading {path}: {str(e)}")


def header_line(magic: str, *tokens) -> str:
    return " ".join([magic, "1", *[str(t) for t in tokens if t is not None and str(t) != ""]])


def parse_header(lines: List[str], magic: str) -> Tuple[str, List[str]]:
    """Validate `MAGIC 1 ...`; returns (version, remaining tokens)"""
    if not lines:
        raise FormatError(f"empty file, expected {magic} header", 1)
    tokens = lines[0].split()
    if len(tokens) < 2 or tokens[0] != magic:
        raise FormatError(f"wrong magic header, expected {magic}", 1)
    if tokens[1] != "1":
        raise FormatError(f"unsupported {magic} version {tokens[1]}", 1)
    return tokens[1], tokens[2:]


def parse_key_values(tokens: Sequence[str], line: int) -> dict:
    values = {}
    for token in tokens:
        if "=" not in token:
            raise FormatError(f"expected key=value, got {token!r}", line)
        key, value = token.split("=", 1)
        values[key] = value
    return values


def write_report(path: str, entries: dict, table: str = "") -> None:
    """Key-value report followed by an optional aligned table; no timestamps"""
    lines = [f"{key} = {value}" for key, value in entries.items()]
    if table:
        lines.append("")
        lines.extend(f"# {row}" for row in table.splitlines())
    write_lines(path, lines)


def read_report(path: str) -> dict:
    entries = {}
    for line in read_lines(path):
        if not line.strip() or line.startswith("#") or "=" not in line:
            continue
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries
