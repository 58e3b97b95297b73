import csv
import logging
import os
from contextlib import contextmanager
from typing import Iterator, Optional

from wfbm import __version__, schema

LOGGER = logging.getLogger(__name__)

NO_TRAVERSAL_LIMIT = 2**64-1


def header_line(config_hash: str = "", seed: Optional[int] = None) -> str:
  return f"# wfbm {__version__} config={config_hash or 'none'} seed={'none' if seed is None else seed}"


def fmt(v) -> str:
  # shortest round-trip form
  if isinstance(v, float):
    return repr(v)
  return str(v)


@contextmanager
def open_csv(path: str, columns: list[str], header: Optional[str] = None) -> Iterator["csv._writer"]:
  os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
  with open(path, "w", newline="") as f:
    if header:
      f.write(header.rstrip("\n") + "\n")
    writer = csv.writer(f, lineterminator="\n")
    writer.writerow(columns)
    yield writer
  LOGGER.info("wrote %s", path)


def write_metadata(msg, stem: str) -> tuple[str, str]:
  """Stores a capnp record as <stem>.meta.txt (text form) and <stem>.meta.bin"""
  os.makedirs(os.path.dirname(os.path.abspath(stem)), exist_ok=True)
  txt, binary = stem + ".meta.txt", stem + ".meta.bin"
  with open(txt, "w") as f:
    f.write(str(msg) + "\n")
  with open(binary, "wb") as f:
    f.write(msg.to_bytes())
  return txt, binary


def read_metadata(path: str, struct=None):
  struct = struct or schema.EnsembleMeta
  with open(path, "rb") as f:
    dat = f.read()
  with struct.from_bytes(dat, traversal_limit_in_words=NO_TRAVERSAL_LIMIT) as msg:
    return msg.as_builder()
