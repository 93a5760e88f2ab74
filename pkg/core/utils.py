"""
Utility functions for the Lindblad Learner.
Provides logging setup, JSON/CSV persistence, run manifests and ordered parallel maps.
"""
import os
import csv
import json
import time
import hashlib
import logging
from datetime import datetime
from dataclasses import dataclass, field, asdict
from concurrent.futures import ThreadPoolExecutor

from config.settings import APP_VERSION, LOG_FILE, LOG_LEVEL, DEFAULT_THREADS

logger = logging.getLogger('utils')

MANIFEST_SUFFIX = ".manifest.json"

def setup_logging(level=None, filename=None):
    """
    Configure the root logger once for the whole application

    Args:
        level: Log level name (defaults to LINDBLAD_LOG_LEVEL)
        filename: Log file path (defaults to LINDBLAD_LOG_FILE)
    """
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        filename=filename or LOG_FILE,
        filemode='a'
    )

# === FILE I/O ===

def load_json(path):
    """Load a JSON document from disk"""
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)

def save_json(path, data, indent=2):
    """
    Write a JSON document with a stable layout

    Floats are written with Python's shortest round-trip repr, so reloading
    gives back identical values.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(data, f, indent=indent, allow_nan=False)
        f.write('\n')
    logger.info(f"Wrote {path}")

def write_csv(path, header, rows):
    """Write a UTF-8 CSV file with LF line endings"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"Wrote {path}")

def read_csv(path):
    """Read a CSV file into a list of dictionaries"""
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return list(csv.DictReader(f))

def file_digest(path):
    """SHA-256 hex digest of a file's bytes"""
    sha = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            sha.update(chunk)
    return sha.hexdigest()

# === RUN MANIFESTS ===

@dataclass
class RunManifest:
    """Provenance record written next to every primary output file"""
    command: str
    inputs: dict = field(default_factory=dict)
    seed: object = None
    config: dict = field(default_factory=dict)
    tool_version: str = APP_VERSION
    wall_time_s: float = 0.0
    created_at: str = ""

    @classmethod
    def start(cls, command, input_paths=None, seed=None, config=None):
        """Create a manifest and fingerprint the input files"""
        inputs = {}
        for name, path in (input_paths or {}).items():
            if path and os.path.isfile(path):
                inputs[name] = {"path": os.path.basename(path), "sha256": file_digest(path)}
        manifest = cls(command=command, inputs=inputs, seed=seed, config=dict(config or {}))
        manifest._t0 = time.perf_counter()
        return manifest

    def finish(self):
        """Stamp wall time and creation date"""
        self.wall_time_s = round(time.perf_counter() - getattr(self, '_t0', time.perf_counter()), 6)
        self.created_at = datetime.now().strftime('%Y-%m-%d %H:%M:%S')
        return self

    def to_dict(self):
        return asdict(self)

def manifest_path_for(output_path):
    """Sidecar path for an output file"""
    return f"{output_path}{MANIFEST_SUFFIX}"

def write_manifest(output_path, manifest):
    """
    Write the manifest sidecar for an output file

    Returns:
        str: Basename of the manifest, for embedding in the primary output
    """
    path = manifest_path_for(output_path)
    save_json(path, manifest.finish().to_dict())
    return os.path.basename(path)

# === PARALLELISM ===

def resolve_threads(threads=None):
    """Number of worker threads; 0 or None means machine parallelism"""
    if threads is None:
        threads = DEFAULT_THREADS
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads

def ordered_map(func, items, threads=None):
    """
    Map func over items, returning results in input order

    Args:
        func: Callable applied to each item
        items: Iterable of work items
        threads: Worker count (1 runs serially)

    Returns:
        list: Results in the same order as items
    """
    items = list(items)
    workers = min(resolve_threads(threads), max(len(items), 1))
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
