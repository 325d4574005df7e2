#
# License: See LICENSE.md file
#

import hashlib
import json
import os
import platform
import struct
import time

import numpy as np

import perturbosr

logger = perturbosr.logging.get_logger(__name__)

__all__ = ["IntIOWrapper", "derive_seed", "write_text_artifact", "read_text_header"]

STATE_VERSION = 1
STATE_MAGIC = b"PSOR"
TEXT_FORMAT_VERSION = 1

##############################################################
# Buffer classes


class IntIOInterface:
    def __init__(self, buf):
        pass

    def write(self, byte):
        raise Exception("Not implemented!")

    def read(self):
        raise Exception("Not implemented!")

    def write_bytes(self, data):
        raise Exception("Not implemented!")

    def read_bytes(self, count):
        raise Exception("Not implemented!")

    def write_64bit(self, value):
        self.write_bytes(struct.pack("<q", value))

    def read_64bit(self):
        return struct.unpack("<q", self.read_bytes(8))[0]

    def write_16bit(self, value):
        self.write(value & 0xFF)
        self.write((value >> 8) & 0xFF)

    def read_16bit(self):
        a = self.read()
        b = self.read()
        return int(a | (b << 8))

    def write_float64(self, value):
        self.write_bytes(struct.pack("<d", value))

    def read_float64(self):
        return struct.unpack("<d", self.read_bytes(8))[0]

    def write_string(self, value):
        data = value.encode("utf8")
        self.write_16bit(len(data))
        self.write_bytes(data)

    def read_string(self):
        length = self.read_16bit()
        return self.read_bytes(length).decode("utf8")

    def write_array(self, array):
        # Rank and dimensions first, then the row-major little-endian float64 payload
        array = np.ascontiguousarray(array, dtype="<f8")
        self.write(array.ndim)
        for dim in array.shape:
            self.write_64bit(dim)
        self.write_bytes(array.tobytes(order="C"))

    def read_array(self):
        ndim = self.read()
        shape = tuple(self.read_64bit() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = self.read_bytes(8 * count)
        return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)

    def flush(self):
        raise Exception("Not implemented!")


class IntIOWrapper(IntIOInterface):
    """
    Wraps a file-like object to allow writing integers, floats and arrays to it. Every persisted object of the
    package implements `save_state(f)` and `load_state(f, state_version)` against this interface.
    """
    def __init__(self, buf):
        self.buffer = buf

    def write(self, byte):
        assert isinstance(byte, int)
        assert 0 <= byte <= 0xFF
        return self.buffer.write(byte.to_bytes(1, "little"))

    def read(self):
        data = self.buffer.read(1)
        assert len(data) == 1, "No data"
        return ord(data)

    def write_bytes(self, data):
        return self.buffer.write(data)

    def read_bytes(self, count):
        data = self.buffer.read(count)
        assert len(data) == count, "Truncated state"
        return data

    def flush(self):
        self.buffer.flush()


def write_state_header(f):
    f.write_bytes(STATE_MAGIC)
    f.write(STATE_VERSION)


def read_state_header(f):
    magic = f.read_bytes(len(STATE_MAGIC))
    if magic != STATE_MAGIC:
        raise ValueError("Not a perturbosr checkpoint (bad magic)")
    state_version = f.read()
    if state_version > STATE_VERSION:
        raise ValueError(f"Checkpoint version {state_version} is newer than supported version {STATE_VERSION}")
    logger.debug("State version: %d", state_version)
    return state_version


##############################################################
# Seeds


def _seed_part(part):
    if isinstance(part, str):
        return int.from_bytes(hashlib.sha256(part.encode("utf8")).digest()[:8], "little")
    part = int(part)
    if part < 0:
        raise ValueError(f"Seeds must be non-negative, got {part}")
    return part


def derive_seed(master_seed, *parts):
    """
    Counter-hash a master seed with a tuple of integers or names into an independent 63-bit stream seed, which fits
    the signed 64-bit fields of a checkpoint.

    ```python
    >>> derive_seed(7, 1, 0) == derive_seed(7, 1, 0)
    True
    >>> derive_seed(7, 1, 0) == derive_seed(7, 0, 1)
    False

    ```
    """
    entropy = [_seed_part(master_seed)] + [_seed_part(p) for p in parts]
    lo, hi = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(lo) | ((int(hi) & 0x7FFFFFFF) << 32)


##############################################################
# Text artifacts


def write_text_artifact(path, kind, frame, **header_fields):
    """
    Writes a pandas DataFrame as CSV, preceded by one `# perturbosr <kind> v<n> key=value ...` header line.
    Floats are written with 17 significant digits so a re-read is exact.
    """
    fields = "".join(f" {k}={v}" for k, v in header_fields.items())
    with open(path, "w", newline="") as f:
        f.write(f"# perturbosr {kind} v{TEXT_FORMAT_VERSION}{fields}\n")
        frame.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")


def read_text_header(path):
    """
    Returns (kind, header_fields, number_of_leading_comment_lines). Files without a header return `(None, {}, 0)`.
    """
    kind = None
    fields = {}
    skip = 0
    with open(path, "r") as f:
        for line in f:
            if not line.startswith("#"):
                break
            tokens = line[1:].split()
            if skip == 0 and len(tokens) >= 3 and tokens[0] == "perturbosr":
                kind = tokens[1]
                version = int(tokens[2].lstrip("v"))
                if version > TEXT_FORMAT_VERSION:
                    raise ValueError(f"{path}: format version {version} is not supported")
                for token in tokens[3:]:
                    k, _, v = token.partition("=")
                    fields[k] = v
            skip += 1
    return kind, fields, skip


def write_run_metadata(output_dir, command, config_hash, seed):
    meta = {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "versions": {
            "perturbosr": perturbosr.__version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = os.path.join(output_dir, f"{command}.meta.json")
    with open(path, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    logger.debug("Run metadata written to %s", path)
    return path
