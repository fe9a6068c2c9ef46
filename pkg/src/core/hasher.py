"""
Digest functionality for configs, datasets and artifacts.

Fingerprints tie fits to the exact coded dataset they were computed on and
config hashes stamp every artifact header.
"""

import hashlib
from typing import Dict, Iterable, Optional

import numpy as np
import yaml

import config

CHUNK_SIZE = 8192


class ArtifactHasher:
    """
    Computes SHA-256 digests in fixed-size chunks.

    This class is independent of any file layout and can be used for
    configs, numeric arrays or raw file bytes.
    """

    def __init__(self, chunk_size: int = CHUNK_SIZE):
        """
        Initialize the hasher.

        Args:
            chunk_size: Size of chunks fed to the digest (in bytes)
        """
        self.chunk_size = chunk_size

    def digest_bytes(self, payloads: Iterable[bytes]) -> str:
        """
        Hash a sequence of byte payloads into one hex digest.

        Each payload is prefixed with its length so that payload boundaries
        are part of the digest.

        Args:
            payloads: Byte strings to hash in order

        Returns:
            Hex digest string
        """
        digest = hashlib.sha256()
        for payload in payloads:
            digest.update(len(payload).to_bytes(8, "little"))
            for i in range(0, len(payload), self.chunk_size):
                digest.update(payload[i:i + self.chunk_size])
        return digest.hexdigest()

    def hash_config(self, document: Dict) -> str:
        """
        Hash a config document through its canonical YAML dump.

        Example:
            >>> ArtifactHasher().hash_config({'seed': 1}) == ArtifactHasher().hash_config({'seed': 1})
            True
        """
        canonical = yaml.safe_dump(document, sort_keys=True, default_flow_style=False)
        return self.digest_bytes([canonical.encode(config.CSV_ENCODING)])

    def hash_arrays(self, arrays: Iterable[Optional[np.ndarray]]) -> str:
        """
        Hash numeric arrays by dtype, shape and little-endian contents.

        None entries hash as an empty marker so optional arrays keep their slot.
        """
        payloads = []
        for array in arrays:
            if array is None:
                payloads.append(b"<none>")
                continue
            array = np.ascontiguousarray(array)
            canonical = array.astype(array.dtype.newbyteorder("<"), copy=False)
            payloads.append(f"{canonical.dtype.str}{canonical.shape}".encode("ascii"))
            payloads.append(canonical.tobytes())
        return self.digest_bytes(payloads)

    @staticmethod
    def verify_fingerprint(actual: str, expected: str) -> bool:
        """
        Compare two digests case-insensitively.

        Returns:
            True if the digests match, False otherwise
        """
        return actual.lower() == expected.lower()


def short_digest(digest: str, length: int = 12) -> str:
    """Return the leading characters of a digest for display."""
    return digest[:length]
