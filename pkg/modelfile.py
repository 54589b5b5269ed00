"""
modelfile.py — Versioned, checksummed JSON envelope for trained models.

    {"format": "gbtm", "version": 1, "created_at": "...Z",
     "checksum": "sha256:<hex>", "payload": {...}}

The checksum covers the canonical payload JSON only (sorted keys, compact
separators), so two identical training runs produce identical payload bytes
and the same model version string.
"""

import hashlib
import json
import logging
import os
from datetime import datetime, timezone
from pathlib import Path

from errors import ChecksumError, ModelFileError, ModelVersionError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
GBDT_FORMAT    = 'gbtm'
LINEAR_FORMAT  = 'linm'


def canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(',', ':'), allow_nan=False)


def payload_digest(payload: dict) -> str:
    return 'sha256:' + hashlib.sha256(canonical_json(payload).encode('utf-8')).hexdigest()


def version_tag(payload: dict) -> str:
    """Short, stable model version derived from the payload checksum."""
    return payload_digest(payload)[len('sha256:'):][:12]


def write_model_file(path, fmt: str, payload: dict) -> str:
    """Write the envelope atomically (temp file + rename).  Returns the checksum."""
    path = Path(path)
    checksum = payload_digest(payload)
    envelope = {
        'format':     fmt,
        'version':    FORMAT_VERSION,
        'created_at': datetime.now(timezone.utc).strftime('%Y-%m-%dT%H:%M:%SZ'),
        'checksum':   checksum,
        'payload':    payload,
    }
    tmp = path.with_name(path.name + '.tmp')
    tmp.write_text(json.dumps(envelope, sort_keys=True, separators=(',', ':'), allow_nan=False))
    os.replace(tmp, path)
    logger.info('Saved %s model to %s (%s)', fmt, path, checksum[:19])
    return checksum


def read_model_file(path, fmt: str) -> tuple[dict, dict]:
    """Return (payload, envelope header).  Nothing is returned unless every check passes."""
    path = Path(path)
    try:
        envelope = json.loads(path.read_text())
    except FileNotFoundError:
        raise ModelFileError(f'{path}: file not found') from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ChecksumError(f'{path}: corrupted model file ({exc})') from None

    if not isinstance(envelope, dict) or 'payload' not in envelope:
        raise ModelFileError(f'{path}: not a model file')
    if envelope.get('format') != fmt:
        raise ModelFileError(f'{path}: expected a {fmt!r} model, got {envelope.get("format")!r}')
    if envelope.get('version') != FORMAT_VERSION:
        raise ModelVersionError(
            f'{path}: model format version {envelope.get("version")!r} '
            f'is not supported (expected {FORMAT_VERSION})'
        )
    payload = envelope['payload']
    if payload_digest(payload) != envelope.get('checksum'):
        raise ChecksumError(f'{path}: checksum mismatch, file is corrupted')

    header = {k: v for k, v in envelope.items() if k != 'payload'}
    return payload, header
