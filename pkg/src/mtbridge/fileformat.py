"""Binary container shared by the dataset, checkpoint and Fisher files.

Every file starts with four magic bytes, a little-endian ``u32`` format
version, and a little-endian ``u32`` length of a UTF-8 JSON header. The header
is followed by a raw payload whose layout is described by the header. Parse
failures raise :exc:`.FileFormatError` with the byte offset of the failure;
no partially parsed content is ever returned.
"""
import json
import struct

from .exceptions import FileFormatError


__all__ = [
    'FORMAT_VERSION',
    'HEADER_OFFSET',
    'write_container',
    'read_container',
    'check_payload_size',
]

FORMAT_VERSION = 1

_PREAMBLE = struct.Struct('<4sII')

HEADER_OFFSET = _PREAMBLE.size
"""Byte offset of the JSON header"""


def write_container(filename, magic, header, payload):
    """Write `header` and the `payload` bytes to `filename`.

    Args:
        filename (str): Path of the output file (overwritten)
        magic (bytes): Four magic bytes identifying the file type
        header (dict): JSON-serializable header
        payload (bytes): Raw payload following the header
    """
    header_bytes = json.dumps(header, sort_keys=True).encode('utf8')
    with open(filename, 'wb') as out_fh:
        out_fh.write(_PREAMBLE.pack(magic, FORMAT_VERSION, len(header_bytes)))
        out_fh.write(header_bytes)
        out_fh.write(payload)


def read_container(filename, magic, required_keys=()):
    """Read a file written by :func:`write_container`.

    Args:
        filename (str): Path of the file
        magic (bytes): The expected magic bytes
        required_keys (tuple[str]): Keys that must be present in the header

    Returns:
        tuple: ``(header, payload, payload_offset)``, where `payload` is a
        :class:`memoryview` of all bytes following the header and
        `payload_offset` is the position of the payload in the file.

    Raises:
        FileFormatError: If the magic bytes, the version, or the header are
            invalid
    """
    with open(filename, 'rb') as in_fh:
        data = in_fh.read()
    if len(data) < _PREAMBLE.size:
        raise FileFormatError(
            "file %s is too short (%d bytes) for a header"
            % (filename, len(data)),
            offset=len(data),
        )
    file_magic, version, header_len = _PREAMBLE.unpack_from(data, 0)
    if file_magic != magic:
        raise FileFormatError(
            "expected magic bytes %r, found %r" % (magic, file_magic), offset=0
        )
    if version != FORMAT_VERSION:
        raise FileFormatError(
            "unknown format version %d (supported: %d)"
            % (version, FORMAT_VERSION),
            offset=4,
        )
    payload_offset = _PREAMBLE.size + header_len
    if payload_offset > len(data):
        raise FileFormatError(
            "header of %d bytes extends beyond end of file" % header_len,
            offset=len(data),
        )
    try:
        header_bytes = data[_PREAMBLE.size : payload_offset]
        header = json.loads(header_bytes.decode('utf8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc_info:
        raise FileFormatError(
            "corrupt JSON header: %s" % exc_info, offset=_PREAMBLE.size
        )
    if not isinstance(header, dict):
        raise FileFormatError(
            "JSON header must be an object", offset=_PREAMBLE.size
        )
    missing = [key for key in required_keys if key not in header]
    if len(missing) > 0:
        raise FileFormatError(
            "header is missing key(s) %s" % ", ".join(missing),
            offset=_PREAMBLE.size,
        )
    return header, memoryview(data)[payload_offset:], payload_offset


def check_payload_size(payload, expected, payload_offset):
    """Raise :exc:`.FileFormatError` if `payload` does not have `expected`
    bytes."""
    if len(payload) < expected:
        raise FileFormatError(
            "file is truncated: expected %d payload bytes, found %d"
            % (expected, len(payload)),
            offset=payload_offset + len(payload),
        )
    if len(payload) > expected:
        raise FileFormatError(
            "size mismatch: %d unexpected bytes after payload"
            % (len(payload) - expected),
            offset=payload_offset + expected,
        )
